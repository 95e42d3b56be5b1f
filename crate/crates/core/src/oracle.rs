//! Brute-force checks for the closed forms.
//!
//! The minimisers here share nothing with [`crate::solvers`] beyond the
//! objective definitions: they run plain (projected) gradient descent from
//! zero on the same quadratics. [`kkt_residual`] certifies a constrained
//! solution through its first-order conditions, and [`positivity_probe`]
//! checks that the weighted (non-projected) update always leaks into the
//! retain set.

use alloc::vec::Vec;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::{self, frobenius, null_space_projector, sq_frobenius, LinearSolver, Projector};
use crate::solvers::solve_uce;
use crate::task::{ConceptMatrix, Hyperparams, LayerWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub max_steps: usize,
    /// Fixed step; `None` picks `0.5 / L` with `L` from 50 power iterations
    /// on the Hessian.
    pub step_size: Option<f64>,
    pub grad_tol: f64,
    /// Keep the objective value after every step.
    pub record_losses: bool,
    /// Cutoff on squared singular values when forming the constraint
    /// projector `I − C̃·C̃⁺`.
    pub constraint_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            max_steps: 200_000,
            step_size: None,
            grad_tol: 1e-10,
            record_losses: false,
            constraint_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleRun {
    pub solution: Mat<f64>,
    pub steps: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub step_size: f64,
    /// Objective at the initial point and after each step, when recorded.
    pub losses: Vec<f64>,
}

impl OracleRun {
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                steps: self.steps,
                grad_norm: self.grad_norm,
            })
        }
    }
}

/// Quadratic `f(D) = Σ wᵢ‖D·Aᵢ − Bᵢ‖² + ρ‖D·P‖²` minimised over `D` with
/// `D = D·Π` (`Π` a constraint projector). Hessian acts as right
/// multiplication by `curvature`.
struct Quadratic<'a> {
    terms: Vec<(f64, MatRef<'a, f64>, Mat<f64>)>,
    ridge: (f64, Option<MatRef<'a, f64>>),
    curvature: Mat<f64>,
    constraint: Option<Mat<f64>>,
    rows: usize,
}

impl Quadratic<'_> {
    fn apply_ridge(&self, d: MatRef<'_, f64>) -> Mat<f64> {
        match self.ridge.1 {
            Some(p) => d * p,
            None => d.to_owned(),
        }
    }

    fn loss(&self, d: MatRef<'_, f64>) -> f64 {
        let mut total = self.ridge.0 * sq_frobenius(self.apply_ridge(d).as_ref());
        for (weight, a, b) in &self.terms {
            total += weight * sq_frobenius((d * a - b).as_ref());
        }
        total
    }

    fn grad(&self, d: MatRef<'_, f64>) -> Mat<f64> {
        // ‖D·P‖² has gradient 2·D·P·Pᵀ = 2·D·P for a projector.
        let mut g = self.apply_ridge(d) * faer::Scale(2.0 * self.ridge.0);
        for (weight, a, b) in &self.terms {
            g += (d * a - b) * a.transpose() * faer::Scale(2.0 * weight);
        }
        match &self.constraint {
            Some(pi) => &g * pi,
            None => g,
        }
    }

    fn lipschitz(&self) -> f64 {
        let n = self.curvature.nrows();
        if n == 0 {
            return 1.0;
        }
        let mut v = Mat::<f64>::from_fn(n, 1, |i, _| 1.0 + (i as f64 + 1.0).recip());
        let mut estimate = 0.0;
        for _ in 0..50 {
            let norm = frobenius(v.as_ref());
            if norm == 0.0 {
                break;
            }
            v = &v * faer::Scale(norm.recip());
            let next = &self.curvature * &v;
            estimate = frobenius(next.as_ref());
            v = next;
        }
        estimate.max(f64::MIN_POSITIVE)
    }

    fn minimise(&self, cfg: &OracleConfig) -> Result<OracleRun> {
        linalg::check_positive("grad_tol", cfg.grad_tol)?;
        let step = match cfg.step_size {
            Some(s) => {
                linalg::check_positive("step_size", s)?;
                s
            }
            None => 0.5 / self.lipschitz(),
        };
        let cols = self.curvature.nrows();
        let mut d = Mat::<f64>::zeros(self.rows, cols);
        let mut losses = Vec::new();
        if cfg.record_losses {
            losses.push(self.loss(d.as_ref()));
        }
        let mut g = self.grad(d.as_ref());
        let mut grad_norm = frobenius(g.as_ref());
        let mut steps = 0;
        while steps < cfg.max_steps && grad_norm >= cfg.grad_tol {
            d -= &g * faer::Scale(step);
            steps += 1;
            if cfg.record_losses {
                losses.push(self.loss(d.as_ref()));
            }
            g = self.grad(d.as_ref());
            grad_norm = frobenius(g.as_ref());
            if !grad_norm.is_finite() {
                return Err(Error::NonConvergence { steps, grad_norm });
            }
        }
        Ok(OracleRun {
            solution: d,
            steps,
            grad_norm,
            converged: grad_norm < cfg.grad_tol,
            step_size: step,
            losses,
        })
    }
}

fn shift(w: &LayerWeights, erase: &ConceptMatrix, anchor: &ConceptMatrix) -> Result<Mat<f64>> {
    if erase.d0() != w.d0() || anchor.d0() != w.d0() {
        return Err(Error::DimensionMismatch {
            context: "oracle concept rows versus weight columns",
            expected: w.d0(),
            found: if erase.d0() != w.d0() { erase.d0() } else { anchor.d0() },
        });
    }
    if erase.len() != anchor.len() {
        return Err(Error::DimensionMismatch {
            context: "oracle anchor count versus erase count",
            expected: erase.len(),
            found: anchor.len(),
        });
    }
    Ok(w.weights() * (anchor.as_ref() - erase.as_ref()))
}

fn gram(m: MatRef<'_, f64>) -> Mat<f64> {
    m * m.transpose()
}

/// Gradient descent on `α·e1 + β·e0 + λ‖Δ‖²` from `Δ = 0`.
pub fn gd_minimize_uce(
    w: &LayerWeights,
    erase: &ConceptMatrix,
    anchor: &ConceptMatrix,
    retain: &ConceptMatrix,
    hp: &Hyperparams,
    cfg: &OracleConfig,
) -> Result<OracleRun> {
    let target = shift(w, erase, anchor)?;
    if retain.d0() != w.d0() {
        return Err(Error::DimensionMismatch {
            context: "oracle retain rows versus weight columns",
            expected: w.d0(),
            found: retain.d0(),
        });
    }
    let d0 = w.d0();
    let mut curvature =
        gram(erase.as_ref()) * faer::Scale(2.0 * hp.alpha) + gram(retain.as_ref()) * faer::Scale(2.0 * hp.beta);
    for i in 0..d0 {
        curvature[(i, i)] += 2.0 * hp.lambda_reg;
    }
    let q = Quadratic {
        terms: alloc::vec![
            (hp.alpha, erase.as_ref(), target),
            (hp.beta, retain.as_ref(), Mat::zeros(w.d_v(), retain.len())),
        ],
        ridge: (hp.lambda_reg, None),
        curvature,
        constraint: None,
        rows: w.d_v(),
    };
    q.minimise(cfg)
}

/// Gradient descent on `e1 + ‖Δ‖²` from `Δ = 0`.
pub fn gd_minimize_erase_only(
    w: &LayerWeights,
    erase: &ConceptMatrix,
    anchor: &ConceptMatrix,
    cfg: &OracleConfig,
) -> Result<OracleRun> {
    let target = shift(w, erase, anchor)?;
    let mut curvature = gram(erase.as_ref()) * faer::Scale(2.0);
    for i in 0..w.d0() {
        curvature[(i, i)] += 2.0;
    }
    let q = Quadratic {
        terms: alloc::vec![(1.0, erase.as_ref(), target)],
        ridge: (1.0, None),
        curvature,
        constraint: None,
        rows: w.d_v(),
    };
    q.minimise(cfg)
}

/// Projected gradient descent on `‖(W + Δ·P)·C1 − W·C*‖² + ‖Δ·P‖²` subject
/// to `Δ·P·C2 = 0`. Every iterate is kept on the constraint set by right
/// multiplication with `I − C̃·C̃⁺`, `C̃ = P·C2`. Returns `ΔP` as the
/// solution.
pub fn pgd_minimize_constrained(
    w: &LayerWeights,
    erase: &ConceptMatrix,
    anchor: &ConceptMatrix,
    p: &Projector,
    invariants: &ConceptMatrix,
    cfg: &OracleConfig,
) -> Result<OracleRun> {
    let target = shift(w, erase, anchor)?;
    let d0 = w.d0();
    if p.dim() != d0 || invariants.d0() != d0 {
        return Err(Error::DimensionMismatch {
            context: "oracle projector/invariants versus d0",
            expected: d0,
            found: if p.dim() != d0 { p.dim() } else { invariants.d0() },
        });
    }
    let pm = p.matrix();
    // D·P·C1 = D·(P·C1)
    let p_c1 = pm * erase.as_ref();
    let mut curvature = (&p_c1 * p_c1.transpose() + pm) * faer::Scale(2.0);
    linalg::symmetrize(&mut curvature);
    let constraint = if invariants.is_empty() {
        None
    } else {
        let c_tilde = pm * invariants.as_ref();
        let pi = null_space_projector(c_tilde.as_ref(), cfg.constraint_tol)?;
        Some(pi.matrix().to_owned())
    };
    let p_c1_ref = p_c1.as_ref();
    let q = Quadratic {
        terms: alloc::vec![(1.0, p_c1_ref, target)],
        ridge: (1.0, Some(pm)),
        curvature,
        constraint,
        rows: w.d_v(),
    };
    let mut run = q.minimise(cfg)?;
    run.solution = &run.solution * pm;
    Ok(run)
}

/// First-order optimality certificate for the constrained problem.
#[derive(Debug, Clone)]
pub struct KktReport {
    /// `‖2((W+ΔP)C1 − WC*)C1ᵀP + 2ΔP + ΛC2ᵀP‖_F`.
    pub stationarity_residual: f64,
    /// `‖ΔP·C2‖_F`.
    pub feasibility_residual: f64,
    /// Multiplier `Λ = 2·W(C*C1ᵀ − C1C1ᵀ)·P·M·C2·(C2ᵀ·P·M·C2)⁻¹`.
    pub multiplier: Mat<f64>,
}

/// Evaluates the stationarity and feasibility residuals of `delta_p`, with
/// the multiplier recovered in closed form.
pub fn kkt_residual(
    delta_p: MatRef<'_, f64>,
    w: &LayerWeights,
    erase: &ConceptMatrix,
    anchor: &ConceptMatrix,
    p: &Projector,
    invariants: &ConceptMatrix,
) -> Result<KktReport> {
    let target = shift(w, erase, anchor)?;
    let d0 = w.d0();
    if delta_p.nrows() != w.d_v() || delta_p.ncols() != d0 {
        return Err(Error::DimensionMismatch {
            context: "kkt update shape",
            expected: w.d_v() * d0,
            found: delta_p.nrows() * delta_p.ncols(),
        });
    }
    let pm = p.matrix();
    let c1 = erase.as_ref();
    let c2 = invariants.as_ref();
    // W(C*C1ᵀ − C1C1ᵀ)P
    let bp = &target * (c1.transpose() * pm);

    let multiplier = if invariants.is_empty() {
        Mat::zeros(w.d_v(), 0)
    } else {
        let mut m_sys = c1 * (c1.transpose() * pm);
        for i in 0..d0 {
            m_sys[(i, i)] += 1.0;
        }
        let m_c2 = LinearSolver::new(m_sys.as_ref())?.solve(c2)?;
        let g = c2.transpose() * pm * &m_c2;
        let g = LinearSolver::new(g.as_ref()).map_err(|e| match e {
            Error::IllConditioned { condition, .. } => Error::DegenerateConstraints { condition },
            other => other,
        })?;
        g.solve_right((&bp * &m_c2).as_ref())? * faer::Scale(2.0)
    };

    let residual = delta_p * c1 - &target;
    let mut stationarity = (&residual * c1.transpose() * pm) * faer::Scale(2.0) + delta_p * faer::Scale(2.0);
    if !invariants.is_empty() {
        stationarity += &multiplier * c2.transpose() * pm;
    }
    Ok(KktReport {
        stationarity_residual: frobenius(stationarity.as_ref()),
        feasibility_residual: frobenius((delta_p * c2).as_ref()),
        multiplier,
    })
}

/// Preconditions under which the weighted update provably leaks into the
/// retain set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeAssumptions {
    pub weights_full_rank: bool,
    pub retain_rank_deficient: bool,
    pub edit_nonzero: bool,
    pub weights_nonzero: bool,
}

impl ProbeAssumptions {
    pub fn all(&self) -> bool {
        self.weights_full_rank && self.retain_rank_deficient && self.edit_nonzero && self.weights_nonzero
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOutcome {
    pub e0: f64,
    /// `‖W·C0‖²`, the scale `e0` is compared against.
    pub scale: f64,
    pub assumptions: ProbeAssumptions,
    /// `e0 > 1e-14·‖W·C0‖²`.
    pub positive: bool,
}

/// Computes the UCE preservation error and checks the assumptions that
/// guarantee it is strictly positive.
pub fn positivity_probe(
    w: &LayerWeights,
    erase: &ConceptMatrix,
    anchor: &ConceptMatrix,
    retain: &ConceptMatrix,
    hp: &Hyperparams,
) -> Result<ProbeOutcome> {
    let rel_rank = |m: MatRef<'_, f64>| -> Result<(usize, usize)> {
        let dec = linalg::svd(m)?;
        let top = dec.sigma.first().copied().unwrap_or(0.0);
        let rank = if top == 0.0 {
            0
        } else {
            dec.sigma.iter().filter(|&&s| s >= 1e-10 * top).count()
        };
        Ok((rank, m.nrows().min(m.ncols())))
    };
    let (w_rank, w_full) = rel_rank(w.weights())?;
    let retain_gram = gram(retain.as_ref());
    let (c0_rank, _) = rel_rank(retain_gram.as_ref())?;
    let c1 = erase.as_ref();
    let edit = (anchor.as_ref() - c1) * c1.transpose();
    let edit_scale = sq_frobenius(c1);
    let assumptions = ProbeAssumptions {
        weights_full_rank: w_rank == w_full,
        retain_rank_deficient: c0_rank < w.d0(),
        edit_nonzero: frobenius(edit.as_ref()) > 1e-14 * edit_scale.max(f64::MIN_POSITIVE),
        weights_nonzero: hp.alpha != 0.0 && hp.beta != 0.0 && hp.lambda_reg != 0.0,
    };
    let delta = solve_uce(w, erase, anchor, retain, hp)?;
    let e0 = delta.diagnostics.e0;
    let scale = sq_frobenius((w.weights() * retain.as_ref()).as_ref());
    Ok(ProbeOutcome {
        e0,
        scale,
        assumptions,
        positive: e0 > 1e-14 * scale,
    })
}

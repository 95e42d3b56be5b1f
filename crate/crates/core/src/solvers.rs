//! Closed-form weight updates.
//!
//! All four solvers minimise variants of the same least-squares objective.
//! With `shift = W·(C* − C1)` the erasure residual of an update `D` is
//! `D·C1 − shift`, and
//!
//! * UCE:        `Δ  = α·shift·C1ᵀ·(α·C1C1ᵀ + β·C0C0ᵀ + λ·I)⁻¹`
//! * erase-only: `Δ  = shift·C1ᵀ·(I + C1C1ᵀ)⁻¹`
//! * null-space: `ΔP = shift·C1ᵀ·P·M`, `M = (C1C1ᵀ·P + I)⁻¹`
//! * SPEED:      `ΔP = shift·C1ᵀ·P·Q·M`, `Q = I − M·C2·(C2ᵀ·P·M·C2 + λ_inv·I)⁻¹·C2ᵀ·P`
//!
//! Inverses are never formed; each is applied as an LU solve.

use alloc::string::String;
use core::time::Duration;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::{frobenius, sq_frobenius, LinearSolver, Projector};
use crate::task::{ConceptMatrix, Hyperparams, LayerWeights};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics {
    /// `‖(W + Δ)·C1 − W·C*‖²`.
    pub e1: f64,
    /// `‖Δ·C0‖²`, zero when no retain set was supplied.
    pub e0: f64,
    /// `‖Δ·C2‖_F`, zero when there are no invariants.
    pub invariant_residual: f64,
    /// Filled in by timed drivers; the pure solvers leave it at zero.
    pub solve_wall_time: Duration,
}

/// Update for one layer together with its diagnostics.
#[derive(Debug, Clone)]
pub struct EditDelta {
    pub layer_id: String,
    pub delta: Mat<f64>,
    pub diagnostics: Diagnostics,
}

struct Shapes {
    d0: usize,
}

fn check_shapes(
    w: &LayerWeights,
    erase: &ConceptMatrix,
    anchor: &ConceptMatrix,
    extra: &[&ConceptMatrix],
) -> Result<Shapes> {
    let d0 = w.d0();
    if erase.d0() != d0 {
        return Err(Error::DimensionMismatch {
            context: "erase rows versus weight columns (d0)",
            expected: d0,
            found: erase.d0(),
        });
    }
    if anchor.d0() != d0 {
        return Err(Error::DimensionMismatch {
            context: "anchor rows versus weight columns (d0)",
            expected: d0,
            found: anchor.d0(),
        });
    }
    if anchor.len() != erase.len() {
        return Err(Error::DimensionMismatch {
            context: "anchor count (N_E) versus erase count",
            expected: erase.len(),
            found: anchor.len(),
        });
    }
    for m in extra {
        if m.d0() != d0 {
            return Err(Error::DimensionMismatch {
                context: "concept rows versus weight columns (d0)",
                expected: d0,
                found: m.d0(),
            });
        }
    }
    Ok(Shapes { d0 })
}

// W·(C* − C1), d_v × N_E
fn anchor_shift(w: &LayerWeights, erase: &ConceptMatrix, anchor: &ConceptMatrix) -> Mat<f64> {
    w.weights() * (anchor.as_ref() - erase.as_ref())
}

fn diagnostics(
    delta: MatRef<'_, f64>,
    shift: MatRef<'_, f64>,
    erase: &ConceptMatrix,
    retain: Option<&ConceptMatrix>,
    invariants: Option<&ConceptMatrix>,
) -> Diagnostics {
    let e1 = sq_frobenius((delta * erase.as_ref() - shift).as_ref());
    let e0 = retain.map_or(0.0, |c0| sq_frobenius((delta * c0.as_ref()).as_ref()));
    let invariant_residual = invariants.map_or(0.0, |c2| frobenius((delta * c2.as_ref()).as_ref()));
    Diagnostics {
        e1,
        e0,
        invariant_residual,
        solve_wall_time: Duration::ZERO,
    }
}

/// Weighted least-squares update balancing erasure against preservation.
pub fn solve_uce(
    w: &LayerWeights,
    erase: &ConceptMatrix,
    anchor: &ConceptMatrix,
    retain: &ConceptMatrix,
    hp: &Hyperparams,
) -> Result<EditDelta> {
    let Shapes { d0 } = check_shapes(w, erase, anchor, &[retain])?;
    hp.validate()?;
    let c1 = erase.as_ref();
    let c0 = retain.as_ref();
    let mut system = (c1 * c1.transpose()) * faer::Scale(hp.alpha) + (c0 * c0.transpose()) * faer::Scale(hp.beta);
    for i in 0..d0 {
        system[(i, i)] += hp.lambda_reg;
    }
    let shift = anchor_shift(w, erase, anchor);
    let rhs = (&shift * c1.transpose()) * faer::Scale(hp.alpha);
    let delta = LinearSolver::new(system.as_ref())?.solve_right(rhs.as_ref())?;
    let diagnostics = diagnostics(delta.as_ref(), shift.as_ref(), erase, Some(retain), None);
    Ok(EditDelta {
        layer_id: w.id.clone(),
        delta,
        diagnostics,
    })
}

/// Update that minimises only the erasure error plus `‖Δ‖²`. Used to score
/// how strongly erasure disturbs each retained concept.
pub fn solve_erase_only(
    w: &LayerWeights,
    erase: &ConceptMatrix,
    anchor: &ConceptMatrix,
    retain: Option<&ConceptMatrix>,
) -> Result<EditDelta> {
    let extra: &[&ConceptMatrix] = match retain {
        Some(ref c0) => core::slice::from_ref(c0),
        None => &[],
    };
    let Shapes { d0 } = check_shapes(w, erase, anchor, extra)?;
    let c1 = erase.as_ref();
    let mut system = c1 * c1.transpose();
    for i in 0..d0 {
        system[(i, i)] += 1.0;
    }
    let shift = anchor_shift(w, erase, anchor);
    let rhs = &shift * c1.transpose();
    let delta = LinearSolver::new(system.as_ref())?.solve_right(rhs.as_ref())?;
    let diagnostics = diagnostics(delta.as_ref(), shift.as_ref(), erase, retain, None);
    Ok(EditDelta {
        layer_id: w.id.clone(),
        delta,
        diagnostics,
    })
}

/// Null-space constrained update `ΔP`; identical to [`solve_speed`] with no
/// invariants.
pub fn solve_null_space(
    w: &LayerWeights,
    erase: &ConceptMatrix,
    anchor: &ConceptMatrix,
    p: &Projector,
    retain: Option<&ConceptMatrix>,
) -> Result<EditDelta> {
    constrained(w, erase, anchor, p, None, 0.0, retain)
}

/// Null-space constrained update with hard equality constraints
/// `ΔP·C2 = 0` on the invariant embeddings.
///
/// `lambda_inv > 0` regularises `C2ᵀ·P·M·C2` for duplicated or dependent
/// invariants, at the cost of no longer enforcing the constraints exactly.
pub fn solve_speed(
    w: &LayerWeights,
    erase: &ConceptMatrix,
    anchor: &ConceptMatrix,
    p: &Projector,
    invariants: &ConceptMatrix,
    lambda_inv: f64,
    retain: Option<&ConceptMatrix>,
) -> Result<EditDelta> {
    constrained(w, erase, anchor, p, Some(invariants), lambda_inv, retain)
}

fn constrained(
    w: &LayerWeights,
    erase: &ConceptMatrix,
    anchor: &ConceptMatrix,
    p: &Projector,
    invariants: Option<&ConceptMatrix>,
    lambda_inv: f64,
    retain: Option<&ConceptMatrix>,
) -> Result<EditDelta> {
    let mut extra: alloc::vec::Vec<&ConceptMatrix> = alloc::vec::Vec::new();
    extra.extend(retain);
    extra.extend(invariants);
    let Shapes { d0 } = check_shapes(w, erase, anchor, &extra)?;
    if p.dim() != d0 {
        return Err(Error::DimensionMismatch {
            context: "projector dimension versus d0",
            expected: d0,
            found: p.dim(),
        });
    }
    if !(lambda_inv >= 0.0 && lambda_inv.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "lambda_inv",
            reason: alloc::format!("must be non-negative and finite, got {lambda_inv}"),
        });
    }

    let c1 = erase.as_ref();
    let pm = p.matrix();
    let shift = anchor_shift(w, erase, anchor);
    let c1t_p = c1.transpose() * pm;
    // shift·C1ᵀ·P
    let y = &shift * &c1t_p;
    let mut m_system = c1 * &c1t_p;
    for i in 0..d0 {
        m_system[(i, i)] += 1.0;
    }
    let m = LinearSolver::new(m_system.as_ref())?;

    let constrained_rhs = match invariants.filter(|c2| !c2.is_empty()) {
        None => y,
        Some(c2) => {
            let c2 = c2.as_ref();
            let m_c2 = m.solve(c2)?;
            let c2t_p = c2.transpose() * pm;
            let mut gram = &c2t_p * &m_c2;
            for i in 0..gram.nrows() {
                gram[(i, i)] += lambda_inv;
            }
            let g = LinearSolver::new(gram.as_ref()).map_err(|e| match e {
                Error::IllConditioned { condition, .. } => Error::DegenerateConstraints { condition },
                other => other,
            })?;
            let z = g.solve_right((&y * &m_c2).as_ref())?;
            // shift·C1ᵀ·P·Q
            &y - &z * &c2t_p
        }
    };
    let delta = m.solve_right(constrained_rhs.as_ref())?;
    let diagnostics = diagnostics(delta.as_ref(), shift.as_ref(), erase, retain, invariants);
    Ok(EditDelta {
        layer_id: w.id.clone(),
        delta,
        diagnostics,
    })
}

/// `W′ = W + Δ`. Entries where `Δ` is zero are copied unchanged.
pub fn apply_edit(w: &LayerWeights, delta: &EditDelta) -> Result<LayerWeights> {
    if w.id != delta.layer_id {
        return Err(Error::LayerMismatch {
            expected: w.id.clone(),
            found: delta.layer_id.clone(),
        });
    }
    let (rows, cols) = (w.d_v(), w.d0());
    if delta.delta.nrows() != rows {
        return Err(Error::DimensionMismatch {
            context: "edit rows versus weight rows",
            expected: rows,
            found: delta.delta.nrows(),
        });
    }
    if delta.delta.ncols() != cols {
        return Err(Error::DimensionMismatch {
            context: "edit columns versus weight columns",
            expected: cols,
            found: delta.delta.ncols(),
        });
    }
    let base = w.weights();
    let edited = Mat::from_fn(rows, cols, |i, j| {
        let d = delta.delta[(i, j)];
        if d == 0.0 {
            base[(i, j)]
        } else {
            base[(i, j)] + d
        }
    });
    LayerWeights::new(w.id.clone(), edited)
}

/// Prior shift `‖Δ·c0‖²` of one retained embedding.
pub fn prior_shift(delta: &EditDelta, c0: &[f64]) -> Result<f64> {
    let d = &delta.delta;
    if c0.len() != d.ncols() {
        return Err(Error::DimensionMismatch {
            context: "prior shift embedding length",
            expected: d.ncols(),
            found: c0.len(),
        });
    }
    let mut total = 0.0;
    for i in 0..d.nrows() {
        let mut acc = 0.0;
        for (j, c) in c0.iter().enumerate() {
            acc += d[(i, j)] * c;
        }
        total += acc * acc;
    }
    Ok(total)
}

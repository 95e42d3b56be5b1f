//! SVD-backed primitives shared by every solver: null-space and
//! least-variation projectors, rank estimation and linear solves.

use alloc::vec::Vec;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, MatRef};

use crate::error::{Error, Result};

/// Thin singular value decomposition `A = U·diag(sigma)·Vᵀ`.
///
/// `sigma` is non-negative and non-increasing; `u` and `vt` hold the
/// matching singular vectors.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Mat<f64>,
    pub sigma: Vec<f64>,
    pub vt: Mat<f64>,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Mat<f64> {
        let mut scaled = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            for i in 0..scaled.nrows() {
                scaled[(i, j)] *= s;
            }
        }
        &scaled * &self.vt
    }
}

pub fn svd(a: MatRef<'_, f64>) -> Result<SvdResult> {
    ensure_finite(a, "svd input")?;
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return Ok(SvdResult {
            u: Mat::zeros(a.nrows(), 0),
            sigma: Vec::new(),
            vt: Mat::zeros(0, a.ncols()),
        });
    }
    let dec = a.thin_svd().map_err(|_| Error::SvdFailure)?;
    let s = dec.S().column_vector();
    let sigma = (0..k).map(|i| s[i]).collect();
    Ok(SvdResult {
        u: dec.U().to_owned(),
        sigma,
        vt: dec.V().transpose().to_owned(),
    })
}

/// Number of singular values of `a` that are `>= tol`.
pub fn rank_estimate(a: MatRef<'_, f64>, tol: f64) -> Result<usize> {
    check_positive("tol", tol)?;
    ensure_finite(a, "rank_estimate input")?;
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(0);
    }
    let sv = a.singular_values().map_err(|_| Error::SvdFailure)?;
    Ok(sv.iter().filter(|&&s| s >= tol).count())
}

/// How a null-space projector was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NullSpaceStatus {
    /// Built from singular directions strictly below the tolerance.
    Exact,
    /// Every direction was at or above the tolerance; the projector is zero.
    Empty,
    /// No direction fell below the tolerance, so the `dims` smallest
    /// directions were kept instead. Preservation is no longer exact.
    Approximate { dims: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProjectorKind {
    NullSpace { tol: f64, status: NullSpaceStatus },
    LeastVariation { rank: usize },
}

/// Symmetric idempotent `d0 × d0` matrix.
#[derive(Debug, Clone)]
pub struct Projector {
    matrix: Mat<f64>,
    kind: ProjectorKind,
    kept_dims: usize,
}

impl Projector {
    /// Identity projector: every direction is free to edit.
    pub fn identity(d0: usize) -> Self {
        Self {
            matrix: Mat::identity(d0, d0),
            kind: ProjectorKind::NullSpace {
                tol: 0.0,
                status: NullSpaceStatus::Exact,
            },
            kept_dims: d0,
        }
    }

    /// Zero projector: no editing freedom.
    pub fn zero(d0: usize) -> Self {
        Self {
            matrix: Mat::zeros(d0, d0),
            kind: ProjectorKind::NullSpace {
                tol: 0.0,
                status: NullSpaceStatus::Empty,
            },
            kept_dims: 0,
        }
    }

    /// Projector onto the span of the orthonormal columns of `basis`.
    pub fn from_orthonormal_basis(basis: MatRef<'_, f64>, kind: ProjectorKind) -> Self {
        let kept_dims = basis.ncols();
        let mut matrix = basis * basis.transpose();
        symmetrize(&mut matrix);
        Self {
            matrix,
            kind,
            kept_dims,
        }
    }

    pub fn matrix(&self) -> MatRef<'_, f64> {
        self.matrix.as_ref()
    }

    pub fn kind(&self) -> ProjectorKind {
        self.kind
    }

    pub fn kept_dims(&self) -> usize {
        self.kept_dims
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_least_variation(&self) -> bool {
        matches!(self.kind, ProjectorKind::LeastVariation { .. })
    }

    pub fn status(&self) -> Option<NullSpaceStatus> {
        match self.kind {
            ProjectorKind::NullSpace { status, .. } => Some(status),
            ProjectorKind::LeastVariation { .. } => None,
        }
    }
}

/// Null-space projector of `c0` (`d0 × N`) at an absolute cutoff `tol` on the
/// singular values of `c0·c0ᵀ`. Returns the zero projector when the null
/// space is empty.
pub fn null_space_projector(c0: MatRef<'_, f64>, tol: f64) -> Result<Projector> {
    null_space_projector_with(c0, tol, None)
}

/// Like [`null_space_projector`], but when no singular value falls below
/// `tol` and `approx_dims` is `Some(k)`, the `k` smallest directions are kept.
///
/// The spectrum of `c0·c0ᵀ` is read off the thin SVD of `c0` (its singular
/// values squared, padded with zeros up to `d0`); the two share left singular
/// vectors, and the thin factorisation avoids a `d0 × d0` decomposition when
/// `N < d0`. Values equal to `tol` count as non-null.
pub fn null_space_projector_with(c0: MatRef<'_, f64>, tol: f64, approx_dims: Option<usize>) -> Result<Projector> {
    check_positive("svd_tol", tol)?;
    let d0 = c0.nrows();
    if d0 == 0 {
        return Err(Error::InvalidParameter {
            name: "retain matrix",
            reason: "row dimension d0 must be at least 1".into(),
        });
    }
    if c0.ncols() == 0 {
        return Ok(Projector {
            matrix: Mat::identity(d0, d0),
            kind: ProjectorKind::NullSpace {
                tol,
                status: NullSpaceStatus::Exact,
            },
            kept_dims: d0,
        });
    }

    let dec = svd(c0)?;
    let rank = dec.sigma.iter().filter(|&&s| s * s >= tol).count();

    if rank < d0 {
        let range = dec.u.as_ref().subcols(0, rank);
        let mut matrix = Mat::<f64>::identity(d0, d0) - range * range.transpose();
        symmetrize(&mut matrix);
        return Ok(Projector {
            matrix,
            kind: ProjectorKind::NullSpace {
                tol,
                status: NullSpaceStatus::Exact,
            },
            kept_dims: d0 - rank,
        });
    }

    // rank == d0 implies the thin U is square.
    match approx_dims {
        Some(k) if k > 0 => {
            if k > d0 {
                return Err(Error::InvalidParameter {
                    name: "approx_null",
                    reason: alloc::format!("{k} directions requested but d0 = {d0}"),
                });
            }
            log::warn!(
                "retain set is full rank at tol {tol:e}; keeping the {k} smallest directions (approximate null space)"
            );
            let basis = dec.u.as_ref().subcols(d0 - k, k);
            Ok(Projector::from_orthonormal_basis(
                basis,
                ProjectorKind::NullSpace {
                    tol,
                    status: NullSpaceStatus::Approximate { dims: k },
                },
            ))
        }
        _ => {
            log::warn!("retain set is full rank at tol {tol:e}; null space is empty and no edit will be applied");
            Ok(Projector {
                matrix: Mat::zeros(d0, d0),
                kind: ProjectorKind::NullSpace {
                    tol,
                    status: NullSpaceStatus::Empty,
                },
                kept_dims: 0,
            })
        }
    }
}

/// Projector onto the `r` right singular directions of `w` (`d_v × d0`) with
/// the smallest singular values, taken from the thin SVD.
///
/// `r` may not exceed `min(d_v, d0)`, the number of directions the thin SVD
/// provides.
pub fn least_variation_projector(w: MatRef<'_, f64>, r: usize) -> Result<Projector> {
    let available = w.nrows().min(w.ncols());
    if r == 0 || r > available {
        return Err(Error::InvalidParameter {
            name: "r",
            reason: alloc::format!("augmentation rank {r} outside 1..={available}"),
        });
    }
    let dec = svd(w)?;
    let v = dec.vt.transpose();
    let basis = v.subcols(available - r, r);
    Ok(Projector::from_orthonormal_basis(
        basis,
        ProjectorKind::LeastVariation { rank: r },
    ))
}

/// LU-factored square system with a 1-norm condition estimate.
pub struct LinearSolver {
    lu: PartialPivLu<f64>,
    dim: usize,
    condition: f64,
}

impl LinearSolver {
    pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

    pub fn new(a: MatRef<'_, f64>) -> Result<Self> {
        Self::with_cap(a, Self::DEFAULT_CONDITION_CAP)
    }

    pub fn with_cap(a: MatRef<'_, f64>, cap: f64) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                context: "solve_linear (square system)",
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        ensure_finite(a, "linear system")?;
        let dim = a.nrows();
        let lu = a.partial_piv_lu();
        let condition = if dim == 0 {
            1.0
        } else {
            one_norm(a) * estimate_inverse_one_norm(&lu, dim)
        };
        if !condition.is_finite() || condition > cap {
            return Err(Error::IllConditioned { condition, cap });
        }
        Ok(Self { lu, dim, condition })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `X` with `A·X = B`.
    pub fn solve(&self, b: MatRef<'_, f64>) -> Result<Mat<f64>> {
        if b.nrows() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "solve_linear (right-hand side rows)",
                expected: self.dim,
                found: b.nrows(),
            });
        }
        if self.dim == 0 {
            return Ok(Mat::zeros(0, b.ncols()));
        }
        Ok(self.lu.solve(b))
    }

    /// `X` with `X·A = B`.
    pub fn solve_right(&self, b: MatRef<'_, f64>) -> Result<Mat<f64>> {
        if b.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "solve_linear (right-multiplied system columns)",
                expected: self.dim,
                found: b.ncols(),
            });
        }
        if self.dim == 0 {
            return Ok(Mat::zeros(b.nrows(), 0));
        }
        Ok(self.lu.solve_transpose(b.transpose()).transpose().to_owned())
    }
}

/// Solves `A·X = B` without forming an inverse. Rejects systems whose
/// condition estimate exceeds `1e12`.
pub fn solve_linear(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<Mat<f64>> {
    LinearSolver::new(a)?.solve(b)
}

// Hager's estimator with Higham's alternating-sign refinement.
fn estimate_inverse_one_norm(lu: &PartialPivLu<f64>, n: usize) -> f64 {
    let mut x = Mat::<f64>::from_fn(n, 1, |_, _| 1.0 / n as f64);
    let mut est = 0.0f64;
    for iter in 0..5 {
        let y = lu.solve(x.as_ref());
        let y_norm: f64 = (0..n).map(|i| y[(i, 0)].abs()).sum();
        if !y_norm.is_finite() {
            return f64::INFINITY;
        }
        if iter > 0 && y_norm <= est {
            break;
        }
        est = y_norm;
        let sign = Mat::<f64>::from_fn(n, 1, |i, _| if y[(i, 0)] >= 0.0 { 1.0 } else { -1.0 });
        let z = lu.solve_transpose(sign.as_ref());
        let (mut j, mut z_max) = (0, 0.0f64);
        for i in 0..n {
            if z[(i, 0)].abs() > z_max {
                z_max = z[(i, 0)].abs();
                j = i;
            }
        }
        let ztx: f64 = (0..n).map(|i| z[(i, 0)] * x[(i, 0)]).sum();
        if !z_max.is_finite() {
            return f64::INFINITY;
        }
        if z_max <= ztx {
            break;
        }
        x = Mat::zeros(n, 1);
        x[(j, 0)] = 1.0;
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let alt = Mat::<f64>::from_fn(n, 1, |i, _| {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        s * (1.0 + i as f64 / denom)
    });
    let y = lu.solve(alt.as_ref());
    let alt_est = 2.0 * (0..n).map(|i| y[(i, 0)].abs()).sum::<f64>() / (3.0 * n as f64);
    if !alt_est.is_finite() {
        return f64::INFINITY;
    }
    est.max(alt_est)
}

fn one_norm(a: MatRef<'_, f64>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Replaces `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut Mat<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Frobenius norm.
pub fn frobenius(a: MatRef<'_, f64>) -> f64 {
    a.norm_l2()
}

/// Squared Frobenius norm.
pub fn sq_frobenius(a: MatRef<'_, f64>) -> f64 {
    a.squared_norm_l2()
}

pub(crate) fn ensure_finite(a: MatRef<'_, f64>, what: &'static str) -> Result<()> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if !a[(i, j)].is_finite() {
                return Err(Error::NonFinite(what));
            }
        }
    }
    Ok(())
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: alloc::format!("must be positive and finite, got {value}"),
        })
    }
}

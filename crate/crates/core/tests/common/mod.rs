//! Test-only reference computations. Nothing here calls into the solver or
//! projector code paths under test.

#![allow(dead_code)]

use faer::{Mat, MatRef};
use nse_core::{ConceptMatrix, ConceptRole, Hyperparams, LayerWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Plain triple-loop product.
pub fn matmul(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    assert_eq!(a.ncols(), b.nrows());
    let mut out = Mat::zeros(a.nrows(), b.ncols());
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut acc = 0.0;
            for k in 0..a.ncols() {
                acc += a[(i, k)] * b[(k, j)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

pub fn transpose(a: MatRef<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.ncols(), a.nrows(), |i, j| a[(j, i)])
}

pub fn frob(a: MatRef<'_, f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)] * a[(i, j)];
        }
    }
    s.sqrt()
}

pub fn rel_diff(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    let diff = Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] - b[(i, j)]);
    frob(diff.as_ref()) / frob(b.as_ref()).max(f64::MIN_POSITIVE)
}

/// Gauss–Jordan inverse with partial pivoting.
pub fn gauss_jordan_inverse(a: MatRef<'_, f64>) -> Mat<f64> {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut inv = Mat::<f64>::identity(n, n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[(x, col)].abs().partial_cmp(&m[(y, col)].abs()).unwrap())
            .unwrap();
        assert!(m[(pivot, col)].abs() > 1e-300, "singular matrix in oracle");
        for j in 0..n {
            let (t1, t2) = (m[(col, j)], m[(pivot, j)]);
            m[(col, j)] = t2;
            m[(pivot, j)] = t1;
            let (t1, t2) = (inv[(col, j)], inv[(pivot, j)]);
            inv[(col, j)] = t2;
            inv[(pivot, j)] = t1;
        }
        let d = m[(col, col)];
        for j in 0..n {
            m[(col, j)] /= d;
            inv[(col, j)] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = m[(i, col)];
                if f != 0.0 {
                    for j in 0..n {
                        m[(i, j)] -= f * m[(col, j)];
                        inv[(i, j)] -= f * inv[(col, j)];
                    }
                }
            }
        }
    }
    inv
}

/// `I − C(CᵀC)⁻¹Cᵀ` for full-column-rank `C`.
pub fn orthogonal_complement(c: MatRef<'_, f64>) -> Mat<f64> {
    let ct = transpose(c);
    let g_inv = gauss_jordan_inverse(matmul(ct.as_ref(), c).as_ref());
    let proj = matmul(matmul(c, g_inv.as_ref()).as_ref(), ct.as_ref());
    let n = c.nrows();
    Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - proj[(i, j)])
}

/// Rank by modified Gram–Schmidt on the columns with a relative cutoff.
pub fn gram_schmidt_rank(a: MatRef<'_, f64>, rel_tol: f64) -> usize {
    let scale = (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 0..a.ncols() {
        let mut v: Vec<f64> = (0..a.nrows()).map(|i| a[(i, j)]).collect();
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > rel_tol * scale {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis.len()
}

pub fn concepts(role: ConceptRole, m: Mat<f64>) -> ConceptMatrix {
    ConceptMatrix::new(role, m).unwrap()
}

/// Gaussian instance with unit-norm concept columns.
pub struct Instance {
    pub w: LayerWeights,
    pub c1: ConceptMatrix,
    pub c_star: ConceptMatrix,
    pub c0: ConceptMatrix,
}

pub fn unit_columns(rng: &mut ChaCha12Rng, d0: usize, n: usize) -> Mat<f64> {
    let mut m = gaussian(rng, d0, n);
    for j in 0..n {
        let norm = (0..d0).map(|i| m[(i, j)] * m[(i, j)]).sum::<f64>().sqrt();
        for i in 0..d0 {
            m[(i, j)] /= norm;
        }
    }
    m
}

pub fn instance(seed: u64, d0: usize, d_v: usize, n_e: usize, n_r: usize) -> Instance {
    let mut r = rng(seed);
    Instance {
        w: LayerWeights::new("w", gaussian(&mut r, d_v, d0)).unwrap(),
        c1: concepts(ConceptRole::Erase, unit_columns(&mut r, d0, n_e)),
        c_star: concepts(ConceptRole::Anchor, unit_columns(&mut r, d0, n_e)),
        c0: concepts(ConceptRole::Retain, unit_columns(&mut r, d0, n_r)),
    }
}

pub fn unit_hp() -> Hyperparams {
    Hyperparams {
        alpha: 1.0,
        beta: 1.0,
        lambda_reg: 1.0,
        ..Hyperparams::default()
    }
}

mod common;

use common::*;
use faer::Mat;
use nse_core::linalg::{self, LinearSolver};
use nse_core::{least_variation_projector, null_space_projector, rank_estimate, Projector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn check_projector_laws(p: &Projector) {
    let m = p.matrix();
    let scale = frob(m).max(1.0);
    let mt = transpose(m);
    let asym = frob((m - &mt).as_ref());
    let sq = matmul(m, m);
    let idem = frob((&sq - m).as_ref());
    assert!(asym <= 1e-10 * scale, "asymmetry {asym:e}");
    assert!(idem <= 1e-8 * scale, "idempotence defect {idem:e}");
    let trace: f64 = (0..m.nrows()).map(|i| m[(i, i)]).sum();
    assert!(
        (trace - p.kept_dims() as f64).abs() < 1e-6,
        "trace {trace} vs {}",
        p.kept_dims()
    );
}

#[test]
fn null_space_matches_orthogonal_complement() {
    let mut r = rng(11);
    let c0 = gaussian(&mut r, 8, 3);
    let p = null_space_projector(c0.as_ref(), 1e-8).unwrap();
    let oracle = orthogonal_complement(c0.as_ref());
    assert!(frob((p.matrix() - &oracle).as_ref()) < 1e-8);
    assert!(frob(matmul(p.matrix(), c0.as_ref()).as_ref()) < 1e-8);
    assert_eq!(p.kept_dims(), 5);
    check_projector_laws(&p);
}

#[test]
fn correlation_rank_agrees_with_gram_schmidt() {
    let mut r = rng(4);
    let c0 = gaussian(&mut r, 10, 4);
    let corr = matmul(c0.as_ref(), transpose(c0.as_ref()).as_ref());
    assert_eq!(rank_estimate(corr.as_ref(), 1e-8).unwrap(), 4);
    assert_eq!(gram_schmidt_rank(corr.as_ref(), 1e-10), 4);
}

#[test]
fn least_variation_attains_the_smallest_gain() {
    let mut r = rng(5);
    let w = gaussian(&mut r, 320, 768);
    let p = least_variation_projector(w.as_ref(), 1).unwrap();
    check_projector_laws(&p);
    let sigma_min = *linalg::svd(w.as_ref()).unwrap().sigma.last().unwrap();
    let (mut mapped, mut projected) = (0.0, 0.0);
    for _ in 0..1000 {
        let eps = Mat::from_fn(1, 768, |_, _| r.sample::<f64, _>(StandardNormal));
        let dir = matmul(eps.as_ref(), p.matrix());
        projected += frob(dir.as_ref());
        mapped += frob(matmul(w.as_ref(), transpose(dir.as_ref()).as_ref()).as_ref());
    }
    let (mapped, projected) = (mapped / 1000.0, projected / 1000.0);
    assert!(
        mapped <= sigma_min * projected + 1e-9,
        "{mapped} > {sigma_min}·{projected}"
    );
}

#[test]
fn spd_solve_meets_residual_bound() {
    let mut r = rng(3);
    let g = gaussian(&mut r, 16, 16);
    let mut a = matmul(g.as_ref(), transpose(g.as_ref()).as_ref());
    for i in 0..16 {
        a[(i, i)] += 1.0;
    }
    let b = gaussian(&mut r, 16, 5);
    let x = linalg::solve_linear(a.as_ref(), b.as_ref()).unwrap();
    let residual = frob((matmul(a.as_ref(), x.as_ref()) - &b).as_ref());
    assert!(residual <= 1e-8 * frob(b.as_ref()));

    let solver = LinearSolver::new(a.as_ref()).unwrap();
    let xr = solver.solve_right(transpose(b.as_ref()).as_ref()).unwrap();
    let residual = frob((matmul(xr.as_ref(), a.as_ref()) - transpose(b.as_ref())).as_ref());
    assert!(residual <= 1e-8 * frob(b.as_ref()));
    let inv = gauss_jordan_inverse(a.as_ref());
    assert!(rel_diff(x.as_ref(), matmul(inv.as_ref(), b.as_ref()).as_ref()) < 1e-10);
}

#[test]
fn svd_reconstructs_and_orders() {
    let mut r = rng(8);
    for (m, n) in [(6, 9), (9, 6), (7, 7)] {
        let a = gaussian(&mut r, m, n);
        let dec = linalg::svd(a.as_ref()).unwrap();
        assert!(dec.sigma.windows(2).all(|w| w[0] >= w[1]));
        assert!(dec.sigma.iter().all(|&s| s >= 0.0));
        assert!(rel_diff(dec.reconstruct().as_ref(), a.as_ref()) < 1e-10);
    }
}

fn c0_strategy() -> impl Strategy<Value = Mat<f64>> {
    (prop::sample::select(vec![8usize, 16, 32]), any::<u64>()).prop_flat_map(|(d0, seed)| {
        (1..d0).prop_map(move |n| {
            let mut r = rng(seed);
            gaussian(&mut r, d0, n)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn null_space_projector_laws(c0 in c0_strategy()) {
        let p = null_space_projector(c0.as_ref(), 1e-8).unwrap();
        check_projector_laws(&p);
        let annihilated = frob(matmul(p.matrix(), c0.as_ref()).as_ref()) / frob(c0.as_ref());
        prop_assert!(annihilated < 1e-8);
    }

    #[test]
    fn kept_dims_plus_rank_is_d0(c0 in c0_strategy(), tol in prop::sample::select(vec![1e-8, 1e-6, 1e-4])) {
        let p = null_space_projector(c0.as_ref(), tol).unwrap();
        let corr = matmul(c0.as_ref(), transpose(c0.as_ref()).as_ref());
        let rank = rank_estimate(corr.as_ref(), tol).unwrap();
        prop_assert_eq!(p.kept_dims() + rank, c0.nrows());
        prop_assert_eq!(p.kept_dims(), c0.nrows() - c0.ncols());
    }

    #[test]
    fn least_variation_laws(seed in any::<u64>(), d_v in 2usize..12, d0 in 2usize..12, r_frac in 0.0f64..1.0) {
        let mut r = rng(seed);
        let w = gaussian(&mut r, d_v, d0);
        let rank = 1 + ((d_v.min(d0) - 1) as f64 * r_frac) as usize;
        let p = least_variation_projector(w.as_ref(), rank).unwrap();
        check_projector_laws(&p);
        prop_assert_eq!(p.kept_dims(), rank);
        prop_assert_eq!(gram_schmidt_rank(p.matrix(), 1e-8), rank);
    }
}

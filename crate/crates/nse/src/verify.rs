//! Self-check suite: closed forms against iterative oracles, first-order
//! conditions, the UCE positivity probe and projector laws.

use std::fmt::Write as _;

use faer::Mat;
use nse_core::linalg::frobenius;
use nse_core::oracle::{
    gd_minimize_erase_only, gd_minimize_uce, kkt_residual, pgd_minimize_constrained, positivity_probe, OracleConfig,
};
use nse_core::{
    gen_synthetic_task, null_space_projector, rank_estimate, refine_pipeline, solve_erase_only, solve_null_space,
    solve_uce, ConceptMatrix, EditDelta, EraseTask, Hyperparams, LayerWeights, Projector, RetainSet, SyntheticSpec,
};

use crate::error::Result;

/// Signature of the constrained solver under test; matches
/// [`nse_core::solve_speed`].
pub type SpeedSolver = fn(
    &LayerWeights,
    &ConceptMatrix,
    &ConceptMatrix,
    &Projector,
    &ConceptMatrix,
    f64,
    Option<&ConceptMatrix>,
) -> nse_core::Result<EditDelta>;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Positivity-probe trials.
    pub trials: usize,
    /// Instances per oracle-agreement and KKT check.
    pub instances: usize,
    pub oracle_tol: f64,
    pub kkt_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100,
            instances: 10,
            oracle_tol: 1e-3,
            kkt_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// 0 when every check passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_passed() {
            0
        } else {
            1
        }
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{mark}  {:width$}  {}", c.name, c.detail);
        }
        out
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckResult {
            name: name.into(),
            passed,
            detail,
        });
    }
}

fn rel_diff(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    frobenius((a - b).as_ref()) / frobenius(b.as_ref()).max(f64::MIN_POSITIVE)
}

fn small_task(seed: u64, d0: usize, d_v: usize, n_retain: usize, n_invariants: usize) -> Result<EraseTask> {
    let spec = SyntheticSpec {
        d0,
        layer_dims: vec![d_v],
        n_erase: 2,
        n_retain,
        n_invariants,
        seed,
    };
    let hp = Hyperparams {
        svd_tol: 1e-8,
        ..Hyperparams::default()
    };
    Ok(gen_synthetic_task(&spec, hp)?)
}

/// Symmetry, idempotence and trace defects of `p`, each scaled by
/// `max(1, ‖P‖_F)`.
pub fn projector_defects(p: &Projector) -> (f64, f64, f64) {
    let m = p.matrix();
    let scale = frobenius(m).max(1.0);
    let asym = frobenius((m - m.transpose()).as_ref()) / scale;
    let idem = frobenius((m * m - m).as_ref()) / scale;
    let trace: f64 = (0..m.nrows()).map(|i| m[(i, i)]).sum();
    (asym, idem, (trace - p.kept_dims() as f64).abs())
}

/// Runs the built-in seeded suite against `speed`.
pub fn run_suite(cfg: &VerifyConfig, speed: SpeedSolver) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let oracle = OracleConfig::default();
    let base = cfg.seed.wrapping_mul(1_000_003);

    let (mut worst_asym, mut worst_idem, mut worst_trace) = (0.0f64, 0.0f64, 0.0f64);
    let mut identity_ok = true;
    for k in 0..60u64 {
        let d0 = [8, 16, 32][(k % 3) as usize];
        let n = 1 + (k as usize * 7) % (d0 - 1);
        let task = small_task(base + k, d0, 4, n, 0)?;
        let p = null_space_projector(task.retain.as_ref(), 1e-8)?;
        let (asym, idem, trace) = projector_defects(&p);
        worst_asym = worst_asym.max(asym);
        worst_idem = worst_idem.max(idem);
        worst_trace = worst_trace.max(trace);
        let corr = task.retain.as_ref() * task.retain.as_ref().transpose();
        identity_ok &= p.kept_dims() + rank_estimate(corr.as_ref(), 1e-8)? == d0;
    }
    report.push(
        "projector laws",
        worst_asym <= 1e-10 && worst_idem <= 1e-8 && worst_trace <= 1e-6,
        format!("max asymmetry {worst_asym:.2e}, idempotence defect {worst_idem:.2e}, trace defect {worst_trace:.2e}"),
    );
    report.push("kept_dims + rank = d0", identity_ok, "60 random retain sets".into());

    let mut worst = [0.0f64; 4];
    for k in 0..cfg.instances as u64 {
        let task = small_task(base + 100 + k, 8 + (k as usize % 3) * 2, 6, 3, 0)?;
        let w = &task.layers[0];
        let hp = Hyperparams {
            svd_tol: 1e-4,
            ..task.hp.clone()
        };
        let uce = solve_uce(w, &task.erase, &task.anchor, &task.retain, &hp)?;
        let gd = gd_minimize_uce(w, &task.erase, &task.anchor, &task.retain, &hp, &oracle)?.require_converged()?;
        worst[0] = worst[0].max(rel_diff(&uce.delta, &gd.solution));

        let eo = solve_erase_only(w, &task.erase, &task.anchor, None)?;
        let gd = gd_minimize_erase_only(w, &task.erase, &task.anchor, &oracle)?.require_converged()?;
        worst[1] = worst[1].max(rel_diff(&eo.delta, &gd.solution));

        let task = small_task(base + 200 + k, 12, 8, 4, 2)?;
        let w = &task.layers[0];
        let p = null_space_projector(task.retain.as_ref(), 1e-8)?;
        let empty = ConceptMatrix::empty(nse_core::ConceptRole::Invariant, 12);
        let ns = solve_null_space(w, &task.erase, &task.anchor, &p, None)?;
        let gd = pgd_minimize_constrained(w, &task.erase, &task.anchor, &p, &empty, &oracle)?.require_converged()?;
        worst[2] = worst[2].max(rel_diff(&ns.delta, &gd.solution));

        let sp = speed(w, &task.erase, &task.anchor, &p, &task.invariants, 0.0, None)?;
        let gd = pgd_minimize_constrained(w, &task.erase, &task.anchor, &p, &task.invariants, &oracle)?
            .require_converged()?;
        worst[3] = worst[3].max(rel_diff(&sp.delta, &gd.solution));
    }
    for (name, err) in ["uce", "erase-only", "null-space", "speed"].iter().zip(worst) {
        report.push(
            &format!("oracle agreement: {name}"),
            err < cfg.oracle_tol,
            format!("max relative error {err:.2e} over {} instances", cfg.instances),
        );
    }

    let (mut worst_stat, mut worst_feas, mut worst_iec) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..cfg.instances as u64 {
        let task = small_task(base + 300 + k, 12 + (k as usize % 3) * 2, 8, 4, 2)?;
        let w = &task.layers[0];
        let p = null_space_projector(task.retain.as_ref(), 1e-8)?;
        let sp = speed(w, &task.erase, &task.anchor, &p, &task.invariants, 0.0, None)?;
        let kkt = kkt_residual(sp.delta.as_ref(), w, &task.erase, &task.anchor, &p, &task.invariants)?;
        let w_norm = frobenius(w.weights());
        worst_stat = worst_stat.max(kkt.stationarity_residual / w_norm);
        worst_feas = worst_feas.max(kkt.feasibility_residual / w_norm);
        let iec = frobenius((&sp.delta * task.invariants.as_ref()).as_ref());
        worst_iec = worst_iec.max(iec / (w_norm * frobenius(task.invariants.as_ref())));
    }
    report.push(
        "kkt stationarity",
        worst_stat < cfg.kkt_tol,
        format!("max residual / ‖W‖ {worst_stat:.2e}"),
    );
    report.push(
        "kkt feasibility",
        worst_feas < cfg.kkt_tol,
        format!("max residual / ‖W‖ {worst_feas:.2e}"),
    );
    report.push(
        "invariant constraint",
        worst_iec < 1e-8,
        format!("max ‖ΔP·C2‖ / (‖W‖·‖C2‖) {worst_iec:.2e}"),
    );

    let (mut positive, mut preserved, mut gated) = (0usize, 0usize, 0usize);
    for k in 0..cfg.trials as u64 {
        let task = small_task(base + 10_000 + k, 10, 10, 4, 0)?;
        let w = &task.layers[0];
        let hp = Hyperparams {
            svd_tol: 1e-4,
            ..task.hp.clone()
        };
        let probe = positivity_probe(w, &task.erase, &task.anchor, &task.retain, &hp)?;
        if !probe.assumptions.all() {
            continue;
        }
        gated += 1;
        positive += usize::from(probe.positive);
        let p = null_space_projector(task.retain.as_ref(), hp.svd_tol)?;
        let ns = solve_null_space(w, &task.erase, &task.anchor, &p, Some(&task.retain))?;
        preserved += usize::from(ns.diagnostics.e0 < 1e-14 * probe.scale);
    }
    report.push(
        "uce positivity",
        gated == cfg.trials && positive == gated,
        format!("{positive}/{gated} positive, {} trials", cfg.trials),
    );
    report.push(
        "null-space preservation",
        preserved == gated,
        format!("{preserved}/{gated} with e0 < 1e-14·‖W·C0‖²"),
    );
    Ok(report)
}

/// Checks a loaded task layer by layer: projector laws on the refined retain
/// set, first-order conditions of the constrained solve, the invariant
/// constraint, and oracle agreement when `d0 ≤ 16`.
pub fn run_task_suite(task: &EraseTask, cfg: &VerifyConfig, speed: SpeedSolver) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let retain = RetainSet::from_original(task.retain.clone());
    let oracle = OracleConfig::default();
    for layer in &task.layers {
        let refined = refine_pipeline(&retain, layer, &task.erase, &task.anchor, &task.hp)?;
        let p = null_space_projector(refined.retain.concepts().as_ref(), task.hp.svd_tol)?;
        let (asym, idem, _) = projector_defects(&p);
        report.push(
            &format!("{}: projector laws", layer.id),
            asym <= 1e-10 && idem <= 1e-8,
            format!("asymmetry {asym:.2e}, idempotence defect {idem:.2e}"),
        );
        let lambda_inv = task.hp.lambda_inv;
        let sp = speed(
            layer,
            &task.erase,
            &task.anchor,
            &p,
            &task.invariants,
            lambda_inv,
            Some(&task.retain),
        )?;
        let w_norm = frobenius(layer.weights());
        if lambda_inv == 0.0 {
            let kkt = kkt_residual(
                sp.delta.as_ref(),
                layer,
                &task.erase,
                &task.anchor,
                &p,
                &task.invariants,
            )?;
            report.push(
                &format!("{}: kkt", layer.id),
                kkt.stationarity_residual < cfg.kkt_tol * w_norm && kkt.feasibility_residual < cfg.kkt_tol * w_norm,
                format!(
                    "stationarity {:.2e}, feasibility {:.2e} (‖W‖ {w_norm:.2e})",
                    kkt.stationarity_residual, kkt.feasibility_residual
                ),
            );
            if !task.invariants.is_empty() {
                let bound = 1e-8 * w_norm * frobenius(task.invariants.as_ref());
                report.push(
                    &format!("{}: invariant constraint", layer.id),
                    sp.diagnostics.invariant_residual <= bound,
                    format!("‖ΔP·C2‖ {:.2e}", sp.diagnostics.invariant_residual),
                );
            }
        }
        if task.d0() <= 16 {
            let gd = pgd_minimize_constrained(layer, &task.erase, &task.anchor, &p, &task.invariants, &oracle)?;
            let err = rel_diff(&sp.delta, &gd.solution);
            report.push(
                &format!("{}: oracle agreement", layer.id),
                gd.converged && err < cfg.oracle_tol,
                format!("relative error {err:.2e}"),
            );
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let cfg = VerifyConfig {
            trials: 10,
            instances: 2,
            ..VerifyConfig::default()
        };
        let report = run_suite(&cfg, nse_core::solve_speed).unwrap();
        assert!(report.all_passed(), "{}", report.table());
        assert_eq!(report.exit_code(), 0);
    }
}

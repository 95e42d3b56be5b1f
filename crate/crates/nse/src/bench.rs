//! Retain-rank sweeps, end-to-end timing and report files.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nse_core::linalg::sq_frobenius;
use nse_core::{
    gen_synthetic_task, null_space_projector_with, solve_null_space, EraseTask, Hyperparams, SyntheticSpec,
};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::engine::{self, EditSummary};
use crate::error::{CliError, Result};
use crate::ENGINE_VERSION;

/// One projector/solve measurement of the retain-rank sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub seed: u64,
    pub n_retain: usize,
    pub svd_tol: f64,
    /// Directions kept when the null space is empty; 0 means none.
    pub approx_dirs: usize,
    pub e0: f64,
    pub e1: f64,
    /// `‖W·C0‖²`, the scale `e0` is judged against.
    pub wc0_sq: f64,
    pub null_dim: usize,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub profile: String,
    pub n_layers: usize,
    pub d0: usize,
    pub n_erase: usize,
    pub n_retain: usize,
    pub n_aug: usize,
    pub r: usize,
    pub repeats: usize,
    pub min_ms: f64,
    pub median_ms: f64,
    pub total_e1: f64,
    pub max_e0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "rows", rename_all = "snake_case")]
pub enum ReportRows {
    Sweep(Vec<SweepPoint>),
    Timing(Vec<TimingRow>),
}

impl ReportRows {
    pub fn len(&self) -> usize {
        match self {
            ReportRows::Sweep(r) => r.len(),
            ReportRows::Timing(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub machine: String,
    pub engine_version: String,
    pub seed: u64,
    /// Shape description of the synthetic workload.
    pub profile: String,
    pub threads: usize,
    pub rows: ReportRows,
}

/// Host descriptor recorded in every report.
pub fn machine_descriptor() -> String {
    let cpu = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_owned())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{} {} / {cpu} / {cores} logical cores",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub d0: usize,
    pub d_v: usize,
    pub n_erase: usize,
    pub retain_grid: Vec<usize>,
    pub tol_grid: Vec<f64>,
    /// Approximate-null fallbacks to try; 0 disables the fallback.
    pub approx_grid: Vec<usize>,
    pub seed: u64,
}

/// Null-space solve for every `(n_retain, tol, approx_dirs)` grid point.
///
/// All retain counts share the same weights and targets; the retain columns
/// for a smaller count are a prefix of those for a larger one.
pub fn sweep_retain_rank(cfg: &SweepConfig) -> Result<BenchReport> {
    if cfg.retain_grid.is_empty() || cfg.tol_grid.is_empty() || cfg.approx_grid.is_empty() {
        return Err(CliError::Argument("sweep grids must be non-empty".into()));
    }
    let mut rows = Vec::new();
    for &n_retain in &cfg.retain_grid {
        let spec = SyntheticSpec::uniform(cfg.d0, cfg.d_v, 1, cfg.n_erase, n_retain, cfg.seed);
        let task = gen_synthetic_task(&spec, Hyperparams::default())?;
        let w = &task.layers[0];
        let wc0_sq = sq_frobenius((w.weights() * task.retain.as_ref()).as_ref());
        for &tol in &cfg.tol_grid {
            for &k in &cfg.approx_grid {
                let start = Instant::now();
                let p = null_space_projector_with(task.retain.as_ref(), tol, (k > 0).then_some(k))?;
                let delta = solve_null_space(w, &task.erase, &task.anchor, &p, Some(&task.retain))?;
                let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
                rows.push(SweepPoint {
                    seed: cfg.seed,
                    n_retain,
                    svd_tol: tol,
                    approx_dirs: k,
                    e0: delta.diagnostics.e0,
                    e1: delta.diagnostics.e1,
                    wc0_sq,
                    null_dim: p.kept_dims(),
                    runtime_ms,
                });
            }
        }
    }
    Ok(BenchReport {
        machine: machine_descriptor(),
        engine_version: ENGINE_VERSION.into(),
        seed: cfg.seed,
        profile: format!("sweep d0={} d_v={} n_erase={}", cfg.d0, cfg.d_v, cfg.n_erase),
        threads: 1,
        rows: ReportRows::Sweep(rows),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// 16 layers with `d0 = 768`: 6 × 320, 6 × 640 and 4 × 1280 output rows.
    SdLike,
    Custom {
        d0: usize,
        layer_dims: Vec<usize>,
    },
}

impl Profile {
    pub fn d0(&self) -> usize {
        match self {
            Profile::SdLike => 768,
            Profile::Custom { d0, .. } => *d0,
        }
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        match self {
            Profile::SdLike => [vec![320; 6], vec![640; 6], vec![1280; 4]].concat(),
            Profile::Custom { layer_dims, .. } => layer_dims.clone(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Profile::SdLike => "sd-like: 16 layers, d0=768, d_v 6x320 + 6x640 + 4x1280".into(),
            Profile::Custom { d0, layer_dims } => format!("custom: d0={d0}, d_v={layer_dims:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingConfig {
    pub profile: Profile,
    pub n_erase: usize,
    pub n_retain: usize,
    pub n_invariants: usize,
    pub hp: Hyperparams,
    pub seed: u64,
    pub repeats: usize,
    pub threads: usize,
}

impl TimingConfig {
    pub fn synthetic_task(&self) -> Result<EraseTask> {
        let spec = SyntheticSpec {
            d0: self.profile.d0(),
            layer_dims: self.profile.layer_dims(),
            n_erase: self.n_erase,
            n_retain: self.n_retain,
            n_invariants: self.n_invariants,
            seed: self.seed,
        };
        Ok(gen_synthetic_task(&spec, self.hp.clone())?)
    }
}

/// Wall time of the full per-layer pipeline (erase-only update, refinement,
/// projector, constrained solve, application), excluding task generation.
pub fn timing_bench(cfg: &TimingConfig) -> Result<BenchReport> {
    if cfg.repeats == 0 {
        return Err(CliError::Argument("repeats must be at least 1".into()));
    }
    let task = cfg.synthetic_task()?;
    let mut times = Vec::with_capacity(cfg.repeats);
    let mut summary = EditSummary::default();
    for _ in 0..cfg.repeats {
        let start = Instant::now();
        let edits = engine::run_edit(&task, cfg.threads)?;
        let elapsed = start.elapsed();
        times.push(elapsed.as_secs_f64() * 1e3);
        summary = EditSummary::new(&edits, elapsed);
    }
    times.sort_by(f64::total_cmp);
    let row = TimingRow {
        profile: cfg.profile.describe(),
        n_layers: task.layers.len(),
        d0: task.d0(),
        n_erase: cfg.n_erase,
        n_retain: cfg.n_retain,
        n_aug: cfg.hp.n_aug,
        r: cfg.hp.r,
        repeats: cfg.repeats,
        min_ms: times[0],
        median_ms: median_sorted(&times),
        total_e1: summary.total_e1,
        max_e0: summary.max_e0,
    };
    Ok(BenchReport {
        machine: machine_descriptor(),
        engine_version: ENGINE_VERSION.into(),
        seed: cfg.seed,
        profile: cfg.profile.describe(),
        threads: cfg.threads,
        rows: ReportRows::Timing(vec![row]),
    })
}

pub fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// Picks the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

/// Serializes the rows as CSV (header plus one line per row) or the whole
/// report as JSON.
pub fn render_report(report: &BenchReport, format: ReportFormat) -> Result<String> {
    if report.rows.is_empty() {
        return Err(CliError::Report("report has no rows".into()));
    }
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report).expect("report serializes") + "\n"),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let res = match &report.rows {
                ReportRows::Sweep(rows) => rows.iter().try_for_each(|r| w.serialize(r)),
                ReportRows::Timing(rows) => rows.iter().try_for_each(|r| w.serialize(r)),
            };
            res.map_err(|e| CliError::Report(e.to_string()))?;
            let bytes = w.into_inner().map_err(|e| CliError::Report(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

pub fn emit_report(report: &BenchReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let text = render_report(report, format)?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Reads the rows of a CSV report written by [`emit_report`].
pub fn read_csv_rows<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Report(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| CliError::Report(format!("{}: {e}", path.display())))
}

pub fn read_json_report(path: impl AsRef<Path>) -> Result<BenchReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Report(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(rows: ReportRows) -> BenchReport {
        BenchReport {
            machine: "test".into(),
            engine_version: ENGINE_VERSION.into(),
            seed: 1,
            profile: "p".into(),
            threads: 1,
            rows,
        }
    }

    #[test]
    fn empty_report_is_an_error() {
        let err = render_report(&report(ReportRows::Sweep(vec![])), ReportFormat::Csv).unwrap_err();
        assert!(matches!(err, CliError::Report(_)));
    }

    #[test]
    fn single_row_csv_has_two_lines() {
        let row = SweepPoint {
            seed: 1,
            n_retain: 4,
            svd_tol: 1e-8,
            approx_dirs: 0,
            e0: 0.0,
            e1: 1.5,
            wc0_sq: 2.0,
            null_dim: 28,
            runtime_ms: 0.25,
        };
        let csv = render_report(&report(ReportRows::Sweep(vec![row])), ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "seed,n_retain,svd_tol,approx_dirs,e0,e1,wc0_sq,null_dim,runtime_ms"
        );
    }

    #[test]
    fn sd_like_layer_mix() {
        let dims = Profile::SdLike.layer_dims();
        assert_eq!(dims.len(), 16);
        assert_eq!(dims.iter().filter(|&&d| d == 1280).count(), 4);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median_sorted(&[1.0, 2.0, 9.0]), 2.0);
        assert_eq!(median_sorted(&[1.0, 2.0, 4.0, 9.0]), 3.0);
    }
}

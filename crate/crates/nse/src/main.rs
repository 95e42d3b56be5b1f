use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use nse::bench::{self, Profile, ReportFormat, SweepConfig, TimingConfig};
use nse::engine::{self, EditSummary};
use nse::manifest::{self, HyperparamBlock, LoadedTask, TaskManifest};
use nse::npy;
use nse::verify::{self, VerifyConfig};
use nse::{CliError, Result};
use nse_core::{null_space_projector, rank_estimate};

/// Closed-form concept erasure with null-space constrained updates.
///
/// Exit codes: 0 success, 1 failed verification, 2 invalid input,
/// 3 numerical failure. Set NSE_LOG (error, warn, info, debug) for logs.
#[derive(Debug, Parser)]
#[command(name = "nse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct TaskArgs {
    /// Task manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Hyperparameter override, repeatable: --set svd_tol=1e-1
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replaces the manifest seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Keep this many smallest directions when the null space is empty.
    #[arg(long = "approx-null", value_name = "K")]
    approx_null: Option<usize>,
    /// Worker threads for layer-level parallelism.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve and apply the constrained update for every manifest layer.
    Edit {
        #[command(flatten)]
        task: TaskArgs,
        /// Output directory for edited weights, deltas and diagnostics.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the refined retain set for every manifest layer.
    Refine {
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle, KKT, positivity and projector checks.
    Verify {
        /// Check this task instead of the built-in seeded suite.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Positivity-probe trials.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Instances per oracle and KKT check.
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Timing benchmark or retain-rank sweep on synthetic tasks.
    Bench {
        #[arg(long, value_enum, default_value_t = ProfileArg::SdLike)]
        profile: ProfileArg,
        /// Run the retain-rank sweep instead of the timing benchmark.
        #[arg(long)]
        sweep: bool,
        /// Embedding dimension for custom profiles and sweeps.
        #[arg(long, default_value_t = 32)]
        d0: usize,
        /// Output rows per layer for custom profiles and sweeps.
        #[arg(long, value_delimiter = ',', default_value = "24")]
        dims: Vec<usize>,
        /// Number of target concepts.
        #[arg(long, default_value_t = 100)]
        erase: usize,
        /// Number of retained concepts (timing).
        #[arg(long, default_value_t = 100)]
        retain: usize,
        /// Invariant columns (timing).
        #[arg(long, default_value_t = 2)]
        invariants: usize,
        #[arg(long = "retain-grid", value_delimiter = ',', default_value = "4,8,16,31")]
        retain_grid: Vec<usize>,
        #[arg(long = "tol-grid", value_delimiter = ',', default_value = "1e-8")]
        tol_grid: Vec<f64>,
        /// Approximate-null fallbacks for the sweep; 0 disables.
        #[arg(long = "approx-grid", value_delimiter = ',', default_value = "0")]
        approx_grid: Vec<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; `.json` selects JSON, anything else CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print shape, rank and null-space dimension of a matrix or manifest.
    Inspect {
        /// An .npy matrix or a .json manifest.
        path: PathBuf,
        /// Cutoff on singular values of C·Cᵀ.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    SdLike,
    Custom,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NSE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Edit { task, out } => cmd_edit(&task, &out),
        Command::Refine { task, out } => cmd_refine(&task, &out),
        Command::Verify {
            manifest,
            overrides,
            trials,
            instances,
            seed,
        } => cmd_verify(manifest.as_deref(), &overrides, trials, instances, seed),
        Command::Bench {
            profile,
            sweep,
            d0,
            dims,
            erase,
            retain,
            invariants,
            retain_grid,
            tol_grid,
            approx_grid,
            overrides,
            repeats,
            threads,
            seed,
            out,
        } => {
            let report = if sweep {
                bench::sweep_retain_rank(&SweepConfig {
                    d0,
                    d_v: dims.first().copied().unwrap_or(d0),
                    n_erase: erase,
                    retain_grid,
                    tol_grid,
                    approx_grid,
                    seed,
                })?
            } else {
                let mut block = HyperparamBlock::default();
                for o in &overrides {
                    block.set(o)?;
                }
                let profile = match profile {
                    ProfileArg::SdLike => Profile::SdLike,
                    ProfileArg::Custom => Profile::Custom { d0, layer_dims: dims },
                };
                bench::timing_bench(&TimingConfig {
                    profile,
                    n_erase: erase,
                    n_retain: retain,
                    n_invariants: invariants,
                    hp: block.to_hyperparams(seed),
                    seed,
                    repeats,
                    threads,
                })?
            };
            print!("{}", bench::render_report(&report, ReportFormat::Csv)?);
            if let bench::ReportRows::Timing(rows) = &report.rows {
                for r in rows {
                    eprintln!(
                        "{}: min {:.1} ms, median {:.1} ms over {} runs ({} threads)",
                        r.profile, r.min_ms, r.median_ms, r.repeats, report.threads
                    );
                }
            }
            if let Some(path) = out {
                bench::emit_report(&report, &path, ReportFormat::from_path(&path))?;
            }
            Ok(0)
        }
        Command::Inspect { path, tol } => cmd_inspect(&path, tol),
    }
}

fn load(args: &TaskArgs) -> Result<LoadedTask> {
    let mut m = TaskManifest::read(&args.manifest)?;
    for o in &args.overrides {
        m.hyperparams.set(o)?;
    }
    if let Some(k) = args.approx_null {
        m.hyperparams.approx_null = Some(k);
    }
    if let Some(seed) = args.seed {
        m.seed = seed;
    }
    manifest::load_manifest(m, &args.manifest)
}

fn cmd_edit(args: &TaskArgs, out: &Path) -> Result<i32> {
    let loaded = load(args)?;
    let start = Instant::now();
    let edits = engine::run_edit(&loaded.task, args.threads)?;
    let summary = EditSummary::new(&edits, start.elapsed());
    engine::write_edit_outputs(out, &edits, &loaded.layer_dtypes)?;
    println!("{}", summary.line());
    Ok(0)
}

fn cmd_refine(args: &TaskArgs, out: &Path) -> Result<i32> {
    let loaded = load(args)?;
    let refinements = engine::run_refine(&loaded.task, args.threads)?;
    let reports = engine::write_refine_outputs(out, &loaded.task, &refinements)?;
    for r in &reports {
        println!(
            "{}: kept {} of {} original, {} augmented",
            r.layer_id,
            r.filtered.kept_indices.len(),
            r.filtered.shifts.len(),
            r.augmented.kept_indices.len()
        );
    }
    Ok(0)
}

fn cmd_verify(
    manifest: Option<&Path>,
    overrides: &[String],
    trials: usize,
    instances: usize,
    seed: u64,
) -> Result<i32> {
    let cfg = VerifyConfig {
        seed,
        trials,
        instances,
        ..VerifyConfig::default()
    };
    let report = match manifest {
        Some(path) => {
            let mut m = TaskManifest::read(path)?;
            for o in overrides {
                m.hyperparams.set(o)?;
            }
            let loaded = manifest::load_manifest(m, path)?;
            verify::run_task_suite(&loaded.task, &cfg, nse_core::solve_speed)?
        }
        None => verify::run_suite(&cfg, nse_core::solve_speed)?,
    };
    print!("{}", report.table());
    Ok(report.exit_code())
}

fn cmd_inspect(path: &Path, tol: f64) -> Result<i32> {
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        let loaded = manifest::load_task(path)?;
        let t = &loaded.task;
        println!(
            "d0={} n_erase={} n_retain={} n_invariants={} layers={}",
            t.d0(),
            t.n_erase(),
            t.n_retain(),
            t.invariants.len(),
            t.layers.len()
        );
        for (layer, dtype) in t.layers.iter().zip(&loaded.layer_dtypes) {
            println!("layer {} {}x{} {}", layer.id, layer.d_v(), layer.d0(), dtype.descr());
        }
        let p = null_space_projector(t.retain.as_ref(), tol)?;
        println!(
            "retain rank={} null_dim={} tol={tol:e}",
            t.d0() - p.kept_dims(),
            p.kept_dims()
        );
        return Ok(0);
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(CliError::Argument(format!("--tol must be positive, got {tol}")));
    }
    let rec = npy::read_matrix(path)?;
    let m = rec.to_mat();
    let corr = &m * m.transpose();
    let rank = rank_estimate(corr.as_ref(), tol)?;
    println!(
        "{} rows={} cols={} dtype={} rank={} null_dim={} tol={tol:e}",
        rec.name,
        rec.rows,
        rec.cols,
        rec.dtype().descr(),
        rank,
        rec.rows - rank
    );
    Ok(0)
}

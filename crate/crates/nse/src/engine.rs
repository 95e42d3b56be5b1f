//! Layer-parallel driver around [`nse_core::edit_layer`] and its on-disk
//! outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nse_core::{edit_layer, refine_pipeline, EraseTask, LayerEdit, NullSpaceStatus, Provenance, Refinement, RetainSet};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::manifest::sanitize;
use crate::npy::{self, Dtype, MatrixRecord};

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    if threads == 0 {
        return Err(CliError::Argument("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Argument(format!("thread pool: {e}")))
}

/// Edits every layer of `task` on `threads` workers. Results come back in
/// layer order and do not depend on the thread count.
pub fn run_edit(task: &EraseTask, threads: usize) -> Result<Vec<LayerEdit>> {
    pool(threads)?.install(|| {
        task.layers
            .par_iter()
            .map(|layer| {
                let start = Instant::now();
                let mut edit = edit_layer(layer, task).map_err(|source| CliError::Layer {
                    layer: layer.id.clone(),
                    source,
                })?;
                edit.delta.diagnostics.solve_wall_time = start.elapsed();
                Ok(edit)
            })
            .collect()
    })
}

/// Runs only the retain-set refinement for every layer.
pub fn run_refine(task: &EraseTask, threads: usize) -> Result<Vec<Refinement>> {
    let retain = RetainSet::from_original(task.retain.clone());
    pool(threads)?.install(|| {
        task.layers
            .par_iter()
            .map(|layer| {
                refine_pipeline(&retain, layer, &task.erase, &task.anchor, &task.hp).map_err(|source| CliError::Layer {
                    layer: layer.id.clone(),
                    source,
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EditSummary {
    pub total_e1: f64,
    pub max_e0: f64,
    pub max_invariant_residual: f64,
    pub wall_time: Duration,
}

impl EditSummary {
    pub fn new(edits: &[LayerEdit], wall_time: Duration) -> Self {
        let mut s = Self {
            wall_time,
            ..Self::default()
        };
        for e in edits {
            let d = &e.delta.diagnostics;
            s.total_e1 += d.e1;
            s.max_e0 = s.max_e0.max(d.e0);
            s.max_invariant_residual = s.max_invariant_residual.max(d.invariant_residual);
        }
        s
    }

    pub fn line(&self) -> String {
        format!(
            "total_e1={:.6e} max_e0={:.6e} max_invariant_residual={:.6e} wall_time={:.3}s",
            self.total_e1,
            self.max_e0,
            self.max_invariant_residual,
            self.wall_time.as_secs_f64()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerDiagnostics {
    pub layer_id: String,
    pub e1: f64,
    pub e0: f64,
    pub invariant_residual: f64,
    pub solve_wall_time_ms: f64,
    pub null_dim: usize,
    pub null_status: String,
    pub retain_refined: usize,
    pub weights_file: String,
    pub delta_file: String,
}

fn status_name(status: NullSpaceStatus) -> String {
    match status {
        NullSpaceStatus::Exact => "exact".into(),
        NullSpaceStatus::Empty => "empty".into(),
        NullSpaceStatus::Approximate { dims } => format!("approximate({dims})"),
    }
}

/// Writes `<id>.weights.npy` (edited weights in the input dtype),
/// `<id>.delta.npy` (f64) and `diagnostics.json` into `out`.
pub fn write_edit_outputs(out: &Path, edits: &[LayerEdit], dtypes: &[Dtype]) -> Result<Vec<LayerDiagnostics>> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut rows = Vec::with_capacity(edits.len());
    for (edit, &dtype) in edits.iter().zip(dtypes) {
        let id = &edit.delta.layer_id;
        let stem = sanitize(id);
        let weights_file = format!("{stem}.weights.npy");
        let delta_file = format!("{stem}.delta.npy");
        npy::write_matrix(
            &MatrixRecord::from_mat(id.clone(), edit.edited.weights(), dtype),
            out.join(&weights_file),
        )?;
        npy::write_matrix(
            &MatrixRecord::from_mat(id.clone(), edit.delta.delta.as_ref(), Dtype::F64),
            out.join(&delta_file),
        )?;
        let d = &edit.delta.diagnostics;
        rows.push(LayerDiagnostics {
            layer_id: id.clone(),
            e1: d.e1,
            e0: d.e0,
            invariant_residual: d.invariant_residual,
            solve_wall_time_ms: d.solve_wall_time.as_secs_f64() * 1e3,
            null_dim: edit.null_dim,
            null_status: status_name(edit.null_status),
            retain_refined: edit.refinement.retain.len(),
            weights_file,
            delta_file,
        });
    }
    write_json(&out.join("diagnostics.json"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineReport {
    pub layer_id: String,
    pub retain_file: String,
    pub provenance: Vec<String>,
    pub filtered: ShiftSummary,
    pub augmented: ShiftSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftSummary {
    pub shifts: Vec<f64>,
    pub mu: f64,
    pub threshold: f64,
    pub kept_indices: Vec<usize>,
}

impl From<&nse_core::ShiftReport> for ShiftSummary {
    fn from(r: &nse_core::ShiftReport) -> Self {
        Self {
            shifts: r.shifts.clone(),
            mu: r.mu,
            threshold: r.threshold,
            kept_indices: r.kept_indices.clone(),
        }
    }
}

fn provenance_tag(p: &Provenance) -> String {
    match p {
        Provenance::Original(i) => format!("original:{i}"),
        Provenance::Augmented { parent, draw } => format!("augmented:{parent}:{draw}"),
    }
}

/// Writes one `<id>.retain.npy` per layer and `refine.json`.
pub fn write_refine_outputs(out: &Path, task: &EraseTask, refinements: &[Refinement]) -> Result<Vec<RefineReport>> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut reports = Vec::with_capacity(refinements.len());
    for (layer, r) in task.layers.iter().zip(refinements) {
        let retain_file = format!("{}.retain.npy", sanitize(&layer.id));
        npy::write_matrix(
            &MatrixRecord::from_mat(layer.id.clone(), r.retain.concepts().as_ref(), Dtype::F64),
            out.join(&retain_file),
        )?;
        reports.push(RefineReport {
            layer_id: layer.id.clone(),
            retain_file,
            provenance: r.retain.provenance().iter().map(provenance_tag).collect(),
            filtered: (&r.filtered).into(),
            augmented: (&r.augmented).into(),
        });
    }
    write_json(&out.join("refine.json"), &reports)?;
    Ok(reports)
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &PathBuf, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

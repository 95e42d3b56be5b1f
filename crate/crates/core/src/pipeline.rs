//! End-to-end edit of one layer.

use crate::error::Result;
use crate::linalg::{null_space_projector_with, NullSpaceStatus};
use crate::refine::{refine_pipeline, Refinement, RetainSet};
use crate::solvers::{apply_edit, solve_speed, EditDelta};
use crate::task::{EraseTask, LayerWeights};

#[derive(Debug, Clone)]
pub struct LayerEdit {
    pub delta: EditDelta,
    pub edited: LayerWeights,
    pub refinement: Refinement,
    /// Dimension of the null space the update was confined to.
    pub null_dim: usize,
    pub null_status: NullSpaceStatus,
}

/// Refines the retain set against `layer`, builds the null-space projector of
/// the refined set, solves the constrained update and applies it.
///
/// The `e0` diagnostic is measured on the task's original retain set.
pub fn edit_layer(layer: &LayerWeights, task: &EraseTask) -> Result<LayerEdit> {
    let retain = RetainSet::from_original(task.retain.clone());
    let refinement = refine_pipeline(&retain, layer, &task.erase, &task.anchor, &task.hp)?;
    let p = null_space_projector_with(
        refinement.retain.concepts().as_ref(),
        task.hp.svd_tol,
        task.hp.approx_null,
    )?;
    let delta = solve_speed(
        layer,
        &task.erase,
        &task.anchor,
        &p,
        &task.invariants,
        task.hp.lambda_inv,
        Some(&task.retain),
    )?;
    let edited = apply_edit(layer, &delta)?;
    Ok(LayerEdit {
        delta,
        edited,
        refinement,
        null_dim: p.kept_dims(),
        null_status: p.status().unwrap_or(NullSpaceStatus::Exact),
    })
}

//! Closed-form concept erasure for linear projection weights.
//!
//! The engine edits a weight matrix `W` (`d_v × d0`) so that target concept
//! embeddings are remapped onto anchor embeddings, while updates are confined
//! to the null space of a retained concept set. Every closed form has a
//! brute-force counterpart in [`oracle`].
//!
//! Concept matrices follow the column convention: a `d0 × N` matrix holds
//! one embedding per column.
//!
//! This crate is `no_std` (it needs `alloc`); file formats, timing and the
//! command-line driver live in the `nse` crate.

#![no_std]

extern crate alloc;

pub mod error;
pub mod linalg;
pub mod oracle;
pub mod pipeline;
pub mod refine;
pub mod solvers;
pub mod synth;
pub mod task;

pub use error::{Error, Result};
pub use linalg::{
    least_variation_projector, null_space_projector, null_space_projector_with, rank_estimate, solve_linear, svd,
    LinearSolver, NullSpaceStatus, Projector, ProjectorKind, SvdResult,
};
pub use pipeline::{edit_layer, LayerEdit};
pub use refine::{
    build_invariants, dpa_augment, ipf_filter, refine_pipeline, Invariants, Provenance, Refinement, RetainSet,
    ShiftReport,
};
pub use solvers::{
    apply_edit, prior_shift, solve_erase_only, solve_null_space, solve_speed, solve_uce, Diagnostics, EditDelta,
};
pub use synth::{gen_synthetic_task, SyntheticSpec};
pub use task::{ConceptMatrix, ConceptRole, EraseTask, Hyperparams, LayerWeights};

/// Dense `f64` matrix used throughout the engine.
pub type Matrix = faer::Mat<f64>;

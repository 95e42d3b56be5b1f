//! Inputs of an edit job: concept matrices, layer weights and hyperparameters.

use alloc::string::String;
use alloc::vec::Vec;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::{self, ensure_finite};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConceptRole {
    /// Target concepts to erase (`C1`).
    Erase,
    /// Anchors the targets are remapped onto (`C*`).
    Anchor,
    /// Concepts whose outputs must be preserved (`C0`).
    Retain,
    /// Generation invariants held fixed by equality constraints (`C2`).
    Invariant,
}

impl ConceptRole {
    pub fn name(self) -> &'static str {
        match self {
            ConceptRole::Erase => "erase",
            ConceptRole::Anchor => "anchor",
            ConceptRole::Retain => "retain",
            ConceptRole::Invariant => "invariants",
        }
    }
}

/// Column-stacked concept embeddings (`d0 × N`).
#[derive(Debug, Clone)]
pub struct ConceptMatrix {
    role: ConceptRole,
    data: Mat<f64>,
}

impl ConceptMatrix {
    pub fn new(role: ConceptRole, data: Mat<f64>) -> Result<Self> {
        ensure_finite(data.as_ref(), role.name())?;
        Ok(Self { role, data })
    }

    /// Zero-column matrix with row dimension `d0`.
    pub fn empty(role: ConceptRole, d0: usize) -> Self {
        Self {
            role,
            data: Mat::zeros(d0, 0),
        }
    }

    pub fn from_columns(role: ConceptRole, d0: usize, columns: &[Vec<f64>]) -> Result<Self> {
        for c in columns {
            if c.len() != d0 {
                return Err(Error::DimensionMismatch {
                    context: "concept column length",
                    expected: d0,
                    found: c.len(),
                });
            }
        }
        Self::new(role, Mat::from_fn(d0, columns.len(), |i, j| columns[j][i]))
    }

    pub fn role(&self) -> ConceptRole {
        self.role
    }

    pub fn d0(&self) -> usize {
        self.data.nrows()
    }

    /// Number of concepts (columns).
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn as_ref(&self) -> MatRef<'_, f64> {
        self.data.as_ref()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.d0()).map(|i| self.data[(i, j)]).collect()
    }

    pub fn into_inner(self) -> Mat<f64> {
        self.data
    }
}

/// One editable projection matrix `W` (`d_v × d0`).
#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub id: String,
    weights: Mat<f64>,
}

impl LayerWeights {
    pub fn new(id: impl Into<String>, weights: Mat<f64>) -> Result<Self> {
        ensure_finite(weights.as_ref(), "layer weights")?;
        Ok(Self { id: id.into(), weights })
    }

    pub fn weights(&self) -> MatRef<'_, f64> {
        self.weights.as_ref()
    }

    pub fn d_v(&self) -> usize {
        self.weights.nrows()
    }

    pub fn d0(&self) -> usize {
        self.weights.ncols()
    }

    pub fn into_weights(self) -> Mat<f64> {
        self.weights
    }

    /// Whether `W` has full rank at a cutoff of `1e-10·σ_max`. Logs a warning
    /// when it does not; rank-deficient weights are still editable.
    pub fn check_full_rank(&self) -> Result<bool> {
        let dec = linalg::svd(self.weights())?;
        let Some(&top) = dec.sigma.first() else {
            return Ok(true);
        };
        let full = top > 0.0 && dec.sigma.iter().all(|&s| s >= 1e-10 * top);
        if !full {
            log::warn!("layer `{}` weights are not full rank", self.id);
        }
        Ok(full)
    }
}

/// Hyperparameters of an edit.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Erasure weight (UCE only).
    pub alpha: f64,
    /// Preservation weight (UCE only).
    pub beta: f64,
    /// Tikhonov term added to the UCE system.
    pub lambda_reg: f64,
    /// Absolute singular-value cutoff for the null space of `C0·C0ᵀ`.
    pub svd_tol: f64,
    /// Augmentation rank: number of least-variation directions of `W`.
    pub r: usize,
    /// Augmented copies drawn per retained concept.
    pub n_aug: usize,
    /// Multiplier on the mean prior shift used as the filtering threshold.
    pub filter_scale: f64,
    /// Ridge added to `C2ᵀ·P·M·C2` for degenerate invariants.
    pub lambda_inv: f64,
    /// Keep this many smallest directions when the null space is empty.
    pub approx_null: Option<usize>,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            lambda_reg: 1.0,
            svd_tol: 1e-4,
            r: 1,
            n_aug: 10,
            filter_scale: 1.0,
            lambda_inv: 0.0,
            approx_null: None,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        linalg::check_positive("alpha", self.alpha)?;
        linalg::check_positive("beta", self.beta)?;
        linalg::check_positive("lambda_reg", self.lambda_reg)?;
        linalg::check_positive("svd_tol", self.svd_tol)?;
        linalg::check_positive("filter_scale", self.filter_scale)?;
        if self.r == 0 {
            return Err(Error::InvalidParameter {
                name: "r",
                reason: "augmentation rank must be at least 1".into(),
            });
        }
        if !(self.lambda_inv >= 0.0 && self.lambda_inv.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "lambda_inv",
                reason: alloc::format!("must be non-negative and finite, got {}", self.lambda_inv),
            });
        }
        Ok(())
    }
}

/// A complete, validated edit job.
#[derive(Debug, Clone)]
pub struct EraseTask {
    pub layers: Vec<LayerWeights>,
    pub erase: ConceptMatrix,
    pub anchor: ConceptMatrix,
    pub retain: ConceptMatrix,
    pub invariants: ConceptMatrix,
    pub hp: Hyperparams,
}

impl EraseTask {
    /// Checks `N_E ≥ 1`, `cols(C1) = cols(C*)`, a shared `d0` across every
    /// concept matrix and every layer, and the hyperparameter ranges.
    pub fn new(
        layers: Vec<LayerWeights>,
        erase: ConceptMatrix,
        anchor: ConceptMatrix,
        retain: ConceptMatrix,
        invariants: ConceptMatrix,
        hp: Hyperparams,
    ) -> Result<Self> {
        if erase.is_empty() {
            return Err(Error::InvalidParameter {
                name: "erase",
                reason: "at least one target concept is required".into(),
            });
        }
        if anchor.len() != erase.len() {
            return Err(Error::DimensionMismatch {
                context: "anchor count (N_E) versus erase count",
                expected: erase.len(),
                found: anchor.len(),
            });
        }
        let d0 = erase.d0();
        for m in [&anchor, &retain, &invariants] {
            if m.d0() != d0 {
                return Err(Error::DimensionMismatch {
                    context: dim_context(m.role()),
                    expected: d0,
                    found: m.d0(),
                });
            }
        }
        for layer in &layers {
            if layer.d0() != d0 {
                return Err(Error::DimensionMismatch {
                    context: "layer weight columns (d0)",
                    expected: d0,
                    found: layer.d0(),
                });
            }
        }
        hp.validate()?;
        Ok(Self {
            layers,
            erase,
            anchor,
            retain,
            invariants,
            hp,
        })
    }

    pub fn d0(&self) -> usize {
        self.erase.d0()
    }

    pub fn n_erase(&self) -> usize {
        self.erase.len()
    }

    pub fn n_retain(&self) -> usize {
        self.retain.len()
    }
}

fn dim_context(role: ConceptRole) -> &'static str {
    match role {
        ConceptRole::Erase => "erase rows (d0)",
        ConceptRole::Anchor => "anchor rows (d0)",
        ConceptRole::Retain => "retain rows (d0)",
        ConceptRole::Invariant => "invariant rows (d0)",
    }
}

//! Retain-set refinement: influence-based filtering (IPF), directed
//! augmentation (DPA) and invariant assembly.

use alloc::vec::Vec;

use faer::{Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, Projector};
use crate::solvers::{solve_erase_only, EditDelta};
use crate::task::{ConceptMatrix, ConceptRole, Hyperparams, LayerWeights};

/// Where a retained column came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Column index in the original retain set.
    Original(usize),
    /// Draw `draw` around the original retain column `parent`.
    Augmented { parent: usize, draw: usize },
}

impl Provenance {
    /// Index of the original retain column this one descends from.
    pub fn root(self) -> usize {
        match self {
            Provenance::Original(i) => i,
            Provenance::Augmented { parent, .. } => parent,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetainSet {
    concepts: ConceptMatrix,
    provenance: Vec<Provenance>,
}

impl RetainSet {
    /// Wraps an original retain matrix; column `j` gets `Original(j)`.
    pub fn from_original(concepts: ConceptMatrix) -> Self {
        let provenance = (0..concepts.len()).map(Provenance::Original).collect();
        let concepts = if concepts.role() == ConceptRole::Retain {
            concepts
        } else {
            ConceptMatrix::new(ConceptRole::Retain, concepts.into_inner()).expect("finite by construction")
        };
        Self { concepts, provenance }
    }

    fn from_parts(data: Mat<f64>, provenance: Vec<Provenance>) -> Result<Self> {
        debug_assert_eq!(data.ncols(), provenance.len());
        Ok(Self {
            concepts: ConceptMatrix::new(ConceptRole::Retain, data)?,
            provenance,
        })
    }

    pub fn concepts(&self) -> &ConceptMatrix {
        &self.concepts
    }

    pub fn into_concepts(self) -> ConceptMatrix {
        self.concepts
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn d0(&self) -> usize {
        self.concepts.d0()
    }

    fn select(&self, keep: &[usize]) -> Result<Self> {
        let src = self.concepts.as_ref();
        let data = Mat::from_fn(self.d0(), keep.len(), |i, j| src[(i, keep[j])]);
        Self::from_parts(data, keep.iter().map(|&k| self.provenance[k]).collect())
    }

    /// Columns of `self` followed by the columns of `other`.
    pub fn union(&self, other: &RetainSet) -> Result<Self> {
        if other.d0() != self.d0() {
            return Err(Error::DimensionMismatch {
                context: "retain set union (d0)",
                expected: self.d0(),
                found: other.d0(),
            });
        }
        let (a, b) = (self.concepts.as_ref(), other.concepts.as_ref());
        let n = self.len();
        let data = Mat::from_fn(self.d0(), n + other.len(), |i, j| {
            if j < n {
                a[(i, j)]
            } else {
                b[(i, j - n)]
            }
        });
        let mut provenance = self.provenance.clone();
        provenance.extend_from_slice(&other.provenance);
        Self::from_parts(data, provenance)
    }
}

/// Outcome of one filtering pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftReport {
    /// Prior shift `‖Δ_erase·c0‖²` of every input column.
    pub shifts: Vec<f64>,
    /// Mean of `shifts` (0 for an empty input).
    pub mu: f64,
    /// `filter_scale · mu`; kept columns are strictly above it.
    pub threshold: f64,
    /// Input positions that survived, in input order.
    pub kept_indices: Vec<usize>,
}

/// Keeps the retained concepts whose prior shift under `delta_erase` is
/// strictly greater than `filter_scale` times the mean shift.
pub fn ipf_filter(r: &RetainSet, delta_erase: &EditDelta, filter_scale: f64) -> Result<(RetainSet, ShiftReport)> {
    linalg::check_positive("filter_scale", filter_scale)?;
    if delta_erase.delta.ncols() != r.d0() {
        return Err(Error::DimensionMismatch {
            context: "erase-only update columns versus retain d0",
            expected: r.d0(),
            found: delta_erase.delta.ncols(),
        });
    }
    let shifts = column_sq_norms((&delta_erase.delta * r.concepts.as_ref()).as_ref());
    // Running mean: exact for constant inputs, so ties stay ties.
    let mut mu = 0.0;
    for (k, s) in shifts.iter().enumerate() {
        mu += (s - mu) / (k + 1) as f64;
    }
    let threshold = filter_scale * mu;
    let kept_indices: Vec<usize> = shifts
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > threshold)
        .map(|(i, _)| i)
        .collect();
    let filtered = r.select(&kept_indices)?;
    Ok((
        filtered,
        ShiftReport {
            shifts,
            mu,
            threshold,
            kept_indices,
        },
    ))
}

fn column_sq_norms(m: MatRef<'_, f64>) -> Vec<f64> {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)] * m[(i, j)]).sum())
        .collect()
}

/// Draws `n_aug` perturbed copies `c0 + P_min·ε` of every column of `r`,
/// with `ε ~ N(0, I)`.
///
/// Each draw has its own ChaCha20 stream selected by `(position, draw)`
/// under a key derived from `seed`, so results do not depend on evaluation
/// order. Output columns are parent-major.
pub fn dpa_augment(r: &RetainSet, p_min: &Projector, n_aug: usize, seed: u64) -> Result<RetainSet> {
    if !p_min.is_least_variation() {
        return Err(Error::InvalidParameter {
            name: "projector",
            reason: "augmentation needs a least-variation projector".into(),
        });
    }
    let d0 = r.d0();
    if p_min.dim() != d0 {
        return Err(Error::DimensionMismatch {
            context: "least-variation projector versus retain d0",
            expected: d0,
            found: p_min.dim(),
        });
    }
    let total = r.len() * n_aug;
    let src = r.concepts.as_ref();
    let pm = p_min.matrix();
    let mut data = Mat::<f64>::zeros(d0, total);
    let mut provenance = Vec::with_capacity(total);
    let base = ChaCha20Rng::seed_from_u64(seed);
    let mut eps = Mat::<f64>::zeros(d0, 1);
    for parent in 0..r.len() {
        for draw in 0..n_aug {
            let mut rng = base.clone();
            rng.set_stream(stream_id(parent, draw));
            for i in 0..d0 {
                eps[(i, 0)] = rng.sample(StandardNormal);
            }
            let directed = pm * eps.as_ref();
            let col = parent * n_aug + draw;
            for i in 0..d0 {
                data[(i, col)] = src[(i, parent)] + directed[(i, 0)];
            }
            provenance.push(Provenance::Augmented {
                parent: r.provenance[parent].root(),
                draw,
            });
        }
    }
    RetainSet::from_parts(data, provenance)
}

fn stream_id(parent: usize, draw: usize) -> u64 {
    assert!(parent < (1 << 32) && draw < (1 << 32), "augmentation index overflow");
    ((parent as u64) << 32) | draw as u64
}

/// Invariant embeddings stacked as columns.
#[derive(Debug, Clone)]
pub struct Invariants {
    pub matrix: ConceptMatrix,
    /// Set when the two inputs were (near-)parallel and collapsed to one column.
    pub collapsed: bool,
}

/// Stacks the start-of-text and null-text embeddings into `C2`. Vectors with
/// cosine similarity above `1 − 1e-9` are collapsed to a single column.
pub fn build_invariants(sot: &[f64], null_text: &[f64]) -> Result<Invariants> {
    if sot.len() != null_text.len() {
        return Err(Error::DimensionMismatch {
            context: "invariant embedding lengths",
            expected: sot.len(),
            found: null_text.len(),
        });
    }
    let d0 = sot.len();
    let dot: f64 = sot.iter().zip(null_text).map(|(a, b)| a * b).sum();
    let na = libm::sqrt(sot.iter().map(|a| a * a).sum::<f64>());
    let nb = libm::sqrt(null_text.iter().map(|b| b * b).sum::<f64>());
    let duplicate = if na == 0.0 || nb == 0.0 {
        na == nb
    } else {
        dot / (na * nb) > 1.0 - 1e-9
    };
    if duplicate {
        log::warn!("start-of-text and null-text embeddings coincide; keeping one invariant column");
        let matrix = ConceptMatrix::from_columns(ConceptRole::Invariant, d0, &[sot.to_vec()])?;
        return Ok(Invariants {
            matrix,
            collapsed: true,
        });
    }
    let matrix = ConceptMatrix::from_columns(ConceptRole::Invariant, d0, &[sot.to_vec(), null_text.to_vec()])?;
    Ok(Invariants {
        matrix,
        collapsed: false,
    })
}

/// Everything produced while refining one layer's retain set.
#[derive(Debug, Clone)]
pub struct Refinement {
    /// `R_f ∪ (R_f)ᵃᵘᵍ_f`, filtered originals first.
    pub retain: RetainSet,
    pub erase_delta: EditDelta,
    /// Filtering of the original retain set.
    pub filtered: ShiftReport,
    /// Filtering of the augmented set (mean recomputed on augmented shifts).
    pub augmented: ShiftReport,
}

/// Filters `r` by prior shift under the erase-only update for `layer`,
/// augments the survivors along the least-variation directions of the
/// layer weights, filters the augmentations and returns the union.
pub fn refine_pipeline(
    r: &RetainSet,
    layer: &LayerWeights,
    erase: &ConceptMatrix,
    anchor: &ConceptMatrix,
    hp: &Hyperparams,
) -> Result<Refinement> {
    let erase_delta = solve_erase_only(layer, erase, anchor, None)?;
    let (kept, filtered) = ipf_filter(r, &erase_delta, hp.filter_scale)?;
    let (kept_aug, augmented) = if hp.n_aug == 0 || kept.is_empty() {
        let empty = ShiftReport {
            shifts: Vec::new(),
            mu: 0.0,
            threshold: 0.0,
            kept_indices: Vec::new(),
        };
        (kept.select(&[])?, empty)
    } else {
        let p_min = linalg::least_variation_projector(layer.weights(), hp.r)?;
        let aug = dpa_augment(&kept, &p_min, hp.n_aug, hp.seed)?;
        ipf_filter(&aug, &erase_delta, hp.filter_scale)?
    };
    Ok(Refinement {
        retain: kept.union(&kept_aug)?,
        erase_delta,
        filtered,
        augmented,
    })
}

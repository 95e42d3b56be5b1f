//! Seeded synthetic edit jobs.

use alloc::string::String;
use alloc::vec::Vec;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::task::{ConceptMatrix, ConceptRole, EraseTask, Hyperparams, LayerWeights};

/// Shape of a synthetic job. Layer `i` has `layer_dims[i]` output rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub d0: usize,
    pub layer_dims: Vec<usize>,
    pub n_erase: usize,
    pub n_retain: usize,
    pub n_invariants: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `n_layers` layers of `d_v × d0` weights and no invariants.
    pub fn uniform(d0: usize, d_v: usize, n_layers: usize, n_erase: usize, n_retain: usize, seed: u64) -> Self {
        Self {
            d0,
            layer_dims: alloc::vec![d_v; n_layers],
            n_erase,
            n_retain,
            n_invariants: 0,
            seed,
        }
    }

    pub fn with_invariants(mut self, n: usize) -> Self {
        self.n_invariants = n;
        self
    }
}

/// Builds a job with Gaussian weights (entries `N(0, 1/d0)`) and
/// unit-normalised Gaussian concept columns. Anchors are drawn independently
/// of the targets. Draw order is fixed (layers, erase, anchor, retain,
/// invariants), so the same spec always yields the same task.
pub fn gen_synthetic_task(spec: &SyntheticSpec, hp: Hyperparams) -> Result<EraseTask> {
    if spec.d0 == 0 || spec.n_erase == 0 || spec.layer_dims.is_empty() {
        return Err(Error::InvalidParameter {
            name: "synthetic spec",
            reason: "d0, n_erase and the layer count must be at least 1".into(),
        });
    }
    if spec.layer_dims.contains(&0) {
        return Err(Error::InvalidParameter {
            name: "synthetic spec",
            reason: "every layer needs at least one output row".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d0 = spec.d0;
    let scale = 1.0 / libm::sqrt(d0 as f64);
    let mut layers = Vec::with_capacity(spec.layer_dims.len());
    for (i, &d_v) in spec.layer_dims.iter().enumerate() {
        let w = Mat::from_fn(d_v, d0, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        layers.push(LayerWeights::new(layer_name(i), w)?);
    }
    let erase = unit_columns(&mut rng, ConceptRole::Erase, d0, spec.n_erase)?;
    let anchor = unit_columns(&mut rng, ConceptRole::Anchor, d0, spec.n_erase)?;
    let retain = unit_columns(&mut rng, ConceptRole::Retain, d0, spec.n_retain)?;
    let invariants = unit_columns(&mut rng, ConceptRole::Invariant, d0, spec.n_invariants)?;
    let hp = Hyperparams { seed: spec.seed, ..hp };
    EraseTask::new(layers, erase, anchor, retain, invariants, hp)
}

fn layer_name(i: usize) -> String {
    alloc::format!("layer{i:02}")
}

fn unit_columns(rng: &mut ChaCha8Rng, role: ConceptRole, d0: usize, n: usize) -> Result<ConceptMatrix> {
    let mut m = Mat::<f64>::zeros(d0, n);
    for j in 0..n {
        let mut norm = 0.0;
        while norm == 0.0 {
            for i in 0..d0 {
                m[(i, j)] = rng.sample(StandardNormal);
            }
            norm = libm::sqrt((0..d0).map(|i| m[(i, j)] * m[(i, j)]).sum::<f64>());
        }
        for i in 0..d0 {
            m[(i, j)] /= norm;
        }
    }
    ConceptMatrix::new(role, m)
}

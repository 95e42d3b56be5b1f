//! JSON task manifests.
//!
//! ```json
//! {
//!   "layers": [{ "id": "down.0.attn2.to_v", "weights": "w/down0.npy" }],
//!   "erase": "c1.npy",
//!   "anchor": "c_star.npy",
//!   "retain": "c0.npy",
//!   "invariants": "c2.npy",
//!   "hyperparams": { "svd_tol": 1e-4, "n_aug": 10 },
//!   "seed": 0
//! }
//! ```
//!
//! Paths are resolved against the manifest's directory. `invariants` may be
//! omitted, which yields a zero-column invariant matrix. Unknown keys at any
//! level are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use nse_core::{ConceptMatrix, ConceptRole, EraseTask, Hyperparams, LayerWeights};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::npy::{self, Dtype, MatrixRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub id: String,
    pub weights: PathBuf,
}

/// Hyperparameter block. Every key is optional and falls back to the
/// engine defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperparamBlock {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_reg: f64,
    pub svd_tol: f64,
    pub r: usize,
    pub n_aug: usize,
    pub filter_scale: f64,
    pub lambda_inv: f64,
    pub approx_null: Option<usize>,
}

impl Default for HyperparamBlock {
    fn default() -> Self {
        Self::from(&Hyperparams::default())
    }
}

impl From<&Hyperparams> for HyperparamBlock {
    fn from(hp: &Hyperparams) -> Self {
        Self {
            alpha: hp.alpha,
            beta: hp.beta,
            lambda_reg: hp.lambda_reg,
            svd_tol: hp.svd_tol,
            r: hp.r,
            n_aug: hp.n_aug,
            filter_scale: hp.filter_scale,
            lambda_inv: hp.lambda_inv,
            approx_null: hp.approx_null,
        }
    }
}

impl HyperparamBlock {
    pub fn to_hyperparams(&self, seed: u64) -> Hyperparams {
        Hyperparams {
            alpha: self.alpha,
            beta: self.beta,
            lambda_reg: self.lambda_reg,
            svd_tol: self.svd_tol,
            r: self.r,
            n_aug: self.n_aug,
            filter_scale: self.filter_scale,
            lambda_inv: self.lambda_inv,
            approx_null: self.approx_null,
            seed,
        }
    }

    /// Applies a `key=value` override. The value is parsed as JSON, so
    /// `approx_null=null` clears the option.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Argument(format!("expected key=value, got `{assignment}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let mut map = match serde_json::to_value(&*self).expect("block serializes") {
            serde_json::Value::Object(m) => m,
            _ => unreachable!("block serializes to an object"),
        };
        if !map.contains_key(key) {
            let known: Vec<&str> = map.keys().map(String::as_str).collect();
            return Err(CliError::Argument(format!(
                "unknown hyperparameter `{key}` (known: {})",
                known.join(", ")
            )));
        }
        let parsed: serde_json::Value = serde_json::from_str(value)
            .map_err(|e| CliError::Argument(format!("`{key}`: cannot parse `{value}`: {e}")))?;
        map.insert(key.to_owned(), parsed);
        *self = serde_json::from_value(serde_json::Value::Object(map))
            .map_err(|e| CliError::Argument(format!("`{key}`: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskManifest {
    pub layers: Vec<LayerEntry>,
    pub erase: PathBuf,
    pub anchor: PathBuf,
    pub retain: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invariants: Option<PathBuf>,
    pub hyperparams: HyperparamBlock,
    pub seed: u64,
}

impl TaskManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}

/// A validated task plus the on-disk dtype of each layer's weights.
#[derive(Debug, Clone)]
pub struct LoadedTask {
    pub task: EraseTask,
    pub layer_dtypes: Vec<Dtype>,
    pub manifest: TaskManifest,
}

/// Reads a manifest and every matrix it names.
pub fn load_task(path: impl AsRef<Path>) -> Result<LoadedTask> {
    let path = path.as_ref();
    let manifest = TaskManifest::read(path)?;
    load_manifest(manifest, path)
}

/// Builds a task from an already-parsed manifest located at `path`.
pub fn load_manifest(manifest: TaskManifest, path: &Path) -> Result<LoadedTask> {
    let base = path.parent().unwrap_or(Path::new("."));
    let invalid = |message: String| CliError::Manifest {
        path: path.to_path_buf(),
        message,
    };
    if manifest.layers.is_empty() {
        return Err(invalid("`layers` must list at least one layer".into()));
    }

    let concepts = |role: ConceptRole, file: &Path| -> Result<ConceptMatrix> {
        let rec = npy::read_matrix(base.join(file))?;
        ConceptMatrix::new(role, rec.to_mat())
            .map_err(|e| invalid(format!("{} matrix `{}`: {e}", role.name(), file.display())))
    };
    let erase = concepts(ConceptRole::Erase, &manifest.erase)?;
    let anchor = concepts(ConceptRole::Anchor, &manifest.anchor)?;
    let retain = concepts(ConceptRole::Retain, &manifest.retain)?;
    let invariants = match &manifest.invariants {
        Some(file) => concepts(ConceptRole::Invariant, file)?,
        None => ConceptMatrix::empty(ConceptRole::Invariant, erase.d0()),
    };

    let mut layers = Vec::with_capacity(manifest.layers.len());
    let mut layer_dtypes = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        let rec = npy::read_matrix(base.join(&entry.weights))?;
        layer_dtypes.push(rec.dtype());
        let layer = LayerWeights::new(entry.id.clone(), rec.to_mat())
            .map_err(|e| invalid(format!("layer `{}`: {e}", entry.id)))?;
        layer.check_full_rank().map_err(|e| CliError::Layer {
            layer: entry.id.clone(),
            source: e,
        })?;
        layers.push(layer);
    }

    let hp = manifest.hyperparams.to_hyperparams(manifest.seed);
    let task = EraseTask::new(layers, erase, anchor, retain, invariants, hp).map_err(|e| invalid(e.to_string()))?;
    Ok(LoadedTask {
        task,
        layer_dtypes,
        manifest,
    })
}

/// Writes `task` as NPY files plus `manifest.json` under `dir` and returns
/// the manifest path.
pub fn save_task(task: &EraseTask, dir: impl AsRef<Path>, dtype: Dtype) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let put = |name: &str, m: faer::MatRef<'_, f64>| -> Result<PathBuf> {
        let file = PathBuf::from(format!("{name}.npy"));
        npy::write_matrix(&MatrixRecord::from_mat(name, m, dtype), dir.join(&file))?;
        Ok(file)
    };
    let mut layers = Vec::with_capacity(task.layers.len());
    for layer in &task.layers {
        let file = put(&format!("w_{}", sanitize(&layer.id)), layer.weights())?;
        layers.push(LayerEntry {
            id: layer.id.clone(),
            weights: file,
        });
    }
    let invariants = if task.invariants.is_empty() {
        None
    } else {
        Some(put("invariants", task.invariants.as_ref())?)
    };
    let manifest = TaskManifest {
        layers,
        erase: put("erase", task.erase.as_ref())?,
        anchor: put("anchor", task.anchor.as_ref())?,
        retain: put("retain", task.retain.as_ref())?,
        invariants,
        hyperparams: HyperparamBlock::from(&task.hp),
        seed: task.hp.seed,
    };
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}

/// File-name-safe form of a layer id.
pub fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

//! On-disk formats and run configuration.
//!
//! Every artifact is a raw little-endian `f32` payload with a JSON sidecar
//! that records dimensions, the format version and the hash of the run
//! configuration that produced it. Files are written to a temporary name
//! and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fdtd::{ScanConfig, SolverConfig};
use crate::network::{Model, NetworkConfig};
use crate::optim::ParameterStore;
use crate::scene::SceneConfig;
use crate::tensor::Tensor;
use crate::training::{NormalizationStats, TrainReport};

pub const FORMAT_VERSION: u32 = 1;

/// Optimiser and data-split settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lr: f64,
    pub finetune_lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Records at the end of a dataset held out for testing.
    pub test_records: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            finetune_lr: 1e-4,
            batch: 4,
            epochs: 50,
            seed: 0,
            test_records: 8,
        }
    }
}

/// Everything that shapes a run. Missing keys take defaults, unknown keys
/// are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub solver: SolverConfig,
    pub scan: ScanConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.network.validate()?;
        let t = &self.training;
        if !(t.lr >= 0.0 && t.lr.is_finite()) || !(t.finetune_lr >= 0.0 && t.finetune_lr.is_finite()) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if t.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Writes `bytes` beside `path` and renames the result over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("metadata serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })
}

pub fn f32_to_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_to_f32(bytes: &[u8], path: &Path) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(corrupt(path, format!("{} bytes is not a whole number of f32 values", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Reads exactly `expected` values or fails with a corrupt-file error.
pub fn read_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let values = bytes_to_f32(&bytes, path)?;
    if values.len() != expected {
        return Err(corrupt(path, format!("holds {} values, expected {expected}", values.len())));
    }
    Ok(values)
}

pub(crate) fn corrupt(path: &Path, detail: impl Into<String>) -> Error {
    Error::Corrupt {
        path: path.to_owned(),
        detail: detail.into(),
    }
}

fn check_version(path: &Path, kind: &str, found_kind: &str, version: u32) -> Result<()> {
    if found_kind != kind {
        return Err(corrupt(path, format!("expected a {kind} file, found {found_kind}")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            path: path.to_owned(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------- B-scans

/// Sidecar of a raw B-scan image: rows are time samples, columns traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BScanMeta {
    pub format_version: u32,
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    /// Time between rows (s).
    pub row_interval: f64,
    pub config_hash: String,
}

impl BScanMeta {
    pub fn new(rows: usize, cols: usize, row_interval: f64, config_hash: String) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: "bscan".into(),
            rows,
            cols,
            dtype: "f32le".into(),
            row_interval,
            config_hash,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_bscan(path: &Path, data: &[f32], meta: &BScanMeta) -> Result<()> {
    if data.len() != meta.rows * meta.cols {
        return Err(Error::shape("write_bscan", format!("{} values for {}×{}", data.len(), meta.rows, meta.cols)));
    }
    write_atomic(path, &f32_to_bytes(data))?;
    write_json(&sidecar_path(path), meta)
}

pub fn read_bscan(path: &Path) -> Result<(BScanMeta, Vec<f32>)> {
    let side = sidecar_path(path);
    let meta: BScanMeta = read_json(&side)?;
    check_version(&side, "bscan", &meta.kind, meta.format_version)?;
    let data = read_f32(path, meta.rows * meta.cols)?;
    Ok((meta, data))
}

/// Binary PGM of a `rows × cols` image with `[-M, M]` mapped linearly onto
/// `[0, 255]`, `M` the largest magnitude. An all-zero image is mid-gray.
pub fn render_pgm(data: &[f32], rows: usize, cols: usize) -> Vec<u8> {
    let m = data.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(data.iter().map(|&v| {
        if m == 0.0 {
            127
        } else {
            ((v as f64 + m) / (2.0 * m) * 255.0).floor().clamp(0.0, 255.0) as u8
        }
    }));
    out
}

// ------------------------------------------------------------ checkpoints

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorRole {
    Value,
    /// Adam first moment.
    M,
    /// Adam second moment.
    V,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
    /// Byte offset into `weights.bin`.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub stats: NormalizationStats,
    /// Learning rate of the original training run; fine-tuning must go lower.
    pub pretrain_lr: f64,
    pub adam_step: u64,
    pub report: Option<TrainReport>,
    pub tensors: Vec<TensorEntry>,
}

/// A trained model with everything needed to use or continue it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub stats: NormalizationStats,
    pub config: RunConfig,
    pub pretrain_lr: f64,
    pub report: Option<TrainReport>,
}

pub const MODEL_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tensors = Vec::new();
        let mut blob = Vec::new();
        for (name, p) in self.model.params.iter() {
            for (role, t) in [(TensorRole::Value, &p.value), (TensorRole::M, &p.m), (TensorRole::V, &p.v)] {
                tensors.push(TensorEntry {
                    name: name.to_owned(),
                    role,
                    shape: t.shape().to_vec(),
                    offset: blob.len(),
                    len: t.len(),
                });
                blob.extend(f32_to_bytes(t.data()));
            }
        }
        let mut config = self.config.clone();
        config.network = self.model.config.clone();
        let manifest = CheckpointManifest {
            format_version: FORMAT_VERSION,
            kind: "checkpoint".into(),
            config_hash: config.hash(),
            config,
            stats: self.stats,
            pretrain_lr: self.pretrain_lr,
            adam_step: self.model.params.step_count(),
            report: self.report.clone(),
            tensors,
        };
        write_atomic(&dir.join(WEIGHTS_FILE), &blob)?;
        write_json(&dir.join(MODEL_FILE), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MODEL_FILE);
        let manifest: CheckpointManifest = read_json(&manifest_path)?;
        check_version(&manifest_path, "checkpoint", &manifest.kind, manifest.format_version)?;
        let weights_path = dir.join(WEIGHTS_FILE);
        let bytes = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
        let expected: usize = manifest.tensors.iter().map(|t| t.len * 4).sum();
        if bytes.len() != expected {
            return Err(corrupt(&weights_path, format!("{} bytes, manifest describes {expected}", bytes.len())));
        }
        let mut model = Model::<f32>::build(manifest.config.network.clone(), 0)?;
        let mut seen = vec![[false; 3]; model.params.len()];
        for entry in &manifest.tensors {
            let end = entry.offset + entry.len * 4;
            if end > bytes.len() || entry.shape.iter().product::<usize>() != entry.len {
                return Err(corrupt(&weights_path, format!("entry `{}` is out of range", entry.name)));
            }
            let index = model
                .params
                .index_of(&entry.name)
                .ok_or_else(|| corrupt(&manifest_path, format!("unknown tensor `{}`", entry.name)))?;
            let data = bytes_to_f32(&bytes[entry.offset..end], &weights_path)?;
            let tensor = Tensor::new(entry.shape.clone(), data)?;
            let p = model.params.get_mut(&entry.name).expect("index found");
            if p.value.shape() != tensor.shape() {
                return Err(corrupt(&manifest_path, format!("tensor `{}` has shape {:?}", entry.name, tensor.shape())));
            }
            let slot = match entry.role {
                TensorRole::Value => 0,
                TensorRole::M => 1,
                TensorRole::V => 2,
            };
            match entry.role {
                TensorRole::Value => p.value = tensor,
                TensorRole::M => p.m = tensor,
                TensorRole::V => p.v = tensor,
            }
            seen[index][slot] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s.iter().all(|&x| x)) {
            let name = model.params.iter().nth(i).map(|(n, _)| n.to_owned()).unwrap_or_default();
            return Err(corrupt(&manifest_path, format!("tensor `{name}` is missing")));
        }
        model.params.set_step_count(manifest.adam_step);
        Ok(Self {
            model,
            stats: manifest.stats,
            config: manifest.config,
            pretrain_lr: manifest.pretrain_lr,
            report: manifest.report,
        })
    }
}

/// Every scalar of a parameter store, values then moments, in store order.
pub fn store_fingerprint(store: &ParameterStore<f32>) -> Vec<u32> {
    store
        .iter()
        .flat_map(|(_, p)| [&p.value, &p.m, &p.v])
        .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[cfg(test)]
mod tests;

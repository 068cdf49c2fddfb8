use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RecordDims;
use crate::error::{Error, Result};
use crate::fdtd::{run_bscan, BScan};
use crate::io::{self, RunConfig, FORMAT_VERSION};
use crate::scene::{freeform_maps, rasterize, sample_scene, MaterialMaps};

/// Generation attempts per record before giving up on a diverging scene.
pub const MAX_ATTEMPTS: u32 = 4;

const META_FILE: &str = "meta.json";

/// Which soil distribution each record uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoilChoice {
    /// Record `k` uses distribution `k mod n` over the configured ones.
    Cycle,
    /// Every record uses this distribution; index `n` is the held-out one.
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectSource {
    /// One of the six generator shapes.
    Regular,
    /// Irregular convex polygons the generator never draws.
    Freeform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenerateOptions {
    pub count: usize,
    pub master_seed: u64,
    pub soil: SoilChoice,
    pub objects: ObjectSource,
}

impl GenerateOptions {
    pub fn new(count: usize, master_seed: u64) -> Self {
        Self {
            count,
            master_seed,
            soil: SoilChoice::Cycle,
            objects: ObjectSource::Regular,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: usize,
    /// Scene seed actually used (after any regeneration).
    pub scene_seed: u64,
    pub soil_distribution_id: usize,
    /// 1 unless earlier attempts diverged.
    pub attempts: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub master_seed: u64,
    pub soil: SoilChoice,
    pub objects: ObjectSource,
    pub dims: RecordDims,
    pub dtype: String,
    /// Time between B-scan rows (s).
    pub dt: f64,
    /// Modelling choices the data depends on, for readers of the dataset.
    pub decisions: BTreeMap<String, String>,
    pub records: Vec<RecordMeta>,
}

/// Maps as `[depth, x]` images and the B-scan as a `[time, trace]` image,
/// all row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub id: usize,
    pub eps: Vec<f32>,
    pub sigma: Vec<f32>,
    pub bscan: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<DatasetRecord>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GenerationSummary {
    pub generated: usize,
    pub skipped: usize,
    /// Records that needed more than one attempt.
    pub regenerated: usize,
}

/// Seed of record `id` on attempt `attempt`, derived by hashing.
pub fn record_seed(master_seed: u64, id: usize, attempt: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(b"gpr-record");
    h.update(master_seed.to_le_bytes());
    h.update((id as u64).to_le_bytes());
    h.update(attempt.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

fn record_paths(dir: &Path, id: usize) -> [PathBuf; 3] {
    ["eps", "sig", "bscan"].map(|k| dir.join(format!("{id}.{k}.f32")))
}

/// x-major `nx × ny` values as a `[ny, nx]` row-major image.
pub fn map_image(values: &[f64], nx: usize, ny: usize) -> Vec<f32> {
    (0..ny)
        .flat_map(|j| (0..nx).map(move |i| values[i * ny + j] as f32))
        .collect()
}

/// Trace-major B-scan as a `[samples, traces]` image.
pub fn bscan_image(b: &BScan) -> Vec<f32> {
    (0..b.samples)
        .flat_map(|k| (0..b.traces).map(move |t| b.data[t * b.samples + k] as f32))
        .collect()
}

fn soil_for(soil: SoilChoice, config: &RunConfig, id: usize) -> usize {
    match soil {
        SoilChoice::Cycle => id % config.scene.soil_seeds.len(),
        SoilChoice::Fixed(k) => k,
    }
}

fn maps_for(objects: ObjectSource, config: &RunConfig, seed: u64, soil: usize) -> Result<MaterialMaps> {
    match objects {
        ObjectSource::Regular => rasterize(&sample_scene(&config.scene, seed, soil)?, &config.scene),
        ObjectSource::Freeform => freeform_maps(&config.scene, seed, soil),
    }
}

/// Material maps of a stored record, rebuilt from its metadata.
pub fn record_maps(meta: &DatasetMeta, rec: &RecordMeta) -> Result<MaterialMaps> {
    maps_for(meta.objects, &meta.config, rec.scene_seed, rec.soil_distribution_id)
}

/// Re-runs the simulation of a stored record; the result matches the
/// stored B-scan bit for bit.
pub fn replay_record(meta: &DatasetMeta, rec: &RecordMeta) -> Result<Vec<f32>> {
    let maps = record_maps(meta, rec)?;
    Ok(bscan_image(&run_bscan(&maps.grid, &meta.config.solver, &meta.config.scan)?))
}

fn decisions(config: &RunConfig) -> BTreeMap<String, String> {
    let w = &config.scan.waveform;
    [
        ("boundary", format!("{}-cell CPML outside the physical domain", config.solver.pml_cells)),
        ("source", "soft Ez line source, current sampled at half steps".to_string()),
        ("waveform", format!("{:?} pulse, fc = {} Hz, delay 1/fc", w.kind, w.center_frequency)),
        ("antenna_height_cells", config.scan.antenna_height_cells.to_string()),
        ("air_fraction", config.scene.air_fraction.to_string()),
        ("dispersion", "one Debye pole per material, ADE update".to_string()),
        ("time_step", format!("Courant safety {} shortened to divide the window", config.solver.courant_safety)),
        ("layout", "maps rows = depth, cols = x; bscan rows = time, cols = trace".to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Simulates `options.count` records into `dir`. Records already on disk
/// are kept, so an interrupted run can be resumed with the same arguments.
pub fn generate_dataset(dir: &Path, config: &RunConfig, options: GenerateOptions) -> Result<GenerationSummary> {
    config.validate()?;
    if let SoilChoice::Fixed(k) = options.soil {
        config.scene.soil_seed(k)?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta_path = dir.join(META_FILE);
    let (dt, samples) = config
        .solver
        .time_step(config.scene.cell, config.scene.cell, config.scan.time_window)?;
    let fresh = DatasetMeta {
        format_version: FORMAT_VERSION,
        kind: "dataset".into(),
        config_hash: config.hash(),
        config: config.clone(),
        master_seed: options.master_seed,
        soil: options.soil,
        objects: options.objects,
        dims: RecordDims {
            map: [config.scene.ny, config.scene.nx],
            bscan: [samples, config.scan.trace_count],
        },
        dtype: "f32le".into(),
        dt,
        decisions: decisions(config),
        records: Vec::new(),
    };
    let mut meta = if meta_path.exists() {
        let old: DatasetMeta = io::read_json(&meta_path)?;
        let same = DatasetMeta {
            records: Vec::new(),
            ..old.clone()
        };
        if same != fresh {
            return Err(Error::Config(format!(
                "{} holds a dataset generated with different settings",
                dir.display()
            )));
        }
        old
    } else {
        fresh
    };
    let mut summary = GenerationSummary::default();
    for id in 0..options.count {
        let paths = record_paths(dir, id);
        if meta.records.iter().any(|r| r.id == id) && paths.iter().all(|p| p.exists()) {
            summary.skipped += 1;
            continue;
        }
        let soil = soil_for(options.soil, config, id);
        let mut attempt = 0;
        let (rec, maps, bscan) = loop {
            let seed = record_seed(options.master_seed, id, attempt);
            let maps = maps_for(options.objects, config, seed, soil)?;
            match run_bscan(&maps.grid, &config.solver, &config.scan) {
                Ok(b) => {
                    let rec = RecordMeta {
                        id,
                        scene_seed: seed,
                        soil_distribution_id: soil,
                        attempts: attempt + 1,
                    };
                    break (rec, maps, b);
                }
                Err(Error::Diverged { step }) if attempt + 1 < MAX_ATTEMPTS => {
                    log::warn!("record {id} diverged at step {step}; regenerating");
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        if attempt > 0 {
            summary.regenerated += 1;
        }
        let [eps_path, sig_path, bscan_path] = &paths;
        io::write_atomic(eps_path, &io::f32_to_bytes(&map_image(&maps.eps_r, maps.nx, maps.ny)))?;
        io::write_atomic(sig_path, &io::f32_to_bytes(&map_image(&maps.sigma, maps.nx, maps.ny)))?;
        io::write_atomic(bscan_path, &io::f32_to_bytes(&bscan_image(&bscan)))?;
        meta.records.retain(|r| r.id != id);
        meta.records.push(rec);
        meta.records.sort_by_key(|r| r.id);
        io::write_json(&meta_path, &meta)?;
        summary.generated += 1;
    }
    if summary.generated == 0 && !meta_path.exists() {
        io::write_json(&meta_path, &meta)?;
    }
    Ok(summary)
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let meta: DatasetMeta = io::read_json(&meta_path)?;
        if meta.kind != "dataset" {
            return Err(io::corrupt(&meta_path, format!("expected a dataset, found {}", meta.kind)));
        }
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                path: meta_path,
                found: meta.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let map_len = meta.dims.map[0] * meta.dims.map[1];
        let bscan_len = meta.dims.bscan[0] * meta.dims.bscan[1];
        let records = meta
            .records
            .iter()
            .map(|r| {
                let [e, s, b] = record_paths(dir, r.id);
                Ok(DatasetRecord {
                    id: r.id,
                    eps: io::read_f32(&e, map_len)?,
                    sigma: io::read_f32(&s, map_len)?,
                    bscan: io::read_f32(&b, bscan_len)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { meta, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Training and test records: the last `test_records` ids are held out.
    pub fn split(&self, test_records: usize) -> Result<(Vec<&DatasetRecord>, Vec<&DatasetRecord>)> {
        if test_records >= self.records.len() {
            return Err(Error::Config(format!(
                "cannot hold out {test_records} of {} records for testing",
                self.records.len()
            )));
        }
        let cut = self.records.len() - test_records;
        Ok((self.records[..cut].iter().collect(), self.records[cut..].iter().collect()))
    }

    pub fn record_meta(&self, id: usize) -> Option<&RecordMeta> {
        self.meta.records.iter().find(|r| r.id == id)
    }
}

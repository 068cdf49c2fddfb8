//! Datasets, preprocessing, training, evaluation and the comparison
//! reports built on them.

mod dataset;
mod fit;
mod report;

pub use dataset::{
    bscan_image, generate_dataset, map_image, record_maps, record_seed, replay_record, Dataset, DatasetMeta, DatasetRecord, GenerateOptions,
    GenerationSummary, ObjectSource, RecordMeta, SoilChoice, MAX_ATTEMPTS,
};
pub use fit::{
    evaluate_loss, evaluate_mre, fine_tune, fit, physical_mse, predict_physical, train, EpochLoss, Hyper, Selection,
    TrainReport,
};
pub use report::{
    ablation_report, benchmark_speedup, fdtd_scaling, forward_time, median, time_fdtd, transfer_report, AblationReport,
    AblationRow, SpeedupReport, TransferReport, TransferRow,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::MaterialMaps;

/// Bilinear resampling of a row-major `rows × cols` image with pixel
/// centres aligned (half-pixel convention) and edges clamped. Same-size
/// resampling is the identity.
pub fn resample_bilinear(src: &[f64], rows: usize, cols: usize, out_rows: usize, out_cols: usize) -> Vec<f64> {
    assert_eq!(src.len(), rows * cols, "image size");
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let (ys, xs) = (axis(rows, out_rows), axis(cols, out_cols));
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * cols + x0] * (1.0 - fx) + src[y0 * cols + x1] * fx;
            let bottom = src[y1 * cols + x0] * (1.0 - fx) + src[y1 * cols + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Scaling that maps physical inputs and targets into network space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub eps_min: f64,
    pub eps_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Largest B-scan magnitude.
    pub bscan_max_abs: f64,
}

impl NormalizationStats {
    /// Statistics over the given (training) records.
    pub fn compute<'a>(records: impl IntoIterator<Item = &'a DatasetRecord>) -> Result<Self> {
        let mut s = Self {
            eps_min: f64::INFINITY,
            eps_max: f64::NEG_INFINITY,
            sigma_min: f64::INFINITY,
            sigma_max: f64::NEG_INFINITY,
            bscan_max_abs: 0.0,
        };
        let mut any = false;
        for r in records {
            any = true;
            for &v in &r.eps {
                s.eps_min = s.eps_min.min(v as f64);
                s.eps_max = s.eps_max.max(v as f64);
            }
            for &v in &r.sigma {
                s.sigma_min = s.sigma_min.min(v as f64);
                s.sigma_max = s.sigma_max.max(v as f64);
            }
            for &v in &r.bscan {
                s.bscan_max_abs = s.bscan_max_abs.max((v as f64).abs());
            }
        }
        if !any {
            return Err(Error::Invalid("normalization needs at least one record".into()));
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && hi > lo;
        if !ok(self.eps_min, self.eps_max) {
            return Err(Error::Invalid(format!("degenerate permittivity range [{}, {}]", self.eps_min, self.eps_max)));
        }
        if !ok(self.sigma_min, self.sigma_max) {
            return Err(Error::Invalid(format!(
                "degenerate conductivity range [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.bscan_max_abs > 0.0 && self.bscan_max_abs.is_finite()) {
            return Err(Error::Invalid("B-scan amplitude scale must be positive".into()));
        }
        Ok(())
    }

    pub fn denormalize_bscan(&self, y: &[f32]) -> Vec<f64> {
        y.iter().map(|&v| v as f64 * self.bscan_max_abs).collect()
    }
}

/// One record in network space, plus its physical target for error
/// metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x_eps: Vec<f32>,
    pub x_sigma: Vec<f32>,
    pub y: Vec<f32>,
    /// Resampled B-scan in field units.
    pub target: Vec<f64>,
}

/// Image dimensions `[rows, cols]` of a map and of a B-scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordDims {
    pub map: [usize; 2],
    pub bscan: [usize; 2],
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Both maps resampled to `r × r` and min–max scaled to `[0, 1]`.
fn map_inputs(eps: &[f32], sigma: &[f32], [mr, mc]: [usize; 2], stats: &NormalizationStats, r: usize) -> (Vec<f32>, Vec<f32>) {
    let scale = |v: Vec<f64>, lo: f64, hi: f64| v.into_iter().map(|x| ((x - lo) / (hi - lo)) as f32).collect();
    (
        scale(resample_bilinear(&widen(eps), mr, mc, r, r), stats.eps_min, stats.eps_max),
        scale(resample_bilinear(&widen(sigma), mr, mc, r, r), stats.sigma_min, stats.sigma_max),
    )
}

/// Resamples maps and B-scan to `r × r` and scales them: maps to `[0, 1]`
/// by the min–max statistics, the B-scan by its global magnitude.
pub fn preprocess(record: &DatasetRecord, dims: RecordDims, stats: &NormalizationStats, r: usize) -> Result<Sample> {
    stats.validate()?;
    let [mr, mc] = dims.map;
    let [br, bc] = dims.bscan;
    if record.eps.len() != mr * mc || record.sigma.len() != mr * mc || record.bscan.len() != br * bc {
        return Err(Error::shape("preprocess", format!("record {} does not match {dims:?}", record.id)));
    }
    let (x_eps, x_sigma) = map_inputs(&record.eps, &record.sigma, dims.map, stats, r);
    let target = resample_bilinear(&widen(&record.bscan), br, bc, r, r);
    Ok(Sample {
        x_eps,
        x_sigma,
        y: target.iter().map(|&v| (v / stats.bscan_max_abs) as f32).collect(),
        target,
    })
}

/// Network inputs for a scene that has no B-scan; `y` and `target` are
/// left empty.
pub fn maps_sample(maps: &MaterialMaps, stats: &NormalizationStats, r: usize) -> Result<Sample> {
    stats.validate()?;
    let eps = map_image(&maps.eps_r, maps.nx, maps.ny);
    let sigma = map_image(&maps.sigma, maps.nx, maps.ny);
    let (x_eps, x_sigma) = map_inputs(&eps, &sigma, [maps.ny, maps.nx], stats, r);
    Ok(Sample {
        x_eps,
        x_sigma,
        y: Vec::new(),
        target: Vec::new(),
    })
}

pub fn preprocess_all(records: &[&DatasetRecord], dims: RecordDims, stats: &NormalizationStats, r: usize) -> Result<Vec<Sample>> {
    records.iter().map(|rec| preprocess(rec, dims, stats, r)).collect()
}

/// Mean relative error and how many records contributed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MreReport {
    pub mre: f64,
    pub counted: usize,
    /// Records skipped because their target has zero norm.
    pub excluded: usize,
}

/// `(1/N) Σ ‖y − ŷ‖ / ‖ŷ‖` with Euclidean norms over every element of a
/// B-scan; `pairs` yields `(prediction, target)`.
pub fn mean_relative_error<'a>(pairs: impl IntoIterator<Item = (&'a [f64], &'a [f64])>) -> Result<MreReport> {
    let (mut sum, mut counted, mut excluded) = (0.0, 0, 0);
    for (pred, target) in pairs {
        if pred.len() != target.len() {
            return Err(Error::shape("mre", format!("{} vs {} values", pred.len(), target.len())));
        }
        let norm = target.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            excluded += 1;
            continue;
        }
        let diff = pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        sum += diff / norm;
        counted += 1;
    }
    if excluded > 0 {
        log::warn!("{excluded} record(s) with an all-zero target excluded from the MRE");
    }
    if counted == 0 {
        return Err(Error::Invalid("no record with a non-zero target to evaluate".into()));
    }
    Ok(MreReport {
        mre: sum / counted as f64,
        counted,
        excluded,
    })
}

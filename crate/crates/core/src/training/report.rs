use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::fit::samples_of;
use super::{evaluate_mre, physical_mse, record_maps, train, fine_tune, Dataset, Hyper, NormalizationStats, Sample};
use crate::error::{Error, Result};
use crate::fdtd::{run_bscan_with, Execution, ScanConfig, SolverConfig};
use crate::io::{Checkpoint, RunConfig};
use crate::network::{Model, Variant};
use crate::parallel;
use crate::scene::MaterialMaps;
use crate::tensor::Tensor;

pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty(), "median of nothing");
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall-clock seconds of `runs` single-threaded B-scan simulations.
pub fn time_fdtd(maps: &MaterialMaps, solver: &SolverConfig, scan: &ScanConfig, runs: usize) -> Result<f64> {
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs.max(1) {
        let t = Instant::now();
        run_bscan_with(&maps.grid, solver, scan, Execution::Sequential)?;
        times.push(t.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

/// Median seconds of `runs` batch-1 forward passes after one warm-up pass.
pub fn forward_time(model: &Model<f32>, sample: &Sample, runs: usize) -> Result<f64> {
    let r = model.config.resolution;
    let x_eps = Tensor::new(vec![1, 1, r, r], sample.x_eps.clone())?;
    let x_sigma = Tensor::new(vec![1, 1, r, r], sample.x_sigma.clone())?;
    model.predict(&x_eps, &x_sigma)?;
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs.max(1) {
        let t = Instant::now();
        model.predict(&x_eps, &x_sigma)?;
        times.push(t.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub fdtd_s: f64,
    pub forward_s: f64,
    pub ratio: f64,
}

/// FDTD time over network time for the same scene, both on one thread.
/// The forward time is the median of five passes after a warm-up; the
/// FDTD time the median of `fdtd_runs` simulations.
pub fn benchmark_speedup(
    model: &Model<f32>,
    sample: &Sample,
    maps: &MaterialMaps,
    solver: &SolverConfig,
    scan: &ScanConfig,
    fdtd_runs: usize,
) -> Result<SpeedupReport> {
    parallel::with_threads(1, || {
        let fdtd_s = time_fdtd(maps, solver, scan, fdtd_runs)?;
        let forward_s = forward_time(model, sample, 5)?;
        Ok(SpeedupReport {
            fdtd_s,
            forward_s,
            ratio: fdtd_s / forward_s,
        })
    })
}

/// Single-threaded FDTD seconds for half and for all of the scan's traces.
pub fn fdtd_scaling(maps: &MaterialMaps, solver: &SolverConfig, scan: &ScanConfig, runs: usize) -> Result<(f64, f64)> {
    if scan.trace_count < 2 {
        return Err(Error::Config("scaling needs at least two traces".into()));
    }
    let half = ScanConfig {
        trace_count: scan.trace_count / 2,
        ..scan.clone()
    };
    parallel::with_threads(1, || Ok((time_fdtd(maps, solver, &half, runs)?, time_fdtd(maps, solver, scan, runs)?)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub parameters: usize,
    pub training_time_h: f64,
    pub testing_time_ms: f64,
    pub speedup: f64,
    pub mre_regular: f64,
    pub mre_generalized: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Single-threaded FDTD seconds per B-scan used for the speed-up.
    pub fdtd_s: f64,
    pub hyper: Hyper,
}

impl AblationReport {
    pub const COLUMNS: [&'static str; 6] = [
        "Parameters",
        "Training Time (h)",
        "Testing Time (ms)",
        "Speed-Up",
        "MRE Regular Data",
        "MRE Generalized Data",
    ];

    /// Tab-separated table, one header line then one line per network.
    pub fn to_table(&self) -> String {
        let mut out = format!("Networks\t{}\n", Self::COLUMNS.join("\t"));
        for r in &self.rows {
            let gen = r.mre_generalized.map_or("n/a".to_string(), |m| format!("{:.2}%", 100.0 * m));
            out.push_str(&format!(
                "({})\t{}\t{:.4}\t{:.2}\t{:.0}\t{:.2}%\t{gen}\n",
                r.variant.label(),
                r.parameters,
                r.training_time_h,
                r.testing_time_ms,
                r.speedup,
                100.0 * r.mre_regular,
            ));
        }
        out
    }
}

fn first_test(dataset: &Dataset, test_records: usize) -> Result<usize> {
    let (_, test) = dataset.split(test_records)?;
    test.first()
        .map(|r| r.id)
        .ok_or_else(|| Error::Config("ablation needs at least one test record".into()))
}

/// Trains variants i, ii and iii with identical data, seed and settings
/// and tabulates size, cost and accuracy of each. The trained checkpoints
/// are returned in the same order as the rows.
pub fn ablation_report(
    dataset: &Dataset,
    generalized: Option<&Dataset>,
    config: &RunConfig,
    hyper: &Hyper,
) -> Result<(AblationReport, Vec<Checkpoint>)> {
    let test_records = config.training.test_records;
    let probe = first_test(dataset, test_records)?;
    let rec = dataset.record_meta(probe).expect("split ids come from the metadata");
    let maps = record_maps(&dataset.meta, rec)?;
    let fdtd_s = parallel::with_threads(1, || time_fdtd(&maps, &dataset.meta.config.solver, &dataset.meta.config.scan, 3))?;
    let mut rows = Vec::new();
    let mut models = Vec::new();
    for variant in Variant::ALL {
        let mut cfg = config.clone();
        cfg.network.variant = variant;
        let (ckpt, report) = train(dataset, &cfg, hyper)?;
        let (_, test) = dataset.split(test_records)?;
        let r = cfg.network.resolution;
        let test = samples_of(&test, dataset, &ckpt.stats, r)?;
        let forward_s = parallel::with_threads(1, || forward_time(&ckpt.model, &test[0], 5))?;
        let mre_generalized = match generalized {
            Some(g) => {
                let recs: Vec<_> = g.records.iter().collect();
                let samples = samples_of(&recs, g, &ckpt.stats, r)?;
                Some(evaluate_mre(&ckpt.model, &ckpt.stats, &samples)?.mre)
            }
            None => None,
        };
        rows.push(AblationRow {
            variant,
            parameters: ckpt.model.parameter_count(),
            training_time_h: report.wall_clock_s / 3600.0,
            testing_time_ms: forward_s * 1e3,
            speedup: fdtd_s / forward_s,
            mre_regular: evaluate_mre(&ckpt.model, &ckpt.stats, &test)?.mre,
            mre_generalized,
        });
        models.push(ckpt);
    }
    let report = AblationReport {
        rows,
        fdtd_s,
        hyper: *hyper,
    };
    Ok((report, models))
}

/// One seed of the new-distribution comparison. Losses are test-set MSE
/// in field units so that models with different normalizations compare.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub seed: u64,
    /// The pre-trained model used as is.
    pub pretrained_mre: f64,
    pub scratch_test_loss: f64,
    pub finetune_test_loss: f64,
    pub scratch_mre: f64,
    pub finetune_mre: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub rows: Vec<TransferRow>,
    pub scratch: Hyper,
    pub finetune: Hyper,
}

impl TransferReport {
    pub fn to_table(&self) -> String {
        let mut out = "seed\tpretrained_mre\tscratch_mre\tfinetune_mre\tscratch_test_loss\tfinetune_test_loss\n".to_string();
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.2}%\t{:.2}%\t{:.2}%\t{:.6e}\t{:.6e}\n",
                r.seed,
                100.0 * r.pretrained_mre,
                100.0 * r.scratch_mre,
                100.0 * r.finetune_mre,
                r.scratch_test_loss,
                r.finetune_test_loss,
            ));
        }
        out
    }
}

fn test_samples(dataset: &Dataset, test_records: usize, stats: &NormalizationStats, r: usize) -> Result<Vec<Sample>> {
    let (_, test) = dataset.split(test_records)?;
    samples_of(&test, dataset, stats, r)
}

/// Pre-trained as is, trained from scratch, and fine-tuned from the
/// pre-trained weights, on data from a new soil distribution. Scratch and
/// fine-tuned runs share epochs and batch size, so their step budgets are
/// equal; `scratch.seed` and `finetune.seed` are replaced by each seed.
pub fn transfer_report(
    pretrained: &Checkpoint,
    new_data: &Dataset,
    test_records: usize,
    scratch: &Hyper,
    finetune: &Hyper,
    seeds: &[u64],
) -> Result<TransferReport> {
    if (scratch.epochs, scratch.batch) != (finetune.epochs, finetune.batch) {
        return Err(Error::Config("scratch and fine-tuned runs need the same step budget".into()));
    }
    let r = pretrained.model.config.resolution;
    let base = test_samples(new_data, test_records, &pretrained.stats, r)?;
    let pretrained_mre = evaluate_mre(&pretrained.model, &pretrained.stats, &base)?.mre;
    let mut config = pretrained.config.clone();
    config.network = pretrained.model.config.clone();
    config.training.test_records = test_records;
    let mut rows = Vec::new();
    for &seed in seeds {
        let (ft, _) = fine_tune(pretrained, new_data, test_records, &Hyper { seed, ..*finetune })?;
        let (sc, _) = train(new_data, &config, &Hyper { seed, ..*scratch })?;
        let ft_test = test_samples(new_data, test_records, &ft.stats, r)?;
        let sc_test = test_samples(new_data, test_records, &sc.stats, r)?;
        rows.push(TransferRow {
            seed,
            pretrained_mre,
            scratch_test_loss: physical_mse(&sc.model, &sc.stats, &sc_test)?,
            finetune_test_loss: physical_mse(&ft.model, &ft.stats, &ft_test)?,
            scratch_mre: evaluate_mre(&sc.model, &sc.stats, &sc_test)?.mre,
            finetune_mre: evaluate_mre(&ft.model, &ft.stats, &ft_test)?.mre,
        });
    }
    Ok(TransferReport {
        rows,
        scratch: *scratch,
        finetune: *finetune,
    })
}

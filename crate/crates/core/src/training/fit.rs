use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mean_relative_error, preprocess_all, Dataset, DatasetRecord, MreReport, NormalizationStats, Sample};
use crate::error::{Error, Result};
use crate::io::{Checkpoint, RunConfig};
use crate::network::{Bound, Model};
use crate::optim::{take_param_grads, AdamConfig};
use crate::autograd::Tape;
use crate::tensor::Tensor;

/// Optimisation settings of one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Seeds both the weight initialisation and the shuffling.
    pub seed: u64,
}

impl Hyper {
    pub fn from_config(config: &RunConfig) -> Self {
        let t = &config.training;
        Self {
            lr: t.lr,
            batch: t.batch,
            epochs: t.epochs,
            seed: t.seed,
        }
    }
}

/// Mean per-record MSE in network space after `epoch` epochs (0 = before
/// any update).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

/// Which loss picked the kept parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Test,
    /// No test records; the training loss stands in.
    Train,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochLoss>,
    pub selected_epoch: usize,
    pub selection: Selection,
    pub steps: usize,
    pub wall_clock_s: f64,
    /// MRE of the kept parameters on the test records, or on the training
    /// records when there are none.
    pub final_mre: Option<f64>,
    pub parameter_count: usize,
    pub config_hash: String,
    pub hyper: Hyper,
    pub transfer: bool,
}

impl TrainReport {
    pub fn selected(&self) -> &EpochLoss {
        &self.history[self.selected_epoch]
    }

    pub fn last(&self) -> &EpochLoss {
        self.history.last().expect("history starts with the initial evaluation")
    }
}

fn stack(samples: &[&Sample], r: usize, pick: impl Fn(&Sample) -> &[f32]) -> Tensor<f32> {
    let data = samples.iter().flat_map(|s| pick(s).iter().copied()).collect();
    Tensor::new(vec![samples.len(), 1, r, r], data).expect("sample sizes match the resolution")
}

const EVAL_BATCH: usize = 8;

/// Network-space predictions for every sample, in order.
fn predict_all(model: &Model<f32>, samples: &[Sample]) -> Result<Vec<Vec<f32>>> {
    let r = model.config.resolution;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let y = model.predict(&stack(&refs, r, |s| &s.x_eps), &stack(&refs, r, |s| &s.x_sigma))?;
        out.extend(y.data().chunks_exact(r * r).map(|c| c.to_vec()));
    }
    Ok(out)
}

/// Mean over samples of the per-sample MSE, in network space.
pub fn evaluate_loss(model: &Model<f32>, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Invalid("no samples to evaluate".into()));
    }
    let preds = predict_all(model, samples)?;
    let total: f64 = preds
        .iter()
        .zip(samples)
        .map(|(p, s)| {
            p.iter().zip(&s.y).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / p.len() as f64
        })
        .sum();
    Ok(total / samples.len() as f64)
}

/// De-normalized predictions in field units.
pub fn predict_physical(model: &Model<f32>, stats: &NormalizationStats, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    Ok(predict_all(model, samples)?
        .iter()
        .map(|p| stats.denormalize_bscan(p))
        .collect())
}

/// MRE against the physical targets.
pub fn evaluate_mre(model: &Model<f32>, stats: &NormalizationStats, samples: &[Sample]) -> Result<MreReport> {
    let preds = predict_physical(model, stats, samples)?;
    mean_relative_error(preds.iter().zip(samples).map(|(p, s)| (p.as_slice(), s.target.as_slice())))
}

/// Mean per-sample MSE in field units, comparable across normalizations.
pub fn physical_mse(model: &Model<f32>, stats: &NormalizationStats, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Invalid("no samples to evaluate".into()));
    }
    let preds = predict_physical(model, stats, samples)?;
    let total: f64 = preds
        .iter()
        .zip(samples)
        .map(|(p, s)| p.iter().zip(&s.target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64)
        .sum();
    Ok(total / samples.len() as f64)
}

fn batch_step(model: &mut Model<f32>, batch: &[&Sample], adam: &AdamConfig) -> Result<f64> {
    let r = model.config.resolution;
    let (x_eps, x_sigma, y) = (
        stack(batch, r, |s| &s.x_eps),
        stack(batch, r, |s| &s.x_sigma),
        stack(batch, r, |s| &s.y),
    );
    let (loss, grads) = {
        let mut tape = Tape::new();
        let p = Bound::new(&model.params, &mut tape);
        let (a, b, t) = (tape.constant(&x_eps), tape.constant(&x_sigma), tape.constant(&y));
        let out = model.forward(&mut tape, &p, a, b)?;
        let l = tape.mse_loss(out, t)?;
        let loss = tape.value(l).data()[0] as f64;
        if !loss.is_finite() {
            return Ok(loss);
        }
        tape.backward(l)?;
        (loss, take_param_grads(&tape))
    };
    model.params.zero_grad();
    model.params.accumulate_grads(grads);
    model.params.adam_step(adam)?;
    Ok(loss)
}

/// Adam on the MSE over `train`; after every epoch both splits are
/// evaluated and the parameters with the lowest test loss (training loss
/// when `test` is empty) are kept in `model`.
pub fn fit(model: &mut Model<f32>, train: &[Sample], test: &[Sample], hyper: &Hyper) -> Result<(Vec<EpochLoss>, usize, usize)> {
    if train.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    if hyper.batch == 0 {
        return Err(Error::Config("batch must be positive".into()));
    }
    let adam = AdamConfig::with_lr(hyper.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let evaluate = |model: &Model<f32>, epoch: usize| -> Result<EpochLoss> {
        Ok(EpochLoss {
            epoch,
            train_loss: evaluate_loss(model, train)?,
            test_loss: if test.is_empty() { None } else { Some(evaluate_loss(model, test)?) },
        })
    };
    let key = |e: &EpochLoss| e.test_loss.unwrap_or(e.train_loss);
    let mut history = vec![evaluate(model, 0)?];
    let values = |m: &Model<f32>| m.params.iter().map(|(_, p)| p.value.clone()).collect::<Vec<_>>();
    let mut best = (0, key(&history[0]), values(model));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut steps = 0;
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for (k, chunk) in order.chunks(hyper.batch).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = batch_step(model, &batch, &adam)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, step: k, loss });
            }
            steps += 1;
        }
        let e = evaluate(model, epoch)?;
        if !key(&e).is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                step: steps,
                loss: key(&e),
            });
        }
        if key(&e) < best.1 {
            best = (epoch, key(&e), values(model));
        }
        history.push(e);
    }
    let (selected, _, kept) = best;
    for ((_, p), v) in model.params.iter_mut().zip(kept) {
        p.value = v;
    }
    Ok((history, selected, steps))
}

fn report(
    model: &Model<f32>,
    stats: &NormalizationStats,
    train: &[Sample],
    test: &[Sample],
    run: (Vec<EpochLoss>, usize, usize),
    started: Instant,
    config_hash: String,
    hyper: &Hyper,
    transfer: bool,
) -> Result<TrainReport> {
    let (history, selected_epoch, steps) = run;
    let wall_clock_s = started.elapsed().as_secs_f64();
    let eval_set = if test.is_empty() { train } else { test };
    Ok(TrainReport {
        history,
        selected_epoch,
        selection: if test.is_empty() { Selection::Train } else { Selection::Test },
        steps,
        wall_clock_s,
        final_mre: Some(evaluate_mre(model, stats, eval_set)?.mre),
        parameter_count: model.parameter_count(),
        config_hash,
        hyper: *hyper,
        transfer,
    })
}

fn split_samples(
    dataset: &Dataset,
    test_records: usize,
    stats: Option<NormalizationStats>,
    r: usize,
) -> Result<(NormalizationStats, Vec<Sample>, Vec<Sample>)> {
    let (train, test) = dataset.split(test_records)?;
    // statistics only ever come from the training records
    let stats = match stats {
        Some(s) => s,
        None => NormalizationStats::compute(train.iter().copied())?,
    };
    let dims = dataset.meta.dims;
    Ok((stats, preprocess_all(&train, dims, &stats, r)?, preprocess_all(&test, dims, &stats, r)?))
}

/// Trains `config.network` from scratch on `dataset`, holding out the
/// last `config.training.test_records` records.
pub fn train(dataset: &Dataset, config: &RunConfig, hyper: &Hyper) -> Result<(Checkpoint, TrainReport)> {
    config.validate()?;
    let started = Instant::now();
    let r = config.network.resolution;
    let (stats, train, test) = split_samples(dataset, config.training.test_records, None, r)?;
    let mut model = Model::<f32>::build(config.network.clone(), hyper.seed)?;
    let run = fit(&mut model, &train, &test, hyper)?;
    let rep = report(&model, &stats, &train, &test, run, started, config.hash(), hyper, false)?;
    let ckpt = Checkpoint {
        model,
        stats,
        config: config.clone(),
        pretrain_lr: hyper.lr,
        report: Some(rep.clone()),
    };
    Ok((ckpt, rep))
}

/// Continues training a checkpoint on new data at a lower learning rate,
/// with fresh optimiser state and the checkpoint's normalization.
pub fn fine_tune(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    test_records: usize,
    hyper: &Hyper,
) -> Result<(Checkpoint, TrainReport)> {
    if !(hyper.lr < checkpoint.pretrain_lr) {
        return Err(Error::Config(format!(
            "fine-tuning lr {} must be below the pre-training lr {}",
            hyper.lr, checkpoint.pretrain_lr
        )));
    }
    let (ours, theirs) = (&checkpoint.config.scene, &dataset.meta.config.scene);
    if (ours.nx, ours.ny, ours.cell) != (theirs.nx, theirs.ny, theirs.cell)
        || checkpoint.config.scan != dataset.meta.config.scan
        || checkpoint.config.solver != dataset.meta.config.solver
    {
        return Err(Error::Config("dataset grid or scan differs from the checkpoint's".into()));
    }
    let started = Instant::now();
    let r = checkpoint.model.config.resolution;
    let (stats, train, test) = split_samples(dataset, test_records, Some(checkpoint.stats), r)?;
    let mut model = checkpoint.model.clone();
    model.params.reset_optimizer();
    let run = fit(&mut model, &train, &test, hyper)?;
    let rep = report(&model, &stats, &train, &test, run, started, checkpoint.config.hash(), hyper, true)?;
    let ckpt = Checkpoint {
        model,
        stats,
        config: checkpoint.config.clone(),
        pretrain_lr: checkpoint.pretrain_lr,
        report: Some(rep.clone()),
    };
    Ok((ckpt, rep))
}

/// Records of a dataset in network space under `stats`.
pub(crate) fn samples_of(records: &[&DatasetRecord], dataset: &Dataset, stats: &NormalizationStats, r: usize) -> Result<Vec<Sample>> {
    preprocess_all(records, dataset.meta.dims, stats, r)
}

//! `gpr`: dataset generation, training, inference and reports from the
//! command line. Results are printed as `key=value` lines on stdout.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use gpr_core::fdtd::run_bscan;
use gpr_core::io::{self, BScanMeta, Checkpoint, RunConfig};
use gpr_core::parallel;
use gpr_core::scene::{import_mask, rasterize, MaterialMaps, SceneSpec};
use gpr_core::training::{
    ablation_report, benchmark_speedup, bscan_image, evaluate_mre, fine_tune, generate_dataset, maps_sample,
    mean_relative_error, predict_physical, preprocess_all, resample_bilinear, train, transfer_report, Dataset,
    GenerateOptions, Hyper, ObjectSource, SoilChoice,
};

#[derive(Parser)]
#[command(name = "gpr", version, about = "GPR forward modelling: FDTD reference and neural surrogate")]
struct Cli {
    /// Worker threads for data-parallel kernels; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset of random scenes.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Use one soil distribution for every record; the index equal to
        /// the number of configured seeds selects the held-out one.
        #[arg(long)]
        soil: Option<usize>,
        /// Irregular object outlines instead of the generator's shapes.
        #[arg(long)]
        freeform: bool,
    },
    /// Train a network from scratch.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Continue training a checkpoint on new data at a lower learning rate.
    Finetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the configured fine-tuning rate.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        test_records: Option<usize>,
    },
    /// Predict the B-scan of a scene.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean relative error on a dataset's test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Evaluate every record instead of the test split.
        #[arg(long)]
        all: bool,
        /// Score the targets against themselves (checks the metric path).
        #[arg(long)]
        targets_as_predictions: bool,
    },
    /// Train networks i, ii and iii and print a comparison table.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Dataset of irregular objects for the generalization column.
        #[arg(long)]
        generalized: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare fine-tuning with training from scratch on new data.
    Transfer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        test_records: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Single-threaded FDTD time against network time on one scene.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, default_value_t = 3)]
        runs: usize,
    },
    /// Simulate a scene with FDTD.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a B-scan file as a PGM image.
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A scene: a JSON scene description, or a PGM mask of the object.
#[derive(Args)]
struct SceneArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Object permittivity for a mask.
    #[arg(long, default_value_t = 8.0)]
    eps: f64,
    /// Object conductivity (S/m) for a mask.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Soil distribution behind a mask.
    #[arg(long, default_value_t = 0)]
    soil: usize,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_scene(args: &SceneArgs, config: &RunConfig) -> Result<MaterialMaps> {
    let is_pgm = args
        .scene
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        return Ok(import_mask(&args.scene, &config.scene, args.soil, args.eps, args.sigma)?);
    }
    let spec: SceneSpec = io::read_json(&args.scene)?;
    Ok(rasterize(&spec, &config.scene)?)
}

/// The run configuration with the dataset's scene, solver and scan, which
/// the records were simulated with.
fn with_dataset_grid(mut config: RunConfig, data: &Dataset) -> RunConfig {
    let m = &data.meta.config;
    if (&config.scene, &config.solver, &config.scan) != (&m.scene, &m.solver, &m.scan) {
        log::warn!("using the dataset's scene, solver and scan settings");
    }
    config.scene = m.scene.clone();
    config.solver = m.solver;
    config.scan = m.scan.clone();
    config
}

fn kv(key: &str, value: impl std::fmt::Display) {
    println!("{key}={value}");
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            config,
            n,
            seed,
            out,
            soil,
            freeform,
        } => {
            let cfg = load_config(config.as_deref())?;
            let options = GenerateOptions {
                count: n,
                master_seed: seed,
                soil: soil.map_or(SoilChoice::Cycle, SoilChoice::Fixed),
                objects: if freeform { ObjectSource::Freeform } else { ObjectSource::Regular },
            };
            let s = generate_dataset(&out, &cfg, options)?;
            kv("generated", s.generated);
            kv("skipped", s.skipped);
            kv("regenerated", s.regenerated);
            kv("config_hash", cfg.hash());
        }
        Command::Train {
            config,
            data,
            out,
            epochs,
            seed,
        } => {
            let data = Dataset::load(&data)?;
            let cfg = with_dataset_grid(load_config(config.as_deref())?, &data);
            let mut hyper = Hyper::from_config(&cfg);
            hyper.epochs = epochs.unwrap_or(hyper.epochs);
            hyper.seed = seed.unwrap_or(hyper.seed);
            let (ckpt, report) = train(&data, &cfg, &hyper)?;
            ckpt.save(&out)?;
            print_report(&report);
        }
        Command::Finetune {
            ckpt,
            data,
            lr,
            out,
            epochs,
            seed,
            test_records,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let data = Dataset::load(&data)?;
            let t = &ckpt.config.training;
            let hyper = Hyper {
                lr: lr.unwrap_or(t.finetune_lr),
                batch: t.batch,
                epochs: epochs.unwrap_or(t.epochs),
                seed: seed.unwrap_or(t.seed),
            };
            let (tuned, report) = fine_tune(&ckpt, &data, test_records.unwrap_or(t.test_records), &hyper)?;
            tuned.save(&out)?;
            print_report(&report);
        }
        Command::Predict { ckpt, scene, out } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let maps = load_scene(&scene, &ckpt.config)?;
            let r = ckpt.model.config.resolution;
            let sample = maps_sample(&maps, &ckpt.stats, r)?;
            let pred = predict_physical(&ckpt.model, &ckpt.stats, std::slice::from_ref(&sample))?;
            // back to the simulator's sampling
            let c = &ckpt.config;
            let (dt, samples) = c.solver.time_step(c.scene.cell, c.scene.cell, c.scan.time_window)?;
            let traces = c.scan.trace_count;
            let native: Vec<f32> = resample_bilinear(&pred[0], r, r, samples, traces)
                .into_iter()
                .map(|v| v as f32)
                .collect();
            io::write_bscan(&out, &native, &BScanMeta::new(samples, traces, dt, c.hash()))?;
            kv("rows", samples);
            kv("cols", traces);
            kv("out", out.display());
        }
        Command::Eval {
            ckpt,
            data,
            all,
            targets_as_predictions,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let data = Dataset::load(&data)?;
            let records: Vec<_> = if all {
                data.records.iter().collect()
            } else {
                data.split(ckpt.config.training.test_records)?.1
            };
            let r = ckpt.model.config.resolution;
            let samples = preprocess_all(&records, data.meta.dims, &ckpt.stats, r)?;
            let report = if targets_as_predictions {
                mean_relative_error(samples.iter().map(|s| (s.target.as_slice(), s.target.as_slice())))?
            } else {
                evaluate_mre(&ckpt.model, &ckpt.stats, &samples)?
            };
            kv("mre", format!("{:.6}", report.mre));
            kv("counted", report.counted);
            kv("excluded", report.excluded);
        }
        Command::Ablate {
            config,
            data,
            generalized,
            report,
        } => {
            let data = Dataset::load(&data)?;
            let gen = generalized.as_deref().map(Dataset::load).transpose()?;
            let cfg = with_dataset_grid(load_config(config.as_deref())?, &data);
            let (rep, _) = ablation_report(&data, gen.as_ref(), &cfg, &Hyper::from_config(&cfg))?;
            print!("{}", rep.to_table());
            for row in &rep.rows {
                let v = row.variant.label();
                kv(&format!("parameters_{v}"), row.parameters);
                kv(&format!("mre_{v}"), format!("{:.6}", row.mre_regular));
                kv(&format!("speedup_{v}"), format!("{:.1}", row.speedup));
            }
            if let Some(path) = report {
                io::write_json(&path, &rep)?;
            }
        }
        Command::Transfer {
            ckpt,
            data,
            seeds,
            epochs,
            test_records,
            report,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let data = Dataset::load(&data)?;
            let t = &ckpt.config.training;
            let scratch = Hyper {
                lr: t.lr,
                batch: t.batch,
                epochs: epochs.unwrap_or(t.epochs),
                seed: 0,
            };
            let finetune = Hyper {
                lr: t.finetune_lr,
                ..scratch
            };
            let rep = transfer_report(
                &ckpt,
                &data,
                test_records.unwrap_or(t.test_records),
                &scratch,
                &finetune,
                &seeds,
            )?;
            print!("{}", rep.to_table());
            for row in &rep.rows {
                let better = row.finetune_test_loss <= row.scratch_test_loss;
                kv(&format!("finetune_not_worse_seed{}", row.seed), better);
            }
            if let Some(path) = report {
                io::write_json(&path, &rep)?;
            }
        }
        Command::Bench { ckpt, scene, runs } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let maps = load_scene(&scene, &ckpt.config)?;
            let sample = maps_sample(&maps, &ckpt.stats, ckpt.model.config.resolution)?;
            let c = &ckpt.config;
            let rep = benchmark_speedup(&ckpt.model, &sample, &maps, &c.solver, &c.scan, runs)?;
            kv("fdtd_s", format!("{:.6}", rep.fdtd_s));
            kv("forward_s", format!("{:.6}", rep.forward_s));
            kv("speedup", format!("{:.1}", rep.ratio));
        }
        Command::Simulate { config, scene, out } => {
            let cfg = load_config(config.as_deref())?;
            let maps = load_scene(&scene, &cfg)?;
            let b = run_bscan(&maps.grid, &cfg.solver, &cfg.scan)?;
            io::write_bscan(&out, &bscan_image(&b), &BScanMeta::new(b.samples, b.traces, b.dt, cfg.hash()))?;
            kv("rows", b.samples);
            kv("cols", b.traces);
            kv("out", out.display());
        }
        Command::Render { input, out } => {
            let (meta, data) = io::read_bscan(&input)?;
            io::write_atomic(&out, &io::render_pgm(&data, meta.rows, meta.cols))
                .with_context(|| format!("writing {}", out.display()))?;
            kv("out", out.display());
        }
    }
    Ok(())
}

fn print_report(report: &gpr_core::training::TrainReport) {
    let sel = report.selected();
    kv("selected_epoch", report.selected_epoch);
    kv("train_loss", format!("{:.6e}", sel.train_loss));
    if let Some(t) = sel.test_loss {
        kv("test_loss", format!("{t:.6e}"));
    }
    if let Some(m) = report.final_mre {
        kv("mre", format!("{m:.6}"));
    }
    kv("steps", report.steps);
    kv("parameters", report.parameter_count);
    kv("wall_clock_s", format!("{:.3}", report.wall_clock_s));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let threads = cli.threads;
    let result = if threads == 0 {
        run(cli)
    } else {
        parallel::with_threads(threads, || run(cli))
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

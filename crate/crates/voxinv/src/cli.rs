//! Command-line entry points.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use voxinv_core::eval::{aggregate, predict, score_sample, EvalReport};
use voxinv_core::gradcheck::{grad_check, network_cases, op_cases, NETWORK_STEP, OP_STEP};
use voxinv_core::nets::{Architecture, Denoiser, Inverter};
use voxinv_core::train::{fine_tune, split_indices, train_stage, EpochRecord, Pair, TrainConfig};
use voxinv_core::Tensor;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::{generate_dataset, load_split, to_pairs, LoadedSample, Manifest, Split, Task};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::Model;
use crate::report::{reaggregate, write_report};
use crate::volume::{read_volume, write_volume, Volume};

#[derive(Debug, Parser)]
#[command(name = "voxinv", about = "GPR C-scan denoising and 3D permittivity inversion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Fixed reduction order. Every op already reduces in a fixed order,
    /// so results do not depend on --workers either way.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the Denoiser on noisy → clean pairs.
    TrainDenoiser(TrainArgs),
    /// Pre-train the Inverter on clean C-scan → permittivity pairs.
    TrainInverter(TrainArgs),
    /// Continue training a checkpoint on a new dataset.
    FineTune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Denoise then invert one C-scan volume.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Inverter checkpoint, optionally preceded by a Denoiser one.
        #[arg(long, required = true, num_args = 1..=2)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        /// Predicted permittivity volume.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        denoised_out: Option<PathBuf>,
    },
    /// Score checkpoints on a dataset split; writes eval.csv and eval.json.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Inverter checkpoint, optionally preceded by a Denoiser one.
        #[arg(long, required = true, num_args = 1..=2)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Finite-difference gradient checks of every op and two tiny networks.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Re-aggregate an eval.csv into a JSON summary.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint path; the epoch log goes next to it with a `.csv` suffix.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

fn setup(common: &Common) -> Result<RunConfig> {
    if common.workers > 0 {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(common.workers).build_global();
    }
    match &common.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn log_csv(history: &[EpochRecord]) -> Vec<u8> {
    let mut s = String::from("epoch,lr,train_loss,val_loss\n");
    for r in history {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.lr, r.train_loss, r.val_loss));
    }
    s.into_bytes()
}

fn log_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".csv");
    PathBuf::from(p)
}

fn print_epoch(r: &EpochRecord) {
    eprintln!("epoch {:>4}  lr {:.6}  train {:.6}  val {:.6}", r.epoch, r.lr, r.train_loss, r.val_loss);
}

/// Training and validation pairs; without a validation split the
/// training scenes are divided by `split`.
fn train_val_pairs(m: &Manifest, dir: &Path, task: Task, split: f64, seed: u64) -> Result<(Vec<Pair<f32>>, Vec<Pair<f32>>)> {
    let train = load_split(m, dir, Split::Train)?;
    let val = load_split(m, dir, Split::Val)?;
    if train.is_empty() {
        return Err(Error::Manifest("no training records".into()));
    }
    if !val.is_empty() {
        return Ok((to_pairs(&train, task), to_pairs(&val, task)));
    }
    let (ti, vi) = split_indices(train.len(), split, seed)?;
    let pick = |idx: &[usize]| -> Vec<LoadedSample> { idx.iter().map(|&i| train[i].clone()).collect() };
    Ok((to_pairs(&pick(&ti), task), to_pairs(&pick(&vi), task)))
}

fn train_command(args: &TrainArgs, arch: Architecture, task: Task) -> Result<()> {
    let cfg = setup(&args.common)?;
    let train_cfg = TrainConfig { seed: args.common.seed.unwrap_or(cfg.train.seed), ..cfg.train.clone() };
    let (m, dir) = Manifest::load(&args.manifest)?;
    let (train, val) = train_val_pairs(&m, &dir, task, train_cfg.split, train_cfg.seed)?;
    let mut model = Model::build(arch, train_cfg.seed)?;
    let outcome = match &mut model {
        Model::Denoiser(n) => train_stage(n, &train, &val, &train_cfg, &mut print_epoch)?,
        Model::Inverter(n) => train_stage(n, &train, &val, &train_cfg, &mut print_epoch)?,
    };
    Checkpoint::from_outcome(arch, &outcome, &m.fingerprint).save(&args.out)?;
    write_atomic(&log_path(&args.out), &log_csv(&outcome.history))?;
    eprintln!("best epoch {} (validation loss {:.6})", outcome.best_epoch, outcome.best_val_loss);
    Ok(())
}

fn task_of(arch: &Architecture) -> Task {
    match arch {
        Architecture::Denoiser(_) => Task::Denoise,
        Architecture::Inverter(_) => Task::Invert,
    }
}

/// Splits `--checkpoint` values into an optional Denoiser and an Inverter.
fn load_pipeline(paths: &[PathBuf]) -> Result<(Option<Denoiser<f32>>, Inverter<f32>)> {
    let mut den = None;
    let mut inv = None;
    for p in paths {
        match Checkpoint::load(p)?.instantiate()? {
            Model::Denoiser(d) if den.is_none() => den = Some(d),
            Model::Inverter(i) if inv.is_none() => inv = Some(i),
            _ => return Err(Error::Usage("pass at most one Denoiser and one Inverter checkpoint".into())),
        }
    }
    let inv = inv.ok_or_else(|| Error::Usage("an Inverter checkpoint is required".into()))?;
    Ok((den, inv))
}

pub fn evaluate(den: Option<&Denoiser<f32>>, inv: &Inverter<f32>, samples: &[LoadedSample], threshold: f64) -> Result<EvalReport> {
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let p = predict(den, inv, &s.noisy)?;
        out.push(score_sample(s.record.id.clone(), s.record.group, &s.clean, &s.permittivity, &p, threshold)?);
    }
    Ok(aggregate(out))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, out } => {
            let cfg = setup(&common)?;
            let seed = common.seed.unwrap_or(cfg.dataset.seed);
            let m = generate_dataset(&cfg, seed, &out, &mut |done, total| eprintln!("generated {done}/{total}"))?;
            eprintln!("wrote {} records to {}", m.records.len(), out.display());
            Ok(())
        }
        Command::TrainDenoiser(args) => {
            let cfg = setup(&args.common)?;
            train_command(&args, Architecture::Denoiser(cfg.denoiser), Task::Denoise)
        }
        Command::TrainInverter(args) => {
            let cfg = setup(&args.common)?;
            train_command(&args, Architecture::Inverter(cfg.inverter), Task::Invert)
        }
        Command::FineTune { common, checkpoint, manifest, out } => {
            let cfg = setup(&common)?;
            let ft = voxinv_core::train::FineTuneConfig { seed: common.seed.unwrap_or(cfg.fine_tune.seed), ..cfg.fine_tune.clone() };
            let source = Checkpoint::load(&checkpoint)?;
            let arch = source.header.architecture;
            let (m, dir) = Manifest::load(&manifest)?;
            let (train, val) = train_val_pairs(&m, &dir, task_of(&arch), ft.split, ft.seed)?;
            let mut model = Model::build(arch, ft.seed)?;
            let src = (&arch, &source.params);
            let outcome = match &mut model {
                Model::Denoiser(n) => fine_tune(n, src, &train, &val, &ft, &mut print_epoch)?,
                Model::Inverter(n) => fine_tune(n, src, &train, &val, &ft, &mut print_epoch)?,
            };
            Checkpoint::from_outcome(arch, &outcome, &m.fingerprint).save(&out)?;
            write_atomic(&log_path(&out), &log_csv(&outcome.history))?;
            Ok(())
        }
        Command::Infer { common, checkpoint, input, out, denoised_out } => {
            setup(&common)?;
            let (den, inv) = load_pipeline(&checkpoint)?;
            let x: Tensor<f64> = read_volume(&input)?.to_f64();
            let p = predict(den.as_ref(), &inv, &x)?;
            if let Some(path) = denoised_out {
                write_volume(&path, &Volume::F32(p.denoised.cast()))?;
            }
            write_volume(&out, &Volume::F32(p.permittivity.cast()))
        }
        Command::Eval { common, manifest, checkpoint, out, split } => {
            let cfg = setup(&common)?;
            let (m, dir) = Manifest::load(&manifest)?;
            let (den, inv) = load_pipeline(&checkpoint)?;
            let samples = load_split(&m, &dir, split.into())?;
            if samples.is_empty() {
                return Err(Error::Manifest("selected split is empty".into()));
            }
            let threshold = cfg.eval.iou_threshold.unwrap_or_else(|| {
                voxinv_core::eval::iou_threshold(m.background_epsilon_r, m.forge.scene.epsilon_r[0])
            });
            let report = evaluate(den.as_ref(), &inv, &samples, threshold)?;
            write_report(&out, &report)?;
            println!("{}", serde_json::to_string_pretty(&crate::report::report_json(&report)).expect("json"));
            Ok(())
        }
        Command::Gradcheck { common } => {
            setup(&common)?;
            let seed = common.seed.unwrap_or(0);
            let mut failed = 0;
            for case in op_cases(seed) {
                let r = grad_check(case.as_ref(), OP_STEP);
                let ok = r.max_relative_error < 1e-4;
                failed += usize::from(!ok);
                println!("{:<32} {:.3e}  {}", r.name, r.max_relative_error, if ok { "pass" } else { "FAIL" });
            }
            for case in network_cases(seed)? {
                let r = grad_check(case.as_ref(), NETWORK_STEP);
                let ok = r.max_relative_error < 1e-3;
                failed += usize::from(!ok);
                println!("{:<32} {:.3e}  {}", r.name, r.max_relative_error, if ok { "pass" } else { "FAIL" });
            }
            if failed > 0 {
                return Err(Error::Usage(format!("{failed} gradient checks failed")));
            }
            println!("all gradient checks passed");
            Ok(())
        }
        Command::Report { input, out } => {
            let report = reaggregate(&input)?;
            let text = serde_json::to_string_pretty(&crate::report::report_json(&report)).expect("json");
            write_atomic(&out, text.as_bytes())?;
            println!("{text}");
            Ok(())
        }
    }
}

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use convctc::checkpoint::{peek_dtype, Checkpoint};
use convctc::ctc::best_path_decode;
use convctc::data::{write_synthetic, Manifest, Split, SplitCounts, SyntheticTask, Utterance};
use convctc::features::{assemble_input, NormalizationStats};
use convctc::scoring::SymbolMap;
use convctc::train::{evaluate, run_training, EpochRecord, Trainer};
use convctc::verify::{ctc_oracle_suite, gradcheck_suite, shapes_suite, SuiteReport};
use convctc::{Alphabet, DType, Network, NetworkConfig, Scalar, Tensor};

use crate::options::{load_config, Precision, TrainingSection};
use crate::{DecodeArgs, EvalArgs, FitStatsArgs, GenArgs, Suite, TrainArgs, VerifyArgs};

fn dtype_of(p: Precision) -> DType {
    match p {
        Precision::F32 => DType::F32,
        Precision::F64 => DType::F64,
    }
}

fn checkpoint_dtype(path: &Path, requested: Option<Precision>) -> Result<DType> {
    let dtype = peek_dtype(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(p) = requested {
        if dtype_of(p) != dtype {
            bail!(
                "{} holds {} parameters but --precision {} was requested",
                path.display(),
                dtype.name(),
                dtype_of(p).name()
            );
        }
    }
    Ok(dtype)
}

fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

macro_rules! dispatch {
    ($dtype:expr, $f:ident ( $($arg:expr),* )) => {
        match $dtype {
            DType::F32 => $f::<f32>($($arg),*),
            DType::F64 => $f::<f64>($($arg),*),
        }
    };
}

pub fn train(a: &TrainArgs) -> Result<ExitCode> {
    let flags = a.section();
    if let Some(path) = &a.resume {
        let dtype = checkpoint_dtype(path, flags.precision)?;
        return dispatch!(dtype, resume(a, path));
    }
    if let Some(path) = &a.checkpoint {
        let dtype = checkpoint_dtype(path, flags.precision)?;
        return dispatch!(dtype, start_from(a, path, &flags));
    }
    let config_path = a.config.as_deref().expect("clap requires --config");
    let (config, file) = load_config(config_path)?;
    let section = flags.over(file);
    let dtype = dtype_of(section.precision.unwrap_or_default());
    dispatch!(dtype, fresh(a, config, &section))
}

fn fresh<S: Scalar>(
    a: &TrainArgs,
    mut config: NetworkConfig,
    section: &TrainingSection,
) -> Result<ExitCode> {
    let alphabet_path = a.alphabet.as_deref().expect("clap requires --alphabet");
    let alphabet = Alphabet::load(alphabet_path)?;
    let train_manifest = Manifest::load(&a.train, &alphabet)?;
    let stats = match &a.stats {
        Some(p) => NormalizationStats::load(p)?,
        None => train_manifest
            .fit_stats()
            .context("fitting normalization on the training set")?,
    };
    if let Some(rate) = section.dropout {
        config.set_dropout(rate);
    }
    let trainer = Trainer::<S>::new(config, alphabet, stats, section.options())?;
    let train = train_manifest.load_utterances(trainer.stats())?;
    run(a, trainer, train)
}

fn start_from<S: Scalar>(a: &TrainArgs, path: &Path, flags: &TrainingSection) -> Result<ExitCode> {
    let ckpt = load_checkpoint::<S>(path)?;
    let mut config = ckpt.config;
    if let Some(rate) = flags.dropout {
        config.set_dropout(rate);
    }
    let trainer = Trainer::from_params(
        config,
        ckpt.alphabet,
        ckpt.stats,
        ckpt.params,
        flags.options(),
    )?;
    let train = Manifest::load(&a.train, trainer.alphabet())?.load_utterances(trainer.stats())?;
    run(a, trainer, train)
}

fn resume<S: Scalar>(a: &TrainArgs, path: &Path) -> Result<ExitCode> {
    let flags = a.section();
    let allowed = TrainingSection {
        epochs: flags.epochs,
        precision: flags.precision,
        ..TrainingSection::default()
    };
    if flags != allowed {
        eprintln!("warning: options are restored from the checkpoint; only --epochs applies when resuming");
    }
    let mut trainer = Trainer::resume(load_checkpoint::<S>(path)?)?;
    if let Some(epochs) = a.epochs {
        trainer.set_max_epochs(epochs);
    }
    if trainer.is_done() {
        eprintln!("run already finished at epoch {}", trainer.epoch());
        return Ok(ExitCode::SUCCESS);
    }
    let train = Manifest::load(&a.train, trainer.alphabet())?.load_utterances(trainer.stats())?;
    run(a, trainer, train)
}

fn run<S: Scalar>(
    a: &TrainArgs,
    mut trainer: Trainer<S>,
    train: Vec<Utterance<S>>,
) -> Result<ExitCode> {
    let dev = Manifest::load(&a.dev, trainer.alphabet())?.load_utterances(trainer.stats())?;
    let map = match &a.map {
        Some(p) => Some(SymbolMap::load(p, trainer.alphabet())?),
        None => None,
    };
    let layout = run_training(
        &mut trainer,
        &train,
        &dev,
        map.as_ref(),
        &a.out,
        |r: &EpochRecord| {
            println!(
                "{}",
                serde_json::to_string(&r.metrics).expect("metrics serialize")
            );
            if r.skipped > 0 {
                eprintln!(
                    "warning: epoch {}: skipped {} infeasible utterances",
                    r.metrics.epoch, r.skipped
                );
            }
            if r.switched {
                eprintln!(
                    "dev error plateaued; switching to SGD fine-tuning from the best weights"
                );
            }
        },
    )?;
    match trainer.best_dev_ler() {
        Some(ler) => eprintln!(
            "best dev error rate {ler:.4}; checkpoints in {}",
            a.out.display()
        ),
        None => eprintln!("no dev evaluation ran; checkpoints in {}", a.out.display()),
    }
    eprintln!("metrics: {}", layout.metrics.display());
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: &EvalArgs) -> Result<ExitCode> {
    let dtype = checkpoint_dtype(&a.checkpoint, None)?;
    dispatch!(dtype, eval_with(a))
}

fn eval_with<S: Scalar>(a: &EvalArgs) -> Result<ExitCode> {
    let ckpt = load_checkpoint::<S>(&a.checkpoint)?;
    let network = Network::new(ckpt.config)?;
    let utterances = Manifest::load(&a.test, &ckpt.alphabet)?.load_utterances::<S>(&ckpt.stats)?;
    let map = match &a.map {
        Some(p) => Some(SymbolMap::load(p, &ckpt.alphabet)?),
        None => None,
    };
    let report = evaluate(
        &network,
        &ckpt.params,
        &utterances,
        &ckpt.alphabet,
        map.as_ref(),
    )?;
    if let Some(path) = &a.report {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let summary = serde_json::json!({
        "utterances": report.utterances.len(),
        "reference_length": report.reference_length,
        "substitutions": report.totals.substitutions,
        "insertions": report.totals.insertions,
        "deletions": report.totals.deletions,
        "distance": report.totals.distance(),
        "error_rate": report.error_rate,
    });
    println!("{summary}");
    Ok(ExitCode::SUCCESS)
}

pub fn decode(a: &DecodeArgs) -> Result<ExitCode> {
    let dtype = checkpoint_dtype(&a.checkpoint, None)?;
    dispatch!(dtype, decode_with(a))
}

/// Rank-2 files are static features and go through deltas and
/// normalization; rank-3 files are taken as ready network input.
fn network_input<S: Scalar>(path: &Path, ckpt: &Checkpoint<S>) -> Result<Tensor<S>> {
    let x = Tensor::<f64>::read_file(path)?;
    let geom = ckpt.config.input;
    match x.rank() {
        2 if x.dim(0) == ckpt.stats.bands() => Ok(assemble_input(&x, &ckpt.stats)?),
        2 => bail!(
            "{}: geometry mismatch: model expects {} bands, file has {} bands",
            path.display(),
            ckpt.stats.bands(),
            x.dim(0)
        ),
        3 if x.shape()[..2] == [geom.channels, geom.bands] => Ok(x.cast()),
        3 => bail!(
            "{}: geometry mismatch: model expects {} channels x {} bands, file has {} channels x {} bands",
            path.display(),
            geom.channels,
            geom.bands,
            x.dim(0),
            x.dim(1)
        ),
        r => bail!("{}: expected a rank-2 [bands x frames] tensor, got rank {r}", path.display()),
    }
}

fn decode_with<S: Scalar>(a: &DecodeArgs) -> Result<ExitCode> {
    let ckpt = load_checkpoint::<S>(&a.checkpoint)?;
    let network = Network::new(ckpt.config.clone())?;
    let mut out = std::io::stdout().lock();
    for path in &a.features {
        let x = network_input(path, &ckpt)?;
        let labels = best_path_decode(&network.predict(&ckpt.params, &x)?)?;
        writeln!(out, "{}", ckpt.alphabet.decode_to_string(&labels))?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn verify(a: &VerifyArgs) -> Result<ExitCode> {
    let suites: &[Suite] = match a.suite {
        Suite::All => &[Suite::Gradcheck, Suite::CtcOracle, Suite::Shapes],
        ref s => std::slice::from_ref(s),
    };
    let mut ok = true;
    for suite in suites {
        let start = std::time::Instant::now();
        let report: SuiteReport = match suite {
            Suite::Gradcheck => gradcheck_suite(a.seed)?,
            Suite::CtcOracle => ctc_oracle_suite(a.seed, a.instances)?,
            Suite::Shapes => shapes_suite(a.seed, &a.frames, 20)?,
            Suite::All => unreachable!(),
        };
        println!("{report}\n  elapsed {:.1}s", start.elapsed().as_secs_f64());
        ok &= report.passed();
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

/// The desk-scale stand-in task: 5 symbols over 41 bands.
fn default_task() -> SyntheticTask {
    SyntheticTask {
        symbols: 5,
        bands: 41,
        min_frames: 20,
        max_frames: 40,
        noise_std: 0.1,
        counts: SplitCounts {
            train: 500,
            dev: 50,
            test: 50,
        },
        seed: 0,
    }
}

pub fn gen_synthetic(a: &GenArgs) -> Result<ExitCode> {
    let mut task = match &a.task {
        Some(p) => SyntheticTask::from_json(
            &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => default_task(),
    };
    task.symbols = a.symbols.unwrap_or(task.symbols);
    task.bands = a.bands.unwrap_or(task.bands);
    task.min_frames = a.min_frames.unwrap_or(task.min_frames);
    task.max_frames = a.max_frames.unwrap_or(task.max_frames);
    task.noise_std = a.noise_std.unwrap_or(task.noise_std);
    task.counts.train = a.train_count.unwrap_or(task.counts.train);
    task.counts.dev = a.dev_count.unwrap_or(task.counts.dev);
    task.counts.test = a.test_count.unwrap_or(task.counts.test);
    task.seed = a.seed.unwrap_or(task.seed);
    let layout = write_synthetic(&task, &a.out)?;
    println!("alphabet {}", layout.alphabet.display());
    for split in Split::ALL {
        println!("{split} {}", layout.manifest(split).display());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn fit_stats(a: &FitStatsArgs) -> Result<ExitCode> {
    let alphabet = Alphabet::load(&a.alphabet)?;
    let manifest = Manifest::load(&a.train, &alphabet)?;
    let stats = manifest.fit_stats()?;
    stats.save(&a.out)?;
    println!(
        "fitted {} channels x {} bands over {} utterances -> {}",
        stats.channels(),
        stats.bands(),
        manifest.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

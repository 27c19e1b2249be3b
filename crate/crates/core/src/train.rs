//! Batched CTC training with early stopping on dev label error rate and an
//! optional automatic switch from Adam to SGD fine-tuning on plateau.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, RngState, TrainingMeta};
use crate::config::NetworkConfig;
use crate::ctc::{best_path_decode, ctc_grad_log_probs, ctc_loss, Alphabet, LabelSequence};
use crate::data::{batch_order, Utterance};
use crate::error::{Error, Result};
use crate::features::NormalizationStats;
use crate::layers::{Mode, Network};
use crate::optim::{init_uniform, Hyperparams, OptimizerState, Stage, INIT_RANGE};
use crate::params::Parameters;
use crate::scalar::Scalar;
use crate::scoring::{EvalReport, SymbolMap};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    /// Per-utterance losses are summed over the batch.
    #[default]
    Sum,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub seed: u64,
    pub stage: Stage,
    pub hyper: Hyperparams,
    /// Hyperparameters for the SGD stage entered automatically when dev
    /// error stops improving during Adam. `None` stops instead.
    pub fine_tune: Option<Hyperparams>,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Evaluations without improvement before switching stage or stopping.
    pub patience: usize,
    /// Evaluate on dev every this many epochs.
    pub eval_every: usize,
    pub reduction: LossReduction,
    pub shuffle: bool,
    pub sort_by_length: bool,
    /// Record wall-clock seconds in the metrics log. Off gives logs that are
    /// byte-identical across runs.
    pub record_seconds: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            seed: 0,
            stage: Stage::Adam,
            hyper: Hyperparams::adam(),
            fine_tune: Some(Hyperparams::sgd()),
            batch_size: 20,
            max_epochs: 100,
            patience: 5,
            eval_every: 1,
            reduction: LossReduction::Sum,
            shuffle: true,
            sort_by_length: false,
            record_seconds: true,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument(
                "batch size, evaluation interval and patience must be at least 1".into(),
            ));
        }
        for h in std::iter::once(&self.hyper).chain(&self.fine_tune) {
            if !(h.lr > 0.0 && h.lr.is_finite()) || !(h.l2 >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "invalid learning rate {} or L2 {}",
                    h.lr, h.l2
                )));
            }
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub epoch: usize,
    pub stage: Stage,
    pub train_loss: f64,
    pub dev_ler: Option<f64>,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub metrics: MetricsLine,
    /// Training utterances skipped because the target cannot fit the frames.
    pub skipped: usize,
    pub improved: bool,
    /// The run moved to SGD fine-tuning after this epoch.
    pub switched: bool,
}

/// Adds the gradient of one utterance's CTC loss into `grads`. Returns
/// `None` without touching `grads` when the target is infeasible.
pub fn accumulate_utterance<S: Scalar>(
    network: &Network,
    params: &Parameters<S>,
    features: &crate::Tensor<S>,
    labels: &[usize],
    mode: Mode<'_>,
    grads: &mut Parameters<S>,
) -> Result<Option<S>> {
    if labels.len() + repeats(labels) > features.dim(2) {
        return Ok(None);
    }
    let (lp, tape) = network.forward(params, features, mode)?;
    let out = ctc_loss(&lp, labels)?;
    if out.infeasible {
        return Ok(None);
    }
    if out.loss.is_finite() {
        let g = ctc_grad_log_probs(&out.lattice, &lp)?;
        network.backward_into(params, &tape, &g, grads)?;
    }
    Ok(Some(out.loss))
}

fn repeats(labels: &[usize]) -> usize {
    labels.windows(2).filter(|w| w[0] == w[1]).count()
}

pub fn decode_all<S: Scalar>(
    network: &Network,
    params: &Parameters<S>,
    utterances: &[Utterance<S>],
) -> Result<Vec<LabelSequence>> {
    utterances
        .iter()
        .map(|u| best_path_decode(&network.predict(params, &u.features)?))
        .collect()
}

/// Best-path decodes every utterance and scores it against its labels.
pub fn evaluate<S: Scalar>(
    network: &Network,
    params: &Parameters<S>,
    utterances: &[Utterance<S>],
    alphabet: &Alphabet,
    map: Option<&SymbolMap>,
) -> Result<EvalReport> {
    let hyps = decode_all(network, params, utterances)?;
    Ok(EvalReport::score(
        utterances
            .iter()
            .zip(&hyps)
            .map(|(u, h)| (u.id.as_str(), &u.labels[..], &h[..])),
        alphabet,
        map,
    ))
}

pub struct Trainer<S> {
    network: Network,
    alphabet: Alphabet,
    stats: NormalizationStats,
    params: Parameters<S>,
    optimizer: OptimizerState<S>,
    best_params: Option<Parameters<S>>,
    rng: ChaCha8Rng,
    epoch: usize,
    best_dev_ler: Option<f64>,
    best_epoch: Option<usize>,
    evals_since_best: usize,
    finished: bool,
    options: TrainOptions,
}

impl<S: Scalar> Trainer<S> {
    /// Fresh parameters drawn from the seeded generator.
    pub fn new(
        config: NetworkConfig,
        alphabet: Alphabet,
        stats: NormalizationStats,
        options: TrainOptions,
    ) -> Result<Self> {
        options.validate()?;
        let network = Network::new(config)?;
        check_alphabet(&network, &alphabet)?;
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let params = init_uniform(network.param_specs(), &mut rng, -INIT_RANGE, INIT_RANGE)?;
        Self::with_params(network, alphabet, stats, params, rng, options)
    }

    /// Starts a new run from existing parameters, e.g. fine-tuning a
    /// checkpoint with a fresh optimizer.
    pub fn from_params(
        config: NetworkConfig,
        alphabet: Alphabet,
        stats: NormalizationStats,
        params: Parameters<S>,
        options: TrainOptions,
    ) -> Result<Self> {
        options.validate()?;
        let network = Network::new(config)?;
        check_alphabet(&network, &alphabet)?;
        network.check_params(&params)?;
        let rng = ChaCha8Rng::seed_from_u64(options.seed);
        Self::with_params(network, alphabet, stats, params, rng, options)
    }

    fn with_params(
        network: Network,
        alphabet: Alphabet,
        stats: NormalizationStats,
        params: Parameters<S>,
        rng: ChaCha8Rng,
        options: TrainOptions,
    ) -> Result<Self> {
        let optimizer = OptimizerState::new(options.stage, options.hyper, &params);
        Ok(Trainer {
            network,
            alphabet,
            stats,
            params,
            optimizer,
            best_params: None,
            rng,
            epoch: 0,
            best_dev_ler: None,
            best_epoch: None,
            evals_since_best: 0,
            finished: false,
            options,
        })
    }

    /// Restores every piece of state needed to continue a run exactly.
    pub fn resume(ckpt: Checkpoint<S>) -> Result<Self> {
        ckpt.meta.options.validate()?;
        let network = Network::new(ckpt.config)?;
        network.check_params(&ckpt.params)?;
        Ok(Trainer {
            network,
            alphabet: ckpt.alphabet,
            stats: ckpt.stats,
            params: ckpt.params,
            optimizer: ckpt.optimizer,
            best_params: ckpt.best_params,
            rng: ckpt.meta.rng.restore()?,
            epoch: ckpt.meta.epoch,
            best_dev_ler: ckpt.meta.best_dev_ler,
            best_epoch: ckpt.meta.best_epoch,
            evals_since_best: ckpt.meta.evals_since_best,
            finished: ckpt.meta.finished,
            options: ckpt.meta.options,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn stats(&self) -> &NormalizationStats {
        &self.stats
    }

    pub fn params(&self) -> &Parameters<S> {
        &self.params
    }

    /// Best-on-dev parameters, or the current ones before any evaluation.
    pub fn best_params(&self) -> &Parameters<S> {
        self.best_params.as_ref().unwrap_or(&self.params)
    }

    pub fn stage(&self) -> Stage {
        self.optimizer.stage
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn best_dev_ler(&self) -> Option<f64> {
        self.best_dev_ler
    }

    pub fn options(&self) -> &TrainOptions {
        &self.options
    }

    pub fn set_max_epochs(&mut self, epochs: usize) {
        self.options.max_epochs = epochs;
    }

    pub fn is_done(&self) -> bool {
        self.finished || self.epoch >= self.options.max_epochs
    }

    pub fn checkpoint(&self) -> Checkpoint<S> {
        Checkpoint {
            config: self.network.config().clone(),
            alphabet: self.alphabet.clone(),
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            best_params: self.best_params.clone(),
            stats: self.stats.clone(),
            meta: TrainingMeta {
                epoch: self.epoch,
                best_dev_ler: self.best_dev_ler,
                best_epoch: self.best_epoch,
                evals_since_best: self.evals_since_best,
                finished: self.finished,
                rng: RngState::capture(&self.rng),
                options: self.options.clone(),
            },
        }
    }

    /// Checkpoint holding the best-on-dev parameters as its live weights.
    pub fn best_checkpoint(&self) -> Checkpoint<S> {
        let mut ckpt = self.checkpoint();
        if let Some(best) = &self.best_params {
            ckpt.params = best.clone();
        }
        ckpt
    }

    pub fn evaluate(
        &self,
        utterances: &[Utterance<S>],
        map: Option<&SymbolMap>,
    ) -> Result<EvalReport> {
        evaluate(&self.network, &self.params, utterances, &self.alphabet, map)
    }

    /// One pass over `train`, followed by a dev evaluation when due.
    pub fn run_epoch(
        &mut self,
        train: &[Utterance<S>],
        dev: &[Utterance<S>],
        map: Option<&SymbolMap>,
    ) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        if dev.is_empty() {
            return Err(Error::InvalidArgument(
                "dev set is empty; it drives early stopping".into(),
            ));
        }
        let start = Instant::now();
        let epoch = self.epoch + 1;
        let stage = self.optimizer.stage;
        let lengths: Vec<usize> = train.iter().map(Utterance::frames).collect();
        let order = batch_order(
            &lengths,
            self.options.batch_size,
            &mut self.rng,
            self.options.shuffle,
            self.options.sort_by_length,
        )?;
        let mut loss_total = 0.0;
        let mut trained = 0usize;
        let mut skipped = 0usize;
        for (b, batch) in order.iter().enumerate() {
            let mut grads = self.params.zeros_like();
            let mut used = 0usize;
            for &i in batch {
                let mut item_rng = ChaCha8Rng::seed_from_u64(self.rng.gen());
                let u = &train[i];
                let mode = Mode::Train(&mut item_rng as &mut dyn RngCore);
                match accumulate_utterance(
                    &self.network,
                    &self.params,
                    &u.features,
                    &u.labels,
                    mode,
                    &mut grads,
                )? {
                    None => skipped += 1,
                    Some(loss) if !loss.is_finite() => {
                        return Err(self.non_finite(epoch, b, batch, train));
                    }
                    Some(loss) => {
                        loss_total += loss.as_f64();
                        used += 1;
                    }
                }
            }
            if used == 0 {
                continue;
            }
            if self.options.reduction == LossReduction::Mean {
                grads.scale(S::lit(1.0 / used as f64));
            }
            if !grads.is_finite() {
                return Err(self.non_finite(epoch, b, batch, train));
            }
            self.optimizer.apply(&mut self.params, &grads)?;
            if !self.params.is_finite() {
                return Err(self.non_finite(epoch, b, batch, train));
            }
            trained += used;
        }
        if trained == 0 {
            return Err(Error::InvalidArgument(format!(
                "every training utterance was skipped as infeasible ({skipped})"
            )));
        }
        self.epoch = epoch;

        let due = epoch % self.options.eval_every == 0 || epoch >= self.options.max_epochs;
        let (mut dev_ler, mut improved, mut switched) = (None, false, false);
        if due {
            let ler = self.evaluate(dev, map)?.error_rate;
            dev_ler = Some(ler);
            if self.best_dev_ler.map_or(true, |best| ler < best) {
                self.best_dev_ler = Some(ler);
                self.best_epoch = Some(epoch);
                self.best_params = Some(self.params.clone());
                self.evals_since_best = 0;
                improved = true;
            } else {
                self.evals_since_best += 1;
                if self.evals_since_best >= self.options.patience {
                    match (self.optimizer.stage, self.options.fine_tune) {
                        (Stage::Adam, Some(hyper)) => {
                            self.params = self.best_params().clone();
                            self.optimizer = OptimizerState::new(Stage::Sgd, hyper, &self.params);
                            self.evals_since_best = 0;
                            switched = true;
                        }
                        _ => self.finished = true,
                    }
                }
            }
        }
        Ok(EpochRecord {
            metrics: MetricsLine {
                epoch,
                stage,
                train_loss: loss_total / trained as f64,
                dev_ler,
                seconds: self
                    .options
                    .record_seconds
                    .then(|| start.elapsed().as_secs_f64()),
            },
            skipped,
            improved,
            switched,
        })
    }

    fn non_finite(
        &self,
        epoch: usize,
        batch: usize,
        members: &[usize],
        train: &[Utterance<S>],
    ) -> Error {
        Error::NonFiniteLoss {
            epoch,
            batch,
            utterances: members.iter().map(|&i| train[i].id.clone()).collect(),
        }
    }
}

fn check_alphabet(network: &Network, alphabet: &Alphabet) -> Result<()> {
    if alphabet.size() != network.alphabet_size() {
        return Err(Error::InvalidArgument(format!(
            "alphabet has {} symbols including blank, network emits {}",
            alphabet.size(),
            network.alphabet_size()
        )));
    }
    Ok(())
}

/// Files written by [`run_training`] into its output directory.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub metrics: PathBuf,
    pub best: PathBuf,
    pub last: PathBuf,
}

impl RunLayout {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        RunLayout {
            metrics: dir.join("metrics.jsonl"),
            best: dir.join("best.ckpt"),
            last: dir.join("last.ckpt"),
        }
    }
}

/// Trains until done, appending one JSON line per epoch to the metrics log
/// and rewriting `last.ckpt` every epoch and `best.ckpt` on improvement.
pub fn run_training<S: Scalar>(
    trainer: &mut Trainer<S>,
    train: &[Utterance<S>],
    dev: &[Utterance<S>],
    map: Option<&SymbolMap>,
    dir: impl AsRef<Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunLayout> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let layout = RunLayout::new(dir);
    if trainer.epoch() == 0 && layout.metrics.exists() {
        std::fs::remove_file(&layout.metrics).map_err(|e| Error::io(&layout.metrics, e))?;
    }
    while !trainer.is_done() {
        let record = trainer.run_epoch(train, dev, map)?;
        let mut line = serde_json::to_string(&record.metrics)?;
        line.push('\n');
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&layout.metrics)
            .map_err(|e| Error::io(&layout.metrics, e))?;
        log.write_all(line.as_bytes())
            .map_err(|e| Error::io(&layout.metrics, e))?;
        if record.improved {
            trainer.best_checkpoint().save(&layout.best)?;
        }
        trainer.checkpoint().save(&layout.last)?;
        on_epoch(&record);
    }
    if !layout.best.exists() {
        trainer.best_checkpoint().save(&layout.best)?;
    }
    Ok(layout)
}

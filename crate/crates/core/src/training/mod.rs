//! Optimizers and the training loop.

mod optim;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbones::Model;
use crate::error::{Error, Result};
use crate::evaluation::mean_eval;
use crate::tensor::{read_text, write_file, ParamStore};
use crate::trajdata::SequenceSample;

pub use optim::{adam_step, clip_global_norm, global_norm, sgd_step, AdamMoments, Optimizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Multiply the learning rate by `decay_factor` every `decay_every`
    /// epochs; 0 keeps it constant.
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::adam_regime()
    }
}

impl OptimizerConfig {
    /// Adam, lr 1e-4, batch 16, 200 epochs.
    pub fn adam_regime() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-4,
            batch_size: 16,
            epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 10.0,
            decay_every: 0,
            decay_factor: 0.1,
        }
    }

    /// SGD, lr 0.01, batch 64, 250 epochs.
    pub fn sgd_regime() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 0.01,
            batch_size: 64,
            epochs: 250,
            ..OptimizerConfig::adam_regime()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("lr must be > 0 and batch_size ≥ 1".into()));
        }
        if self.clip_norm < 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("clip_norm ≥ 0 and betas in [0, 1) required".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match epoch.checked_div(self.decay_every) {
            None => self.lr,
            Some(k) => self.lr * self.decay_factor.powi(k as i32),
        }
    }
}

/// Resumable progress of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub seed: u64,
    pub epoch: usize,
    /// Next batch within `epoch`.
    pub batch: usize,
    pub step: u64,
    /// Sum of per-sequence losses so far in `epoch`.
    pub running_loss: f64,
    pub running_count: usize,
    pub best_val_ade: Option<f64>,
    pub best_epoch: Option<usize>,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        TrainState {
            seed,
            epoch: 0,
            batch: 0,
            step: 0,
            running_loss: 0.0,
            running_count: 0,
            best_val_ade: None,
            best_epoch: None,
        }
    }
}

/// Order of training sequences in `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Mean loss and mean gradient over `batch`. Per-sequence work may run in
/// parallel; results are combined in batch order.
pub fn batch_gradient(
    model: &Model,
    data: &[SequenceSample],
    batch: &[usize],
    step: u64,
    parallel: bool,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let work = |&k: &usize| -> Result<(f64, Vec<Vec<f64>>)> {
        let diverged = |loss: f64| Error::Divergence { step, sequence: k, loss };
        match model.loss_and_grads(&data[k]) {
            Ok((loss, grads)) if loss.is_finite() => Ok((loss, grads)),
            Ok((loss, _)) => Err(diverged(loss)),
            Err(Error::NonFinite { .. }) => Err(diverged(f64::NAN)),
            Err(e) => Err(e),
        }
    };
    let results: Vec<Result<(f64, Vec<Vec<f64>>)>> = if parallel {
        batch.par_iter().map(work).collect()
    } else {
        batch.iter().map(work).collect()
    };
    let mut losses = Vec::with_capacity(batch.len());
    let mut sum: Vec<Vec<f64>> = model.params().iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
    for r in results {
        let (loss, grads) = r?;
        losses.push(loss);
        for (s, g) in sum.iter_mut().zip(&grads) {
            for (a, b) in s.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for s in &mut sum {
        for a in s.iter_mut() {
            *a *= inv;
        }
    }
    Ok((losses, sum))
}

/// One training run: model, optimizer moments and progress.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: Optimizer,
    pub state: TrainState,
    pub cfg: OptimizerConfig,
    pub parallel: bool,
}

/// What a call to [`Trainer::step`] did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// A batch was applied; the epoch continues.
    Batch,
    /// A batch was applied and it was the last of the epoch; carries the
    /// epoch's mean training NLL.
    EpochEnd { epoch: usize, train_nll: f64 },
}

impl Trainer {
    pub fn new(model: Model, cfg: &OptimizerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let optimizer = Optimizer::new(cfg, model.params());
        Ok(Trainer {
            model,
            optimizer,
            state: TrainState::new(seed),
            cfg: cfg.clone(),
            parallel: true,
        })
    }

    /// Applies the next batch of the current epoch.
    pub fn step(&mut self, train: &[SequenceSample]) -> Result<StepOutcome> {
        if train.is_empty() {
            return Err(Error::EmptySet("training set"));
        }
        let order = epoch_order(train.len(), self.state.seed, self.state.epoch);
        let bs = self.cfg.batch_size;
        let n_batches = order.len().div_ceil(bs);
        let start = self.state.batch * bs;
        let batch = &order[start..(start + bs).min(order.len())];
        let (losses, mut grads) = batch_gradient(&self.model, train, batch, self.state.step, self.parallel)?;
        if self.cfg.clip_norm > 0.0 {
            clip_global_norm(&mut grads, self.cfg.clip_norm);
        }
        let lr = self.cfg.lr_at(self.state.epoch);
        self.optimizer.step(self.model.params_mut(), &grads, lr);
        self.state.step += 1;
        self.state.running_loss += losses.iter().sum::<f64>();
        self.state.running_count += losses.len();
        self.state.batch += 1;
        if self.state.batch < n_batches {
            return Ok(StepOutcome::Batch);
        }
        let out = StepOutcome::EpochEnd {
            epoch: self.state.epoch,
            train_nll: self.state.running_loss / self.state.running_count as f64,
        };
        self.state.epoch += 1;
        self.state.batch = 0;
        self.state.running_loss = 0.0;
        self.state.running_count = 0;
        Ok(out)
    }

    /// Writes model, optimizer moments and progress into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        self.model.save(dir)?;
        self.optimizer.save(&dir.join("optimizer.bin"))?;
        let text = toml::to_string(&CheckpointMeta {
            state: self.state.clone(),
            optimizer: self.cfg.clone(),
            adam_t: self.optimizer.t(),
        })
        .map_err(|e| Error::Config(e.to_string()))?;
        write_file(&dir.join("state.toml"), text.as_bytes())
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let model = Model::load(dir)?;
        let text = read_text(&dir.join("state.toml"))?;
        let meta: CheckpointMeta = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let mut optimizer = Optimizer::new(&meta.optimizer, model.params());
        optimizer.load(&dir.join("optimizer.bin"), meta.adam_t)?;
        Ok(Trainer {
            model,
            optimizer,
            state: meta.state,
            cfg: meta.optimizer,
            parallel: true,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    state: TrainState,
    optimizer: OptimizerConfig,
    adam_t: u64,
}

/// One metrics-log line.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_ade: Option<f64>,
    pub val_fde: Option<f64>,
    pub seconds: f64,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        format!(
            "{}\t{:.6}\t{}\t{}\t{:.3}",
            self.epoch,
            self.train_nll,
            opt(self.val_ade),
            opt(self.val_fde),
            self.seconds
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Directory for `metrics.tsv`, `best/`, `last/` and divergence dumps.
    pub run_dir: Option<PathBuf>,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<u64>,
    pub sequential: bool,
    /// Suppress the per-epoch stderr progress line.
    pub quiet: bool,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub state: TrainState,
    pub history: Vec<EpochRecord>,
    /// Parameters of the best validation epoch, or the last ones when no
    /// validation ran.
    pub best: ParamStore,
}

/// Trains `model` for `cfg.epochs` epochs (or `max_steps`).
pub fn fit(
    model: Model,
    train: &[SequenceSample],
    val: &[SequenceSample],
    cfg: &OptimizerConfig,
    seed: u64,
    opts: &FitOptions,
) -> Result<(Model, FitOutcome)> {
    let trainer = Trainer::new(model, cfg, seed)?;
    resume_fit(trainer, train, val, opts)
}

/// Continues a (possibly restored) trainer up to `cfg.epochs` epochs.
pub fn resume_fit(
    mut trainer: Trainer,
    train: &[SequenceSample],
    val: &[SequenceSample],
    opts: &FitOptions,
) -> Result<(Model, FitOutcome)> {
    if train.is_empty() {
        return Err(Error::EmptySet("training set"));
    }
    trainer.parallel = !opts.sequential;
    let mut history = Vec::new();
    let mut best: Option<ParamStore> = None;
    let mut log = String::new();
    if let Some(dir) = &opts.run_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let path = dir.join("metrics.tsv");
        if trainer.state.step > 0 {
            log = read_text(&path).unwrap_or_default();
        }
        if log.is_empty() {
            log.push_str("epoch\ttrain_nll\tval_ade\tval_fde\tseconds\n");
        }
    }
    let mut clock = Instant::now();
    while trainer.state.epoch < trainer.cfg.epochs {
        if opts.max_steps.is_some_and(|m| trainer.state.step >= m) {
            break;
        }
        let outcome = match trainer.step(train) {
            Ok(o) => o,
            Err(e @ Error::Divergence { .. }) => {
                if let Some(dir) = &opts.run_dir {
                    let dump = toml::to_string(&trainer.state).unwrap_or_default();
                    write_file(&dir.join("divergence.toml"), format!("# {e}\n{dump}").as_bytes())?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let StepOutcome::EpochEnd { epoch, train_nll } = outcome else {
            continue;
        };
        let (val_ade, val_fde) = if val.is_empty() {
            (None, None)
        } else {
            let (a, f) = mean_eval(&trainer.model, val)?;
            (Some(a), Some(f))
        };
        if let Some(a) = val_ade {
            if trainer.state.best_val_ade.is_none_or(|b| a < b) {
                trainer.state.best_val_ade = Some(a);
                trainer.state.best_epoch = Some(epoch);
                best = Some(trainer.model.params().clone());
                if let Some(dir) = &opts.run_dir {
                    trainer.model.save(&dir.join("best"))?;
                }
            }
        }
        let rec = EpochRecord {
            epoch,
            train_nll,
            val_ade,
            val_fde,
            seconds: clock.elapsed().as_secs_f64(),
        };
        clock = Instant::now();
        if !opts.quiet {
            eprintln!("{}", rec.log_line());
        }
        if let Some(dir) = &opts.run_dir {
            writeln!(log, "{}", rec.log_line()).unwrap();
            write_file(&dir.join("metrics.tsv"), log.as_bytes())?;
            trainer.save_checkpoint(&dir.join("last"))?;
        }
        history.push(rec);
    }
    if best.is_none() && trainer.state.best_epoch.is_some() {
        if let Some(dir) = &opts.run_dir {
            best = Model::load(&dir.join("best")).ok().map(|m| m.params().clone());
        }
    }
    let best = best.unwrap_or_else(|| trainer.model.params().clone());
    if let Some(dir) = &opts.run_dir {
        if val.is_empty() {
            trainer.model.save(&dir.join("best"))?;
        }
    }
    let outcome = FitOutcome {
        state: trainer.state.clone(),
        history,
        best,
    };
    Ok((trainer.model, outcome))
}

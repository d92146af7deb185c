//! Shared training configuration and the evaluate-every/patience loop used by
//! every trainer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters shared by the CF, semantic and fusion trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Epochs between validation evaluations.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// InfoNCE temperature.
    pub temperature: f64,
    /// Output embedding dimension.
    pub dim: usize,
    /// Propagation layers of the graph encoder.
    pub layers: usize,
    /// Globally sampled negatives per semantic anchor.
    pub n_neg: usize,
    /// Uniform candidate pool scanned by hard-negative mining.
    pub hard_pool: usize,
    /// Mined negatives per anchor.
    pub hard_negatives: usize,
    /// Cutoff of the validation recall that drives early stopping.
    pub eval_k: usize,
    /// Whether the semantic projection has a bias.
    pub use_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 2048,
            weight_decay: 1e-4,
            eval_every: 5,
            patience: 5,
            max_epochs: 1000,
            seed: 0,
            temperature: 0.15,
            dim: 64,
            layers: 2,
            n_neg: 256,
            hard_pool: 512,
            hard_negatives: 16,
            eval_k: 20,
            use_bias: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_f = [("lr", self.lr), ("temperature", self.temperature)];
        for (name, v) in positive_f {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        let positive_n = [
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("dim", self.dim),
            ("n_neg", self.n_neg),
            ("eval_k", self.eval_k),
        ];
        for (name, v) in positive_n {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Standard deviation of the normal embedding init, `0.1 / √d`.
    pub fn init_std(&self) -> f64 {
        0.1 / (self.dim as f64).sqrt()
    }
}

/// Tracks the best validation metric and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_index: usize,
    stale: usize,
    seen: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience: patience.max(1),
            best: None,
            best_index: 0,
            stale: 0,
            seen: 0,
        }
    }

    /// Records one evaluation. Only a strictly larger value counts as an improvement.
    pub fn observe(&mut self, metric: f64) -> Observation {
        let idx = self.seen;
        self.seen += 1;
        let improved = self.best.is_none_or(|b| metric > b);
        if improved {
            self.best = Some(metric);
            self.best_index = idx;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Observation {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Index (in evaluation order) of the best value.
    pub fn best_index(&self) -> usize {
        self.best_index
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub loss: f64,
    pub metric: f64,
}

/// Result of a training run: the best checkpoint and how it was reached.
#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub best_metric: f64,
    /// 1-based epoch of the best checkpoint.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub history: Vec<EvalRecord>,
}

/// A trainer that can be stepped one epoch at a time.
pub trait Trainer {
    type Model: Clone;

    /// Runs one epoch and returns its mean loss.
    fn run_epoch(&mut self) -> Result<f64>;

    /// Validation metric of the current parameters (higher is better).
    fn evaluate(&self) -> f64;

    fn snapshot(&self) -> Self::Model;
}

/// Runs epochs until early stopping fires or `max_epochs` is reached,
/// evaluating every `eval_every` epochs (and after the final epoch).
pub fn fit_with_early_stopping<T: Trainer>(cfg: &TrainConfig, trainer: &mut T) -> Result<TrainOutcome<T::Model>> {
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = trainer.snapshot();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut epochs_run = 0;
    for epoch in 0..cfg.max_epochs {
        let loss = trainer.run_epoch()?;
        epochs_run = epoch + 1;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss diverged at epoch {epochs_run}")));
        }
        let last = epoch + 1 == cfg.max_epochs;
        if (epoch + 1) % cfg.eval_every != 0 && !last {
            continue;
        }
        let metric = trainer.evaluate();
        history.push(EvalRecord {
            epoch: epochs_run,
            loss,
            metric,
        });
        log::debug!("epoch {epochs_run}: loss {loss:.6} val {metric:.6}");
        let obs = stopper.observe(metric);
        if obs.improved {
            best = trainer.snapshot();
            best_epoch = epochs_run;
        }
        if obs.stop {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        best_metric: stopper.best().unwrap_or(f64::NAN),
        best_epoch,
        epochs_run,
        history,
    })
}

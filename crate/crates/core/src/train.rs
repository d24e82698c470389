//! Mini-batch training loop: forward, cross-entropy, backward, ADAM.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;

use crate::checkpoint::load_checkpoint;
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::layer::SupportedBinaryLayer;
use crate::loss::softmax_cross_entropy;
use crate::network::{count_correct, GradRequest, Network, NetworkSpec};
use crate::optim::{adam_step, AdamConfig, OptimizerState};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitMode {
    /// Random shadow weights and supports.
    Random,
    /// Binary weights taken from a checkpoint.
    Pretrained(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportMode {
    /// `A` and `B` are trained.
    Learned,
    /// `A = 1`, `B = 0` throughout: a plain BNN.
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init: InitMode,
    pub supports: SupportMode,
    /// Only meaningful for pretrained init: also update `W` after loading.
    pub fine_tune_weights: bool,
    /// Whether [`ExperimentRecord::wall_seconds`] is measured or left at 0.
    pub record_wall_time: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 30,
            batch_size: 100,
            seed: 0,
            init: InitMode::Random,
            supports: SupportMode::Learned,
            fine_tune_weights: false,
            record_wall_time: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.supports == SupportMode::Fixed && !self.update_request().weights {
            return Err(Error::Config(
                "frozen weights with fixed supports leaves nothing to train".into(),
            ));
        }
        Ok(())
    }

    /// Which tensors the optimizer touches under this configuration.
    pub fn update_request(&self) -> GradRequest {
        GradRequest {
            weights: match self.init {
                InitMode::Random => true,
                InitMode::Pretrained(_) => self.fine_tune_weights,
            },
            supports: self.supports == SupportMode::Learned,
        }
    }
}

/// One row of the per-epoch learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub wall_seconds: f64,
}

/// Builds the starting network for `cfg.init`.
///
/// A pretrained checkpoint must match `spec`'s widths. Its supports are kept
/// when the block sizes agree and reset to `(1, 0)` otherwise.
pub fn init_network<T: Scalar>(spec: &NetworkSpec, cfg: &TrainingConfig) -> Result<Network<T>> {
    spec.validate()?;
    match (&cfg.init, cfg.supports) {
        (InitMode::Random, SupportMode::Learned) => Network::random(spec, cfg.seed),
        (InitMode::Random, SupportMode::Fixed) => Network::plain_random(spec, cfg.seed),
        (InitMode::Pretrained(path), supports) => {
            let base: Network<T> = load_checkpoint(path)?;
            let base_spec = base.spec();
            if base_spec.layer_sizes != spec.layer_sizes || base_spec.fan_in_scaling != spec.fan_in_scaling {
                return Err(Error::Config(format!(
                    "checkpoint layers {:?} (fan-in scaling {}) do not match {:?} (fan-in scaling {})",
                    base_spec.layer_sizes, base_spec.fan_in_scaling, spec.layer_sizes, spec.fan_in_scaling
                )));
            }
            let layers = base
                .layers()
                .iter()
                .zip(&spec.block_sizes)
                .map(|(l, &p)| {
                    if p == l.block_size() && supports == SupportMode::Learned {
                        Ok(l.clone())
                    } else {
                        SupportedBinaryLayer::plain(l.weights().clone(), p)?.with_gain(l.gain())
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Network::new(layers)
        }
    }
}

/// Classification accuracy in `[0, 1]`, optionally with blocks masked out.
pub fn evaluate<T: Scalar>(net: &Network<T>, ds: &Dataset, mask: Option<&[Array2<bool>]>) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (x, labels) in ds.chunks::<T>(1000) {
        let logits = net.predict(x.view(), mask)?;
        correct += count_correct(logits.view(), labels);
    }
    Ok(correct as f64 / ds.len() as f64)
}

pub fn train<T: Scalar>(
    net: Network<T>,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainingConfig,
) -> Result<(Network<T>, Vec<ExperimentRecord>)> {
    train_with(net, train_set, test_set, cfg, |_| {})
}

/// Like [`train`], calling `on_epoch` after each epoch's record is complete.
pub fn train_with<T: Scalar>(
    mut net: Network<T>,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&ExperimentRecord),
) -> Result<(Network<T>, Vec<ExperimentRecord>)> {
    cfg.validate()?;
    let want = cfg.update_request();
    let mut state = OptimizerState::new(&net);
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let diverged = || Error::Divergence {
            epoch,
            last_good_epoch: epoch.checked_sub(1),
        };
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in batches::<T>(train_set, cfg.batch_size, cfg.seed, epoch as u64)? {
            let (logits, trace) = net.forward(batch.x.view())?;
            let (loss, dlogits) = softmax_cross_entropy(logits.view(), batch.t.view()).map_err(|e| match e {
                Error::Numeric(_) => diverged(),
                other => other,
            })?;
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(diverged());
            }
            loss_sum += loss * batch.labels.len() as f64;
            correct += count_correct(logits.view(), &batch.labels);
            let grads = net.backward(&trace, dlogits.view(), want)?;
            adam_step(&mut net, &grads, &mut state, &cfg.adam, want).map_err(|e| match e {
                Error::Numeric(_) => diverged(),
                other => other,
            })?;
        }
        let n = train_set.len() as f64;
        let test_acc = evaluate(&net, test_set, None)?;
        let record = ExperimentRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            test_acc,
            wall_seconds: if cfg.record_wall_time {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        on_epoch(&record);
        records.push(record);
    }
    Ok((net, records))
}

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use sbnn::hwsim::HardwareModel;
use sbnn::optim::AdamConfig;
use sbnn::train::{InitMode, SupportMode, TrainingConfig};
use sbnn::NetworkSpec;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Random,
    Pretrained(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supports {
    Learned,
    Fixed,
}

/// Values swept by `sbnn sweep <axis>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub block_sizes: Vec<usize>,
    pub support_bits: Vec<u32>,
    pub drop_fracs: Vec<f64>,
    pub eps: Vec<f64>,
    pub dac_bits: Vec<u32>,
    pub adc_bits: Vec<u32>,
    pub sigmas: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            block_sizes: vec![2, 4, 8, 16, 32],
            support_bits: vec![3, 4, 5, 6, 7, 8],
            drop_fracs: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.52, 0.6, 0.7, 0.8, 0.9],
            eps: Vec::new(),
            dac_bits: vec![4, 5, 6, 7, 8],
            adc_bits: vec![4, 5, 6, 7, 8],
            sigmas: vec![0.0, 0.01, 0.02, 0.03, 0.04, 0.05],
        }
    }
}

/// Everything a run needs, serializable as the JSON snapshot written next to
/// each run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out: PathBuf,
    pub layer_sizes: Vec<usize>,
    pub block_size: usize,
    /// Scale each layer output by `1 / sqrt(fan_in)`.
    pub fan_in_scaling: bool,
    /// Range of the initial multiplicative supports.
    pub support_init: [f64; 2],
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init: Init,
    pub supports: Supports,
    pub fine_tune_weights: bool,
    /// Train on the first N training samples only.
    pub train_samples: Option<usize>,
    /// Evaluate on the first N test samples only.
    pub test_samples: Option<usize>,
    pub record_wall_time: bool,
    pub checkpoint: Option<PathBuf>,
    pub support_bits: Option<u32>,
    pub eps: Option<f64>,
    pub drop_frac: Option<f64>,
    pub hw: bool,
    pub dac_bits: u32,
    pub adc_bits: u32,
    pub i_lsb: f64,
    pub sigma: f64,
    pub mc_trials: usize,
    pub bank_rows: usize,
    pub bank_cols: usize,
    pub hw_seed: u64,
    /// Rows of the Monte Carlo variation column.
    pub mc_rows: usize,
    /// Input code on every row of that column; defaults to DAC full scale.
    pub mc_code: Option<u32>,
    pub sweep: SweepGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let hw = HardwareModel::default();
        Self {
            data_dir: PathBuf::from("data/mnist"),
            out: PathBuf::from("runs/default"),
            layer_sizes: vec![784, 256, 256, 256, 10],
            block_size: 16,
            fan_in_scaling: true,
            support_init: sbnn::layer::DEFAULT_SUPPORT_INIT,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            epochs: 30,
            batch_size: 100,
            seed: 0,
            init: Init::Random,
            supports: Supports::Learned,
            fine_tune_weights: false,
            train_samples: None,
            test_samples: None,
            record_wall_time: false,
            checkpoint: None,
            support_bits: None,
            eps: None,
            drop_frac: None,
            hw: false,
            dac_bits: hw.dac_bits,
            adc_bits: hw.adc_bits,
            i_lsb: hw.i_lsb,
            sigma: hw.sigma_cell,
            mc_trials: hw.mc_trials,
            bank_rows: hw.bank_rows,
            bank_cols: hw.bank_cols,
            hw_seed: hw.seed,
            mc_rows: 32,
            mc_code: None,
            sweep: SweepGrid::default(),
        }
    }
}

/// Flags shared by every subcommand; any flag given wins over the JSON file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub block_size: Option<usize>,
    #[arg(long)]
    pub support_bits: Option<u32>,
    #[arg(long)]
    pub dac_bits: Option<u32>,
    #[arg(long)]
    pub adc_bits: Option<u32>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub drop_frac: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub mc_trials: Option<usize>,
    /// Route inference through the hardware simulator
    #[arg(long)]
    pub hw: bool,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub train_samples: Option<usize>,
    #[arg(long)]
    pub test_samples: Option<usize>,
    /// Train a plain BNN: supports fixed at a = 1, b = 0
    #[arg(long)]
    pub plain: bool,
    /// Start from the binary weights of this checkpoint (frozen unless --fine-tune-weights)
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[arg(long)]
    pub fine_tune_weights: bool,
    /// Fill the wall_seconds metrics column (makes the CSV non-reproducible)
    #[arg(long)]
    pub record_wall_time: bool,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v.into();
                }
            )*};
        }
        take!(seed, block_size, dac_bits, adc_bits, sigma, mc_trials, out, data_dir, epochs, batch_size, learning_rate);
        if self.support_bits.is_some() {
            cfg.support_bits = self.support_bits;
        }
        if self.eps.is_some() {
            cfg.eps = self.eps;
            cfg.drop_frac = None;
        }
        if self.drop_frac.is_some() {
            cfg.drop_frac = self.drop_frac;
            cfg.eps = None;
        }
        if self.checkpoint.is_some() {
            cfg.checkpoint = self.checkpoint.clone();
        }
        if self.train_samples.is_some() {
            cfg.train_samples = self.train_samples;
        }
        if self.test_samples.is_some() {
            cfg.test_samples = self.test_samples;
        }
        if let Some(p) = &self.pretrained {
            cfg.init = Init::Pretrained(p.clone());
        }
        cfg.hw |= self.hw;
        cfg.fine_tune_weights |= self.fine_tune_weights;
        cfg.record_wall_time |= self.record_wall_time;
        if self.plain {
            cfg.supports = Supports::Fixed;
        }
        if cfg.eps.is_some() && cfg.drop_frac.is_some() {
            return Err(CliError::Usage("give either eps or drop_frac, not both".into()));
        }
        Ok(cfg)
    }
}

impl RunConfig {
    /// Input width rounded up so the first layer's block size divides it.
    pub fn padded_layer_sizes(&self) -> Vec<usize> {
        let mut sizes = self.layer_sizes.clone();
        if let Some(first) = sizes.first_mut() {
            *first = first.div_ceil(self.block_size.max(1)) * self.block_size.max(1);
        }
        sizes
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec::uniform(&self.padded_layer_sizes(), self.block_size).with_fan_in_scaling(self.fan_in_scaling)
            .with_support_init(self.support_init)
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.adam_epsilon,
            },
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            init: match &self.init {
                Init::Random => InitMode::Random,
                Init::Pretrained(p) => InitMode::Pretrained(p.clone()),
            },
            supports: match self.supports {
                Supports::Learned => SupportMode::Learned,
                Supports::Fixed => SupportMode::Fixed,
            },
            fine_tune_weights: self.fine_tune_weights,
            record_wall_time: self.record_wall_time,
        }
    }

    pub fn hardware(&self) -> HardwareModel {
        HardwareModel {
            dac_bits: self.dac_bits,
            adc_bits: self.adc_bits,
            i_lsb: self.i_lsb,
            sigma_cell: self.sigma,
            bank_rows: self.bank_rows,
            bank_cols: self.bank_cols,
            mc_trials: self.mc_trials,
            seed: self.hw_seed,
        }
    }

    pub fn write_snapshot(&self, dir: &Path, name: &str) -> Result<(), CliError> {
        fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(dir.join(name), text + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = std::env::temp_dir().join(format!("sbnn-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.json");
        fs::write(&path, r#"{"seed": 5, "block_size": 4, "epochs": 2}"#).unwrap();
        let ov = Overrides {
            config: Some(path),
            seed: Some(9),
            ..Overrides::default()
        };
        let cfg = ov.resolve().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.block_size, 4);
        assert_eq!(cfg.epochs, 2);
        assert_eq!(cfg.batch_size, 100);
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = RunConfig {
            init: Init::Pretrained("a/b.sbnn".into()),
            drop_frac: Some(0.52),
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn input_padded_to_block_multiple() {
        let cfg = RunConfig {
            block_size: 32,
            ..RunConfig::default()
        };
        assert_eq!(cfg.padded_layer_sizes()[0], 800);
        assert_eq!(RunConfig::default().padded_layer_sizes()[0], 784);
    }
}

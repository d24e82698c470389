mod config;

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use sbnn::checkpoint::{load_checkpoint, save_checkpoint};
use sbnn::compression::{activity_metric, prune_supports, quantize_network, BlockMask, PruneSpec, QuantSpec};
use sbnn::data::{Dataset, Split};
use sbnn::hwsim::{hw_forward, monte_carlo_dot, HardwareModel};
use sbnn::network::count_correct;
use sbnn::report::{write_metrics, write_precision, write_sweep, write_variation, SweepRow};
use sbnn::train::{evaluate, init_network, train_with, InitMode};
use sbnn::Network32;

use config::{Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{0}")]
    Corrupt(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Corrupt(_) => 4,
        }
    }
}

impl From<sbnn::Error> for CliError {
    fn from(e: sbnn::Error) -> Self {
        match e {
            sbnn::Error::Divergence { .. } => CliError::Divergence(e.to_string()),
            sbnn::Error::Corruption(_) | sbnn::Error::Version { .. } => CliError::Corrupt(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sbnn", version, about = "Train, evaluate and sweep supported binary networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network and write checkpoint, metrics and config snapshot
    Train(Overrides),
    /// Print test accuracy and activity of a checkpoint
    Eval(Overrides),
    /// Run one sweep axis and write its CSV
    Sweep {
        #[arg(value_enum)]
        axis: Axis,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Axis {
    BlockSize,
    SupportBits,
    Prune,
    AdcDac,
    Sigma,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let res = match cli.command {
        Command::Train(ov) => ov.resolve().and_then(|cfg| cmd_train(&cfg)),
        Command::Eval(ov) => ov.resolve().and_then(|cfg| cmd_eval(&cfg)),
        Command::Sweep { axis, overrides } => overrides.resolve().and_then(|cfg| cmd_sweep(&cfg, axis)),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_split(cfg: &RunConfig, split: Split, width: usize) -> Result<Dataset, CliError> {
    let ds = Dataset::load(&cfg.data_dir, split).map_err(|e| {
        CliError::Usage(format!("cannot load MNIST {split:?} from {}: {e}", cfg.data_dir.display()))
    })?;
    let ds = match (split, cfg.train_samples, cfg.test_samples) {
        (Split::Train, Some(n), _) | (Split::Test, _, Some(n)) => ds.subset(n),
        _ => ds,
    };
    if width == ds.width() {
        Ok(ds)
    } else {
        Ok(ds.padded(width)?)
    }
}

fn load_net(path: &Path) -> Result<Network32, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} not found", path.display())));
    }
    load_checkpoint(path).map_err(|e| CliError::Corrupt(format!("checkpoint {}: {e}", path.display())))
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join("model.sbnn"))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Trains per `cfg` and writes `model.sbnn`, `metrics.csv` and `config.json`
/// into `out`. Returns the final test accuracy.
fn train_into(cfg: &RunConfig, out: &Path) -> Result<f64, CliError> {
    let spec = cfg.network_spec();
    spec.validate()?;
    let tc = cfg.training();
    tc.validate()?;
    if let InitMode::Pretrained(path) = &tc.init {
        load_net(path)?;
    }
    let width = spec.layer_sizes[0];
    let train_set = load_split(cfg, Split::Train, width)?;
    let test_set = load_split(cfg, Split::Test, width)?;
    let mut snapshot = cfg.clone();
    snapshot.out = out.to_path_buf();
    snapshot.write_snapshot(out, "config.json")?;

    let net = init_network::<f32>(&spec, &tc)?;
    let (net, records) = train_with(net, &train_set, &test_set, &tc, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  train {:.4}  test {:.4}",
            r.epoch, r.train_loss, r.train_acc, r.test_acc
        );
    })?;
    write_metrics(create(&out.join("metrics.csv"))?, &records)?;
    save_checkpoint(&net, out.join("model.sbnn"))?;
    Ok(records.last().map_or(0.0, |r| r.test_acc))
}

fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let acc = train_into(cfg, &cfg.out)?;
    println!("test_acc {acc}");
    Ok(())
}

/// Network with supports quantized if requested, plus the pruning mask.
fn prepared(net: &Network32, cfg: &RunConfig) -> Result<(Network32, BlockMask), CliError> {
    let net = match cfg.support_bits {
        Some(bits) => quantize_network(net, QuantSpec { support_bits: bits })?,
        None => net.clone(),
    };
    let mask = match (cfg.eps, cfg.drop_frac) {
        (Some(eps), _) => prune_supports(&net, PruneSpec::Threshold(eps))?,
        (_, Some(f)) => prune_supports(&net, PruneSpec::DropFraction(f))?,
        _ => BlockMask::all_active(&net),
    };
    Ok((net, mask))
}

fn hw_accuracy(net: &Network32, mask: &BlockMask, ds: &Dataset, model: &HardwareModel) -> Result<f64, CliError> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (x, labels) in ds.chunks::<f32>(1000) {
        let (logits, _) = hw_forward(net, Some(mask), x.view(), model)?;
        correct += count_correct(logits.view(), labels);
    }
    Ok(correct as f64 / ds.len() as f64)
}

fn accuracy(net: &Network32, mask: &BlockMask, ds: &Dataset, cfg: &RunConfig) -> Result<f64, CliError> {
    if cfg.hw {
        hw_accuracy(net, mask, ds, &cfg.hardware())
    } else {
        Ok(evaluate(net, ds, Some(&mask.layers))?)
    }
}

fn cmd_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let net = load_net(&checkpoint_path(cfg))?;
    if cfg.hw {
        cfg.hardware().validate()?;
    }
    let test_set = load_split(cfg, Split::Test, net.input_width())?;
    let (net, mask) = prepared(&net, cfg)?;
    let acc = accuracy(&net, &mask, &test_set, cfg)?;
    let activity = activity_metric(&mask);
    println!("test_acc {acc}");
    println!("activity {}", activity.overall);
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, axis: Axis) -> Result<(), CliError> {
    cfg.write_snapshot(&cfg.out, "config.json")?;
    match axis {
        Axis::BlockSize => sweep_block_size(cfg),
        Axis::SupportBits => sweep_support_bits(cfg),
        Axis::Prune => sweep_prune(cfg),
        Axis::AdcDac => sweep_adc_dac(cfg),
        Axis::Sigma => sweep_sigma(cfg),
    }
}

fn sweep_block_size(cfg: &RunConfig) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for &p in &cfg.sweep.block_sizes {
        let point = RunConfig {
            block_size: p,
            ..cfg.clone()
        };
        let acc = train_into(&point, &cfg.out.join(format!("p{p}")))?;
        eprintln!("block_size {p}: {acc}");
        rows.push(SweepRow {
            param: "block_size".into(),
            value: p as f64,
            test_acc: acc,
            activity: 1.0,
        });
    }
    write_sweep(create(&cfg.out.join("sweep_block_size.csv"))?, &rows)?;
    Ok(())
}

fn inference_setup(cfg: &RunConfig) -> Result<(Network32, Dataset), CliError> {
    let net = load_net(&checkpoint_path(cfg))?;
    let test_set = load_split(cfg, Split::Test, net.input_width())?;
    Ok((net, test_set))
}

fn sweep_support_bits(cfg: &RunConfig) -> Result<(), CliError> {
    let (net, test_set) = inference_setup(cfg)?;
    let mut rows = Vec::new();
    for &bits in &cfg.sweep.support_bits {
        let point = RunConfig {
            support_bits: Some(bits),
            ..cfg.clone()
        };
        let (qnet, mask) = prepared(&net, &point)?;
        rows.push(SweepRow {
            param: "support_bits".into(),
            value: f64::from(bits),
            test_acc: accuracy(&qnet, &mask, &test_set, &point)?,
            activity: activity_metric(&mask).overall,
        });
    }
    write_sweep(create(&cfg.out.join("sweep_support_bits.csv"))?, &rows)?;
    Ok(())
}

fn sweep_prune(cfg: &RunConfig) -> Result<(), CliError> {
    let (net, test_set) = inference_setup(cfg)?;
    let points = cfg
        .sweep
        .eps
        .iter()
        .map(|&e| ("eps", e, None, Some(e)))
        .chain(cfg.sweep.drop_fracs.iter().map(|&f| ("drop_frac", f, Some(f), None)));
    let mut rows = Vec::new();
    for (param, value, drop_frac, eps) in points {
        let point = RunConfig {
            drop_frac,
            eps,
            ..cfg.clone()
        };
        let (pnet, mask) = prepared(&net, &point)?;
        rows.push(SweepRow {
            param: param.into(),
            value,
            test_acc: accuracy(&pnet, &mask, &test_set, &point)?,
            activity: activity_metric(&mask).overall,
        });
    }
    write_sweep(create(&cfg.out.join("sweep_prune.csv"))?, &rows)?;
    Ok(())
}

fn sweep_adc_dac(cfg: &RunConfig) -> Result<(), CliError> {
    let (net, test_set) = inference_setup(cfg)?;
    let (net, mask) = prepared(&net, cfg)?;
    let mut rows = Vec::new();
    for &dac in &cfg.sweep.dac_bits {
        for &adc in &cfg.sweep.adc_bits {
            let model = HardwareModel {
                dac_bits: dac,
                adc_bits: adc,
                ..cfg.hardware()
            };
            let acc = hw_accuracy(&net, &mask, &test_set, &model)?;
            eprintln!("dac {dac} adc {adc}: {acc}");
            rows.push((dac, adc, acc));
        }
    }
    write_precision(create(&cfg.out.join("precision.csv"))?, &rows)?;
    Ok(())
}

/// Monte Carlo spread of one all-positive column per sigma, and hardware
/// accuracy per sigma when a checkpoint is available.
fn sweep_sigma(cfg: &RunConfig) -> Result<(), CliError> {
    let base = cfg.hardware();
    base.validate()?;
    let code = cfg.mc_code.unwrap_or_else(|| base.dac_max_code());
    let codes = vec![code; cfg.mc_rows];
    let weights = vec![1i8; cfg.mc_rows];
    let mut variation = Vec::new();
    for &sigma in &cfg.sweep.sigmas {
        let model = HardwareModel {
            sigma_cell: sigma,
            ..base
        };
        let mc = monte_carlo_dot(&codes, &weights, &model)?;
        eprintln!("sigma {sigma}: mean {} std {}", mc.mean, mc.std);
        variation.extend(mc.values.iter().enumerate().map(|(t, &v)| (sigma, t, v)));
    }
    write_variation(create(&cfg.out.join("variation.csv"))?, &variation)?;

    if cfg.checkpoint.is_some() || checkpoint_path(cfg).is_file() {
        let (net, test_set) = inference_setup(cfg)?;
        let (net, mask) = prepared(&net, cfg)?;
        let activity = activity_metric(&mask).overall;
        let mut rows = Vec::new();
        for &sigma in &cfg.sweep.sigmas {
            let model = HardwareModel {
                sigma_cell: sigma,
                ..base
            };
            rows.push(SweepRow {
                param: "sigma".into(),
                value: sigma,
                test_acc: hw_accuracy(&net, &mask, &test_set, &model)?,
                activity,
            });
        }
        write_sweep(create(&cfg.out.join("sweep_sigma.csv"))?, &rows)?;
    }
    Ok(())
}

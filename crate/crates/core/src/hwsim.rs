//! Behavioral model of the in-SRAM compute path.
//!
//! Inputs enter through a row DAC as integer current codes. Each binary
//! weight is stored on a complementary bitline pair, so a column delivers
//! `I+ - I-`, the signed dot product of the codes with the weight signs.
//! Every cell scales its current by a gain drawn from `N(1, sigma_cell)`. A
//! SAR ADC digitizes one block's column current at a time. The block's `a`
//! multiplies the digitized value and `b * sum(codes)` is added digitally.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::compression::{BlockMask, UniformQuantizer};
use crate::error::{shape_err, Error, Result};
use crate::network::{check_mask, Network};
use crate::scalar::Scalar;

/// Relative gain spread standing in for 30 mV of threshold-voltage variation.
pub const CALIBRATED_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct HardwareModel {
    pub dac_bits: u32,
    pub adc_bits: u32,
    /// Current of one DAC code step (arbitrary units).
    pub i_lsb: f64,
    /// Relative standard deviation of each cell's current gain.
    pub sigma_cell: f64,
    pub bank_rows: usize,
    pub bank_cols: usize,
    pub mc_trials: usize,
    pub seed: u64,
}

impl Default for HardwareModel {
    fn default() -> Self {
        Self {
            dac_bits: 5,
            adc_bits: 8,
            i_lsb: 1.0,
            sigma_cell: 0.0,
            bank_rows: 64,
            bank_cols: 64,
            mc_trials: 100,
            seed: 0,
        }
    }
}

impl HardwareModel {
    pub fn bank_8x8() -> Self {
        Self {
            bank_rows: 8,
            bank_cols: 8,
            ..Self::default()
        }
    }

    pub fn bank_64x64() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, bits) in [("dac_bits", self.dac_bits), ("adc_bits", self.adc_bits)] {
            if !(3..=16).contains(&bits) {
                return Err(Error::Config(format!("{name} must be in 3..=16, got {bits}")));
            }
        }
        if !(self.sigma_cell >= 0.0 && self.sigma_cell.is_finite()) {
            return Err(Error::Config(format!("sigma_cell must be >= 0, got {}", self.sigma_cell)));
        }
        if !(self.i_lsb > 0.0 && self.i_lsb.is_finite()) {
            return Err(Error::Config("i_lsb must be positive".into()));
        }
        if self.bank_rows == 0 || self.bank_cols == 0 {
            return Err(Error::Config("bank dimensions must be >= 1".into()));
        }
        if self.mc_trials == 0 {
            return Err(Error::Config("mc_trials must be >= 1".into()));
        }
        Ok(())
    }

    /// Largest DAC code, `2^dac_bits - 1`.
    pub fn dac_max_code(&self) -> u32 {
        (1u32 << self.dac_bits) - 1
    }

    /// Worst-case column current of `rows` cells all driven at full scale.
    pub fn full_scale(&self, rows: usize) -> f64 {
        rows as f64 * f64::from(self.dac_max_code()) * self.i_lsb
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DacSample {
    pub code: u32,
    pub current: f64,
    /// Input fell outside `[0, 1]` and was clamped.
    pub clamped: bool,
}

/// `code = round(x * (2^dac_bits - 1))`, `current = code * i_lsb`.
pub fn dac_encode(x: f64, model: &HardwareModel) -> DacSample {
    let clamped = !(0.0..=1.0).contains(&x);
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
    let code = (x * f64::from(model.dac_max_code())).round() as u32;
    DacSample {
        code,
        current: f64::from(code) * model.i_lsb,
        clamped,
    }
}

/// Signed column current `I+ - I-` for one column of cells. `weights` holds
/// `+1` or `-1` per row.
pub fn column_dot(codes: &[u32], weights: &[i8], gains: &[f64], model: &HardwareModel) -> Result<f64> {
    if codes.len() != weights.len() || codes.len() != gains.len() {
        return Err(shape_err(format!(
            "column of {} codes, {} weights, {} gains",
            codes.len(),
            weights.len(),
            gains.len()
        )));
    }
    let (mut pos, mut neg) = (0.0, 0.0);
    for ((&c, &w), &g) in codes.iter().zip(weights).zip(gains) {
        let i = f64::from(c) * model.i_lsb * g;
        if w >= 0 {
            pos += i;
        } else {
            neg += i;
        }
    }
    Ok(pos - neg)
}

/// Independent per-cell gains `max(0, 1 + sigma * z)`, `z ~ N(0, 1)`.
pub fn sample_gains<R: rand::Rng + ?Sized>(rows: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    (0..rows)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (1.0 + sigma * z).max(0.0)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdcSample {
    pub code: i64,
    pub saturated: bool,
}

/// Mid-tread conversion of `current` over `[-full_scale, full_scale]` into
/// `2^adc_bits` codes, saturating at the rails.
pub fn adc_decode(current: f64, full_scale: f64, model: &HardwareModel) -> Result<AdcSample> {
    let q = UniformQuantizer::new(model.adc_bits, full_scale)?;
    Ok(AdcSample {
        code: q.encode(current),
        saturated: q.saturates(current),
    })
}

/// Current represented by an ADC code.
pub fn adc_value(code: i64, full_scale: f64, model: &HardwareModel) -> Result<f64> {
    Ok(UniformQuantizer::new(model.adc_bits, full_scale)?.decode(code))
}

/// One physical bank holding a tile of a weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankTile {
    pub bank: usize,
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

/// Placement of an `m x n` weight matrix onto `bank_rows x bank_cols` banks,
/// row-major over tiles. Blocks never straddle two banks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BankLayout {
    pub tiles: Vec<BankTile>,
    bank_rows: usize,
    bank_cols: usize,
    tile_cols: usize,
}

impl BankLayout {
    pub fn new(rows: usize, cols: usize, block_size: usize, model: &HardwareModel) -> Result<Self> {
        if block_size == 0 || model.bank_rows % block_size != 0 {
            return Err(Error::Config(format!(
                "bank rows {} are not a multiple of block size {block_size}",
                model.bank_rows
            )));
        }
        let tile_rows = rows.div_ceil(model.bank_rows);
        let tile_cols = cols.div_ceil(model.bank_cols);
        let mut tiles = Vec::with_capacity(tile_rows * tile_cols);
        for tr in 0..tile_rows {
            for tc in 0..tile_cols {
                tiles.push(BankTile {
                    bank: tiles.len(),
                    rows: (tr * model.bank_rows, ((tr + 1) * model.bank_rows).min(rows)),
                    cols: (tc * model.bank_cols, ((tc + 1) * model.bank_cols).min(cols)),
                });
            }
        }
        Ok(Self {
            tiles,
            bank_rows: model.bank_rows,
            bank_cols: model.bank_cols,
            tile_cols,
        })
    }

    /// `(bank, local_row, local_col)` of weight `(i, j)`.
    pub fn locate(&self, row: usize, col: usize) -> (usize, usize, usize) {
        let bank = (row / self.bank_rows) * self.tile_cols + col / self.bank_cols;
        (bank, row % self.bank_rows, col % self.bank_cols)
    }

    /// Per-cell gains for the whole matrix, drawn bank by bank and column by
    /// column within each bank.
    pub fn sample_gain_matrix<R: rand::Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> Array2<f64> {
        let rows = self.tiles.iter().map(|t| t.rows.1).max().unwrap_or(0);
        let cols = self.tiles.iter().map(|t| t.cols.1).max().unwrap_or(0);
        let mut g = Array2::ones((rows, cols));
        if sigma == 0.0 {
            return g;
        }
        for t in &self.tiles {
            for j in t.cols.0..t.cols.1 {
                let col = sample_gains(t.rows.1 - t.rows.0, sigma, rng);
                g.slice_mut(s![t.rows.0..t.rows.1, j]).assign(&Array1::from(col));
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HwDiagnostics {
    pub dac_clamped: usize,
    pub adc_conversions: usize,
    pub adc_saturated: usize,
}

/// Runs `net` through the simulated array.
///
/// The first layer receives `x` in `[0, 1]` directly. Hidden activations are
/// unbounded, so each sample is divided by its largest activation before the
/// DAC and the result is scaled back digitally. Masked blocks are neither
/// converted nor accumulated.
pub fn hw_forward<T: Scalar>(
    net: &Network<T>,
    mask: Option<&BlockMask>,
    x: ArrayView2<'_, T>,
    model: &HardwareModel,
) -> Result<(Array2<f64>, HwDiagnostics)> {
    model.validate()?;
    if x.ncols() != net.input_width() {
        return Err(shape_err(format!(
            "input width {} but network expects {}",
            x.ncols(),
            net.input_width()
        )));
    }
    if let Some(mask) = mask {
        check_mask(net, &mask.layers)?;
    }
    let mut diag = HwDiagnostics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let dac_max = f64::from(model.dac_max_code());
    let last = net.depth() - 1;
    let mut h = x.mapv(|v| v.to_f64_lossy());

    for (k, layer) in net.layers().iter().enumerate() {
        let p = layer.block_size();
        let layout = BankLayout::new(layer.rows(), layer.cols(), p, model)?;
        rng.set_stream(k as u64);
        rng.set_word_pos(0);
        let gains = layout.sample_gain_matrix(model.sigma_cell, &mut rng);
        let cells = layer.binary().mapv(|w| w.to_f64_lossy()) * &gains;
        let a = layer.supports_a().mapv(|v| v.to_f64_lossy());
        let b = layer.supports_b().mapv(|v| v.to_f64_lossy());
        let adc = UniformQuantizer::new(model.adc_bits, model.full_scale(p))?;

        // per-sample input scale
        let scale: Array1<f64> = if k == 0 {
            Array1::ones(h.nrows())
        } else {
            h.map_axis(Axis(1), |row| {
                let m = row.iter().copied().fold(0.0, f64::max);
                if m > 0.0 {
                    m
                } else {
                    1.0
                }
            })
        };
        let mut codes = Array2::zeros(h.dim());
        for ((mut crow, hrow), &sc) in codes.rows_mut().into_iter().zip(h.rows()).zip(&scale) {
            for (c, &v) in crow.iter_mut().zip(hrow) {
                let d = dac_encode(v / sc, model);
                diag.dac_clamped += usize::from(d.clamped);
                *c = f64::from(d.code);
            }
        }

        let mut acc = Array2::<f64>::zeros((h.nrows(), layer.cols()));
        for g in 0..layer.blocks_per_column() {
            let rows = g * p..(g + 1) * p;
            let block_codes = codes.slice(s![.., rows.clone()]);
            let currents = block_codes.dot(&cells.slice(s![rows, ..])) * model.i_lsb;
            let code_sums = block_codes.sum_axis(Axis(1));
            let active = mask.map(|m| m.layers[k].row(g));
            for j in 0..layer.cols() {
                if active.is_some_and(|act| !act[j]) {
                    continue;
                }
                let (aj, bj) = (a[[g, j]], b[[g, j]]);
                for n in 0..h.nrows() {
                    let i = currents[[n, j]];
                    diag.adc_conversions += 1;
                    diag.adc_saturated += usize::from(adc.saturates(i));
                    let dot = adc.quantize(i) / model.i_lsb;
                    acc[[n, j]] += aj * dot + bj * code_sums[n];
                }
            }
        }
        let gain = layer.gain().to_f64_lossy();
        for (mut row, &sc) in acc.rows_mut().into_iter().zip(&scale) {
            row *= sc * gain / dac_max;
        }
        h = if k < last { acc.mapv(|v| v.max(0.0)) } else { acc };
    }
    Ok((h, diag))
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub values: Vec<f64>,
}

impl McSummary {
    fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            values,
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        self.std / (self.values.len() as f64).sqrt()
    }
}

/// `model.mc_trials` evaluations of one column with fresh gains per trial.
/// Trial `t` always draws the same gains for a given seed, so two input
/// vectors evaluated under one model see the same simulated dies.
pub fn monte_carlo_dot(codes: &[u32], weights: &[i8], model: &HardwareModel) -> Result<McSummary> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let values = (0..model.mc_trials)
        .map(|t| {
            rng.set_stream(t as u64);
            rng.set_word_pos(0);
            let gains = sample_gains(codes.len(), model.sigma_cell, &mut rng);
            column_dot(codes, weights, &gains, model)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(McSummary::from_values(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(dac: u32, adc: u32) -> HardwareModel {
        HardwareModel {
            dac_bits: dac,
            adc_bits: adc,
            ..HardwareModel::default()
        }
    }

    #[test]
    fn dac_full_scale_and_zero() {
        let m = model(5, 8);
        let full = dac_encode(1.0, &m);
        assert_eq!((full.code, full.current), (31, 31.0));
        assert_eq!(dac_encode(0.0, &m).current, 0.0);
        let over = dac_encode(1.2, &m);
        assert!(over.clamped);
        assert_eq!(over.code, 31);
    }

    #[test]
    fn dac_mid_pixel() {
        assert_eq!(dac_encode(128.0 / 255.0, &model(5, 8)).code, 16);
    }

    #[test]
    fn eight_full_scale_cells() {
        let m = model(5, 8);
        let codes = [31u32; 8];
        let got = column_dot(&codes, &[1; 8], &[1.0; 8], &m).unwrap();
        assert_eq!(got, 8.0 * 31.0 * m.i_lsb);
        let neg = column_dot(&codes, &[-1; 8], &[1.0; 8], &m).unwrap();
        assert_eq!(neg, -got);
    }

    #[test]
    fn column_length_mismatch() {
        assert!(column_dot(&[1, 2], &[1], &[1.0, 1.0], &model(5, 8)).is_err());
    }

    #[test]
    fn zero_sigma_gains_are_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_gains(50, 0.0, &mut rng).iter().all(|&g| g == 1.0));
    }

    #[test]
    fn gains_are_reproducible_and_non_negative() {
        let draw = || sample_gains(1000, 0.8, &mut ChaCha8Rng::seed_from_u64(17));
        let a = draw();
        assert_eq!(a, draw());
        assert!(a.iter().all(|&g| g >= 0.0));
        assert!(a.iter().any(|&g| g == 0.0), "sigma 0.8 should hit the floor");
    }

    #[test]
    fn adc_zero_and_rail() {
        let m = model(5, 4);
        let zero = adc_decode(0.0, 100.0, &m).unwrap();
        assert_eq!(zero.code, 0);
        assert_eq!(adc_value(0, 100.0, &m).unwrap(), 0.0);
        let rail = adc_decode(100.0, 100.0, &m).unwrap();
        assert_eq!(rail.code, 7);
        assert!(!rail.saturated);
        let beyond = adc_decode(250.0, 100.0, &m).unwrap();
        assert_eq!(beyond.code, 7);
        assert!(beyond.saturated);
    }

    #[test]
    fn layout_keeps_blocks_inside_banks() {
        let m = HardwareModel::bank_8x8();
        assert!(BankLayout::new(16, 4, 3, &m).is_err());
        let layout = BankLayout::new(20, 10, 4, &m).unwrap();
        assert_eq!(layout.tiles.len(), 3 * 2);
        let mut seen = Array2::<u32>::zeros((20, 10));
        for t in &layout.tiles {
            for i in t.rows.0..t.rows.1 {
                for j in t.cols.0..t.cols.1 {
                    seen[[i, j]] += 1;
                    assert_eq!(layout.locate(i, j).0, t.bank);
                }
            }
            assert_eq!(t.rows.0 % 4, 0);
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn mc_without_variation_is_exact() {
        let m = HardwareModel {
            mc_trials: 20,
            ..model(8, 8)
        };
        let s = monte_carlo_dot(&[255; 32], &[1; 32], &m).unwrap();
        assert_eq!(s.std, 0.0);
        assert_eq!(s.mean, 32.0 * 255.0);
        assert_eq!((s.min, s.max), (s.mean, s.mean));
    }

    #[test]
    fn hw_forward_zero_input() {
        use crate::network::NetworkSpec;
        let mut net = Network::<f64>::random(&NetworkSpec::uniform(&[8, 8, 4], 4), 1).unwrap();
        for l in net.layers_mut() {
            let dim = l.supports_a().dim();
            l.set_supports(l.supports_a().clone(), Array2::zeros(dim)).unwrap();
        }
        let (out, _) = hw_forward(&net, None, Array2::zeros((3, 8)).view(), &HardwareModel::bank_8x8()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_out_of_range_bits() {
        assert!(model(2, 8).validate().is_err());
        assert!(model(8, 17).validate().is_err());
        assert!(model(16, 16).validate().is_ok());
    }
}

//! Support quantization and magnitude-based block pruning.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::layer::SupportedBinaryLayer;
use crate::network::{check_mask, Network};
use crate::scalar::Scalar;

/// Symmetric mid-tread uniform quantizer over `[-range, range]` with
/// `2^bits` two's-complement codes and step `2 * range / (2^bits - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformQuantizer {
    bits: u32,
    range: f64,
}

impl UniformQuantizer {
    pub fn new(bits: u32, range: f64) -> Result<Self> {
        if !(2..=30).contains(&bits) {
            return Err(Error::Config(format!("quantizer needs 2..=30 bits, got {bits}")));
        }
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::Config(format!("quantizer range must be positive, got {range}")));
        }
        Ok(Self { bits, range })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn step(&self) -> f64 {
        2.0 * self.range / ((1u64 << self.bits) - 1) as f64
    }

    pub fn min_code(&self) -> i64 {
        -(1i64 << (self.bits - 1))
    }

    pub fn max_code(&self) -> i64 {
        (1i64 << (self.bits - 1)) - 1
    }

    /// Nearest code, clamped to the representable range.
    pub fn encode(&self, x: f64) -> i64 {
        let raw = (x / self.step()).round();
        (raw as i64).clamp(self.min_code(), self.max_code())
    }

    pub fn decode(&self, code: i64) -> f64 {
        code as f64 * self.step()
    }

    /// Whether `x` lies beyond `[-range, range]`.
    pub fn saturates(&self, x: f64) -> bool {
        x.abs() > self.range
    }

    pub fn quantize(&self, x: f64) -> f64 {
        self.decode(self.encode(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantSpec {
    pub support_bits: u32,
}

/// Quantizes `m` on a grid spanning its own max-abs value. An all-zero
/// tensor is returned unchanged.
pub fn quantize_tensor<T: Scalar>(m: ArrayView2<'_, T>, bits: u32) -> Result<Array2<T>> {
    let range = m.iter().fold(0.0f64, |acc, v| acc.max(v.to_f64_lossy().abs()));
    if range == 0.0 {
        if bits < 2 {
            return Err(Error::Config(format!("support bits must be >= 2, got {bits}")));
        }
        return Ok(m.to_owned());
    }
    let q = UniformQuantizer::new(bits, range)?;
    Ok(m.mapv(|v| T::of(q.quantize(v.to_f64_lossy()))))
}

/// Quantized `(A, B)` of one layer, each on its own max-abs range.
pub fn quantize_supports<T: Scalar>(layer: &SupportedBinaryLayer<T>, spec: QuantSpec) -> Result<(Array2<T>, Array2<T>)> {
    Ok((
        quantize_tensor(layer.supports_a().view(), spec.support_bits)?,
        quantize_tensor(layer.supports_b().view(), spec.support_bits)?,
    ))
}

/// Copy of `net` with every layer's supports quantized.
pub fn quantize_network<T: Scalar>(net: &Network<T>, spec: QuantSpec) -> Result<Network<T>> {
    let mut out = net.clone();
    for layer in out.layers_mut() {
        let (a, b) = quantize_supports(layer, spec)?;
        layer.set_supports(a, b)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PruneSpec {
    /// Drop blocks with `|a| < eps`.
    Threshold(f64),
    /// Drop this fraction of all `a` entries, pooled across layers.
    DropFraction(f64),
}

/// Per-layer activity flags, shaped like each layer's supports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMask {
    pub layers: Vec<Array2<bool>>,
}

impl BlockMask {
    pub fn all_active<T: Scalar>(net: &Network<T>) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| Array2::from_elem(l.supports_a().dim(), true))
                .collect(),
        }
    }

    pub fn total_blocks(&self) -> usize {
        self.layers.iter().map(|m| m.len()).sum()
    }

    pub fn active_blocks(&self) -> usize {
        self.layers.iter().map(|m| m.iter().filter(|&&on| on).count()).sum()
    }

    /// `self` keeps every block `other` keeps.
    pub fn contains(&self, other: &BlockMask) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.dim() == b.dim() && a.iter().zip(b).all(|(&mine, &theirs)| mine || !theirs)
            })
    }
}

pub fn prune_layer<T: Scalar>(layer: &SupportedBinaryLayer<T>, eps: f64) -> Array2<bool> {
    layer.supports_a().mapv(|a| a.to_f64_lossy().abs() >= eps)
}

/// Threshold that drops `fraction` of the pooled `|a|` values. Ties at the
/// threshold are kept, so the realised drop can fall slightly short.
pub fn threshold_for_drop_fraction<T: Scalar>(net: &Network<T>, fraction: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("drop fraction must be in [0, 1), got {fraction}")));
    }
    let mut mags: Vec<f64> = net
        .layers()
        .iter()
        .flat_map(|l| l.supports_a().iter().map(|a| a.to_f64_lossy().abs()))
        .collect();
    if mags.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("support magnitudes"));
    }
    mags.sort_by(f64::total_cmp);
    let k = (fraction * mags.len() as f64).round() as usize;
    if k == 0 || mags.is_empty() {
        return Ok(0.0);
    }
    Ok(mags[k.min(mags.len() - 1)])
}

pub fn prune_supports<T: Scalar>(net: &Network<T>, spec: PruneSpec) -> Result<BlockMask> {
    let eps = match spec {
        PruneSpec::Threshold(eps) if eps >= 0.0 => eps,
        PruneSpec::Threshold(eps) => {
            return Err(Error::Config(format!("threshold must be non-negative, got {eps}")))
        }
        PruneSpec::DropFraction(f) => threshold_for_drop_fraction(net, f)?,
    };
    Ok(BlockMask {
        layers: net.layers().iter().map(|l| prune_layer(l, eps)).collect(),
    })
}

/// Forward pass in which masked blocks are skipped outright, including their
/// additive support.
pub fn masked_forward<T: Scalar>(net: &Network<T>, mask: &BlockMask, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
    check_mask(net, &mask.layers)?;
    net.predict(x, Some(&mask.layers))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activity {
    pub per_layer: Vec<f64>,
    pub overall: f64,
}

/// Fraction of active blocks per layer and over the whole network.
pub fn activity_metric(mask: &BlockMask) -> Activity {
    let frac = |active: usize, total: usize| if total == 0 { 1.0 } else { active as f64 / total as f64 };
    Activity {
        per_layer: mask
            .layers
            .iter()
            .map(|m| frac(m.iter().filter(|&&on| on).count(), m.len()))
            .collect(),
        overall: frac(mask.active_blocks(), mask.total_blocks()),
    }
}

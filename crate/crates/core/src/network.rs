//! Fully-connected stacks of supported binary layers: forward pass with a
//! retained trace, and the matching backward pass.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::layer::{SupportedBinaryLayer, DEFAULT_SUPPORT_INIT};
use crate::scalar::Scalar;

/// Architecture: `layer_sizes` holds `L + 1` widths, `block_sizes` one block
/// size per weight layer. Each layer computes `(h S) / sqrt(m)`; hidden layers
/// use ReLU and the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub layer_sizes: Vec<usize>,
    pub block_sizes: Vec<usize>,
    /// Scale every layer output by `1 / sqrt(fan_in)`.
    pub fan_in_scaling: bool,
    /// `a` is drawn uniformly from this range at random init.
    pub support_init: [f64; 2],
}

impl NetworkSpec {
    /// Same block size for every layer.
    pub fn uniform(layer_sizes: &[usize], block_size: usize) -> Self {
        Self {
            layer_sizes: layer_sizes.to_vec(),
            block_sizes: vec![block_size; layer_sizes.len().saturating_sub(1)],
            fan_in_scaling: false,
            support_init: DEFAULT_SUPPORT_INIT,
        }
    }

    pub fn with_support_init(mut self, range: [f64; 2]) -> Self {
        self.support_init = range;
        self
    }

    pub fn with_fan_in_scaling(mut self, on: bool) -> Self {
        self.fan_in_scaling = on;
        self
    }

    pub fn depth(&self) -> usize {
        self.layer_sizes.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config("network needs at least one weight layer".into()));
        }
        if self.block_sizes.len() != self.depth() {
            return Err(Error::Config(format!(
                "{} block sizes given for {} layers",
                self.block_sizes.len(),
                self.depth()
            )));
        }
        for (k, (&m, &p)) in self.layer_sizes.iter().zip(&self.block_sizes).enumerate() {
            if m == 0 || p == 0 || m % p != 0 {
                return Err(Error::Config(format!(
                    "layer {k}: block size {p} does not divide {m} inputs"
                )));
            }
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<SupportedBinaryLayer<T>>,
}

/// Intermediates kept by [`Network::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    /// Input to each layer, `inputs[0]` being the batch itself.
    pub inputs: Vec<Array2<T>>,
    /// Effective weights used by each layer.
    pub effective: Vec<Array2<T>>,
    /// Pre-activations of each layer; the last entry is the logits.
    pub pre: Vec<Array2<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn logits(&self) -> &Array2<T> {
        self.pre.last().expect("trace of a non-empty network")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub dw: Array2<T>,
    pub da: Array2<T>,
    pub db: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrad<T>>,
}

/// Which parameter gradients the backward pass should fill in. Skipped
/// tensors are returned as zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradRequest {
    pub weights: bool,
    pub supports: bool,
}

impl GradRequest {
    pub const ALL: Self = Self {
        weights: true,
        supports: true,
    };
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<SupportedBinaryLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].cols() != pair[1].rows() {
                return Err(shape_err(format!(
                    "layer {k} has {} outputs but layer {} expects {} inputs",
                    pair[0].cols(),
                    k + 1,
                    pair[1].rows()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Random shadow weights with randomly initialised supports.
    pub fn random(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_sizes
            .windows(2)
            .zip(&spec.block_sizes)
            .map(|(w, &p)| {
                let layer = SupportedBinaryLayer::random_with(w[0], w[1], p, spec.support_init, &mut rng)?;
                if spec.fan_in_scaling {
                    let g = layer.fan_in_gain();
                    layer.with_gain(g)
                } else {
                    Ok(layer)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    /// Random shadow weights with identity supports (a plain BNN).
    pub fn plain_random(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut net = Self::random(spec, seed)?;
        net.reset_supports();
        Ok(net)
    }

    /// Sets every support pair to `(1, 0)`.
    pub fn reset_supports(&mut self) {
        for l in &mut self.layers {
            l.a.fill(T::one());
            l.b.fill(T::zero());
        }
    }

    pub fn spec(&self) -> NetworkSpec {
        let mut layer_sizes: Vec<usize> = self.layers.iter().map(|l| l.rows()).collect();
        layer_sizes.push(self.layers.last().map_or(0, |l| l.cols()));
        NetworkSpec {
            layer_sizes,
            block_sizes: self.layers.iter().map(|l| l.block_size()).collect(),
            fan_in_scaling: self.layers.iter().any(|l| l.gain() != T::one()),
            support_init: DEFAULT_SUPPORT_INIT,
        }
    }

    pub fn layers(&self) -> &[SupportedBinaryLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [SupportedBinaryLayer<T>] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            layers: self.layers.iter().map(|l| l.cast()).collect(),
        }
    }

    fn check_input(&self, x: &ArrayView2<'_, T>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(shape_err(format!(
                "input width {} but network expects {}",
                x.ncols(),
                self.input_width()
            )));
        }
        Ok(())
    }

    /// Forward pass retaining every intermediate.
    pub fn forward(&self, x: ArrayView2<'_, T>) -> Result<(Array2<T>, ForwardTrace<T>)> {
        self.check_input(&x)?;
        let last = self.depth() - 1;
        let mut trace = ForwardTrace {
            inputs: Vec::with_capacity(self.depth()),
            effective: Vec::with_capacity(self.depth()),
            pre: Vec::with_capacity(self.depth()),
        };
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let s = layer.apply_supports();
            let z = h.dot(&s) * layer.gain();
            let next = if k < last { relu(&z) } else { z.clone() };
            trace.inputs.push(h);
            trace.effective.push(s);
            trace.pre.push(z);
            h = next;
        }
        Ok((h, trace))
    }

    /// Logits only, optionally with blocks switched off. `mask[k]` must have
    /// the shape of layer `k`'s supports; `false` removes the block entirely.
    pub fn predict(&self, x: ArrayView2<'_, T>, mask: Option<&[Array2<bool>]>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        if let Some(mask) = mask {
            check_mask(self, mask)?;
        }
        let last = self.depth() - 1;
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let s = layer.apply_supports_masked(mask.map(|m| m[k].view()));
            let z = h.dot(&s) * layer.gain();
            h = if k < last { relu(&z) } else { z };
        }
        Ok(h)
    }

    /// Backward pass through the network. Binarization is crossed with the
    /// straight-through estimator: the gradient reaches `W` only where
    /// `|W| <= 1`.
    pub fn backward(&self, trace: &ForwardTrace<T>, dlogits: ArrayView2<'_, T>, want: GradRequest) -> Result<Gradients<T>> {
        self.check_trace(trace, &dlogits)?;
        let one = T::one();
        let mut grads: Vec<LayerGrad<T>> = Vec::with_capacity(self.depth());
        let mut dz = dlogits.to_owned();
        for k in (0..self.depth()).rev() {
            let layer = &self.layers[k];
            let (m, n) = (layer.rows(), layer.cols());
            let r = layer.blocks_per_column();
            dz *= layer.gain();
            let ds = trace.inputs[k].t().dot(&dz);

            let mut da = Array2::zeros((r, n));
            let mut db = Array2::zeros((r, n));
            if want.supports {
                for (i, ds_row) in ds.rows().into_iter().enumerate() {
                    let g = layer.block_of(i);
                    Zip::from(da.row_mut(g))
                        .and(db.row_mut(g))
                        .and(ds_row)
                        .and(layer.binary().row(i))
                        .for_each(|da, db, &d, &wb| {
                            *da += d * wb;
                            *db += d;
                        });
                }
            }

            let mut dw = Array2::zeros((m, n));
            if want.weights {
                for (i, mut dw_row) in dw.rows_mut().into_iter().enumerate() {
                    let g = layer.block_of(i);
                    Zip::from(&mut dw_row)
                        .and(ds.row(i))
                        .and(layer.supports_a().row(g))
                        .and(layer.weights().row(i))
                        .for_each(|dw, &d, &a, &w| {
                            if w.abs() <= one {
                                *dw = d * a;
                            }
                        });
                }
            }

            if k > 0 {
                let mut dx = dz.dot(&trace.effective[k].t());
                Zip::from(&mut dx)
                    .and(&trace.pre[k - 1])
                    .for_each(|d, &z| {
                        if z <= T::zero() {
                            *d = T::zero();
                        }
                    });
                dz = dx;
            }
            grads.push(LayerGrad { dw, da, db });
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    fn check_trace(&self, trace: &ForwardTrace<T>, dlogits: &ArrayView2<'_, T>) -> Result<()> {
        let depth = self.depth();
        if trace.inputs.len() != depth || trace.effective.len() != depth || trace.pre.len() != depth {
            return Err(shape_err("trace depth does not match network"));
        }
        let batch = trace.inputs[0].nrows();
        for (k, layer) in self.layers.iter().enumerate() {
            if trace.effective[k].dim() != (layer.rows(), layer.cols())
                || trace.inputs[k].dim() != (batch, layer.rows())
                || trace.pre[k].dim() != (batch, layer.cols())
            {
                return Err(shape_err(format!("stale trace at layer {k}")));
            }
        }
        if dlogits.dim() != trace.logits().dim() {
            return Err(shape_err(format!(
                "logit gradient {:?} does not match logits {:?}",
                dlogits.dim(),
                trace.logits().dim()
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_mask<T: Scalar>(net: &Network<T>, mask: &[Array2<bool>]) -> Result<()> {
    if mask.len() != net.depth() {
        return Err(shape_err(format!(
            "mask has {} layers, network has {}",
            mask.len(),
            net.depth()
        )));
    }
    for (k, (m, l)) in mask.iter().zip(net.layers()).enumerate() {
        if m.dim() != l.supports_a().dim() {
            return Err(shape_err(format!(
                "mask for layer {k} is {:?}, supports are {:?}",
                m.dim(),
                l.supports_a().dim()
            )));
        }
    }
    Ok(())
}

/// ReLU that lets NaN through, so divergence stays visible downstream.
pub fn relu<T: Scalar>(z: &Array2<T>) -> Array2<T> {
    z.mapv(|v| if v < T::zero() { T::zero() } else { v })
}

/// Fraction of rows whose largest logit matches the label.
pub fn count_correct<T: Scalar>(logits: ArrayView2<'_, T>, labels: &[u8]) -> usize {
    logits
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &l)| crate::data::argmax(*row) == usize::from(l))
        .count()
}

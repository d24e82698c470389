use ndarray::{Array2, Zip};

use crate::error::{shape_err, Error, Result};
use crate::network::{GradRequest, Gradients, Network};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::Config(format!(
                "betas must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Moments<T> {
    m: Array2<T>,
    v: Array2<T>,
}

impl<T: Scalar> Moments<T> {
    fn like(p: &Array2<T>) -> Self {
        Self {
            m: Array2::zeros(p.dim()),
            v: Array2::zeros(p.dim()),
        }
    }
}

/// First and second moments for every `W`, `A`, `B` tensor plus the step count.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    step: u64,
    layers: Vec<[Moments<T>; 3]>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(net: &Network<T>) -> Self {
        Self {
            step: 0,
            layers: net
                .layers()
                .iter()
                .map(|l| {
                    [
                        Moments::like(l.weights()),
                        Moments::like(l.supports_a()),
                        Moments::like(l.supports_b()),
                    ]
                })
                .collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected ADAM update. Shadow weights are clipped to `[-1, 1]`
/// afterwards and the binary weights refreshed. Tensors excluded by `update`
/// keep both their values and their moments.
pub fn adam_step<T: Scalar>(
    net: &mut Network<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
    cfg: &AdamConfig,
    update: GradRequest,
) -> Result<()> {
    if grads.layers.len() != net.depth() || state.layers.len() != net.depth() {
        return Err(shape_err("gradient/optimizer depth does not match network"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one, lr, eps) = (T::one(), T::of(cfg.learning_rate), T::of(cfg.epsilon));
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);

    let apply = |p: &mut Array2<T>, g: &Array2<T>, mom: &mut Moments<T>| -> Result<()> {
        if p.dim() != g.dim() || p.dim() != mom.m.dim() {
            return Err(shape_err(format!("parameter {:?} vs gradient {:?}", p.dim(), g.dim())));
        }
        Zip::from(p)
            .and(g)
            .and(&mut mom.m)
            .and(&mut mom.v)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        Ok(())
    };

    for ((layer, g), moms) in net.layers_mut().iter_mut().zip(&grads.layers).zip(&mut state.layers) {
        let [mw, ma, mb] = moms;
        let (w, a, b) = layer.params_mut();
        if update.weights {
            apply(w, &g.dw, mw)?;
        }
        if update.supports {
            apply(a, &g.da, ma)?;
            apply(b, &g.db, mb)?;
        }
        layer.sync_binary()?;
    }
    Ok(())
}

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Element;

/// How weight decay enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightDecay {
    /// L2 penalty added to the gradient before the moment estimates.
    Coupled,
    /// Parameters shrink by `lr * weight_decay` outside the adaptive step.
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecay,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decay_mode: WeightDecay::Coupled,
        }
    }
}

/// First and second moment buffers, one per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Element> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes
            .into_iter()
            .map(|n| (vec![T::zero(); n], vec![T::zero(); n]))
            .unzip();
        AdamState { m, v, t: 0 }
    }
}

/// One bias-corrected Adam update of every parameter in place.
pub fn adam_step<T: Element>(
    params: &mut [Vec<T>],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(shape_err!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    for (i, ((p, g), (m, v))) in params
        .iter()
        .zip(grads)
        .zip(state.m.iter().zip(&state.v))
        .enumerate()
    {
        if p.len() != g.len() || p.len() != m.len() || p.len() != v.len() {
            return Err(shape_err!(
                "adam: parameter {i} has {} values but gradient has {}",
                p.len(),
                g.len()
            ));
        }
    }
    if !(cfg.lr >= 0.0 && (0.0..1.0).contains(&cfg.beta1) && (0.0..1.0).contains(&cfg.beta2)) {
        return Err(Error::Parameter(format!("invalid Adam settings {cfg:?}")));
    }

    state.t += 1;
    let t = state.t as i32;
    let c = |x: f64| T::from_f64_lossy(x);
    let (b1, b2) = (c(cfg.beta1), c(cfg.beta2));
    let one = T::one();
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    let (lr, eps, wd) = (c(cfg.lr), c(cfg.eps), c(cfg.weight_decay));

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for j in 0..p.len() {
            let mut gj = g[j];
            if cfg.decay_mode == WeightDecay::Coupled {
                gj += wd * p[j];
            }
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            let mut next = p[j] - lr * m_hat / (v_hat.sqrt() + eps);
            if cfg.decay_mode == WeightDecay::Decoupled {
                next -= lr * wd * p[j];
            }
            p[j] = next;
        }
    }
    Ok(())
}

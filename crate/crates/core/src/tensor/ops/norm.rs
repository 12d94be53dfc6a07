use crate::error::{shape_err, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Running mean and variance, one entry per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats<T: Element> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Per-channel batch normalization of `input [B, C, ...]`.
///
/// Train mode normalizes with the biased batch variance over every axis but
/// the channel and folds the batch statistics into `stats` (the running
/// variance uses the unbiased estimate). Eval mode normalizes with `stats`.
pub fn batch_norm<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut BatchNormStats<T>,
    mode: Mode,
    cfg: BatchNormConfig,
) -> Result<Tensor<T>> {
    if input.rank() < 2 {
        return Err(shape_err!(
            "batch_norm expects [B, C, ...], got {:?}",
            input.shape()
        ));
    }
    let (batch, channels) = (input.shape()[0], input.shape()[1]);
    if gamma.shape() != [channels] || beta.shape() != [channels] {
        return Err(shape_err!(
            "gamma {:?} / beta {:?} do not match {channels} channels",
            gamma.shape(),
            beta.shape()
        ));
    }
    if stats.mean.len() != channels || stats.var.len() != channels {
        return Err(shape_err!("running stats do not match {channels} channels"));
    }
    let inner: usize = input.shape()[2..].iter().product();
    let count = batch * inner;
    let eps = T::from_f64_lossy(cfg.eps);
    let x = input.data();

    // Channel `c` of batch item `b` is the contiguous run starting at `(b * C + c) * inner`.
    let runs = move |c: usize| {
        (0..batch).map(move |b| (b * channels + c) * inner..(b * channels + c + 1) * inner)
    };

    let (mean, inv_std): (Vec<T>, Vec<T>) = match mode {
        Mode::Train => {
            let n = T::from_usize(count).expect("count");
            let momentum = T::from_f64_lossy(cfg.momentum);
            let mut means = Vec::with_capacity(channels);
            let mut inv = Vec::with_capacity(channels);
            for c in 0..channels {
                let m = runs(c).map(|r| x[r].iter().copied().sum::<T>()).sum::<T>() / n;
                let v = runs(c)
                    .map(|r| x[r].iter().map(|&v| (v - m) * (v - m)).sum::<T>())
                    .sum::<T>()
                    / n;
                let unbiased = if count > 1 { v * n / (n - T::one()) } else { v };
                stats.mean[c] = (T::one() - momentum) * stats.mean[c] + momentum * m;
                stats.var[c] = (T::one() - momentum) * stats.var[c] + momentum * unbiased;
                means.push(m);
                inv.push(T::one() / (v + eps).sqrt());
            }
            (means, inv)
        }
        Mode::Eval => (
            stats.mean.clone(),
            stats
                .var
                .iter()
                .map(|&v| T::one() / (v + eps).sqrt())
                .collect(),
        ),
    };

    let mut x_hat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for c in 0..channels {
        let (g, b) = (gamma.data()[c], beta.data()[c]);
        for r in runs(c) {
            for ((xh, y), &v) in x_hat[r.clone()]
                .iter_mut()
                .zip(&mut out[r.clone()])
                .zip(&x[r])
            {
                *xh = (v - mean[c]) * inv_std[c];
                *y = g * *xh + b;
            }
        }
    }

    Ok(Tensor::from_op(
        "batch_norm",
        input.shape().to_vec(),
        out,
        vec![input.clone(), gamma.clone(), beta.clone()],
        Box::new(move |p, _, gy, needs| {
            let gamma = p[1].data();
            let mut gx = needs[0].then(|| vec![T::zero(); x_hat.len()]);
            let mut ggamma = needs[1].then(|| vec![T::zero(); channels]);
            let mut gbeta = needs[2].then(|| vec![T::zero(); channels]);
            let n = T::from_usize(count).expect("count");
            for c in 0..channels {
                let sum_g: T = runs(c).map(|r| gy[r].iter().copied().sum::<T>()).sum();
                let sum_gx: T = runs(c)
                    .map(|r| {
                        gy[r.clone()]
                            .iter()
                            .zip(&x_hat[r])
                            .map(|(&g, &h)| g * h)
                            .sum::<T>()
                    })
                    .sum();
                if let Some(gg) = ggamma.as_mut() {
                    gg[c] = sum_gx;
                }
                if let Some(gb) = gbeta.as_mut() {
                    gb[c] = sum_g;
                }
                if let Some(gx) = gx.as_mut() {
                    let scale = gamma[c] * inv_std[c];
                    let (mg, mgx) = match mode {
                        Mode::Train => (sum_g / n, sum_gx / n),
                        Mode::Eval => (T::zero(), T::zero()),
                    };
                    for r in runs(c) {
                        for ((d, &g), &h) in
                            gx[r.clone()].iter_mut().zip(&gy[r.clone()]).zip(&x_hat[r])
                        {
                            *d = scale * (g - mg - h * mgx);
                        }
                    }
                }
            }
            vec![gx, ggamma, gbeta]
        }),
    ))
}

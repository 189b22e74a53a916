//! Per-channel batch normalization over batch and space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Act;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub train: bool,
}

/// Batch mean and unbiased variance per channel, for the running update.
pub(crate) struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(crate) fn bn_fwd(
    x: &Act,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    mode: Mode,
) -> Result<(Act, BnCache, Option<BatchStats>)> {
    let n = x.n();
    let mut out = Act::zeros(x.c, x.b, x.s);
    let mut xhat = vec![0.0; x.data.len()];
    let mut inv_std = vec![0.0; x.c];
    let mut stats = None;
    match mode {
        Mode::Train => {
            if x.b < 2 {
                return Err(Error::BatchTooSmall(x.b));
            }
            let mut means = vec![0.0; x.c];
            let mut vars = vec![0.0; x.c];
            for c in 0..x.c {
                let xc = x.channel(c);
                let mean = xc.iter().sum::<f64>() / n as f64;
                let var = xc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                let is = 1.0 / (var + BN_EPS).sqrt();
                inv_std[c] = is;
                means[c] = mean;
                vars[c] = var * n as f64 / (n as f64 - 1.0);
                let xh = &mut xhat[c * n..(c + 1) * n];
                for ((h, &v), o) in xh.iter_mut().zip(xc).zip(out.channel_mut(c)) {
                    *h = (v - mean) * is;
                    *o = gamma[c] * *h + beta[c];
                }
            }
            stats = Some(BatchStats {
                mean: means,
                var: vars,
            });
        }
        Mode::Eval => {
            for c in 0..x.c {
                let is = 1.0 / (running_var[c] + BN_EPS).sqrt();
                inv_std[c] = is;
                let xc = x.channel(c);
                let xh = &mut xhat[c * n..(c + 1) * n];
                for ((h, &v), o) in xh.iter_mut().zip(xc).zip(out.channel_mut(c)) {
                    *h = (v - running_mean[c]) * is;
                    *o = gamma[c] * *h + beta[c];
                }
            }
        }
    }
    Ok((
        out,
        BnCache {
            xhat,
            inv_std,
            train: mode == Mode::Train,
        },
        stats,
    ))
}

/// Accumulates scale/shift gradients and returns the input gradient.
pub(crate) fn bn_bwd(dy: &Act, cache: &BnCache, gamma: &[f64], dgamma: &mut [f64], dbeta: &mut [f64]) -> Act {
    let n = dy.n();
    let mut dx = Act::zeros(dy.c, dy.b, dy.s);
    for c in 0..dy.c {
        let g = dy.channel(c);
        let xh = &cache.xhat[c * n..(c + 1) * n];
        let sum_g: f64 = g.iter().sum();
        let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
        dgamma[c] += sum_gx;
        dbeta[c] += sum_g;
        let k = gamma[c] * cache.inv_std[c];
        let out = dx.channel_mut(c);
        if cache.train {
            let nf = n as f64;
            for ((o, &gi), &hi) in out.iter_mut().zip(g).zip(xh) {
                *o = k / nf * (nf * gi - sum_g - hi * sum_gx);
            }
        } else {
            for (o, &gi) in out.iter_mut().zip(g) {
                *o = k * gi;
            }
        }
    }
    dx
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub(crate) fn update(&mut self, batch: &BatchStats) {
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - BN_MOMENTUM) * self.mean[c] + BN_MOMENTUM * batch.mean[c];
            self.var[c] = (1.0 - BN_MOMENTUM) * self.var[c] + BN_MOMENTUM * batch.var[c];
        }
    }
}

/// Batch normalization of `input` (`[batch, channels, extents…]`). In train
/// mode the batch statistics are used and folded into `running`.
pub fn batchnorm(
    input: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running: &mut RunningStats,
    mode: Mode,
) -> Result<Tensor> {
    if input.rank() < 3 {
        return Err(Error::ShapeMismatch(format!(
            "input {:?} needs [batch, channels, extents…]",
            input.dims()
        )));
    }
    let c = input.dims()[1];
    if gamma.len() != c || beta.len() != c || running.mean.len() != c || running.var.len() != c {
        return Err(Error::ShapeMismatch(format!("batch norm parameters do not have {c} channels")));
    }
    let x = Act::from_tensor(input);
    let (y, _, stats) = bn_fwd(&x, gamma, beta, &running.mean, &running.var, mode)?;
    if let Some(s) = stats {
        running.update(&s);
    }
    Ok(y.to_tensor(&input.dims()[2..]))
}

//! Batch normalization.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

impl Graph {
    /// Normalize each channel over `(N, H, W)` then apply `gamma * x_hat + beta`.
    ///
    /// In train mode batch statistics are used and `stats` is updated with
    /// momentum [`BN_MOMENTUM`]; in eval mode `stats` is used as is.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: Mode,
    ) -> Result<Var> {
        let s = self.shape(x);
        let [n, c, h, w] = s.0;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).numel() != c {
                return Err(Error::shape(
                    "batch_norm",
                    name,
                    format!("has {} values, expected {c}", self.value(v).numel()),
                ));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::shape("batch_norm", "running_stats", format!("expected {c} channels")));
        }
        let plane = h * w;
        let m = (n * plane) as f64;
        let xd = self.value(x).data();
        let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let it = || (0..n).flat_map(move |i| (0..plane).map(move |p| (i * c + ch) * plane + p));
                    let mu = it().map(|k| xd[k]).sum::<f64>() / m;
                    let v = it().map(|k| (xd[k] - mu).powi(2)).sum::<f64>() / m;
                    mean[ch] = mu;
                    var[ch] = v;
                }
                let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                for ch in 0..c {
                    stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * mean[ch];
                    stats.var[ch] = (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * var[ch] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let gd = self.value(gamma).data().to_vec();
        let bd = self.value(beta).data().to_vec();
        let mut x_hat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                for k in base..base + plane {
                    let xh = (xd[k] - mean[ch]) * inv_std[ch];
                    x_hat[k] = xh;
                    out[k] = gd[ch] * xh + bd[ch];
                }
            }
        }
        let out = Tensor::new(s, out)?;
        let (gs, bs) = (self.shape(gamma), self.shape(beta));
        self.push(
            "batch_norm",
            out,
            &[x, gamma, beta],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let gamma = ctx.inputs[1].data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * plane;
                        for k in base..base + plane {
                            dgamma[ch] += g[k] * x_hat[k];
                            dbeta[ch] += g[k];
                        }
                    }
                }
                let dx = ctx.needs(0).then(|| {
                    let mut dx = vec![0.0; g.len()];
                    for i in 0..n {
                        for ch in 0..c {
                            let base = (i * c + ch) * plane;
                            for k in base..base + plane {
                                dx[k] = match mode {
                                    Mode::Train => {
                                        gamma[ch] * inv_std[ch] / m
                                            * (m * g[k] - dbeta[ch] - x_hat[k] * dgamma[ch])
                                    }
                                    Mode::Eval => g[k] * gamma[ch] * inv_std[ch],
                                };
                            }
                        }
                    }
                    Tensor::new(s, dx).expect("bn dx")
                });
                vec![
                    dx,
                    ctx.needs(1).then(|| Tensor::new(gs, dgamma).expect("bn gamma")),
                    ctx.needs(2).then(|| Tensor::new(bs, dbeta).expect("bn beta")),
                ]
            }),
        )
    }
}

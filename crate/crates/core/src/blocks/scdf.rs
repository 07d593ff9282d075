//! Decoupled spatial/channel dynamic filtering.
//!
//! A 1x1 convolution predicts one `k x k` kernel per pixel; a pooled
//! two-layer bottleneck predicts one `k x k` kernel per channel. Both are
//! standardized per kernel, rescaled by learnable `(alpha, beta)` and offset
//! by a fixed centre-tap delta. The effective kernel at pixel `i`, channel
//! `m` is the elementwise product of the two.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv2d, ParamId, Session};
use crate::ops::ConvSpec;
use crate::tensor::{Shape, Tensor};

/// Kernel extent of the dynamic filters.
pub const KERNEL: usize = 3;
/// Number of taps per kernel.
pub const TAPS: usize = KERNEL * KERNEL;
/// Guards the standard deviation in the filter normalization.
pub const FN_EPS: f64 = 1e-6;
/// Initial value of the normalization scale `alpha`.
pub const FN_ALPHA_INIT: f64 = 0.1;

/// Predicted filters.
///
/// `spatial` is `(N, k*k, H, W)`: tap `t` of the kernel at pixel `(y, x)` sits
/// at `[n, t, y, x]`. `channel` is `(N, C, k*k, 1)`.
#[derive(Clone, Copy, Debug)]
pub struct FilterBank {
    pub spatial: Var,
    pub channel: Var,
}

/// Learnable affine terms of the filter normalization.
#[derive(Clone, Debug)]
pub struct FnParams {
    /// `(1, 1, 1, 1)`
    pub alpha_sp: ParamId,
    pub beta_sp: ParamId,
    /// `(1, C, 1, 1)`
    pub alpha_ch: ParamId,
    pub beta_ch: ParamId,
}

/// The delta kernel (1 at the centre tap) laid out along axis 2.
pub fn delta_taps(groups: usize) -> Tensor {
    Tensor::from_fn([1, groups, TAPS, 1], |[_, _, t, _]| if t == TAPS / 2 { 1.0 } else { 0.0 })
}

impl Graph {
    /// Standardize along axis 2: `(x - mean) / (std + FN_EPS)` for every
    /// `(n, g, ., p)` line, population standard deviation.
    pub fn kernel_standardize(&mut self, raw: Var) -> Result<Var> {
        let s = self.shape(raw);
        let [n, g, k, p] = s.0;
        if k < 2 {
            return Err(Error::shape("kernel_standardize", "raw", format!("{s} has fewer than 2 taps")));
        }
        let xd = self.value(raw).data();
        let mut out = vec![0.0; xd.len()];
        let mut stds = vec![0.0; n * g * p];
        let idx = move |b: usize, t: usize, q: usize| (b * k + t) * p + q;
        for b in 0..n * g {
            for q in 0..p {
                let mean = (0..k).map(|t| xd[idx(b, t, q)]).sum::<f64>() / k as f64;
                let var = (0..k).map(|t| (xd[idx(b, t, q)] - mean).powi(2)).sum::<f64>() / k as f64;
                let sd = var.sqrt();
                stds[b * p + q] = sd;
                for t in 0..k {
                    out[idx(b, t, q)] = (xd[idx(b, t, q)] - mean) / (sd + FN_EPS);
                }
            }
        }
        let v = Tensor::new(s, out)?;
        self.push(
            "kernel_standardize",
            v,
            &[raw],
            Box::new(move |ctx| {
                let xd = ctx.inputs[0].data();
                let gd = ctx.grad.data();
                let mut gx = vec![0.0; xd.len()];
                let kf = k as f64;
                for b in 0..n * g {
                    for q in 0..p {
                        let sd = stds[b * p + q];
                        let mean = (0..k).map(|t| xd[idx(b, t, q)]).sum::<f64>() / kf;
                        let gmean = (0..k).map(|t| gd[idx(b, t, q)]).sum::<f64>() / kf;
                        let den = sd + FN_EPS;
                        // d sd / d x_t = (x_t - mean) / (k sd); zero when sd == 0
                        let corr = if sd > 0.0 {
                            (0..k)
                                .map(|t| gd[idx(b, t, q)] * (xd[idx(b, t, q)] - mean))
                                .sum::<f64>()
                                / (kf * sd * den * den)
                        } else {
                            0.0
                        };
                        for t in 0..k {
                            let c = xd[idx(b, t, q)] - mean;
                            gx[idx(b, t, q)] = (gd[idx(b, t, q)] - gmean) / den - c * corr;
                        }
                    }
                }
                vec![Some(Tensor::new(s, gx).expect("standardize grad"))]
            }),
        )
    }

    /// `alpha * standardize(raw) + beta`; `alpha`, `beta` broadcast over the
    /// group axis of `raw` laid out `(N, G, taps, P)`.
    pub fn filter_normalize(&mut self, raw: Var, alpha: Var, beta: Var) -> Result<Var> {
        let z = self.kernel_standardize(raw)?;
        let scaled = self.mul(z, alpha)?;
        self.add(scaled, beta)
    }

    /// `out[n,m,i] = sum_t sp[n,t,i] * ch[n,m,t] * x[n,m,i + off(t)]` with
    /// zero padding.
    pub fn scdf_apply(&mut self, x: Var, bank: FilterBank) -> Result<Var> {
        let xs = self.shape(x);
        let [n, c, h, w] = xs.0;
        let sps = self.shape(bank.spatial);
        let chs = self.shape(bank.channel);
        if sps != Shape::new(n, TAPS, h, w) {
            return Err(Error::shape(
                "scdf_apply",
                "spatial",
                format!("has shape {sps}, expected {}", Shape::new(n, TAPS, h, w)),
            ));
        }
        if chs != Shape::new(n, c, TAPS, 1) {
            return Err(Error::shape(
                "scdf_apply",
                "channel",
                format!("has shape {chs}, expected {}", Shape::new(n, c, TAPS, 1)),
            ));
        }
        let plane = h * w;
        let r = (KERNEL / 2) as isize;
        let offsets: Vec<(isize, isize)> = (0..TAPS)
            .map(|t| ((t / KERNEL) as isize - r, (t % KERNEL) as isize - r))
            .collect();
        let range = move |d: isize, len: usize| -> (usize, usize) {
            let lo = (-d).max(0) as usize;
            let hi = (len as isize - d.max(0)).max(0) as usize;
            (lo.min(hi), hi)
        };
        let (xd, spd, chd) = (
            self.value(x).data(),
            self.value(bank.spatial).data(),
            self.value(bank.channel).data(),
        );
        let mut out = vec![0.0; xs.numel()];
        for b in 0..n {
            for m in 0..c {
                let xin = &xd[(b * c + m) * plane..][..plane];
                let o = &mut out[(b * c + m) * plane..][..plane];
                for (t, &(dy, dx)) in offsets.iter().enumerate() {
                    let cw = chd[(b * c + m) * TAPS + t];
                    if cw == 0.0 {
                        continue;
                    }
                    let sp = &spd[(b * TAPS + t) * plane..][..plane];
                    let (y0, y1) = range(dy, h);
                    let (x0, x1) = range(dx, w);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        for xx in x0..x1 {
                            let sx = (xx as isize + dx) as usize;
                            o[y * w + xx] += sp[y * w + xx] * cw * xin[sy * w + sx];
                        }
                    }
                }
            }
        }
        let v = Tensor::new(xs, out)?;
        self.push(
            "scdf_apply",
            v,
            &[x, bank.spatial, bank.channel],
            Box::new(move |ctx| {
                let (xd, spd, chd) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.inputs[2].data());
                let gd = ctx.grad.data();
                let mut gx = vec![0.0; xd.len()];
                let mut gsp = vec![0.0; spd.len()];
                let mut gch = vec![0.0; chd.len()];
                for b in 0..n {
                    for m in 0..c {
                        let base = (b * c + m) * plane;
                        for (t, &(dy, dx)) in offsets.iter().enumerate() {
                            let cw = chd[(b * c + m) * TAPS + t];
                            let spb = (b * TAPS + t) * plane;
                            let (y0, y1) = range(dy, h);
                            let (x0, x1) = range(dx, w);
                            let mut acc_ch = 0.0;
                            for y in y0..y1 {
                                let sy = (y as isize + dy) as usize;
                                for xx in x0..x1 {
                                    let sx = (xx as isize + dx) as usize;
                                    let go = gd[base + y * w + xx];
                                    let sp = spd[spb + y * w + xx];
                                    let xv = xd[base + sy * w + sx];
                                    gx[base + sy * w + sx] += go * sp * cw;
                                    gsp[spb + y * w + xx] += go * cw * xv;
                                    acc_ch += go * sp * xv;
                                }
                            }
                            gch[(b * c + m) * TAPS + t] += acc_ch;
                        }
                    }
                }
                vec![
                    ctx.needs(0).then(|| Tensor::new(xs, gx).expect("scdf gx")),
                    ctx.needs(1).then(|| Tensor::new(sps, gsp).expect("scdf gsp")),
                    ctx.needs(2).then(|| Tensor::new(chs, gch).expect("scdf gch")),
                ]
            }),
        )
    }
}

/// Filter-predicting branches of one dynamic-filter layer.
#[derive(Clone, Debug)]
pub struct Scdf {
    pub channels: usize,
    pub spatial: Conv2d,
    pub fc1: Conv2d,
    pub fc2: Conv2d,
    pub fn_params: FnParams,
}

/// Width of the channel-branch bottleneck: `C / 4`, at least 4.
pub fn bottleneck_width(channels: usize) -> usize {
    (channels / 4).max(4)
}

impl Scdf {
    pub fn build(b: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        b.scope(name, |b| {
            let hidden = bottleneck_width(channels);
            // raw kernels start delta-shaped: small weights, delta-pattern bias
            let delta_sp = delta_taps(1).reshaped([1, TAPS, 1, 1])?;
            let sp_spec = ConvSpec::same(channels, TAPS, 1);
            let w = b.normal(sp_spec.weight_shape(), 0.1 / (channels as f64).sqrt());
            let spatial = Conv2d::with_values(b, "spatial", sp_spec, w, Some(delta_sp))?;
            let fc1 = Conv2d::build(b, "fc1", ConvSpec::same(channels, hidden, 1), true)?;
            let fc2_spec = ConvSpec::same(hidden, channels * TAPS, 1);
            let w = b.normal(fc2_spec.weight_shape(), 0.1 / (hidden as f64).sqrt());
            let delta_ch = delta_taps(channels).reshaped([1, channels * TAPS, 1, 1])?;
            let fc2 = Conv2d::with_values(b, "fc2", fc2_spec, w, Some(delta_ch))?;
            let fn_params = FnParams {
                alpha_sp: b.param("fn_alpha_sp", Tensor::scalar(FN_ALPHA_INIT))?,
                beta_sp: b.param("fn_beta_sp", Tensor::scalar(0.0))?,
                alpha_ch: b.param("fn_alpha_ch", Tensor::full([1, channels, 1, 1], FN_ALPHA_INIT))?,
                beta_ch: b.param("fn_beta_ch", Tensor::zeros([1, channels, 1, 1]))?,
            };
            Ok(Scdf {
                channels,
                spatial,
                fc1,
                fc2,
                fn_params,
            })
        })
    }

    /// Predict the normalized spatial and channel filters for `x`.
    pub fn predict(&self, s: &mut Session, x: Var) -> Result<FilterBank> {
        let xs = s.graph.shape(x);
        let [n, c, h, w] = xs.0;
        if c != self.channels {
            return Err(Error::shape("scdf_predict", "input", format!("{xs} vs {} channels", self.channels)));
        }
        let p = &self.fn_params;

        let raw_sp = self.spatial.forward(s, x)?;
        let raw_sp = s.graph.reshape(raw_sp, [n, 1, TAPS, h * w])?;
        let (a, bta) = (s.param(p.alpha_sp), s.param(p.beta_sp));
        let sp = s.graph.filter_normalize(raw_sp, a, bta)?;
        let delta = s.graph.constant(delta_taps(1));
        let sp = s.graph.add(sp, delta)?;
        let spatial = s.graph.reshape(sp, [n, TAPS, h, w])?;

        let pooled = s.graph.global_avg_pool(x)?;
        let hid = self.fc1.forward(s, pooled)?;
        let hid = s.graph.leaky_relu(hid)?;
        let raw_ch = self.fc2.forward(s, hid)?;
        let raw_ch = s.graph.reshape(raw_ch, [n, c, TAPS, 1])?;
        let (a, bta) = (s.param(p.alpha_ch), s.param(p.beta_ch));
        let ch = s.graph.filter_normalize(raw_ch, a, bta)?;
        let delta = s.graph.constant(delta_taps(c));
        let channel = s.graph.add(ch, delta)?;
        Ok(FilterBank { spatial, channel })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let bank = self.predict(s, x)?;
        s.graph.scdf_apply(x, bank)
    }
}

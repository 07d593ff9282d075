//! Training objective: global L1, masked L1 and structural similarity.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::tensor::{Shape, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Weights of the masked term and the structural term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 10.0,
            lambda2: 1.0,
        }
    }
}

/// Handles of the loss terms; `total` is the one to differentiate.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub global: Var,
    pub local: Var,
    pub ssim: Var,
}

fn same_shape(g: &Graph, op: &'static str, a: Var, b: Var) -> Result<Shape> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(Error::shape(op, "target", format!("{sb} vs prediction {sa}")));
    }
    Ok(sa)
}

/// Mean absolute error over every element.
pub fn loss_global(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    same_shape(g, "loss_global", pred, target)?;
    let d = g.sub(target, pred)?;
    let a = g.abs(d)?;
    g.mean(a)
}

/// Absolute error restricted to the mask (1 = cloud), divided by the full
/// element count. `mask` is `(N, 1, H, W)` with entries in {0, 1}.
pub fn loss_local(g: &mut Graph, pred: Var, target: Var, mask: &Tensor) -> Result<Var> {
    let s = same_shape(g, "loss_local", pred, target)?;
    let ms = mask.shape();
    if ms != Shape::new(s.n(), 1, s.h(), s.w()) {
        return Err(Error::shape("loss_local", "mask", format!("{ms} for prediction {s}")));
    }
    if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Invalid("loss_local: mask values must be 0 or 1".into()));
    }
    let m = g.constant(mask.clone());
    let d = g.sub(target, pred)?;
    let d = g.mul(d, m)?;
    let a = g.abs(d)?;
    g.mean(a)
}

/// Normalized Gaussian window, cropped to at most `h x w`.
pub fn gaussian_window(h: usize, w: usize) -> Tensor {
    let (kh, kw) = (SSIM_WINDOW.min(h), SSIM_WINDOW.min(w));
    let g1 = |k: usize| -> Vec<f64> {
        let c = (k as f64 - 1.0) / 2.0;
        (0..k).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect()
    };
    let (gy, gx) = (g1(kh), g1(kw));
    let mut t = Tensor::from_fn([1, 1, kh, kw], |[_, _, i, j]| gy[i] * gx[j]);
    let s = t.sum();
    t.data_mut().iter_mut().for_each(|v| *v /= s);
    t
}

/// Mean structural similarity over all valid windows and channels.
pub fn ssim(g: &mut Graph, x: Var, y: Var) -> Result<Var> {
    let s = same_shape(g, "ssim", x, y)?;
    let [n, c, h, w] = s.0;
    let win = gaussian_window(h, w);
    let [_, _, kh, kw] = win.shape().0;
    let spec = ConvSpec {
        in_channels: 1,
        out_channels: 1,
        kernel: (kh, kw),
        stride: 1,
        padding: 0,
        dilation: 1,
    };
    let wv = g.constant(win);
    let flat = [n * c, 1, h, w];
    let xf = g.reshape(x, flat)?;
    let yf = g.reshape(y, flat)?;
    let blur = |g: &mut Graph, v: Var| g.conv2d(v, wv, None, spec);
    let mx = blur(g, xf)?;
    let my = blur(g, yf)?;
    let xx = g.mul(xf, xf)?;
    let yy = g.mul(yf, yf)?;
    let xy = g.mul(xf, yf)?;
    let exx = blur(g, xx)?;
    let eyy = blur(g, yy)?;
    let exy = blur(g, xy)?;
    let mx2 = g.mul(mx, mx)?;
    let my2 = g.mul(my, my)?;
    let mxy = g.mul(mx, my)?;
    let vx = g.sub(exx, mx2)?;
    let vy = g.sub(eyy, my2)?;
    let cxy = g.sub(exy, mxy)?;

    let t = g.scale(mxy, 2.0)?;
    let a1 = g.add_scalar(t, SSIM_C1)?;
    let t = g.scale(cxy, 2.0)?;
    let a2 = g.add_scalar(t, SSIM_C2)?;
    let t = g.add(mx2, my2)?;
    let b1 = g.add_scalar(t, SSIM_C1)?;
    let t = g.add(vx, vy)?;
    let b2 = g.add_scalar(t, SSIM_C2)?;
    let num = g.mul(a1, a2)?;
    let den = g.mul(b1, b2)?;
    let map = g.div(num, den)?;
    g.mean(map)
}

/// `1 - ssim`.
pub fn loss_ssim(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let s = ssim(g, pred, target)?;
    let neg = g.scale(s, -1.0)?;
    g.add_scalar(neg, 1.0)
}

/// `global + lambda1 * local + lambda2 * (1 - ssim)`.
pub fn loss_total(g: &mut Graph, pred: Var, target: Var, mask: &Tensor, w: LossWeights) -> Result<LossParts> {
    if w.lambda1 < 0.0 || w.lambda2 < 0.0 {
        return Err(Error::Invalid("loss weights must be non-negative".into()));
    }
    let global = loss_global(g, pred, target)?;
    let local = loss_local(g, pred, target, mask)?;
    let ls = loss_ssim(g, pred, target)?;
    let t1 = g.scale(local, w.lambda1)?;
    let t2 = g.scale(ls, w.lambda2)?;
    let total = g.add_all(&[global, t1, t2])?;
    let ssim = {
        let neg = g.scale(ls, -1.0)?;
        g.add_scalar(neg, 1.0)?
    };
    Ok(LossParts {
        total,
        global,
        local,
        ssim,
    })
}

/// Structural similarity of two tensors, no gradient.
pub fn ssim_index(x: &Tensor, y: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let (a, b) = (g.constant(x.clone()), g.constant(y.clone()));
    let s = ssim(&mut g, a, b)?;
    Ok(g.value(s).item())
}

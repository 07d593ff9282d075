//! Self-attention refinement of each branch and cross-modal global
//! re-weighting of the fused branch.
//!
//! Pixel attention matrices are `(HW, HW)` with rows indexing query pixels;
//! every row is a softmax.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv2d, ParamId, Session};
use crate::ops::ConvSpec;
use crate::tensor::Tensor;

/// `(N, C, H, W)` -> `(N, 1, C, HW)`.
fn flatten(s: &mut Session, x: Var) -> Result<Var> {
    let [n, c, h, w] = s.graph.shape(x).0;
    s.graph.reshape(x, [n, 1, c, h * w])
}

/// Spatial and channel self-attention on one branch.
#[derive(Clone, Debug)]
pub struct Scru {
    pub channels: usize,
    pub query: Conv2d,
    pub key: Conv2d,
    pub value: Conv2d,
    /// Weights of the two attention terms, both starting at zero.
    pub gamma_spatial: ParamId,
    pub gamma_channel: ParamId,
    /// Sum two residual branches, `(x + att_sp) + (x + att_ch)`, instead of
    /// the weighted single residual.
    pub literal: bool,
}

impl Scru {
    pub fn build(b: &mut Builder, name: &str, channels: usize, literal: bool) -> Result<Self> {
        b.scope(name, |b| {
            let r = (channels / 8).max(1);
            Ok(Scru {
                channels,
                query: Conv2d::build(b, "query", ConvSpec::same(channels, r, 1), true)?,
                key: Conv2d::build(b, "key", ConvSpec::same(channels, r, 1), true)?,
                value: Conv2d::build(b, "value", ConvSpec::same(channels, channels, 1), true)?,
                gamma_spatial: b.param("gamma_spatial", Tensor::scalar(0.0))?,
                gamma_channel: b.param("gamma_channel", Tensor::scalar(0.0))?,
                literal,
            })
        })
    }

    /// Row-stochastic `(N, 1, HW, HW)` pixel attention.
    pub fn spatial_attention(&self, s: &mut Session, x: Var) -> Result<Var> {
        let q = self.query.forward(s, x)?;
        let q = flatten(s, q)?;
        let k = self.key.forward(s, x)?;
        let k = flatten(s, k)?;
        let qt = s.graph.transpose(q)?;
        let e = s.graph.matmul(qt, k)?;
        s.graph.softmax(e, 3)
    }

    /// Row-stochastic `(N, 1, C, C)` channel attention.
    pub fn channel_attention(&self, s: &mut Session, x: Var) -> Result<Var> {
        let f = flatten(s, x)?;
        let ft = s.graph.transpose(f)?;
        let e = s.graph.matmul(f, ft)?;
        s.graph.softmax(e, 3)
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let xs = s.graph.shape(x);
        if xs.c() != self.channels {
            return Err(Error::shape("scru", "input", format!("{xs} vs {} channels", self.channels)));
        }
        let a = self.spatial_attention(s, x)?;
        let v = self.value.forward(s, x)?;
        let v = flatten(s, v)?;
        let at = s.graph.transpose(a)?;
        let sp = s.graph.matmul(v, at)?;
        let sp = s.graph.reshape(sp, xs)?;

        let b = self.channel_attention(s, x)?;
        let f = flatten(s, x)?;
        let ch = s.graph.matmul(b, f)?;
        let ch = s.graph.reshape(ch, xs)?;

        if self.literal {
            let l = s.graph.add(x, sp)?;
            let r = s.graph.add(x, ch)?;
            return s.graph.add(l, r);
        }
        let gs = s.param(self.gamma_spatial);
        let gc = s.param(self.gamma_channel);
        let sp = s.graph.mul(sp, gs)?;
        let ch = s.graph.mul(ch, gc)?;
        s.graph.add_all(&[x, sp, ch])
    }
}

/// Global dependency weights from the optical/radar pair and from the fused
/// branch, applied to the fused branch with a residual.
#[derive(Clone, Debug)]
pub struct Mwru {
    pub channels: usize,
    pub theta: Conv2d,
    pub sigma: Conv2d,
    pub phi: Conv2d,
    pub omega: Conv2d,
}

impl Mwru {
    pub fn build(b: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        b.scope(name, |b| {
            let spec = ConvSpec::same(channels, (channels / 2).max(1), 1);
            Ok(Mwru {
                channels,
                theta: Conv2d::build(b, "theta", spec, true)?,
                sigma: Conv2d::build(b, "sigma", spec, true)?,
                phi: Conv2d::build(b, "phi", spec, true)?,
                omega: Conv2d::build(b, "omega", spec, true)?,
            })
        })
    }

    fn affinity(s: &mut Session, a: &Conv2d, xa: Var, b: &Conv2d, xb: Var) -> Result<Var> {
        let fa = a.forward(s, xa)?;
        let fa = flatten(s, fa)?;
        let fb = b.forward(s, xb)?;
        let fb = flatten(s, fb)?;
        let fat = s.graph.transpose(fa)?;
        let e = s.graph.matmul(fat, fb)?;
        s.graph.softmax(e, 3)
    }

    /// Returns `(output, weights)` with `weights` the `(N, 1, HW, HW)` global
    /// dependency matrix.
    pub fn forward_with_weights(&self, s: &mut Session, opt: Var, sar: Var, fused: Var) -> Result<(Var, Var)> {
        let fs = s.graph.shape(fused);
        if fs.c() != self.channels {
            return Err(Error::shape("mwru", "fused", format!("{fs} vs {} channels", self.channels)));
        }
        for (name, v) in [("optical", opt), ("radar", sar)] {
            let vs = s.graph.shape(v);
            if vs != fs {
                return Err(Error::shape("mwru", name, format!("{vs} vs fused {fs}")));
            }
        }
        let m1 = Self::affinity(s, &self.theta, opt, &self.sigma, sar)?;
        let m2 = Self::affinity(s, &self.phi, fused, &self.omega, fused)?;
        let m = s.graph.matmul(m1, m2)?;
        let weights = s.graph.softmax(m, 3)?;
        let f = flatten(s, fused)?;
        let wt = s.graph.transpose(weights)?;
        let y = s.graph.matmul(f, wt)?;
        let y = s.graph.reshape(y, fs)?;
        Ok((s.graph.add(y, fused)?, weights))
    }

    pub fn forward(&self, s: &mut Session, opt: Var, sar: Var, fused: Var) -> Result<Var> {
        Ok(self.forward_with_weights(s, opt, sar, fused)?.0)
    }
}

/// Per-branch self-attention followed by cross-modal re-weighting.
#[derive(Clone, Debug)]
pub struct Mmrf {
    pub opt: Scru,
    pub sar: Scru,
    pub fused: Scru,
    pub mwru: Mwru,
}

impl Mmrf {
    pub fn build(b: &mut Builder, name: &str, channels: usize, literal: bool) -> Result<Self> {
        b.scope(name, |b| {
            Ok(Mmrf {
                opt: Scru::build(b, "scru_opt", channels, literal)?,
                sar: Scru::build(b, "scru_sar", channels, literal)?,
                fused: Scru::build(b, "scru_fused", channels, literal)?,
                mwru: Mwru::build(b, "mwru", channels)?,
            })
        })
    }

    pub fn forward(&self, s: &mut Session, opt: Var, sar: Var, fused: Var) -> Result<Var> {
        let o = self.opt.forward(s, opt)?;
        let r = self.sar.forward(s, sar)?;
        let f = self.fused.forward(s, fused)?;
        self.mwru.forward(s, o, r, f)
    }
}

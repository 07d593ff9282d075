//! The full cloud-removal network.
//!
//! Encoder (per stream, optical shown; the radar stream mirrors it with
//! dynamic-filter residual blocks and plain convolutions):
//!
//! ```text
//! stem -> RB -> fuse1 -> down -> RB -> fuse2 -> down -> RB -> fuse3 -> RB -> fuse4 -> exit
//! ```
//!
//! The fused outputs of the four fusion blocks are pooled to the bottleneck
//! extent, concatenated and projected to form a third branch. The three
//! bottleneck branches are refined jointly, passed through pyramid pooling
//! and decoded with two upsampling stages that merge optical skips. The
//! decoder output is added to the cloudy input.

mod checkpoint;
mod config;

pub use checkpoint::{load_params, save_params};
pub use config::{Ablations, ModelConfig, SarInput};

use crate::autograd::Var;
use crate::blocks::{Aspp, Down, PlainRb, RbDf, RbGc, Up};
use crate::error::{Error, Result};
use crate::fusion::{Mmcf, Mmrf};
use crate::nn::{Builder, Conv2d, ParamStore, Session};
use crate::ops::{ConvSpec, Mode};
use crate::tensor::Tensor;

/// Optical residual block: gated, or plain when gating is off.
#[derive(Clone, Debug)]
pub enum OptRb {
    Gated(RbGc),
    Plain(PlainRb),
}

impl OptRb {
    fn build(b: &mut Builder, name: &str, c: usize, gated: bool) -> Result<Self> {
        Ok(if gated {
            OptRb::Gated(RbGc::build(b, name, c)?)
        } else {
            OptRb::Plain(PlainRb::build(b, name, c)?)
        })
    }

    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        match self {
            OptRb::Gated(r) => r.forward(s, x),
            OptRb::Plain(r) => r.forward(s, x),
        }
    }
}

/// One encoder stream.
#[derive(Clone, Debug)]
struct Stream<R> {
    stem: Conv2d,
    rbs: [R; 4],
    downs: [Down; 2],
    exit: Conv2d,
}

/// Bottleneck refinement of the three branches.
#[derive(Clone, Debug)]
enum Refine {
    Attention(Mmrf),
    Concat(Conv2d),
}

/// Radar stream, fusion branch and refinement, absent in the optical-only
/// network.
#[derive(Clone, Debug)]
struct RadarPath {
    stream: Stream<RbDf>,
    fusion_proj: Conv2d,
    refine: Refine,
}

#[derive(Clone, Debug)]
struct Decoder {
    aspp: Option<Aspp>,
    ups: [Up; 2],
    merges: [Conv2d; 2],
    rbs: [[PlainRb; 2]; 2],
    out: Conv2d,
}

/// Network structure; parameter values live in the matching [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    opt: Stream<OptRb>,
    mmcf: [Mmcf; 4],
    radar: Option<RadarPath>,
    decoder: Decoder,
}

/// Intermediate activations of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Trace {
    pub output: Var,
    pub bottleneck: Var,
}

impl Model {
    /// Build the network and its seeded initial parameters.
    pub fn build(config: ModelConfig, seed: u64) -> Result<(Model, ParamStore)> {
        config.validate()?;
        let mut b = Builder::new(seed);
        let model = Self::build_with(&mut b, config)?;
        Ok((model, b.finish()))
    }

    fn build_with(b: &mut Builder, config: ModelConfig) -> Result<Model> {
        let c1 = config.base_channels;
        let widths = [c1, 2 * c1, 4 * c1, 4 * c1];
        let ab = config.ablations;
        let dual = config.dual();
        let gated = !ab.no_gc;

        let opt = b.scope("opt", |b| {
            Ok(Stream {
                stem: Conv2d::build(b, "stem", ConvSpec::same(config.opt_channels, c1, 3), true)?,
                rbs: [
                    OptRb::build(b, "rb1", widths[0], gated)?,
                    OptRb::build(b, "rb2", widths[1], gated)?,
                    OptRb::build(b, "rb3", widths[2], gated)?,
                    OptRb::build(b, "rb4", widths[3], gated)?,
                ],
                downs: [Down::build(b, "down1", c1, 2 * c1)?, Down::build(b, "down2", 2 * c1, 4 * c1)?],
                exit: Conv2d::build(b, "exit", ConvSpec::same(4 * c1, 4 * c1, 3), true)?,
            })
        })?;

        let mmcf = [
            Mmcf::build(b, "fuse1", widths[0], gated, dual, !ab.no_mmcf)?,
            Mmcf::build(b, "fuse2", widths[1], gated, dual, !ab.no_mmcf)?,
            Mmcf::build(b, "fuse3", widths[2], gated, dual, !ab.no_mmcf)?,
            Mmcf::build(b, "fuse4", widths[3], gated, dual, !ab.no_mmcf)?,
        ];

        let radar = if dual {
            let dynamic = !ab.no_scdf;
            let stream = b.scope("sar", |b| {
                Ok(Stream {
                    stem: Conv2d::build(b, "stem", ConvSpec::same(config.sar_channels(), c1, 3), true)?,
                    rbs: [
                        RbDf::build(b, "rb1", widths[0], dynamic)?,
                        RbDf::build(b, "rb2", widths[1], dynamic)?,
                        RbDf::build(b, "rb3", widths[2], dynamic)?,
                        RbDf::build(b, "rb4", widths[3], dynamic)?,
                    ],
                    downs: [Down::build(b, "down1", c1, 2 * c1)?, Down::build(b, "down2", 2 * c1, 4 * c1)?],
                    exit: Conv2d::build(b, "exit", ConvSpec::same(4 * c1, 4 * c1, 3), true)?,
                })
            })?;
            // fused widths are twice the stage widths: 2 + 4 + 8 + 8 base widths
            let fused_in = 2 * widths.iter().sum::<usize>();
            let fusion_proj = Conv2d::build(b, "fusion_proj", ConvSpec::same(fused_in, 4 * c1, 3), true)?;
            let refine = if ab.no_mmrf {
                Refine::Concat(Conv2d::build(b, "refine", ConvSpec::same(12 * c1, 4 * c1, 1), true)?)
            } else {
                Refine::Attention(Mmrf::build(b, "refine", 4 * c1, config.scru_literal)?)
            };
            Some(RadarPath {
                stream,
                fusion_proj,
                refine,
            })
        } else {
            None
        };

        let decoder = b.scope("dec", |b| {
            Ok(Decoder {
                aspp: if ab.no_aspp {
                    None
                } else {
                    Some(Aspp::build(b, "aspp", 4 * c1, config.rates())?)
                },
                ups: [Up::build(b, "up1", 4 * c1, 2 * c1)?, Up::build(b, "up2", 2 * c1, c1)?],
                merges: [
                    Conv2d::build(b, "merge1", ConvSpec::same(4 * c1, 2 * c1, 1), true)?,
                    Conv2d::build(b, "merge2", ConvSpec::same(2 * c1, c1, 1), true)?,
                ],
                rbs: [
                    [PlainRb::build(b, "rb1a", 2 * c1)?, PlainRb::build(b, "rb1b", 2 * c1)?],
                    [PlainRb::build(b, "rb2a", c1)?, PlainRb::build(b, "rb2b", c1)?],
                ],
                out: Conv2d::build(b, "out", ConvSpec::same(c1, config.opt_channels, 3), true)?,
            })
        })?;

        Ok(Model {
            config,
            opt,
            mmcf,
            radar,
            decoder,
        })
    }

    /// The decoder's last convolution; zeroing it makes the network the
    /// identity on the cloudy input.
    pub fn output_conv(&self) -> &Conv2d {
        &self.decoder.out
    }

    /// Check input shapes and value range.
    pub fn check_inputs(&self, cloudy: &Tensor, sar: Option<&Tensor>) -> Result<()> {
        let cs = cloudy.shape();
        let p = self.config.patch;
        if cs.c() != self.config.opt_channels || cs.h() != p || cs.w() != p {
            return Err(Error::shape(
                "model",
                "cloudy",
                format!("{cs}, expected Nx{}x{p}x{p}", self.config.opt_channels),
            ));
        }
        let in_range = |t: &Tensor| t.data().iter().all(|v| (0.0..=1.0).contains(v));
        if !in_range(cloudy) {
            return Err(Error::Invalid("cloudy input outside [0, 1]".into()));
        }
        match (self.config.dual(), sar) {
            (true, Some(t)) => {
                let ss = t.shape();
                if ss.n() != cs.n() || ss.c() != self.config.sar_channels() || ss.h() != p || ss.w() != p {
                    return Err(Error::shape(
                        "model",
                        "sar",
                        format!("{ss}, expected {}x{}x{p}x{p}", cs.n(), self.config.sar_channels()),
                    ));
                }
                if !in_range(t) {
                    return Err(Error::Invalid("radar input outside [0, 1]".into()));
                }
                Ok(())
            }
            (true, None) => Err(Error::Invalid("model needs a radar input".into())),
            (false, _) => Ok(()),
        }
    }

    /// Record the forward pass. `sar` is ignored by the optical-only network.
    pub fn forward(&self, s: &mut Session, cloudy: Var, sar: Option<Var>) -> Result<Var> {
        Ok(self.trace(s, cloudy, sar)?.output)
    }

    pub fn trace(&self, s: &mut Session, cloudy: Var, sar: Option<Var>) -> Result<Trace> {
        self.check_inputs(s.value(cloudy), sar.map(|v| s.value(v)))?;
        let act_conv = |s: &mut Session, c: &Conv2d, x: Var| -> Result<Var> {
            let y = c.forward(s, x)?;
            s.graph.leaky_relu(y)
        };

        let mut o = act_conv(s, &self.opt.stem, cloudy)?;
        let mut r = match (&self.radar, sar) {
            (Some(rp), Some(x)) => Some(act_conv(s, &rp.stream.stem, x)?),
            _ => None,
        };
        let mut skips = Vec::with_capacity(2);
        let mut fused = Vec::with_capacity(4);
        for stage in 0..4 {
            if stage == 1 || stage == 2 {
                o = self.opt.downs[stage - 1].forward(s, o)?;
                if let (Some(rp), Some(x)) = (&self.radar, r) {
                    r = Some(rp.stream.downs[stage - 1].forward(s, x)?);
                }
            }
            o = self.opt.rbs[stage].forward(s, o)?;
            if let (Some(rp), Some(x)) = (&self.radar, r) {
                r = Some(rp.stream.rbs[stage].forward(s, x)?);
            }
            let out = self.mmcf[stage].forward(s, o, r)?;
            o = out.opt;
            r = out.sar;
            if let Some(f) = out.fused {
                fused.push(f);
            }
            if stage < 2 {
                skips.push(o);
            }
        }
        o = act_conv(s, &self.opt.exit, o)?;

        let bottleneck = match (&self.radar, r) {
            (Some(rp), Some(x)) => {
                let r = act_conv(s, &rp.stream.exit, x)?;
                let mut pooled = Vec::with_capacity(4);
                for (i, &f) in fused.iter().enumerate() {
                    let mut f = f;
                    for _ in 0..2usize.saturating_sub(i) {
                        f = s.graph.avg_pool(f, 2, 2)?;
                    }
                    pooled.push(f);
                }
                let cat = s.graph.concat(&pooled)?;
                let f = act_conv(s, &rp.fusion_proj, cat)?;
                match &rp.refine {
                    Refine::Attention(m) => m.forward(s, o, r, f)?,
                    Refine::Concat(c) => {
                        let cat = s.graph.concat(&[o, r, f])?;
                        act_conv(s, c, cat)?
                    }
                }
            }
            _ => o,
        };

        let d = &self.decoder;
        let mut h = match &d.aspp {
            Some(a) => a.forward(s, bottleneck)?,
            None => bottleneck,
        };
        for k in 0..2 {
            h = d.ups[k].forward(s, h)?;
            let cat = s.graph.concat(&[h, skips[1 - k]])?;
            h = act_conv(s, &d.merges[k], cat)?;
            for rb in &d.rbs[k] {
                h = rb.forward(s, h)?;
            }
        }
        let res = d.out.forward(s, h)?;
        let output = s.graph.add(res, cloudy)?;
        Ok(Trace { output, bottleneck })
    }

    /// Evaluation-mode prediction without gradient recording.
    pub fn predict(&self, store: &mut ParamStore, cloudy: &Tensor, sar: Option<&Tensor>) -> Result<Tensor> {
        let mut s = Session::new(store, Mode::Eval, false);
        let c = s.input(cloudy.clone(), false);
        let r = sar.map(|t| s.input(t.clone(), false));
        let y = self.forward(&mut s, c, r)?;
        Ok(s.value(y).clone())
    }
}

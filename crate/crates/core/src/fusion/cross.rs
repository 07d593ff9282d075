//! Dual-stream block with dense cross-modal skips between its three stages.

use crate::autograd::Var;
use crate::blocks::OptConv;
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv2d, Session};
use crate::ops::ConvSpec;

/// 1x1 projections carrying features from one stream into the other.
///
/// `into_sar[k]` maps optical stage features into the radar stream, in the
/// order (stage 1 -> 2, stage 1 -> 3, stage 2 -> 3); `into_opt` likewise.
#[derive(Clone, Debug)]
pub struct CrossWeights {
    pub into_sar: [Conv2d; 3],
    pub into_opt: [Conv2d; 3],
}

impl CrossWeights {
    fn build(b: &mut Builder, channels: usize) -> Result<Self> {
        let spec = ConvSpec::same(channels, channels, 1);
        let mk = |b: &mut Builder, dir: &str| -> Result<[Conv2d; 3]> {
            Ok([
                Conv2d::build(b, &format!("{dir}12"), spec, true)?,
                Conv2d::build(b, &format!("{dir}13"), spec, true)?,
                Conv2d::build(b, &format!("{dir}23"), spec, true)?,
            ])
        };
        Ok(CrossWeights {
            into_sar: mk(b, "into_sar")?,
            into_opt: mk(b, "into_opt")?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MmcfOutput {
    /// `input_opt + F3_opt`
    pub opt: Var,
    /// `input_sar + F3_sar`; absent for an optical-only block.
    pub sar: Option<Var>,
    /// Channel concatenation of the two third-stage features (2C channels).
    pub fused: Option<Var>,
}

/// Three conv stages per stream; the optical stream uses [`OptConv`], the
/// radar stream plain convolutions.
#[derive(Clone, Debug)]
pub struct Mmcf {
    pub channels: usize,
    pub opt: [OptConv; 3],
    pub sar: Option<[Conv2d; 3]>,
    pub cross: Option<CrossWeights>,
}

impl Mmcf {
    /// `dual = false` builds only the optical stack; `cross = false` drops
    /// the inter-stream projections.
    pub fn build(b: &mut Builder, name: &str, channels: usize, gated: bool, dual: bool, cross: bool) -> Result<Self> {
        b.scope(name, |b| {
            let spec = ConvSpec::same(channels, channels, 3);
            let opt = [
                OptConv::build(b, "opt1", spec, gated)?,
                OptConv::build(b, "opt2", spec, gated)?,
                OptConv::build(b, "opt3", spec, gated)?,
            ];
            let sar = if dual {
                Some([
                    Conv2d::build(b, "sar1", spec, true)?,
                    Conv2d::build(b, "sar2", spec, true)?,
                    Conv2d::build(b, "sar3", spec, true)?,
                ])
            } else {
                None
            };
            let cross = if dual && cross {
                Some(CrossWeights::build(b, channels)?)
            } else {
                None
            };
            Ok(Mmcf {
                channels,
                opt,
                sar,
                cross,
            })
        })
    }

    pub fn forward(&self, s: &mut Session, x_opt: Var, x_sar: Option<Var>) -> Result<MmcfOutput> {
        let so = s.graph.shape(x_opt);
        if so.c() != self.channels {
            return Err(Error::shape("mmcf", "optical", format!("{so} vs {} channels", self.channels)));
        }
        let (Some(sar), Some(x_sar)) = (&self.sar, x_sar) else {
            if self.sar.is_some() {
                return Err(Error::Invalid("mmcf: radar input required".into()));
            }
            let mut h = x_opt;
            for conv in &self.opt {
                h = conv.forward(s, h)?;
            }
            let opt = s.graph.add(x_opt, h)?;
            return Ok(MmcfOutput {
                opt,
                sar: None,
                fused: None,
            });
        };
        let ss = s.graph.shape(x_sar);
        if ss != so {
            return Err(Error::shape("mmcf", "radar", format!("{ss} vs optical {so}")));
        }

        let act_conv = |s: &mut Session, conv: &Conv2d, x: Var| -> Result<Var> {
            let y = conv.forward(s, x)?;
            s.graph.leaky_relu(y)
        };
        let project = |s: &mut Session, cw: Option<&Conv2d>, x: Var, acc: Var| -> Result<Var> {
            match cw {
                Some(c) => {
                    let p = c.forward(s, x)?;
                    s.graph.add(acc, p)
                }
                None => Ok(acc),
            }
        };
        let to_sar = |k: usize| self.cross.as_ref().map(|c| &c.into_sar[k]);
        let to_opt = |k: usize| self.cross.as_ref().map(|c| &c.into_opt[k]);

        let o1 = self.opt[0].forward(s, x_opt)?;
        let s1 = act_conv(s, &sar[0], x_sar)?;

        let in_s2 = project(s, to_sar(0), o1, s1)?;
        let s2 = act_conv(s, &sar[1], in_s2)?;
        let in_o2 = project(s, to_opt(0), s1, o1)?;
        let o2 = self.opt[1].forward(s, in_o2)?;

        let in_s3 = project(s, to_sar(1), o1, s2)?;
        let in_s3 = project(s, to_sar(2), o2, in_s3)?;
        let s3 = act_conv(s, &sar[2], in_s3)?;
        let in_o3 = project(s, to_opt(1), s1, o2)?;
        let in_o3 = project(s, to_opt(2), s2, in_o3)?;
        let o3 = self.opt[2].forward(s, in_o3)?;

        let fused = s.graph.concat(&[o3, s3])?;
        Ok(MmcfOutput {
            opt: s.graph.add(x_opt, o3)?,
            sar: Some(s.graph.add(x_sar, s3)?),
            fused: Some(fused),
        })
    }
}

use crate::autograd::Var;
use crate::error::Result;
use crate::nn::{Builder, Conv2d, Session};
use crate::ops::ConvSpec;

/// `leaky_relu(conv_f(x)) * sigmoid(conv_g(x))`.
#[derive(Clone, Debug)]
pub struct GatedConv {
    pub feature: Conv2d,
    pub gate: Conv2d,
}

impl GatedConv {
    pub fn build(b: &mut Builder, name: &str, spec: ConvSpec) -> Result<Self> {
        b.scope(name, |b| {
            Ok(GatedConv {
                feature: Conv2d::build(b, "feature", spec, true)?,
                gate: Conv2d::build(b, "gate", spec, true)?,
            })
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let f = self.feature.forward(s, x)?;
        let f = s.graph.leaky_relu(f)?;
        let g = self.gate.forward(s, x)?;
        let g = s.graph.sigmoid(g)?;
        s.graph.mul(f, g)
    }
}

/// Convolution on the optical stream: gated, or plain `leaky_relu(conv(x))`
/// when gating is switched off.
#[derive(Clone, Debug)]
pub enum OptConv {
    Gated(GatedConv),
    Plain(Conv2d),
}

impl OptConv {
    pub fn build(b: &mut Builder, name: &str, spec: ConvSpec, gated: bool) -> Result<Self> {
        if gated {
            Ok(OptConv::Gated(GatedConv::build(b, name, spec)?))
        } else {
            Ok(OptConv::Plain(Conv2d::build(b, name, spec, true)?))
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        match self {
            OptConv::Gated(g) => g.forward(s, x),
            OptConv::Plain(c) => {
                let y = c.forward(s, x)?;
                s.graph.leaky_relu(y)
            }
        }
    }
}

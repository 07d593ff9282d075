use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Builder, Conv2d, ConvTranspose2d, Session};
use crate::ops::ConvSpec;

fn resample_spec(cin: usize, cout: usize) -> ConvSpec {
    ConvSpec::same(cin, cout, 4).with_stride(2).with_padding(1)
}

/// 4x4 stride-2 convolution, batch norm, activation: halves the extent.
#[derive(Clone, Debug)]
pub struct Down {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl Down {
    pub fn build(b: &mut Builder, name: &str, cin: usize, cout: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(Down {
                conv: Conv2d::build(b, "conv", resample_spec(cin, cout), false)?,
                bn: BatchNorm::build(b, "bn", cout)?,
            })
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let xs = s.graph.shape(x);
        if !xs.h().is_multiple_of(2) || !xs.w().is_multiple_of(2) || xs.h() < 2 || xs.w() < 2 {
            return Err(Error::shape("downsample", "input", format!("{xs} has odd or unit spatial extent")));
        }
        let y = self.conv.forward(s, x)?;
        let y = self.bn.forward(s, y)?;
        s.graph.leaky_relu(y)
    }
}

/// 4x4 stride-2 transposed convolution, batch norm, activation: doubles the
/// extent.
#[derive(Clone, Debug)]
pub struct Up {
    pub conv: ConvTranspose2d,
    pub bn: BatchNorm,
}

impl Up {
    pub fn build(b: &mut Builder, name: &str, cin: usize, cout: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(Up {
                conv: ConvTranspose2d::build(b, "conv", resample_spec(cin, cout), false)?,
                bn: BatchNorm::build(b, "bn", cout)?,
            })
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        let y = self.bn.forward(s, y)?;
        s.graph.leaky_relu(y)
    }
}

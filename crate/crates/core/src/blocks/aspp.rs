use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv2d, Session};
use crate::ops::{ConvSpec, PadMode};

/// Dilation rates of the three atrous branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsppRates(pub [usize; 3]);

impl AsppRates {
    pub const FULL: AsppRates = AsppRates([6, 12, 18]);
    pub const REDUCED: AsppRates = AsppRates([2, 4, 6]);

    /// Full rates when the largest one fits twice into `extent`, reduced
    /// rates otherwise.
    pub fn for_extent(extent: usize) -> Self {
        if extent >= 2 * Self::FULL.0[2] {
            Self::FULL
        } else {
            Self::REDUCED
        }
    }
}

/// Atrous spatial pyramid pooling: a 1x1 branch, three dilated 3x3
/// branches and an image-pooling branch, concatenated and projected back to
/// the input width.
///
/// Dilated branches pad by edge replication, so a constant input stays
/// constant.
#[derive(Clone, Debug)]
pub struct Aspp {
    pub channels: usize,
    pub rates: AsppRates,
    pub point: Conv2d,
    pub atrous: [Conv2d; 3],
    pub pool: Conv2d,
    pub project: Conv2d,
}

impl Aspp {
    pub fn build(b: &mut Builder, name: &str, channels: usize, rates: AsppRates) -> Result<Self> {
        b.scope(name, |b| {
            let c = channels;
            let dil = |r: usize| ConvSpec::same(c, c, 3).with_padding(0).with_dilation(r);
            Ok(Aspp {
                channels,
                rates,
                point: Conv2d::build(b, "point", ConvSpec::same(c, c, 1), true)?,
                atrous: [
                    Conv2d::build(b, "atrous1", dil(rates.0[0]), true)?,
                    Conv2d::build(b, "atrous2", dil(rates.0[1]), true)?,
                    Conv2d::build(b, "atrous3", dil(rates.0[2]), true)?,
                ],
                pool: Conv2d::build(b, "pool", ConvSpec::same(c, c, 1), true)?,
                project: Conv2d::build(b, "project", ConvSpec::same(5 * c, c, 1), true)?,
            })
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let xs = s.graph.shape(x);
        if xs.h() < 2 || xs.w() < 2 {
            return Err(Error::shape("aspp", "input", format!("{xs} is smaller than 2x2")));
        }
        if xs.c() != self.channels {
            return Err(Error::shape("aspp", "input", format!("{xs} vs {} channels", self.channels)));
        }
        let mut branches = Vec::with_capacity(5);
        let p = self.point.forward(s, x)?;
        branches.push(s.graph.leaky_relu(p)?);
        for (conv, &r) in self.atrous.iter().zip(&self.rates.0) {
            let padded = s.graph.pad(x, r, PadMode::Replicate)?;
            let y = conv.forward(s, padded)?;
            branches.push(s.graph.leaky_relu(y)?);
        }
        let g = s.graph.global_avg_pool(x)?;
        let g = self.pool.forward(s, g)?;
        let g = s.graph.leaky_relu(g)?;
        branches.push(s.graph.expand(g, xs)?);
        let cat = s.graph.concat(&branches)?;
        self.project.forward(s, cat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Mode;
    use crate::tensor::Tensor;

    #[test]
    fn constant_in_constant_out() {
        let mut b = Builder::new(4);
        let aspp = Aspp::build(&mut b, "aspp", 3, AsppRates::REDUCED).unwrap();
        let mut store = b.finish();
        let mut s = Session::new(&mut store, Mode::Eval, false);
        let x = s.input(Tensor::full([1, 3, 5, 7], 0.7), false);
        let y = aspp.forward(&mut s, x).unwrap();
        let v = s.value(y);
        assert_eq!(v.shape(), Tensor::zeros([1, 3, 5, 7]).shape());
        for c in 0..3 {
            let first = v.get([0, c, 0, 0]);
            for h in 0..5 {
                for w in 0..7 {
                    assert!((v.get([0, c, h, w]) - first).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_tiny_extent() {
        let mut b = Builder::new(0);
        let aspp = Aspp::build(&mut b, "aspp", 2, AsppRates::REDUCED).unwrap();
        let mut store = b.finish();
        let mut s = Session::new(&mut store, Mode::Eval, false);
        let x = s.input(Tensor::ones([1, 2, 1, 4]), false);
        assert!(aspp.forward(&mut s, x).is_err());
    }

    #[test]
    fn rate_selection() {
        assert_eq!(AsppRates::for_extent(64), AsppRates::FULL);
        assert_eq!(AsppRates::for_extent(8), AsppRates::REDUCED);
    }
}

use crate::autograd::Var;
use crate::blocks::gated::GatedConv;
use crate::blocks::scdf::Scdf;
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv2d, Session};
use crate::ops::ConvSpec;

/// Scale applied to every residual branch.
pub const RESIDUAL_SCALE: f64 = 0.1;

fn check_channels(op: &'static str, s: &Session, x: Var, c: usize) -> Result<()> {
    let xs = s.graph.shape(x);
    if xs.c() != c {
        return Err(Error::shape(op, "input", format!("{xs} vs {c} block channels")));
    }
    Ok(())
}

fn residual(s: &mut Session, x: Var, branch: Var) -> Result<Var> {
    let scaled = s.graph.scale(branch, RESIDUAL_SCALE)?;
    s.graph.add(x, scaled)
}

/// Residual block of three 3x3 gated convolutions.
#[derive(Clone, Debug)]
pub struct RbGc {
    pub channels: usize,
    pub convs: [GatedConv; 3],
}

impl RbGc {
    pub fn build(b: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        b.scope(name, |b| {
            let spec = ConvSpec::same(channels, channels, 3);
            Ok(RbGc {
                channels,
                convs: [
                    GatedConv::build(b, "gc1", spec)?,
                    GatedConv::build(b, "gc2", spec)?,
                    GatedConv::build(b, "gc3", spec)?,
                ],
            })
        })
    }

    /// The unscaled residual branch.
    pub fn branch(&self, s: &mut Session, x: Var) -> Result<Var> {
        check_channels("rb_gc", s, x, self.channels)?;
        let mut h = x;
        for (i, gc) in self.convs.iter().enumerate() {
            h = gc.forward(s, h)?;
            if i < 2 {
                h = s.graph.leaky_relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let b = self.branch(s, x)?;
        residual(s, x, b)
    }
}

/// Residual block of three 3x3 convolutions with dynamic filtering after
/// the first two; with `scdf` absent it is a plain three-conv block.
#[derive(Clone, Debug)]
pub struct RbDf {
    pub channels: usize,
    pub convs: [Conv2d; 3],
    pub scdf: Option<[Scdf; 2]>,
}

impl RbDf {
    pub fn build(b: &mut Builder, name: &str, channels: usize, dynamic: bool) -> Result<Self> {
        b.scope(name, |b| {
            let spec = ConvSpec::same(channels, channels, 3);
            let convs = [
                Conv2d::build(b, "conv1", spec, true)?,
                Conv2d::build(b, "conv2", spec, true)?,
                Conv2d::build(b, "conv3", spec, true)?,
            ];
            let scdf = if dynamic {
                Some([Scdf::build(b, "scdf1", channels)?, Scdf::build(b, "scdf2", channels)?])
            } else {
                None
            };
            Ok(RbDf { channels, convs, scdf })
        })
    }

    pub fn branch(&self, s: &mut Session, x: Var) -> Result<Var> {
        check_channels("rb_df", s, x, self.channels)?;
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(s, h)?;
            h = s.graph.leaky_relu(h)?;
            if let (Some(df), true) = (&self.scdf, i < 2) {
                h = df[i].forward(s, h)?;
            }
        }
        Ok(h)
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let b = self.branch(s, x)?;
        residual(s, x, b)
    }
}

/// Decoder residual block: conv, act, conv, act, conv.
#[derive(Clone, Debug)]
pub struct PlainRb {
    pub channels: usize,
    pub convs: [Conv2d; 3],
}

impl PlainRb {
    pub fn build(b: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        b.scope(name, |b| {
            let spec = ConvSpec::same(channels, channels, 3);
            Ok(PlainRb {
                channels,
                convs: [
                    Conv2d::build(b, "conv1", spec, true)?,
                    Conv2d::build(b, "conv2", spec, true)?,
                    Conv2d::build(b, "conv3", spec, true)?,
                ],
            })
        })
    }

    pub fn branch(&self, s: &mut Session, x: Var) -> Result<Var> {
        check_channels("plain_rb", s, x, self.channels)?;
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(s, h)?;
            if i < 2 {
                h = s.graph.leaky_relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let b = self.branch(s, x)?;
        residual(s, x, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use crate::ops::Mode;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_all(store: &mut ParamStore) {
        let ids: Vec<_> = store.trainable_ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            // keep filter-normalization scales and gate openings meaningful
            if name.contains("fn_alpha") {
                continue;
            }
            let z = Tensor::zeros(store.get(id).shape());
            store.set(id, z).unwrap();
        }
    }

    fn input(c: usize) -> Tensor {
        Tensor::randn([1, c, 6, 6], 1.0, &mut ChaCha8Rng::seed_from_u64(5))
    }

    #[test]
    fn zero_branches_are_identity() {
        let mut b = Builder::new(0);
        let gc = RbGc::build(&mut b, "gc", 4).unwrap();
        let df = RbDf::build(&mut b, "df", 4, true).unwrap();
        let pl = PlainRb::build(&mut b, "pl", 4).unwrap();
        let mut store = b.finish();
        zero_all(&mut store);
        let x = input(4);
        let mut s = Session::new(&mut store, Mode::Eval, false);
        let xv = s.input(x.clone(), false);
        for y in [
            gc.forward(&mut s, xv).unwrap(),
            df.forward(&mut s, xv).unwrap(),
            pl.forward(&mut s, xv).unwrap(),
        ] {
            assert_eq!(s.value(y), &x);
        }
    }

    #[test]
    fn residual_scale_is_exact() {
        let mut b = Builder::new(3);
        let gc = RbGc::build(&mut b, "gc", 3).unwrap();
        let mut store = b.finish();
        let x = input(3);
        let mut s = Session::new(&mut store, Mode::Eval, false);
        let xv = s.input(x.clone(), false);
        let y = gc.forward(&mut s, xv).unwrap();
        let br = gc.branch(&mut s, xv).unwrap();
        let d = s.value(y).zip_map(&x, |a, b| a - b);
        let expect = s.value(br).map(|v| RESIDUAL_SCALE * v);
        assert!(d.max_abs_diff(&expect) <= 1e-12);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut b = Builder::new(0);
        let df = RbDf::build(&mut b, "df", 4, false).unwrap();
        let mut store = b.finish();
        let mut s = Session::new(&mut store, Mode::Eval, false);
        let xv = s.input(input(3), false);
        assert!(matches!(df.forward(&mut s, xv), Err(Error::Shape { .. })));
    }
}

//! Named finite-difference checks covering every differentiable operator
//! and block of the network at small shapes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check, check_module, CheckOptions, GradReport};
use crate::autograd::{Graph, Var};
use crate::blocks::{Aspp, AsppRates, Down, FilterBank, GatedConv, PlainRb, RbDf, RbGc, Scdf, Up};
use crate::data::mix_seed;
use crate::error::{Error, Result};
use crate::fusion::{Mmcf, Mmrf, Mwru, Scru};
use crate::loss::{loss_total, LossWeights};
use crate::nn::{BatchNorm, Builder, ParamStore, Session};
use crate::ops::{ConvSpec, Mode, PadMode};
use crate::tensor::{Shape, Tensor};

/// Pass threshold on the maximum relative error.
pub const SUITE_TOL: f64 = 1e-4;

/// Coordinates sampled per tensor.
const COORDS: usize = 24;

type Runner = fn(u64) -> Result<GradReport>;

pub struct Case {
    pub name: &'static str,
    run: Runner,
}

impl Case {
    pub fn run(&self, seed: u64) -> Result<GradReport> {
        (self.run)(seed)
    }
}

pub const CASES: &[Case] = &[
    Case { name: "conv2d", run: conv2d },
    Case { name: "conv2d_dilated", run: conv2d_dilated },
    Case { name: "conv_transpose2d", run: conv_transpose2d },
    Case { name: "batch_norm", run: batch_norm },
    Case { name: "matmul", run: matmul },
    Case { name: "softmax", run: softmax },
    Case { name: "pad_replicate", run: pad_replicate },
    Case { name: "avg_pool", run: avg_pool },
    Case { name: "kernel_standardize", run: kernel_standardize },
    Case { name: "filter_normalize", run: filter_normalize },
    Case { name: "scdf_apply", run: scdf_apply },
    Case { name: "scdf", run: scdf },
    Case { name: "gated_conv", run: gated_conv },
    Case { name: "rb_gc", run: rb_gc },
    Case { name: "rb_df", run: rb_df },
    Case { name: "plain_rb", run: plain_rb },
    Case { name: "down", run: down },
    Case { name: "up", run: up },
    Case { name: "aspp", run: aspp },
    Case { name: "mmcf", run: mmcf },
    Case { name: "scru", run: scru },
    Case { name: "scru_literal", run: scru_literal },
    Case { name: "mwru", run: mwru },
    Case { name: "mmrf", run: mmrf },
    Case { name: "loss_total", run: loss },
];

pub fn names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.name).collect()
}

/// Run one named check; unknown names list the valid ones.
pub fn run(name: &str, seed: u64) -> Result<GradReport> {
    match CASES.iter().find(|c| c.name == name) {
        Some(c) => c.run(seed),
        None => Err(Error::Invalid(format!(
            "unknown operator '{name}'; valid: {}",
            names().join(", ")
        ))),
    }
}

fn opts(seed: u64) -> CheckOptions {
    CheckOptions {
        max_coords_per_input: COORDS,
        seed: mix_seed(seed, 1),
        ..CheckOptions::default()
    }
}

fn random_inputs(seed: u64, shapes: &[[usize; 4]], lo: f64, hi: f64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 2));
    shapes.iter().map(|&s| Tensor::rand_uniform(Shape(s), lo, hi, &mut rng)).collect()
}

fn graph_case<F>(name: &str, seed: u64, shapes: &[[usize; 4]], f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check(name, &random_inputs(seed, shapes, -1.0, 1.0), f, opts(seed))
}

// Zero-initialized gates would hide whole sub-paths from the check, so
// every trainable value gets a random offset first.
fn jitter(store: &mut ParamStore, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 3));
    for id in store.trainable_ids().collect::<Vec<_>>() {
        let t = store.get(id);
        let noise = Tensor::randn(t.shape(), 0.3, &mut rng);
        let moved = t.zip_map(&noise, |a, b| a + b);
        store.set(id, moved)?;
    }
    Ok(())
}

fn module_case<M, B, F>(name: &str, seed: u64, mode: Mode, shapes: &[[usize; 4]], build: B, f: F) -> Result<GradReport>
where
    B: FnOnce(&mut Builder) -> Result<M>,
    F: Fn(&M, &mut Session, &[Var]) -> Result<Var>,
{
    let mut b = Builder::new(seed);
    let m = build(&mut b)?;
    let mut store = b.finish();
    jitter(&mut store, seed)?;
    let xs = random_inputs(seed, shapes, -1.0, 1.0);
    check_module(name, &store, &xs, mode, |s, v| f(&m, s, v), opts(seed))
}

fn conv2d(seed: u64) -> Result<GradReport> {
    let spec = ConvSpec::same(3, 4, 3).with_stride(2);
    graph_case("conv2d", seed, &[[1, 3, 7, 7], [4, 3, 3, 3], [1, 4, 1, 1]], |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), spec)
    })
}

fn conv2d_dilated(seed: u64) -> Result<GradReport> {
    let spec = ConvSpec::same(2, 3, 3).with_dilation(2).with_padding(1);
    graph_case("conv2d_dilated", seed, &[[1, 2, 8, 8], [3, 2, 3, 3]], |g, v| g.conv2d(v[0], v[1], None, spec))
}

fn conv_transpose2d(seed: u64) -> Result<GradReport> {
    let spec = ConvSpec::same(4, 3, 4).with_stride(2).with_padding(1);
    graph_case("conv_transpose2d", seed, &[[1, 4, 4, 4], [4, 3, 4, 4], [1, 3, 1, 1]], |g, v| {
        g.conv_transpose2d(v[0], v[1], Some(v[2]), spec)
    })
}

fn batch_norm(seed: u64) -> Result<GradReport> {
    module_case(
        "batch_norm",
        seed,
        Mode::Train,
        &[[1, 3, 5, 5]],
        |b| BatchNorm::build(b, "bn", 3),
        |m, s, v| m.forward(s, v[0]),
    )
}

fn matmul(seed: u64) -> Result<GradReport> {
    graph_case("matmul", seed, &[[1, 2, 5, 7], [1, 2, 7, 3]], |g, v| g.matmul(v[0], v[1]))
}

fn softmax(seed: u64) -> Result<GradReport> {
    graph_case("softmax", seed, &[[1, 2, 4, 6]], |g, v| {
        let a = g.softmax(v[0], 3)?;
        let b = g.softmax(v[0], 2)?;
        g.mul(a, b)
    })
}

fn pad_replicate(seed: u64) -> Result<GradReport> {
    graph_case("pad_replicate", seed, &[[1, 2, 4, 5]], |g, v| {
        let p = g.pad(v[0], 3, PadMode::Replicate)?;
        g.square(p)
    })
}

fn avg_pool(seed: u64) -> Result<GradReport> {
    graph_case("avg_pool", seed, &[[1, 2, 6, 6]], |g, v| {
        let p = g.avg_pool(v[0], 2, 2)?;
        let q = g.global_avg_pool(v[0])?;
        let q = g.expand(q, [1, 2, 3, 3])?;
        g.mul(p, q)
    })
}

fn kernel_standardize(seed: u64) -> Result<GradReport> {
    graph_case("kernel_standardize", seed, &[[1, 3, 9, 4]], |g, v| g.kernel_standardize(v[0]))
}

fn filter_normalize(seed: u64) -> Result<GradReport> {
    graph_case("filter_normalize", seed, &[[1, 4, 9, 1], [1, 4, 1, 1], [1, 4, 1, 1]], |g, v| {
        g.filter_normalize(v[0], v[1], v[2])
    })
}

fn scdf_apply(seed: u64) -> Result<GradReport> {
    graph_case("scdf_apply", seed, &[[1, 4, 6, 6], [1, 9, 6, 6], [1, 4, 9, 1]], |g, v| {
        g.scdf_apply(
            v[0],
            FilterBank {
                spatial: v[1],
                channel: v[2],
            },
        )
    })
}

fn scdf(seed: u64) -> Result<GradReport> {
    module_case(
        "scdf",
        seed,
        Mode::Eval,
        &[[1, 4, 6, 6]],
        |b| Scdf::build(b, "scdf", 4),
        |m, s, v| m.forward(s, v[0]),
    )
}

fn gated_conv(seed: u64) -> Result<GradReport> {
    module_case(
        "gated_conv",
        seed,
        Mode::Eval,
        &[[1, 4, 6, 6]],
        |b| GatedConv::build(b, "gc", ConvSpec::same(4, 4, 3)),
        |m, s, v| m.forward(s, v[0]),
    )
}

fn rb_gc(seed: u64) -> Result<GradReport> {
    module_case(
        "rb_gc",
        seed,
        Mode::Eval,
        &[[1, 4, 6, 6]],
        |b| RbGc::build(b, "rb", 4),
        |m, s, v| m.forward(s, v[0]),
    )
}

fn rb_df(seed: u64) -> Result<GradReport> {
    module_case(
        "rb_df",
        seed,
        Mode::Eval,
        &[[1, 4, 6, 6]],
        |b| RbDf::build(b, "rb", 4, true),
        |m, s, v| m.forward(s, v[0]),
    )
}

fn plain_rb(seed: u64) -> Result<GradReport> {
    module_case(
        "plain_rb",
        seed,
        Mode::Eval,
        &[[1, 4, 6, 6]],
        |b| PlainRb::build(b, "rb", 4),
        |m, s, v| m.forward(s, v[0]),
    )
}

fn down(seed: u64) -> Result<GradReport> {
    module_case(
        "down",
        seed,
        Mode::Train,
        &[[1, 3, 8, 8]],
        |b| Down::build(b, "down", 3, 4),
        |m, s, v| m.forward(s, v[0]),
    )
}

fn up(seed: u64) -> Result<GradReport> {
    module_case(
        "up",
        seed,
        Mode::Train,
        &[[1, 4, 4, 4]],
        |b| Up::build(b, "up", 4, 3),
        |m, s, v| m.forward(s, v[0]),
    )
}

fn aspp(seed: u64) -> Result<GradReport> {
    module_case(
        "aspp",
        seed,
        Mode::Eval,
        &[[1, 4, 8, 8]],
        |b| Aspp::build(b, "aspp", 4, AsppRates::REDUCED),
        |m, s, v| m.forward(s, v[0]),
    )
}

fn mmcf(seed: u64) -> Result<GradReport> {
    module_case(
        "mmcf",
        seed,
        Mode::Eval,
        &[[1, 4, 6, 6], [1, 4, 6, 6]],
        |b| Mmcf::build(b, "mmcf", 4, true, true, true),
        |m, s, v| {
            let out = m.forward(s, v[0], Some(v[1]))?;
            let parts = [out.opt, out.sar.expect("dual"), out.fused.expect("dual")];
            s.graph.concat(&parts)
        },
    )
}

fn scru(seed: u64) -> Result<GradReport> {
    module_case(
        "scru",
        seed,
        Mode::Eval,
        &[[1, 8, 4, 4]],
        |b| Scru::build(b, "scru", 8, false),
        |m, s, v| m.forward(s, v[0]),
    )
}

fn scru_literal(seed: u64) -> Result<GradReport> {
    module_case(
        "scru_literal",
        seed,
        Mode::Eval,
        &[[1, 8, 4, 4]],
        |b| Scru::build(b, "scru", 8, true),
        |m, s, v| m.forward(s, v[0]),
    )
}

fn mwru(seed: u64) -> Result<GradReport> {
    module_case(
        "mwru",
        seed,
        Mode::Eval,
        &[[1, 8, 4, 4], [1, 8, 4, 4], [1, 8, 4, 4]],
        |b| Mwru::build(b, "mwru", 8),
        |m, s, v| m.forward(s, v[0], v[1], v[2]),
    )
}

fn mmrf(seed: u64) -> Result<GradReport> {
    module_case(
        "mmrf",
        seed,
        Mode::Eval,
        &[[1, 8, 4, 4], [1, 8, 4, 4], [1, 8, 4, 4]],
        |b| Mmrf::build(b, "mmrf", 8, false),
        |m, s, v| m.forward(s, v[0], v[1], v[2]),
    )
}

fn loss(seed: u64) -> Result<GradReport> {
    let xs = random_inputs(seed, &[[1, 4, 8, 8], [1, 4, 8, 8]], 0.0, 1.0);
    let mask = Tensor::from_fn([1, 1, 8, 8], |[_, _, h, w]| if (h + 2 * w) % 3 == 0 { 1.0 } else { 0.0 });
    check(
        "loss_total",
        &xs,
        |g, v| Ok(loss_total(g, v[0], v[1], &mask, LossWeights::default())?.total),
        opts(seed),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut n = names();
        n.sort_unstable();
        n.dedup();
        assert_eq!(n.len(), CASES.len());
    }

    #[test]
    fn unknown_name_lists_valid_ones() {
        let err = run("nope", 0).unwrap_err().to_string();
        assert!(err.contains("conv2d") && err.contains("mmrf"), "{err}");
    }

    #[test]
    fn conv2d_passes() {
        let r = run("conv2d", 0).unwrap();
        assert!(r.passes(SUITE_TOL), "{r:?}");
    }
}

//! Central finite-difference verification of analytic gradients.
//!
//! The scalar under test is `L = <f(inputs), R>` for a fixed random
//! projection `R`, so every output element contributes.
//!
//! Piecewise-linear activations and absolute values have kinks where the
//! central difference is meaningless. A coordinate whose one-sided slopes
//! disagree by more than [`KINK_TOL`] is skipped and counted.

pub mod suite;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore, Session};
use crate::ops::Mode;
use crate::tensor::Tensor;

/// Step used for the central difference.
pub const FD_STEP: f64 = 1e-5;
/// Relative-error denominators are floored at this magnitude. Rounding in
/// a loss of order 10 moves the central difference by about 1e-10, so
/// smaller gradients can only be compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-5;
/// Relative disagreement of the one-sided slopes that marks a kink.
pub const KINK_TOL: f64 = 1e-3;

/// Result of one finite-difference check.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates skipped because a kink lies within one step.
    pub skipped: usize,
}

impl GradReport {
    /// Error within `tol` and at most a quarter of the coordinates skipped.
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol && self.skipped * 4 <= self.checked + self.skipped
    }
}

/// Options for [`check`].
#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub step: f64,
    /// At most this many coordinates per input are perturbed (sampled without
    /// replacement); `usize::MAX` checks every coordinate.
    pub max_coords_per_input: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            step: FD_STEP,
            max_coords_per_input: usize::MAX,
            seed: 0,
        }
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare analytic and central-difference gradients of `f` with respect to
/// every tensor in `inputs`.
pub fn check<F>(name: &str, inputs: &[Tensor], f: F, opts: CheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    let proj = Tensor::rand_uniform(g.shape(out), -1.0, 1.0, &mut rng);
    let pv = g.constant(proj.clone());
    let prod = g.mul(out, pv)?;
    let loss = g.sum(prod)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).dot(&proj))
    };
    compare(name, inputs, &analytic, eval, opts, &mut rng)
}

/// Like [`check`] for a layer with parameters: the gradients with respect to
/// `inputs` and to every trainable parameter of `store` are verified.
pub fn check_module<F>(
    name: &str,
    store: &ParamStore,
    inputs: &[Tensor],
    mode: Mode,
    f: F,
    opts: CheckOptions,
) -> Result<GradReport>
where
    F: Fn(&mut Session, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<ParamId> = store.trainable_ids().collect();

    let mut work = store.clone();
    let mut s = Session::new(&mut work, mode, true);
    let vars: Vec<Var> = inputs.iter().map(|t| s.input(t.clone(), true)).collect();
    let out = f(&mut s, &vars)?;
    let proj = Tensor::rand_uniform(s.graph.shape(out), -1.0, 1.0, &mut rng);
    let pv = s.graph.constant(proj.clone());
    let prod = s.graph.mul(out, pv)?;
    let loss = s.graph.sum(prod)?;
    let param_grads = s.backward(loss)?;
    let mut analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| s.graph.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    for &id in &ids {
        analytic.push(param_grads[id.index()].clone().unwrap_or_else(|| Tensor::zeros(store.get(id).shape())));
    }

    let mut base: Vec<Tensor> = inputs.to_vec();
    base.extend(ids.iter().map(|&id| store.get(id).clone()));
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut st = store.clone();
        for (&id, t) in ids.iter().zip(&xs[inputs.len()..]) {
            st.set(id, t.clone())?;
        }
        let mut s = Session::new(&mut st, mode, false);
        let vars: Vec<Var> = xs[..inputs.len()].iter().map(|t| s.input(t.clone(), false)).collect();
        let out = f(&mut s, &vars)?;
        Ok(s.value(out).dot(&proj))
    };
    compare(name, &base, &analytic, eval, opts, &mut rng)
}

fn compare(
    name: &str,
    base: &[Tensor],
    analytic: &[Tensor],
    eval: impl Fn(&[Tensor]) -> Result<f64>,
    opts: CheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<GradReport> {
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    let mut work: Vec<Tensor> = base.to_vec();
    let centre = eval(base)?;
    for k in 0..base.len() {
        let n = base[k].numel();
        let coords: Vec<usize> = if n <= opts.max_coords_per_input {
            (0..n).collect()
        } else {
            sample(rng, n, opts.max_coords_per_input).into_vec()
        };
        for i in coords {
            let orig = base[k].data()[i];
            work[k].data_mut()[i] = orig + opts.step;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - opts.step;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let (fwd, bwd) = ((up - centre) / opts.step, (centre - down) / opts.step);
            if (fwd - bwd).abs() > KINK_TOL * fwd.abs().max(bwd.abs()).max(1e-2) {
                skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * opts.step);
            let e = rel_err(analytic[k].data()[i], numeric);
            if !e.is_finite() {
                return Err(Error::Invalid(format!("{name}: non-finite gradient error")));
            }
            worst = worst.max(e);
            checked += 1;
        }
    }
    Ok(GradReport {
        name: name.to_string(),
        max_rel_err: worst,
        checked,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_fn([1, 2, 2, 2], |[_, c, h, w]| (c + h + w) as f64), true);
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sum_of_squares_gives_twice_x() {
        let mut g = Graph::new();
        let t = Tensor::from_fn([1, 1, 2, 3], |[_, _, h, w]| h as f64 - w as f64 * 0.5);
        let x = g.leaf(t.clone(), true);
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &t.map(|v| 2.0 * v));
    }

    #[test]
    fn repeated_backward_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::ones([1, 1, 2, 2]), true);
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::GraphConsumed)));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::ones([1, 1, 2, 2]), true);
        assert!(matches!(g.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // a deliberately broken operator: forward x^2, backward claims x
        let wrong = |g: &mut Graph, v: &[Var]| {
            let val = g.value(v[0]).map(|x| x * x);
            g.push("broken", val, &[v[0]], Box::new(|ctx| vec![Some(ctx.inputs[0].clone())]))
        };
        let x = Tensor::full([1, 1, 1, 3], 1.5);
        let r = check("broken", &[x], wrong, CheckOptions::default()).unwrap();
        assert!(r.max_rel_err > 0.1);
    }
}

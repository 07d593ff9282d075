//! Pointwise operators, broadcasting arithmetic and scalar reductions.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Negative slope used wherever the network applies a LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

fn broadcast_shape(a: Shape, b: Shape) -> Option<Shape> {
    let mut out = [0; 4];
    for (o, (&x, &y)) in out.iter_mut().zip(a.0.iter().zip(&b.0)) {
        *o = match (x, y) {
            _ if x == y => x,
            (1, _) => y,
            (_, 1) => x,
            _ => return None,
        };
    }
    Some(Shape(out))
}

fn broadcast_strides(s: Shape, out: Shape) -> [usize; 4] {
    let st = s.strides();
    let mut r = [0; 4];
    for i in 0..4 {
        r[i] = if s.0[i] == 1 && out.0[i] != 1 { 0 } else { st[i] };
    }
    r
}

fn binary_map(a: &Tensor, b: &Tensor, out: Shape, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == out && b.shape() == out {
        return a.zip_map(b, f);
    }
    let sa = broadcast_strides(a.shape(), out);
    let sb = broadcast_strides(b.shape(), out);
    let (ad, bd) = (a.data(), b.data());
    let [n, c, h, w] = out.0;
    let mut data = Vec::with_capacity(out.numel());
    for i0 in 0..n {
        for i1 in 0..c {
            for i2 in 0..h {
                let oa = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let ob = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..w {
                    data.push(f(ad[oa + i3 * sa[3]], bd[ob + i3 * sb[3]]));
                }
            }
        }
    }
    Tensor::new(out, data).expect("broadcast shape")
}

/// Sum a broadcast gradient back down to `target`.
pub(crate) fn reduce_to(g: &Tensor, target: Shape) -> Tensor {
    if g.shape() == target {
        return g.clone();
    }
    let out = g.shape();
    let st = broadcast_strides(target, out);
    let mut r = Tensor::zeros(target);
    let rd = r.data_mut();
    let gd = g.data();
    let [n, c, h, w] = out.0;
    let mut k = 0;
    for i0 in 0..n {
        for i1 in 0..c {
            for i2 in 0..h {
                let o = i0 * st[0] + i1 * st[1] + i2 * st[2];
                for i3 in 0..w {
                    rd[o + i3 * st[3]] += gd[k];
                    k += 1;
                }
            }
        }
    }
    r
}

impl Graph {
    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        broadcast_shape(sa, sb)
            .ok_or_else(|| Error::shape(op, "rhs", format!("{sb} does not broadcast with {sa}")))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast("add", a, b)?;
        let v = binary_map(self.value(a), self.value(b), out, |x, y| x + y);
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.push(
            "add",
            v,
            &[a, b],
            Box::new(move |ctx| {
                vec![
                    ctx.needs(0).then(|| reduce_to(ctx.grad, sa)),
                    ctx.needs(1).then(|| reduce_to(ctx.grad, sb)),
                ]
            }),
        )
    }

    /// Sum of several same-shape (or broadcastable) terms.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Invalid("add_all of no terms".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast("sub", a, b)?;
        let v = binary_map(self.value(a), self.value(b), out, |x, y| x - y);
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.push(
            "sub",
            v,
            &[a, b],
            Box::new(move |ctx| {
                vec![
                    ctx.needs(0).then(|| reduce_to(ctx.grad, sa)),
                    ctx.needs(1).then(|| reduce_to(&ctx.grad.map(|g| -g), sb)),
                ]
            }),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast("mul", a, b)?;
        let v = binary_map(self.value(a), self.value(b), out, |x, y| x * y);
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.push(
            "mul",
            v,
            &[a, b],
            Box::new(move |ctx| {
                let (x, y) = (ctx.inputs[0], ctx.inputs[1]);
                vec![
                    ctx.needs(0)
                        .then(|| reduce_to(&binary_map(ctx.grad, y, out, |g, y| g * y), sa)),
                    ctx.needs(1)
                        .then(|| reduce_to(&binary_map(ctx.grad, x, out, |g, x| g * x), sb)),
                ]
            }),
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast("div", a, b)?;
        let v = binary_map(self.value(a), self.value(b), out, |x, y| x / y);
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.push(
            "div",
            v,
            &[a, b],
            Box::new(move |ctx| {
                let y = ctx.inputs[1];
                let q = ctx.output;
                vec![
                    ctx.needs(0)
                        .then(|| reduce_to(&binary_map(ctx.grad, y, out, |g, y| g / y), sa)),
                    ctx.needs(1).then(|| {
                        let gq = ctx.grad.zip_map(q, |g, q| g * q);
                        reduce_to(&binary_map(&gq, y, out, |gq, y| -gq / y), sb)
                    }),
                ]
            }),
        )
    }

    /// Pointwise map with derivative expressed through input and output.
    fn unary(
        &mut self,
        op: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let v = self.value(x).map(f);
        self.push(
            op,
            v,
            &[x],
            Box::new(move |ctx| {
                let (xi, yo) = (ctx.inputs[0].data(), ctx.output.data());
                let g = ctx.grad.data();
                let data = (0..g.len()).map(|i| g[i] * df(xi[i], yo[i])).collect();
                vec![Some(Tensor::new(ctx.grad.shape(), data).expect("unary shape"))]
            }),
        )
    }

    /// LeakyReLU with slope [`LEAKY_SLOPE`]; the subgradient at 0 takes the
    /// negative branch.
    pub fn leaky_relu(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "leaky_relu",
            x,
            |v| if v > 0.0 { v } else { LEAKY_SLOPE * v },
            |v, _| if v > 0.0 { 1.0 } else { LEAKY_SLOPE },
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), |v, _| if v > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary("abs", x, f64::abs, |v, _| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, |v, _| 2.0 * v)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).map(|v| v * c);
        self.push(
            "scale",
            v,
            &[x],
            Box::new(move |ctx| vec![Some(ctx.grad.map(|g| g * c))]),
        )
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).map(|v| v + c);
        self.push("add_scalar", v, &[x], Box::new(|ctx| vec![Some(ctx.grad.clone())]))
    }

    /// Sum of all elements, as a 1x1x1x1 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let v = Tensor::scalar(self.value(x).sum());
        self.push(
            "sum",
            v,
            &[x],
            Box::new(move |ctx| vec![Some(Tensor::full(s, ctx.grad.item()))]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.shape(x).numel() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0), false);
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).item(), 0.5);
    }

    #[test]
    fn broadcast_add_and_grad() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::ones([2, 3, 2, 2]), true);
        let b = g.leaf(Tensor::new([1, 3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap(), true);
        let y = g.add(a, b).unwrap();
        assert_eq!(g.value(y).get([1, 2, 1, 0]), 4.0);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(b).unwrap().data(), &[8.0, 8.0, 8.0]);
        assert!(g.grad(a).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn incompatible_broadcast() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::ones([1, 2, 2, 2]), false);
        let b = g.leaf(Tensor::ones([1, 3, 2, 2]), false);
        assert!(matches!(g.mul(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn leaky_relu_kink_takes_negative_branch() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap(), true);
        let y = g.leaky_relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[-0.2, 0.0, 2.0]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.2, 0.2, 1.0]);
    }
}

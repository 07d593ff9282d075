//! Batched matrix product and softmax.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::ops::layout::transpose_last2;
use crate::tensor::{Shape, Tensor};

/// `out[p] = a[p] . b[p]` for every `(n, c)` slice `p`.
fn batched_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let [n, c, r, k] = a.shape().0;
    let m = b.shape().w();
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; n * c * r * m];
    for p in 0..n * c {
        let a_s = &ad[p * r * k..][..r * k];
        let b_s = &bd[p * k * m..][..k * m];
        let o_s = &mut out[p * r * m..][..r * m];
        for i in 0..r {
            let row = &mut o_s[i * m..][..m];
            for (kk, &av) in a_s[i * k..][..k].iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                for (o, &bv) in row.iter_mut().zip(&b_s[kk * m..][..m]) {
                    *o += av * bv;
                }
            }
        }
    }
    Tensor::new(Shape::new(n, c, r, m), out).expect("matmul shape")
}

impl Graph {
    /// Matrix product over the last two axes, batched over `(N, C)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n() != sb.n() || sa.c() != sb.c() {
            return Err(Error::shape("matmul", "rhs", format!("batch extents {sb} vs {sa}")));
        }
        if sa.w() != sb.h() {
            return Err(Error::shape(
                "matmul",
                "rhs",
                format!("inner extent {} does not match lhs {}", sb.h(), sa.w()),
            ));
        }
        let v = batched_matmul(self.value(a), self.value(b));
        self.push(
            "matmul",
            v,
            &[a, b],
            Box::new(|ctx| {
                let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
                vec![
                    ctx.needs(0).then(|| batched_matmul(ctx.grad, &transpose_last2(b))),
                    ctx.needs(1).then(|| batched_matmul(&transpose_last2(a), ctx.grad)),
                ]
            }),
        )
    }

    /// Softmax along `axis` (0..4), computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        if axis > 3 {
            return Err(Error::Invalid(format!("softmax axis {axis} out of range")));
        }
        let v = softmax_along(self.value(x), axis);
        self.push(
            "softmax",
            v,
            &[x],
            Box::new(move |ctx| {
                let y = ctx.output;
                let (outer, len, inner) = lines(y.shape(), axis);
                let (yd, gd) = (y.data(), ctx.grad.data());
                let mut gx = vec![0.0; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let dot: f64 = (0..len).map(|l| gd[idx(l)] * yd[idx(l)]).sum();
                        for l in 0..len {
                            gx[idx(l)] = yd[idx(l)] * (gd[idx(l)] - dot);
                        }
                    }
                }
                vec![Some(Tensor::new(y.shape(), gx).expect("softmax grad"))]
            }),
        )
    }
}

fn lines(s: Shape, axis: usize) -> (usize, usize, usize) {
    let d = s.0;
    let outer: usize = d[..axis].iter().product();
    let inner: usize = d[axis + 1..].iter().product();
    (outer, d[axis], inner)
}

pub(crate) fn softmax_along(x: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = lines(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |l: usize| (o * len + l) * inner + i;
            let m = (0..len).map(|l| xd[idx(l)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for l in 0..len {
                let e = (xd[idx(l)] - m).exp();
                out[idx(l)] = e;
                z += e;
            }
            for l in 0..len {
                out[idx(l)] /= z;
            }
        }
    }
    Tensor::new(x.shape(), out).expect("softmax shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_matrix() {
        let mut g = Graph::new();
        let eye = Tensor::from_fn([1, 1, 3, 3], |[_, _, i, j]| if i == j { 1.0 } else { 0.0 });
        let a = Tensor::from_fn([1, 1, 3, 2], |[_, _, i, j]| (i * 2 + j) as f64 - 1.5);
        let e = g.leaf(eye, false);
        let av = g.leaf(a.clone(), false);
        let y = g.matmul(e, av).unwrap();
        assert_eq!(g.value(y), &a);
    }

    #[test]
    fn hand_product() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false);
        let b = g.leaf(Tensor::new([1, 1, 2, 1], vec![1.0, 1.0]).unwrap(), false);
        let y = g.matmul(a, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 7.0]);
        assert!(g.matmul(b, b).is_err());
    }

    #[test]
    fn softmax_uniform_and_closed_form() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full([1, 1, 1, 4], 3.0), false);
        let y = g.softmax(x, 3).unwrap();
        assert_eq!(g.value(y).data(), &[0.25; 4]);
        let x = g.leaf(Tensor::new([1, 1, 1, 2], vec![0.0, 3f64.ln()]).unwrap(), false);
        let y = g.softmax(x, 3).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 0.25).abs() <= 1e-12 && (v[1] - 0.75).abs() <= 1e-12);
    }

    #[test]
    fn softmax_other_axis_normalizes() {
        let mut g = Graph::new();
        let x = g.leaf(
            Tensor::from_fn([2, 3, 2, 2], |[a, b, c, d]| (a * 7 + b * 3 + c * 5 + d) as f64 * 0.3),
            false,
        );
        let y = g.softmax(x, 1).unwrap();
        let v = g.value(y);
        for n in 0..2 {
            for h in 0..2 {
                for w in 0..2 {
                    let s: f64 = (0..3).map(|c| v.get([n, c, h, w])).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}

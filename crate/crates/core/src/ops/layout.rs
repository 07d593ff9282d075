//! Shape-manipulating operators: reshape, transpose, concat, pad, pooling.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Repeat the nearest edge value.
    Replicate,
}

impl Graph {
    /// Reinterpret the row-major buffer with a new shape of equal size.
    pub fn reshape(&mut self, x: Var, shape: impl Into<Shape>) -> Result<Var> {
        let shape = shape.into();
        let old = self.shape(x);
        if old.numel() != shape.numel() {
            return Err(Error::shape(
                "reshape",
                "input",
                format!("{old} has {} elements, target {shape} has {}", old.numel(), shape.numel()),
            ));
        }
        let v = self.value(x).reshaped(shape)?;
        self.push(
            "reshape",
            v,
            &[x],
            Box::new(move |ctx| vec![Some(ctx.grad.reshaped(old).expect("reshape grad"))]),
        )
    }

    /// Swap the last two axes (matrix transpose of every `(n, c)` slice).
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = transpose_last2(self.value(x));
        self.push(
            "transpose",
            v,
            &[x],
            Box::new(|ctx| vec![Some(transpose_last2(ctx.grad))]),
        )
    }

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.shape(
            *xs.first()
                .ok_or_else(|| Error::Invalid("concat of no tensors".into()))?,
        );
        let mut channels = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.n() != first.n() || s.h() != first.h() || s.w() != first.w() {
                return Err(Error::shape("concat", "input", format!("{s} vs {first}")));
            }
            channels.push(s.c());
        }
        let total: usize = channels.iter().sum();
        let [n, _, h, w] = first.0;
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total * plane);
        for i in 0..n {
            for (&x, &c) in xs.iter().zip(&channels) {
                data.extend_from_slice(&self.value(x).data()[i * c * plane..][..c * plane]);
            }
        }
        let v = Tensor::new(Shape::new(n, total, h, w), data)?;
        self.push(
            "concat",
            v,
            xs,
            Box::new(move |ctx| {
                let mut start = 0;
                channels
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| {
                        let g = ctx.needs(k).then(|| ctx.grad.channels(start, c));
                        start += c;
                        g
                    })
                    .collect()
            }),
        )
    }

    /// Channels `[start, start + len)`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if start + len > s.c() {
            return Err(Error::shape(
                "slice_channels",
                "input",
                format!("{s} has no channels {start}..{}", start + len),
            ));
        }
        let v = self.value(x).channels(start, len);
        self.push(
            "slice_channels",
            v,
            &[x],
            Box::new(move |ctx| {
                let [n, c, h, w] = s.0;
                let plane = h * w;
                let mut g = Tensor::zeros(s);
                let gd = g.data_mut();
                for i in 0..n {
                    gd[(i * c + start) * plane..][..len * plane]
                        .copy_from_slice(&ctx.grad.data()[i * len * plane..][..len * plane]);
                }
                vec![Some(g)]
            }),
        )
    }

    /// Pad `pad` pixels on each spatial side.
    pub fn pad(&mut self, x: Var, pad: usize, mode: PadMode) -> Result<Var> {
        let s = self.shape(x);
        let [n, c, h, w] = s.0;
        if h == 0 || w == 0 {
            return Err(Error::shape("pad", "input", format!("empty extent {s}")));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let src = move |o: usize, len: usize| -> Option<usize> {
            let i = o as isize - pad as isize;
            match mode {
                PadMode::Zero => (0..len as isize).contains(&i).then_some(i as usize),
                PadMode::Replicate => Some(i.clamp(0, len as isize - 1) as usize),
            }
        };
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c * ph * pw];
        for p in 0..n * c {
            for oy in 0..ph {
                let Some(iy) = src(oy, h) else { continue };
                for ox in 0..pw {
                    if let Some(ix) = src(ox, w) {
                        out[(p * ph + oy) * pw + ox] = xv[(p * h + iy) * w + ix];
                    }
                }
            }
        }
        let v = Tensor::new(Shape::new(n, c, ph, pw), out)?;
        self.push(
            "pad",
            v,
            &[x],
            Box::new(move |ctx| {
                let gd = ctx.grad.data();
                let mut g = Tensor::zeros(s);
                let gx = g.data_mut();
                for p in 0..n * c {
                    for oy in 0..ph {
                        let Some(iy) = src(oy, h) else { continue };
                        for ox in 0..pw {
                            if let Some(ix) = src(ox, w) {
                                gx[(p * h + iy) * w + ix] += gd[(p * ph + oy) * pw + ox];
                            }
                        }
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// Average pooling with a `k x k` window and the given stride, no padding.
    pub fn avg_pool(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x);
        let [n, c, h, w] = s.0;
        if k == 0 || stride == 0 || h < k || w < k {
            return Err(Error::shape("avg_pool", "input", format!("{s} vs window {k}")));
        }
        let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
        let xv = self.value(x).data();
        let norm = 1.0 / (k * k) as f64;
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..k {
                        let row = &xv[(p * h + oy * stride + dy) * w + ox * stride..][..k];
                        acc += row.iter().sum::<f64>();
                    }
                    out[(p * oh + oy) * ow + ox] = acc * norm;
                }
            }
        }
        let v = Tensor::new(Shape::new(n, c, oh, ow), out)?;
        self.push(
            "avg_pool",
            v,
            &[x],
            Box::new(move |ctx| {
                let gd = ctx.grad.data();
                let mut g = Tensor::zeros(s);
                let gx = g.data_mut();
                for p in 0..n * c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let go = gd[(p * oh + oy) * ow + ox] * norm;
                            for dy in 0..k {
                                for v in &mut gx[(p * h + oy * stride + dy) * w + ox * stride..][..k] {
                                    *v += go;
                                }
                            }
                        }
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// Mean over each `H x W` plane, giving `(N, C, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let [n, c, h, w] = s.0;
        let plane = h * w;
        if plane == 0 {
            return Err(Error::shape("global_avg_pool", "input", format!("empty extent {s}")));
        }
        let xv = self.value(x).data();
        let out: Vec<f64> = (0..n * c)
            .map(|p| xv[p * plane..][..plane].iter().sum::<f64>() / plane as f64)
            .collect();
        let v = Tensor::new(Shape::new(n, c, 1, 1), out)?;
        self.push(
            "global_avg_pool",
            v,
            &[x],
            Box::new(move |ctx| {
                let gd = ctx.grad.data();
                let mut g = Tensor::zeros(s);
                for (p, chunk) in g.data_mut().chunks_mut(plane).enumerate() {
                    chunk.fill(gd[p] / plane as f64);
                }
                vec![Some(g)]
            }),
        )
    }

    /// Broadcast `x` up to `shape` (axes of extent 1 are repeated).
    pub fn expand(&mut self, x: Var, shape: impl Into<Shape>) -> Result<Var> {
        let shape = shape.into();
        let s = self.shape(x);
        for i in 0..4 {
            if s.0[i] != shape.0[i] && s.0[i] != 1 {
                return Err(Error::shape("expand", "input", format!("{s} cannot expand to {shape}")));
            }
        }
        let zeros = Tensor::zeros(shape);
        let z = self.constant(zeros);
        let v = self.add(x, z)?;
        Ok(v)
    }
}

pub(crate) fn transpose_last2(t: &Tensor) -> Tensor {
    let [n, c, r, k] = t.shape().0;
    let src = t.data();
    let mut data = vec![0.0; src.len()];
    for p in 0..n * c {
        let a = &src[p * r * k..][..r * k];
        let b = &mut data[p * r * k..][..r * k];
        for i in 0..r {
            for j in 0..k {
                b[j * r + i] = a[i * k + j];
            }
        }
    }
    Tensor::new(Shape::new(n, c, k, r), data).expect("transpose shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_avg_pool_mean() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false);
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).item(), 2.5);
    }

    #[test]
    fn concat_channel_arithmetic() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::ones([1, 2, 3, 3]), true);
        let b = g.leaf(Tensor::zeros([1, 3, 3, 3]), true);
        let y = g.concat(&[a, b]).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 5, 3, 3));
        assert_eq!(g.value(y).channels(0, 2).sum(), 18.0);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(b).unwrap().shape(), Shape::new(1, 3, 3, 3));
    }

    #[test]
    fn replicate_pad_keeps_constants() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full([1, 2, 3, 4], 0.7), false);
        let y = g.pad(x, 5, PadMode::Replicate).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 2, 13, 14));
        assert!(g.value(y).data().iter().all(|&v| v == 0.7));
        let z = g.pad(x, 1, PadMode::Zero).unwrap();
        assert!((g.value(z).sum() - 0.7 * 24.0).abs() < 1e-12);
    }

    #[test]
    fn reshape_rejects_size_change() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::ones([1, 2, 3, 4]), false);
        assert!(g.reshape(x, [1, 1, 5, 5]).is_err());
        let y = g.reshape(x, [1, 1, 2, 12]).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 1, 2, 12));
    }
}

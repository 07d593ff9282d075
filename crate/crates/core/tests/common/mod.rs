//! Naive-loop reference implementations shared by the integration tests.
//! These index raw `Vec<f64>` buffers directly and share no code with the
//! library kernels.

#![allow(dead_code)]

use cloudless::ops::ConvSpec;
use cloudless::Tensor;
use rand::Rng;

pub fn at(t: &Tensor, n: usize, c: usize, h: usize, w: usize) -> f64 {
    let [_, cc, hh, ww] = t.shape().0;
    t.data()[((n * cc + c) * hh + h) * ww + w]
}

/// Direct definition of the strided, padded, dilated cross-correlation.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&[f64]>, spec: ConvSpec) -> Tensor {
    let [n, cin, h, wd] = x.shape().0;
    let [cout, _, kh, kw] = w.shape().0;
    let (s, p, d) = (spec.stride as isize, spec.padding as isize, spec.dilation as isize);
    let oh = ((h as isize + 2 * p - d * (kh as isize - 1) - 1) / s + 1) as usize;
    let ow = ((wd as isize + 2 * p - d * (kw as isize - 1) - 1) / s + 1) as usize;
    let mut out = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for o in 0..cout {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |bb| bb[o]);
                    for i in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = y as isize * s - p + ky as isize * d;
                                let ix = xx as isize * s - p + kx as isize * d;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += at(x, b, i, iy as usize, ix as usize) * at(w, o, i, ky, kx);
                            }
                        }
                    }
                    out[((b * cout + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Tensor::new([n, cout, oh, ow], out).unwrap()
}

/// Insert `dilation - 1` zeros between kernel taps.
pub fn zero_stuff(w: &Tensor, dilation: usize) -> Tensor {
    let [co, ci, kh, kw] = w.shape().0;
    let (eh, ew) = (dilation * (kh - 1) + 1, dilation * (kw - 1) + 1);
    let mut out = vec![0.0; co * ci * eh * ew];
    for o in 0..co {
        for i in 0..ci {
            for y in 0..kh {
                for x in 0..kw {
                    out[((o * ci + i) * eh + y * dilation) * ew + x * dilation] = at(w, o, i, y, x);
                }
            }
        }
    }
    Tensor::new([co, ci, eh, ew], out).unwrap()
}

/// Per-pixel spatial taps `(N, 9, H, W)` times per-channel taps
/// `(N, C, 9, 1)` over a zero-padded 3x3 neighbourhood.
pub fn scdf(x: &Tensor, sp: &Tensor, ch: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape().0;
    let mut out = vec![0.0; n * c * h * w];
    for b in 0..n {
        for m in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (yy, xx) = (i as isize + dy as isize - 1, j as isize + dx as isize - 1);
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            let t = dy * 3 + dx;
                            acc += at(sp, b, t, i, j) * at(ch, b, m, t, 0) * at(x, b, m, yy as usize, xx as usize);
                        }
                    }
                    out[((b * c + m) * h + i) * w + j] = acc;
                }
            }
        }
    }
    Tensor::new([n, c, h, w], out).unwrap()
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                out[i * n + j] += a[i * k + l] * b[l * n + j];
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A random convolution geometry whose window fits the input.
pub fn random_conv(rng: &mut impl Rng, allow_dilation: bool) -> (Tensor, Tensor, Vec<f64>, ConvSpec) {
    loop {
        let cin = rng.random_range(1..4);
        let cout = rng.random_range(1..5);
        let k = rng.random_range(1..5);
        let spec = ConvSpec {
            in_channels: cin,
            out_channels: cout,
            kernel: (k, rng.random_range(1..5)),
            stride: rng.random_range(1..3),
            padding: rng.random_range(0..3),
            dilation: if allow_dilation { rng.random_range(1..4) } else { 1 },
        };
        let (h, w) = (rng.random_range(3..10), rng.random_range(3..10));
        if spec.out_extent(h, w).is_none() {
            continue;
        }
        let n = rng.random_range(1..3);
        let x = Tensor::rand_uniform([n, cin, h, w], -1.0, 1.0, rng);
        let wt = Tensor::rand_uniform(spec.weight_shape(), -1.0, 1.0, rng);
        let bias = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        return (x, wt, bias, spec);
    }
}

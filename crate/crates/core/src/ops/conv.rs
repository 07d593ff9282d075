//! 2-D convolution and its transpose.
//!
//! Three raw kernels cover both operators: the forward correlation, its
//! adjoint with respect to the input (which is also the forward pass of the
//! transposed convolution), and the weight-gradient correlation.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Geometry of a convolution layer. Extents follow
/// `out = floor((in + 2*pad - dilation*(k-1) - 1) / stride) + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// Square kernel, stride 1, "same" padding for odd kernels, no dilation.
    pub fn same(in_channels: usize, out_channels: usize, k: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: 1,
            padding: k / 2,
            dilation: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels, self.kernel.0, self.kernel.1)
    }

    /// Weight shape of the transposed convolution, `(C_in, C_out, kh, kw)`.
    pub fn transpose_weight_shape(&self) -> Shape {
        Shape::new(self.in_channels, self.out_channels, self.kernel.0, self.kernel.1)
    }

    fn effective(&self, k: usize) -> usize {
        self.dilation * (k - 1) + 1
    }

    /// Output extent of the forward convolution, `None` if the window does not fit.
    pub fn out_extent(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        let (eh, ew) = (self.effective(self.kernel.0), self.effective(self.kernel.1));
        if self.stride == 0 || ph < eh || pw < ew {
            return None;
        }
        Some(((ph - eh) / self.stride + 1, (pw - ew) / self.stride + 1))
    }

    /// Output extent of the transposed convolution.
    pub fn transpose_out_extent(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let full_h = (h.checked_sub(1)?) * self.stride + self.effective(self.kernel.0);
        let full_w = (w.checked_sub(1)?) * self.stride + self.effective(self.kernel.1);
        Some((
            full_h.checked_sub(2 * self.padding)?,
            full_w.checked_sub(2 * self.padding)?,
        ))
    }
}

/// Geometry shared by the raw kernels: "big" is the correlation input side,
/// "small" the correlation output side.
#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    big_c: usize,
    big_h: usize,
    big_w: usize,
    small_c: usize,
    small_h: usize,
    small_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dil: usize,
}

impl Geometry {
    /// Range of small-side indices `o` with `0 <= o*stride + k*dil - pad < big_len`.
    fn valid(&self, k: usize, big_len: usize, small_len: usize) -> (usize, usize) {
        let off = (k * self.dil) as isize - self.pad as isize;
        let s = self.stride as isize;
        let start = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let last = big_len as isize - 1 - off;
        let end = if last < 0 { 0 } else { last / s + 1 };
        let end = end.min(small_len as isize);
        let start = start.min(end);
        (start as usize, end as usize)
    }

    fn offset(&self, k: usize) -> isize {
        (k * self.dil) as isize - self.pad as isize
    }
}

/// `small += corr(big, w)`; `w` laid out `(small_c, big_c, kh, kw)`.
fn correlate(g: &Geometry, big: &[f64], w: &[f64], small: &mut [f64]) {
    let big_plane = g.big_h * g.big_w;
    let small_plane = g.small_h * g.small_w;
    let kk = g.kh * g.kw;
    for n in 0..g.n {
        for co in 0..g.small_c {
            let out = &mut small[(n * g.small_c + co) * small_plane..][..small_plane];
            for ci in 0..g.big_c {
                let inp = &big[(n * g.big_c + ci) * big_plane..][..big_plane];
                let wk = &w[(co * g.big_c + ci) * kk..][..kk];
                for ky in 0..g.kh {
                    let (oy0, oy1) = g.valid(ky, g.big_h, g.small_h);
                    let yoff = g.offset(ky);
                    for kx in 0..g.kw {
                        let wv = wk[ky * g.kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox0, ox1) = g.valid(kx, g.big_w, g.small_w);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let xoff = g.offset(kx);
                        for oy in oy0..oy1 {
                            let iy = (oy * g.stride) as isize + yoff;
                            let in_row = &inp[iy as usize * g.big_w..][..g.big_w];
                            let out_row = &mut out[oy * g.small_w..][..g.small_w];
                            let ix0 = (ox0 * g.stride) as isize + xoff;
                            if g.stride == 1 {
                                let src = &in_row[ix0 as usize..][..ox1 - ox0];
                                for (o, &i) in out_row[ox0..ox1].iter_mut().zip(src) {
                                    *o += wv * i;
                                }
                            } else {
                                let mut ix = ix0 as usize;
                                for o in &mut out_row[ox0..ox1] {
                                    *o += wv * in_row[ix];
                                    ix += g.stride;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `big += corr^T(small, w)`, the adjoint of [`correlate`] in its first argument.
fn correlate_adjoint(g: &Geometry, small: &[f64], w: &[f64], big: &mut [f64]) {
    let big_plane = g.big_h * g.big_w;
    let small_plane = g.small_h * g.small_w;
    let kk = g.kh * g.kw;
    for n in 0..g.n {
        for co in 0..g.small_c {
            let src = &small[(n * g.small_c + co) * small_plane..][..small_plane];
            for ci in 0..g.big_c {
                let dst = &mut big[(n * g.big_c + ci) * big_plane..][..big_plane];
                let wk = &w[(co * g.big_c + ci) * kk..][..kk];
                for ky in 0..g.kh {
                    let (oy0, oy1) = g.valid(ky, g.big_h, g.small_h);
                    let yoff = g.offset(ky);
                    for kx in 0..g.kw {
                        let wv = wk[ky * g.kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox0, ox1) = g.valid(kx, g.big_w, g.small_w);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let xoff = g.offset(kx);
                        for oy in oy0..oy1 {
                            let iy = (oy * g.stride) as isize + yoff;
                            let dst_row = &mut dst[iy as usize * g.big_w..][..g.big_w];
                            let src_row = &src[oy * g.small_w..][..g.small_w];
                            let ix0 = (ox0 * g.stride) as isize + xoff;
                            if g.stride == 1 {
                                let d = &mut dst_row[ix0 as usize..][..ox1 - ox0];
                                for (o, &s) in d.iter_mut().zip(&src_row[ox0..ox1]) {
                                    *o += wv * s;
                                }
                            } else {
                                let mut ix = ix0 as usize;
                                for &s in &src_row[ox0..ox1] {
                                    dst_row[ix] += wv * s;
                                    ix += g.stride;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `gw += sum_n small (x) big` over valid windows.
fn correlate_weight_grad(g: &Geometry, small: &[f64], big: &[f64], gw: &mut [f64]) {
    let big_plane = g.big_h * g.big_w;
    let small_plane = g.small_h * g.small_w;
    let kk = g.kh * g.kw;
    for n in 0..g.n {
        for co in 0..g.small_c {
            let src = &small[(n * g.small_c + co) * small_plane..][..small_plane];
            for ci in 0..g.big_c {
                let inp = &big[(n * g.big_c + ci) * big_plane..][..big_plane];
                let wk = &mut gw[(co * g.big_c + ci) * kk..][..kk];
                for ky in 0..g.kh {
                    let (oy0, oy1) = g.valid(ky, g.big_h, g.small_h);
                    let yoff = g.offset(ky);
                    for kx in 0..g.kw {
                        let (ox0, ox1) = g.valid(kx, g.big_w, g.small_w);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let xoff = g.offset(kx);
                        let mut acc = 0.0;
                        for oy in oy0..oy1 {
                            let iy = (oy * g.stride) as isize + yoff;
                            let in_row = &inp[iy as usize * g.big_w..][..g.big_w];
                            let src_row = &src[oy * g.small_w..][..g.small_w];
                            let ix0 = (ox0 * g.stride) as isize + xoff;
                            if g.stride == 1 {
                                let x = &in_row[ix0 as usize..][..ox1 - ox0];
                                acc += src_row[ox0..ox1].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                            } else {
                                let mut ix = ix0 as usize;
                                for &s in &src_row[ox0..ox1] {
                                    acc += s * in_row[ix];
                                    ix += g.stride;
                                }
                            }
                        }
                        wk[ky * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], n: usize, plane: usize) {
    let c = bias.len();
    for i in 0..n {
        for (ch, &b) in bias.iter().enumerate() {
            for v in &mut out[(i * c + ch) * plane..][..plane] {
                *v += b;
            }
        }
    }
}

fn bias_grad(grad: &[f64], n: usize, c: usize, plane: usize) -> Tensor {
    let mut gb = vec![0.0; c];
    for i in 0..n {
        for (ch, g) in gb.iter_mut().enumerate() {
            *g += grad[(i * c + ch) * plane..][..plane].iter().sum::<f64>();
        }
    }
    Tensor::new(Shape::new(1, c, 1, 1), gb).expect("bias shape")
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, c: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.numel() != c {
            return Err(Error::shape(op, "bias", format!("has {} values, expected {c}", b.numel())));
        }
    }
    Ok(())
}

impl Graph {
    /// Cross-correlation `y = W * x + b` (the deep-learning "convolution").
    /// Bias, when given, holds `C_out` values in any layout.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        if ws != spec.weight_shape() {
            return Err(Error::shape(
                "conv2d",
                "weight",
                format!("has shape {ws}, expected {}", spec.weight_shape()),
            ));
        }
        if xs.c() != spec.in_channels {
            return Err(Error::shape(
                "conv2d",
                "input",
                format!("has {} channels, expected {}", xs.c(), spec.in_channels),
            ));
        }
        check_bias("conv2d", bias.map(|b| self.value(b)), spec.out_channels)?;
        let (oh, ow) = spec.out_extent(xs.h(), xs.w()).ok_or_else(|| {
            Error::shape("conv2d", "input", format!("extent {xs} too small for {spec:?}"))
        })?;
        let geo = Geometry {
            n: xs.n(),
            big_c: xs.c(),
            big_h: xs.h(),
            big_w: xs.w(),
            small_c: spec.out_channels,
            small_h: oh,
            small_w: ow,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            stride: spec.stride,
            pad: spec.padding,
            dil: spec.dilation,
        };
        let out_shape = Shape::new(xs.n(), spec.out_channels, oh, ow);
        let mut out = vec![0.0; out_shape.numel()];
        if let Some(b) = bias {
            add_channel_bias(&mut out, self.value(b).data(), xs.n(), oh * ow);
        }
        correlate(&geo, self.value(x).data(), self.value(weight).data(), &mut out);
        let out = Tensor::new(out_shape, out)?;
        let mut parents = vec![x, weight];
        parents.extend(bias);
        let bias_shape = bias.map(|b| self.shape(b));
        self.push(
            "conv2d",
            out,
            &parents,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut grads = vec![None, None];
                if ctx.needs(0) {
                    let mut gx = Tensor::zeros(xs);
                    correlate_adjoint(&geo, g, ctx.inputs[1].data(), gx.data_mut());
                    grads[0] = Some(gx);
                }
                if ctx.needs(1) {
                    let mut gw = Tensor::zeros(ws);
                    correlate_weight_grad(&geo, g, ctx.inputs[0].data(), gw.data_mut());
                    grads[1] = Some(gw);
                }
                if let Some(bs) = bias_shape {
                    grads.push(ctx.needs(2).then(|| {
                        let gb = bias_grad(g, geo.n, geo.small_c, geo.small_h * geo.small_w);
                        gb.reshaped(bs).expect("bias shape")
                    }));
                }
                grads
            }),
        )
    }

    /// Transposed convolution, the adjoint of [`Graph::conv2d`] with the same
    /// weight array; weight laid out `(C_in, C_out, kh, kw)`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    ) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        if ws != spec.transpose_weight_shape() {
            return Err(Error::shape(
                "conv_transpose2d",
                "weight",
                format!("has shape {ws}, expected {}", spec.transpose_weight_shape()),
            ));
        }
        if xs.c() != spec.in_channels {
            return Err(Error::shape(
                "conv_transpose2d",
                "input",
                format!("has {} channels, expected {}", xs.c(), spec.in_channels),
            ));
        }
        check_bias("conv_transpose2d", bias.map(|b| self.value(b)), spec.out_channels)?;
        let (oh, ow) = spec.transpose_out_extent(xs.h(), xs.w()).ok_or_else(|| {
            Error::shape("conv_transpose2d", "input", format!("extent {xs} invalid for {spec:?}"))
        })?;
        // as a correlation: big side is our output, small side our input
        let geo = Geometry {
            n: xs.n(),
            big_c: spec.out_channels,
            big_h: oh,
            big_w: ow,
            small_c: spec.in_channels,
            small_h: xs.h(),
            small_w: xs.w(),
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            stride: spec.stride,
            pad: spec.padding,
            dil: spec.dilation,
        };
        let out_shape = Shape::new(xs.n(), spec.out_channels, oh, ow);
        let mut out = vec![0.0; out_shape.numel()];
        if let Some(b) = bias {
            add_channel_bias(&mut out, self.value(b).data(), xs.n(), oh * ow);
        }
        correlate_adjoint(&geo, self.value(x).data(), self.value(weight).data(), &mut out);
        let out = Tensor::new(out_shape, out)?;
        let mut parents = vec![x, weight];
        parents.extend(bias);
        let bias_shape = bias.map(|b| self.shape(b));
        self.push(
            "conv_transpose2d",
            out,
            &parents,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut grads = vec![None, None];
                if ctx.needs(0) {
                    let mut gx = Tensor::zeros(xs);
                    correlate(&geo, g, ctx.inputs[1].data(), gx.data_mut());
                    grads[0] = Some(gx);
                }
                if ctx.needs(1) {
                    let mut gw = Tensor::zeros(ws);
                    correlate_weight_grad(&geo, ctx.inputs[0].data(), g, gw.data_mut());
                    grads[1] = Some(gw);
                }
                if let Some(bs) = bias_shape {
                    grads.push(ctx.needs(2).then(|| {
                        let gb = bias_grad(g, geo.n, geo.big_c, geo.big_h * geo.big_w);
                        gb.reshaped(bs).expect("bias shape")
                    }));
                }
                grads
            }),
        )
    }
}

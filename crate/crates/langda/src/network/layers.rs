//! Differentiable primitives: convolution, SiLU, dense affine, bilinear
//! resize. Each layer separates parameters (the struct) from activations:
//! `forward` consumes the input, `backward` takes the saved input plus the
//! output gradient, accumulates parameter gradients into a same-shaped
//! gradient holder, and returns the input gradient.

use super::params::{join, Params};
use ndarray::{s, Array1, Array2, Array3, Array4, ArrayViewD, ArrayViewMutD, Axis};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// [out, in, k, k]
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(out_ch: usize, in_ch: usize, kernel: usize, stride: usize) -> Self {
        assert!(kernel % 2 == 1, "odd kernels only (same padding)");
        Self {
            weight: Array4::zeros((out_ch, in_ch, kernel, kernel)),
            bias: Array1::zeros(out_ch),
            stride,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        let p = (k - 1) / 2;
        let s = self.stride;
        ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1)
    }

    /// Zero-pads `x` to [in, h + 2p, w + 2p].
    fn pad(&self, x: &Array3<f64>) -> Array3<f64> {
        let (c, h, w) = x.dim();
        let p = (self.kernel() - 1) / 2;
        let mut padded = Array3::zeros((c, h + 2 * p, w + 2 * p));
        padded.slice_mut(s![.., p..p + h, p..p + w]).assign(x);
        padded
    }

    /// The [oh, ow] window of `padded` that kernel tap (dy, dx) reads.
    fn tap<'a>(
        padded: &'a Array3<f64>,
        i: usize,
        dy: usize,
        dx: usize,
        s: usize,
        oh: usize,
        ow: usize,
    ) -> ndarray::ArrayView2<'a, f64> {
        padded.slice(s![i, dy..dy + (oh - 1) * s + 1; s, dx..dx + (ow - 1) * s + 1; s])
    }

    /// Unrolls padded input into [in * k * k, oh * ow]; row (i, dy, dx)
    /// holds the values kernel tap (i, dy, dx) reads at every output
    /// position, so the convolution becomes one matrix product.
    fn im2col(&self, padded: &Array3<f64>, oh: usize, ow: usize) -> Array2<f64> {
        let (in_ch, _, _) = padded.dim();
        let k = self.kernel();
        let mut cols = Array2::zeros((in_ch * k * k, oh * ow));
        let mut r = 0;
        for i in 0..in_ch {
            for dy in 0..k {
                for dx in 0..k {
                    let tap = Self::tap(padded, i, dy, dx, self.stride, oh, ow);
                    for (dst, &src) in cols.row_mut(r).iter_mut().zip(tap.iter()) {
                        *dst = src;
                    }
                    r += 1;
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (out_ch, in_ch, k, _) = self.weight.dim();
        let (xc, h, w) = x.dim();
        assert_eq!(xc, in_ch, "conv input channels");
        let (oh, ow) = self.out_size(h, w);
        let padded = self.pad(x);
        let cols = self.im2col(&padded, oh, ow);
        let w2 = self
            .weight
            .view()
            .into_shape_with_order((out_ch, in_ch * k * k))
            .expect("weight is contiguous");
        let mut y = w2.dot(&cols);
        y += &self.bias.view().insert_axis(Axis(1));
        y.into_shape_with_order((out_ch, oh, ow))
            .expect("matmul output is contiguous")
    }

    /// Accumulates dL/dweight and dL/dbias into `grad`, returns dL/dx.
    pub fn backward(&self, x: &Array3<f64>, gy: &Array3<f64>, grad: &mut Conv2d) -> Array3<f64> {
        let (out_ch, in_ch, k, _) = self.weight.dim();
        let (_, h, w) = x.dim();
        let p = (k - 1) / 2;
        let (_, oh, ow) = gy.dim();
        let padded = self.pad(x);
        let cols = self.im2col(&padded, oh, ow);
        let gy2 = gy
            .view()
            .into_shape_with_order((out_ch, oh * ow))
            .expect("gradient is contiguous");
        grad.bias += &gy2.sum_axis(Axis(1));
        let gw = gy2.dot(&cols.t());
        let mut gw_acc = grad
            .weight
            .view_mut()
            .into_shape_with_order((out_ch, in_ch * k * k))
            .expect("weight gradient is contiguous");
        gw_acc += &gw;
        let w2 = self
            .weight
            .view()
            .into_shape_with_order((out_ch, in_ch * k * k))
            .expect("weight is contiguous");
        let gcols = w2.t().dot(&gy2);
        // col2im: scatter-add each row back onto the padded grid it read.
        let mut gpad = Array3::zeros(padded.dim());
        let mut r = 0;
        for i in 0..in_ch {
            for dy in 0..k {
                for dx in 0..k {
                    let row = gcols.row(r);
                    let row2 = row
                        .into_shape_with_order((oh, ow))
                        .expect("row is contiguous");
                    let mut gtap = gpad.slice_mut(s![
                        i,
                        dy..dy + (oh - 1) * self.stride + 1; self.stride,
                        dx..dx + (ow - 1) * self.stride + 1; self.stride
                    ]);
                    gtap += &row2;
                    r += 1;
                }
            }
        }
        gpad.slice(s![.., p..p + h, p..p + w]).to_owned()
    }
}

impl Params for Conv2d {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        out.push((join(prefix, "weight"), self.weight.view().into_dyn()));
        out.push((join(prefix, "bias"), self.bias.view().into_dyn()));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        out.push((join(prefix, "weight"), self.weight.view_mut().into_dyn()));
        out.push((join(prefix, "bias"), self.bias.view_mut().into_dyn()));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// [out, in]
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weight.dot(x) + &self.bias
    }

    pub fn backward(&self, x: &Array1<f64>, gy: &Array1<f64>, grad: &mut Linear) -> Array1<f64> {
        let (out_dim, in_dim) = self.weight.dim();
        for o in 0..out_dim {
            grad.bias[o] += gy[o];
            for i in 0..in_dim {
                grad.weight[(o, i)] += gy[o] * x[i];
            }
        }
        self.weight.t().dot(gy)
    }
}

impl Params for Linear {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        out.push((join(prefix, "weight"), self.weight.view().into_dyn()));
        out.push((join(prefix, "bias"), self.bias.view().into_dyn()));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        out.push((join(prefix, "weight"), self.weight.view_mut().into_dyn()));
        out.push((join(prefix, "bias"), self.bias.view_mut().into_dyn()));
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// SiLU x * sigmoid(x), elementwise on any array.
pub fn silu(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| v * sigmoid(v))
}

pub fn silu_vec(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| v * sigmoid(v))
}

pub fn silu_grad_scalar(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn silu_backward(x: &Array3<f64>, gy: &Array3<f64>) -> Array3<f64> {
    let mut gx = gy.clone();
    gx.zip_mut_with(x, |g, &v| *g *= silu_grad_scalar(v));
    gx
}

pub fn silu_backward_vec(x: &Array1<f64>, gy: &Array1<f64>) -> Array1<f64> {
    let mut gx = gy.clone();
    gx.zip_mut_with(x, |g, &v| *g *= silu_grad_scalar(v));
    gx
}

/// Bilinear interpolation weights for one output coordinate
/// (align_corners = false convention).
fn bilinear_axis(out_idx: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let src = ((out_idx as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5)
        .clamp(0.0, (in_len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, src - lo as f64)
}

pub fn bilinear_resize(x: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut y = Array3::zeros((c, out_h, out_w));
    for yo in 0..out_h {
        let (y0, y1, wy) = bilinear_axis(yo, h, out_h);
        for xo in 0..out_w {
            let (x0, x1, wx) = bilinear_axis(xo, w, out_w);
            for ch in 0..c {
                y[(ch, yo, xo)] = (1.0 - wy) * (1.0 - wx) * x[(ch, y0, x0)]
                    + (1.0 - wy) * wx * x[(ch, y0, x1)]
                    + wy * (1.0 - wx) * x[(ch, y1, x0)]
                    + wy * wx * x[(ch, y1, x1)];
            }
        }
    }
    y
}

/// Transpose of the bilinear map: scatters output gradients back onto the
/// four source corners of every output pixel.
pub fn bilinear_resize_backward(gy: &Array3<f64>, in_h: usize, in_w: usize) -> Array3<f64> {
    let (c, out_h, out_w) = gy.dim();
    let mut gx = Array3::zeros((c, in_h, in_w));
    for yo in 0..out_h {
        let (y0, y1, wy) = bilinear_axis(yo, in_h, out_h);
        for xo in 0..out_w {
            let (x0, x1, wx) = bilinear_axis(xo, in_w, out_w);
            for ch in 0..c {
                let g = gy[(ch, yo, xo)];
                gx[(ch, y0, x0)] += (1.0 - wy) * (1.0 - wx) * g;
                gx[(ch, y0, x1)] += (1.0 - wy) * wx * g;
                gx[(ch, y1, x0)] += wy * (1.0 - wx) * g;
                gx[(ch, y1, x1)] += wy * wx * g;
            }
        }
    }
    gx
}

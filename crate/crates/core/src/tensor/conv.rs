//! 2-D convolution kernels (im2col + GEMM) and their graph operations.
//!
//! The three kernels are the partial derivatives of the trilinear form
//! `T(x, w, g) = <conv(x, w), g>`:
//!
//! * `conv2d`: ∂T/∂g, the ordinary forward convolution
//! * `conv_transpose2d`: ∂T/∂x, used both as the input gradient and as the
//!   transposed-convolution (upsampling) layer
//! * `conv_weight_grad`: ∂T/∂w
//!
//! The backward of each one is expressed with the other two, which closes the
//! set under differentiation.

use rayon::prelude::*;

use super::{Op, Tensor};
use crate::error::{Error, Result};

/// Geometry of a zero-padded convolution mapping `in_h × in_w` to
/// `out_h × out_w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Output extent of a forward convolution along one axis.
    pub fn conv_out(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
        let padded = input + 2 * padding;
        (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
    }

    /// Output extent of a transposed convolution along one axis.
    pub fn transpose_out(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
        let span = input.checked_sub(1)? * stride + kernel;
        span.checked_sub(2 * padding)
    }

    fn patch_len(&self, channels: usize) -> usize {
        channels * self.kernel_h * self.kernel_w
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Row-major `c = a' · b' + beta · c` where `'` optionally transposes.
/// `a'` is `m × k`, `b'` is `k × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slice lengths checked above cover every index the kernel
    // touches for these dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], channels: usize, geom: &ConvGeometry, cols: &mut [f64]) {
    let ConvGeometry {
        kernel_h,
        kernel_w,
        stride,
        padding,
        in_h,
        in_w,
        out_h,
        out_w,
    } = *geom;
    let l = out_h * out_w;
    for c in 0..channels {
        let plane = &x[c * in_h * in_w..(c + 1) * in_h * in_w];
        for ki in 0..kernel_h {
            for kj in 0..kernel_w {
                let row = ((c * kernel_h + ki) * kernel_w + kj) * l;
                let dst = &mut cols[row..row + l];
                for oy in 0..out_h {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    let line = &mut dst[oy * out_w..(oy + 1) * out_w];
                    if iy < 0 || iy >= in_h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * in_w..(iy as usize + 1) * in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        *v = if ix < 0 || ix >= in_w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], channels: usize, geom: &ConvGeometry, x: &mut [f64]) {
    let ConvGeometry {
        kernel_h,
        kernel_w,
        stride,
        padding,
        in_h,
        in_w,
        out_h,
        out_w,
    } = *geom;
    let l = out_h * out_w;
    for c in 0..channels {
        let plane = &mut x[c * in_h * in_w..(c + 1) * in_h * in_w];
        for ki in 0..kernel_h {
            for kj in 0..kernel_w {
                let row = ((c * kernel_h + ki) * kernel_w + kj) * l;
                let src = &cols[row..row + l];
                for oy in 0..out_h {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * in_w..(iy as usize + 1) * in_w];
                    for ox in 0..out_w {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix >= 0 && (ix as usize) < in_w {
                            dst[ix as usize] += src[oy * out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// y[n] = W · im2col(x[n]); `w` is `co × (ci·kh·kw)`.
fn conv_forward_kernel(x: &[f64], n: usize, ci: usize, w: &[f64], co: usize, geom: &ConvGeometry) -> Vec<f64> {
    let k = geom.patch_len(ci);
    let l = geom.out_len();
    let in_len = ci * geom.in_h * geom.in_w;
    let mut out = vec![0.0; n * co * l];
    out.par_chunks_mut(co * l)
        .zip(x.par_chunks(in_len))
        .for_each(|(y, xs)| {
            let mut cols = vec![0.0; k * l];
            im2col(xs, ci, geom, &mut cols);
            gemm(co, k, l, w, false, &cols, false, 0.0, y);
        });
    out
}

/// x[n] = col2im(Wᵀ · g[n]).
fn conv_input_grad_kernel(g: &[f64], n: usize, co: usize, w: &[f64], ci: usize, geom: &ConvGeometry) -> Vec<f64> {
    let k = geom.patch_len(ci);
    let l = geom.out_len();
    let in_len = ci * geom.in_h * geom.in_w;
    let mut out = vec![0.0; n * in_len];
    out.par_chunks_mut(in_len)
        .zip(g.par_chunks(co * l))
        .for_each(|(xs, gs)| {
            let mut cols = vec![0.0; k * l];
            gemm(k, co, l, w, true, gs, false, 0.0, &mut cols);
            col2im(&cols, ci, geom, xs);
        });
    out
}

/// gW = Σ_n g[n] · im2col(x[n])ᵀ, summed in sample order.
fn conv_weight_grad_kernel(x: &[f64], g: &[f64], n: usize, ci: usize, co: usize, geom: &ConvGeometry) -> Vec<f64> {
    let k = geom.patch_len(ci);
    let l = geom.out_len();
    let in_len = ci * geom.in_h * geom.in_w;
    let partials: Vec<Vec<f64>> = x
        .par_chunks(in_len)
        .zip(g.par_chunks(co * l))
        .map(|(xs, gs)| {
            let mut cols = vec![0.0; k * l];
            im2col(xs, ci, geom, &mut cols);
            let mut part = vec![0.0; co * k];
            gemm(co, l, k, gs, false, &cols, true, 0.0, &mut part);
            part
        })
        .collect();
    let mut out = vec![0.0; co * k];
    for part in partials.iter().take(n) {
        for (o, p) in out.iter_mut().zip(part) {
            *o += p;
        }
    }
    out
}

impl Tensor {
    /// Zero-padded 2-D convolution. `self` is `N×Ci×H×W`, `weight` is
    /// `Co×Ci×kh×kw`.
    pub fn conv2d(&self, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        let (_, ci, h, w) = self.dims4()?;
        let (_, wci, kh, kw) = weight.dims4()?;
        if ci != wci {
            return Err(Error::shape(
                "conv2d",
                format!("input has {ci} channels, weight expects {wci}"),
            ));
        }
        let geom = match (
            ConvGeometry::conv_out(h, kh, stride, padding),
            ConvGeometry::conv_out(w, kw, stride, padding),
        ) {
            (Some(out_h), Some(out_w)) => ConvGeometry {
                kernel_h: kh,
                kernel_w: kw,
                stride,
                padding,
                in_h: h,
                in_w: w,
                out_h,
                out_w,
            },
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernel {kh}x{kw} larger than padded input {h}x{w}"),
                ))
            }
        };
        conv2d_op(self, weight, geom)
    }

    /// Transposed convolution. `self` is `N×Cin×H×W`, `weight` is
    /// `Cin×Cout×kh×kw` (the layout of the matching forward convolution).
    pub fn conv_transpose2d(&self, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        let (_, c, h, w) = self.dims4()?;
        let (wc, _, kh, kw) = weight.dims4()?;
        if c != wc {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("input has {c} channels, weight expects {wc}"),
            ));
        }
        let (in_h, in_w) = match (
            ConvGeometry::transpose_out(h, kh, stride, padding),
            ConvGeometry::transpose_out(w, kw, stride, padding),
        ) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => return Err(Error::shape("conv_transpose2d", "padding exceeds output")),
        };
        let geom = ConvGeometry {
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            in_h,
            in_w,
            out_h: h,
            out_w: w,
        };
        conv_transpose2d_op(self, weight, geom)
    }
}

pub(crate) fn conv2d_op(x: &Tensor, w: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let (n, ci, h, wd) = x.dims4()?;
    let (co, wci, kh, kw) = w.dims4()?;
    if ci != wci || h != geom.in_h || wd != geom.in_w || kh != geom.kernel_h || kw != geom.kernel_w {
        return Err(Error::shape(
            "conv2d",
            format!("input {:?} / weight {:?} disagree with {geom:?}", x.shape(), w.shape()),
        ));
    }
    let out = conv_forward_kernel(x.data(), n, ci, w.data(), co, &geom);
    Ok(Tensor::from_op(
        out,
        vec![n, co, geom.out_h, geom.out_w],
        Op::Conv2d {
            x: x.clone(),
            w: w.clone(),
            geom,
        },
    ))
}

pub(crate) fn conv_transpose2d_op(g: &Tensor, w: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let (n, co, h, wd) = g.dims4()?;
    let (wco, ci, kh, kw) = w.dims4()?;
    if co != wco || h != geom.out_h || wd != geom.out_w || kh != geom.kernel_h || kw != geom.kernel_w {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("input {:?} / weight {:?} disagree with {geom:?}", g.shape(), w.shape()),
        ));
    }
    let out = conv_input_grad_kernel(g.data(), n, co, w.data(), ci, &geom);
    Ok(Tensor::from_op(
        out,
        vec![n, ci, geom.in_h, geom.in_w],
        Op::ConvTranspose2d {
            g: g.clone(),
            w: w.clone(),
            geom,
        },
    ))
}

pub(crate) fn conv_weight_grad_op(x: &Tensor, g: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let (n, ci, h, wd) = x.dims4()?;
    let (gn, co, gh, gw) = g.dims4()?;
    if n != gn || h != geom.in_h || wd != geom.in_w || gh != geom.out_h || gw != geom.out_w {
        return Err(Error::shape(
            "conv_weight_grad",
            format!("input {:?} / grad {:?} disagree with {geom:?}", x.shape(), g.shape()),
        ));
    }
    let out = conv_weight_grad_kernel(x.data(), g.data(), n, ci, co, &geom);
    Ok(Tensor::from_op(
        out,
        vec![co, ci, geom.kernel_h, geom.kernel_w],
        Op::ConvWeightGrad {
            x: x.clone(),
            g: g.clone(),
            geom,
        },
    ))
}

//! Spatial resampling operations on NCHW tensors, each paired with its
//! adjoint so the pair is closed under differentiation.

use std::sync::Arc;

use rayon::prelude::*;

use super::{Op, Tensor};
use crate::error::{Error, Result};

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

/// Interpolation taps of a half-pixel-centred bilinear upsample along one
/// axis: for each output coordinate, two source indices and their weights.
fn bilinear_taps(input: usize, factor: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..input * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let t = src - i0 as f64;
            (i0, i1, 1.0 - t, t)
        })
        .collect()
}

impl Tensor {
    /// Reflection padding of `pad` pixels on every spatial border.
    pub fn reflect_pad(&self, pad: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if pad == 0 {
            return Ok(self.clone());
        }
        if pad >= h || pad >= w {
            return Err(Error::shape(
                "reflect_pad",
                format!("padding {pad} needs input larger than {h}x{w}"),
            ));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let src = self.data();
        let mut out = vec![0.0; n * c * ph * pw];
        out.par_chunks_mut(ph * pw)
            .zip(src.par_chunks(h * w))
            .for_each(|(dst, plane)| {
                for y in 0..ph {
                    let sy = reflect(y as isize - pad as isize, h);
                    for x in 0..pw {
                        let sx = reflect(x as isize - pad as isize, w);
                        dst[y * pw + x] = plane[sy * w + sx];
                    }
                }
            });
        Ok(Tensor::from_op(
            out,
            vec![n, c, ph, pw],
            Op::ReflectPad { x: self.clone(), pad },
        ))
    }

    /// Adjoint of `reflect_pad`: folds the border back onto the interior.
    pub(crate) fn reflect_pad_adjoint(&self, pad: usize) -> Result<Tensor> {
        let (n, c, ph, pw) = self.dims4()?;
        let (h, w) = (ph - 2 * pad, pw - 2 * pad);
        let src = self.data();
        let mut out = vec![0.0; n * c * h * w];
        out.par_chunks_mut(h * w)
            .zip(src.par_chunks(ph * pw))
            .for_each(|(dst, plane)| {
                for y in 0..ph {
                    let sy = reflect(y as isize - pad as isize, h);
                    for x in 0..pw {
                        let sx = reflect(x as isize - pad as isize, w);
                        dst[sy * w + sx] += plane[y * pw + x];
                    }
                }
            });
        Ok(Tensor::from_op(
            out,
            vec![n, c, h, w],
            Op::ReflectPadAdjoint { g: self.clone(), pad },
        ))
    }

    /// Bilinear upsampling by an integer factor with half-pixel centres.
    pub fn upsample_bilinear(&self, factor: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if factor == 0 {
            return Err(Error::InvalidArgument("upsample factor must be positive".into()));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (oh, ow) = (h * factor, w * factor);
        let ty = bilinear_taps(h, factor);
        let tx = bilinear_taps(w, factor);
        let src = self.data();
        let mut out = vec![0.0; n * c * oh * ow];
        out.par_chunks_mut(oh * ow)
            .zip(src.par_chunks(h * w))
            .for_each(|(dst, plane)| {
                for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                        dst[oy * ow + ox] = wy0 * (wx0 * plane[y0 * w + x0] + wx1 * plane[y0 * w + x1])
                            + wy1 * (wx0 * plane[y1 * w + x0] + wx1 * plane[y1 * w + x1]);
                    }
                }
            });
        Ok(Tensor::from_op(
            out,
            vec![n, c, oh, ow],
            Op::Upsample { x: self.clone(), factor },
        ))
    }

    pub(crate) fn upsample_bilinear_adjoint(&self, factor: usize) -> Result<Tensor> {
        let (n, c, oh, ow) = self.dims4()?;
        let (h, w) = (oh / factor, ow / factor);
        let ty = bilinear_taps(h, factor);
        let tx = bilinear_taps(w, factor);
        let src = self.data();
        let mut out = vec![0.0; n * c * h * w];
        out.par_chunks_mut(h * w)
            .zip(src.par_chunks(oh * ow))
            .for_each(|(dst, plane)| {
                for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                        let g = plane[oy * ow + ox];
                        dst[y0 * w + x0] += wy0 * wx0 * g;
                        dst[y0 * w + x1] += wy0 * wx1 * g;
                        dst[y1 * w + x0] += wy1 * wx0 * g;
                        dst[y1 * w + x1] += wy1 * wx1 * g;
                    }
                }
            });
        Ok(Tensor::from_op(
            out,
            vec![n, c, h, w],
            Op::UpsampleAdjoint { g: self.clone(), factor },
        ))
    }

    /// Max pooling with a square `kernel` and `stride`, no padding.
    pub fn max_pool2d(&self, kernel: usize, stride: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if kernel == 0 || stride == 0 || kernel > h || kernel > w {
            return Err(Error::shape(
                "max_pool2d",
                format!("kernel {kernel} / stride {stride} on {h}x{w}"),
            ));
        }
        let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
        let src = self.data();
        let mut values = Vec::with_capacity(n * c * oh * ow);
        let mut indices = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let i = base + (oy * stride + ky) * w + ox * stride + kx;
                            if src[i] > src[best] {
                                best = i;
                            }
                        }
                    }
                    values.push(src[best]);
                    indices.push(best);
                }
            }
        }
        Ok(Tensor::from_op(
            values,
            vec![n, c, oh, ow],
            Op::Gather {
                x: self.clone(),
                indices: Arc::new(indices),
            },
        ))
    }

    /// `out[i] = self[indices[i]]` with the shape of `self` replaced by
    /// `out_shape`.
    pub(crate) fn gather_flat(&self, indices: &Arc<Vec<usize>>, out_shape: &[usize]) -> Result<Tensor> {
        let src = self.data();
        let values = indices.iter().map(|&i| src[i]).collect();
        Ok(Tensor::from_op(
            values,
            out_shape.to_vec(),
            Op::Gather {
                x: self.clone(),
                indices: Arc::clone(indices),
            },
        ))
    }

    /// Adjoint of `gather_flat`: accumulates `self[i]` into `out[indices[i]]`.
    pub(crate) fn scatter_add_flat(&self, indices: &Arc<Vec<usize>>, out_shape: &[usize]) -> Result<Tensor> {
        let mut out = vec![0.0; out_shape.iter().product()];
        for (&i, &g) in indices.iter().zip(self.data()) {
            out[i] += g;
        }
        Ok(Tensor::from_op(
            out,
            out_shape.to_vec(),
            Op::ScatterAdd {
                g: self.clone(),
                indices: Arc::clone(indices),
            },
        ))
    }
}

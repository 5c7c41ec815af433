use super::shape::{
    broadcast_shape, broadcast_strides, contiguous_strides, for_each_pair, reduces_to,
    split_at_dim,
};
use super::{Op, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum UnaryKind {
    Tanh,
    Sigmoid,
    Sqrt,
    Square,
    Abs,
    Relu,
    LeakyRelu(f64),
}

impl UnaryKind {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Square => x * x,
            UnaryKind::Abs => x.abs(),
            UnaryKind::Relu => x.max(0.0),
            UnaryKind::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }
}

impl Tensor {
    fn binary(&self, other: &Tensor, kind: BinaryKind) -> Result<Tensor> {
        let (a, b) = (self.data(), other.data());
        let (shape, data) = if self.shape() == other.shape() {
            let data = a.iter().zip(b).map(|(&x, &y)| kind.apply(x, y)).collect();
            (self.shape().to_vec(), data)
        } else {
            let shape = broadcast_shape(self.shape(), other.shape())?;
            let data = if other.numel() == 1 && shape == self.shape() {
                let y = b[0];
                a.iter().map(|&x| kind.apply(x, y)).collect()
            } else if self.numel() == 1 && shape == other.shape() {
                let x = a[0];
                b.iter().map(|&y| kind.apply(x, y)).collect()
            } else {
                let sa = broadcast_strides(self.shape(), &shape);
                let sb = broadcast_strides(other.shape(), &shape);
                let mut out = Vec::with_capacity(shape.iter().product());
                for_each_pair(&shape, &sa, &sb, |i, j| out.push(kind.apply(a[i], b[j])));
                out
            };
            (shape, data)
        };
        Ok(Tensor::from_op(
            data,
            shape,
            Op::Binary(kind, self.clone(), other.clone()),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Div)
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|&x| x * factor).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            Op::Scale(self.clone(), factor),
        ))
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, value: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|&x| x + value).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            Op::AddScalar(self.clone()),
        ))
    }

    fn unary(&self, kind: UnaryKind) -> Result<Tensor> {
        let data = self.data().iter().map(|&x| kind.apply(x)).collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            Op::Unary(kind, self.clone()),
        ))
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Tanh)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Sqrt)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Square)
    }

    pub fn abs(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Abs)
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Relu)
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor> {
        self.unary(UnaryKind::LeakyRelu(slope))
    }

    /// Constant tensor of `f(x)` values; never part of the graph.
    pub(crate) fn map_constant(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::new(data, self.shape()).expect("shape preserved")
    }

    /// Sums over broadcast axes so the result has `target` shape.
    pub fn sum_to(&self, target: &[usize]) -> Result<Tensor> {
        if self.shape() == target {
            return Ok(self.clone());
        }
        if !reduces_to(self.shape(), target) {
            return Err(Error::shape(
                "sum_to",
                format!("cannot reduce {:?} to {:?}", self.shape(), target),
            ));
        }
        let src = self.data();
        let mut out = vec![0.0; target.iter().product()];
        let dst_strides = broadcast_strides(target, self.shape());
        let src_strides = contiguous_strides(self.shape());
        for_each_pair(self.shape(), &dst_strides, &src_strides, |d, s| {
            out[d] += src[s]
        });
        Ok(Tensor::from_op(out, target.to_vec(), Op::SumTo(self.clone())))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        if !reduces_to(shape, self.shape()) {
            return Err(Error::shape(
                "broadcast_to",
                format!("cannot broadcast {:?} to {:?}", self.shape(), shape),
            ));
        }
        let src = self.data();
        let mut out = Vec::with_capacity(shape.iter().product());
        let strides = broadcast_strides(self.shape(), shape);
        let zeros = vec![0; shape.len()];
        for_each_pair(shape, &strides, &zeros, |s, _| out.push(src[s]));
        Ok(Tensor::from_op(
            out,
            shape.to_vec(),
            Op::BroadcastTo(self.clone()),
        ))
    }

    pub fn sum(&self) -> Result<Tensor> {
        self.sum_to(&[])
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel().max(1) as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_keepdim(&self, axes: &[usize]) -> Result<Tensor> {
        let mut target = self.shape().to_vec();
        for &axis in axes {
            if axis >= target.len() {
                return Err(Error::shape(
                    "sum_keepdim",
                    format!("axis {axis} out of range for {:?}", self.shape()),
                ));
            }
            target[axis] = 1;
        }
        self.sum_to(&target)
    }

    pub fn mean_keepdim(&self, axes: &[usize]) -> Result<Tensor> {
        let count: usize = axes.iter().map(|&a| self.shape().get(a).copied().unwrap_or(1)).product();
        self.sum_keepdim(axes)?.scale(1.0 / count.max(1) as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(), shape),
            ));
        }
        Ok(Tensor::from_op_shared(
            self.shared_data(),
            shape.to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    /// Slice `len` entries of `dim` starting at `start`.
    pub fn narrow(&self, dim: usize, start: usize, len: usize) -> Result<Tensor> {
        if dim >= self.rank() || start + len > self.shape()[dim] {
            return Err(Error::shape(
                "narrow",
                format!("[{start}, {}) on dim {dim} of {:?}", start + len, self.shape()),
            ));
        }
        let (outer, size, inner) = split_at_dim(self.shape(), dim);
        let src = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * size + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[dim] = len;
        Ok(Tensor::from_op(
            out,
            shape,
            Op::Narrow {
                x: self.clone(),
                dim,
                start,
            },
        ))
    }

    /// Adjoint of `narrow`: embeds `self` at `start` in a zero tensor whose
    /// `dim` has size `full`.
    pub(crate) fn narrow_adjoint(&self, dim: usize, start: usize, full: usize) -> Result<Tensor> {
        let (outer, len, inner) = split_at_dim(self.shape(), dim);
        if start + len > full {
            return Err(Error::shape("narrow_adjoint", "slice exceeds target"));
        }
        let src = self.data();
        let mut out = vec![0.0; outer * full * inner];
        for o in 0..outer {
            let dst = (o * full + start) * inner;
            out[dst..dst + len * inner].copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[dim] = full;
        Ok(Tensor::from_op(
            out,
            shape,
            Op::NarrowAdjoint {
                g: self.clone(),
                dim,
                start,
            },
        ))
    }

    /// Concatenates tensors that agree on every dimension except `dim`.
    pub fn concat(tensors: &[Tensor], dim: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::shape("concat", "no tensors"))?;
        if dim >= first.rank() {
            return Err(Error::shape("concat", format!("dim {dim} out of range")));
        }
        for t in tensors {
            let compatible = t.rank() == first.rank()
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == dim || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} along dim {dim}", t.shape(), first.shape()),
                ));
            }
        }
        let total: usize = tensors.iter().map(|t| t.shape()[dim]).sum();
        let (outer, _, inner) = split_at_dim(first.shape(), dim);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for t in tensors {
                let len = t.shape()[dim] * inner;
                out.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[dim] = total;
        Ok(Tensor::from_op(
            out,
            shape,
            Op::Concat {
                xs: tensors.to_vec(),
                dim,
            },
        ))
    }
}

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::conv::{conv2d_op, conv_transpose2d_op, conv_weight_grad_op, ConvGeometry};
use super::ops::{BinaryKind, UnaryKind};
use super::{set_grad_enabled, Tensor};
use crate::error::{Error, Result};

/// Recorded operation of a graph node together with its inputs.
pub(crate) enum Op {
    Leaf,
    Binary(BinaryKind, Tensor, Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    Unary(UnaryKind, Tensor),
    SumTo(Tensor),
    BroadcastTo(Tensor),
    Reshape(Tensor),
    Narrow { x: Tensor, dim: usize, start: usize },
    NarrowAdjoint { g: Tensor, dim: usize, start: usize },
    Concat { xs: Vec<Tensor>, dim: usize },
    Conv2d { x: Tensor, w: Tensor, geom: ConvGeometry },
    ConvTranspose2d { g: Tensor, w: Tensor, geom: ConvGeometry },
    ConvWeightGrad { x: Tensor, g: Tensor, geom: ConvGeometry },
    ReflectPad { x: Tensor, pad: usize },
    ReflectPadAdjoint { g: Tensor, pad: usize },
    Upsample { x: Tensor, factor: usize },
    UpsampleAdjoint { g: Tensor, factor: usize },
    Gather { x: Tensor, indices: Arc<Vec<usize>> },
    ScatterAdd { g: Tensor, indices: Arc<Vec<usize>> },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Binary(_, a, b) => vec![a, b],
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Unary(_, x)
            | Op::SumTo(x)
            | Op::BroadcastTo(x)
            | Op::Reshape(x)
            | Op::Narrow { x, .. }
            | Op::ReflectPad { x, .. }
            | Op::Upsample { x, .. }
            | Op::Gather { x, .. } => vec![x],
            Op::NarrowAdjoint { g, .. }
            | Op::ReflectPadAdjoint { g, .. }
            | Op::UpsampleAdjoint { g, .. }
            | Op::ScatterAdd { g, .. } => vec![g],
            Op::Concat { xs, .. } => xs.iter().collect(),
            Op::Conv2d { x, w, .. } => vec![x, w],
            Op::ConvTranspose2d { g, w, .. } => vec![g, w],
            Op::ConvWeightGrad { x, g, .. } => vec![x, g],
        }
    }

    /// Vector-Jacobian products for every input that requires a gradient,
    /// aligned with `inputs()`.
    fn backward(&self, out: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let want = |t: &Tensor| t.requires_grad();
        let when = |t: &Tensor, f: &dyn Fn() -> Result<Tensor>| -> Result<Option<Tensor>> {
            if want(t) {
                f().map(Some)
            } else {
                Ok(None)
            }
        };
        Ok(match self {
            Op::Leaf => Vec::new(),
            Op::Binary(kind, a, b) => {
                let (ga, gb) = match kind {
                    BinaryKind::Add => (
                        when(a, &|| grad.sum_to(a.shape()))?,
                        when(b, &|| grad.sum_to(b.shape()))?,
                    ),
                    BinaryKind::Sub => (
                        when(a, &|| grad.sum_to(a.shape()))?,
                        when(b, &|| grad.neg()?.sum_to(b.shape()))?,
                    ),
                    BinaryKind::Mul => (
                        when(a, &|| grad.mul(b)?.sum_to(a.shape()))?,
                        when(b, &|| grad.mul(a)?.sum_to(b.shape()))?,
                    ),
                    BinaryKind::Div => (
                        when(a, &|| grad.div(b)?.sum_to(a.shape()))?,
                        when(b, &|| grad.mul(out)?.div(b)?.neg()?.sum_to(b.shape()))?,
                    ),
                };
                vec![ga, gb]
            }
            Op::Scale(_, factor) => vec![Some(grad.scale(*factor)?)],
            Op::AddScalar(_) => vec![Some(grad.clone())],
            Op::Unary(kind, x) => {
                let g = match *kind {
                    UnaryKind::Tanh => grad.mul(&out.square()?.neg()?.add_scalar(1.0)?)?,
                    UnaryKind::Sigmoid => grad.mul(out)?.mul(&out.neg()?.add_scalar(1.0)?)?,
                    UnaryKind::Sqrt => grad.div(&out.scale(2.0)?)?,
                    UnaryKind::Square => grad.mul(&x.scale(2.0)?)?,
                    UnaryKind::Abs => grad.mul(&x.map_constant(|v| {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }))?,
                    UnaryKind::Relu => {
                        grad.mul(&x.map_constant(|v| if v > 0.0 { 1.0 } else { 0.0 }))?
                    }
                    UnaryKind::LeakyRelu(slope) => {
                        grad.mul(&x.map_constant(|v| if v > 0.0 { 1.0 } else { slope }))?
                    }
                };
                vec![Some(g)]
            }
            Op::SumTo(x) => vec![Some(grad.broadcast_to(x.shape())?)],
            Op::BroadcastTo(x) => vec![Some(grad.sum_to(x.shape())?)],
            Op::Reshape(x) => vec![Some(grad.reshape(x.shape())?)],
            Op::Narrow { x, dim, start } => {
                vec![Some(grad.narrow_adjoint(*dim, *start, x.shape()[*dim])?)]
            }
            Op::NarrowAdjoint { g, dim, start } => {
                vec![Some(grad.narrow(*dim, *start, g.shape()[*dim])?)]
            }
            Op::Concat { xs, dim } => {
                let mut offset = 0;
                let mut grads = Vec::with_capacity(xs.len());
                for x in xs {
                    let len = x.shape()[*dim];
                    grads.push(when(x, &|| grad.narrow(*dim, offset, len))?);
                    offset += len;
                }
                grads
            }
            Op::Conv2d { x, w, geom } => vec![
                when(x, &|| conv_transpose2d_op(grad, w, *geom))?,
                when(w, &|| conv_weight_grad_op(x, grad, *geom))?,
            ],
            Op::ConvTranspose2d { g, w, geom } => vec![
                when(g, &|| conv2d_op(grad, w, *geom))?,
                when(w, &|| conv_weight_grad_op(grad, g, *geom))?,
            ],
            Op::ConvWeightGrad { x, g, geom } => vec![
                when(x, &|| conv_transpose2d_op(g, grad, *geom))?,
                when(g, &|| conv2d_op(x, grad, *geom))?,
            ],
            Op::ReflectPad { pad, .. } => vec![Some(grad.reflect_pad_adjoint(*pad)?)],
            Op::ReflectPadAdjoint { pad, .. } => vec![Some(grad.reflect_pad(*pad)?)],
            Op::Upsample { factor, .. } => vec![Some(grad.upsample_bilinear_adjoint(*factor)?)],
            Op::UpsampleAdjoint { factor, .. } => vec![Some(grad.upsample_bilinear(*factor)?)],
            Op::Gather { x, indices } => vec![Some(grad.scatter_add_flat(indices, x.shape())?)],
            Op::ScatterAdd { g, indices } => vec![Some(grad.gather_flat(indices, g.shape())?)],
        })
    }
}

/// Gradients of a scalar with respect to the leaf variables of its graph.
#[derive(Default)]
pub struct Gradients {
    grads: HashMap<u64, Tensor>,
}

impl Gradients {
    pub fn get(&self, tensor: &Tensor) -> Option<&Tensor> {
        self.grads.get(&tensor.id())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Nodes reachable from `root` that require gradients, parents before
/// children.
fn topological_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        if let Some(op) = node.op() {
            for input in op.inputs() {
                if input.requires_grad() && !visited.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    order.reverse();
    order
}

fn run_backward(
    root: &Tensor,
    keep: &dyn Fn(&Tensor) -> bool,
    create_graph: bool,
) -> Result<HashMap<u64, Tensor>> {
    if !root.requires_grad() {
        return Err(Error::NotDifferentiable {
            op: "backward",
            detail: "output does not depend on any variable".into(),
        });
    }
    let _mode = set_grad_enabled(create_graph);
    let mut pending: HashMap<u64, Tensor> = HashMap::new();
    let mut kept = HashMap::new();
    pending.insert(root.id(), root.ones_like());
    for node in topological_order(root) {
        let Some(grad) = pending.remove(&node.id()) else {
            continue;
        };
        let op = node.op().expect("ordered nodes require grad");
        if !matches!(op, Op::Leaf) {
            let inputs = op.inputs();
            let grads = op.backward(&node, &grad)?;
            for (input, g) in inputs.into_iter().zip(grads) {
                let Some(g) = g else { continue };
                if !input.requires_grad() {
                    continue;
                }
                let merged = match pending.remove(&input.id()) {
                    Some(existing) => existing.add(&g)?,
                    None => g,
                };
                pending.insert(input.id(), merged);
            }
        }
        if keep(&node) {
            kept.insert(node.id(), grad);
        }
    }
    Ok(kept)
}

/// Reverse-mode gradients of `root` (seeded with ones) for every leaf
/// variable in its graph.
pub fn backward(root: &Tensor) -> Result<Gradients> {
    let grads = run_backward(root, &|t| matches!(t.op(), Some(Op::Leaf)), false)?;
    Ok(Gradients { grads })
}

/// Gradients of `root` with respect to `inputs`. With `create_graph` the
/// returned tensors are themselves differentiable.
pub fn grad(root: &Tensor, inputs: &[&Tensor], create_graph: bool) -> Result<Vec<Option<Tensor>>> {
    let wanted: HashSet<u64> = inputs.iter().map(|t| t.id()).collect();
    let mut grads = run_backward(root, &|t| wanted.contains(&t.id()), create_graph)?;
    Ok(inputs.iter().map(|t| grads.remove(&t.id())).collect())
}

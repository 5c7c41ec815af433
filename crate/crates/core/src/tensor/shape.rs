use crate::error::{Error, Result};

/// Numpy-style broadcast of two shapes (right aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for (i, slot) in out.iter_mut().enumerate() {
        let da = dim_from_right(a, rank - 1 - i);
        let db = dim_from_right(b, rank - 1 - i);
        *slot = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::shape(
                    "broadcast",
                    format!("{a:?} and {b:?} are not broadcast compatible"),
                ))
            }
        };
    }
    Ok(out)
}

fn dim_from_right(shape: &[usize], offset: usize) -> usize {
    if offset < shape.len() {
        shape[shape.len() - 1 - offset]
    } else {
        1
    }
}

/// Strides to read a `src` tensor as if broadcast to `out` (zero on
/// broadcast axes). `src` must broadcast to `out`.
pub(crate) fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        let offset = rank - 1 - i;
        let d = dim_from_right(src, offset);
        if offset < src.len() {
            strides[i] = if d == 1 && out[i] != 1 { 0 } else { acc };
            acc *= d;
        }
    }
    strides
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Whether `target` broadcasts up to `shape`, i.e. `sum_to(target)` is valid.
pub(crate) fn reduces_to(shape: &[usize], target: &[usize]) -> bool {
    broadcast_shape(shape, target).is_ok_and(|s| s == shape)
}

/// Visits every index of `out` in row-major order, passing the matching
/// offsets under two stride sets.
pub(crate) fn for_each_pair(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize),
) {
    let rank = out.len();
    if out.contains(&0) {
        return;
    }
    if rank == 0 {
        f(0, 0);
        return;
    }
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let outer: usize = out[..rank - 1].iter().product();
    let mut index = vec![0usize; rank - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..outer {
        for i in 0..inner {
            f(oa + i * ia, ob + i * ib);
        }
        for d in (0..rank - 1).rev() {
            index[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if index[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            index[d] = 0;
        }
    }
}

/// Splits `shape` around `dim` into (outer, size, inner) extents.
pub(crate) fn split_at_dim(shape: &[usize], dim: usize) -> (usize, usize, usize) {
    let outer = shape[..dim].iter().product();
    let inner = shape[dim + 1..].iter().product();
    (outer, shape[dim], inner)
}

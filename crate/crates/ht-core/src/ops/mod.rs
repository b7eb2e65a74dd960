//! Differentiable tensor primitives.
//!
//! Every operation validates shapes, computes the forward value eagerly and,
//! when an input is tracked, records a backward rule on the result. The op
//! set is deliberately closed: everything the models need composes out of the
//! primitives here, and the registry in [`crate::registry`] drives a
//! finite-difference check over each of them.

mod conv;
mod elementwise;
mod fft;
mod matmul;
mod norm;
mod reduce;
mod resize;
mod shape_ops;

pub use conv::{depthwise_conv2d, pointwise_conv2d};
pub use elementwise::{
    add, add_scalar, div, dropout, exp, gelu, ln, mul, neg, powf, relu, scale, sub,
};
pub use fft::{rfft2_filter, spectral_energy};
pub use matmul::{bmm, matmul};
pub use norm::{layer_norm, log_softmax_axis, softmax_axis};
pub use reduce::{mean_all, mean_axis, select, sum_all, sum_axis};
pub use resize::{adaptive_avg_pool, bilinear_upsample, global_avg_pool};
pub use shape_ops::{permute, reshape};

use crate::error::{Error, Result};

/// Broadcast two shapes under trailing-dimension alignment.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![1usize; rank];
    for i in 0..rank {
        let da = dim_aligned(a, rank, i);
        let db = dim_aligned(b, rank, i);
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(Error::Dimension(format!(
                "cannot broadcast shapes {a:?} and {b:?}"
            )));
        };
    }
    Ok(out)
}

fn dim_aligned(shape: &[usize], rank: usize, i: usize) -> usize {
    let pad = rank - shape.len();
    if i < pad {
        1
    } else {
        shape[i - pad]
    }
}

/// Row-major strides of `shape` aligned to `out` rank, with stride 0 on
/// broadcast dimensions.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let own = crate::tensor::strides(shape);
    let pad = rank - shape.len();
    (0..rank)
        .map(|i| {
            if i < pad || shape[i - pad] == 1 {
                0
            } else {
                own[i - pad]
            }
        })
        .collect()
}

/// Visit every element of the broadcast result of `a_shape` and `b_shape`
/// (which must broadcast to `out_shape`), yielding flat offsets into both
/// operands in row-major output order.
pub(crate) fn zip_broadcast(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: impl FnMut(usize, usize),
) {
    let rank = out_shape.len();
    let total: usize = out_shape.iter().product();
    if rank == 0 || total == 0 {
        return;
    }
    let sa = aligned_strides(a_shape, out_shape);
    let sb = aligned_strides(b_shape, out_shape);
    let mut idx = vec![0usize; rank];
    let mut oa = 0usize;
    let mut ob = 0usize;
    for _ in 0..total {
        f(oa, ob);
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

/// Sum `grad` (of shape `grad_shape`) down to `target_shape`, undoing a
/// broadcast. Used by the backward pass of every broadcasting operation.
pub(crate) fn reduce_to_shape(grad: &[f64], grad_shape: &[usize], target_shape: &[usize]) -> Vec<f64> {
    let numel: usize = target_shape.iter().product();
    let mut out = vec![0.0; numel];
    zip_broadcast(grad_shape, target_shape, grad_shape, |t, g| {
        out[t] += grad[g];
    });
    out
}

/// Split a shape into (outer, len, inner) factors around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Dimension(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Shape check for image-like tensors.
pub(crate) fn expect_rank(op: &str, t: &crate::tensor::Tensor, rank: usize) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::Dimension(format!(
            "{op}: expected rank-{rank} tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

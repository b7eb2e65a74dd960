use super::axis_split;
use crate::error::{Error, Result};
use crate::graph::OpRecord;
use crate::tensor::Tensor;

/// Sum of all elements, as a `[1]` tensor.
pub fn sum_all(x: &Tensor) -> Result<Tensor> {
    let s: f64 = x.data().iter().sum();
    let xc = x.clone();
    Tensor::from_op(vec![1], vec![s], &[x], move || OpRecord {
        name: "sum_all",
        inputs: vec![xc.clone()],
        backward: Box::new(move |grad| {
            let g = grad.data()[0];
            Ok(vec![Some(Tensor::full(xc.shape(), g))])
        }),
    })
}

/// Mean of all elements, as a `[1]` tensor.
pub fn mean_all(x: &Tensor) -> Result<Tensor> {
    let n = x.numel() as f64;
    let s: f64 = x.data().iter().sum();
    let xc = x.clone();
    Tensor::from_op(vec![1], vec![s / n], &[x], move || OpRecord {
        name: "mean_all",
        inputs: vec![xc.clone()],
        backward: Box::new(move |grad| {
            let g = grad.data()[0] / n;
            Ok(vec![Some(Tensor::full(xc.shape(), g))])
        }),
    })
}

fn reduce_axis(
    name: &'static str,
    x: &Tensor,
    axis: usize,
    keepdim: bool,
    mean: bool,
) -> Result<Tensor> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    let norm = if mean { len as f64 } else { 1.0 };
    let mut data = vec![0.0; outer * inner];
    for o in 0..outer {
        for l in 0..len {
            let base = (o * len + l) * inner;
            for i in 0..inner {
                data[o * inner + i] += x.data()[base + i];
            }
        }
    }
    if mean {
        for v in &mut data {
            *v /= norm;
        }
    }
    let mut out_shape: Vec<usize> = x.shape().to_vec();
    if keepdim {
        out_shape[axis] = 1;
    } else {
        out_shape.remove(axis);
    }
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let xc = x.clone();
    Tensor::from_op(out_shape, data, &[x], move || OpRecord {
        name,
        inputs: vec![xc.clone()],
        backward: Box::new(move |grad| {
            let mut g = vec![0.0; xc.numel()];
            for o in 0..outer {
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    for i in 0..inner {
                        g[base + i] = grad.data()[o * inner + i] / norm;
                    }
                }
            }
            Ok(vec![Some(Tensor::from_vec(xc.shape(), g)?)])
        }),
    })
}

pub fn sum_axis(x: &Tensor, axis: usize, keepdim: bool) -> Result<Tensor> {
    reduce_axis("sum_axis", x, axis, keepdim, false)
}

pub fn mean_axis(x: &Tensor, axis: usize, keepdim: bool) -> Result<Tensor> {
    reduce_axis("mean_axis", x, axis, keepdim, true)
}

/// Select one index along `axis`, dropping that axis.
pub fn select(x: &Tensor, axis: usize, index: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    if index >= len {
        return Err(Error::Dimension(format!(
            "select: index {index} out of range for axis of length {len}"
        )));
    }
    let mut data = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        let base = (o * len + index) * inner;
        data.extend_from_slice(&x.data()[base..base + inner]);
    }
    let mut out_shape: Vec<usize> = x.shape().to_vec();
    out_shape.remove(axis);
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let xc = x.clone();
    Tensor::from_op(out_shape, data, &[x], move || OpRecord {
        name: "select",
        inputs: vec![xc.clone()],
        backward: Box::new(move |grad| {
            let mut g = vec![0.0; xc.numel()];
            for o in 0..outer {
                let base = (o * len + index) * inner;
                g[base..base + inner].copy_from_slice(&grad.data()[o * inner..(o + 1) * inner]);
            }
            Ok(vec![Some(Tensor::from_vec(xc.shape(), g)?)])
        }),
    })
}

use crate::error::{Error, Result};
use crate::graph::OpRecord;
use crate::tensor::{strides, Tensor};

/// Reinterpret the buffer under a new shape (element count must match).
pub fn reshape(x: &Tensor, new_shape: &[usize]) -> Result<Tensor> {
    let numel: usize = new_shape.iter().product();
    if numel != x.numel() || new_shape.iter().any(|&d| d == 0) {
        return Err(Error::Dimension(format!(
            "reshape: cannot view {:?} as {:?}",
            x.shape(),
            new_shape
        )));
    }
    let xc = x.clone();
    Tensor::from_op(new_shape.to_vec(), x.data().to_vec(), &[x], move || {
        OpRecord {
            name: "reshape",
            inputs: vec![xc.clone()],
            backward: Box::new(move |grad| {
                Ok(vec![Some(Tensor::from_vec(xc.shape(), grad.data().to_vec())?)])
            }),
        }
    })
}

fn permuted_data(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    // stride in the input for each output axis
    let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        out.push(data[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += step[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= step[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

/// Reorder axes; `perm` must be a permutation of `0..rank`.
pub fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let rank = x.shape().len();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::Dimension(format!(
            "permute: {perm:?} is not a permutation of 0..{rank}"
        )));
    }
    let (out_shape, data) = permuted_data(x.data(), x.shape(), perm);
    let mut inverse = vec![0usize; rank];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    let xc = x.clone();
    Tensor::from_op(out_shape, data, &[x], move || OpRecord {
        name: "permute",
        inputs: vec![xc.clone()],
        backward: Box::new(move |grad| {
            let (_, g) = permuted_data(grad.data(), grad.shape(), &inverse);
            Ok(vec![Some(Tensor::from_vec(xc.shape(), g)?)])
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::from_vec(&[2, 3, 4], (0..24).map(|i| i as f64).collect()).unwrap();
        let y = permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        let z = permute(&y, &[1, 2, 0]).unwrap();
        assert_eq!(z.data(), x.data());
    }

    #[test]
    fn transpose_2d() {
        let x = Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let y = permute(&x, &[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), &[1., 4., 2., 5., 3., 6.]);
    }
}

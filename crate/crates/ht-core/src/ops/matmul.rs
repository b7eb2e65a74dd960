use crate::error::{Error, Result};
use crate::graph::OpRecord;
use crate::tensor::Tensor;

/// Row-major dgemm: c[m x n] += a[m x k] * b[k x n], with optional logical
/// transposes expressed through strides (no copies).
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
) {
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
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
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product `a @ b` where `a` has shape `[..., k]` (leading axes are
/// treated as rows) and `b` has shape `[k, n]`. The result replaces the last
/// axis of `a` with `n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().is_empty() || b.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "matmul: need a [..., k] and b [k, n], got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let k = *a.shape().last().expect("nonempty");
    let (bk, n) = (b.shape()[0], b.shape()[1]);
    if k != bk {
        return Err(Error::Dimension(format!(
            "matmul: inner dimensions differ, {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let m = a.numel() / k;
    let mut data = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, &mut data);
    let mut out_shape = a.shape().to_vec();
    *out_shape.last_mut().expect("nonempty") = n;
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op(out_shape, data, &[a, b], move || OpRecord {
        name: "matmul",
        inputs: vec![ac.clone(), bc.clone()],
        backward: Box::new(move |grad| {
            // grad: [m, n]; da = grad * b^T ; db = a^T * grad
            let mut da = vec![0.0; m * k];
            gemm(m, n, k, grad.data(), false, bc.data(), true, &mut da);
            let mut db = vec![0.0; k * n];
            gemm(k, m, n, ac.data(), true, grad.data(), false, &mut db);
            Ok(vec![
                Some(Tensor::from_vec(ac.shape(), da)?),
                Some(Tensor::from_vec(bc.shape(), db)?),
            ])
        }),
    })
}

/// Batched matrix product: `a [B, m, k] @ b [B, k, n] -> [B, m, n]`.
pub fn bmm(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 3 || b.shape().len() != 3 {
        return Err(Error::Dimension(format!(
            "bmm: need rank-3 operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ba, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (bb, bk, n) = (b.shape()[0], b.shape()[1], b.shape()[2]);
    if ba != bb || k != bk {
        return Err(Error::Dimension(format!(
            "bmm: incompatible shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = vec![0.0; ba * m * n];
    for i in 0..ba {
        gemm(
            m,
            k,
            n,
            &a.data()[i * m * k..(i + 1) * m * k],
            false,
            &b.data()[i * k * n..(i + 1) * k * n],
            false,
            &mut data[i * m * n..(i + 1) * m * n],
        );
    }
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op(vec![ba, m, n], data, &[a, b], move || OpRecord {
        name: "bmm",
        inputs: vec![ac.clone(), bc.clone()],
        backward: Box::new(move |grad| {
            let mut da = vec![0.0; ba * m * k];
            let mut db = vec![0.0; ba * k * n];
            for i in 0..ba {
                let g = &grad.data()[i * m * n..(i + 1) * m * n];
                gemm(
                    m,
                    n,
                    k,
                    g,
                    false,
                    &bc.data()[i * k * n..(i + 1) * k * n],
                    true,
                    &mut da[i * m * k..(i + 1) * m * k],
                );
                gemm(
                    k,
                    m,
                    n,
                    &ac.data()[i * m * k..(i + 1) * m * k],
                    true,
                    g,
                    false,
                    &mut db[i * k * n..(i + 1) * k * n],
                );
            }
            Ok(vec![
                Some(Tensor::from_vec(ac.shape(), da)?),
                Some(Tensor::from_vec(bc.shape(), db)?),
            ])
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::backward;

    #[test]
    fn matmul_2d() {
        let a = Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::from_vec(&[3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn matmul_leading_batch_axes() {
        let a = Tensor::from_vec(&[2, 2, 3], (1..=12).map(|i| i as f64).collect()).unwrap();
        let b = Tensor::from_vec(&[3, 1], vec![1., 1., 1.]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 2, 1]);
        assert_eq!(c.data(), &[6., 15., 24., 33.]);
    }

    #[test]
    fn matmul_gradients_match_algebra() {
        // y = sum(a @ b): da = ones @ b^T, db = a^T @ ones
        let a = Tensor::param(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::param(&[2, 2], vec![5., 6., 7., 8.]).unwrap();
        let y = crate::ops::sum_all(&matmul(&a, &b).unwrap()).unwrap();
        let g = backward(&y, &Tensor::ones(&[1])).unwrap();
        assert_eq!(g.get(&a).data(), &[11., 15., 11., 15.]);
        assert_eq!(g.get(&b).data(), &[4., 4., 6., 6.]);
    }

    #[test]
    fn bmm_matches_per_batch_matmul() {
        let a = Tensor::from_vec(&[2, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::from_vec(&[2, 2, 1], vec![1., 1., 2., 2.]).unwrap();
        let c = bmm(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 1]);
        assert_eq!(c.data(), &[3., 14.]);
    }
}

use super::axis_split;
use crate::error::{Error, Result};
use crate::graph::OpRecord;
use crate::tensor::Tensor;

/// Layer normalization over the last axis with learnable affine parameters.
/// `gamma` and `beta` must be 1-D of the normalized width.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let d = *x.shape().last().ok_or_else(|| {
        Error::Dimension("layer_norm: scalar input".to_string())
    })?;
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::Dimension(format!(
            "layer_norm: affine shapes {:?}/{:?} do not match width {d}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let rows = x.numel() / d;
    let mut data = vec![0.0; x.numel()];
    let mut xhat = vec![0.0; x.numel()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for i in 0..d {
            let h = (row[i] - mean) * is;
            xhat[r * d + i] = h;
            data[r * d + i] = h * gamma.data()[i] + beta.data()[i];
        }
    }
    let (xc, gc, bc) = (x.clone(), gamma.clone(), beta.clone());
    Tensor::from_op(x.shape().to_vec(), data, &[x, gamma, beta], move || {
        OpRecord {
            name: "layer_norm",
            inputs: vec![xc.clone(), gc.clone(), bc.clone()],
            backward: Box::new(move |grad| {
                let mut dx = vec![0.0; xc.numel()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..rows {
                    let g = &grad.data()[r * d..(r + 1) * d];
                    let h = &xhat[r * d..(r + 1) * d];
                    let mut mean_gh = 0.0;
                    let mut mean_ghh = 0.0;
                    for i in 0..d {
                        let gh = g[i] * gc.data()[i];
                        mean_gh += gh;
                        mean_ghh += gh * h[i];
                        dgamma[i] += g[i] * h[i];
                        dbeta[i] += g[i];
                    }
                    mean_gh /= d as f64;
                    mean_ghh /= d as f64;
                    for i in 0..d {
                        let gh = g[i] * gc.data()[i];
                        dx[r * d + i] = inv_std[r] * (gh - mean_gh - h[i] * mean_ghh);
                    }
                }
                Ok(vec![
                    Some(Tensor::from_vec(xc.shape(), dx)?),
                    Some(Tensor::from_vec(&[d], dgamma)?),
                    Some(Tensor::from_vec(&[d], dbeta)?),
                ])
            }),
        }
    })
}

fn softmax_like(x: &Tensor, axis: usize, log: bool) -> Result<Tensor> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    let mut data = vec![0.0; x.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let mut max = f64::NEG_INFINITY;
            for l in 0..len {
                max = max.max(x.data()[at(l)]);
            }
            let mut z = 0.0;
            for l in 0..len {
                z += (x.data()[at(l)] - max).exp();
            }
            if log {
                let lz = z.ln() + max;
                for l in 0..len {
                    data[at(l)] = x.data()[at(l)] - lz;
                }
            } else {
                for l in 0..len {
                    data[at(l)] = (x.data()[at(l)] - max).exp() / z;
                }
            }
        }
    }
    let xc = x.clone();
    let saved = data.clone();
    let name = if log { "log_softmax" } else { "softmax" };
    Tensor::from_op(x.shape().to_vec(), data, &[x], move || OpRecord {
        name,
        inputs: vec![xc.clone()],
        backward: Box::new(move |grad| {
            let mut dx = vec![0.0; xc.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| (o * len + l) * inner + i;
                    let mut dot = 0.0;
                    for l in 0..len {
                        let y = saved[at(l)];
                        dot += if log {
                            grad.data()[at(l)]
                        } else {
                            grad.data()[at(l)] * y
                        };
                    }
                    for l in 0..len {
                        let y = saved[at(l)];
                        dx[at(l)] = if log {
                            grad.data()[at(l)] - y.exp() * dot
                        } else {
                            y * (grad.data()[at(l)] - dot)
                        };
                    }
                }
            }
            Ok(vec![Some(Tensor::from_vec(xc.shape(), dx)?)])
        }),
    })
}

/// Numerically stable softmax along `axis`.
pub fn softmax_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    softmax_like(x, axis, false)
}

/// Numerically stable log-softmax along `axis`.
pub fn log_softmax_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    softmax_like(x, axis, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry() {
        let x = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let y = softmax_axis(&x, 0).unwrap();
        assert!((y.data()[0] - 0.5).abs() < 1e-12);
        assert!((y.data()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn softmax_three_equal_logits_gives_thirds() {
        let x = Tensor::from_vec(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        let y = softmax_axis(&x, 0).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero_pre_affine() {
        let x = Tensor::from_vec(&[1, 4], vec![3.0; 4]).unwrap();
        let g = Tensor::ones(&[4]);
        let b = Tensor::zeros(&[4]);
        let y = layer_norm(&x, &g, &b, 1e-5).unwrap();
        for v in y.data() {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_vec(&[2, 3], vec![1., -2., 0.5, 10., 10., 10.]).unwrap();
        let y = softmax_axis(&x, 1).unwrap();
        for r in 0..2 {
            let s: f64 = y.data()[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_matches_ln_of_softmax() {
        let x = Tensor::from_vec(&[1, 4], vec![0.3, -1.2, 2.0, 0.0]).unwrap();
        let a = log_softmax_axis(&x, 1).unwrap();
        let b = softmax_axis(&x, 1).unwrap();
        for (l, s) in a.data().iter().zip(b.data()) {
            assert!((l - s.ln()).abs() < 1e-12);
        }
    }
}

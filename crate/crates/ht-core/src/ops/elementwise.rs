use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{broadcast_shape, reduce_to_shape, zip_broadcast};
use crate::error::{Error, Result};
use crate::graph::OpRecord;
use crate::tensor::Tensor;

fn binary(
    name: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
    // grads w.r.t. (a, b) at output resolution, given (grad, a_val, b_val)
    dfa: impl Fn(f64, f64, f64) -> f64 + 'static,
    dfb: impl Fn(f64, f64, f64) -> f64 + 'static,
) -> Result<Tensor> {
    let out_shape = broadcast_shape(a.shape(), b.shape())
        .map_err(|_| Error::Dimension(format!(
            "{name}: cannot broadcast {:?} with {:?}",
            a.shape(),
            b.shape()
        )))?;
    let mut data = Vec::with_capacity(out_shape.iter().product());
    zip_broadcast(&out_shape, a.shape(), b.shape(), |ia, ib| {
        data.push(f(a.data()[ia], b.data()[ib]));
    });
    let (ac, bc) = (a.clone(), b.clone());
    let shape_for_bwd = out_shape.clone();
    Tensor::from_op(out_shape, data, &[a, b], move || OpRecord {
        name,
        inputs: vec![ac.clone(), bc.clone()],
        backward: Box::new(move |grad| {
            let gshape = &shape_for_bwd;
            let mut ga = vec![0.0; gshape.iter().product()];
            let mut gb = vec![0.0; gshape.iter().product()];
            let mut i = 0usize;
            zip_broadcast(gshape, ac.shape(), bc.shape(), |ia, ib| {
                let g = grad.data()[i];
                let (av, bv) = (ac.data()[ia], bc.data()[ib]);
                ga[i] = dfa(g, av, bv);
                gb[i] = dfb(g, av, bv);
                i += 1;
            });
            let ga = reduce_to_shape(&ga, gshape, ac.shape());
            let gb = reduce_to_shape(&gb, gshape, bc.shape());
            Ok(vec![
                Some(Tensor::from_vec(ac.shape(), ga)?),
                Some(Tensor::from_vec(bc.shape(), gb)?),
            ])
        }),
    })
}

/// Elementwise sum with broadcasting.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("add", a, b, |x, y| x + y, |g, _, _| g, |g, _, _| g)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("sub", a, b, |x, y| x - y, |g, _, _| g, |g, _, _| -g)
}

/// Elementwise (Hadamard) product with broadcasting.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(
        "mul",
        a,
        b,
        |x, y| x * y,
        |g, _, y| g * y,
        |g, x, _| g * x,
    )
}

pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(
        "div",
        a,
        b,
        |x, y| x / y,
        |g, _, y| g / y,
        |g, x, y| -g * x / (y * y),
    )
}

fn unary(
    name: &'static str,
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    // derivative given (input value, output value)
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Result<Tensor> {
    let data: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    let xc = x.clone();
    let out_vals = data.clone();
    Tensor::from_op(x.shape().to_vec(), data, &[x], move || OpRecord {
        name,
        inputs: vec![xc.clone()],
        backward: Box::new(move |grad| {
            let g: Vec<f64> = grad
                .data()
                .iter()
                .zip(xc.data().iter().zip(&out_vals))
                .map(|(&g, (&xi, &yi))| g * df(xi, yi))
                .collect();
            Ok(vec![Some(Tensor::from_vec(xc.shape(), g)?)])
        }),
    })
}

pub fn neg(x: &Tensor) -> Result<Tensor> {
    unary("neg", x, |v| -v, |_, _| -1.0)
}

/// Multiply by a compile-time constant (not differentiated w.r.t. `c`).
pub fn scale(x: &Tensor, c: f64) -> Result<Tensor> {
    unary("scale", x, move |v| v * c, move |_, _| c)
}

pub fn add_scalar(x: &Tensor, c: f64) -> Result<Tensor> {
    unary("add_scalar", x, move |v| v + c, |_, _| 1.0)
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    unary(
        "relu",
        x,
        |v| v.max(0.0),
        |xi, _| if xi > 0.0 { 1.0 } else { 0.0 },
    )
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU in its tanh form; the backward rule is the exact derivative of the
/// implemented forward, so finite-difference checks agree to roundoff.
pub fn gelu(x: &Tensor) -> Result<Tensor> {
    unary(
        "gelu",
        x,
        |v| {
            let u = GELU_C * (v + GELU_A * v * v * v);
            0.5 * v * (1.0 + u.tanh())
        },
        |v, _| {
            let u = GELU_C * (v + GELU_A * v * v * v);
            let t = u.tanh();
            let sech2 = 1.0 - t * t;
            0.5 * (1.0 + t) + 0.5 * v * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * v * v)
        },
    )
}

pub fn exp(x: &Tensor) -> Result<Tensor> {
    unary("exp", x, f64::exp, |_, yi| yi)
}

pub fn ln(x: &Tensor) -> Result<Tensor> {
    unary("ln", x, f64::ln, |xi, _| 1.0 / xi)
}

/// Elementwise power with a constant real exponent.
pub fn powf(x: &Tensor, p: f64) -> Result<Tensor> {
    unary(
        "powf",
        x,
        move |v| v.powf(p),
        move |xi, _| {
            if p == 0.0 {
                0.0
            } else {
                p * xi.powf(p - 1.0)
            }
        },
    )
}

/// Inverted dropout. In training mode each element is zeroed with
/// probability `rate` and survivors are scaled by 1/(1-rate); the mask is
/// fully determined by `seed`. In eval mode this is the identity.
pub fn dropout(x: &Tensor, rate: f64, training: bool, seed: u64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout: rate {rate} not in [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - rate;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    let data: Vec<f64> = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    let xc = x.clone();
    Tensor::from_op(x.shape().to_vec(), data, &[x], move || OpRecord {
        name: "dropout",
        inputs: vec![xc.clone()],
        backward: Box::new(move |grad| {
            let g: Vec<f64> = grad.data().iter().zip(&mask).map(|(g, m)| g * m).collect();
            Ok(vec![Some(Tensor::from_vec(xc.shape(), g)?)])
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::backward;

    #[test]
    fn add_broadcasts_bias() {
        let x = Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::from_vec(&[3], vec![10., 20., 30.]).unwrap();
        let y = add(&x, &b).unwrap();
        assert_eq!(y.data(), &[11., 22., 33., 14., 25., 36.]);
    }

    #[test]
    fn mul_backward_reduces_broadcast() {
        let x = Tensor::param(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let c = Tensor::param(&[2], vec![10., 100.]).unwrap();
        let y = mul(&x, &c).unwrap();
        let g = backward(&y, &Tensor::ones(&[2, 2])).unwrap();
        assert_eq!(g.get(&x).data(), &[10., 100., 10., 100.]);
        assert_eq!(g.get(&c).data(), &[4., 6.]); // column sums of x
    }

    #[test]
    fn gelu_zero_fixed_point() {
        let x = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        assert_eq!(gelu(&x).unwrap().data()[0], 0.0);
    }

    #[test]
    fn dropout_eval_is_identity_training_is_seeded() {
        let x = Tensor::from_vec(&[100], (0..100).map(|i| i as f64).collect()).unwrap();
        let e = dropout(&x, 0.5, false, 7).unwrap();
        assert_eq!(e.data(), x.data());
        let a = dropout(&x, 0.5, true, 7).unwrap();
        let b = dropout(&x, 0.5, true, 7).unwrap();
        assert_eq!(a.data(), b.data());
        let c = dropout(&x, 0.5, true, 8).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn div_by_zero_is_numeric_error() {
        let x = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let z = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        assert_eq!(div(&x, &z).unwrap_err().category(), "numeric");
    }
}

//! Registry of the differentiable primitives.
//!
//! [`core_op_set`] returns one entry per primitive; each entry can sample a
//! random check instance (small random inputs plus a scalar-valued graph
//! builder over them). [`gradient_check`] then compares reverse-mode
//! gradients against central finite differences for every input. The
//! returned registry is a plain immutable value.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{backward, finite_diff_grad, grad_rel_error};
use crate::ops;
use crate::tensor::Tensor;

type Builder = Box<dyn Fn(&[Tensor]) -> Result<Tensor>>;

/// One randomly drawn gradient-check case: trainable leaf `inputs` and a
/// deterministic scalar function of them.
pub struct CheckInstance {
    pub inputs: Vec<Tensor>,
    pub build: Builder,
}

/// A registered primitive with its instance sampler.
pub struct PrimitiveCheck {
    pub name: &'static str,
    pub sample: fn(&mut ChaCha8Rng) -> CheckInstance,
}

fn rand_data(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
}

/// Values bounded away from zero, for kink-free ReLU probes and safe
/// divisors/logarithms.
fn rand_data_off_zero(rng: &mut ChaCha8Rng, n: usize, min_abs: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(-1.5..1.5);
            let s = if v >= 0.0 { 1.0 } else { -1.0 };
            s * (v.abs() + min_abs)
        })
        .collect()
}

fn param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(shape, rand_data(rng, n)).expect("param shape")
}

/// Reduce an op output to a scalar whose gradient exercises the chain:
/// sum(R * out + out^2), with R a fixed random projection.
fn to_scalar(out: &Tensor, proj: &Tensor) -> Result<Tensor> {
    let a = ops::mul(out, proj)?;
    let b = ops::powf(out, 2.0)?;
    ops::sum_all(&ops::add(&a, &b)?)
}

fn proj_like(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, rand_data(rng, n)).expect("proj shape")
}

macro_rules! instance {
    ($inputs:expr, $proj:expr, |$ins:ident| $out:expr) => {{
        let proj = $proj;
        CheckInstance {
            inputs: $inputs,
            build: Box::new(move |$ins: &[Tensor]| {
                let out = $out?;
                to_scalar(&out, &proj)
            }),
        }
    }};
}

fn sample_matmul(rng: &mut ChaCha8Rng) -> CheckInstance {
    let (m, k, n) = (
        rng.gen_range(1..4usize),
        rng.gen_range(1..4usize),
        rng.gen_range(1..4usize),
    );
    let a = param(rng, &[2, m, k]);
    let b = param(rng, &[k, n]);
    let proj = proj_like(rng, &[2, m, n]);
    instance!(vec![a, b], proj, |ins| ops::matmul(&ins[0], &ins[1]))
}

fn sample_bmm(rng: &mut ChaCha8Rng) -> CheckInstance {
    let (b, m, k, n) = (
        rng.gen_range(1..3usize),
        rng.gen_range(1..4usize),
        rng.gen_range(1..4usize),
        rng.gen_range(1..4usize),
    );
    let x = param(rng, &[b, m, k]);
    let y = param(rng, &[b, k, n]);
    let proj = proj_like(rng, &[b, m, n]);
    instance!(vec![x, y], proj, |ins| ops::bmm(&ins[0], &ins[1]))
}

fn broadcast_pair(rng: &mut ChaCha8Rng) -> (Tensor, Tensor, Vec<usize>) {
    let full = vec![2usize, 3, 2];
    let a = param(rng, &full);
    let b_shape: Vec<usize> = match rng.gen_range(0..3u8) {
        0 => full.clone(),
        1 => vec![3, 2],
        _ => vec![2],
    };
    let b = param(rng, &b_shape);
    (a, b, full)
}

fn sample_add(rng: &mut ChaCha8Rng) -> CheckInstance {
    let (a, b, full) = broadcast_pair(rng);
    let proj = proj_like(rng, &full);
    instance!(vec![a, b], proj, |ins| ops::add(&ins[0], &ins[1]))
}

fn sample_sub(rng: &mut ChaCha8Rng) -> CheckInstance {
    let (a, b, full) = broadcast_pair(rng);
    let proj = proj_like(rng, &full);
    instance!(vec![a, b], proj, |ins| ops::sub(&ins[0], &ins[1]))
}

fn sample_mul(rng: &mut ChaCha8Rng) -> CheckInstance {
    let (a, b, full) = broadcast_pair(rng);
    let proj = proj_like(rng, &full);
    instance!(vec![a, b], proj, |ins| ops::mul(&ins[0], &ins[1]))
}

fn sample_div(rng: &mut ChaCha8Rng) -> CheckInstance {
    let a = param(rng, &[2, 3]);
    let b = Tensor::param(&[3], rand_data_off_zero(rng, 3, 0.5)).expect("shape");
    let proj = proj_like(rng, &[2, 3]);
    instance!(vec![a, b], proj, |ins| ops::div(&ins[0], &ins[1]))
}

fn sample_neg(rng: &mut ChaCha8Rng) -> CheckInstance {
    let a = param(rng, &[2, 4]);
    let proj = proj_like(rng, &[2, 4]);
    instance!(vec![a], proj, |ins| ops::neg(&ins[0]))
}

fn sample_scale(rng: &mut ChaCha8Rng) -> CheckInstance {
    let a = param(rng, &[3, 2]);
    let c: f64 = rng.gen_range(-2.0..2.0);
    let proj = proj_like(rng, &[3, 2]);
    instance!(vec![a], proj, |ins| ops::scale(&ins[0], c))
}

fn sample_relu(rng: &mut ChaCha8Rng) -> CheckInstance {
    // keep inputs away from the kink so central differences are valid
    let a = Tensor::param(&[3, 4], rand_data_off_zero(rng, 12, 0.1)).expect("shape");
    let proj = proj_like(rng, &[3, 4]);
    instance!(vec![a], proj, |ins| ops::relu(&ins[0]))
}

fn sample_gelu(rng: &mut ChaCha8Rng) -> CheckInstance {
    let a = param(rng, &[3, 4]);
    let proj = proj_like(rng, &[3, 4]);
    instance!(vec![a], proj, |ins| ops::gelu(&ins[0]))
}

fn sample_exp(rng: &mut ChaCha8Rng) -> CheckInstance {
    let a = param(rng, &[2, 3]);
    let proj = proj_like(rng, &[2, 3]);
    instance!(vec![a], proj, |ins| ops::exp(&ins[0]))
}

fn sample_ln(rng: &mut ChaCha8Rng) -> CheckInstance {
    let data: Vec<f64> = (0..6).map(|_| rng.gen_range(0.3..2.0)).collect();
    let a = Tensor::param(&[2, 3], data).expect("shape");
    let proj = proj_like(rng, &[2, 3]);
    instance!(vec![a], proj, |ins| ops::ln(&ins[0]))
}

fn sample_powf(rng: &mut ChaCha8Rng) -> CheckInstance {
    let data: Vec<f64> = (0..6).map(|_| rng.gen_range(0.3..2.0)).collect();
    let a = Tensor::param(&[2, 3], data).expect("shape");
    let p = [2.0, 1.5, 0.7][rng.gen_range(0..3usize)];
    let proj = proj_like(rng, &[2, 3]);
    instance!(vec![a], proj, |ins| ops::powf(&ins[0], p))
}

fn sample_dropout(rng: &mut ChaCha8Rng) -> CheckInstance {
    let a = param(rng, &[4, 4]);
    let seed: u64 = rng.gen();
    let proj = proj_like(rng, &[4, 4]);
    instance!(vec![a], proj, |ins| ops::dropout(&ins[0], 0.25, true, seed))
}

fn sample_layer_norm(rng: &mut ChaCha8Rng) -> CheckInstance {
    let d = rng.gen_range(3..7usize);
    let x = param(rng, &[2, d]);
    let g = param(rng, &[d]);
    let b = param(rng, &[d]);
    let proj = proj_like(rng, &[2, d]);
    instance!(vec![x, g, b], proj, |ins| ops::layer_norm(
        &ins[0], &ins[1], &ins[2], 1e-5
    ))
}

fn sample_softmax(rng: &mut ChaCha8Rng) -> CheckInstance {
    let x = param(rng, &[2, 3, 2]);
    let axis = rng.gen_range(0..3usize);
    let proj = proj_like(rng, &[2, 3, 2]);
    instance!(vec![x], proj, |ins| ops::softmax_axis(&ins[0], axis))
}

fn sample_log_softmax(rng: &mut ChaCha8Rng) -> CheckInstance {
    let x = param(rng, &[2, 4]);
    let axis = rng.gen_range(0..2usize);
    let proj = proj_like(rng, &[2, 4]);
    instance!(vec![x], proj, |ins| ops::log_softmax_axis(&ins[0], axis))
}

fn sample_sum_axis(rng: &mut ChaCha8Rng) -> CheckInstance {
    let x = param(rng, &[2, 3, 2]);
    let axis = rng.gen_range(0..3usize);
    let mut shape = vec![2usize, 3, 2];
    shape.remove(axis);
    let proj = proj_like(rng, &shape);
    instance!(vec![x], proj, |ins| ops::sum_axis(&ins[0], axis, false))
}

fn sample_mean_axis(rng: &mut ChaCha8Rng) -> CheckInstance {
    let x = param(rng, &[2, 3, 2]);
    let axis = rng.gen_range(0..3usize);
    let mut shape = vec![2usize, 3, 2];
    shape.remove(axis);
    let proj = proj_like(rng, &shape);
    instance!(vec![x], proj, |ins| ops::mean_axis(&ins[0], axis, false))
}

fn sample_select(rng: &mut ChaCha8Rng) -> CheckInstance {
    let x = param(rng, &[2, 3, 2]);
    let idx = rng.gen_range(0..3usize);
    let proj = proj_like(rng, &[2, 2]);
    instance!(vec![x], proj, |ins| ops::select(&ins[0], 1, idx))
}

fn sample_reshape(rng: &mut ChaCha8Rng) -> CheckInstance {
    let x = param(rng, &[2, 6]);
    let proj = proj_like(rng, &[3, 4]);
    instance!(vec![x], proj, |ins| ops::reshape(&ins[0], &[3, 4]))
}

fn sample_permute(rng: &mut ChaCha8Rng) -> CheckInstance {
    let x = param(rng, &[2, 3, 4]);
    let proj = proj_like(rng, &[4, 2, 3]);
    instance!(vec![x], proj, |ins| ops::permute(&ins[0], &[2, 0, 1]))
}

fn sample_rfft2_filter(rng: &mut ChaCha8Rng) -> CheckInstance {
    let (c, h, w) = (
        rng.gen_range(1..3usize),
        rng.gen_range(2..6usize),
        rng.gen_range(2..6usize),
    );
    let x = param(rng, &[2, c, h, w]);
    let theta = param(rng, &[c]);
    let proj = proj_like(rng, &[2, c, h, w]);
    instance!(vec![x, theta], proj, |ins| ops::rfft2_filter(
        &ins[0], &ins[1]
    ))
}

fn sample_depthwise(rng: &mut ChaCha8Rng) -> CheckInstance {
    let c = rng.gen_range(1..3usize);
    let k = [3usize, 5][rng.gen_range(0..2usize)];
    let x = param(rng, &[2, c, 5, 5]);
    let ker = param(rng, &[c, k, k]);
    let proj = proj_like(rng, &[2, c, 5, 5]);
    instance!(vec![x, ker], proj, |ins| ops::depthwise_conv2d(
        &ins[0], &ins[1]
    ))
}

fn sample_pointwise(rng: &mut ChaCha8Rng) -> CheckInstance {
    let (c, co) = (rng.gen_range(1..4usize), rng.gen_range(1..4usize));
    let x = param(rng, &[2, c, 3, 3]);
    let w = param(rng, &[co, c]);
    let b = param(rng, &[co]);
    let proj = proj_like(rng, &[2, co, 3, 3]);
    instance!(vec![x, w, b], proj, |ins| ops::pointwise_conv2d(
        &ins[0],
        &ins[1],
        Some(&ins[2])
    ))
}

fn sample_bilinear(rng: &mut ChaCha8Rng) -> CheckInstance {
    let (h, w) = (rng.gen_range(1..4usize), rng.gen_range(1..4usize));
    let (ho, wo) = (h + rng.gen_range(0..4usize), w + rng.gen_range(0..4usize));
    let x = param(rng, &[2, 2, h, w]);
    let proj = proj_like(rng, &[2, 2, ho, wo]);
    instance!(vec![x], proj, |ins| ops::bilinear_upsample(&ins[0], ho, wo))
}

fn sample_global_pool(rng: &mut ChaCha8Rng) -> CheckInstance {
    let x = param(rng, &[2, 3, 4, 4]);
    let proj = proj_like(rng, &[2, 3, 1, 1]);
    instance!(vec![x], proj, |ins| ops::global_avg_pool(&ins[0]))
}

fn sample_adaptive_pool(rng: &mut ChaCha8Rng) -> CheckInstance {
    let (h, w) = (rng.gen_range(3..6usize), rng.gen_range(3..6usize));
    let (oh, ow) = (rng.gen_range(1..=h), rng.gen_range(1..=w));
    let x = param(rng, &[2, 2, h, w]);
    let proj = proj_like(rng, &[2, 2, oh, ow]);
    instance!(vec![x], proj, |ins| ops::adaptive_avg_pool(&ins[0], oh, ow))
}

/// The full primitive registry. Immutable once constructed.
pub fn core_op_set() -> Vec<PrimitiveCheck> {
    vec![
        PrimitiveCheck { name: "matmul", sample: sample_matmul },
        PrimitiveCheck { name: "bmm", sample: sample_bmm },
        PrimitiveCheck { name: "add", sample: sample_add },
        PrimitiveCheck { name: "sub", sample: sample_sub },
        PrimitiveCheck { name: "mul", sample: sample_mul },
        PrimitiveCheck { name: "div", sample: sample_div },
        PrimitiveCheck { name: "neg", sample: sample_neg },
        PrimitiveCheck { name: "scale", sample: sample_scale },
        PrimitiveCheck { name: "relu", sample: sample_relu },
        PrimitiveCheck { name: "gelu", sample: sample_gelu },
        PrimitiveCheck { name: "exp", sample: sample_exp },
        PrimitiveCheck { name: "ln", sample: sample_ln },
        PrimitiveCheck { name: "powf", sample: sample_powf },
        PrimitiveCheck { name: "dropout", sample: sample_dropout },
        PrimitiveCheck { name: "layer_norm", sample: sample_layer_norm },
        PrimitiveCheck { name: "softmax", sample: sample_softmax },
        PrimitiveCheck { name: "log_softmax", sample: sample_log_softmax },
        PrimitiveCheck { name: "sum_axis", sample: sample_sum_axis },
        PrimitiveCheck { name: "mean_axis", sample: sample_mean_axis },
        PrimitiveCheck { name: "select", sample: sample_select },
        PrimitiveCheck { name: "reshape", sample: sample_reshape },
        PrimitiveCheck { name: "permute", sample: sample_permute },
        PrimitiveCheck { name: "rfft2_filter", sample: sample_rfft2_filter },
        PrimitiveCheck { name: "depthwise_conv2d", sample: sample_depthwise },
        PrimitiveCheck { name: "pointwise_conv2d", sample: sample_pointwise },
        PrimitiveCheck { name: "bilinear_upsample", sample: sample_bilinear },
        PrimitiveCheck { name: "global_avg_pool", sample: sample_global_pool },
        PrimitiveCheck { name: "adaptive_avg_pool", sample: sample_adaptive_pool },
    ]
}

/// Worst-case relative error between reverse-mode and finite-difference
/// gradients over every input of an instance.
pub fn gradient_check(inst: &CheckInstance, eps: f64) -> Result<f64> {
    let out = (inst.build)(&inst.inputs)?;
    let grads = backward(&out, &Tensor::ones(out.shape()))?;
    let mut worst: f64 = 0.0;
    for (i, x) in inst.inputs.iter().enumerate() {
        let fd = finite_diff_grad(
            |probe| {
                let mut ins: Vec<Tensor> = inst.inputs.clone();
                ins[i] = probe.clone();
                (inst.build)(&ins)?.item()
            },
            x,
            eps,
        )?;
        worst = worst.max(grad_rel_error(&grads.get(x), &fd));
    }
    Ok(worst)
}

//! Oracle tests for the full hybrid-tuning block.
//!
//! The reference implementation below inlines the adapter math over plain
//! `Vec<f64>` buffers with a naive O(n^2) DFT; it shares no code with the
//! graph-based path. The composite gradient test checks every adapter
//! parameter against central finite differences.

use ht_core::adapter::{ht_forward, HTConfig, HTParams};
use ht_core::graph::{backward, finite_diff_grad, grad_rel_error};
use ht_core::ops;
use ht_core::tensor::Tensor;
use ht_core::Mode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LN_EPS: f64 = 1e-5;

fn gelu_ref(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + 0.044_715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

/// Naive full-spectrum DFT filter: theta multiplies every bin of a channel.
fn dft_filter_ref(map: &[f64], h: usize, w: usize, theta: f64) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    let tau = std::f64::consts::TAU;
    // spectrum
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for ky in 0..h {
        for kx in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let ang = -tau * (ky as f64 * y as f64 / h as f64
                        + kx as f64 * x as f64 / w as f64);
                    sr += map[y * w + x] * ang.cos();
                    si += map[y * w + x] * ang.sin();
                }
            }
            re[ky * w + kx] = sr * theta;
            im[ky * w + kx] = si * theta;
        }
    }
    // inverse
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..h {
                for kx in 0..w {
                    let ang = tau * (ky as f64 * y as f64 / h as f64
                        + kx as f64 * x as f64 / w as f64);
                    acc += re[ky * w + kx] * ang.cos() - im[ky * w + kx] * ang.sin();
                }
            }
            out[y * w + x] = acc / (h * w) as f64;
        }
    }
    out
}

/// Straight-line evaluation of the whole adapter for B=1 in eval mode.
fn ht_reference(z: &[f64], n: usize, dd: usize, p: &HTParams, cfg: &HTConfig) -> Vec<f64> {
    let d = cfg.bottleneck;
    let side = (n as f64).sqrt() as usize;
    assert_eq!(side * side, n);
    // Eq: z_in = (LN(z) * gamma + z * gamma_x) W_down + b_down
    let mut z_in = vec![0.0; n * d];
    for t in 0..n {
        let row = &z[t * dd..(t + 1) * dd];
        let mean: f64 = row.iter().sum::<f64>() / dd as f64;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dd as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        let scaled: Vec<f64> = (0..dd)
            .map(|i| {
                let ln = (row[i] - mean) * inv * p.ln_g.data()[i] + p.ln_b.data()[i];
                ln * p.gamma.data()[i] + row[i] * p.gamma_x.data()[i]
            })
            .collect();
        for j in 0..d {
            let mut acc = p.b_down.data()[j];
            for i in 0..dd {
                acc += scaled[i] * p.w_down.data()[i * d + j];
            }
            z_in[t * d + j] = acc;
        }
    }
    // reshape to maps (channel-major), filter, gate, mix
    let mut f_in = vec![0.0; d * n];
    for t in 0..n {
        for c in 0..d {
            f_in[c * n + t] = z_in[t * d + c];
        }
    }
    let mut f_freq = vec![0.0; d * n];
    for c in 0..d {
        let filtered = dft_filter_ref(&f_in[c * n..(c + 1) * n], side, side, p.theta.data()[c]);
        f_freq[c * n..(c + 1) * n].copy_from_slice(&filtered);
    }
    // ne weights: gap -> w1 -> relu -> w2 -> softmax
    let h = cfg.squeeze;
    let gap: Vec<f64> = (0..d)
        .map(|c| f_freq[c * n..(c + 1) * n].iter().sum::<f64>() / n as f64)
        .collect();
    let mut h1 = vec![0.0; h];
    for j in 0..h {
        let mut acc = p.ne_b1.data()[j];
        for c in 0..d {
            acc += gap[c] * p.ne_w1.data()[c * h + j];
        }
        h1[j] = acc.max(0.0);
    }
    let mut logits = vec![0.0; 3];
    for j in 0..3 {
        let mut acc = p.ne_b2.data()[j];
        for i in 0..h {
            acc += h1[i] * p.ne_w2.data()[i * 3 + j];
        }
        logits[j] = acc;
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let zsum: f64 = exps.iter().sum();
    let wgt: Vec<f64> = exps.iter().map(|v| v / zsum).collect();
    // f_sum = sum_i w_i (DW_i(f_freq) + b_i) + f_in
    let mut f_sum = f_in.clone();
    for (i, &k) in cfg.kernels.iter().enumerate() {
        let pad = (k - 1) / 2;
        for c in 0..d {
            for y in 0..side {
                for x in 0..side {
                    let mut acc = p.dw_biases[i].data()[c];
                    for dy in 0..k {
                        for dx in 0..k {
                            let sy = y as isize + dy as isize - pad as isize;
                            let sx = x as isize + dx as isize - pad as isize;
                            if sy < 0 || sy >= side as isize || sx < 0 || sx >= side as isize {
                                continue;
                            }
                            acc += f_freq[c * n + sy as usize * side + sx as usize]
                                * p.dw_kernels[i].data()[c * k * k + dy * k + dx];
                        }
                    }
                    f_sum[c * n + y * side + x] += wgt[i] * acc;
                }
            }
        }
    }
    // f_multi = PW(f_sum) + f_sum
    let mut f_multi = f_sum.clone();
    for pix in 0..n {
        for co in 0..d {
            let mut acc = p.pw_b.data()[co];
            for ci in 0..d {
                acc += p.pw.data()[co * d + ci] * f_sum[ci * n + pix];
            }
            f_multi[co * n + pix] += acc;
        }
    }
    // tokens, gelu, up-projection, residual
    let mut out = z.to_vec();
    for t in 0..n {
        let acts: Vec<f64> = (0..d).map(|c| gelu_ref(f_multi[c * n + t])).collect();
        for i in 0..dd {
            let mut acc = p.b_up.data()[i];
            for c in 0..d {
                acc += acts[c] * p.w_up.data()[c * dd + i];
            }
            out[t * dd + i] += acc;
        }
    }
    out
}

fn randomized_params(cfg: &HTConfig, seed: u64) -> HTParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = HTParams::init(cfg, &mut rng).unwrap();
    // move every tensor off its initialization so nothing is trivially zero
    for (_, t) in p.named_mut() {
        let jitter: Vec<f64> = t
            .data()
            .iter()
            .map(|v| v + rng.gen_range(-0.4..0.4))
            .collect();
        *t = Tensor::param(t.shape(), jitter).unwrap();
    }
    p
}

#[test]
fn graph_path_matches_straight_line_reference() {
    let cfg = HTConfig::new(8, 4, 4);
    for seed in [1u64, 2, 3] {
        let p = randomized_params(&cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = 4;
        let z_data: Vec<f64> = (0..n * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z = Tensor::from_vec(&[1, n, 8], z_data.clone()).unwrap();
        let got = ht_forward(&z, &p, &cfg, Mode::Eval, 0).unwrap();
        let want = ht_reference(&z_data, n, 8, &p, &cfg);
        let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (g, w) in got.data().iter().zip(&want) {
            assert!(
                (g - w).abs() <= 1e-6 * scale,
                "seed {seed}: {g} vs {w}"
            );
        }
    }
}

#[test]
fn composite_block_gradients_match_finite_differences() {
    // 4x4 bottleneck map (N = 16 tokens), every parameter checked
    let cfg = HTConfig::new(6, 4, 4);
    let p = randomized_params(&cfg, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 16;
    let z = Tensor::from_vec(
        &[1, n, 6],
        (0..n * 6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let proj = Tensor::from_vec(
        &[1, n, 6],
        (0..n * 6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();

    let run = |params: &HTParams| -> ht_core::Result<Tensor> {
        let out = ht_forward(&z, params, &cfg, Mode::Eval, 0)?;
        ops::sum_all(&ops::mul(&out, &proj)?)
    };

    let loss = run(&p).unwrap();
    let grads = backward(&loss, &Tensor::ones(&[1])).unwrap();

    let names: Vec<&'static str> = p.named().iter().map(|(n, _)| *n).collect();
    for name in names {
        let field = p
            .named()
            .into_iter()
            .find(|(n, _)| *n == name)
            .unwrap()
            .1
            .clone();
        let fd = finite_diff_grad(
            |probe| {
                let mut q = p.clone();
                for (n2, slot) in q.named_mut() {
                    if n2 == name {
                        *slot = probe.to_param();
                    }
                }
                run(&q)?.item()
            },
            &field,
            1e-5,
        )
        .unwrap();
        let err = grad_rel_error(&grads.get(&field), &fd);
        assert!(err < 1e-4, "parameter `{name}`: rel err {err}");
    }
}

#[test]
fn gradient_flows_to_every_parameter_on_nonzero_loss() {
    let cfg = HTConfig::new(6, 4, 4);
    let p = randomized_params(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let z = Tensor::from_vec(
        &[2, 4, 6],
        (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let out = ht_forward(&z, &p, &cfg, Mode::Eval, 0).unwrap();
    let loss = ops::sum_all(&ops::powf(&out, 2.0).unwrap()).unwrap();
    let grads = backward(&loss, &Tensor::ones(&[1])).unwrap();
    for (name, t) in p.named() {
        let g = grads.get(t);
        let nonzero = g.data().iter().any(|v| *v != 0.0);
        assert!(nonzero, "parameter `{name}` received an all-zero gradient");
    }
}

#[test]
fn stacked_adapters_receive_up_projection_gradients_in_every_layer() {
    use ht_core::model::{Adaptation, Model};
    use ht_core::vit::{init_backbone, ViTConfig};
    use std::rc::Rc;

    let mut vit = ViTConfig::sized(3, 16, 2, 2.0);
    vit.image_size = 32;
    vit.tap_indices = vec![0, 1, 2];
    let weights = Rc::new(init_backbone(&vit, 21).unwrap());
    let model = Model::attach_ht(weights.clone(), HTConfig::new(16, 4, 4), 2).unwrap();
    let s = vit.image_size;
    let image = Tensor::from_vec(
        &[1, 1, s, s],
        (0..s * s).map(|i| (i % 61) as f64 / 61.0).collect(),
    )
    .unwrap();
    let taps = model.forward(&image, Mode::Eval).unwrap();
    let loss = ops::sum_all(&ops::powf(&taps.final_tokens, 2.0).unwrap()).unwrap();
    let grads = backward(&loss, &Tensor::ones(&[1])).unwrap();
    if let Adaptation::Ht { layers, .. } = &model.adaptation {
        for (i, layer) in layers.iter().enumerate() {
            let g = grads.get(&layer.w_up);
            assert!(
                g.data().iter().any(|v| *v != 0.0),
                "layer {i} w_up got a zero gradient"
            );
        }
    }
    // frozen weights never appear in the gradient map
    for (name, t) in weights.named_tensors() {
        assert!(!grads.contains(t), "frozen `{name}` received a gradient");
    }
}

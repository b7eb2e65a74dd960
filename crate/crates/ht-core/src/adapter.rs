//! Hybrid-tuning adapter: normalized residual scaling into a bottleneck,
//! a learnable channel-wise spectral filter (FF), a noise-estimation gate
//! over a multi-scale depth-wise convolution bank (NE), and a zero-initialized
//! up-projection residual, appended after every transformer block.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::init::trunc_normal_param;
use crate::ops;
use crate::tensor::Tensor;
use crate::vit::{map_to_tokens, tokens_to_map, LN_EPS};
use crate::Mode;

#[derive(Debug, Clone)]
pub struct HTConfig {
    /// Backbone width D.
    pub backbone_width: usize,
    /// Bottleneck width d.
    pub bottleneck: usize,
    /// Hidden width h of the noise-estimation squeeze.
    pub squeeze: usize,
    /// Kernel sizes of the depth-wise bank (exactly three, odd).
    pub kernels: [usize; 3],
    pub dropout: f64,
}

impl HTConfig {
    pub fn new(backbone_width: usize, bottleneck: usize, squeeze: usize) -> HTConfig {
        HTConfig {
            backbone_width,
            bottleneck,
            squeeze,
            kernels: [3, 5, 7],
            dropout: 0.1,
        }
    }

    /// Paper-scale dims: D=768, d=64, h=16.
    pub fn paper_dims() -> HTConfig {
        HTConfig::new(768, 64, 16)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bottleneck == 0 || self.bottleneck >= self.backbone_width {
            return Err(Error::Config(format!(
                "bottleneck {} must be positive and below backbone width {}",
                self.bottleneck, self.backbone_width
            )));
        }
        if self.squeeze < 3 {
            return Err(Error::Config(format!(
                "squeeze width {} must be at least 3",
                self.squeeze
            )));
        }
        if self.kernels.iter().any(|k| k % 2 == 0 || *k == 0) {
            return Err(Error::Config(format!(
                "kernel sizes {:?} must be odd",
                self.kernels
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// All learnable quantities of one adapter instance.
#[derive(Debug, Clone)]
pub struct HTParams {
    pub gamma: Tensor,
    pub gamma_x: Tensor,
    pub ln_g: Tensor,
    pub ln_b: Tensor,
    pub w_down: Tensor,
    pub b_down: Tensor,
    pub theta: Tensor,
    pub ne_w1: Tensor,
    pub ne_b1: Tensor,
    pub ne_w2: Tensor,
    pub ne_b2: Tensor,
    pub dw_kernels: [Tensor; 3],
    pub dw_biases: [Tensor; 3],
    pub pw: Tensor,
    pub pw_b: Tensor,
    pub w_up: Tensor,
    pub b_up: Tensor,
}

impl HTParams {
    /// Fresh adapter: theta is exactly 1, the up-projection exactly 0, so a
    /// freshly attached adapter is an exact no-op.
    pub fn init(cfg: &HTConfig, rng: &mut ChaCha8Rng) -> Result<HTParams> {
        cfg.validate()?;
        let (dd, d, h) = (cfg.backbone_width, cfg.bottleneck, cfg.squeeze);
        let std = 0.02;
        let dw_kernels = [
            trunc_normal_param(rng, &[d, cfg.kernels[0], cfg.kernels[0]], std),
            trunc_normal_param(rng, &[d, cfg.kernels[1], cfg.kernels[1]], std),
            trunc_normal_param(rng, &[d, cfg.kernels[2], cfg.kernels[2]], std),
        ];
        Ok(HTParams {
            gamma: Tensor::ones(&[dd]).to_param(),
            gamma_x: Tensor::ones(&[dd]).to_param(),
            ln_g: Tensor::ones(&[dd]).to_param(),
            ln_b: Tensor::zeros(&[dd]).to_param(),
            w_down: trunc_normal_param(rng, &[dd, d], std),
            b_down: Tensor::zeros(&[d]).to_param(),
            theta: Tensor::ones(&[d]).to_param(),
            ne_w1: trunc_normal_param(rng, &[d, h], std),
            ne_b1: Tensor::zeros(&[h]).to_param(),
            ne_w2: trunc_normal_param(rng, &[h, 3], std),
            ne_b2: Tensor::zeros(&[3]).to_param(),
            dw_kernels,
            dw_biases: [
                Tensor::zeros(&[d]).to_param(),
                Tensor::zeros(&[d]).to_param(),
                Tensor::zeros(&[d]).to_param(),
            ],
            pw: trunc_normal_param(rng, &[d, d], std),
            pw_b: Tensor::zeros(&[d]).to_param(),
            w_up: Tensor::zeros(&[d, dd]).to_param(),
            b_up: Tensor::zeros(&[dd]).to_param(),
        })
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("gamma", &self.gamma),
            ("gamma_x", &self.gamma_x),
            ("ln_g", &self.ln_g),
            ("ln_b", &self.ln_b),
            ("w_down", &self.w_down),
            ("b_down", &self.b_down),
            ("theta", &self.theta),
            ("ne_w1", &self.ne_w1),
            ("ne_b1", &self.ne_b1),
            ("ne_w2", &self.ne_w2),
            ("ne_b2", &self.ne_b2),
            ("dw3", &self.dw_kernels[0]),
            ("dw5", &self.dw_kernels[1]),
            ("dw7", &self.dw_kernels[2]),
            ("dw3_b", &self.dw_biases[0]),
            ("dw5_b", &self.dw_biases[1]),
            ("dw7_b", &self.dw_biases[2]),
            ("pw", &self.pw),
            ("pw_b", &self.pw_b),
            ("w_up", &self.w_up),
            ("b_up", &self.b_up),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let [dw3, dw5, dw7] = &mut self.dw_kernels;
        let [dw3_b, dw5_b, dw7_b] = &mut self.dw_biases;
        vec![
            ("gamma", &mut self.gamma),
            ("gamma_x", &mut self.gamma_x),
            ("ln_g", &mut self.ln_g),
            ("ln_b", &mut self.ln_b),
            ("w_down", &mut self.w_down),
            ("b_down", &mut self.b_down),
            ("theta", &mut self.theta),
            ("ne_w1", &mut self.ne_w1),
            ("ne_b1", &mut self.ne_b1),
            ("ne_w2", &mut self.ne_w2),
            ("ne_b2", &mut self.ne_b2),
            ("dw3", dw3),
            ("dw5", dw5),
            ("dw7", dw7),
            ("dw3_b", dw3_b),
            ("dw5_b", dw5_b),
            ("dw7_b", dw7_b),
            ("pw", &mut self.pw),
            ("pw_b", &mut self.pw_b),
            ("w_up", &mut self.w_up),
            ("b_up", &mut self.b_up),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Closed-form parameter count of one adapter:
/// 2D (residual scales) + 2D (LayerNorm affine) + (Dd + d) + d (theta)
/// + (dh + h) + (3h + 3) + d(k1^2+k2^2+k3^2) + 3d + (d^2 + d) + (dD + D).
pub fn ht_param_count(backbone_width: usize, bottleneck: usize, squeeze: usize) -> usize {
    ht_param_count_kernels(backbone_width, bottleneck, squeeze, &[3, 5, 7])
}

pub fn ht_param_count_kernels(
    backbone_width: usize,
    bottleneck: usize,
    squeeze: usize,
    kernels: &[usize; 3],
) -> usize {
    let (dd, d, h) = (backbone_width, bottleneck, squeeze);
    let ksum: usize = kernels.iter().map(|k| k * k).sum();
    2 * dd + 2 * dd + (dd * d + d) + d + (d * h + h) + (3 * h + 3) + (d * ksum + 3 * d)
        + (d * d + d)
        + (d * dd + dd)
}

/// Frequency filtering: spectral channel gate over the bottleneck map.
/// Thin wrapper so probes can tap the filter input/output pair.
pub fn ff_apply(f_in: &Tensor, theta: &Tensor) -> Result<Tensor> {
    ops::rfft2_filter(f_in, theta)
}

/// Noise-estimation gate: GAP, squeeze to `h`, ReLU, project to 3 logits,
/// softmax. Returns `[B, 3, 1, 1]` mixture weights.
pub fn ne_weights(f_freq: &Tensor, params: &HTParams) -> Result<Tensor> {
    let b = f_freq.shape()[0];
    let d = f_freq.shape()[1];
    let pooled = ops::global_avg_pool(f_freq)?;
    let flat = ops::reshape(&pooled, &[b, d])?;
    let h1 = ops::relu(&ops::add(&ops::matmul(&flat, &params.ne_w1)?, &params.ne_b1)?)?;
    let logits = ops::add(&ops::matmul(&h1, &params.ne_w2)?, &params.ne_b2)?;
    let w = ops::softmax_axis(&logits, 1)?;
    ops::reshape(&w, &[b, 3, 1, 1])
}

/// Multi-scale mixing:
/// `F_sum = sum_i w_i * (DWConv_{k_i}(F_freq) + b_i) + F_in`,
/// `F_multi = PWConv(F_sum) + F_sum`.
pub fn ne_mix(
    f_freq: &Tensor,
    f_in: &Tensor,
    w: &Tensor,
    params: &HTParams,
    cfg: &HTConfig,
) -> Result<Tensor> {
    if cfg.kernels.len() != 3 {
        return Err(Error::Config("kernel bank must have exactly 3 entries".to_string()));
    }
    if w.shape().first() != f_freq.shape().first() || w.shape()[1..] != [3, 1, 1] {
        return Err(Error::Dimension(format!(
            "ne_mix: weights shape {:?} is not [B, 3, 1, 1]",
            w.shape()
        )));
    }
    let b = f_freq.shape()[0];
    let d = f_freq.shape()[1];
    let mut f_sum = f_in.clone();
    for i in 0..3 {
        let conv = ops::depthwise_conv2d(f_freq, &params.dw_kernels[i])?;
        let bias = ops::reshape(&params.dw_biases[i], &[d, 1, 1])?;
        let conv = ops::add(&conv, &bias)?;
        let wi = ops::reshape(&ops::select(w, 1, i)?, &[b, 1, 1, 1])?;
        f_sum = ops::add(&f_sum, &ops::mul(&wi, &conv)?)?;
    }
    let refined = ops::pointwise_conv2d(&f_sum, &params.pw, Some(&params.pw_b))?;
    ops::add(&refined, &f_sum)
}

/// Intermediate activations exposed for spectral diagnostics.
pub struct HtTrace {
    pub f_in: Tensor,
    pub f_freq: Tensor,
    pub ne_w: Tensor,
}

/// Full adapter pass over a token tensor `[B, N, D]`; `site` salts dropout
/// seeds so stacked adapters draw distinct masks.
pub fn ht_forward(
    z: &Tensor,
    params: &HTParams,
    cfg: &HTConfig,
    mode: Mode,
    site: u64,
) -> Result<Tensor> {
    Ok(ht_forward_traced(z, params, cfg, mode, site)?.0)
}

pub fn ht_forward_traced(
    z: &Tensor,
    params: &HTParams,
    cfg: &HTConfig,
    mode: Mode,
    site: u64,
) -> Result<(Tensor, HtTrace)> {
    let s = z.shape();
    if s.len() != 3 || s[2] != cfg.backbone_width {
        return Err(Error::Dimension(format!(
            "ht_forward: expected [B, N, {}], got {s:?}",
            cfg.backbone_width
        )));
    }
    // normalized residual scaling, then bottleneck projection
    let normed = ops::layer_norm(z, &params.ln_g, &params.ln_b, LN_EPS)?;
    let scaled = ops::add(
        &ops::mul(&normed, &params.gamma)?,
        &ops::mul(z, &params.gamma_x)?,
    )?;
    let z_in = ops::add(&ops::matmul(&scaled, &params.w_down)?, &params.b_down)?;
    let f_in = tokens_to_map(&z_in)?;
    // spectral gate, then noise-adaptive multi-scale mixing
    let f_freq = ff_apply(&f_in, &params.theta)?;
    let ne_w = ne_weights(&f_freq, params)?;
    let f_multi = ne_mix(&f_freq, &f_in, &ne_w, params, cfg)?;
    let z_out = map_to_tokens(&f_multi)?;
    // up-projection residual
    let act = ops::gelu(&z_out)?;
    let dropped = ops::dropout(&act, cfg.dropout, mode.training(), mode.site_seed(site))?;
    let up = ops::add(&ops::matmul(&dropped, &params.w_up)?, &params.b_up)?;
    let out = ops::add(z, &up)?;
    Ok((
        out,
        HtTrace {
            f_in,
            f_freq,
            ne_w,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy_cfg() -> HTConfig {
        HTConfig::new(8, 4, 4)
    }

    fn toy_z(b: usize, n: usize, d: usize) -> Tensor {
        let data: Vec<f64> = (0..b * n * d).map(|i| ((i * 37 % 101) as f64) / 50.0 - 1.0).collect();
        Tensor::from_vec(&[b, n, d], data).unwrap()
    }

    #[test]
    fn fresh_adapter_is_identity() {
        let cfg = toy_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = HTParams::init(&cfg, &mut rng).unwrap();
        let z = toy_z(2, 4, 8);
        let out = ht_forward(&z, &p, &cfg, Mode::Eval, 0).unwrap();
        assert_eq!(out.data(), z.data());
        // train mode too: dropout scales a branch that is multiplied by zero
        let out = ht_forward(&z, &p, &cfg, Mode::Train { seed: 9 }, 0).unwrap();
        assert_eq!(out.data(), z.data());
    }

    #[test]
    fn output_shape_preserved() {
        let cfg = toy_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = HTParams::init(&cfg, &mut rng).unwrap();
        p.w_up = trunc_normal_param(&mut rng, &[4, 8], 0.5);
        let z = toy_z(3, 9, 8);
        let out = ht_forward(&z, &p, &cfg, Mode::Eval, 0).unwrap();
        assert_eq!(out.shape(), &[3, 9, 8]);
        assert_ne!(out.data(), z.data());
    }

    #[test]
    fn ne_weights_form_a_simplex() {
        let cfg = toy_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = HTParams::init(&cfg, &mut rng).unwrap();
        let f = Tensor::from_vec(&[2, 4, 3, 3], (0..72).map(|i| (i as f64).sin()).collect())
            .unwrap();
        let w = ne_weights(&f, &p).unwrap();
        assert_eq!(w.shape(), &[2, 3, 1, 1]);
        for b in 0..2 {
            let row = &w.data()[b * 3..(b + 1) * 3];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|v| *v > 0.0 && *v < 1.0));
        }
        // zero input: softmax of the bias path, still a simplex
        let zf = Tensor::zeros(&[1, 4, 3, 3]);
        let w0 = ne_weights(&zf, &p).unwrap();
        let sum: f64 = w0.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ne_mix_collapses_under_one_hot_identity_kernel() {
        // w one-hot on k=3, identity 3x3 kernel, zero pointwise:
        // F_multi = F_freq + F_in
        let cfg = toy_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = HTParams::init(&cfg, &mut rng).unwrap();
        let d = cfg.bottleneck;
        let mut ident = vec![0.0; d * 9];
        for c in 0..d {
            ident[c * 9 + 4] = 1.0;
        }
        p.dw_kernels[0] = Tensor::param(&[d, 3, 3], ident).unwrap();
        p.dw_biases[0] = Tensor::zeros(&[d]).to_param();
        p.pw = Tensor::zeros(&[d, d]).to_param();
        p.pw_b = Tensor::zeros(&[d]).to_param();
        let f_in = Tensor::from_vec(&[1, d, 2, 2], (0..16).map(|i| i as f64 * 0.1).collect())
            .unwrap();
        let f_freq =
            Tensor::from_vec(&[1, d, 2, 2], (0..16).map(|i| (16 - i) as f64 * 0.1).collect())
                .unwrap();
        let w = Tensor::from_vec(&[1, 3, 1, 1], vec![1.0, 0.0, 0.0]).unwrap();
        let out = ne_mix(&f_freq, &f_in, &w, &p, &cfg).unwrap();
        for ((o, a), b) in out.data().iter().zip(f_in.data()).zip(f_freq.data()) {
            assert!((o - (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn ne_mix_all_zero_kernels_is_skip_path() {
        let cfg = toy_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = HTParams::init(&cfg, &mut rng).unwrap();
        let d = cfg.bottleneck;
        for i in 0..3 {
            p.dw_kernels[i] = Tensor::zeros(&[d, cfg.kernels[i], cfg.kernels[i]]).to_param();
            p.dw_biases[i] = Tensor::zeros(&[d]).to_param();
        }
        p.pw = Tensor::zeros(&[d, d]).to_param();
        p.pw_b = Tensor::zeros(&[d]).to_param();
        let f_in = toy_z(1, 4, d * 4); // reuse helper then reshape
        let f_in = ops::reshape(&f_in, &[1, d, 4, 4]).unwrap();
        let f_freq = ops::scale(&f_in, -2.0).unwrap();
        let w = Tensor::from_vec(&[1, 3, 1, 1], vec![0.2, 0.3, 0.5]).unwrap();
        let out = ne_mix(&f_freq, &f_in, &w, &p, &cfg).unwrap();
        assert_eq!(out.data(), f_in.data());
    }

    #[test]
    fn param_count_formula_matches_enumeration() {
        for (dd, d, h) in [(768usize, 64usize, 16usize), (32, 8, 4), (16, 4, 3)] {
            let cfg = HTConfig::new(dd, d, h);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let p = HTParams::init(&cfg, &mut rng).unwrap();
            assert_eq!(p.param_count(), ht_param_count(dd, d, h), "({dd},{d},{h})");
        }
    }

    #[test]
    fn paper_dim_budget() {
        assert_eq!(ht_param_count(768, 64, 16), 113_027);
        assert_eq!(12 * ht_param_count(768, 64, 16), 1_356_324);
    }
}

//! Task heads: multi-level tap aggregation, a bilinear-upsample +
//! 1x1-convolution segmentation head, and a pooled MLP classification head.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::init::trunc_normal_param;
use crate::ops;
use crate::tensor::Tensor;
use crate::vit::{tokens_to_map, TapSet, LN_EPS};
use crate::Mode;

#[derive(Debug, Clone)]
pub struct HeadConfig {
    pub backbone_width: usize,
    pub tap_indices: Vec<usize>,
    /// Reduced per-tap projection width.
    pub reduced: usize,
    pub num_classes: usize,
    /// Hidden width of the classification MLP.
    pub cls_hidden: usize,
    pub dropout: f64,
    /// Output resolution of the segmentation head.
    pub image_size: usize,
}

impl HeadConfig {
    pub fn new(backbone_width: usize, tap_indices: Vec<usize>, num_classes: usize) -> HeadConfig {
        HeadConfig {
            backbone_width,
            tap_indices,
            reduced: 64,
            num_classes,
            cls_hidden: 256,
            dropout: 0.1,
            image_size: 224,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tap_indices.is_empty() {
            return Err(Error::Config("heads need at least one tap".to_string()));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be >= 1".to_string()));
        }
        if self.reduced == 0 || self.cls_hidden == 0 {
            return Err(Error::Config("zero head width".to_string()));
        }
        Ok(())
    }
}

/// One tap's projection + refinement parameters.
#[derive(Debug, Clone)]
pub struct TapProj {
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    pub ln_g: Tensor,
    pub ln_b: Tensor,
    pub lin_w: Tensor,
    pub lin_b: Tensor,
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub config: HeadConfig,
    pub taps: Vec<(usize, TapProj)>,
    pub seg_w: Tensor,
    pub seg_b: Tensor,
    pub cls_w1: Tensor,
    pub cls_b1: Tensor,
    pub cls_w2: Tensor,
    pub cls_b2: Tensor,
}

impl HeadParams {
    pub fn init(config: &HeadConfig, rng: &mut ChaCha8Rng) -> Result<HeadParams> {
        config.validate()?;
        let (d, r, c) = (config.backbone_width, config.reduced, config.num_classes);
        let std = 0.02;
        let taps = config
            .tap_indices
            .iter()
            .map(|&i| {
                (
                    i,
                    TapProj {
                        proj_w: trunc_normal_param(rng, &[d, r], std),
                        proj_b: Tensor::zeros(&[r]).to_param(),
                        ln_g: Tensor::ones(&[r]).to_param(),
                        ln_b: Tensor::zeros(&[r]).to_param(),
                        lin_w: trunc_normal_param(rng, &[r, r], std),
                        lin_b: Tensor::zeros(&[r]).to_param(),
                    },
                )
            })
            .collect();
        Ok(HeadParams {
            config: config.clone(),
            taps,
            seg_w: trunc_normal_param(rng, &[c, r], std),
            seg_b: Tensor::zeros(&[c]).to_param(),
            cls_w1: trunc_normal_param(rng, &[r, config.cls_hidden], std),
            cls_b1: Tensor::zeros(&[config.cls_hidden]).to_param(),
            cls_w2: trunc_normal_param(rng, &[config.cls_hidden, c], std),
            cls_b2: Tensor::zeros(&[c]).to_param(),
        })
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, t) in &self.taps {
            out.push((format!("tap{i}.proj_w"), &t.proj_w));
            out.push((format!("tap{i}.proj_b"), &t.proj_b));
            out.push((format!("tap{i}.ln_g"), &t.ln_g));
            out.push((format!("tap{i}.ln_b"), &t.ln_b));
            out.push((format!("tap{i}.lin_w"), &t.lin_w));
            out.push((format!("tap{i}.lin_b"), &t.lin_b));
        }
        out.push(("seg_w".to_string(), &self.seg_w));
        out.push(("seg_b".to_string(), &self.seg_b));
        out.push(("cls_w1".to_string(), &self.cls_w1));
        out.push(("cls_b1".to_string(), &self.cls_b1));
        out.push(("cls_w2".to_string(), &self.cls_w2));
        out.push(("cls_b2".to_string(), &self.cls_b2));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, t) in &mut self.taps {
            out.push((format!("tap{i}.proj_w"), &mut t.proj_w));
            out.push((format!("tap{i}.proj_b"), &mut t.proj_b));
            out.push((format!("tap{i}.ln_g"), &mut t.ln_g));
            out.push((format!("tap{i}.ln_b"), &mut t.ln_b));
            out.push((format!("tap{i}.lin_w"), &mut t.lin_w));
            out.push((format!("tap{i}.lin_b"), &mut t.lin_b));
        }
        out.push(("seg_w".to_string(), &mut self.seg_w));
        out.push(("seg_b".to_string(), &mut self.seg_b));
        out.push(("cls_w1".to_string(), &mut self.cls_w1));
        out.push(("cls_b1".to_string(), &mut self.cls_b1));
        out.push(("cls_w2".to_string(), &mut self.cls_w2));
        out.push(("cls_b2".to_string(), &mut self.cls_b2));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Project every configured tap to the reduced width, refine with
/// LayerNorm -> linear -> GELU, and sum; returned as a `[B, r, s, s]` map.
pub fn aggregate(taps: &TapSet, params: &HeadParams) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for (idx, tp) in &params.taps {
        let tokens = taps.tap(*idx)?;
        let proj = ops::add(&ops::matmul(tokens, &tp.proj_w)?, &tp.proj_b)?;
        let refined = ops::gelu(&ops::add(
            &ops::matmul(&ops::layer_norm(&proj, &tp.ln_g, &tp.ln_b, LN_EPS)?, &tp.lin_w)?,
            &tp.lin_b,
        )?)?;
        acc = Some(match acc {
            None => refined,
            Some(prev) => ops::add(&prev, &refined)?,
        });
    }
    let summed = acc.expect("validated: at least one tap");
    tokens_to_map(&summed)
}

/// Segmentation logits at full image resolution:
/// bilinear upsample then 1x1 convolution into label space.
pub fn seg_forward(f_agg: &Tensor, params: &HeadParams) -> Result<Tensor> {
    let size = params.config.image_size;
    let up = ops::bilinear_upsample(f_agg, size, size)?;
    ops::pointwise_conv2d(&up, &params.seg_w, Some(&params.seg_b))
}

/// Classification logits: adaptive average pooling to 1x1, then a two-layer
/// MLP with ReLU and dropout.
pub fn cls_forward(f_agg: &Tensor, params: &HeadParams, mode: Mode) -> Result<Tensor> {
    let b = f_agg.shape()[0];
    let r = f_agg.shape()[1];
    let pooled = ops::adaptive_avg_pool(f_agg, 1, 1)?;
    let flat = ops::reshape(&pooled, &[b, r])?;
    let h = ops::relu(&ops::add(&ops::matmul(&flat, &params.cls_w1)?, &params.cls_b1)?)?;
    let h = ops::dropout(&h, params.config.dropout, mode.training(), mode.site_seed(0xc1a55))?;
    ops::add(&ops::matmul(&h, &params.cls_w2)?, &params.cls_b2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy_taps(b: usize, n: usize, d: usize, fill: impl Fn(usize) -> f64) -> TapSet {
        let make = |offset: usize| {
            Tensor::from_vec(
                &[b, n, d],
                (0..b * n * d).map(|i| fill(i + offset)).collect(),
            )
            .unwrap()
        };
        TapSet {
            taps: vec![(0, make(0)), (1, make(7)), (2, make(19))],
            final_tokens: make(3),
        }
    }

    fn toy_params(d: usize) -> HeadParams {
        let cfg = HeadConfig {
            backbone_width: d,
            tap_indices: vec![0, 1, 2],
            reduced: 6,
            num_classes: 2,
            cls_hidden: 8,
            dropout: 0.1,
            image_size: 8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        HeadParams::init(&cfg, &mut rng).unwrap()
    }

    #[test]
    fn zero_projections_give_zero_map() {
        let mut p = toy_params(5);
        for (_, tp) in &mut p.taps {
            tp.proj_w = Tensor::zeros(&[5, 6]).to_param();
            tp.proj_b = Tensor::zeros(&[6]).to_param();
            tp.lin_w = Tensor::zeros(&[6, 6]).to_param();
            tp.lin_b = Tensor::zeros(&[6]).to_param();
        }
        let taps = toy_taps(1, 4, 5, |i| (i as f64).sin());
        let agg = aggregate(&taps, &p).unwrap();
        for v in agg.data() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn identical_taps_and_projections_double() {
        // two identical taps with identical projections = 2x single-tap result
        let mut p = toy_params(5);
        p.taps.truncate(2);
        let shared = p.taps[0].1.clone();
        p.taps[1].1 = shared;
        let base = toy_taps(1, 4, 5, |i| (i as f64 * 0.3).cos());
        let same = TapSet {
            taps: vec![
                (0, base.tap(0).unwrap().clone()),
                (1, base.tap(0).unwrap().clone()),
            ],
            final_tokens: base.final_tokens.clone(),
        };
        let two = aggregate(&same, &p).unwrap();
        p.taps.truncate(1);
        let one = aggregate(&same, &p).unwrap();
        for (a, b) in two.data().iter().zip(one.data()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn three_tap_aggregate_matches_inline_reference() {
        let p = toy_params(5);
        let taps = toy_taps(1, 4, 5, |i| ((i * 29 % 23) as f64) / 11.5 - 1.0);
        let agg = aggregate(&taps, &p).unwrap();
        // straight-line reference over plain buffers
        let gelu = |x: f64| {
            let c = (2.0f64 / std::f64::consts::PI).sqrt();
            let u = c * (x + 0.044715 * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        };
        let (n, d, r) = (4usize, 5usize, 6usize);
        let mut want = vec![0.0; n * r];
        for (idx, tp) in &p.taps {
            let tokens = taps.tap(*idx).unwrap();
            for t in 0..n {
                // projection
                let mut proj = vec![0.0; r];
                for j in 0..r {
                    let mut acc = tp.proj_b.data()[j];
                    for i in 0..d {
                        acc += tokens.data()[t * d + i] * tp.proj_w.data()[i * r + j];
                    }
                    proj[j] = acc;
                }
                // layer norm
                let mean: f64 = proj.iter().sum::<f64>() / r as f64;
                let var: f64 = proj.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / r as f64;
                let inv = 1.0 / (var + 1e-5).sqrt();
                let normed: Vec<f64> = (0..r)
                    .map(|j| (proj[j] - mean) * inv * tp.ln_g.data()[j] + tp.ln_b.data()[j])
                    .collect();
                // linear + gelu, summed into the aggregate
                for j in 0..r {
                    let mut acc = tp.lin_b.data()[j];
                    for i in 0..r {
                        acc += normed[i] * tp.lin_w.data()[i * r + j];
                    }
                    want[t * r + j] += gelu(acc);
                }
            }
        }
        // aggregate is a [1, r, 2, 2] map in row-major token order
        for t in 0..n {
            for j in 0..r {
                let got = agg.data()[j * n + t];
                assert!(
                    (got - want[t * r + j]).abs() < 1e-6,
                    "token {t} channel {j}: {got} vs {}",
                    want[t * r + j]
                );
            }
        }
    }

    #[test]
    fn seg_logits_shape_and_constant_preservation() {
        let p = toy_params(5);
        // spatially constant aggregated map -> spatially constant logits
        let f = Tensor::from_vec(
            &[1, 6, 2, 2],
            (0..6).flat_map(|c| std::iter::repeat(c as f64 * 0.5).take(4)).collect::<Vec<_>>(),
        )
        .unwrap();
        let logits = seg_forward(&f, &p).unwrap();
        assert_eq!(logits.shape(), &[1, 2, 8, 8]);
        for c in 0..2 {
            let plane = &logits.data()[c * 64..(c + 1) * 64];
            for v in plane {
                assert!((v - plane[0]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn seg_zero_weights_emit_bias_planes() {
        let mut p = toy_params(5);
        p.seg_w = Tensor::zeros(&[2, 6]).to_param();
        p.seg_b = Tensor::param(&[2], vec![0.25, -1.5]).unwrap();
        let f = Tensor::from_vec(&[1, 6, 2, 2], (0..24).map(|i| i as f64).collect()).unwrap();
        let logits = seg_forward(&f, &p).unwrap();
        for v in &logits.data()[..64] {
            assert_eq!(*v, 0.25);
        }
        for v in &logits.data()[64..] {
            assert_eq!(*v, -1.5);
        }
    }

    #[test]
    fn cls_eval_deterministic_and_pool_means() {
        let p = toy_params(5);
        // spatially constant per channel: pooled vector = channel values,
        // checked indirectly through determinism of the logits
        let f = Tensor::from_vec(
            &[2, 6, 2, 2],
            (0..48).map(|i| ((i / 4) % 6) as f64).collect(),
        )
        .unwrap();
        let a = cls_forward(&f, &p, Mode::Eval).unwrap();
        let b = cls_forward(&f, &p, Mode::Eval).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.shape(), &[2, 2]);
    }

    #[test]
    fn cls_hand_case() {
        // 2-channel input pooled to v = [1, 2]; hand-computed 2->2->2 MLP
        let cfg = HeadConfig {
            backbone_width: 4,
            tap_indices: vec![0],
            reduced: 2,
            num_classes: 2,
            cls_hidden: 2,
            dropout: 0.0,
            image_size: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = HeadParams::init(&cfg, &mut rng).unwrap();
        p.cls_w1 = Tensor::param(&[2, 2], vec![1., 0., 0., 1.]).unwrap();
        p.cls_b1 = Tensor::param(&[2], vec![0., -3.]).unwrap();
        p.cls_w2 = Tensor::param(&[2, 2], vec![2., -1., 1., 1.]).unwrap();
        p.cls_b2 = Tensor::param(&[2], vec![0.5, 0.]).unwrap();
        let f = Tensor::from_vec(&[1, 2, 2, 2], vec![1.; 4].into_iter().chain(vec![2.; 4]).collect())
            .unwrap();
        // pooled = [1, 2]; h = relu([1, -1]) = [1, 0]; logits = [2*1+0.5, -1]
        let logits = cls_forward(&f, &p, Mode::Eval).unwrap();
        assert!((logits.data()[0] - 2.5).abs() < 1e-12);
        assert!((logits.data()[1] - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let p = toy_params(5);
        let taps = toy_taps(2, 4, 5, |i| (i as f64 * 0.17).sin());
        let agg = aggregate(&taps, &p).unwrap();
        // swap the two batch entries in every tap
        let swap = |t: &Tensor| {
            let half = t.numel() / 2;
            let mut d = t.data()[half..].to_vec();
            d.extend_from_slice(&t.data()[..half]);
            Tensor::from_vec(t.shape(), d).unwrap()
        };
        let swapped = TapSet {
            taps: taps
                .taps
                .iter()
                .map(|(i, t)| (*i, swap(t)))
                .collect(),
            final_tokens: swap(&taps.final_tokens),
        };
        let agg2 = aggregate(&swapped, &p).unwrap();
        let half = agg.numel() / 2;
        assert_eq!(&agg.data()[..half], &agg2.data()[half..]);
        assert_eq!(&agg.data()[half..], &agg2.data()[..half]);
    }
}

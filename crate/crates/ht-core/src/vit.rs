//! Frozen toy vision-transformer encoder with intermediate-layer taps.
//!
//! Stands in for a pretrained CLIP visual tower: pre-LN transformer blocks
//! over a grid of patch tokens, no class token (every token must reshape to
//! a 2D map), deterministic truncated-normal initialization. Weights are
//! constants; nothing here ever receives a gradient update.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::init::{checksum, trunc_normal_frozen};
use crate::ops;
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub tap_indices: Vec<usize>,
}

impl ViTConfig {
    /// Desk-scale encoder used throughout the tests and training runs.
    pub fn toy() -> ViTConfig {
        ViTConfig::sized(4, 64, 4, 2.0)
    }

    /// ViT-B/16 geometry; used for parameter and FLOP accounting only.
    pub fn paper_dims() -> ViTConfig {
        ViTConfig::sized(12, 768, 12, 4.0)
    }

    pub fn sized(depth: usize, width: usize, heads: usize, mlp_ratio: f64) -> ViTConfig {
        ViTConfig {
            image_size: 224,
            patch_size: 16,
            depth,
            width,
            heads,
            mlp_ratio,
            tap_indices: default_tap_indices(depth),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.depth == 0 || self.width == 0 {
            return Err(Error::Config("zero depth or width".to_string()));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if self.mlp_ratio <= 0.0 {
            return Err(Error::Config("non-positive mlp ratio".to_string()));
        }
        let mut prev: Option<usize> = None;
        for &t in &self.tap_indices {
            if t >= self.depth {
                return Err(Error::Config(format!(
                    "tap index {t} out of range for depth {}",
                    self.depth
                )));
            }
            if prev.is_some_and(|p| p >= t) {
                return Err(Error::Config(
                    "tap indices must be strictly increasing".to_string(),
                ));
            }
            prev = Some(t);
        }
        if self.tap_indices.is_empty() {
            return Err(Error::Config("at least one tap index required".to_string()));
        }
        Ok(())
    }

    /// Tokens per side of the grid.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Total token count N.
    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.width as f64) * self.mlp_ratio).round() as usize
    }
}

/// Tap placement for arbitrary depth, proportional to blocks 3/6/9 of a
/// 12-block encoder.
pub fn default_tap_indices(depth: usize) -> Vec<usize> {
    let mut out: Vec<usize> = [3.0, 6.0, 9.0]
        .iter()
        .map(|k| ((depth as f64) * k / 12.0).round() as usize)
        .map(|i| i.min(depth.saturating_sub(1)))
        .collect();
    out.dedup();
    out
}

#[derive(Debug, Clone)]
pub struct BlockWeights {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub w_fc1: Tensor,
    pub b_fc1: Tensor,
    pub w_fc2: Tensor,
    pub b_fc2: Tensor,
}

impl BlockWeights {
    fn init(rng: &mut ChaCha8Rng, width: usize, hidden: usize) -> BlockWeights {
        let std = 0.02;
        BlockWeights {
            ln1_g: Tensor::ones(&[width]),
            ln1_b: Tensor::zeros(&[width]),
            wq: trunc_normal_frozen(rng, &[width, width], std),
            bq: Tensor::zeros(&[width]),
            wk: trunc_normal_frozen(rng, &[width, width], std),
            bk: Tensor::zeros(&[width]),
            wv: trunc_normal_frozen(rng, &[width, width], std),
            bv: Tensor::zeros(&[width]),
            wo: trunc_normal_frozen(rng, &[width, width], std),
            bo: Tensor::zeros(&[width]),
            ln2_g: Tensor::ones(&[width]),
            ln2_b: Tensor::zeros(&[width]),
            w_fc1: trunc_normal_frozen(rng, &[width, hidden], std),
            b_fc1: Tensor::zeros(&[hidden]),
            w_fc2: trunc_normal_frozen(rng, &[hidden, width], std),
            b_fc2: Tensor::zeros(&[width]),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
            ("w_fc1", &self.w_fc1),
            ("b_fc1", &self.b_fc1),
            ("w_fc2", &self.w_fc2),
            ("b_fc2", &self.b_fc2),
        ]
    }
}

/// Attention projections for one block, possibly adapted (LoRA builds
/// effective projections as graph expressions over the frozen ones).
pub struct ProjSet {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

#[derive(Debug, Clone)]
pub struct ViTWeights {
    pub config: ViTConfig,
    pub patch_w: Tensor,
    pub patch_b: Tensor,
    pub pos: Tensor,
    pub blocks: Vec<BlockWeights>,
    pub final_g: Tensor,
    pub final_b: Tensor,
}

/// Deterministic frozen initialization; equal seeds give bit-identical
/// weights.
pub fn init_backbone(config: &ViTConfig, seed: u64) -> Result<ViTWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = 0.02;
    let d = config.width;
    let patch_w = trunc_normal_frozen(&mut rng, &[config.patch_dim(), d], std);
    let patch_b = Tensor::zeros(&[d]);
    let pos = trunc_normal_frozen(&mut rng, &[config.tokens(), d], std);
    let blocks = (0..config.depth)
        .map(|_| BlockWeights::init(&mut rng, d, config.mlp_hidden()))
        .collect();
    Ok(ViTWeights {
        config: config.clone(),
        patch_w,
        patch_b,
        pos,
        blocks,
        final_g: Tensor::ones(&[d]),
        final_b: Tensor::zeros(&[d]),
    })
}

impl ViTWeights {
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("patch_w".to_string(), &self.patch_w),
            ("patch_b".to_string(), &self.patch_b),
            ("pos".to_string(), &self.pos),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (n, t) in b.tensors() {
                out.push((format!("block{i}.{n}"), t));
            }
        }
        out.push(("final_g".to_string(), &self.final_g));
        out.push(("final_b".to_string(), &self.final_b));
        out
    }

    /// Checksum over every weight; must be invariant across training.
    pub fn checksum(&self) -> u64 {
        let refs: Vec<&Tensor> = self.named_tensors().into_iter().map(|(_, t)| t).collect();
        checksum(&refs)
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Taps captured during a forward pass: block index -> token tensor, plus
/// the final (post-norm) tokens.
#[derive(Debug)]
pub struct TapSet {
    pub taps: Vec<(usize, Tensor)>,
    pub final_tokens: Tensor,
}

impl TapSet {
    pub fn tap(&self, index: usize) -> Result<&Tensor> {
        self.taps
            .iter()
            .find(|(i, _)| *i == index)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Config(format!("no tap recorded at block {index}")))
    }
}

/// Extract non-overlapping patches: `[B, 1, S, S] -> [B, N, p*p]`.
/// Images are constants; this is a pure data rearrangement.
fn patchify(image: &Tensor, config: &ViTConfig) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 4 || s[1] != 1 || s[2] != config.image_size || s[3] != config.image_size {
        return Err(Error::Dimension(format!(
            "expected image [B, 1, {0}, {0}], got {s:?}",
            config.image_size
        )));
    }
    if !image.is_finite() {
        return Err(Error::Input("image contains non-finite values".to_string()));
    }
    let (b, p, g, size) = (s[0], config.patch_size, config.grid(), config.image_size);
    let mut data = Vec::with_capacity(b * g * g * p * p);
    for bi in 0..b {
        let img = &image.data()[bi * size * size..(bi + 1) * size * size];
        for gy in 0..g {
            for gx in 0..g {
                for py in 0..p {
                    let row = gy * p + py;
                    let col = gx * p;
                    data.extend_from_slice(&img[row * size + col..row * size + col + p]);
                }
            }
        }
    }
    Tensor::from_vec(&[b, g * g, p * p], data)
}

/// One pre-LN transformer block.
pub fn block_forward(
    x: &Tensor,
    bw: &BlockWeights,
    heads: usize,
    proj: Option<&ProjSet>,
) -> Result<Tensor> {
    let (b, n, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let dh = d / heads;
    let (wq, wk, wv, wo) = match proj {
        Some(p) => (&p.wq, &p.wk, &p.wv, &p.wo),
        None => (&bw.wq, &bw.wk, &bw.wv, &bw.wo),
    };
    let h = ops::layer_norm(x, &bw.ln1_g, &bw.ln1_b, LN_EPS)?;
    let split = |t: &Tensor| -> Result<Tensor> {
        // [B, N, D] -> [B*heads, N, dh]
        let t = ops::reshape(t, &[b, n, heads, dh])?;
        let t = ops::permute(&t, &[0, 2, 1, 3])?;
        ops::reshape(&t, &[b * heads, n, dh])
    };
    let q = split(&ops::add(&ops::matmul(&h, wq)?, &bw.bq)?)?;
    let k = split(&ops::add(&ops::matmul(&h, wk)?, &bw.bk)?)?;
    let v = split(&ops::add(&ops::matmul(&h, wv)?, &bw.bv)?)?;
    let kt = ops::permute(&k, &[0, 2, 1])?;
    let scores = ops::scale(&ops::bmm(&q, &kt)?, 1.0 / (dh as f64).sqrt())?;
    let attn = ops::softmax_axis(&scores, 2)?;
    let ctx = ops::bmm(&attn, &v)?;
    // [B*heads, N, dh] -> [B, N, D]
    let ctx = ops::reshape(&ctx, &[b, heads, n, dh])?;
    let ctx = ops::permute(&ctx, &[0, 2, 1, 3])?;
    let ctx = ops::reshape(&ctx, &[b, n, d])?;
    let x = ops::add(x, &ops::add(&ops::matmul(&ctx, wo)?, &bw.bo)?)?;
    let h2 = ops::layer_norm(&x, &bw.ln2_g, &bw.ln2_b, LN_EPS)?;
    let mlp = ops::matmul(&ops::gelu(&ops::add(&ops::matmul(&h2, &bw.w_fc1)?, &bw.b_fc1)?)?, &bw.w_fc2)?;
    ops::add(&x, &ops::add(&mlp, &bw.b_fc2)?)
}

/// Full encoder pass with per-block customization. `proj_for` supplies
/// adapted attention projections, `after_block` post-processes each block
/// output (the hybrid-tuning adapters hook in here); taps are recorded
/// after the hook so heads see adapted features.
pub fn forward_with(
    image: &Tensor,
    weights: &ViTWeights,
    proj_for: &mut dyn FnMut(usize) -> Result<Option<ProjSet>>,
    after_block: &mut dyn FnMut(usize, Tensor) -> Result<Tensor>,
) -> Result<TapSet> {
    forward_truncated(image, weights, weights.config.depth, proj_for, after_block)
}

/// Like [`forward_with`] but stopping after `depth` blocks (tap-consistency
/// checks compare full-pass taps against truncated passes).
pub fn forward_truncated(
    image: &Tensor,
    weights: &ViTWeights,
    depth: usize,
    proj_for: &mut dyn FnMut(usize) -> Result<Option<ProjSet>>,
    after_block: &mut dyn FnMut(usize, Tensor) -> Result<Tensor>,
) -> Result<TapSet> {
    let config = &weights.config;
    let tokens = patchify(image, config)?;
    let embedded = ops::add(&ops::matmul(&tokens, &weights.patch_w)?, &weights.patch_b)?;
    let mut x = ops::add(&embedded, &weights.pos)?;
    let mut taps = Vec::new();
    for i in 0..depth.min(config.depth) {
        let proj = proj_for(i)?;
        x = block_forward(&x, &weights.blocks[i], config.heads, proj.as_ref())?;
        x = after_block(i, x)?;
        if config.tap_indices.contains(&i) {
            taps.push((i, x.clone()));
        }
    }
    let final_tokens = ops::layer_norm(&x, &weights.final_g, &weights.final_b, LN_EPS)?;
    Ok(TapSet {
        taps,
        final_tokens,
    })
}

/// Frozen baseline pass (no adapters, no LoRA).
pub fn vit_forward(image: &Tensor, weights: &ViTWeights) -> Result<TapSet> {
    forward_with(image, weights, &mut |_| Ok(None), &mut |_, x| Ok(x))
}

/// `[B, N, D] -> [B, D, sqrt(N), sqrt(N)]` (row-major token order).
pub fn tokens_to_map(tokens: &Tensor) -> Result<Tensor> {
    let s = tokens.shape();
    if s.len() != 3 {
        return Err(Error::Dimension(format!(
            "tokens_to_map: expected [B, N, D], got {s:?}"
        )));
    }
    let (b, n, d) = (s[0], s[1], s[2]);
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::Dimension(format!(
            "tokens_to_map: token count {n} is not a perfect square"
        )));
    }
    let t = ops::reshape(tokens, &[b, side, side, d])?;
    ops::permute(&t, &[0, 3, 1, 2])
}

/// Inverse of [`tokens_to_map`].
pub fn map_to_tokens(map: &Tensor) -> Result<Tensor> {
    let s = map.shape();
    if s.len() != 4 {
        return Err(Error::Dimension(format!(
            "map_to_tokens: expected [B, D, H, W], got {s:?}"
        )));
    }
    let (b, d, h, w) = (s[0], s[1], s[2], s[3]);
    let t = ops::permute(map, &[0, 2, 3, 1])?;
    ops::reshape(&t, &[b, h * w, d])
}

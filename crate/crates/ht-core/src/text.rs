//! Frozen toy text encoder.
//!
//! A deliberately crude stand-in for a pretrained text tower: a hashing
//! tokenizer (lowercase, split on non-alphanumerics, FNV-1a mod vocab)
//! feeding a frozen 2-block transformer; embeddings are mean-pooled over
//! tokens and unit-normalized. Zero-shot tests exercise the ensembling
//! mechanics, not linguistic quality.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::init::{fnv1a, trunc_normal_frozen};
use crate::ops;
use crate::tensor::Tensor;
use crate::vit::{block_forward, BlockWeights, LN_EPS};

#[derive(Debug, Clone)]
pub struct TextConfig {
    pub vocab: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub max_tokens: usize,
}

impl Default for TextConfig {
    fn default() -> TextConfig {
        TextConfig {
            vocab: 1024,
            width: 64,
            depth: 2,
            heads: 4,
            mlp_ratio: 2.0,
            max_tokens: 64,
        }
    }
}

/// Lowercase, split on non-alphanumeric characters, hash each token into
/// the vocabulary.
pub fn tokenize(caption: &str, vocab: usize) -> Vec<usize> {
    caption
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| (fnv1a(t.as_bytes()) % vocab as u64) as usize)
        .collect()
}

pub struct TextEncoder {
    pub config: TextConfig,
    embed: Tensor,
    pos: Tensor,
    blocks: Vec<BlockWeights>,
    final_g: Tensor,
    final_b: Tensor,
}

impl TextEncoder {
    /// Frozen weights fully determined by `vocab_seed`.
    pub fn new(config: TextConfig, vocab_seed: u64) -> TextEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(vocab_seed);
        let std = 0.02;
        let embed = trunc_normal_frozen(&mut rng, &[config.vocab, config.width], std);
        let pos = trunc_normal_frozen(&mut rng, &[config.max_tokens, config.width], std);
        let hidden = ((config.width as f64) * config.mlp_ratio).round() as usize;
        let blocks = (0..config.depth)
            .map(|_| block_weights_init(&mut rng, config.width, hidden))
            .collect();
        TextEncoder {
            final_g: Tensor::ones(&[config.width]),
            final_b: Tensor::zeros(&[config.width]),
            config,
            embed,
            pos,
            blocks,
        }
    }

    /// Unit-norm embedding of `caption` as a `[width]` tensor.
    pub fn encode(&self, caption: &str) -> Result<Tensor> {
        if caption.trim().is_empty() {
            return Err(Error::Input("empty caption".to_string()));
        }
        let mut ids = tokenize(caption, self.config.vocab);
        if ids.is_empty() {
            return Err(Error::Input(format!(
                "caption `{caption}` has no alphanumeric tokens"
            )));
        }
        ids.truncate(self.config.max_tokens);
        let (t, e) = (ids.len(), self.config.width);
        let mut data = Vec::with_capacity(t * e);
        for (i, &id) in ids.iter().enumerate() {
            let row = &self.embed.data()[id * e..(id + 1) * e];
            let pos = &self.pos.data()[i * e..(i + 1) * e];
            data.extend(row.iter().zip(pos).map(|(a, b)| a + b));
        }
        let mut x = Tensor::from_vec(&[1, t, e], data)?;
        for bw in &self.blocks {
            x = block_forward(&x, bw, self.config.heads, None)?;
        }
        let x = ops::layer_norm(&x, &self.final_g, &self.final_b, LN_EPS)?;
        let pooled = ops::mean_axis(&x, 1, false)?; // [1, E]
        let flat = ops::reshape(&pooled, &[e])?;
        let norm = flat.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Numeric("zero-norm text embedding".to_string()));
        }
        ops::scale(&flat, 1.0 / norm)
    }
}

fn block_weights_init(rng: &mut ChaCha8Rng, width: usize, hidden: usize) -> BlockWeights {
    // same layout as the vision blocks; frozen
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

/// Cosine similarity of two equal-length embeddings.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

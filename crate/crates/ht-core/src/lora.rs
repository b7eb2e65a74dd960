//! LoRA baseline: low-rank updates to the four attention projections of
//! every block. The frozen weight is never touched; the effective
//! projection `W + (alpha/r) * A @ B` is built as a graph expression so only
//! `A` and `B` receive gradients.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::init::trunc_normal_param;
use crate::ops;
use crate::tensor::Tensor;
use crate::vit::{ProjSet, ViTWeights};

#[derive(Debug, Clone, Copy)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl LoraConfig {
    pub fn new(rank: usize) -> LoraConfig {
        // unit scale: alpha = r
        LoraConfig {
            rank,
            alpha: rank as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("lora rank must be >= 1".to_string()));
        }
        Ok(())
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Low-rank pair for one projection matrix.
#[derive(Debug, Clone)]
pub struct LoraPair {
    pub a: Tensor, // D x r
    pub b: Tensor, // r x D
}

impl LoraPair {
    fn init(rng: &mut ChaCha8Rng, width: usize, rank: usize) -> LoraPair {
        LoraPair {
            a: trunc_normal_param(rng, &[width, rank], 0.02),
            // zero so the adapted forward starts at the frozen baseline
            b: Tensor::zeros(&[rank, width]).to_param(),
        }
    }
}

/// Per-block pairs for the query/key/value/output projections.
#[derive(Debug, Clone)]
pub struct LoraBlock {
    pub q: LoraPair,
    pub k: LoraPair,
    pub v: LoraPair,
    pub o: LoraPair,
}

#[derive(Debug, Clone)]
pub struct LoraParams {
    pub config: LoraConfig,
    pub blocks: Vec<LoraBlock>,
}

/// Build LoRA parameters for every block of `weights`.
pub fn lora_attach(weights: &ViTWeights, rank: usize, alpha: f64) -> Result<LoraParams> {
    let config = LoraConfig { rank, alpha };
    config.validate()?;
    let width = weights.config.width;
    let mut rng = rand::SeedableRng::seed_from_u64(0x6c6f_7261);
    let blocks = (0..weights.config.depth)
        .map(|_| LoraBlock {
            q: LoraPair::init(&mut rng, width, rank),
            k: LoraPair::init(&mut rng, width, rank),
            v: LoraPair::init(&mut rng, width, rank),
            o: LoraPair::init(&mut rng, width, rank),
        })
        .collect();
    Ok(LoraParams { config, blocks })
}

impl LoraParams {
    /// Effective projections for block `i` as graph expressions.
    pub fn effective(&self, weights: &ViTWeights, i: usize) -> Result<ProjSet> {
        let block = self
            .blocks
            .get(i)
            .ok_or_else(|| Error::Config(format!("no lora block {i}")))?;
        let bw = &weights.blocks[i];
        let eff = |frozen: &Tensor, pair: &LoraPair| -> Result<Tensor> {
            let delta = ops::matmul(&pair.a, &pair.b)?;
            ops::add(frozen, &ops::scale(&delta, self.config.scaling())?)
        };
        Ok(ProjSet {
            wq: eff(&bw.wq, &block.q)?,
            wk: eff(&bw.wk, &block.k)?,
            wv: eff(&bw.wv, &block.v)?,
            wo: eff(&bw.wo, &block.o)?,
        })
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for (proj, pair) in [("q", &b.q), ("k", &b.k), ("v", &b.v), ("o", &b.o)] {
                out.push((format!("block{i}.{proj}.a"), &pair.a));
                out.push((format!("block{i}.{proj}.b"), &pair.b));
            }
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (proj, pair) in [
                ("q", &mut b.q),
                ("k", &mut b.k),
                ("v", &mut b.v),
                ("o", &mut b.o),
            ] {
                out.push((format!("block{i}.{proj}.a"), &mut pair.a));
                out.push((format!("block{i}.{proj}.b"), &mut pair.b));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Closed-form count: 4 projections x 2 matrices x (D*r) x depth.
pub fn lora_param_count(width: usize, rank: usize, depth: usize) -> usize {
    4 * 2 * width * rank * depth
}

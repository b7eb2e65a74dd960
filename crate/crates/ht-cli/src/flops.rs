//! Analytic multiply-add accounting.
//!
//! Conventions: one multiply-add counts as 2 flops; linear layers cost
//! `2*m*n` per position; attention adds `2*N^2*D` for scores and the same
//! for the value mix; a depth-wise convolution costs `2*k^2` per output
//! element, a point-wise one `2*C_in` per output element; each 2D real FFT
//! or inverse costs `5*H*W*log2(H*W)` per channel. Elementwise work
//! (norms, activations, residual scaling) is excluded. Counts are for
//! batch size 1; scale linearly for larger batches.

use ht_core::adapter::HTConfig;
use ht_core::error::Result;
use ht_core::heads::HeadConfig;
use ht_core::vit::ViTConfig;
use ht_train::{AdapterKind, ModelDesc};

/// One linear map applied at `positions` positions: 2*m*n each.
pub fn linear_flops(m: usize, n: usize, positions: usize) -> u64 {
    2 * m as u64 * n as u64 * positions as u64
}

/// Frozen encoder cost per image.
pub fn vit_backbone_flops(cfg: &ViTConfig) -> u64 {
    let n = cfg.tokens();
    let d = cfg.width;
    let hidden = cfg.mlp_hidden();
    let patch = linear_flops(cfg.patch_dim(), d, n);
    let per_block = 4 * linear_flops(d, d, n)           // q, k, v, o
        + 2 * (2 * (n as u64) * (n as u64) * d as u64)  // scores + value mix
        + linear_flops(d, hidden, n)
        + linear_flops(hidden, d, n);
    patch + cfg.depth as u64 * per_block
}

/// One adapter layer per image.
pub fn ht_layer_flops(vit: &ViTConfig, ht: &HTConfig) -> u64 {
    let n = vit.tokens();
    let side = vit.grid();
    let d = ht.bottleneck;
    let h = ht.squeeze;
    let hw = (side * side) as u64;
    let fft = {
        let per_channel = 5.0 * hw as f64 * (hw as f64).log2();
        (2.0 * per_channel) as u64 * d as u64 // forward + inverse
    };
    let dw: u64 = ht
        .kernels
        .iter()
        .map(|k| 2 * (k * k) as u64 * d as u64 * hw)
        .sum();
    let pw = 2 * (d * d) as u64 * hw;
    let squeeze = linear_flops(d, h, 1) + linear_flops(h, 3, 1);
    linear_flops(vit.width, d, n) // down projection
        + fft
        + dw
        + pw
        + squeeze
        + linear_flops(d, vit.width, n) // up projection
}

/// Full adapter stack per image.
pub fn ht_stack_flops(vit: &ViTConfig, ht: &HTConfig) -> u64 {
    vit.depth as u64 * ht_layer_flops(vit, ht)
}

/// LoRA overhead per image: materializing `A @ B` plus the rank-update add
/// for the four projections of every block.
pub fn lora_flops(vit: &ViTConfig, rank: usize) -> u64 {
    let d = vit.width as u64;
    let per_proj = 2 * d * rank as u64 * d;
    vit.depth as u64 * 4 * per_proj
}

/// Aggregation + task heads per image.
pub fn heads_flops(vit: &ViTConfig, heads: &HeadConfig) -> u64 {
    let n = vit.tokens();
    let r = heads.reduced;
    let taps = heads.tap_indices.len() as u64;
    let per_tap = linear_flops(vit.width, r, n) + linear_flops(r, r, n);
    let out = heads.image_size as u64 * heads.image_size as u64;
    let upsample = 8 * r as u64 * out; // 4 corner taps, one madd each
    let seg = 2 * (r * heads.num_classes) as u64 * out;
    let cls = linear_flops(r, heads.cls_hidden, 1) + linear_flops(heads.cls_hidden, heads.num_classes, 1);
    taps * per_tap + upsample + seg + cls
}

/// Per-image encoder cost (backbone + adaptation) for a batch of `batch`.
pub fn estimate_flops(desc: &ModelDesc, batch: usize) -> Result<u64> {
    let backbone = vit_backbone_flops(&desc.vit);
    let adaptation = match &desc.adapter {
        AdapterKind::Frozen => 0,
        AdapterKind::Ht {
            bottleneck,
            squeeze,
            dropout,
        } => {
            let mut cfg = HTConfig::new(desc.vit.width, *bottleneck, *squeeze);
            cfg.dropout = *dropout;
            cfg.validate()?;
            ht_stack_flops(&desc.vit, &cfg)
        }
        AdapterKind::Lora { rank, .. } => lora_flops(&desc.vit, *rank),
    };
    Ok(batch as u64 * (backbone + adaptation))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_linear_layer_on_one_token() {
        assert_eq!(linear_flops(100, 50, 1), 2 * 100 * 50);
    }

    #[test]
    fn doubling_batch_doubles_count() {
        let desc = ModelDesc::toy(AdapterKind::Ht {
            bottleneck: 16,
            squeeze: 8,
            dropout: 0.1,
        });
        let one = estimate_flops(&desc, 1).unwrap();
        let two = estimate_flops(&desc, 2).unwrap();
        assert_eq!(two, 2 * one);
    }

    #[test]
    fn paper_dim_adapter_overhead_below_two_percent() {
        let vit = ViTConfig::paper_dims();
        let ht = HTConfig::paper_dims();
        let backbone = vit_backbone_flops(&vit);
        let adapter = ht_stack_flops(&vit, &ht);
        let overhead = adapter as f64 / backbone as f64;
        assert!(
            overhead <= 0.02,
            "adapter overhead {:.3}% exceeds 2%",
            overhead * 100.0
        );
        assert!(overhead > 0.001, "overhead {overhead} suspiciously low");
    }
}

//! Tensor autodiff core plus the model stack built on it: a frozen toy
//! vision-transformer/text-encoder pair, the hybrid-tuning adapter with its
//! frequency-filtering and noise-estimation modules, a LoRA baseline, and
//! the segmentation/classification heads.

pub mod adapter;
pub mod error;
pub mod graph;
pub mod heads;
pub mod init;
pub mod lora;
pub mod model;
pub mod ops;
pub mod registry;
pub mod tensor;
pub mod tensor_io;
pub mod text;
pub mod vit;

pub use error::{Error, Result};
pub use graph::{backward, finite_diff_grad, grad_rel_error, Gradients};
pub use tensor::{Precision, Tensor};

/// Forward-pass mode. Training mode carries a step seed from which every
/// dropout site derives its own deterministic mask.
#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

impl Mode {
    pub fn training(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }

    /// Per-site seed: splitmix64 of the step seed xor the site id.
    pub fn site_seed(&self, site: u64) -> u64 {
        let base = match self {
            Mode::Eval => 0,
            Mode::Train { seed } => *seed,
        };
        let mut z = base ^ site.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

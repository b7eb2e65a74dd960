//! Training: loss functions, AdamW with a cosine schedule, deterministic
//! dataset splitting and ratio-based few-shot sampling, and the two
//! training loops (contrastive fine-tuning, supervised downstream).

pub mod config;
pub mod describe;
pub mod loops;
pub mod loss;
pub mod optim;
pub mod split;

pub use config::{SplitSpec, TrainConfig};
pub use describe::{AdapterKind, ModelDesc};
pub use loops::{
    eval_cls, eval_seg, rebuild_downstream, render_trace, run_downstream, run_finetune,
    DownstreamResult, FinetuneResult, Sample, Task, TraceRow,
};
pub use loss::{dice_ce_loss, focal_loss, info_nce};
pub use optim::{cosine_lr, AdamW};
pub use split::{fewshot_sample, split_dataset};

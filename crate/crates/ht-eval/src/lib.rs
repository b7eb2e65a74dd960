//! Evaluation: overlap and boundary-distance segmentation metrics,
//! threshold and ranking classification metrics, prompt-ensemble zero-shot
//! scoring, paired t-tests, and the leave-one-domain-out protocol runner.
//! All functions are pure over immutable inputs.

pub mod cls;
pub mod protocol;
pub mod seg;
pub mod stats;
pub mod zeroshot;

pub use cls::{cls_metrics, ClsReport};
pub use protocol::{cross_dataset_run, CrossAggregates, CrossMatrix, MetricRow};
pub use seg::{seg_metrics, Mask, SegEntry, SegReport};
pub use stats::{paired_t_test, TTest};
pub use zeroshot::{zero_shot_classify, PromptBank};

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

//! The two training loops.
//!
//! Contrastive fine-tuning aligns pooled image embeddings with frozen text
//! embeddings; supervised downstream training drives the segmentation or
//! classification head (plus any adapters) on labeled samples. Both loops
//! are fully seed-deterministic, never touch frozen backbone weights, and
//! keep the best-validation checkpoint.

use ht_core::error::{Error, Result};
use ht_core::graph::backward;
use ht_core::heads::{aggregate, cls_forward, seg_forward, HeadParams};
use ht_core::model::{ImageProjection, Model};
use ht_core::ops;
use ht_core::tensor::Tensor;
use ht_core::tensor_io::Checkpoint;
use ht_core::text::TextEncoder;
use ht_core::Mode;
use ht_eval::cls::cls_metrics;
use ht_eval::seg::{seg_metrics, Mask, SegReport};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{SplitSpec, TrainConfig};
use crate::describe::ModelDesc;
use crate::loss::{dice_ce_loss, focal_loss, info_nce};
use crate::optim::{cosine_lr, AdamW};
use crate::split::split_dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Seg,
    Cls,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Seg => "seg",
            Task::Cls => "cls",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "seg" => Ok(Task::Seg),
            "cls" => Ok(Task::Cls),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// One labeled sample; segmentation needs `mask`, classification `label`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor,
    pub mask: Option<Mask>,
    pub label: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TraceRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub metric: Option<f64>,
}

/// CSV rows `epoch,split,loss,metric`.
pub fn render_trace(rows: &[TraceRow]) -> String {
    let mut out = String::from("epoch,split,loss,metric\n");
    for r in rows {
        let metric = r.metric.map(|m| format!("{m:.6}")).unwrap_or_default();
        out.push_str(&format!("{},{},{:.6},{}\n", r.epoch, r.split, r.loss, metric));
    }
    out
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stack `[1, 1, S, S]` images into one `[B, 1, S, S]` batch.
fn stack_images(images: &[&Tensor]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Input("empty image batch".to_string()))?;
    let s = first.shape().to_vec();
    let mut data = Vec::with_capacity(images.len() * first.numel());
    for img in images {
        if img.shape() != s {
            return Err(Error::Dimension(format!(
                "batch mixes image shapes {:?} and {:?}",
                s,
                img.shape()
            )));
        }
        data.extend_from_slice(img.data());
    }
    let mut shape = s;
    shape[0] = images.len();
    Tensor::from_vec(&shape, data)
}

pub struct FinetuneResult {
    pub trace: Vec<TraceRow>,
    pub checkpoint: Checkpoint,
    pub first_train_loss: f64,
    pub final_train_loss: f64,
}

fn contrastive_batch_loss(
    model: &Model,
    proj: &ImageProjection,
    images: &Tensor,
    txt: &Tensor,
    tau: f64,
    mode: Mode,
) -> Result<Tensor> {
    let taps = model.forward(images, mode)?;
    let emb = proj.embed(&taps.final_tokens)?;
    info_nce(&emb, txt, tau)
}

/// Contrastive fine-tuning over (image, caption) pairs. Trains the
/// adaptation plus the image projection; the text tower and backbone stay
/// frozen. The corpus is split 9:1 into train/validation.
pub fn run_finetune(
    corpus: &[(Tensor, String)],
    model: &mut Model,
    proj: &mut ImageProjection,
    encoder: &TextEncoder,
    cfg: &TrainConfig,
    seed: u64,
    desc: &ModelDesc,
) -> Result<FinetuneResult> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Input("empty fine-tuning corpus".to_string()));
    }
    let text_embs: Result<Vec<Tensor>> = corpus
        .iter()
        .map(|(_, caption)| encoder.encode(caption))
        .collect();
    let text_embs = text_embs?;
    let e = encoder.config.width;

    let (train_idx, val_idx, _) =
        split_dataset(corpus.len(), None, &SplitSpec::new(0.9, 0.1, 0.0, seed))?;
    let mut opt = AdamW::new(cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay);
    let mut trace = Vec::new();
    let mut first_train_loss = f64::NAN;
    let mut final_train_loss = f64::NAN;

    let batch_txt = |idx: &[usize]| -> Result<Tensor> {
        let mut data = Vec::with_capacity(idx.len() * e);
        for &i in idx {
            data.extend_from_slice(text_embs[i].data());
        }
        Tensor::from_vec(&[idx.len(), e], data)
    };

    for epoch in 0..cfg.epochs_finetune {
        let lr = cosine_lr(epoch, cfg.epochs_finetune.max(1), cfg.base_lr, 0.0)?;
        let mut order = train_idx.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, 0xe90c, epoch as u64)));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let images: Vec<&Tensor> = chunk.iter().map(|&i| &corpus[i].0).collect();
            let batch = stack_images(&images)?;
            let txt = batch_txt(chunk)?;
            let mode = Mode::Train {
                seed: mix(seed, epoch as u64, step as u64),
            };
            let loss = contrastive_batch_loss(model, proj, &batch, &txt, cfg.tau, mode)?;
            let grads = backward(&loss, &Tensor::ones(&[1]))?;
            let mut params = model.trainable_mut();
            params.extend(proj.named_mut());
            opt.step(&mut params, &grads, lr)?;
            epoch_loss += loss.item()?;
            batches += 1;
        }
        let train_loss = epoch_loss / batches.max(1) as f64;
        if epoch == 0 {
            first_train_loss = train_loss;
        }
        final_train_loss = train_loss;
        trace.push(TraceRow {
            epoch,
            split: "train",
            loss: train_loss,
            metric: None,
        });
        if !val_idx.is_empty() {
            let images: Vec<&Tensor> = val_idx.iter().map(|&i| &corpus[i].0).collect();
            let batch = stack_images(&images)?;
            let txt = batch_txt(&val_idx)?;
            let loss = contrastive_batch_loss(model, proj, &batch, &txt, cfg.tau, Mode::Eval)?;
            trace.push(TraceRow {
                epoch,
                split: "val",
                loss: loss.item()?,
                metric: None,
            });
        }
    }

    let mut ck = Checkpoint::new("finetune");
    desc.write_meta(&mut ck);
    ck.set_meta("embed_width", e);
    ck.set_meta("epochs", cfg.epochs_finetune);
    for (name, t) in model.trainable() {
        ck.push(&format!("adaptation.{name}"), t);
    }
    for (name, t) in proj.named() {
        ck.push(&name, t);
    }
    Ok(FinetuneResult {
        trace,
        checkpoint: ck,
        first_train_loss,
        final_train_loss,
    })
}

/// Per-sample segmentation evaluation (argmax foreground vs ground truth).
pub fn eval_seg(
    model: &Model,
    heads: &HeadParams,
    samples: &[Sample],
    batch_size: usize,
) -> Result<SegReport> {
    let mut entries = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let images: Vec<&Tensor> = chunk.iter().map(|s| &s.image).collect();
        let batch = stack_images(&images)?;
        let taps = model.forward(&batch, Mode::Eval)?;
        let logits = seg_forward(&aggregate(&taps, heads)?, heads)?;
        let (b, c, h, w) = (
            logits.shape()[0],
            logits.shape()[1],
            logits.shape()[2],
            logits.shape()[3],
        );
        for (bi, sample) in chunk.iter().enumerate() {
            let gt = sample.mask.as_ref().ok_or_else(|| {
                Error::Config("segmentation evaluation on a sample without a mask".to_string())
            })?;
            let mut pred = vec![false; h * w];
            let plane = |cls: usize, p: usize| logits.data()[(bi * c + cls) * h * w + p];
            for p in 0..h * w {
                pred[p] = plane(1, p) > plane(0, p);
            }
            let _ = b;
            entries.push(seg_metrics(&Mask::new(h, w, pred)?, gt)?);
        }
    }
    Ok(SegReport::new(entries))
}

/// Positive-class scores and metrics for classification samples.
pub fn eval_cls(
    model: &Model,
    heads: &HeadParams,
    samples: &[Sample],
    batch_size: usize,
) -> Result<(ht_eval::ClsReport, Vec<f64>)> {
    let mut scores = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let images: Vec<&Tensor> = chunk.iter().map(|s| &s.image).collect();
        let batch = stack_images(&images)?;
        let taps = model.forward(&batch, Mode::Eval)?;
        let logits = cls_forward(&aggregate(&taps, heads)?, heads, Mode::Eval)?;
        let probs = ops::softmax_axis(&logits, 1)?;
        let c = probs.shape()[1];
        for (bi, sample) in chunk.iter().enumerate() {
            let label = sample.label.ok_or_else(|| {
                Error::Config("classification evaluation on an unlabeled sample".to_string())
            })?;
            scores.push(probs.data()[bi * c + 1]);
            labels.push(label);
        }
    }
    let report = cls_metrics(&scores, &labels)?;
    Ok((report, scores))
}

pub struct DownstreamResult {
    pub trace: Vec<TraceRow>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub checkpoint: Checkpoint,
}

/// Supervised downstream training. Validation runs after every epoch; the
/// parameters of the best epoch (Dice for segmentation, AUC for
/// classification) are the ones serialized.
#[allow(clippy::too_many_arguments)]
pub fn run_downstream(
    train: &[Sample],
    val: &[Sample],
    model: &mut Model,
    heads: &mut HeadParams,
    task: Task,
    cfg: &TrainConfig,
    seed: u64,
    desc: &ModelDesc,
) -> Result<DownstreamResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("empty training set".to_string()));
    }
    for (what, samples) in [("train", train), ("val", val)] {
        for s in samples {
            match task {
                Task::Seg if s.mask.is_none() => {
                    return Err(Error::Config(format!(
                        "segmentation run but a {what} sample has no mask"
                    )))
                }
                Task::Cls if s.label.is_none() => {
                    return Err(Error::Config(format!(
                        "classification run but a {what} sample has no label"
                    )))
                }
                _ => {}
            }
        }
    }

    let mut opt = AdamW::new(cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay);
    let mut trace = Vec::new();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_tensors: Vec<(String, Tensor)> = snapshot(model, heads);

    for epoch in 0..cfg.epochs_downstream {
        let lr = cosine_lr(epoch, cfg.epochs_downstream.max(1), cfg.base_lr, 0.0)?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, 0xd0c5, epoch as u64)));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let images: Vec<&Tensor> = chunk.iter().map(|&i| &train[i].image).collect();
            let batch = stack_images(&images)?;
            let mode = Mode::Train {
                seed: mix(seed, epoch as u64, step as u64),
            };
            let taps = model.forward(&batch, mode)?;
            let agg = aggregate(&taps, heads)?;
            let loss = match task {
                Task::Seg => {
                    let logits = seg_forward(&agg, heads)?;
                    let mut labels = Vec::new();
                    for &i in chunk {
                        let m = train[i].mask.as_ref().expect("validated");
                        labels.extend(m.data.iter().map(|b| usize::from(*b)));
                    }
                    dice_ce_loss(&logits, &labels, (cfg.dice_weight, cfg.ce_weight))?
                }
                Task::Cls => {
                    let logits = cls_forward(&agg, heads, mode)?;
                    let labels: Vec<usize> =
                        chunk.iter().map(|&i| train[i].label.expect("validated")).collect();
                    focal_loss(&logits, &labels, cfg.focal_alpha, cfg.focal_gamma)?
                }
            };
            let grads = backward(&loss, &Tensor::ones(&[1]))?;
            let mut params = model.trainable_mut();
            params.extend(heads.named_mut());
            opt.step(&mut params, &grads, lr)?;
            epoch_loss += loss.item()?;
            batches += 1;
        }
        trace.push(TraceRow {
            epoch,
            split: "train",
            loss: epoch_loss / batches.max(1) as f64,
            metric: None,
        });

        if !val.is_empty() {
            let (val_loss, metric) = match task {
                Task::Seg => {
                    let report = eval_seg(model, heads, val, cfg.batch_size)?;
                    (f64::NAN, report.mean_dice())
                }
                Task::Cls => {
                    let (report, _) = eval_cls(model, heads, val, cfg.batch_size)?;
                    (f64::NAN, report.auc)
                }
            };
            trace.push(TraceRow {
                epoch,
                split: "val",
                loss: val_loss,
                metric: Some(metric),
            });
            if metric > best_metric {
                best_metric = metric;
                best_epoch = epoch;
                best_tensors = snapshot(model, heads);
            }
        }
    }
    if val.is_empty() {
        best_tensors = snapshot(model, heads);
        best_epoch = cfg.epochs_downstream.saturating_sub(1);
        best_metric = f64::NAN;
    }

    let mut ck = Checkpoint::new("downstream");
    desc.write_meta(&mut ck);
    ck.set_meta("task", task.as_str());
    ck.set_meta("best_epoch", best_epoch);
    ck.set_meta("best_metric", best_metric);
    write_head_meta(&mut ck, heads);
    for (name, t) in &best_tensors {
        ck.push(name, t);
    }
    Ok(DownstreamResult {
        trace,
        best_epoch,
        best_metric,
        checkpoint: ck,
    })
}

fn snapshot(model: &Model, heads: &HeadParams) -> Vec<(String, Tensor)> {
    let mut out: Vec<(String, Tensor)> = model
        .trainable()
        .into_iter()
        .map(|(n, t)| (format!("adaptation.{n}"), t.detach()))
        .collect();
    out.extend(
        heads
            .named()
            .into_iter()
            .map(|(n, t)| (format!("heads.{n}"), t.detach())),
    );
    out
}

fn write_head_meta(ck: &mut Checkpoint, heads: &HeadParams) {
    ck.set_meta("head_reduced", heads.config.reduced);
    ck.set_meta("head_num_classes", heads.config.num_classes);
    ck.set_meta("head_cls_hidden", heads.config.cls_hidden);
    ck.set_meta("head_dropout", heads.config.dropout);
    ck.set_meta("head_image_size", heads.config.image_size);
}

/// Rebuild (model, heads, task) from a downstream checkpoint.
pub fn rebuild_downstream(ck: &Checkpoint) -> Result<(ModelDesc, Model, HeadParams, Task)> {
    let desc = ModelDesc::read_meta(ck)?;
    let mut model = desc.build()?;
    for (name, slot) in model.trainable_mut() {
        let stored = ck.tensor(&format!("adaptation.{name}"))?;
        *slot = stored.to_param();
    }
    let head_cfg = ht_core::heads::HeadConfig {
        backbone_width: desc.vit.width,
        tap_indices: desc.vit.tap_indices.clone(),
        reduced: ck.meta_parsed("head_reduced")?,
        num_classes: ck.meta_parsed("head_num_classes")?,
        cls_hidden: ck.meta_parsed("head_cls_hidden")?,
        dropout: ck.meta_parsed("head_dropout")?,
        image_size: ck.meta_parsed("head_image_size")?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut heads = HeadParams::init(&head_cfg, &mut rng)?;
    for (name, slot) in heads.named_mut() {
        let stored = ck.tensor(&format!("heads.{name}"))?;
        *slot = stored.to_param();
    }
    let task = Task::parse(
        ck.meta("task")
            .ok_or_else(|| Error::Parse("checkpoint missing task".to_string()))?,
    )?;
    Ok((desc, model, heads, task))
}

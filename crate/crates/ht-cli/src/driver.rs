//! Command implementations shared by the binary and the test suites.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ht_core::error::{Error, Result};
use ht_core::heads::{HeadConfig, HeadParams};
use ht_core::model::{Adaptation, ImageProjection};
use ht_core::tensor::Tensor;
use ht_core::tensor_io::Checkpoint;
use ht_core::text::{TextConfig, TextEncoder};
use ht_core::vit::ViTConfig;
use ht_core::Mode;
use ht_eval::seg::Mask;
use ht_eval::zeroshot::{zero_shot_classify, PromptBank};
use ht_eval::{cls_metrics, cross_dataset_run, mean_std, CrossMatrix, MetricRow};
use ht_phantom::dataset::{read_dataset, write_dataset, LoadedSample, Split};
use ht_phantom::{gen_dataset, GenConfig};
use ht_train::{
    eval_cls, eval_seg, fewshot_sample, rebuild_downstream, render_trace, run_downstream,
    run_finetune, split_dataset, AdapterKind, ModelDesc, Sample, SplitSpec, Task, TrainConfig,
};

use crate::analysis::{bench_pair, format_mean_std, spectral_report, LatencyReport};
use crate::flops;
use crate::reportio::{ensure_dir, write_csv, write_metric_csv, write_summary};

/// Geometry and adapter flags shared by the training-style commands.
#[derive(Debug, Clone)]
pub struct ModelArgs {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub patch: usize,
    pub image_size: usize,
    pub adapter: String,
    pub bottleneck: usize,
    pub squeeze: usize,
    pub lora_rank: usize,
    pub reduced: usize,
    pub cls_hidden: usize,
}

impl Default for ModelArgs {
    fn default() -> ModelArgs {
        ModelArgs {
            depth: 4,
            width: 64,
            heads: 4,
            mlp_ratio: 2.0,
            patch: 16,
            image_size: 224,
            adapter: "ht".to_string(),
            bottleneck: 16,
            squeeze: 8,
            lora_rank: 16,
            reduced: 64,
            cls_hidden: 256,
        }
    }
}

impl ModelArgs {
    pub fn desc(&self, seed: u64) -> Result<ModelDesc> {
        let mut vit = ViTConfig::sized(self.depth, self.width, self.heads, self.mlp_ratio);
        vit.image_size = self.image_size;
        vit.patch_size = self.patch;
        vit.tap_indices = ht_core::vit::default_tap_indices(self.depth);
        vit.validate()?;
        let adapter = match self.adapter.as_str() {
            "none" | "frozen" => AdapterKind::Frozen,
            "ht" => AdapterKind::Ht {
                bottleneck: self.bottleneck,
                squeeze: self.squeeze,
                dropout: 0.1,
            },
            "lora" => AdapterKind::Lora {
                rank: self.lora_rank,
                alpha: self.lora_rank as f64,
            },
            other => return Err(Error::Config(format!("unknown adapter `{other}`"))),
        };
        Ok(ModelDesc {
            vit,
            backbone_seed: mix(seed, 0xbac0),
            adapter,
            adapter_seed: mix(seed, 0xadaf),
        })
    }

    pub fn head_config(&self, desc: &ModelDesc, num_classes: usize) -> HeadConfig {
        let mut cfg = HeadConfig::new(desc.vit.width, desc.vit.tap_indices.clone(), num_classes);
        cfg.reduced = self.reduced;
        cfg.cls_hidden = self.cls_hidden;
        cfg.image_size = desc.vit.image_size;
        cfg
    }
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Samples of one dataset grouped by split, plus captions for fine-tuning.
pub struct LoadedSets {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub train_captions: Vec<String>,
    pub val_captions: Vec<String>,
    pub image_size: usize,
}

fn to_sample(s: &LoadedSample) -> Sample {
    Sample {
        image: s.image_tensor(),
        mask: Some(
            Mask::new(s.height, s.width, s.mask.clone()).expect("mask dims match image"),
        ),
        label: Some(s.label.index()),
    }
}

pub fn load_sets(dir: &Path) -> Result<LoadedSets> {
    let (_, samples) = read_dataset(dir)?;
    if samples.is_empty() {
        return Err(Error::Input(format!("{}: empty dataset", dir.display())));
    }
    let image_size = samples[0].height;
    let mut sets = LoadedSets {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        train_captions: Vec::new(),
        val_captions: Vec::new(),
        image_size,
    };
    for s in &samples {
        let sample = to_sample(s);
        match s.split {
            Split::Train => {
                sets.train.push(sample);
                sets.train_captions.push(s.caption.clone());
            }
            Split::Val => {
                sets.val.push(sample);
                sets.val_captions.push(s.caption.clone());
            }
            Split::Test => sets.test.push(sample),
        }
    }
    Ok(sets)
}

/// `gen-data`: synthesize a phantom dataset with stratified 8:1:1 splits.
pub fn cmd_gen_data(out: &Path, domain: &str, n: usize, seed: u64) -> Result<Vec<String>> {
    ensure_dir(out)?;
    let cfg = GenConfig::for_domain(domain)?;
    let samples = gen_dataset(&cfg, n, seed)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();
    let mut spec = SplitSpec::new(0.8, 0.1, 0.1, seed);
    spec.stratify = true;
    let (train, val, test) = split_dataset(n, Some(&labels), &spec)?;
    let mut with_split: Vec<(ht_phantom::PhantomSample, Split)> = Vec::with_capacity(n);
    for (i, s) in samples.into_iter().enumerate() {
        let split = if train.binary_search(&i).is_ok() {
            Split::Train
        } else if val.binary_search(&i).is_ok() {
            Split::Val
        } else {
            Split::Test
        };
        with_split.push((s, split));
    }
    let name = format!("phantom-{domain}");
    write_dataset(&with_split, out, &name, seed)?;
    std::fs::write(out.join("gen_config.txt"), cfg.to_kv())
        .map_err(|e| Error::Io(e.to_string()))?;
    let malignant = labels.iter().sum::<usize>();
    let lines = vec![
        format!("command: gen-data"),
        format!("domain: {domain}"),
        format!("seed: {seed}"),
        format!("samples: {n} ({malignant} malignant)"),
        format!("splits: {}/{}/{}", train.len(), val.len(), test.len()),
        format!("out: {}", out.display()),
    ];
    write_summary(out, &lines)?;
    Ok(lines)
}

fn write_trace(out: &Path, name: &str, trace: &[ht_train::TraceRow]) -> Result<()> {
    std::fs::write(out.join(name), render_trace(trace))
        .map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

/// `finetune`: contrastive adaptation over the captioned train+val splits.
pub fn cmd_finetune(
    data: &Path,
    out: &Path,
    args: &ModelArgs,
    cfg: &TrainConfig,
    seed: u64,
    text_seed: u64,
) -> Result<Vec<String>> {
    ensure_dir(out)?;
    let sets = load_sets(data)?;
    let mut args = args.clone();
    args.image_size = sets.image_size;
    let desc = args.desc(seed)?;
    let mut model = desc.build()?;
    let encoder = TextEncoder::new(TextConfig::default(), text_seed);
    let mut proj = ImageProjection::init(desc.vit.width, encoder.config.width, mix(seed, 0x4a0));
    let corpus: Vec<(Tensor, String)> = sets
        .train
        .iter()
        .zip(&sets.train_captions)
        .chain(sets.val.iter().zip(&sets.val_captions))
        .map(|(s, c)| (s.image.clone(), c.clone()))
        .collect();
    let before = model.weights.checksum();
    let result = run_finetune(&corpus, &mut model, &mut proj, &encoder, cfg, seed, &desc)?;
    if model.weights.checksum() != before {
        return Err(Error::Contract("backbone changed during fine-tuning".to_string()));
    }
    write_trace(out, "finetune_trace.csv", &result.trace)?;
    result.checkpoint.save(&out.join("finetune.ck"))?;
    let lines = vec![
        "command: finetune".to_string(),
        format!("seed: {seed}"),
        format!("corpus: {} pairs", corpus.len()),
        format!("epochs: {}", cfg.epochs_finetune),
        format!(
            "train loss: {:.6} -> {:.6}",
            result.first_train_loss, result.final_train_loss
        ),
        format!("checkpoint: {}", out.join("finetune.ck").display()),
    ];
    write_summary(out, &lines)?;
    Ok(lines)
}

/// `train-seg` / `train-cls`.
pub fn cmd_train(
    data: &Path,
    out: &Path,
    task: Task,
    args: &ModelArgs,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<String>> {
    ensure_dir(out)?;
    let sets = load_sets(data)?;
    let mut args = args.clone();
    args.image_size = sets.image_size;
    let desc = args.desc(seed)?;
    let mut model = desc.build()?;
    let head_cfg = args.head_config(&desc, 2);
    let mut heads = HeadParams::init(&head_cfg, &mut ChaCha8Rng::seed_from_u64(mix(seed, 0x6ead)))?;
    let before = model.weights.checksum();
    let result = run_downstream(
        &sets.train,
        &sets.val,
        &mut model,
        &mut heads,
        task,
        cfg,
        seed,
        &desc,
    )?;
    if model.weights.checksum() != before {
        return Err(Error::Contract("backbone changed during training".to_string()));
    }
    write_trace(out, "train_trace.csv", &result.trace)?;
    let ck_path = out.join(format!("{}.ck", task.as_str()));
    result.checkpoint.save(&ck_path)?;
    let lines = vec![
        format!("command: train-{}", task.as_str()),
        format!("adapter: {}", model.adaptation.kind()),
        format!("seed: {seed}"),
        format!(
            "samples: {} train / {} val / {} test",
            sets.train.len(),
            sets.val.len(),
            sets.test.len()
        ),
        format!("best epoch: {}", result.best_epoch),
        format!("best val metric: {:.4}", result.best_metric),
        format!("checkpoint: {}", ck_path.display()),
    ];
    write_summary(out, &lines)?;
    Ok(lines)
}

fn metric_rows_seg(report: &ht_eval::SegReport) -> Vec<(&'static str, f64, f64, usize)> {
    report.summary()
}

/// `eval`: metrics of a trained checkpoint on one split of a dataset.
pub fn cmd_eval(checkpoint: &Path, data: &Path, split: &str, out: &Path) -> Result<Vec<String>> {
    ensure_dir(out)?;
    let ck = Checkpoint::load(checkpoint)?;
    let (_, model, heads, task) = rebuild_downstream(&ck)?;
    let sets = load_sets(data)?;
    let samples = match split {
        "train" => &sets.train,
        "val" => &sets.val,
        "test" => &sets.test,
        other => return Err(Error::Config(format!("unknown split `{other}`"))),
    };
    if samples.is_empty() {
        return Err(Error::Input(format!("split `{split}` is empty")));
    }
    let mut lines = vec![
        "command: eval".to_string(),
        format!("task: {}", task.as_str()),
        format!("split: {split} ({} samples)", samples.len()),
    ];
    match task {
        Task::Seg => {
            let report = eval_seg(&model, &heads, samples, 8)?;
            write_metric_csv(&out.join("metrics.csv"), &metric_rows_seg(&report))?;
            let rows: Vec<Vec<String>> = report
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    vec![
                        i.to_string(),
                        format!("{:.4}", e.dice),
                        format!("{:.4}", e.iou),
                        format!("{:.4}", e.hd95),
                        format!("{:.4}", e.asd),
                        e.flagged.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &out.join("per_sample.csv"),
                "index,dice,iou,hd95,asd,flagged",
                &rows,
            )?;
            lines.push(format!("mean dice: {:.4}", report.mean_dice()));
        }
        Task::Cls => {
            let (report, scores) = eval_cls(&model, &heads, samples, 8)?;
            let rows: Vec<(&str, f64, f64, usize)> = report
                .summary()
                .into_iter()
                .map(|(m, v)| (m, v, 0.0, samples.len()))
                .collect();
            write_metric_csv(&out.join("metrics.csv"), &rows)?;
            let per: Vec<Vec<String>> = scores
                .iter()
                .zip(samples)
                .enumerate()
                .map(|(i, (s, sample))| {
                    vec![
                        i.to_string(),
                        sample.label.unwrap_or(0).to_string(),
                        format!("{s:.6}"),
                    ]
                })
                .collect();
            write_csv(&out.join("per_sample.csv"), "index,label,score", &per)?;
            lines.push(format!("auc: {:.4}", report.auc));
        }
    }
    write_summary(out, &lines)?;
    Ok(lines)
}

/// `zeroshot`: prompt-ensemble classification of the test split.
pub fn cmd_zeroshot(
    data: &Path,
    bank_path: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
    seed: u64,
    text_seed: u64,
) -> Result<Vec<String>> {
    ensure_dir(out)?;
    let bank_text = std::fs::read_to_string(bank_path)
        .map_err(|e| Error::Io(format!("{}: {e}", bank_path.display())))?;
    let bank = PromptBank::parse(&bank_text)?;
    let sets = load_sets(data)?;
    if sets.test.is_empty() {
        return Err(Error::Input("test split is empty".to_string()));
    }
    let encoder = TextEncoder::new(TextConfig::default(), text_seed);

    // model + projection: from a fine-tune checkpoint when given, else a
    // fresh frozen stand-in (mechanics only)
    let (model, proj) = match checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let desc = ModelDesc::read_meta(&ck)?;
            let mut model = desc.build()?;
            for (name, slot) in model.trainable_mut() {
                *slot = ck.tensor(&format!("adaptation.{name}"))?.to_param();
            }
            let mut proj =
                ImageProjection::init(desc.vit.width, encoder.config.width, mix(seed, 0x4a0));
            proj.w = ck.tensor("proj.w")?.to_param();
            proj.b = ck.tensor("proj.b")?.to_param();
            (model, proj)
        }
        None => {
            let mut args = ModelArgs::default();
            args.adapter = "none".to_string();
            args.image_size = sets.image_size;
            let desc = args.desc(seed)?;
            let model = desc.build()?;
            let proj =
                ImageProjection::init(desc.vit.width, encoder.config.width, mix(seed, 0x4a0));
            (model, proj)
        }
    };

    let mut rows = Vec::new();
    let mut scores_pos = Vec::new();
    let mut labels = Vec::new();
    let mut correct = 0usize;
    for (i, sample) in sets.test.iter().enumerate() {
        let taps = model.forward(&sample.image, Mode::Eval)?;
        let emb = proj.embed(&taps.final_tokens)?;
        let (pred, class_scores) =
            zero_shot_classify(emb.data(), &bank, |p| Ok(encoder.encode(p)?.data().to_vec()))?;
        let s_of = |name: &str| {
            class_scores
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, s)| *s)
                .ok_or_else(|| Error::Config(format!("bank lacks class `{name}`")))
        };
        let (sb, sm) = (s_of("benign")?, s_of("malignant")?);
        let label = sample.label.expect("phantom datasets are labeled");
        let pred_label = usize::from(pred == "malignant");
        correct += usize::from(pred_label == label);
        scores_pos.push(0.5 + (sm - sb) / 4.0);
        labels.push(label);
        rows.push(vec![
            i.to_string(),
            label.to_string(),
            format!("{sb:.6}"),
            format!("{sm:.6}"),
            pred,
        ]);
    }
    write_csv(
        &out.join("zeroshot_scores.csv"),
        "index,label,score_benign,score_malignant,prediction",
        &rows,
    )?;
    let report = cls_metrics(&scores_pos, &labels)?;
    let metric_rows: Vec<(&str, f64, f64, usize)> = report
        .summary()
        .into_iter()
        .map(|(m, v)| (m, v, 0.0, labels.len()))
        .collect();
    write_metric_csv(&out.join("metrics.csv"), &metric_rows)?;
    let lines = vec![
        "command: zeroshot".to_string(),
        format!("bank: {} ({} classes)", bank_path.display(), bank.classes.len()),
        format!("test samples: {}", labels.len()),
        format!("accuracy: {:.2}%", 100.0 * correct as f64 / labels.len() as f64),
        format!("auc: {:.4}", report.auc),
    ];
    write_summary(out, &lines)?;
    Ok(lines)
}

/// `fewshot`: the ratio-grid protocol on one dataset.
#[allow(clippy::too_many_arguments)]
pub fn cmd_fewshot(
    data: &Path,
    out: &Path,
    task: Task,
    ratios: &[f64],
    args: &ModelArgs,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<String>> {
    ensure_dir(out)?;
    let sets = load_sets(data)?;
    let mut args = args.clone();
    args.image_size = sets.image_size;
    let labels: Vec<usize> = sets
        .train
        .iter()
        .map(|s| s.label.expect("labeled"))
        .collect();
    let train_idx: Vec<usize> = (0..sets.train.len()).collect();
    let mut rows = Vec::new();
    let mut lines = vec![
        "command: fewshot".to_string(),
        format!("task: {}", task.as_str()),
        format!("ratios: {ratios:?}"),
    ];
    for &ratio in ratios {
        let subset_idx = fewshot_sample(&train_idx, &labels, ratio, mix(seed, (ratio * 1e4) as u64))?;
        let subset: Vec<Sample> = subset_idx.iter().map(|&i| sets.train[i].clone()).collect();
        let desc = args.desc(seed)?;
        let mut model = desc.build()?;
        let mut heads = HeadParams::init(
            &args.head_config(&desc, 2),
            &mut ChaCha8Rng::seed_from_u64(mix(seed, 0x6ead)),
        )?;
        run_downstream(&subset, &sets.val, &mut model, &mut heads, task, cfg, seed, &desc)?;
        let metric = match task {
            Task::Seg => eval_seg(&model, &heads, &sets.test, 8)?.mean_dice(),
            Task::Cls => eval_cls(&model, &heads, &sets.test, 8)?.0.auc,
        };
        lines.push(format!(
            "ratio {:.0}%: {} shots, test metric {:.4}",
            ratio * 100.0,
            subset.len(),
            metric
        ));
        rows.push(vec![
            format!("{ratio}"),
            subset.len().to_string(),
            format!("{metric:.6}"),
        ]);
    }
    write_csv(&out.join("fewshot.csv"), "ratio,shots,test_metric", &rows)?;
    write_summary(out, &lines)?;
    Ok(lines)
}

fn seg_row(report: &ht_eval::SegReport) -> MetricRow {
    let mut row = MetricRow::new();
    for (name, mean, _, _) in report.summary() {
        row.insert(name.to_string(), mean);
    }
    row
}

/// `cross-domain`: leave-one-domain-out over >= 2 dataset directories.
#[allow(clippy::too_many_arguments)]
pub fn cmd_cross_domain(
    dirs: &[PathBuf],
    out: &Path,
    task: Task,
    args: &ModelArgs,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(CrossMatrix, Vec<String>)> {
    ensure_dir(out)?;
    let mut all_sets = Vec::new();
    for d in dirs {
        all_sets.push(load_sets(d)?);
    }
    let domains: Vec<String> = dirs
        .iter()
        .map(|d| {
            d.file_name()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_else(|| d.display().to_string())
        })
        .collect();
    let mut args = args.clone();
    args.image_size = all_sets[0].image_size;
    let matrix = cross_dataset_run(&domains, |i| {
        let desc = args.desc(mix(seed, i as u64))?;
        let mut model = desc.build()?;
        let mut heads = HeadParams::init(
            &args.head_config(&desc, 2),
            &mut ChaCha8Rng::seed_from_u64(mix(seed, 0x6ead + i as u64)),
        )?;
        run_downstream(
            &all_sets[i].train,
            &all_sets[i].val,
            &mut model,
            &mut heads,
            task,
            cfg,
            mix(seed, 0x77 + i as u64),
            &desc,
        )?;
        let mut row = Vec::new();
        for sets in &all_sets {
            match task {
                Task::Seg => row.push(seg_row(&eval_seg(&model, &heads, &sets.test, 8)?)),
                Task::Cls => {
                    let (r, _) = eval_cls(&model, &heads, &sets.test, 8)?;
                    let mut m = MetricRow::new();
                    for (name, v) in r.summary() {
                        m.insert(name.to_string(), v);
                    }
                    row.push(m);
                }
            }
        }
        Ok(row)
    })?;

    let mut cell_rows = Vec::new();
    for (i, row) in matrix.cells.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            for (metric, v) in cell {
                cell_rows.push(vec![
                    domains[i].clone(),
                    domains[j].clone(),
                    metric.clone(),
                    format!("{v:.6}"),
                ]);
            }
        }
    }
    write_csv(
        &out.join("cross_matrix.csv"),
        "train_domain,eval_domain,metric,value",
        &cell_rows,
    )?;
    let mut agg_rows = Vec::new();
    let mut lines = vec![
        "command: cross-domain".to_string(),
        format!("domains: {domains:?}"),
    ];
    for metric in matrix.metric_names() {
        let agg = matrix.aggregate(&metric)?;
        agg_rows.push(vec![
            metric.clone(),
            format!("{:.6}", agg.in_domain),
            format!("{:.6}", agg.cross_domain),
            format!("{:.6}", agg.overall),
        ]);
        lines.push(format!(
            "{metric}: in-domain {:.4}, cross-domain {:.4}, overall {:.4}",
            agg.in_domain, agg.cross_domain, agg.overall
        ));
    }
    write_csv(
        &out.join("cross_aggregates.csv"),
        "metric,in_domain,cross_domain,overall",
        &agg_rows,
    )?;
    write_summary(out, &lines)?;
    Ok((matrix, lines))
}

/// `analyze-spectrum`: theta statistics, spectral energy change, and NE
/// weight profile of an HT checkpoint (or a fresh adapter stack).
pub fn cmd_analyze_spectrum(
    checkpoint: Option<&Path>,
    data: &Path,
    out: &Path,
    args: &ModelArgs,
    seed: u64,
    max_probes: usize,
) -> Result<Vec<String>> {
    ensure_dir(out)?;
    let sets = load_sets(data)?;
    let model = match checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let (_, model, _, _) = match rebuild_downstream(&ck) {
                Ok(t) => t,
                Err(_) => {
                    // fine-tune checkpoints carry no heads
                    let desc = ModelDesc::read_meta(&ck)?;
                    let mut model = desc.build()?;
                    for (name, slot) in model.trainable_mut() {
                        *slot = ck.tensor(&format!("adaptation.{name}"))?.to_param();
                    }
                    (ModelDesc::read_meta(&ck)?, model, dummy_heads()?, Task::Seg)
                }
            };
            model
        }
        None => {
            let mut args = args.clone();
            args.image_size = sets.image_size;
            args.adapter = "ht".to_string();
            args.desc(seed)?.build()?
        }
    };
    if !matches!(model.adaptation, Adaptation::Ht { .. }) {
        return Err(Error::Config(
            "spectral analysis needs an HT-adapted model".to_string(),
        ));
    }
    let probes: Vec<Tensor> = sets
        .test
        .iter()
        .chain(sets.val.iter())
        .chain(sets.train.iter())
        .take(max_probes.max(1))
        .map(|s| s.image.clone())
        .collect();
    let report = spectral_report(&model, &probes)?;

    let theta_rows: Vec<Vec<String>> = report
        .theta
        .iter()
        .enumerate()
        .map(|(i, t)| {
            vec![
                i.to_string(),
                format!("{:.6}", t.mean),
                format!("{:.6}", t.std),
                format!("{:.6}", t.min),
                format!("{:.6}", t.max),
                format_mean_std(t.mean, t.std),
            ]
        })
        .collect();
    write_csv(
        &out.join("theta_stats.csv"),
        "layer,mean,std,min,max,formatted",
        &theta_rows,
    )?;
    let energy_rows: Vec<Vec<String>> = report
        .energy_change_pct
        .iter()
        .enumerate()
        .map(|(i, e)| vec![i.to_string(), format!("{e:.6}")])
        .collect();
    write_csv(
        &out.join("energy_change.csv"),
        "layer,energy_change_pct",
        &energy_rows,
    )?;
    let ne_rows: Vec<Vec<String>> = report
        .ne_weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            vec![
                i.to_string(),
                format!("{:.6}", w[0]),
                format!("{:.6}", w[1]),
                format!("{:.6}", w[2]),
            ]
        })
        .collect();
    write_csv(&out.join("ne_profile.csv"), "layer,w3,w5,w7", &ne_rows)?;

    let grand_theta: Vec<f64> = report.theta.iter().map(|t| t.mean).collect();
    let (grand_mean, _) = mean_std(&grand_theta);
    let lines = vec![
        "command: analyze-spectrum".to_string(),
        format!("probes: {}", probes.len()),
        format!("layers: {}", report.theta.len()),
        format!("grand mean theta: {grand_mean:.6}"),
        format!(
            "mean energy change: {:.4}%",
            report.energy_change_pct.iter().sum::<f64>()
                / report.energy_change_pct.len() as f64
        ),
    ];
    write_summary(out, &lines)?;
    Ok(lines)
}

fn dummy_heads() -> Result<HeadParams> {
    HeadParams::init(
        &HeadConfig::new(64, vec![0], 2),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
}

/// `bench`: wall-clock latency of the frozen vs adapted forward.
pub fn cmd_bench(
    out: &Path,
    args: &ModelArgs,
    batch: usize,
    reps: usize,
    seed: u64,
) -> Result<(LatencyReport, LatencyReport, Vec<String>)> {
    ensure_dir(out)?;
    let mut frozen_args = args.clone();
    frozen_args.adapter = "none".to_string();
    let frozen = frozen_args.desc(seed)?.build()?;
    let adapted = args.desc(seed)?.build()?;
    let (base, full) = bench_pair(&frozen, &adapted, batch, reps)?;
    let rows = vec![
        vec![
            "frozen".to_string(),
            format!("{:.4}", base.mean_ms_per_image),
            format!("{:.4}", base.std_ms_per_image),
            format!("{:.2}", base.fps),
        ],
        vec![
            args.adapter.clone(),
            format!("{:.4}", full.mean_ms_per_image),
            format!("{:.4}", full.std_ms_per_image),
            format!("{:.2}", full.fps),
        ],
    ];
    write_csv(&out.join("bench.csv"), "model,latency_ms,std_ms,fps", &rows)?;
    let lines = vec![
        "command: bench".to_string(),
        format!("batch: {batch}, reps: {reps}"),
        format!(
            "frozen: {:.4} ms/image ({:.1} fps)",
            base.mean_ms_per_image, base.fps
        ),
        format!(
            "{}: {:.4} ms/image ({:.1} fps)",
            args.adapter, full.mean_ms_per_image, full.fps
        ),
    ];
    write_summary(out, &lines)?;
    Ok((base, full, lines))
}

/// `count-params`: closed-form and enumerated budgets.
pub fn cmd_count_params(out: &Path, preset: &str) -> Result<Vec<String>> {
    ensure_dir(out)?;
    let (vit, d, h) = match preset {
        "paper" => (ViTConfig::paper_dims(), 64usize, 16usize),
        "toy" => (ViTConfig::toy(), 16, 8),
        other => return Err(Error::Config(format!("unknown preset `{other}`"))),
    };
    let per_layer = ht_core::adapter::ht_param_count(vit.width, d, h);
    let stack = vit.depth * per_layer;
    let lora = ht_core::lora::lora_param_count(vit.width, 16, vit.depth);
    let rows = vec![
        vec!["ht_per_layer".to_string(), per_layer.to_string()],
        vec!["ht_stack".to_string(), stack.to_string()],
        vec!["lora_r16_stack".to_string(), lora.to_string()],
    ];
    write_csv(&out.join("params.csv"), "quantity,count", &rows)?;
    let lines = vec![
        "command: count-params".to_string(),
        format!("preset: {preset} (D={}, depth={}, d={d}, h={h})", vit.width, vit.depth),
        format!("adapter per layer: {per_layer}"),
        format!("adapter stack: {stack}"),
        format!("lora r=16 stack: {lora}"),
    ];
    write_summary(out, &lines)?;
    Ok(lines)
}

/// FLOP summary used by `count-params --flops` style reporting.
pub fn flops_lines(args: &ModelArgs, seed: u64) -> Result<Vec<String>> {
    let desc = args.desc(seed)?;
    let backbone = flops::vit_backbone_flops(&desc.vit);
    let total = flops::estimate_flops(&desc, 1)?;
    Ok(vec![
        format!("backbone flops: {backbone}"),
        format!("with adaptation: {total}"),
        format!(
            "overhead: {:.3}%",
            100.0 * (total.saturating_sub(backbone)) as f64 / backbone as f64
        ),
    ])
}

//! `ht` command-line tool: phantom data generation, adapter training and
//! evaluation, zero-shot and protocol runs, spectral diagnostics, and
//! efficiency accounting. Every command writes CSV outputs plus a
//! `run_summary.txt` under `--out`; errors exit nonzero with a
//! category-prefixed message.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ht_cli::driver::{self, ModelArgs};
use ht_train::{Task, TrainConfig};

#[derive(Parser)]
#[command(name = "ht", version, about = "hybrid-tuning adapter toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Training configuration file (flat key=value); defaults apply if absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for this run.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for CSVs and the run summary.
    #[arg(long, default_value = "runs/out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ModelFlags {
    /// Backbone depth (transformer blocks).
    #[arg(long, default_value_t = 4)]
    depth: usize,
    /// Backbone width D.
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Attention heads.
    #[arg(long, default_value_t = 4)]
    heads: usize,
    /// MLP expansion ratio.
    #[arg(long, default_value_t = 2.0)]
    mlp_ratio: f64,
    /// Patch size in pixels.
    #[arg(long, default_value_t = 16)]
    patch: usize,
    /// Adapter: ht | lora | none.
    #[arg(long, default_value = "ht")]
    adapter: String,
    /// Adapter bottleneck width d.
    #[arg(long, default_value_t = 16)]
    bottleneck: usize,
    /// Noise-estimation squeeze width h.
    #[arg(long, default_value_t = 8)]
    squeeze: usize,
    /// LoRA rank.
    #[arg(long, default_value_t = 16)]
    lora_rank: usize,
    /// Head reduced width.
    #[arg(long, default_value_t = 64)]
    reduced: usize,
    /// Classification MLP hidden width.
    #[arg(long, default_value_t = 256)]
    cls_hidden: usize,
}

impl ModelFlags {
    fn to_args(&self) -> ModelArgs {
        ModelArgs {
            depth: self.depth,
            width: self.width,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
            patch: self.patch,
            image_size: 224,
            adapter: self.adapter.clone(),
            bottleneck: self.bottleneck,
            squeeze: self.squeeze,
            lora_rank: self.lora_rank,
            reduced: self.reduced,
            cls_hidden: self.cls_hidden,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset with 8:1:1 splits.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Phantom domain preset: a (dense bands) or b (sparse + shadow).
        #[arg(long, default_value = "a")]
        domain: String,
        /// Number of samples.
        #[arg(long, default_value_t = 200)]
        n: usize,
    },
    /// Contrastive fine-tuning on the captioned corpus of a dataset.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        /// Dataset directory (from gen-data).
        #[arg(long)]
        data: PathBuf,
        /// Text-encoder seed.
        #[arg(long, default_value_t = 7)]
        text_seed: u64,
    },
    /// Supervised segmentation training.
    TrainSeg {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        data: PathBuf,
    },
    /// Supervised classification training.
    TrainCls {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a trained checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split: train | val | test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Prompt-ensemble zero-shot classification of the test split.
    Zeroshot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Prompt bank file.
        #[arg(long)]
        bank: PathBuf,
        /// Optional fine-tune checkpoint (adapters + projection).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        text_seed: u64,
    },
    /// Ratio-grid few-shot training/evaluation.
    Fewshot {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        data: PathBuf,
        /// Task: seg | cls.
        #[arg(long, default_value = "seg")]
        task: String,
        /// Comma-separated sampling ratios.
        #[arg(long, default_value = "0.01,0.02,0.05,0.10,0.20,0.35,0.50")]
        ratios: String,
    },
    /// Leave-one-domain-out protocol over two or more datasets.
    CrossDomain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        /// Dataset directories (repeat the flag).
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
        #[arg(long, default_value = "seg")]
        task: String,
    },
    /// Spectral diagnostics of an HT adapter stack.
    AnalyzeSpectrum {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        data: PathBuf,
        /// Trained checkpoint; a fresh adapter stack is probed if absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Probe-set size cap.
        #[arg(long, default_value_t = 16)]
        probes: usize,
    },
    /// Forward-latency benchmark (frozen vs adapted).
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 12)]
        reps: usize,
    },
    /// Parameter budgets (closed form) and FLOP overhead.
    CountParams {
        #[command(flatten)]
        common: Common,
        /// Dimension preset: paper | toy.
        #[arg(long, default_value = "paper")]
        preset: String,
    },
}

fn load_config(common: &Common) -> Result<TrainConfig, ht_core::Error> {
    match &common.config {
        None => Ok(TrainConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ht_core::Error::Io(format!("{}: {e}", path.display())))?;
            TrainConfig::parse_kv(&text)
        }
    }
}

fn parse_ratios(s: &str) -> Result<Vec<f64>, ht_core::Error> {
    s.split(',')
        .map(|r| {
            r.trim()
                .parse::<f64>()
                .map_err(|_| ht_core::Error::Config(format!("bad ratio `{r}`")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<Vec<String>, ht_core::Error> {
    match cli.command {
        Command::GenData { common, domain, n } => {
            driver::cmd_gen_data(&common.out, &domain, n, common.seed)
        }
        Command::Finetune {
            common,
            model,
            data,
            text_seed,
        } => {
            let cfg = load_config(&common)?;
            driver::cmd_finetune(&data, &common.out, &model.to_args(), &cfg, common.seed, text_seed)
        }
        Command::TrainSeg {
            common,
            model,
            data,
        } => {
            let cfg = load_config(&common)?;
            driver::cmd_train(&data, &common.out, Task::Seg, &model.to_args(), &cfg, common.seed)
        }
        Command::TrainCls {
            common,
            model,
            data,
        } => {
            let cfg = load_config(&common)?;
            driver::cmd_train(&data, &common.out, Task::Cls, &model.to_args(), &cfg, common.seed)
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            split,
        } => driver::cmd_eval(&checkpoint, &data, &split, &common.out),
        Command::Zeroshot {
            common,
            data,
            bank,
            checkpoint,
            text_seed,
        } => driver::cmd_zeroshot(
            &data,
            &bank,
            checkpoint.as_deref(),
            &common.out,
            common.seed,
            text_seed,
        ),
        Command::Fewshot {
            common,
            model,
            data,
            task,
            ratios,
        } => {
            let cfg = load_config(&common)?;
            driver::cmd_fewshot(
                &data,
                &common.out,
                Task::parse(&task)?,
                &parse_ratios(&ratios)?,
                &model.to_args(),
                &cfg,
                common.seed,
            )
        }
        Command::CrossDomain {
            common,
            model,
            data,
            task,
        } => {
            let cfg = load_config(&common)?;
            driver::cmd_cross_domain(
                &data,
                &common.out,
                Task::parse(&task)?,
                &model.to_args(),
                &cfg,
                common.seed,
            )
            .map(|(_, lines)| lines)
        }
        Command::AnalyzeSpectrum {
            common,
            model,
            data,
            checkpoint,
            probes,
        } => driver::cmd_analyze_spectrum(
            checkpoint.as_deref(),
            &data,
            &common.out,
            &model.to_args(),
            common.seed,
            probes,
        ),
        Command::Bench {
            common,
            model,
            batch,
            reps,
        } => driver::cmd_bench(&common.out, &model.to_args(), batch, reps, common.seed)
            .map(|(_, _, lines)| lines),
        Command::CountParams { common, preset } => {
            let mut lines = driver::cmd_count_params(&common.out, &preset)?;
            if preset == "paper" {
                let mut args = ModelArgs::default();
                args.depth = 12;
                args.width = 768;
                args.heads = 12;
                args.mlp_ratio = 4.0;
                args.bottleneck = 64;
                args.squeeze = 16;
                lines.extend(driver::flops_lines(&args, common.seed)?);
            }
            Ok(lines)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}

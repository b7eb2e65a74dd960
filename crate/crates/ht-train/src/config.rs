//! Training configuration with a flat key=value file format.

use ht_core::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs_finetune: usize,
    pub epochs_downstream: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    /// Loss selection: `auto` picks the task default (contrastive for
    /// fine-tuning, dice+cross-entropy for segmentation, focal for
    /// classification).
    pub loss: String,
    /// Contrastive temperature.
    pub tau: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub dice_weight: f64,
    pub ce_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs_finetune: 32,
            epochs_downstream: 200,
            base_lr: 1e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.95,
            batch_size: 32,
            seeds: vec![0, 1, 2],
            loss: "auto".to_string(),
            tau: 0.07,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            dice_weight: 0.5,
            ce_weight: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_finetune == 0 && self.epochs_downstream == 0 {
            return Err(Error::Config("all epoch counts are zero".to_string()));
        }
        for (name, v) in [
            ("base_lr", self.base_lr),
            ("weight_decay", self.weight_decay),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("tau", self.tau),
            ("focal_alpha", self.focal_alpha),
            ("dice_weight", self.dice_weight),
            ("ce_weight", self.ce_weight),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.focal_gamma < 0.0 {
            return Err(Error::Config("focal_gamma must be >= 0".to_string()));
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("betas must be < 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".to_string()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed required".to_string()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".to_string()));
        }
        if !matches!(self.loss.as_str(), "auto" | "info_nce" | "dice_ce" | "focal") {
            return Err(Error::Config(format!("unknown loss `{}`", self.loss)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        format!(
            "epochs_finetune={}\nepochs_downstream={}\nbase_lr={}\nweight_decay={}\nbeta1={}\n\
             beta2={}\nbatch_size={}\nseeds={}\nloss={}\ntau={}\nfocal_alpha={}\nfocal_gamma={}\n\
             dice_weight={}\nce_weight={}\n",
            self.epochs_finetune,
            self.epochs_downstream,
            self.base_lr,
            self.weight_decay,
            self.beta1,
            self.beta2,
            self.batch_size,
            seeds.join(","),
            self.loss,
            self.tau,
            self.focal_alpha,
            self.focal_gamma,
            self.dice_weight,
            self.ce_weight
        )
    }

    pub fn parse_kv(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("config line {} lacks `=`", lineno + 1))
            })?;
            let v = v.trim();
            let bad = |key: &str| Error::Parse(format!("bad `{key}` value `{v}`"));
            match k.trim() {
                "epochs_finetune" => {
                    cfg.epochs_finetune = v.parse().map_err(|_| bad("epochs_finetune"))?
                }
                "epochs_downstream" => {
                    cfg.epochs_downstream = v.parse().map_err(|_| bad("epochs_downstream"))?
                }
                "base_lr" => cfg.base_lr = v.parse().map_err(|_| bad("base_lr"))?,
                "weight_decay" => cfg.weight_decay = v.parse().map_err(|_| bad("weight_decay"))?,
                "beta1" => cfg.beta1 = v.parse().map_err(|_| bad("beta1"))?,
                "beta2" => cfg.beta2 = v.parse().map_err(|_| bad("beta2"))?,
                "batch_size" => cfg.batch_size = v.parse().map_err(|_| bad("batch_size"))?,
                "seeds" => {
                    cfg.seeds = v
                        .split(',')
                        .map(|s| s.trim().parse().map_err(|_| bad("seeds")))
                        .collect::<Result<Vec<u64>>>()?
                }
                "loss" => cfg.loss = v.to_string(),
                "tau" => cfg.tau = v.parse().map_err(|_| bad("tau"))?,
                "focal_alpha" => cfg.focal_alpha = v.parse().map_err(|_| bad("focal_alpha"))?,
                "focal_gamma" => cfg.focal_gamma = v.parse().map_err(|_| bad("focal_gamma"))?,
                "dice_weight" => cfg.dice_weight = v.parse().map_err(|_| bad("dice_weight"))?,
                "ce_weight" => cfg.ce_weight = v.parse().map_err(|_| bad("ce_weight"))?,
                other => return Err(Error::Parse(format!("unknown config key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Three-way split specification.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    /// (train, val, test); must sum to 1.
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    pub stratify: bool,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> SplitSpec {
        SplitSpec {
            ratios: (train, val, test),
            seed,
            stratify: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.ratios;
        if a <= 0.0 {
            return Err(Error::Config(format!("train ratio {a} must be positive")));
        }
        if b < 0.0 || c < 0.0 {
            return Err(Error::Config("negative split ratio".to_string()));
        }
        if ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {a}+{b}+{c} do not sum to 1"
            )));
        }
        Ok(())
    }
}

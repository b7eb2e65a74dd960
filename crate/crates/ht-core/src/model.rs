//! Adapted vision model: a frozen backbone plus an optional adaptation
//! (hybrid-tuning stack or LoRA), with checkpoint serialization and the
//! small trainable projection used for contrastive fine-tuning.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::{ht_forward_traced, HTConfig, HTParams, HtTrace};
use crate::error::{Error, Result};
use crate::init::trunc_normal_param;
use crate::lora::{lora_attach, LoraParams};
use crate::ops;
use crate::tensor::Tensor;
use crate::tensor_io::Checkpoint;
use crate::vit::{forward_with, TapSet, ViTWeights};
use crate::Mode;

pub enum Adaptation {
    Frozen,
    Ht {
        config: HTConfig,
        layers: Vec<HTParams>,
    },
    Lora(LoraParams),
}

impl Adaptation {
    pub fn kind(&self) -> &'static str {
        match self {
            Adaptation::Frozen => "frozen",
            Adaptation::Ht { .. } => "ht",
            Adaptation::Lora(_) => "lora",
        }
    }
}

pub struct Model {
    pub weights: Rc<ViTWeights>,
    pub adaptation: Adaptation,
}

impl Model {
    pub fn frozen(weights: Rc<ViTWeights>) -> Model {
        Model {
            weights,
            adaptation: Adaptation::Frozen,
        }
    }

    /// Append one freshly initialized hybrid-tuning adapter after every
    /// block. Fresh adapters are exact no-ops, so the adapted model equals
    /// the frozen baseline until training moves the parameters.
    pub fn attach_ht(weights: Rc<ViTWeights>, config: HTConfig, seed: u64) -> Result<Model> {
        if config.backbone_width != weights.config.width {
            return Err(Error::Config(format!(
                "adapter width {} does not match backbone width {}",
                config.backbone_width, weights.config.width
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Result<Vec<HTParams>> = (0..weights.config.depth)
            .map(|_| HTParams::init(&config, &mut rng))
            .collect();
        Ok(Model {
            weights,
            adaptation: Adaptation::Ht {
                config,
                layers: layers?,
            },
        })
    }

    /// Builds a model whose layer count must match the backbone depth.
    pub fn with_ht_layers(
        weights: Rc<ViTWeights>,
        config: HTConfig,
        layers: Vec<HTParams>,
    ) -> Result<Model> {
        if layers.len() != weights.config.depth {
            return Err(Error::Config(format!(
                "{} adapter layers for a depth-{} backbone",
                layers.len(),
                weights.config.depth
            )));
        }
        Ok(Model {
            weights,
            adaptation: Adaptation::Ht { config, layers },
        })
    }

    pub fn attach_lora(weights: Rc<ViTWeights>, rank: usize, alpha: f64) -> Result<Model> {
        let params = lora_attach(&weights, rank, alpha)?;
        Ok(Model {
            weights,
            adaptation: Adaptation::Lora(params),
        })
    }

    pub fn forward(&self, image: &Tensor, mode: Mode) -> Result<TapSet> {
        Ok(self.forward_traced(image, mode)?.0)
    }

    /// Forward pass that also captures per-layer adapter internals (empty
    /// for non-HT models).
    pub fn forward_traced(&self, image: &Tensor, mode: Mode) -> Result<(TapSet, Vec<HtTrace>)> {
        let mut traces = Vec::new();
        let taps = match &self.adaptation {
            Adaptation::Frozen => forward_with(
                image,
                &self.weights,
                &mut |_| Ok(None),
                &mut |_, x| Ok(x),
            )?,
            Adaptation::Ht { config, layers } => forward_with(
                image,
                &self.weights,
                &mut |_| Ok(None),
                &mut |i, x| {
                    let (out, trace) =
                        ht_forward_traced(&x, &layers[i], config, mode, i as u64)?;
                    traces.push(trace);
                    Ok(out)
                },
            )?,
            Adaptation::Lora(lora) => forward_with(
                image,
                &self.weights,
                &mut |i| lora.effective(&self.weights, i).map(Some),
                &mut |_, x| Ok(x),
            )?,
        };
        Ok((taps, traces))
    }

    /// Trainable adaptation tensors, stably named and ordered.
    pub fn trainable(&self) -> Vec<(String, &Tensor)> {
        match &self.adaptation {
            Adaptation::Frozen => Vec::new(),
            Adaptation::Ht { layers, .. } => layers
                .iter()
                .enumerate()
                .flat_map(|(i, l)| {
                    l.named()
                        .into_iter()
                        .map(move |(n, t)| (format!("layer{i}.{n}"), t))
                })
                .collect(),
            Adaptation::Lora(l) => l.named(),
        }
    }

    pub fn trainable_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match &mut self.adaptation {
            Adaptation::Frozen => Vec::new(),
            Adaptation::Ht { layers, .. } => layers
                .iter_mut()
                .enumerate()
                .flat_map(|(i, l)| {
                    l.named_mut()
                        .into_iter()
                        .map(move |(n, t)| (format!("layer{i}.{n}"), t))
                })
                .collect(),
            Adaptation::Lora(l) => l.named_mut(),
        }
    }

    /// (name, tensor, trainable) for every tensor in the model.
    pub fn named_all(&self) -> Vec<(String, &Tensor, bool)> {
        let mut out: Vec<(String, &Tensor, bool)> = self
            .weights
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (format!("backbone.{n}"), t, false))
            .collect();
        let kind = self.adaptation.kind();
        out.extend(
            self.trainable()
                .into_iter()
                .map(|(n, t)| (format!("{kind}.{n}"), t, true)),
        );
        out
    }

    /// Serialize the adaptation (not the frozen backbone).
    pub fn adaptation_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.adaptation.kind());
        match &self.adaptation {
            Adaptation::Frozen => {}
            Adaptation::Ht { config, layers } => {
                ck.set_meta("backbone_width", config.backbone_width);
                ck.set_meta("bottleneck", config.bottleneck);
                ck.set_meta("squeeze", config.squeeze);
                ck.set_meta("dropout", config.dropout);
                ck.set_meta("depth", layers.len());
                for (name, t) in self.trainable() {
                    ck.push(&name, t);
                }
            }
            Adaptation::Lora(l) => {
                ck.set_meta("rank", l.config.rank);
                ck.set_meta("alpha", l.config.alpha);
                for (name, t) in self.trainable() {
                    ck.push(&name, t);
                }
            }
        }
        ck
    }

    /// Restore trainable tensors from a checkpoint produced by
    /// [`Model::adaptation_checkpoint`] for a model of the same shape.
    pub fn load_adaptation(&mut self, ck: &Checkpoint) -> Result<()> {
        if ck.kind != self.adaptation.kind() {
            return Err(Error::Config(format!(
                "checkpoint kind `{}` does not match model `{}`",
                ck.kind,
                self.adaptation.kind()
            )));
        }
        for (name, slot) in self.trainable_mut() {
            let stored = ck.tensor(&name)?;
            if stored.shape() != slot.shape() {
                return Err(Error::Dimension(format!(
                    "checkpoint tensor `{name}` shape {:?} vs model {:?}",
                    stored.shape(),
                    slot.shape()
                )));
            }
            *slot = stored.to_param();
        }
        Ok(())
    }
}

/// Trainable projection from backbone width to the text embedding width,
/// used by contrastive fine-tuning and zero-shot probes.
pub struct ImageProjection {
    pub w: Tensor,
    pub b: Tensor,
}

impl ImageProjection {
    pub fn init(backbone_width: usize, embed_width: usize, seed: u64) -> ImageProjection {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageProjection {
            w: trunc_normal_param(&mut rng, &[backbone_width, embed_width], 0.02),
            b: Tensor::zeros(&[embed_width]).to_param(),
        }
    }

    /// Mean-pool final tokens, project, L2-normalize rows -> `[B, E]`.
    pub fn embed(&self, final_tokens: &Tensor) -> Result<Tensor> {
        let pooled = ops::mean_axis(final_tokens, 1, false)?;
        let proj = ops::add(&ops::matmul(&pooled, &self.w)?, &self.b)?;
        let sq = ops::sum_axis(&ops::powf(&proj, 2.0)?, 1, true)?;
        let norm = ops::powf(&ops::add_scalar(&sq, 1e-12)?, 0.5)?;
        ops::div(&proj, &norm)
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("proj.w".to_string(), &mut self.w),
            ("proj.b".to_string(), &mut self.b),
        ]
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        vec![("proj.w".to_string(), &self.w), ("proj.b".to_string(), &self.b)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::{init_backbone, vit_forward, ViTConfig};

    fn tiny() -> (Rc<ViTWeights>, Tensor) {
        let mut c = ViTConfig::sized(3, 16, 2, 2.0);
        c.image_size = 32;
        c.tap_indices = vec![0, 1, 2];
        let w = Rc::new(init_backbone(&c, 5).unwrap());
        let s = c.image_size;
        let img = Tensor::from_vec(
            &[1, 1, s, s],
            (0..s * s).map(|i| (i % 53) as f64 / 53.0).collect(),
        )
        .unwrap();
        (w, img)
    }

    #[test]
    fn fresh_ht_taps_equal_frozen_taps_exactly() {
        let (w, img) = tiny();
        let frozen = vit_forward(&img, &w).unwrap();
        let model = Model::attach_ht(w.clone(), HTConfig::new(16, 4, 4), 1).unwrap();
        let adapted = model.forward(&img, Mode::Eval).unwrap();
        for ((i, a), (j, b)) in frozen.taps.iter().zip(&adapted.taps) {
            assert_eq!(i, j);
            assert_eq!(a.data(), b.data(), "tap {i} differs at init");
        }
        assert_eq!(
            frozen.final_tokens.data(),
            adapted.final_tokens.data()
        );
    }

    #[test]
    fn fresh_lora_equals_frozen_bit_for_bit() {
        let (w, img) = tiny();
        let frozen = vit_forward(&img, &w).unwrap();
        let model = Model::attach_lora(w.clone(), 2, 2.0).unwrap();
        let adapted = model.forward(&img, Mode::Eval).unwrap();
        assert_eq!(
            frozen.final_tokens.data(),
            adapted.final_tokens.data()
        );
    }

    #[test]
    fn ht_layer_count_matches_depth() {
        let (w, _) = tiny();
        let model = Model::attach_ht(w.clone(), HTConfig::new(16, 4, 4), 1).unwrap();
        match &model.adaptation {
            Adaptation::Ht { layers, .. } => assert_eq!(layers.len(), 3),
            _ => unreachable!(),
        }
        let few = vec![];
        assert_eq!(
            Model::with_ht_layers(w, HTConfig::new(16, 4, 4), few)
                .err()
                .expect("layer count mismatch must fail")
                .category(),
            "config"
        );
    }

    #[test]
    fn perturbing_first_layer_up_projection_changes_downstream_taps() {
        let (w, img) = tiny();
        let mut model = Model::attach_ht(w.clone(), HTConfig::new(16, 4, 4), 1).unwrap();
        let before = model.forward(&img, Mode::Eval).unwrap();
        if let Adaptation::Ht { layers, .. } = &mut model.adaptation {
            let mut data = vec![0.0; 4 * 16];
            data[3] = 0.5;
            layers[0].w_up = Tensor::param(&[4, 16], data).unwrap();
        }
        let after = model.forward(&img, Mode::Eval).unwrap();
        for ((i, a), (_, b)) in before.taps.iter().zip(&after.taps) {
            assert_ne!(a.data(), b.data(), "tap {i} should shift");
        }
    }

    #[test]
    fn adaptation_checkpoint_roundtrip() {
        let (w, img) = tiny();
        let mut model = Model::attach_ht(w.clone(), HTConfig::new(16, 4, 4), 1).unwrap();
        if let Adaptation::Ht { layers, .. } = &mut model.adaptation {
            layers[1].theta = Tensor::param(&[4], vec![0.5, 1.5, 0.25, 1.0]).unwrap();
        }
        let ck = model.adaptation_checkpoint();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let loaded = Checkpoint::read_from(&mut std::io::Cursor::new(&buf)).unwrap();
        let mut fresh = Model::attach_ht(w, HTConfig::new(16, 4, 4), 99).unwrap();
        fresh.load_adaptation(&loaded).unwrap();
        let a = model.forward(&img, Mode::Eval).unwrap();
        let b = fresh.forward(&img, Mode::Eval).unwrap();
        assert_eq!(a.final_tokens.data(), b.final_tokens.data());
    }

    #[test]
    fn image_projection_rows_are_unit_norm() {
        let (w, img) = tiny();
        let taps = vit_forward(&img, &w).unwrap();
        let proj = ImageProjection::init(16, 8, 3);
        let emb = proj.embed(&taps.final_tokens).unwrap();
        assert_eq!(emb.shape(), &[1, 8]);
        let n: f64 = emb.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }
}

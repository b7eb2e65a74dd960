//! A buildable description of a model: backbone geometry + seed plus the
//! adaptation kind. Checkpoints embed it so a trained model can be
//! reconstructed from the file alone.

use std::rc::Rc;

use ht_core::adapter::HTConfig;
use ht_core::error::{Error, Result};
use ht_core::model::Model;
use ht_core::tensor_io::Checkpoint;
use ht_core::vit::{init_backbone, ViTConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum AdapterKind {
    Frozen,
    Ht {
        bottleneck: usize,
        squeeze: usize,
        dropout: f64,
    },
    Lora {
        rank: usize,
        alpha: f64,
    },
}

#[derive(Debug, Clone)]
pub struct ModelDesc {
    pub vit: ViTConfig,
    pub backbone_seed: u64,
    pub adapter: AdapterKind,
    pub adapter_seed: u64,
}

impl ModelDesc {
    pub fn toy(adapter: AdapterKind) -> ModelDesc {
        ModelDesc {
            vit: ViTConfig::toy(),
            backbone_seed: 0,
            adapter,
            adapter_seed: 1,
        }
    }

    pub fn build(&self) -> Result<Model> {
        let weights = Rc::new(init_backbone(&self.vit, self.backbone_seed)?);
        match &self.adapter {
            AdapterKind::Frozen => Ok(Model::frozen(weights)),
            AdapterKind::Ht {
                bottleneck,
                squeeze,
                dropout,
            } => {
                let mut cfg = HTConfig::new(self.vit.width, *bottleneck, *squeeze);
                cfg.dropout = *dropout;
                Model::attach_ht(weights, cfg, self.adapter_seed)
            }
            AdapterKind::Lora { rank, alpha } => Model::attach_lora(weights, *rank, *alpha),
        }
    }

    pub fn write_meta(&self, ck: &mut Checkpoint) {
        ck.set_meta("vit_image_size", self.vit.image_size);
        ck.set_meta("vit_patch_size", self.vit.patch_size);
        ck.set_meta("vit_depth", self.vit.depth);
        ck.set_meta("vit_width", self.vit.width);
        ck.set_meta("vit_heads", self.vit.heads);
        ck.set_meta("vit_mlp_ratio", self.vit.mlp_ratio);
        let taps: Vec<String> = self.vit.tap_indices.iter().map(|t| t.to_string()).collect();
        ck.set_meta("vit_taps", taps.join(","));
        ck.set_meta("backbone_seed", self.backbone_seed);
        ck.set_meta("adapter_seed", self.adapter_seed);
        match &self.adapter {
            AdapterKind::Frozen => ck.set_meta("adapter", "frozen"),
            AdapterKind::Ht {
                bottleneck,
                squeeze,
                dropout,
            } => {
                ck.set_meta("adapter", "ht");
                ck.set_meta("ht_bottleneck", bottleneck);
                ck.set_meta("ht_squeeze", squeeze);
                ck.set_meta("ht_dropout", dropout);
            }
            AdapterKind::Lora { rank, alpha } => {
                ck.set_meta("adapter", "lora");
                ck.set_meta("lora_rank", rank);
                ck.set_meta("lora_alpha", alpha);
            }
        }
    }

    pub fn read_meta(ck: &Checkpoint) -> Result<ModelDesc> {
        let taps_raw: String = ck.meta_parsed("vit_taps")?;
        let tap_indices: Result<Vec<usize>> = taps_raw
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad tap index `{t}`")))
            })
            .collect();
        let vit = ViTConfig {
            image_size: ck.meta_parsed("vit_image_size")?,
            patch_size: ck.meta_parsed("vit_patch_size")?,
            depth: ck.meta_parsed("vit_depth")?,
            width: ck.meta_parsed("vit_width")?,
            heads: ck.meta_parsed("vit_heads")?,
            mlp_ratio: ck.meta_parsed("vit_mlp_ratio")?,
            tap_indices: tap_indices?,
        };
        let adapter = match ck.meta("adapter") {
            Some("frozen") | None => AdapterKind::Frozen,
            Some("ht") => AdapterKind::Ht {
                bottleneck: ck.meta_parsed("ht_bottleneck")?,
                squeeze: ck.meta_parsed("ht_squeeze")?,
                dropout: ck.meta_parsed("ht_dropout")?,
            },
            Some("lora") => AdapterKind::Lora {
                rank: ck.meta_parsed("lora_rank")?,
                alpha: ck.meta_parsed("lora_alpha")?,
            },
            Some(other) => {
                return Err(Error::Parse(format!("unknown adapter kind `{other}`")))
            }
        };
        Ok(ModelDesc {
            vit,
            backbone_seed: ck.meta_parsed("backbone_seed")?,
            adapter,
            adapter_seed: ck.meta_parsed("adapter_seed")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_roundtrip() {
        let mut desc = ModelDesc::toy(AdapterKind::Ht {
            bottleneck: 16,
            squeeze: 8,
            dropout: 0.1,
        });
        desc.backbone_seed = 77;
        let mut ck = Checkpoint::new("test");
        desc.write_meta(&mut ck);
        let back = ModelDesc::read_meta(&ck).unwrap();
        assert_eq!(back.adapter, desc.adapter);
        assert_eq!(back.backbone_seed, 77);
        assert_eq!(back.vit.tap_indices, desc.vit.tap_indices);
    }
}

//! Dataset-level generation: domain presets and per-sample spec sampling.
//!
//! Domain A has dense bands (period 8) and heavy speckle; domain B has
//! sparser bands (period 14), lighter speckle, and acoustic shadowing.
//! The two give measurably different mean spectra, which the
//! cross-dataset protocol relies on.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ht_core::error::{Error, Result};

use crate::{ArtifactSpec, LesionSpec, PhantomSample, PhantomSpec, ShadowSpec};

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub domain: String,
    pub size: usize,
    pub background: f64,
    pub speckle_sigma: f64,
    pub artifact_period: f64,
    pub artifact_amplitude: f64,
    pub shadow_enabled: bool,
    pub shadow_attenuation: f64,
    pub malignant_rate: f64,
}

impl GenConfig {
    pub fn domain_a() -> GenConfig {
        GenConfig {
            domain: "a".to_string(),
            size: 224,
            background: 0.35,
            speckle_sigma: 0.45,
            artifact_period: 8.0,
            artifact_amplitude: 0.3,
            shadow_enabled: false,
            shadow_attenuation: 0.0,
            malignant_rate: 0.5,
        }
    }

    pub fn domain_b() -> GenConfig {
        GenConfig {
            domain: "b".to_string(),
            size: 224,
            background: 0.42,
            speckle_sigma: 0.30,
            artifact_period: 14.0,
            artifact_amplitude: 0.22,
            shadow_enabled: true,
            shadow_attenuation: 0.45,
            malignant_rate: 0.5,
        }
    }

    pub fn for_domain(name: &str) -> Result<GenConfig> {
        match name {
            "a" | "A" => Ok(GenConfig::domain_a()),
            "b" | "B" => Ok(GenConfig::domain_b()),
            other => Err(Error::Config(format!(
                "unknown phantom domain `{other}` (expected a or b)"
            ))),
        }
    }

    pub fn to_kv(&self) -> String {
        format!(
            "domain={}\nsize={}\nbackground={}\nspeckle_sigma={}\nartifact_period={}\n\
             artifact_amplitude={}\nshadow_enabled={}\nshadow_attenuation={}\nmalignant_rate={}\n",
            self.domain,
            self.size,
            self.background,
            self.speckle_sigma,
            self.artifact_period,
            self.artifact_amplitude,
            self.shadow_enabled,
            self.shadow_attenuation,
            self.malignant_rate
        )
    }

    pub fn parse_kv(text: &str) -> Result<GenConfig> {
        let mut cfg = GenConfig::domain_a();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("generator config line {} lacks `=`", lineno + 1))
            })?;
            let bad = |what: &str| Error::Parse(format!("bad {what} value `{v}`"));
            match k.trim() {
                "domain" => cfg.domain = v.trim().to_string(),
                "size" => cfg.size = v.trim().parse().map_err(|_| bad("size"))?,
                "background" => cfg.background = v.trim().parse().map_err(|_| bad("background"))?,
                "speckle_sigma" => {
                    cfg.speckle_sigma = v.trim().parse().map_err(|_| bad("speckle_sigma"))?
                }
                "artifact_period" => {
                    cfg.artifact_period = v.trim().parse().map_err(|_| bad("artifact_period"))?
                }
                "artifact_amplitude" => {
                    cfg.artifact_amplitude =
                        v.trim().parse().map_err(|_| bad("artifact_amplitude"))?
                }
                "shadow_enabled" => {
                    cfg.shadow_enabled = v.trim().parse().map_err(|_| bad("shadow_enabled"))?
                }
                "shadow_attenuation" => {
                    cfg.shadow_attenuation =
                        v.trim().parse().map_err(|_| bad("shadow_attenuation"))?
                }
                "malignant_rate" => {
                    cfg.malignant_rate = v.trim().parse().map_err(|_| bad("malignant_rate"))?
                }
                other => return Err(Error::Parse(format!("unknown generator key `{other}`"))),
            }
        }
        Ok(cfg)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draw one lesion spec consistent with a target label. Lesion geometry
/// scales with the frame so small test images stay valid.
fn sample_spec(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> PhantomSpec {
    let malignant = rng.gen::<f64>() < cfg.malignant_rate;
    let scale = cfg.size as f64 / 224.0;
    let b_axis: f64 = rng.gen_range(14.0 * scale..26.0 * scale).max(3.0);
    let (ratio, irregularity) = if malignant {
        if rng.gen::<bool>() {
            // round mechanism
            (rng.gen_range(1.02..1.25), rng.gen_range(0.0..0.06) * b_axis)
        } else {
            // irregular-boundary mechanism
            (rng.gen_range(1.4..2.0), rng.gen_range(0.20..0.32) * b_axis)
        }
    } else {
        (rng.gen_range(1.4..2.1), rng.gen_range(0.0..0.06) * b_axis)
    };
    let a_axis = b_axis * ratio;
    let reach = a_axis.max(b_axis) + irregularity + 2.0;
    let lo = reach + 1.0;
    let hi = cfg.size as f64 - reach - 1.0;
    let center = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
    let offset = if rng.gen::<f64>() < 0.8 {
        -rng.gen_range(0.16..0.28)
    } else {
        rng.gen_range(0.16..0.28)
    };
    PhantomSpec {
        size: cfg.size,
        background: cfg.background,
        speckle_sigma: cfg.speckle_sigma,
        lesion: LesionSpec {
            center,
            semi_axes: (a_axis, b_axis),
            rotation: rng.gen_range(0.0..std::f64::consts::PI),
            intensity_offset: offset,
            irregularity,
            lobes: rng.gen_range(5..9),
        },
        artifact: ArtifactSpec {
            period: cfg.artifact_period,
            amplitude: cfg.artifact_amplitude,
        },
        shadow: ShadowSpec {
            enabled: cfg.shadow_enabled,
            attenuation: cfg.shadow_attenuation,
            span: 2.0 * b_axis.min(a_axis),
        },
        malignancy_irregularity_factor: 0.15,
        malignancy_axis_ratio: 1.3,
    }
}

/// Generate `n` samples; sample `i` is fully determined by
/// `(config, master_seed, i)`.
pub fn gen_dataset(cfg: &GenConfig, n: usize, master_seed: u64) -> Result<Vec<PhantomSample>> {
    if n == 0 {
        return Err(Error::Input("cannot generate an empty dataset".to_string()));
    }
    (0..n)
        .map(|i| {
            let sample_seed = splitmix(master_seed ^ (i as u64).wrapping_mul(0x517c_c1b7_2722_0a95));
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
            let spec = sample_spec(cfg, &mut rng);
            crate::gen_phantom(&spec, sample_seed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Label;

    #[test]
    fn both_classes_present_and_deterministic() {
        let cfg = GenConfig::domain_a();
        let set = gen_dataset(&cfg, 24, 7).unwrap();
        let malignant = set.iter().filter(|s| s.label == Label::Malignant).count();
        assert!(malignant > 0 && malignant < 24, "{malignant}/24 malignant");
        let again = gen_dataset(&cfg, 24, 7).unwrap();
        for (a, b) in set.iter().zip(&again) {
            assert_eq!(a.image, b.image);
        }
    }

    #[test]
    fn kv_roundtrip() {
        let cfg = GenConfig::domain_b();
        let text = cfg.to_kv();
        let back = GenConfig::parse_kv(&text).unwrap();
        assert_eq!(back.domain, "b");
        assert_eq!(back.artifact_period, 14.0);
        assert!(back.shadow_enabled);
        assert!(GenConfig::parse_kv("nonsense").is_err());
        assert!(GenConfig::parse_kv("size=abc").is_err());
    }

    #[test]
    fn domains_have_distinct_band_frequencies() {
        // mean vertical-profile spectrum peaks at 224/period for each domain
        let peak_of = |cfg: &GenConfig| -> usize {
            let set = gen_dataset(cfg, 4, 3).unwrap();
            let s = cfg.size;
            let mut best = (0usize, 0.0f64);
            for ky in 10..=s / 2 {
                let mut total = 0.0;
                for sample in &set {
                    let profile: Vec<f64> = (0..s)
                        .map(|y| {
                            (0..s).map(|x| sample.image[y * s + x] as f64).sum::<f64>()
                                / s as f64
                        })
                        .collect();
                    let (mut re, mut im) = (0.0, 0.0);
                    for (y, v) in profile.iter().enumerate() {
                        let ang = -std::f64::consts::TAU * ky as f64 * y as f64 / s as f64;
                        re += v * ang.cos();
                        im += v * ang.sin();
                    }
                    total += (re * re + im * im).sqrt();
                }
                if total > best.1 {
                    best = (ky, total);
                }
            }
            best.0
        };
        assert_eq!(peak_of(&GenConfig::domain_a()), 28); // 224 / 8
        assert_eq!(peak_of(&GenConfig::domain_b()), 16); // 224 / 14
    }
}

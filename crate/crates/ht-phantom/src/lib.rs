//! Synthetic ultrasound phantoms.
//!
//! Each sample is a speckled echotexture with an elliptical lesion
//! (optionally with an irregular boundary), periodic horizontal reverberation
//! bands with a known spectral signature, and optional acoustic shadowing
//! below the lesion. Images come with pixel masks, a rule-derived
//! benign/malignant label, and a descriptor caption. Everything is fully
//! determined by (spec, seed).

pub mod caption;
pub mod dataset;
pub mod generator;
pub mod pgm;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ht_core::error::{Error, Result};
use ht_core::init::normal;
use ht_core::tensor::Tensor;

pub use caption::caption_for;
pub use generator::{gen_dataset, GenConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Benign,
    Malignant,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malignant => "malignant",
        }
    }

    pub fn parse(s: &str) -> Result<Label> {
        match s {
            "benign" => Ok(Label::Benign),
            "malignant" => Ok(Label::Malignant),
            other => Err(Error::Parse(format!("unknown label `{other}`"))),
        }
    }

    pub fn index(&self) -> usize {
        match self {
            Label::Benign => 0,
            Label::Malignant => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LesionSpec {
    /// Center in pixels (row, col).
    pub center: (f64, f64),
    /// Semi-axes in pixels (a >= b not required).
    pub semi_axes: (f64, f64),
    /// Rotation in radians.
    pub rotation: f64,
    /// Additive intensity inside the lesion (negative = hypoechoic).
    pub intensity_offset: f64,
    /// Boundary irregularity amplitude in pixels.
    pub irregularity: f64,
    /// Number of irregularity lobes around the boundary.
    pub lobes: usize,
}

#[derive(Debug, Clone)]
pub struct ArtifactSpec {
    /// Band period along the image rows, in pixels.
    pub period: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone)]
pub struct ShadowSpec {
    pub enabled: bool,
    /// Multiplicative attenuation in (0, 1); applied below the lesion.
    pub attenuation: f64,
    /// Column span of the shadow in pixels.
    pub span: f64,
}

#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub size: usize,
    /// Mean echotexture level before speckle.
    pub background: f64,
    /// Rayleigh scale of the speckle field.
    pub speckle_sigma: f64,
    pub lesion: LesionSpec,
    pub artifact: ArtifactSpec,
    pub shadow: ShadowSpec,
    /// Malignant if irregularity > factor * min(a, b) ...
    pub malignancy_irregularity_factor: f64,
    /// ... or if max(a,b)/min(a,b) < this ratio.
    pub malignancy_axis_ratio: f64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::Config("zero image size".to_string()));
        }
        if self.speckle_sigma <= 0.0 {
            return Err(Error::Config(format!(
                "speckle sigma {} must be positive",
                self.speckle_sigma
            )));
        }
        if self.artifact.period < 2.0 {
            return Err(Error::Config(format!(
                "artifact period {} px below the 2 px floor",
                self.artifact.period
            )));
        }
        let (a, b) = self.lesion.semi_axes;
        if a < 2.0 || b < 2.0 {
            return Err(Error::Config("lesion semi-axes below 2 px".to_string()));
        }
        let reach = a.max(b) + self.lesion.irregularity;
        let (cy, cx) = self.lesion.center;
        let s = self.size as f64;
        if cy - reach < 0.0 || cx - reach < 0.0 || cy + reach >= s || cx + reach >= s {
            return Err(Error::Config(format!(
                "lesion (center {cy:.1},{cx:.1}, reach {reach:.1}) leaves the {s}x{s} image"
            )));
        }
        Ok(())
    }

    pub fn axis_ratio(&self) -> f64 {
        let (a, b) = self.lesion.semi_axes;
        a.max(b) / a.min(b)
    }

    /// Rule-derived label: irregular boundary or round aspect is malignant.
    pub fn label(&self) -> Label {
        let (a, b) = self.lesion.semi_axes;
        let irregular = self.lesion.irregularity > self.malignancy_irregularity_factor * a.min(b);
        let round = self.axis_ratio() < self.malignancy_axis_ratio;
        if irregular || round {
            Label::Malignant
        } else {
            Label::Benign
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhantomSample {
    pub spec: PhantomSpec,
    pub seed: u64,
    pub size: usize,
    /// Row-major intensities in [0, 1].
    pub image: Vec<f32>,
    pub mask: Vec<bool>,
    pub label: Label,
    pub caption: String,
}

impl PhantomSample {
    pub fn mask_pixels(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Image as a `[1, 1, S, S]` tensor.
    pub fn image_tensor(&self) -> Tensor {
        let data: Vec<f64> = self.image.iter().map(|v| *v as f64).collect();
        Tensor::from_vec(&[1, 1, self.size, self.size], data).expect("image buffer")
    }
}

/// Rayleigh envelope field |N(0, sigma) + i N(0, sigma)| per pixel.
pub fn speckle(height: usize, width: usize, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if sigma <= 0.0 {
        return Err(Error::Config(format!("speckle sigma {sigma} <= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..height * width)
        .map(|_| {
            let re = normal(&mut rng) * sigma;
            let im = normal(&mut rng) * sigma;
            (re * re + im * im).sqrt()
        })
        .collect())
}

/// Whether a pixel center lies inside the (irregularity-perturbed) ellipse.
fn inside_lesion(spec: &PhantomSpec, y: f64, x: f64, phase: f64) -> bool {
    let l = &spec.lesion;
    let (cy, cx) = l.center;
    let (a, b) = l.semi_axes;
    let (dy, dx) = (y - cy, x - cx);
    let (sin, cos) = l.rotation.sin_cos();
    let u = cos * dx + sin * dy;
    let v = -sin * dx + cos * dy;
    let (ua, vb) = (u / a, v / b);
    let rho = (ua * ua + vb * vb).sqrt();
    let phi = vb.atan2(ua);
    let wobble = (l.irregularity / a.min(b)) * ((l.lobes as f64) * phi + phase).sin();
    rho <= 1.0 + wobble
}

/// Generate one phantom. The seed drives the speckle field and the phases
/// of the artifact bands and boundary irregularity; all geometry comes from
/// the spec.
pub fn gen_phantom(spec: &PhantomSpec, seed: u64) -> Result<PhantomSample> {
    spec.validate()?;
    let s = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let boundary_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let band_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let field = speckle(s, s, spec.speckle_sigma, seed)?;

    let mut mask = vec![false; s * s];
    for y in 0..s {
        for x in 0..s {
            mask[y * s + x] = inside_lesion(spec, y as f64, x as f64, boundary_phase);
        }
    }
    if !mask.iter().any(|m| *m) {
        return Err(Error::Config("lesion rasterized to an empty mask".to_string()));
    }

    let l = &spec.lesion;
    let shadow_top = l.center.0 + l.semi_axes.0.max(l.semi_axes.1);
    let half_span = spec.shadow.span / 2.0;
    let mut image = vec![0f32; s * s];
    for y in 0..s {
        let band = spec.artifact.amplitude
            * (std::f64::consts::TAU * y as f64 / spec.artifact.period + band_phase).sin();
        for x in 0..s {
            let mut v = spec.background * field[y * s + x] + band;
            if mask[y * s + x] {
                v += l.intensity_offset;
            }
            if spec.shadow.enabled
                && y as f64 > shadow_top
                && (x as f64 - l.center.1).abs() <= half_span
            {
                v *= 1.0 - spec.shadow.attenuation;
            }
            image[y * s + x] = v.clamp(0.0, 1.0) as f32;
        }
    }

    Ok(PhantomSample {
        spec: spec.clone(),
        seed,
        size: s,
        image,
        mask,
        label: spec.label(),
        caption: caption_for(spec),
    })
}

#[cfg(test)]
pub(crate) fn base_spec() -> PhantomSpec {
    PhantomSpec {
        size: 224,
        background: 0.35,
        speckle_sigma: 0.45,
        lesion: LesionSpec {
            center: (112.0, 112.0),
            semi_axes: (40.0, 20.0),
            rotation: 0.3,
            intensity_offset: -0.22,
            irregularity: 0.0,
            lobes: 7,
        },
        artifact: ArtifactSpec {
            period: 8.0,
            amplitude: 0.3,
        },
        shadow: ShadowSpec {
            enabled: false,
            attenuation: 0.45,
            span: 40.0,
        },
        malignancy_irregularity_factor: 0.15,
        malignancy_axis_ratio: 1.3,
    }
}

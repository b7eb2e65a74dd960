//! Dataset serialization: P5 graymaps for images and masks plus a UTF-8
//! manifest with one `path<TAB>mask<TAB>label<TAB>split<TAB>caption` line
//! per sample.

use std::fs;
use std::path::{Path, PathBuf};

use ht_core::error::{Error, Result};

use crate::pgm;
use crate::{Label, PhantomSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestRecord {
    pub image_path: String,
    pub mask_path: String,
    pub label: Label,
    pub split: Split,
    pub caption: String,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub dataset: String,
    pub generator: String,
    pub seed: u64,
    pub records: Vec<ManifestRecord>,
}

pub fn render_manifest(m: &Manifest) -> String {
    let mut out = String::new();
    out.push_str(&format!("# dataset: {}\n", m.dataset));
    out.push_str(&format!("# generator: {}\n", m.generator));
    out.push_str(&format!("# seed: {}\n", m.seed));
    for r in &m.records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.image_path,
            r.mask_path,
            r.label.as_str(),
            r.split.as_str(),
            r.caption.replace(['\t', '\n'], " ")
        ));
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut dataset = String::from("unnamed");
    let mut generator = String::from("unknown");
    let mut seed = 0u64;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("dataset:") {
                dataset = v.trim().to_string();
            } else if let Some(v) = rest.strip_prefix("generator:") {
                generator = v.trim().to_string();
            } else if let Some(v) = rest.strip_prefix("seed:") {
                seed = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad seed `{}`", v.trim())))?;
            }
            continue;
        }
        let mut fields = line.splitn(5, '\t');
        let (img, mask, label, split, caption) = (
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
        );
        let (Some(img), Some(mask), Some(label), Some(split), Some(caption)) =
            (img, mask, label, split, caption)
        else {
            return Err(Error::Parse(format!(
                "manifest line {} has fewer than 5 tab-separated fields",
                lineno + 1
            )));
        };
        if records.len() >= 1_000_000 {
            return Err(Error::Parse("manifest too large".to_string()));
        }
        records.push(ManifestRecord {
            image_path: img.to_string(),
            mask_path: mask.to_string(),
            label: Label::parse(label)?,
            split: Split::parse(split)?,
            caption: caption.to_string(),
        });
    }
    Ok(Manifest {
        dataset,
        generator,
        seed,
        records,
    })
}

/// Write images, masks, and the manifest under `dir`. Image values are
/// quantized to 8 bits; masks roundtrip exactly.
pub fn write_dataset(
    samples: &[(PhantomSample, Split)],
    dir: &Path,
    name: &str,
    seed: u64,
) -> Result<Manifest> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut records = Vec::with_capacity(samples.len());
    for (i, (sample, split)) in samples.iter().enumerate() {
        let image_path = format!("images/{i:05}.pgm");
        let mask_path = format!("masks/{i:05}.pgm");
        let img = pgm::encode(sample.size, sample.size, &pgm::quantize(&sample.image))?;
        fs::write(dir.join(&image_path), img)?;
        let msk = pgm::encode(sample.size, sample.size, &pgm::mask_bytes(&sample.mask))?;
        fs::write(dir.join(&mask_path), msk)?;
        records.push(ManifestRecord {
            image_path,
            mask_path,
            label: sample.label,
            split: *split,
            caption: sample.caption.clone(),
        });
    }
    let manifest = Manifest {
        dataset: name.to_string(),
        generator: "phantom-v1".to_string(),
        seed,
        records,
    };
    fs::write(dir.join("manifest.tsv"), render_manifest(&manifest))?;
    Ok(manifest)
}

/// A sample as loaded back from disk.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub width: usize,
    pub height: usize,
    pub image: Vec<f32>,
    pub mask: Vec<bool>,
    pub label: Label,
    pub split: Split,
    pub caption: String,
}

impl LoadedSample {
    pub fn image_tensor(&self) -> ht_core::Tensor {
        let data: Vec<f64> = self.image.iter().map(|v| *v as f64).collect();
        ht_core::Tensor::from_vec(&[1, 1, self.height, self.width], data)
            .expect("image buffer matches dims")
    }
}

fn load_pgm(base: &Path, rel: &str) -> Result<(usize, usize, Vec<u8>)> {
    let path: PathBuf = base.join(rel);
    let bytes = fs::read(&path)
        .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
    pgm::decode(&bytes)
}

/// Read a dataset written by [`write_dataset`]. A manifest record whose
/// files are missing or corrupt is an integrity error naming the path.
pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<LoadedSample>)> {
    let text = fs::read_to_string(dir.join("manifest.tsv"))
        .map_err(|e| Error::Integrity(format!("{}: {e}", dir.join("manifest.tsv").display())))?;
    let manifest = parse_manifest(&text)?;
    let mut samples = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let (w, h, img) = load_pgm(dir, &r.image_path)?;
        let (mw, mh, msk) = load_pgm(dir, &r.mask_path)?;
        if (w, h) != (mw, mh) {
            return Err(Error::Integrity(format!(
                "{}: mask dims {mw}x{mh} differ from image {w}x{h}",
                r.mask_path
            )));
        }
        samples.push(LoadedSample {
            width: w,
            height: h,
            image: img.iter().map(|b| *b as f32 / 255.0).collect(),
            mask: msk.iter().map(|b| *b > 127).collect(),
            label: r.label,
            split: r.split,
            caption: r.caption.clone(),
        });
    }
    Ok((manifest, samples))
}

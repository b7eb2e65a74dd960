//! Segmentation metrics: Dice, IoU, HD95, ASD.
//!
//! Boundaries are the 4-connectivity erosion residue (mask pixels with at
//! least one 4-neighbor outside the mask, where out-of-image counts as
//! background); distances are Euclidean between pixel centers; HD95 uses
//! the nearest-rank 95th percentile over the symmetric distance multiset.
//!
//! Empty-mask conventions: both masks empty scores a perfect match
//! (Dice/IoU 100, distances 0); exactly one empty scores 0 overlap and the
//! image diagonal as a finite distance sentinel, with the entry flagged.

use ht_core::error::{Error, Result};

use crate::mean_std;

/// Binary mask over an image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Mask> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "{height}x{width} mask needs {} pixels, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Mask {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Mask {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Mask {
            height,
            width,
            data,
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    fn at(&self, y: isize, x: isize) -> bool {
        if y < 0 || x < 0 || y as usize >= self.height || x as usize >= self.width {
            return false;
        }
        self.data[y as usize * self.width + x as usize]
    }

    /// 4-connectivity erosion residue.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.data[y * self.width + x] {
                    continue;
                }
                let (yi, xi) = (y as isize, x as isize);
                if !self.at(yi - 1, xi)
                    || !self.at(yi + 1, xi)
                    || !self.at(yi, xi - 1)
                    || !self.at(yi, xi + 1)
                {
                    out.push((y, x));
                }
            }
        }
        out
    }
}

/// Per-sample segmentation metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegEntry {
    /// Percent.
    pub dice: f64,
    /// Percent.
    pub iou: f64,
    /// Pixels.
    pub hd95: f64,
    /// Pixels.
    pub asd: f64,
    /// Set when the empty-mask sentinel convention fired.
    pub flagged: bool,
}

fn directed_min_distances(from: &[(usize, usize)], to: &[(usize, usize)]) -> Vec<f64> {
    from.iter()
        .map(|&(y, x)| {
            to.iter()
                .map(|&(gy, gx)| {
                    let dy = y as f64 - gy as f64;
                    let dx = x as f64 - gx as f64;
                    dy * dy + dx * dx
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Nearest-rank percentile of a sorted slice.
fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn seg_metrics(pred: &Mask, gt: &Mask) -> Result<SegEntry> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::Dimension(format!(
            "mask shapes {}x{} and {}x{} differ",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    let p = pred.count();
    let g = gt.count();
    if p == 0 && g == 0 {
        return Ok(SegEntry {
            dice: 100.0,
            iou: 100.0,
            hd95: 0.0,
            asd: 0.0,
            flagged: false,
        });
    }
    if p == 0 || g == 0 {
        let diag = (((pred.height - 1).pow(2) + (pred.width - 1).pow(2)) as f64).sqrt();
        return Ok(SegEntry {
            dice: 0.0,
            iou: 0.0,
            hd95: diag,
            asd: diag,
            flagged: true,
        });
    }
    let inter = pred
        .data
        .iter()
        .zip(&gt.data)
        .filter(|(a, b)| **a && **b)
        .count();
    let union = p + g - inter;
    let dice = 100.0 * 2.0 * inter as f64 / (p + g) as f64;
    let iou = 100.0 * inter as f64 / union as f64;

    let bp = pred.boundary();
    let bg = gt.boundary();
    let mut dists = directed_min_distances(&bp, &bg);
    dists.extend(directed_min_distances(&bg, &bp));
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let hd95 = nearest_rank(&dists, 95.0);
    let asd = dists.iter().sum::<f64>() / dists.len() as f64;
    Ok(SegEntry {
        dice,
        iou,
        hd95,
        asd,
        flagged: false,
    })
}

/// Aggregated report over a set of samples.
#[derive(Debug, Clone)]
pub struct SegReport {
    pub entries: Vec<SegEntry>,
}

impl SegReport {
    pub fn new(entries: Vec<SegEntry>) -> SegReport {
        SegReport { entries }
    }

    pub fn mean_dice(&self) -> f64 {
        mean_std(&self.entries.iter().map(|e| e.dice).collect::<Vec<_>>()).0
    }

    /// Rows of (metric, mean, std, n).
    pub fn summary(&self) -> Vec<(&'static str, f64, f64, usize)> {
        let n = self.entries.len();
        let col = |f: fn(&SegEntry) -> f64| {
            let v: Vec<f64> = self.entries.iter().map(f).collect();
            mean_std(&v)
        };
        let (dm, ds) = col(|e| e.dice);
        let (im, is) = col(|e| e.iou);
        let (hm, hs) = col(|e| e.hd95);
        let (am, asd) = col(|e| e.asd);
        vec![
            ("dice", dm, ds, n),
            ("iou", im, is, n),
            ("hd95", hm, hs, n),
            ("asd", am, asd, n),
        ]
    }
}

//! Deterministic dataset splitting and ratio-based few-shot sampling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ht_core::error::{Error, Result};

use crate::config::SplitSpec;

fn allocate(n: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    let n_val = (ratios.1 * n as f64).floor() as usize;
    let n_test = (ratios.2 * n as f64).floor() as usize;
    // remainders go to the training split
    (n - n_val - n_test, n_val, n_test)
}

/// Split `0..n_items` into train/val/test index lists. Shuffling is
/// seed-deterministic; sizes are floor-allocated with remainders going to
/// training; with `stratify` set, the allocation happens per label.
pub fn split_dataset(
    n_items: usize,
    labels: Option<&[usize]>,
    spec: &SplitSpec,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    if n_items == 0 {
        return Err(Error::Input("cannot split an empty dataset".to_string()));
    }
    if let Some(l) = labels {
        if l.len() != n_items {
            return Err(Error::Dimension(format!(
                "{} labels for {} items",
                l.len(),
                n_items
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups: Vec<Vec<usize>> = match (spec.stratify, labels) {
        (true, Some(labels)) => {
            let mut by_label: Vec<(usize, Vec<usize>)> = Vec::new();
            for (i, &l) in labels.iter().enumerate() {
                match by_label.iter_mut().find(|(k, _)| *k == l) {
                    Some((_, v)) => v.push(i),
                    None => by_label.push((l, vec![i])),
                }
            }
            by_label.sort_by_key(|(l, _)| *l);
            by_label.into_iter().map(|(_, v)| v).collect()
        }
        _ => vec![(0..n_items).collect()],
    };
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut group in groups {
        group.shuffle(&mut rng);
        let (n_train, n_val, _n_test) = allocate(group.len(), spec.ratios);
        train.extend_from_slice(&group[..n_train]);
        val.extend_from_slice(&group[n_train..n_train + n_val]);
        test.extend_from_slice(&group[n_train + n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok((train, val, test))
}

/// Per-class proportional sampling from a training set:
/// `max(1, round(ratio * class_count))` items per class, seed-deterministic,
/// returned in ascending index order.
pub fn fewshot_sample(
    train_indices: &[usize],
    labels: &[usize],
    ratio: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&ratio) || ratio == 0.0 {
        return Err(Error::Config(format!("ratio {ratio} not in (0, 1]")));
    }
    if train_indices.is_empty() {
        return Err(Error::Sampling("empty training set".to_string()));
    }
    let mut by_class: Vec<(usize, Vec<usize>)> = Vec::new();
    for &idx in train_indices {
        let l = *labels.get(idx).ok_or_else(|| {
            Error::Dimension(format!("index {idx} has no label (labels cover {})", labels.len()))
        })?;
        match by_class.iter_mut().find(|(k, _)| *k == l) {
            Some((_, v)) => v.push(idx),
            None => by_class.push((l, vec![idx])),
        }
    }
    by_class.sort_by_key(|(l, _)| *l);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (_, mut members) in by_class {
        if members.is_empty() {
            return Err(Error::Sampling("empty class".to_string()));
        }
        let take = ((ratio * members.len() as f64).round() as usize)
            .max(1)
            .min(members.len());
        members.shuffle(&mut rng);
        out.extend_from_slice(&members[..take]);
    }
    out.sort_unstable();
    Ok(out)
}

//! Differentiable loss functions, built from the core op set so gradients
//! flow through `backward` like any other graph.

use ht_core::error::{Error, Result};
use ht_core::ops;
use ht_core::tensor::Tensor;

/// Symmetric contrastive loss over a batch of matched image/text pairs.
/// Rows of both embedding matrices must be unit-normalized; the loss is the
/// mean of the image-to-text and text-to-image cross-entropies over the
/// scaled cosine-similarity matrix.
pub fn info_nce(img_emb: &Tensor, txt_emb: &Tensor, tau: f64) -> Result<Tensor> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature {tau} must be positive")));
    }
    let s = img_emb.shape();
    if s.len() != 2 || txt_emb.shape() != s {
        return Err(Error::Dimension(format!(
            "info_nce: embedding shapes {:?} vs {:?}",
            s,
            txt_emb.shape()
        )));
    }
    let b = s[0];
    if b == 0 {
        return Err(Error::Input("info_nce: empty batch".to_string()));
    }
    for (name, t) in [("image", img_emb), ("text", txt_emb)] {
        for r in 0..b {
            let n: f64 = t.data()[r * s[1]..(r + 1) * s[1]]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if (n - 1.0).abs() > 1e-4 {
                return Err(Error::Input(format!(
                    "info_nce: {name} row {r} has norm {n}, expected unit"
                )));
            }
        }
    }
    let txt_t = ops::permute(txt_emb, &[1, 0])?;
    let logits = ops::scale(&ops::matmul(img_emb, &txt_t)?, 1.0 / tau)?;
    let mut eye = vec![0.0; b * b];
    for i in 0..b {
        eye[i * b + i] = 1.0;
    }
    let eye = Tensor::from_vec(&[b, b], eye)?;
    let i2t = ops::log_softmax_axis(&logits, 1)?;
    let t2i = ops::log_softmax_axis(&logits, 0)?;
    let pick = |ls: &Tensor| -> Result<Tensor> {
        ops::scale(&ops::sum_all(&ops::mul(ls, &eye)?)?, -1.0 / b as f64)
    };
    ops::scale(&ops::add(&pick(&i2t)?, &pick(&t2i)?)?, 0.5)
}

fn one_hot(labels: &[usize], classes: usize, what: &str) -> Result<Vec<f64>> {
    let mut out = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Input(format!(
                "{what}: label {l} out of range for {classes} classes"
            )));
        }
        out[i * classes + l] = 1.0;
    }
    Ok(out)
}

/// Equal-weight soft-Dice + pixel cross-entropy for binary segmentation
/// logits `[B, C, H, W]` (foreground = class 1) against integer masks.
pub fn dice_ce_loss(logits: &Tensor, mask_labels: &[usize], weights: (f64, f64)) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 4 {
        return Err(Error::Dimension(format!(
            "dice_ce: expected [B, C, H, W] logits, got {s:?}"
        )));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if c < 2 {
        return Err(Error::Config("dice_ce needs at least 2 classes".to_string()));
    }
    if mask_labels.len() != b * h * w {
        return Err(Error::Dimension(format!(
            "dice_ce: {} mask pixels for logits {s:?}",
            mask_labels.len()
        )));
    }
    let npix = (b * h * w) as f64;
    // one-hot directly in [B, C, H, W] layout
    let mut hot_img = vec![0.0; b * c * h * w];
    for bi in 0..b {
        for p in 0..h * w {
            let l = mask_labels[bi * h * w + p];
            if l >= c {
                return Err(Error::Input(format!(
                    "dice_ce: label {l} out of range for {c} classes"
                )));
            }
            hot_img[(bi * c + l) * h * w + p] = 1.0;
        }
    }
    let hot_t = Tensor::from_vec(&[b, c, h, w], hot_img)?;

    let ls = ops::log_softmax_axis(logits, 1)?;
    let ce = ops::scale(&ops::sum_all(&ops::mul(&ls, &hot_t)?)?, -1.0 / npix)?;

    let probs = ops::softmax_axis(logits, 1)?;
    let pf = ops::select(&probs, 1, 1)?; // [B, H, W]
    let gf = ops::select(&hot_t, 1, 1)?;
    let smooth = 1.0;
    let inter = ops::sum_all(&ops::mul(&pf, &gf)?)?;
    let denom = ops::add(&ops::sum_all(&pf)?, &ops::sum_all(&gf)?)?;
    let dice = ops::div(
        &ops::add_scalar(&ops::scale(&inter, 2.0)?, smooth)?,
        &ops::add_scalar(&denom, smooth)?,
    )?;
    let dice_loss = ops::add_scalar(&ops::neg(&dice)?, 1.0)?;

    let (wd, wc) = weights;
    ops::add(&ops::scale(&dice_loss, wd)?, &ops::scale(&ce, wc)?)
}

/// Focal loss over `[B, C]` logits: mean of
/// `-alpha_t (1 - p_t)^gamma ln p_t`, with `alpha_t = alpha` for class 1
/// and `1 - alpha` otherwise.
pub fn focal_loss(logits: &Tensor, labels: &[usize], alpha: f64, gamma: f64) -> Result<Tensor> {
    if gamma < 0.0 {
        return Err(Error::Config(format!("focal gamma {gamma} must be >= 0")));
    }
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::Dimension(format!(
            "focal: logits {s:?} vs {} labels",
            labels.len()
        )));
    }
    let (b, c) = (s[0], s[1]);
    let hot = Tensor::from_vec(&[b, c], one_hot(labels, c, "focal")?)?;
    let alpha_t: Vec<f64> = labels
        .iter()
        .map(|&l| if l == 1 { alpha } else { 1.0 - alpha })
        .collect();
    let alpha_t = Tensor::from_vec(&[b], alpha_t)?;

    let ls = ops::log_softmax_axis(logits, 1)?;
    let lpt = ops::sum_axis(&ops::mul(&ls, &hot)?, 1, false)?; // [B]
    let pt = ops::exp(&lpt)?;
    let focus = ops::powf(&ops::add_scalar(&ops::neg(&pt)?, 1.0)?, gamma)?;
    let weighted = ops::mul(&ops::mul(&alpha_t, &focus)?, &lpt)?;
    ops::scale(&ops::sum_all(&weighted)?, -1.0 / b as f64)
}

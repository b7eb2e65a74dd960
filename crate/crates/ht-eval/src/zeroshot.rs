//! Prompt-ensemble zero-shot classification: a class scores the mean cosine
//! similarity between the image embedding and its prompt embeddings;
//! prediction is the argmax with a lexicographic tie-break.

use ht_core::error::{Error, Result};

/// Class name -> prompt list, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    pub classes: Vec<(String, Vec<String>)>,
}

impl PromptBank {
    /// Parse the bank format: `# class: <name>` headers, one prompt per
    /// line, blank lines ignored.
    pub fn parse(text: &str) -> Result<PromptBank> {
        let mut classes: Vec<(String, Vec<String>)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(name) = rest.strip_prefix("class:") {
                    let name = name.trim();
                    if name.is_empty() {
                        return Err(Error::Parse(format!(
                            "line {}: empty class name",
                            lineno + 1
                        )));
                    }
                    if classes.len() >= 1024 {
                        return Err(Error::Parse("too many classes".to_string()));
                    }
                    classes.push((name.to_string(), Vec::new()));
                }
                continue; // other comments ignored
            }
            match classes.last_mut() {
                Some((_, prompts)) => prompts.push(line.to_string()),
                None => {
                    return Err(Error::Parse(format!(
                        "line {}: prompt before any `# class:` header",
                        lineno + 1
                    )))
                }
            }
        }
        let bank = PromptBank { classes };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("prompt bank has no classes".to_string()));
        }
        for (name, prompts) in &self.classes {
            if prompts.is_empty() {
                return Err(Error::Config(format!("class `{name}` has no prompts")));
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, prompts) in &self.classes {
            out.push_str(&format!("# class: {name}\n"));
            for p in prompts {
                out.push_str(p);
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Score every class and predict. `encode` maps a prompt string to its
/// embedding; it is called once per prompt, in bank order.
pub fn zero_shot_classify(
    img_emb: &[f64],
    bank: &PromptBank,
    mut encode: impl FnMut(&str) -> Result<Vec<f64>>,
) -> Result<(String, Vec<(String, f64)>)> {
    bank.validate()?;
    let mut scores = Vec::with_capacity(bank.classes.len());
    for (name, prompts) in &bank.classes {
        let mut total = 0.0;
        for p in prompts {
            let e = encode(p)?;
            if e.len() != img_emb.len() {
                return Err(Error::Dimension(format!(
                    "prompt embedding length {} vs image {}",
                    e.len(),
                    img_emb.len()
                )));
            }
            total += cosine(img_emb, &e);
        }
        scores.push((name.clone(), total / prompts.len() as f64));
    }
    let mut best = 0usize;
    for i in 1..scores.len() {
        let better = scores[i].1 > scores[best].1
            || (scores[i].1 == scores[best].1 && scores[i].0 < scores[best].0);
        if better {
            best = i;
        }
    }
    Ok((scores[best].0.clone(), scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_encode(p: &str) -> Result<Vec<f64>> {
        // deterministic toy embedding: letter histogram on 4 buckets
        let mut v = vec![1e-3; 4];
        for (i, b) in p.bytes().enumerate() {
            v[(b as usize + i) % 4] += b as f64 / 255.0;
        }
        Ok(v)
    }

    fn bank() -> PromptBank {
        PromptBank::parse(
            "# class: benign\nan oval mass\na smooth mass\n\n# class: malignant\nan irregular mass\na spiculated mass\n",
        )
        .unwrap()
    }

    #[test]
    fn parse_and_render_roundtrip() {
        let b = bank();
        assert_eq!(b.classes.len(), 2);
        assert_eq!(b.classes[0].1.len(), 2);
        let again = PromptBank::parse(&b.render()).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn scores_equal_brute_force_average() {
        let b = bank();
        let img = toy_encode("a mass that is oval").unwrap();
        let (_, scores) = zero_shot_classify(&img, &b, toy_encode).unwrap();
        for (name, prompts) in &b.classes {
            let brute: f64 = prompts
                .iter()
                .map(|p| {
                    let e = toy_encode(p).unwrap();
                    let dot: f64 = img.iter().zip(&e).map(|(x, y)| x * y).sum();
                    let ni: f64 = img.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let ne: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
                    dot / (ni * ne)
                })
                .sum::<f64>()
                / prompts.len() as f64;
            let got = scores.iter().find(|(n, _)| n == name).unwrap().1;
            assert!((got - brute).abs() < 1e-9);
        }
    }

    #[test]
    fn single_prompt_reduces_to_nearest_neighbor() {
        let b = PromptBank::parse("# class: x\nalpha\n# class: y\nbeta\n").unwrap();
        let img = toy_encode("alpha").unwrap();
        let (pred, scores) = zero_shot_classify(&img, &b, toy_encode).unwrap();
        let sx = scores.iter().find(|(n, _)| n == "x").unwrap().1;
        let sy = scores.iter().find(|(n, _)| n == "y").unwrap().1;
        assert_eq!(pred, if sx >= sy { "x" } else { "y" });
    }

    #[test]
    fn identical_prompt_multiset_identical_scores() {
        let b1 = PromptBank::parse("# class: c\nfoo bar\nbaz qux\n").unwrap();
        let b2 = PromptBank::parse("# class: c\nfoo bar\nbaz qux\n").unwrap();
        let img = toy_encode("probe").unwrap();
        let (_, s1) = zero_shot_classify(&img, &b1, toy_encode).unwrap();
        let (_, s2) = zero_shot_classify(&img, &b2, toy_encode).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn argmax_invariant_under_positive_rescaling() {
        let b = bank();
        let img = toy_encode("irregular spiculated thing").unwrap();
        let (pred, scores) = zero_shot_classify(&img, &b, toy_encode).unwrap();
        for scale in [0.5, 2.0, 100.0] {
            let mut rescaled: Vec<(String, f64)> =
                scores.iter().map(|(n, s)| (n.clone(), s * scale)).collect();
            rescaled.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap()
                    .then_with(|| a.0.cmp(&b.0))
            });
            assert_eq!(rescaled[0].0, pred);
        }
    }

    #[test]
    fn lexicographic_tie_break() {
        let b = PromptBank::parse("# class: zebra\nsame\n# class: apple\nsame\n").unwrap();
        let img = toy_encode("same").unwrap();
        let (pred, _) = zero_shot_classify(&img, &b, toy_encode).unwrap();
        assert_eq!(pred, "apple");
    }

    #[test]
    fn malformed_banks_rejected() {
        assert!(PromptBank::parse("prompt without header\n").is_err());
        assert!(PromptBank::parse("# class: empty\n").is_err());
        assert!(PromptBank::parse("").is_err());
        assert!(PromptBank::parse("# class:\nprompt\n").is_err());
    }
}

//! Paired t-test with p-values from direct numerical integration of the
//! t density (adaptive Simpson; no lookup tables).

use ht_core::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

/// Lanczos approximation of ln Gamma (g = 7, 9 coefficients).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn t_pdf(x: f64, df: f64) -> f64 {
    let log_norm = ln_gamma((df + 1.0) / 2.0)
        - ln_gamma(df / 2.0)
        - 0.5 * (df * std::f64::consts::PI).ln();
    (log_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f((a + b) / 2.0) + f(b))
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = (a + b) / 2.0;
    let left = simpson(f, a, m);
    let right = simpson(f, m, b);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    adaptive(f, a, m, left, tol / 2.0, depth - 1) + adaptive(f, m, b, right, tol / 2.0, depth - 1)
}

/// Two-sided tail mass beyond |t| under the t distribution with `df`
/// degrees of freedom, to about 1e-8 absolute.
fn two_sided_p(t_abs: f64, df: usize) -> f64 {
    let dff = df as f64;
    let pdf = move |x: f64| t_pdf(x, dff);
    let half = adaptive(&pdf, 0.0, t_abs, simpson(&pdf, 0.0, t_abs), 1e-9, 40);
    (1.0 - 2.0 * half).clamp(0.0, 1.0)
}

/// Paired t-test over equal-length samples: t = mean(d) / (sd(d)/sqrt(n))
/// on d = a - b, df = n - 1, two-sided p. Zero-variance differences are a
/// degenerate-sample error.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Input(format!(
            "paired test needs equal lengths >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(Error::DegenerateSample(
            "differences have zero variance".to_string(),
        ));
    }
    let t = mean / (var.sqrt() / n.sqrt());
    let df = d.len() - 1;
    Ok(TTest {
        t,
        p: two_sided_p(t.abs(), df),
        df,
    })
}

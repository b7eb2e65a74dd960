//! Spectral and efficiency diagnostics over trained (or fresh) adapters.

use std::time::Instant;

use ht_core::adapter::HTParams;
use ht_core::error::{Error, Result};
use ht_core::heads::HeadParams;
use ht_core::model::{Adaptation, Model};
use ht_core::ops::spectral_energy;
use ht_core::tensor::Tensor;
use ht_core::Mode;
use ht_eval::mean_std;

#[derive(Debug, Clone, Copy)]
pub struct ThetaStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean/std/min/max of the spectral filter weights per adapter layer.
pub fn probe_theta(layers: &[HTParams]) -> Vec<ThetaStats> {
    layers
        .iter()
        .map(|l| {
            let data = l.theta.data();
            let (mean, std) = mean_std(data);
            let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            ThetaStats {
                mean,
                std,
                min,
                max,
            }
        })
        .collect()
}

/// Four-decimal `mean±std` formatting used in the diagnostic reports.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.4}\u{b1}{std:.4}")
}

/// Percent change in full-spectrum energy from `f_in` to `f_freq`.
pub fn spectral_energy_change(f_in: &Tensor, f_freq: &Tensor) -> Result<f64> {
    if f_in.shape() != f_freq.shape() {
        return Err(Error::Dimension(format!(
            "spectral_energy_change: shapes {:?} vs {:?}",
            f_in.shape(),
            f_freq.shape()
        )));
    }
    let e_in = spectral_energy(f_in)?;
    let e_out = spectral_energy(f_freq)?;
    if e_in == 0.0 {
        return Err(Error::DegenerateSample(
            "input spectral energy is zero".to_string(),
        ));
    }
    Ok(100.0 * (e_out - e_in) / e_in)
}

/// Per-layer spectral report from forwarding a probe set through an
/// HT-adapted model: mean theta stats, mean energy change, mean NE weights.
pub struct SpectralReport {
    pub theta: Vec<ThetaStats>,
    pub energy_change_pct: Vec<f64>,
    pub ne_weights: Vec<[f64; 3]>,
}

pub fn spectral_report(model: &Model, probes: &[Tensor]) -> Result<SpectralReport> {
    if probes.is_empty() {
        return Err(Error::Input("empty probe set".to_string()));
    }
    let layers = match &model.adaptation {
        Adaptation::Ht { layers, .. } => layers,
        _ => {
            return Err(Error::Config(
                "spectral probes need an HT-adapted model".to_string(),
            ))
        }
    };
    let depth = layers.len();
    let mut energy = vec![0.0f64; depth];
    let mut weights = vec![[0.0f64; 3]; depth];
    let mut batches = 0usize;
    for probe in probes {
        let (_, traces) = model.forward_traced(probe, Mode::Eval)?;
        if traces.len() != depth {
            return Err(Error::Contract(format!(
                "{} traces for {depth} adapter layers",
                traces.len()
            )));
        }
        for (i, t) in traces.iter().enumerate() {
            energy[i] += spectral_energy_change(&t.f_in, &t.f_freq)?;
            let b = t.ne_w.shape()[0];
            for bi in 0..b {
                for k in 0..3 {
                    weights[i][k] += t.ne_w.data()[bi * 3 + k] / b as f64;
                }
            }
        }
        batches += 1;
    }
    let n = batches as f64;
    for e in &mut energy {
        *e /= n;
    }
    for w in &mut weights {
        for v in w.iter_mut() {
            *v /= n;
        }
    }
    Ok(SpectralReport {
        theta: probe_theta(layers),
        energy_change_pct: energy,
        ne_weights: weights,
    })
}

/// (trainable, total) parameter counts over the model and optional heads.
pub fn count_params(model: &Model, heads: Option<&HeadParams>) -> (usize, usize) {
    let mut trainable = 0usize;
    let mut total = 0usize;
    for (_, t, is_trainable) in model.named_all() {
        total += t.numel();
        if is_trainable {
            trainable += t.numel();
        }
    }
    if let Some(h) = heads {
        let n = h.param_count();
        trainable += n;
        total += n;
    }
    (trainable, total)
}

#[derive(Debug, Clone, Copy)]
pub struct LatencyReport {
    pub mean_ms_per_image: f64,
    pub std_ms_per_image: f64,
    pub fps: f64,
    pub reps: usize,
    pub batch: usize,
}

/// Wall-clock forward latency over a deterministic input. Requires at
/// least 10 measured repetitions after 3 warmup passes; must run without
/// concurrent load for meaningful numbers.
pub fn bench_latency(model: &Model, batch: usize, reps: usize) -> Result<LatencyReport> {
    if reps < 10 {
        return Err(Error::Config(format!(
            "bench needs >= 10 repetitions, got {reps}"
        )));
    }
    if batch == 0 {
        return Err(Error::Config("bench batch must be >= 1".to_string()));
    }
    let s = model.weights.config.image_size;
    let data: Vec<f64> = (0..batch * s * s)
        .map(|i| ((i % 251) as f64) / 251.0)
        .collect();
    let input = Tensor::from_vec(&[batch, 1, s, s], data)?;
    for _ in 0..3 {
        model.forward(&input, Mode::Eval)?;
    }
    let mut per_image_ms = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        model.forward(&input, Mode::Eval)?;
        per_image_ms.push(t0.elapsed().as_secs_f64() * 1000.0 / batch as f64);
    }
    let (mean, std) = mean_std(&per_image_ms);
    Ok(LatencyReport {
        mean_ms_per_image: mean,
        std_ms_per_image: std,
        fps: 1000.0 / mean,
        reps,
        batch,
    })
}

/// Paired latency measurement with interleaved repetitions, which cancels
/// clock-speed drift between the two models. Returns (first, second).
pub fn bench_pair(
    a: &Model,
    b: &Model,
    batch: usize,
    reps: usize,
) -> Result<(LatencyReport, LatencyReport)> {
    if reps < 10 {
        return Err(Error::Config(format!(
            "bench needs >= 10 repetitions, got {reps}"
        )));
    }
    let make_input = |model: &Model| -> Result<Tensor> {
        let s = model.weights.config.image_size;
        let data: Vec<f64> = (0..batch * s * s)
            .map(|i| ((i % 251) as f64) / 251.0)
            .collect();
        Tensor::from_vec(&[batch, 1, s, s], data)
    };
    let ia = make_input(a)?;
    let ib = make_input(b)?;
    for _ in 0..3 {
        a.forward(&ia, Mode::Eval)?;
        b.forward(&ib, Mode::Eval)?;
    }
    let mut ta = Vec::with_capacity(reps);
    let mut tb = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        a.forward(&ia, Mode::Eval)?;
        ta.push(t0.elapsed().as_secs_f64() * 1000.0 / batch as f64);
        let t1 = Instant::now();
        b.forward(&ib, Mode::Eval)?;
        tb.push(t1.elapsed().as_secs_f64() * 1000.0 / batch as f64);
    }
    let report = |times: &[f64]| {
        let (mean, std) = mean_std(times);
        LatencyReport {
            mean_ms_per_image: mean,
            std_ms_per_image: std,
            fps: 1000.0 / mean,
            reps,
            batch,
        }
    };
    Ok((report(&ta), report(&tb)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ht_core::adapter::HTConfig;
    use ht_core::vit::{init_backbone, ViTConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::rc::Rc;

    fn tiny_model() -> Model {
        let mut c = ViTConfig::sized(2, 16, 2, 2.0);
        c.image_size = 32;
        c.tap_indices = vec![0, 1];
        let w = Rc::new(init_backbone(&c, 3).unwrap());
        Model::attach_ht(w, HTConfig::new(16, 4, 4), 1).unwrap()
    }

    #[test]
    fn fresh_theta_reports_exact_ones() {
        let model = tiny_model();
        let layers = match &model.adaptation {
            Adaptation::Ht { layers, .. } => layers,
            _ => unreachable!(),
        };
        for stats in probe_theta(layers) {
            assert_eq!(stats.mean, 1.0);
            assert_eq!(stats.std, 0.0);
            assert_eq!(format_mean_std(stats.mean, stats.std), "1.0000\u{b1}0.0000");
        }
    }

    #[test]
    fn energy_change_theta_one_is_zero_uniform_scaling_squares() {
        let x = Tensor::from_vec(
            &[1, 2, 4, 4],
            (0..32).map(|i| (i as f64 * 0.7).sin()).collect(),
        )
        .unwrap();
        let same = spectral_energy_change(&x, &x).unwrap();
        assert!(same.abs() < 1e-9);
        let scaled = ht_core::ops::scale(&x, 0.9).unwrap();
        let change = spectral_energy_change(&x, &scaled).unwrap();
        assert!((change - (0.81 - 1.0) * 100.0).abs() < 0.01, "{change}");
        let zero = Tensor::zeros(&[1, 2, 4, 4]);
        assert_eq!(
            spectral_energy_change(&zero, &x).err().unwrap().category(),
            "degenerate-sample"
        );
    }

    #[test]
    fn spectral_report_rows_sum_to_one_and_are_deterministic() {
        let model = tiny_model();
        let s = 32;
        let probes: Vec<Tensor> = (0..2)
            .map(|k| {
                Tensor::from_vec(
                    &[1, 1, s, s],
                    (0..s * s).map(|i| ((i + k * 7) % 97) as f64 / 97.0).collect(),
                )
                .unwrap()
            })
            .collect();
        let a = spectral_report(&model, &probes).unwrap();
        for w in &a.ne_weights {
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "{w:?}");
            // fresh adapters with zero squeeze biases: near-uniform thirds
            for v in w {
                assert!((v - 1.0 / 3.0).abs() < 0.05, "{w:?}");
            }
        }
        // theta = 1 path changes nothing
        for e in &a.energy_change_pct {
            assert!(e.abs() < 1e-9);
        }
        let b = spectral_report(&model, &probes).unwrap();
        assert_eq!(a.ne_weights, b.ne_weights);
    }

    #[test]
    fn count_params_frozen_backbone_trainable_zero() {
        let mut c = ViTConfig::sized(2, 16, 2, 2.0);
        c.image_size = 32;
        c.tap_indices = vec![0, 1];
        let w = Rc::new(init_backbone(&c, 3).unwrap());
        let frozen = Model::frozen(w.clone());
        let (trainable, total) = count_params(&frozen, None);
        assert_eq!(trainable, 0);
        assert_eq!(total, w.param_count());
        let adapted = Model::attach_ht(w, HTConfig::new(16, 4, 4), 1).unwrap();
        let (trainable, _) = count_params(&adapted, None);
        assert_eq!(trainable, 2 * ht_core::adapter::ht_param_count(16, 4, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hp = HeadParams::init(
            &ht_core::heads::HeadConfig::new(16, vec![0, 1], 2),
            &mut rng,
        )
        .unwrap();
        let (with_heads, _) = count_params(&adapted, Some(&hp));
        assert_eq!(with_heads, trainable + hp.param_count());
    }

    #[test]
    fn paired_bench_orders_adapted_after_frozen() {
        // wide adapter (d = 48 at D = 64) so the extra work dominates noise
        let c = ViTConfig::toy();
        let w = Rc::new(init_backbone(&c, 9).unwrap());
        let frozen = Model::frozen(w.clone());
        let adapted = Model::attach_ht(w, HTConfig::new(64, 48, 8), 1).unwrap();
        let (base, full) = bench_pair(&frozen, &adapted, 1, 12).unwrap();
        assert!(
            full.mean_ms_per_image >= base.mean_ms_per_image,
            "adapted {:.3} ms should not beat frozen {:.3} ms",
            full.mean_ms_per_image,
            base.mean_ms_per_image
        );
        // two paired runs agree within +-3 sigma
        let (base2, full2) = bench_pair(&frozen, &adapted, 1, 12).unwrap();
        for (a, b) in [(&base, &base2), (&full, &full2)] {
            let gap = (a.mean_ms_per_image - b.mean_ms_per_image).abs();
            let spread = 3.0 * (a.std_ms_per_image + b.std_ms_per_image);
            assert!(gap <= spread.max(0.5), "gap {gap:.4} ms vs spread {spread:.4} ms");
        }
    }

    #[test]
    fn bench_rejects_few_reps_and_reports_fps() {
        let model = tiny_model();
        assert_eq!(
            bench_latency(&model, 1, 5).err().unwrap().category(),
            "config"
        );
        let r = bench_latency(&model, 2, 10).unwrap();
        assert!(r.mean_ms_per_image > 0.0);
        assert!((r.fps - 1000.0 / r.mean_ms_per_image).abs() < 1e-9);
    }
}

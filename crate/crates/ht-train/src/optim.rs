//! AdamW with decoupled weight decay, and the cosine learning-rate
//! schedule.

use ht_core::error::{Error, Result};
use ht_core::graph::Gradients;
use ht_core::tensor::Tensor;

pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> AdamW {
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over a stable-ordered parameter list. Moments are kept by
    /// position; the list must keep the same shapes across steps. Each
    /// parameter tensor is replaced by a fresh trainable leaf.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor)],
        grads: &Gradients,
        lr: f64,
    ) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (name, p)) in params.iter_mut().enumerate() {
            if self.m[i].len() != p.numel() {
                return Err(Error::Dimension(format!(
                    "optimizer state for `{name}` has {} entries, tensor has {}",
                    self.m[i].len(),
                    p.numel()
                )));
            }
            let g = grads.get(p);
            let mut new_data = Vec::with_capacity(p.numel());
            for (j, (&w, &gj)) in p.data().iter().zip(g.data()).enumerate() {
                let m = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * gj;
                let v = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * gj * gj;
                self.m[i][j] = m;
                self.v[i][j] = v;
                let mhat = m / bc1;
                let vhat = v / bc2;
                new_data.push(w - lr * mhat / (vhat.sqrt() + self.eps) - lr * self.weight_decay * w);
            }
            **p = Tensor::param(p.shape(), new_data)?;
        }
        Ok(())
    }
}

/// Cosine annealing: `floor + 0.5 (base - floor) (1 + cos(pi step/total))`.
pub fn cosine_lr(step: usize, total_steps: usize, base: f64, floor: f64) -> Result<f64> {
    if step > total_steps || total_steps == 0 {
        return Err(Error::Input(format!(
            "cosine_lr: step {step} outside 0..={total_steps}"
        )));
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(floor + 0.5 * (base - floor) * (1.0 + phase.cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ht_core::graph::backward;
    use ht_core::ops;

    fn grad_of(p: &Tensor, g: &[f64]) -> Gradients {
        // build a graph whose gradient at p is exactly g
        let weights = Tensor::from_vec(p.shape(), g.to_vec()).unwrap();
        let loss = ops::sum_all(&ops::mul(p, &weights).unwrap()).unwrap();
        backward(&loss, &Tensor::ones(&[1])).unwrap()
    }

    #[test]
    fn first_step_is_signed_lr() {
        // w=1, g=1, lr=0.1, wd=0: bias correction makes step = lr * sign(g)
        let mut w = Tensor::param(&[1], vec![1.0]).unwrap();
        let grads = grad_of(&w, &[1.0]);
        let mut opt = AdamW::new(0.9, 0.95, 1e-8, 0.0);
        let mut params = vec![("w".to_string(), &mut w)];
        opt.step(&mut params, &grads, 0.1).unwrap();
        assert!((w.data()[0] - 0.9).abs() < 1e-6, "{}", w.data()[0]);
    }

    #[test]
    fn decay_is_decoupled() {
        // g=0, wd=0.01, lr=0.1: w shrinks by exactly lr*wd*w
        let mut w = Tensor::param(&[2], vec![2.0, -4.0]).unwrap();
        let grads = grad_of(&w, &[0.0, 0.0]);
        let mut opt = AdamW::new(0.9, 0.95, 1e-8, 0.01);
        let mut params = vec![("w".to_string(), &mut w)];
        opt.step(&mut params, &grads, 0.1).unwrap();
        assert_eq!(w.data()[0], 2.0 - 0.1 * 0.01 * 2.0);
        assert_eq!(w.data()[1], -4.0 - 0.1 * 0.01 * -4.0);
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut w = Tensor::param(&[1], vec![3.0]).unwrap();
        let mut opt = AdamW::new(0.9, 0.95, 1e-8, 0.0);
        for _ in 0..2 {
            let grads = grad_of(&w, &[0.0]);
            let mut params = vec![("w".to_string(), &mut w)];
            opt.step(&mut params, &grads, 0.1).unwrap();
        }
        assert_eq!(w.data()[0], 3.0);
    }

    #[test]
    fn matches_reference_adam_recursion_over_100_steps() {
        // independent per-coordinate recursion on pseudo-random gradients
        let (b1, b2, eps, lr) = (0.9, 0.95, 1e-8, 0.01);
        let mut w = Tensor::param(&[1], vec![0.7]).unwrap();
        let mut opt = AdamW::new(b1, b2, eps, 0.0);
        let (mut rw, mut rm, mut rv) = (0.7f64, 0.0f64, 0.0f64);
        let mut state = 0x77u64;
        for t in 1..=100u32 {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let g = ((state % 2000) as f64 / 1000.0) - 1.0;
            let grads = grad_of(&w, &[g]);
            let mut params = vec![("w".to_string(), &mut w)];
            opt.step(&mut params, &grads, lr).unwrap();
            rm = b1 * rm + (1.0 - b1) * g;
            rv = b2 * rv + (1.0 - b2) * g * g;
            let mhat = rm / (1.0 - b1.powi(t as i32));
            let vhat = rv / (1.0 - b2.powi(t as i32));
            rw -= lr * mhat / (vhat.sqrt() + eps);
            assert!(
                (w.data()[0] - rw).abs() < 1e-10,
                "step {t}: {} vs {rw}",
                w.data()[0]
            );
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-4, 0.0).unwrap(), 1e-4);
        let end = cosine_lr(100, 100, 1e-4, 0.0).unwrap();
        assert!(end.abs() < 1e-20);
        let mid = cosine_lr(50, 100, 1e-4, 0.0).unwrap();
        assert!((mid - 5e-5).abs() < 1e-12);
        assert_eq!(
            cosine_lr(101, 100, 1e-4, 0.0).err().unwrap().category(),
            "input"
        );
    }
}

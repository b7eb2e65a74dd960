//! Deterministic pseudo-random initialization helpers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Standard normal sample via Box-Muller (keeps the byte stream independent
/// of distribution-crate internals, so seeds stay stable).
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// Truncated normal: resample until |z| <= 2, then scale by `std`.
pub fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let z = normal(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Trainable tensor filled from a truncated normal with the given std.
pub fn trunc_normal_param(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| trunc_normal(rng, std)).collect();
    Tensor::param(shape, data).expect("trunc_normal_param: shape/buffer agree")
}

/// Frozen tensor filled from a truncated normal with the given std.
pub fn trunc_normal_frozen(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| trunc_normal(rng, std)).collect();
    Tensor::from_vec(shape, data).expect("trunc_normal_frozen: shape/buffer agree")
}

/// Uniform tensor in [lo, hi), frozen.
pub fn uniform_frozen(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("uniform_frozen: shape/buffer agree")
}

/// FNV-1a checksum over the bit patterns of a tensor list, in order.
/// Used to verify that frozen weights never change.
pub fn checksum(tensors: &[&Tensor]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in tensors {
        for v in t.data() {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    h
}

/// FNV-1a over a byte slice; also used by the hashing tokenizer.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn same_seed_same_draws() {
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            assert_eq!(trunc_normal(&mut a, 0.02), trunc_normal(&mut b, 0.02));
        }
    }

    #[test]
    fn trunc_normal_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(trunc_normal(&mut rng, 1.0).abs() <= 2.0);
        }
    }

    #[test]
    fn checksum_detects_change() {
        let a = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0000001]).unwrap();
        assert_ne!(checksum(&[&a]), checksum(&[&b]));
        assert_eq!(checksum(&[&a]), checksum(&[&a.detach()]));
    }
}

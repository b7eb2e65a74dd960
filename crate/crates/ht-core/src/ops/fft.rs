use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::graph::OpRecord;
use crate::tensor::Tensor;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_line(buf: &mut [Complex<f64>], inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let plan = if inverse {
            p.plan_fft_inverse(buf.len())
        } else {
            p.plan_fft_forward(buf.len())
        };
        plan.process(buf);
    });
}

/// Half-spectrum width for a real transform of width `w`.
fn half_w(w: usize) -> usize {
    w / 2 + 1
}

/// Unnormalized forward real 2D FFT of a row-major `h x w` map, stored as
/// the half spectrum `h x (w/2 + 1)`; the missing bins follow from Hermitian
/// symmetry `X[ky, kx] = conj(X[(h-ky)%h, (w-kx)%w])`.
fn rfft2(map: &[f64], h: usize, w: usize) -> Vec<Complex<f64>> {
    let hw = half_w(w);
    let mut rows: Vec<Complex<f64>> = Vec::with_capacity(h * w);
    let mut spec = vec![Complex::new(0.0, 0.0); h * hw];
    let mut line = vec![Complex::new(0.0, 0.0); w];
    for y in 0..h {
        for x in 0..w {
            line[x] = Complex::new(map[y * w + x], 0.0);
        }
        fft_line(&mut line, false);
        rows.extend_from_slice(&line);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for kx in 0..hw {
        for y in 0..h {
            col[y] = rows[y * w + kx];
        }
        fft_line(&mut col, false);
        for (ky, v) in col.iter().enumerate() {
            spec[ky * hw + kx] = *v;
        }
    }
    spec
}

/// Inverse of [`rfft2`], normalized by `1/(h*w)`.
fn irfft2(spec: &[Complex<f64>], h: usize, w: usize) -> Vec<f64> {
    let hw = half_w(w);
    let mut cols = vec![Complex::new(0.0, 0.0); h * hw];
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for kx in 0..hw {
        for ky in 0..h {
            col[ky] = spec[ky * hw + kx];
        }
        fft_line(&mut col, true);
        for (y, v) in col.iter().enumerate() {
            cols[y * hw + kx] = *v;
        }
    }
    let norm = 1.0 / (h as f64 * w as f64);
    let mut out = vec![0.0; h * w];
    let mut line = vec![Complex::new(0.0, 0.0); w];
    for y in 0..h {
        line[..hw].copy_from_slice(&cols[y * hw..(y + 1) * hw]);
        for kx in hw..w {
            line[kx] = cols[y * hw + (w - kx)].conj();
        }
        fft_line(&mut line, true);
        for x in 0..w {
            out[y * w + x] = line[x].re * norm;
        }
    }
    out
}

/// Weight of a stored half-spectrum column when summing over the full
/// spectrum: mirrored columns are stored once and count twice.
fn hermitian_mult(kx: usize, w: usize) -> f64 {
    if kx == 0 || (w % 2 == 0 && kx == w / 2) {
        1.0
    } else {
        2.0
    }
}

/// Spectral energy (sum of squared magnitudes over the full 2D spectrum) of
/// every spatial map in a `[..., H, W]` tensor. By Parseval this equals
/// `H*W * sum(x^2)`, which tests assert.
pub fn spectral_energy(x: &Tensor) -> Result<f64> {
    let rank = x.shape().len();
    if rank < 2 {
        return Err(Error::Dimension(format!(
            "spectral_energy: need at least 2 dims, got {:?}",
            x.shape()
        )));
    }
    let (h, w) = (x.shape()[rank - 2], x.shape()[rank - 1]);
    let maps = x.numel() / (h * w);
    let hw = half_w(w);
    let mut energy = 0.0;
    for m in 0..maps {
        let spec = rfft2(&x.data()[m * h * w..(m + 1) * h * w], h, w);
        for ky in 0..h {
            for kx in 0..hw {
                energy += hermitian_mult(kx, w) * spec[ky * hw + kx].norm_sqr();
            }
        }
    }
    Ok(energy)
}

/// Learnable channel-wise spectral filter: `irfft2(rfft2(x) * theta)` with
/// `theta[c]` multiplying every spectral bin of channel `c`. The backward
/// pass runs through the spectral domain; the gradient for `theta`
/// accumulates over stored half-spectrum bins with Hermitian double
/// counting for the mirrored ones.
pub fn rfft2_filter(x: &Tensor, theta: &Tensor) -> Result<Tensor> {
    super::expect_rank("rfft2_filter", x, 4)?;
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if theta.shape() != [c] {
        return Err(Error::Dimension(format!(
            "rfft2_filter: theta shape {:?} does not match {c} channels",
            theta.shape()
        )));
    }
    let hw = half_w(w);
    let mut out = vec![0.0; b * c * h * w];
    let mut spectra: Vec<Complex<f64>> = Vec::with_capacity(b * c * h * hw);
    for bi in 0..b {
        for ci in 0..c {
            let off = (bi * c + ci) * h * w;
            let spec = rfft2(&x.data()[off..off + h * w], h, w);
            let th = theta.data()[ci];
            let filtered: Vec<Complex<f64>> = spec.iter().map(|&v| v * th).collect();
            out[off..off + h * w].copy_from_slice(&irfft2(&filtered, h, w));
            spectra.extend_from_slice(&spec);
        }
    }
    let (xc, tc) = (x.clone(), theta.clone());
    Tensor::from_op(x.shape().to_vec(), out, &[x, theta], move || OpRecord {
        name: "rfft2_filter",
        inputs: vec![xc.clone(), tc.clone()],
        backward: Box::new(move |grad| {
            let mut dx = vec![0.0; xc.numel()];
            let mut dtheta = vec![0.0; c];
            let norm = 1.0 / (h as f64 * w as f64);
            for bi in 0..b {
                for ci in 0..c {
                    let off = (bi * c + ci) * h * w;
                    let gspec = rfft2(&grad.data()[off..off + h * w], h, w);
                    let th = tc.data()[ci];
                    let filtered: Vec<Complex<f64>> =
                        gspec.iter().map(|&v| v * th).collect();
                    dx[off..off + h * w].copy_from_slice(&irfft2(&filtered, h, w));
                    let xspec = &spectra[(bi * c + ci) * h * hw..(bi * c + ci + 1) * h * hw];
                    let mut acc = 0.0;
                    for ky in 0..h {
                        for kx in 0..hw {
                            let i = ky * hw + kx;
                            acc += hermitian_mult(kx, w) * (gspec[i] * xspec[i].conj()).re;
                        }
                    }
                    dtheta[ci] += acc * norm;
                }
            }
            Ok(vec![
                Some(Tensor::from_vec(xc.shape(), dx)?),
                Some(Tensor::from_vec(&[c], dtheta)?),
            ])
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_theta_is_identity() {
        let x = Tensor::from_vec(
            &[1, 1, 3, 4],
            (0..12).map(|i| (i as f64).sin()).collect(),
        )
        .unwrap();
        let theta = Tensor::ones(&[1]);
        let y = rfft2_filter(&x, &theta).unwrap();
        let max = x.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 1e-6 * max);
        }
    }

    #[test]
    fn uniform_theta_scales_spatially() {
        // theta_c = 0.5 for every c equals 0.5 * F elementwise
        let x = Tensor::from_vec(
            &[1, 2, 4, 4],
            (0..32).map(|i| (i as f64 * 0.37).cos()).collect(),
        )
        .unwrap();
        let theta = Tensor::full(&[2], 0.5);
        let y = rfft2_filter(&x, &theta).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((0.5 * a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn hand_case_single_channel() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let theta = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        let y = rfft2_filter(&x, &theta).unwrap();
        for (got, want) in y.data().iter().zip([2., 4., 6., 8.]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_theta_annihilates_its_channel() {
        let x = Tensor::from_vec(
            &[1, 2, 3, 3],
            (0..18).map(|i| (i as f64 * 0.61).cos()).collect(),
        )
        .unwrap();
        let theta = Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap();
        let y = rfft2_filter(&x, &theta).unwrap();
        for v in &y.data()[..9] {
            assert!(v.abs() < 1e-12, "zeroed channel leaks {v}");
        }
        for (a, b) in x.data()[9..].iter().zip(&y.data()[9..]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn parseval_energy() {
        let x = Tensor::from_vec(
            &[1, 1, 5, 7],
            (0..35).map(|i| ((i * i) as f64 * 0.11).sin()).collect(),
        )
        .unwrap();
        let spatial: f64 = x.data().iter().map(|v| v * v).sum();
        let e = spectral_energy(&x).unwrap();
        assert!((e - 35.0 * spatial).abs() < 1e-8 * e.abs().max(1.0));
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        let theta = Tensor::ones(&[2]);
        assert_eq!(
            rfft2_filter(&x, &theta).unwrap_err().category(),
            "dimension"
        );
    }
}

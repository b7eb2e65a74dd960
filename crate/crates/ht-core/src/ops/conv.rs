use crate::error::{Error, Result};
use crate::graph::OpRecord;
use crate::tensor::Tensor;

fn check_image(op: &str, x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    super::expect_rank(op, x, 4)?;
    let s = x.shape();
    Ok((s[0], s[1], s[2], s[3]))
}

/// Same-padding correlation of one `h x w` map with a `k x k` kernel,
/// accumulated into `dst`. `flip` correlates with the 180-degree rotated
/// kernel, which is what the input gradient needs.
fn dw_correlate(src: &[f64], ker: &[f64], dst: &mut [f64], h: usize, w: usize, k: usize, flip: bool) {
    let pad = (k - 1) / 2;
    for y in 0..h {
        for xx in 0..w {
            let mut acc = 0.0;
            for dy in 0..k {
                let sy = y as isize + dy as isize - pad as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for dx in 0..k {
                    let sx = xx as isize + dx as isize - pad as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let kidx = if flip {
                        (k - 1 - dy) * k + (k - 1 - dx)
                    } else {
                        dy * k + dx
                    };
                    acc += src[sy as usize * w + sx as usize] * ker[kidx];
                }
            }
            dst[y * w + xx] += acc;
        }
    }
}

/// Depth-wise 2D convolution with zero "same" padding. `kernels` has shape
/// `[C, k, k]` with odd `k`; channel `c` of the output depends only on
/// channel `c` of the input.
pub fn depthwise_conv2d(x: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = check_image("depthwise_conv2d", x)?;
    super::expect_rank("depthwise_conv2d: kernels", kernels, 3)?;
    let (kc, kh, kw) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
    );
    if kc != c {
        return Err(Error::Dimension(format!(
            "depthwise_conv2d: {c} input channels but {kc} kernels"
        )));
    }
    if kh != kw {
        return Err(Error::Config(format!(
            "depthwise_conv2d: kernel must be square, got {kh}x{kw}"
        )));
    }
    if kh % 2 == 0 {
        return Err(Error::Config(format!(
            "depthwise_conv2d: kernel size {kh} must be odd for same padding"
        )));
    }
    let k = kh;
    let mut out = vec![0.0; b * c * h * w];
    for bi in 0..b {
        for ci in 0..c {
            let src = &x.data()[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
            let ker = &kernels.data()[ci * k * k..(ci + 1) * k * k];
            dw_correlate(
                src,
                ker,
                &mut out[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w],
                h,
                w,
                k,
                false,
            );
        }
    }
    let (xc, kc_t) = (x.clone(), kernels.clone());
    Tensor::from_op(vec![b, c, h, w], out, &[x, kernels], move || OpRecord {
        name: "depthwise_conv2d",
        inputs: vec![xc.clone(), kc_t.clone()],
        backward: Box::new(move |grad| {
            let mut dx = vec![0.0; xc.numel()];
            let mut dk = vec![0.0; kc_t.numel()];
            let pad = (k - 1) / 2;
            for bi in 0..b {
                for ci in 0..c {
                    let g = &grad.data()[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    let ker = &kc_t.data()[ci * k * k..(ci + 1) * k * k];
                    dw_correlate(
                        g,
                        ker,
                        &mut dx[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w],
                        h,
                        w,
                        k,
                        true,
                    );
                    let src = &xc.data()[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    for dy in 0..k {
                        for dxk in 0..k {
                            let mut acc = 0.0;
                            for y in 0..h {
                                let sy = y as isize + dy as isize - pad as isize;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for xx in 0..w {
                                    let sx = xx as isize + dxk as isize - pad as isize;
                                    if sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    acc += g[y * w + xx] * src[sy as usize * w + sx as usize];
                                }
                            }
                            dk[ci * k * k + dy * k + dxk] += acc;
                        }
                    }
                }
            }
            Ok(vec![
                Some(Tensor::from_vec(xc.shape(), dx)?),
                Some(Tensor::from_vec(kc_t.shape(), dk)?),
            ])
        }),
    })
}

fn add_bias_rows(data: &mut [f64], bias: &[f64], rows: usize, hw: usize, batches: usize) {
    for bi in 0..batches {
        for r in 0..rows {
            let off = (bi * rows + r) * hw;
            let bv = bias[r];
            for v in &mut data[off..off + hw] {
                *v += bv;
            }
        }
    }
}

/// 1x1 convolution: a per-pixel linear map across channels.
/// `weight` has shape `[C_out, C_in]`, optional `bias` `[C_out]`.
pub fn pointwise_conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (b, c, h, w) = check_image("pointwise_conv2d", x)?;
    super::expect_rank("pointwise_conv2d: weight", weight, 2)?;
    let (co, ci) = (weight.shape()[0], weight.shape()[1]);
    if ci != c {
        return Err(Error::Dimension(format!(
            "pointwise_conv2d: weight expects {ci} channels, input has {c}"
        )));
    }
    if let Some(bt) = bias {
        if bt.shape() != [co] {
            return Err(Error::Dimension(format!(
                "pointwise_conv2d: bias shape {:?} does not match {co} output channels",
                bt.shape()
            )));
        }
    }
    let hw = h * w;
    let mut out = vec![0.0; b * co * hw];
    for bi in 0..b {
        // out[bi] (co x hw) = weight (co x c) * x[bi] (c x hw)
        unsafe {
            matrixmultiply::dgemm(
                co,
                c,
                hw,
                1.0,
                weight.data().as_ptr(),
                c as isize,
                1,
                x.data()[bi * c * hw..].as_ptr(),
                hw as isize,
                1,
                0.0,
                out[bi * co * hw..].as_mut_ptr(),
                hw as isize,
                1,
            );
        }
    }
    if let Some(bt) = bias {
        add_bias_rows(&mut out, bt.data(), co, hw, b);
    }
    let mut tracked: Vec<&Tensor> = vec![x, weight];
    if let Some(bt) = bias {
        tracked.push(bt);
    }
    let (xc, wc) = (x.clone(), weight.clone());
    let biasc = bias.cloned();
    Tensor::from_op(vec![b, co, h, w], out, &tracked, move || {
        let mut inputs = vec![xc.clone(), wc.clone()];
        if let Some(bt) = &biasc {
            inputs.push(bt.clone());
        }
        let (xc, wc, biasc) = (xc.clone(), wc.clone(), biasc.clone());
        OpRecord {
            name: "pointwise_conv2d",
            inputs,
            backward: Box::new(move |grad| {
                let mut dx = vec![0.0; xc.numel()];
                let mut dw = vec![0.0; wc.numel()];
                for bi in 0..b {
                    let g = &grad.data()[bi * co * hw..(bi + 1) * co * hw];
                    unsafe {
                        // dx[bi] (c x hw) = weight^T (c x co) * g (co x hw)
                        matrixmultiply::dgemm(
                            c,
                            co,
                            hw,
                            1.0,
                            wc.data().as_ptr(),
                            1,
                            c as isize,
                            g.as_ptr(),
                            hw as isize,
                            1,
                            0.0,
                            dx[bi * c * hw..].as_mut_ptr(),
                            hw as isize,
                            1,
                        );
                        // dw += g (co x hw) * x[bi]^T (hw x c)
                        matrixmultiply::dgemm(
                            co,
                            hw,
                            c,
                            1.0,
                            g.as_ptr(),
                            hw as isize,
                            1,
                            xc.data()[bi * c * hw..].as_ptr(),
                            1,
                            hw as isize,
                            1.0,
                            dw.as_mut_ptr(),
                            c as isize,
                            1,
                        );
                    }
                }
                let mut grads = vec![
                    Some(Tensor::from_vec(xc.shape(), dx)?),
                    Some(Tensor::from_vec(wc.shape(), dw)?),
                ];
                if biasc.is_some() {
                    let mut db = vec![0.0; co];
                    for bi in 0..b {
                        for r in 0..co {
                            let off = (bi * co + r) * hw;
                            db[r] += grad.data()[off..off + hw].iter().sum::<f64>();
                        }
                    }
                    grads.push(Some(Tensor::from_vec(&[co], db)?));
                }
                Ok(grads)
            }),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depthwise_identity_kernel() {
        let x = Tensor::from_vec(&[1, 2, 3, 3], (0..18).map(|i| i as f64).collect()).unwrap();
        let mut k = vec![0.0; 2 * 9];
        k[4] = 1.0; // center of channel 0
        k[9 + 4] = 1.0;
        let kt = Tensor::from_vec(&[2, 3, 3], k).unwrap();
        let y = depthwise_conv2d(&x, &kt).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn depthwise_rejects_even_kernel() {
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        let k = Tensor::zeros(&[1, 2, 2]);
        assert_eq!(
            depthwise_conv2d(&x, &k).unwrap_err().category(),
            "config"
        );
    }

    #[test]
    fn depthwise_matches_nested_loop_reference() {
        // hand-chosen 3x3 input and kernel, single channel
        let x = Tensor::from_vec(&[1, 1, 3, 3], vec![1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap();
        let k = Tensor::from_vec(&[1, 3, 3], vec![0., 1., 0., 1., -4., 1., 0., 1., 0.]).unwrap();
        let y = depthwise_conv2d(&x, &k).unwrap();
        // reference computed by the definition with zero padding
        let mut want = vec![0.0; 9];
        let xs = [1., 2., 3., 4., 5., 6., 7., 8., 9.];
        let ks = [0., 1., 0., 1., -4., 1., 0., 1., 0.];
        for y0 in 0..3i32 {
            for x0 in 0..3i32 {
                let mut acc = 0.0;
                for dy in -1..=1i32 {
                    for dx in -1..=1i32 {
                        let (sy, sx) = (y0 + dy, x0 + dx);
                        if (0..3).contains(&sy) && (0..3).contains(&sx) {
                            acc += xs[(sy * 3 + sx) as usize]
                                * ks[((dy + 1) * 3 + dx + 1) as usize];
                        }
                    }
                }
                want[(y0 * 3 + x0) as usize] = acc;
            }
        }
        assert_eq!(y.data(), &want[..]);
    }

    #[test]
    fn uniform_kernel_on_constant_image() {
        // interior stays at c; borders shrink by the zero-padding coverage
        let c = 2.5;
        let x = Tensor::full(&[1, 1, 5, 5], c);
        let k = Tensor::full(&[1, 3, 3], 1.0 / 9.0);
        let y = depthwise_conv2d(&x, &k).unwrap();
        for yy in 1..4 {
            for xx in 1..4 {
                assert!((y.data()[yy * 5 + xx] - c).abs() < 1e-12);
            }
        }
        // corner covers 4 of 9 taps
        assert!((y.data()[0] - c * 4.0 / 9.0).abs() < 1e-12);
        // edge covers 6 of 9 taps
        assert!((y.data()[2] - c * 6.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn pointwise_matches_per_pixel_matmul_oracle() {
        // random 3 -> 2 case against reshape-to-(B*H*W)xC then matmul
        let (b, c, co, h, w) = (2usize, 3usize, 2usize, 3usize, 4usize);
        let xv: Vec<f64> = (0..b * c * h * w).map(|i| ((i * 31 % 17) as f64) / 8.5 - 1.0).collect();
        let wv: Vec<f64> = (0..co * c).map(|i| ((i * 13 % 7) as f64) / 3.5 - 1.0).collect();
        let bv: Vec<f64> = (0..co).map(|i| i as f64 * 0.25).collect();
        let x = Tensor::from_vec(&[b, c, h, w], xv.clone()).unwrap();
        let wt = Tensor::from_vec(&[co, c], wv.clone()).unwrap();
        let bt = Tensor::from_vec(&[co], bv.clone()).unwrap();
        let y = pointwise_conv2d(&x, &wt, Some(&bt)).unwrap();
        for bi in 0..b {
            for p in 0..h * w {
                for o in 0..co {
                    let mut want = bv[o];
                    for ci in 0..c {
                        want += wv[o * c + ci] * xv[(bi * c + ci) * h * w + p];
                    }
                    let got = y.data()[(bi * co + o) * h * w + p];
                    assert!((got - want).abs() < 1e-6, "({bi},{o},{p})");
                }
            }
        }
    }

    #[test]
    fn pointwise_is_per_pixel_linear_map() {
        // C=2 -> 1 with weights [1, 1]: output is channel sum per pixel
        let x = Tensor::from_vec(&[1, 2, 2, 2], vec![1., 2., 3., 4., 10., 20., 30., 40.]).unwrap();
        let w = Tensor::from_vec(&[1, 2], vec![1., 1.]).unwrap();
        let y = pointwise_conv2d(&x, &w, None).unwrap();
        assert_eq!(y.data(), &[11., 22., 33., 44.]);
    }
}

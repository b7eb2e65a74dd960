use crate::error::{Error, Result};
use crate::graph::OpRecord;
use crate::tensor::Tensor;

/// Source coordinate of output pixel `o` under the half-pixel-centers
/// convention, clamped to the valid range.
fn src_coord(o: usize, out_len: usize, in_len: usize) -> f64 {
    let s = (o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
    s.clamp(0.0, (in_len - 1) as f64)
}

/// Bilinear upsampling of a `[B, C, h, w]` tensor to `[B, C, h_out, w_out]`
/// with half-pixel-center mapping and edge clamping.
pub fn bilinear_upsample(x: &Tensor, h_out: usize, w_out: usize) -> Result<Tensor> {
    super::expect_rank("bilinear_upsample", x, 4)?;
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if h_out == 0 || w_out == 0 {
        return Err(Error::Config(
            "bilinear_upsample: zero output extent".to_string(),
        ));
    }
    if h_out < h || w_out < w {
        return Err(Error::Config(format!(
            "bilinear_upsample: target {h_out}x{w_out} smaller than source {h}x{w}"
        )));
    }
    // Per-row/column interpolation tables shared by every map.
    let vtab: Vec<(usize, usize, f64)> = (0..h_out)
        .map(|o| {
            let s = src_coord(o, h_out, h);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(h - 1);
            (lo, hi, s - lo as f64)
        })
        .collect();
    let htab: Vec<(usize, usize, f64)> = (0..w_out)
        .map(|o| {
            let s = src_coord(o, w_out, w);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(w - 1);
            (lo, hi, s - lo as f64)
        })
        .collect();
    let maps = b * c;
    let mut out = vec![0.0; maps * h_out * w_out];
    for m in 0..maps {
        let src = &x.data()[m * h * w..(m + 1) * h * w];
        let dst = &mut out[m * h_out * w_out..(m + 1) * h_out * w_out];
        for (oy, &(y0, y1, fy)) in vtab.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in htab.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * w_out + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    let xc = x.clone();
    Tensor::from_op(vec![b, c, h_out, w_out], out, &[x], move || OpRecord {
        name: "bilinear_upsample",
        inputs: vec![xc.clone()],
        backward: Box::new(move |grad| {
            let mut dx = vec![0.0; xc.numel()];
            for m in 0..maps {
                let g = &grad.data()[m * h_out * w_out..(m + 1) * h_out * w_out];
                let d = &mut dx[m * h * w..(m + 1) * h * w];
                for (oy, &(y0, y1, fy)) in vtab.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in htab.iter().enumerate() {
                        let gv = g[oy * w_out + ox];
                        d[y0 * w + x0] += gv * (1.0 - fx) * (1.0 - fy);
                        d[y0 * w + x1] += gv * fx * (1.0 - fy);
                        d[y1 * w + x0] += gv * (1.0 - fx) * fy;
                        d[y1 * w + x1] += gv * fx * fy;
                    }
                }
            }
            Ok(vec![Some(Tensor::from_vec(xc.shape(), dx)?)])
        }),
    })
}

/// Adaptive average pooling to an `oh x ow` grid: window `i` covers input
/// rows `floor(i*H/oh) .. ceil((i+1)*H/oh)` and likewise for columns.
pub fn adaptive_avg_pool(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    super::expect_rank("adaptive_avg_pool", x, 4)?;
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if oh == 0 || ow == 0 || oh > h || ow > w {
        return Err(Error::Config(format!(
            "adaptive_avg_pool: target {oh}x{ow} invalid for source {h}x{w}"
        )));
    }
    let bounds = |i: usize, o: usize, n: usize| -> (usize, usize) {
        let start = i * n / o;
        let end = ((i + 1) * n + o - 1) / o;
        (start, end.min(n))
    };
    let maps = b * c;
    let mut out = vec![0.0; maps * oh * ow];
    for m in 0..maps {
        let src = &x.data()[m * h * w..(m + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1) = bounds(oy, oh, h);
            for ox in 0..ow {
                let (x0, x1) = bounds(ox, ow, w);
                let mut acc = 0.0;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        acc += src[y * w + xx];
                    }
                }
                out[m * oh * ow + oy * ow + ox] =
                    acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    let xc = x.clone();
    Tensor::from_op(vec![b, c, oh, ow], out, &[x], move || OpRecord {
        name: "adaptive_avg_pool",
        inputs: vec![xc.clone()],
        backward: Box::new(move |grad| {
            let mut dx = vec![0.0; xc.numel()];
            for m in 0..maps {
                let d = &mut dx[m * h * w..(m + 1) * h * w];
                for oy in 0..oh {
                    let (y0, y1) = bounds(oy, oh, h);
                    for ox in 0..ow {
                        let (x0, x1) = bounds(ox, ow, w);
                        let gv = grad.data()[m * oh * ow + oy * ow + ox]
                            / ((y1 - y0) * (x1 - x0)) as f64;
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                d[y * w + xx] += gv;
                            }
                        }
                    }
                }
            }
            Ok(vec![Some(Tensor::from_vec(xc.shape(), dx)?)])
        }),
    })
}

/// Global average pooling: `[B, C, H, W] -> [B, C, 1, 1]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    super::expect_rank("global_avg_pool", x, 4)?;
    adaptive_avg_pool(x, 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_constant_output() {
        let x = Tensor::full(&[1, 1, 3, 3], 4.2);
        let y = bilinear_upsample(&x, 7, 5).unwrap();
        for v in y.data() {
            assert!((v - 4.2).abs() < 1e-12);
        }
    }

    #[test]
    fn one_by_one_input_fills_any_size() {
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![3.5]).unwrap();
        let y = bilinear_upsample(&x, 4, 6).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 6]);
        for v in y.data() {
            assert_eq!(*v, 3.5);
        }
    }

    #[test]
    fn two_by_two_to_four_by_four_matches_formula() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![0., 1., 1., 2.]).unwrap();
        let y = bilinear_upsample(&x, 4, 4).unwrap();
        // direct evaluation of the mapping o -> (o+0.5)*h/H - 0.5 with clamping
        let src = [0.0f64, 1.0, 1.0, 2.0];
        let coord = |o: usize| ((o as f64 + 0.5) * 2.0 / 4.0 - 0.5).clamp(0.0, 1.0);
        for oy in 0..4 {
            for ox in 0..4 {
                let (sy, sx) = (coord(oy), coord(ox));
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(1), (x0 + 1).min(1));
                let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                let want = src[y0 * 2 + x0] * (1. - fx) * (1. - fy)
                    + src[y0 * 2 + x1] * fx * (1. - fy)
                    + src[y1 * 2 + x0] * (1. - fx) * fy
                    + src[y1 * 2 + x1] * fx * fy;
                let got = y.data()[oy * 4 + ox];
                assert!((got - want).abs() < 1e-12, "({oy},{ox}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn global_pool_means_each_channel() {
        let x = Tensor::from_vec(&[1, 2, 2, 2], vec![1., 2., 3., 4., 10., 10., 10., 10.]).unwrap();
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1, 1]);
        assert_eq!(y.data(), &[2.5, 10.0]);
    }

    #[test]
    fn zero_output_extent_rejected() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        assert_eq!(
            bilinear_upsample(&x, 0, 4).unwrap_err().category(),
            "config"
        );
    }
}

//! Bicubic upscaling with the Catmull-Rom kernel (a = -0.5) and
//! edge-clamped sampling.

use crate::nn::{Scalar, Tensor4};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BicubicError {
    #[error("unsupported upscale factor {0}; supported factors are 2 and 4")]
    UnsupportedFactor(usize),
}

fn kernel(d: f64) -> f64 {
    const A: f64 = -0.5;
    let x = d.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Upscales every image of the batch by `factor` in both dimensions.
/// Source coordinates map through the center-aligned convention
/// src = (dst + 0.5)/factor - 0.5; samples outside the image clamp to
/// the nearest edge pixel. Interpolation runs in f64.
pub fn bicubic_upscale<F: Scalar>(
    image: &Tensor4<F>,
    factor: usize,
) -> Result<Tensor4<F>, BicubicError> {
    if factor != 2 && factor != 4 {
        return Err(BicubicError::UnsupportedFactor(factor));
    }
    let (b, c, h, w) = image.dims();
    let oh = h * factor;
    let ow = w * factor;
    let mut out = Tensor4::zeros(b, c, oh, ow);

    // Per-axis weights repeat with period `factor`; precompute them.
    let axis_weights: Vec<(isize, [f64; 4])> = (0..factor)
        .map(|phase| {
            let src = (phase as f64 + 0.5) / factor as f64 - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut ws = [0.0f64; 4];
            for (t, w) in ws.iter_mut().enumerate() {
                *w = kernel(frac - (t as f64 - 1.0));
            }
            (base as isize - 1, ws)
        })
        .collect();

    let clamp = |v: isize, hi: usize| -> usize { v.clamp(0, hi as isize - 1) as usize };

    for n in 0..b {
        for ch in 0..c {
            for oy in 0..oh {
                let cell_y = oy / factor;
                let (off_y, wy) = axis_weights[oy % factor];
                let y0 = cell_y as isize + off_y;
                for ox in 0..ow {
                    let cell_x = ox / factor;
                    let (off_x, wx) = axis_weights[ox % factor];
                    let x0 = cell_x as isize + off_x;
                    let mut acc = 0.0f64;
                    for (ty, wyv) in wy.iter().enumerate() {
                        let sy = clamp(y0 + ty as isize, h);
                        for (tx, wxv) in wx.iter().enumerate() {
                            let sx = clamp(x0 + tx as isize, w);
                            acc += wyv * wxv * image.get(n, ch, sy, sx).as_f64();
                        }
                    }
                    out.set(n, ch, oy, ox, F::from_f64(acc));
                }
            }
        }
    }
    Ok(out)
}

/// Box-filter downsample by `factor` (mean of each factor x factor cell).
/// Exact inverse of upscaling for constant images; used to build the
/// low-resolution half of training pairs.
pub fn box_downsample<F: Scalar>(image: &Tensor4<F>, factor: usize) -> Tensor4<F> {
    let (b, c, h, w) = image.dims();
    assert!(h % factor == 0 && w % factor == 0, "size must divide by factor");
    let oh = h / factor;
    let ow = w / factor;
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = Tensor4::zeros(b, c, oh, ow);
    for n in 0..b {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += image.get(n, ch, oy * factor + dy, ox * factor + dx).as_f64();
                        }
                    }
                    out.set(n, ch, oy, ox, F::from_f64(acc * inv));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor4::filled(1, 3, 4, 4, 0.6f64);
        let up = bicubic_upscale(&img, 2).unwrap();
        assert_eq!(up.dims(), (1, 3, 8, 8));
        for v in up.data() {
            assert!((v - 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_ramp_is_reproduced_in_the_interior() {
        let mut img = Tensor4::zeros(1, 1, 8, 8);
        for y in 0..8 {
            for x in 0..8 {
                img.set(0, 0, y, x, 0.1 * x as f64 + 0.05 * y as f64);
            }
        }
        let up = bicubic_upscale(&img, 2).unwrap();
        // interior = output pixels whose 4x4 stencil avoids the clamp
        for oy in 4..12 {
            for ox in 4..12 {
                let sx = (ox as f64 + 0.5) / 2.0 - 0.5;
                let sy = (oy as f64 + 0.5) / 2.0 - 0.5;
                let expected = 0.1 * sx + 0.05 * sy;
                let got = up.get(0, 0, oy, ox);
                assert!((got - expected).abs() < 1e-5, "({oy},{ox}): {got} vs {expected}");
            }
        }
    }

    #[test]
    fn factor_two_doubles_dimensions() {
        let img = Tensor4::<f32>::zeros(2, 3, 32, 32);
        let up = bicubic_upscale(&img, 2).unwrap();
        assert_eq!(up.dims(), (2, 3, 64, 64));
    }

    #[test]
    fn unsupported_factor_is_rejected() {
        let img = Tensor4::<f32>::zeros(1, 1, 4, 4);
        assert!(matches!(
            bicubic_upscale(&img, 3),
            Err(BicubicError::UnsupportedFactor(3))
        ));
    }

    #[test]
    fn box_downsample_averages_cells() {
        let img = Tensor4::from_vec(1, 1, 2, 2, vec![1.0f64, 2.0, 3.0, 6.0]).unwrap();
        let down = box_downsample(&img, 2);
        assert_eq!(down.dims(), (1, 1, 1, 1));
        assert_eq!(down.get(0, 0, 0, 0), 3.0);
    }
}

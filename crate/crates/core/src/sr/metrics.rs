//! Image quality metrics: PSNR and a windowed SSIM.

use crate::nn::{mse_loss, NnError, Scalar, Tensor4};

/// Peak signal-to-noise ratio, dB: 10 log10(max^2 / MSE). Identical
/// images return the +infinity sentinel.
pub fn psnr<F: Scalar>(
    pred: &Tensor4<F>,
    target: &Tensor4<F>,
    max_val: f64,
) -> Result<f64, NnError> {
    let mse = mse_loss(pred, target)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

const SSIM_WINDOW: usize = 8;

/// Mean local SSIM over 8x8 tiles (partial tiles at the edges use their
/// actual pixels), per channel then averaged. Standard constants
/// C1 = (0.01 max)^2, C2 = (0.03 max)^2; population moments.
pub fn ssim<F: Scalar>(
    pred: &Tensor4<F>,
    target: &Tensor4<F>,
    max_val: f64,
) -> Result<f64, NnError> {
    if pred.dims() != target.dims() {
        return Err(NnError::ShapeMismatch(format!(
            "ssim dims {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let (b, c, h, w) = pred.dims();
    let c1 = (0.01 * max_val) * (0.01 * max_val);
    let c2 = (0.03 * max_val) * (0.03 * max_val);
    let mut acc = 0.0f64;
    let mut windows = 0usize;
    for n in 0..b {
        for ch in 0..c {
            for wy in (0..h).step_by(SSIM_WINDOW) {
                for wx in (0..w).step_by(SSIM_WINDOW) {
                    let hh = SSIM_WINDOW.min(h - wy);
                    let ww = SSIM_WINDOW.min(w - wx);
                    let count = (hh * ww) as f64;
                    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for y in wy..wy + hh {
                        for x in wx..wx + ww {
                            let a = pred.get(n, ch, y, x).as_f64();
                            let b2 = target.get(n, ch, y, x).as_f64();
                            sx += a;
                            sy += b2;
                            sxx += a * a;
                            syy += b2 * b2;
                            sxy += a * b2;
                        }
                    }
                    let mx = sx / count;
                    let my = sy / count;
                    let vx = sxx / count - mx * mx;
                    let vy = syy / count - my * my;
                    let cov = sxy / count - mx * my;
                    let score = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    acc += score;
                    windows += 1;
                }
            }
        }
    }
    Ok(acc / windows as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_have_infinite_psnr_and_unit_ssim() {
        let img = Tensor4::filled(1, 1, 8, 8, 0.3f64);
        assert_eq!(psnr(&img, &img, 1.0).unwrap(), f64::INFINITY);
        assert!((ssim(&img, &img, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_twenty_db_at_one_percent_mse() {
        // constant diff 0.1 -> MSE = 0.01 = max^2/100 -> exactly 20 dB
        let a = Tensor4::filled(1, 1, 4, 4, 0.5f64);
        let b = Tensor4::filled(1, 1, 4, 4, 0.6f64);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_zero_db_at_full_scale_mse() {
        let a = Tensor4::filled(1, 1, 4, 4, 0.0f64);
        let b = Tensor4::filled(1, 1, 4, 4, 1.0f64);
        assert!((psnr(&a, &b, 1.0).unwrap() - 0.0).abs() < 1e-9);
    }

    #[test]
    fn negated_zero_mean_window_scores_minus_one() {
        let mut img = Tensor4::zeros(1, 1, 8, 8);
        for y in 0..8 {
            for x in 0..8 {
                let v = if (x + y) % 2 == 0 { 1000.0 } else { -1000.0 };
                img.set(0, 0, y, x, v);
            }
        }
        let neg = img.map(|v| -v);
        let s = ssim(&img, &neg, 1.0).unwrap();
        assert!((s + 1.0).abs() < 1e-6, "ssim {s}");
    }

    #[test]
    fn constant_shift_approaches_one_as_shift_vanishes() {
        let a = Tensor4::filled(1, 1, 8, 8, 0.5f64);
        let s1 = ssim(&a, &a.map(|v| v + 0.1), 1.0).unwrap();
        let s2 = ssim(&a, &a.map(|v| v + 0.01), 1.0).unwrap();
        assert!(s2 > s1);
        assert!(s2 > 0.99);
    }

    #[test]
    fn ssim_stays_within_unit_interval() {
        let mut a = Tensor4::zeros(1, 1, 16, 16);
        let mut b = Tensor4::zeros(1, 1, 16, 16);
        let mut rng_state = 12345u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (rng_state >> 33) as f64 / (1u64 << 31) as f64 - 1.0
        };
        for y in 0..16 {
            for x in 0..16 {
                a.set(0, 0, y, x, next());
                b.set(0, 0, y, x, next());
            }
        }
        let s = ssim(&a, &b, 1.0).unwrap();
        assert!((-1.0..=1.0).contains(&s));
    }
}

use ndarray::{Array2, Zip};

use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: b.shape().to_vec(),
            actual: a.shape().to_vec(),
        });
    }
    Ok(())
}

/// Root-mean-square error normalized by the target's value range.
pub fn nrmse(image: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    check_same_shape(image, target)?;
    if target.is_empty() {
        return Err(Error::invalid("NRMSE of empty images"));
    }
    let hi = target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = target.iter().copied().fold(f64::INFINITY, f64::min);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::invalid("NRMSE undefined for a constant target"));
    }
    let mut sq = 0.0;
    Zip::from(image).and(target).for_each(|&i, &y| sq += (i - y) * (i - y));
    Ok((sq / image.len() as f64).sqrt() / range)
}

/// Normalized 1-D Gaussian taps of length [`SSIM_WINDOW`].
pub fn gaussian_taps() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable 'valid' filtering with the Gaussian window.
fn filter_valid(img: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for i in 0..h {
        for j in 0..ow {
            rows[[i, j]] = taps.iter().enumerate().map(|(t, c)| c * img[[i, j + t]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            out[[i, j]] = taps.iter().enumerate().map(|(t, c)| c * rows[[i + t, j]]).sum();
        }
    }
    out
}

/// Mean structural similarity over all fully-contained 11×11 Gaussian windows
/// (σ = 1.5, K1 = 0.01, K2 = 0.03).
///
/// Both images are first mapped to [0, 1] with their shared min/max, so the
/// dynamic range constant is 1.
pub fn ssim(image: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    check_same_shape(image, target)?;
    let (h, w) = image.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let lo = image.iter().chain(target.iter()).copied().fold(f64::INFINITY, f64::min);
    let hi = image.iter().chain(target.iter()).copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::NonFinite("SSIM input".into()));
    }
    if hi == lo {
        return Ok(1.0);
    }
    let x = image.mapv(|v| (v - lo) / (hi - lo));
    let y = target.mapv(|v| (v - lo) / (hi - lo));
    Ok(ssim_unit_range(&x, &y))
}

fn ssim_unit_range(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let taps = gaussian_taps();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mx = filter_valid(x, &taps);
    let my = filter_valid(y, &taps);
    let mxx = filter_valid(&(x * x), &taps);
    let myy = filter_valid(&(y * y), &taps);
    let mxy = filter_valid(&(x * y), &taps);
    let mut total = 0.0;
    Zip::from(&mx)
        .and(&my)
        .and(&mxx)
        .and(&myy)
        .and(&mxy)
        .for_each(|&ux, &uy, &sxx, &syy, &sxy| {
            let vx = sxx - ux * ux;
            let vy = syy - uy * uy;
            let cov = sxy - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        });
    total / mx.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nrmse_examples() {
        let y = Array2::from_shape_vec((1, 2), vec![0.0, 4.0]).unwrap();
        let i = Array2::from_shape_vec((1, 2), vec![0.0, 2.0]).unwrap();
        assert_eq!(nrmse(&y, &y).unwrap(), 0.0);
        assert!((nrmse(&i, &y).unwrap() - 2f64.sqrt() / 4.0).abs() < 1e-12);
        let flat = Array2::from_elem((2, 2), 3.0);
        assert!(nrmse(&flat, &flat).is_err());
    }

    #[test]
    fn nrmse_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = Array2::from_shape_fn((7, 9), |_| rng.random::<f64>());
        let i = Array2::from_shape_fn((7, 9), |_| rng.random::<f64>());
        let base = nrmse(&i, &y).unwrap();
        let t = |a: &Array2<f64>| a.mapv(|v| 3.5 * v - 11.0);
        assert!((nrmse(&t(&i), &t(&y)).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn ssim_identity_and_degradation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((24, 20), |_| rng.random::<f64>());
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let inv = x.mapv(|v| 1.0 - v);
        assert!(ssim(&x, &inv).unwrap() < 1.0);
        assert!(ssim(&Array2::zeros((5, 30)), &Array2::zeros((5, 30))).is_err());
    }
}

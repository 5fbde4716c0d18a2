use ndarray::Array2;

use super::roi::PixelSet;
use crate::{Error, Result};

/// Default histogram bin count for gCNR.
pub const GCNR_BINS: usize = 256;

fn gather(img: &Array2<f64>, set: &PixelSet) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::invalid("empty pixel region"));
    }
    set.iter()
        .map(|&(iz, ix)| {
            img.get((iz, ix))
                .copied()
                .ok_or_else(|| Error::invalid(format!("pixel ({iz}, {ix}) outside image")))
        })
        .collect()
}

/// Mean and population variance.
pub(crate) fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Contrast-to-noise ratio in dB between two regions of an envelope image.
///
/// `20 log10(|μ_roi − μ_bg| / √((σ²_roi + σ²_bg) / 2))` with population
/// variances. Equal means give `-∞`; zero spread with distinct means gives `+∞`.
pub fn cnr(img: &Array2<f64>, roi: &PixelSet, bg: &PixelSet) -> Result<f64> {
    let a = gather(img, roi)?;
    let b = gather(img, bg)?;
    Ok(cnr_values(&a, &b))
}

pub fn cnr_values(roi: &[f64], bg: &[f64]) -> f64 {
    let (ma, va) = mean_var(roi);
    let (mb, vb) = mean_var(bg);
    let num = (ma - mb).abs();
    if num == 0.0 {
        return f64::NEG_INFINITY;
    }
    let den = ((va + vb) / 2.0).sqrt();
    if den == 0.0 {
        log::warn!("CNR denominator is zero; returning +inf");
        return f64::INFINITY;
    }
    20.0 * (num / den).log10()
}

/// Generalized CNR: one minus the overlap of the two normalized histograms,
/// using `bins` shared bins over the joint value range.
pub fn gcnr(img: &Array2<f64>, roi: &PixelSet, bg: &PixelSet, bins: usize) -> Result<f64> {
    let a = gather(img, roi)?;
    let b = gather(img, bg)?;
    gcnr_values(&a, &b, bins)
}

pub fn gcnr_values(roi: &[f64], bg: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::invalid("gCNR needs at least 2 bins"));
    }
    if roi.is_empty() || bg.is_empty() {
        return Err(Error::invalid("empty pixel region"));
    }
    let lo = roi.iter().chain(bg).copied().fold(f64::INFINITY, f64::min);
    let hi = roi.iter().chain(bg).copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::NonFinite("gCNR input".into()));
    }
    if hi == lo {
        log::warn!("gCNR on a constant joint range; returning 0");
        return Ok(0.0);
    }
    let width = (hi - lo) / bins as f64;
    let hist = |v: &[f64]| {
        let mut h = vec![0.0f64; bins];
        for &x in v {
            let i = (((x - lo) / width).floor() as usize).min(bins - 1);
            h[i] += 1.0;
        }
        let n = v.len() as f64;
        h.iter_mut().for_each(|c| *c /= n);
        h
    };
    let (ha, hb) = (hist(roi), hist(bg));
    let overlap: f64 = ha.iter().zip(&hb).map(|(p, q)| p.min(*q)).sum();
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

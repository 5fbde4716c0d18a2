//! Analytic-signal envelope detection and log compression.

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::beamformer::RfImage;
use crate::{Error, Result};

/// Default B-mode dynamic range in dB.
pub const DEFAULT_DYNAMIC_RANGE_DB: f64 = 60.0;

/// Envelope of an RF image, column by column along depth.
///
/// Each column is zero-padded to the next power of two, transformed, its
/// negative frequencies zeroed and positive ones doubled (DC and Nyquist kept
/// once), transformed back, and the magnitude of the first `nz` samples kept.
pub fn envelope(rf: &RfImage) -> Result<Array2<f64>> {
    envelope_data(&rf.data)
}

pub fn envelope_data(data: &Array2<f64>) -> Result<Array2<f64>> {
    let (nz, nx) = data.dim();
    if nz < 4 {
        return Err(Error::invalid(format!("envelope needs at least 4 axial samples, got {nz}")));
    }
    let n = nz.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut out = Array2::<f64>::zeros((nz, nx));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for ix in 0..nx {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for iz in 0..nz {
            buf[iz].re = data[[iz, ix]];
        }
        fwd.process(&mut buf);
        for (k, c) in buf.iter_mut().enumerate() {
            let h = if k == 0 || k == n / 2 {
                1.0
            } else if k < n / 2 {
                2.0
            } else {
                0.0
            };
            *c *= h / n as f64;
        }
        inv.process(&mut buf);
        for iz in 0..nz {
            out[[iz, ix]] = buf[iz].norm();
        }
    }
    Ok(out)
}

/// Log-compressed image in dB relative to the envelope maximum, clipped to
/// `[-dynamic_range, 0]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BModeImage {
    pub data: Array2<f64>,
    pub dynamic_range: f64,
}

pub fn bmode(env: &Array2<f64>, dynamic_range: f64) -> Result<BModeImage> {
    if !(dynamic_range > 0.0) {
        return Err(Error::invalid("dynamic range must be positive"));
    }
    let max = env.iter().copied().fold(0.0f64, f64::max);
    if !(max > 0.0) {
        return Err(Error::invalid("B-mode of an all-zero envelope"));
    }
    let data = env.mapv(|v| {
        let db = 20.0 * (v / max).log10();
        if db.is_nan() {
            -dynamic_range
        } else {
            db.clamp(-dynamic_range, 0.0)
        }
    });
    Ok(BModeImage {
        data,
        dynamic_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_tone_has_unit_envelope() {
        let nz = 300;
        let f0 = 0.11; // cycles per sample, well inside the band
        let col: Vec<f64> = (0..nz)
            .map(|n| (2.0 * std::f64::consts::PI * f0 * n as f64).cos())
            .collect();
        let data = Array2::from_shape_fn((nz, 2), |(i, _)| col[i]);
        let env = envelope_data(&data).unwrap();
        for i in 40..nz - 40 {
            assert!((env[[i, 0]] - 1.0).abs() < 0.02, "sample {i}: {}", env[[i, 0]]);
        }
    }

    #[test]
    fn zero_and_sign_symmetry() {
        let z = Array2::<f64>::zeros((16, 3));
        assert!(envelope_data(&z).unwrap().iter().all(|&v| v == 0.0));
        let d = Array2::from_shape_fn((37, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let neg = d.mapv(|v| -v);
        assert_eq!(envelope_data(&d).unwrap(), envelope_data(&neg).unwrap());
        assert!(envelope_data(&Array2::zeros((3, 3))).is_err());
    }

    #[test]
    fn bmode_mapping() {
        let env = Array2::from_shape_vec((1, 4), vec![10.0, 1.0, 1e-5, 0.0]).unwrap();
        let b = bmode(&env, 60.0).unwrap();
        assert_eq!(b.data[[0, 0]], 0.0);
        assert!((b.data[[0, 1]] + 20.0).abs() < 1e-12);
        assert_eq!(b.data[[0, 2]], -60.0);
        assert_eq!(b.data[[0, 3]], -60.0);
        assert!(bmode(&Array2::zeros((2, 2)), 60.0).is_err());
    }
}

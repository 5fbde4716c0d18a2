use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Linear-array transducer description.
///
/// Defaults follow a 128-element L11-5v style probe: 0.3 mm pitch,
/// 5.208 MHz center frequency sampled at 20.832 MHz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub num_elements: usize,
    /// Element spacing in meters.
    pub pitch: f64,
    /// Center frequency in Hz.
    pub fc: f64,
    /// Sampling frequency in Hz.
    pub fs: f64,
    /// Speed of sound in m/s.
    pub c: f64,
    /// Fractional -6 dB bandwidth of the excitation pulse.
    pub fractional_bandwidth: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            num_elements: 128,
            pitch: 0.3e-3,
            fc: 5.208e6,
            fs: 20.832e6,
            c: 1540.0,
            fractional_bandwidth: 0.6,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_elements < 2 {
            return Err(Error::invalid("probe needs at least 2 elements"));
        }
        if !(self.pitch > 0.0) {
            return Err(Error::invalid("probe pitch must be positive"));
        }
        if !(self.fc > 0.0 && self.c > 0.0) {
            return Err(Error::invalid("center frequency and sound speed must be positive"));
        }
        if !(self.fs > 2.0 * self.fc) {
            return Err(Error::invalid(format!(
                "sampling frequency {} Hz must exceed twice the center frequency {} Hz",
                self.fs, self.fc
            )));
        }
        if !(self.fractional_bandwidth > 0.0) {
            return Err(Error::invalid("fractional bandwidth must be positive"));
        }
        Ok(())
    }

    /// Lateral element positions, centered at zero.
    pub fn element_x(&self) -> Vec<f64> {
        let mid = (self.num_elements as f64 - 1.0) / 2.0;
        (0..self.num_elements)
            .map(|i| (i as f64 - mid) * self.pitch)
            .collect()
    }

    pub fn wavelength(&self) -> f64 {
        self.c / self.fc
    }

    /// Distance between the outermost element centers.
    pub fn aperture(&self) -> f64 {
        (self.num_elements as f64 - 1.0) * self.pitch
    }

    pub fn half_aperture(&self) -> f64 {
        self.aperture() / 2.0
    }

    /// Standard deviation of the Gaussian pulse envelope, in seconds.
    ///
    /// Chosen so the amplitude spectrum is down 6 dB at `fc·(1 ± B/2)`.
    pub fn pulse_sigma(&self) -> f64 {
        (2.0 * std::f64::consts::LN_2).sqrt()
            / (std::f64::consts::PI * self.fc * self.fractional_bandwidth)
    }

    /// Half-width beyond which the pulse is treated as zero (5 σ).
    pub fn pulse_half_support(&self) -> f64 {
        PULSE_SUPPORT_SIGMAS * self.pulse_sigma()
    }
}

pub(crate) const PULSE_SUPPORT_SIGMAS: f64 = 5.0;

/// Rectangular phantom region. Lateral extent is centered on the probe axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomGeometry {
    pub x_span: f64,
    pub z_start: f64,
    pub z_span: f64,
}

impl Default for PhantomGeometry {
    fn default() -> Self {
        Self {
            x_span: 45e-3,
            z_start: 10e-3,
            z_span: 40e-3,
        }
    }
}

impl PhantomGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_span > 0.0 && self.z_span > 0.0) {
            return Err(Error::invalid("phantom spans must be positive"));
        }
        if !(self.z_start >= 0.0) {
            return Err(Error::invalid("phantom must start at non-negative depth"));
        }
        Ok(())
    }

    pub fn x_min(&self) -> f64 {
        -self.x_span / 2.0
    }

    pub fn x_max(&self) -> f64 {
        self.x_span / 2.0
    }

    pub fn z_min(&self) -> f64 {
        self.z_start
    }

    pub fn z_max(&self) -> f64 {
        self.z_start + self.z_span
    }

    pub fn z_mid(&self) -> f64 {
        self.z_start + self.z_span / 2.0
    }

    pub fn area(&self) -> f64 {
        self.x_span * self.z_span
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        x >= self.x_min() && x <= self.x_max() && z >= self.z_min() && z <= self.z_max()
    }

    /// Extents agree to within a nanometer.
    pub fn same_extent(&self, other: &PhantomGeometry) -> bool {
        const TOL: f64 = 1e-9;
        (self.x_span - other.x_span).abs() < TOL
            && (self.z_start - other.z_start).abs() < TOL
            && (self.z_span - other.z_span).abs() < TOL
    }
}

/// Diffraction-limited resolution cell area in m², evaluated at mid depth.
///
/// Axial extent is `c / (2 fc B)`, lateral extent is `λ z_mid / D` with `D`
/// the aperture width.
pub fn resolution_cell(probe: &ProbeConfig, geometry: &PhantomGeometry) -> f64 {
    let (axial, lateral) = resolution_cell_extents(probe, geometry);
    axial * lateral
}

/// `(axial, lateral)` extents of the resolution cell, in meters.
pub fn resolution_cell_extents(probe: &ProbeConfig, geometry: &PhantomGeometry) -> (f64, f64) {
    let axial = probe.c / (2.0 * probe.fc * probe.fractional_bandwidth);
    let lateral = probe.wavelength() * geometry.z_mid() / probe.aperture();
    (axial, lateral)
}

/// Gaussian-modulated cosine excitation, peak 1 at `t = 0`.
pub fn pulse(t: f64, probe: &ProbeConfig) -> f64 {
    let sigma = probe.pulse_sigma();
    (-t * t / (2.0 * sigma * sigma)).exp() * (2.0 * std::f64::consts::PI * probe.fc * t).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_probe_is_valid_and_symmetric() {
        let p = ProbeConfig::default();
        p.validate().unwrap();
        let xs = p.element_x();
        assert_eq!(xs.len(), 128);
        for (a, b) in xs.iter().zip(xs.iter().rev()) {
            assert_relative_eq!(*a, -*b, epsilon = 1e-15);
        }
    }

    #[test]
    fn nyquist_is_enforced() {
        let p = ProbeConfig {
            fs: 10e6,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = ProbeConfig {
            num_elements: 1,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn resolution_cell_half_wavelength_pitch() {
        let mut probe = ProbeConfig::default();
        probe.pitch = probe.wavelength() / 2.0;
        let geom = PhantomGeometry::default();
        let (axial, lateral) = resolution_cell_extents(&probe, &geom);
        // direct evaluation of c/(2 fc B) and λ z_mid / (127 pitch)
        assert_relative_eq!(axial, 2.464_157_706e-4, max_relative = 1e-9);
        let lambda = 1540.0 / 5.208e6;
        assert_relative_eq!(lateral, lambda * 0.030 / (127.0 * lambda / 2.0), max_relative = 1e-12);
        assert_relative_eq!(resolution_cell(&probe, &geom), axial * lateral);
    }

    #[test]
    fn resolution_cell_proportionality() {
        let probe = ProbeConfig::default();
        let geom = PhantomGeometry::default();
        let (a1, l1) = resolution_cell_extents(&probe, &geom);

        let wide = ProbeConfig {
            fractional_bandwidth: 1.2,
            ..probe.clone()
        };
        let (a2, _) = resolution_cell_extents(&wide, &geom);
        assert_relative_eq!(a2, a1 / 2.0, max_relative = 1e-12);

        // z_mid 30 mm -> 60 mm
        let deep = PhantomGeometry {
            z_start: 40e-3,
            ..geom
        };
        let (_, l2) = resolution_cell_extents(&probe, &deep);
        assert_relative_eq!(l2, 2.0 * l1, max_relative = 1e-12);
    }

    #[test]
    fn pulse_peak_symmetry_and_bound() {
        let p = ProbeConfig::default();
        assert_eq!(pulse(0.0, &p), 1.0);
        let s = p.pulse_sigma();
        for k in 0..200 {
            let t = (k as f64 - 100.0) * 3.7e-9;
            assert_eq!(pulse(t, &p), pulse(-t, &p));
            assert!(pulse(t, &p).abs() <= (-t * t / (2.0 * s * s)).exp() + 1e-15);
        }
    }
}

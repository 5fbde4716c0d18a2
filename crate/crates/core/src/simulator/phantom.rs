use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mask::{EchogenicityMask, Label, DEFAULT_MASK_CELL};
use super::probe::{resolution_cell, PhantomGeometry, ProbeConfig};
use crate::{Error, Result};

/// Average number of scatterers per resolution cell for fully developed speckle.
pub const DEFAULT_DENSITY_PER_CELL: f64 = 60.0;

/// Point scatterers with their reflectivities and the mask that weighted them.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    /// `(x, z)` in meters.
    pub positions: Vec<[f64; 2]>,
    pub amplitudes: Vec<f64>,
    pub seed: u64,
    pub density_per_cell: f64,
    pub geometry: PhantomGeometry,
    pub mask: EchogenicityMask,
}

/// JSON-side description of a phantom (everything but the scatterer arrays).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomMeta {
    pub seed: u64,
    pub density_per_cell: f64,
    pub num_scatterers: usize,
    pub geometry: PhantomGeometry,
    pub hyper_weight: f64,
}

impl Phantom {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn meta(&self) -> PhantomMeta {
        PhantomMeta {
            seed: self.seed,
            density_per_cell: self.density_per_cell,
            num_scatterers: self.len(),
            geometry: self.geometry.clone(),
            hyper_weight: self.mask.hyper_weight,
        }
    }

    /// Phantom with explicitly placed scatterers (no speckle). Mask is uniform background.
    pub fn from_points(geometry: &PhantomGeometry, points: &[([f64; 2], f64)]) -> Result<Self> {
        geometry.validate()?;
        for (p, _) in points {
            if !geometry.contains(p[0], p[1]) {
                return Err(Error::invalid(format!("scatterer {p:?} outside phantom")));
            }
        }
        Ok(Self {
            positions: points.iter().map(|(p, _)| *p).collect(),
            amplitudes: points.iter().map(|(_, a)| *a).collect(),
            seed: 0,
            density_per_cell: 0.0,
            geometry: geometry.clone(),
            mask: EchogenicityMask::background(geometry, DEFAULT_MASK_CELL),
        })
    }
}

/// Number of scatterers for a constant density over the whole phantom.
pub fn scatterer_count(probe: &ProbeConfig, geometry: &PhantomGeometry, density: f64) -> usize {
    (density * geometry.area() / resolution_cell(probe, geometry)).round() as usize
}

/// Draws a speckle phantom weighted by `mask`.
///
/// Positions are uniform over the geometry; base amplitudes are standard normal,
/// multiplied by the mask weight at each position. Draw order per scatterer is
/// `x, z, amplitude`, all from one ChaCha8 stream seeded with `seed`.
pub fn generate_phantom(
    geometry: &PhantomGeometry,
    mask: &EchogenicityMask,
    probe: &ProbeConfig,
    seed: u64,
) -> Result<Phantom> {
    generate_phantom_with_density(geometry, mask, probe, seed, DEFAULT_DENSITY_PER_CELL)
}

pub fn generate_phantom_with_density(
    geometry: &PhantomGeometry,
    mask: &EchogenicityMask,
    probe: &ProbeConfig,
    seed: u64,
    density_per_cell: f64,
) -> Result<Phantom> {
    geometry.validate()?;
    probe.validate()?;
    mask.validate()?;
    if !mask.geometry.same_extent(geometry) {
        return Err(Error::invalid(format!(
            "mask extent {:?} does not match phantom geometry {:?}",
            mask.geometry, geometry
        )));
    }
    if !(density_per_cell >= 0.0) {
        return Err(Error::invalid("scatterer density must be non-negative"));
    }

    let n = scatterer_count(probe, geometry, density_per_cell);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n);
    let mut amplitudes = Vec::with_capacity(n);
    for _ in 0..n {
        let x = geometry.x_min() + rng.random::<f64>() * geometry.x_span;
        let z = geometry.z_min() + rng.random::<f64>() * geometry.z_span;
        let base: f64 = rng.sample(StandardNormal);
        positions.push([x, z]);
        amplitudes.push(base * mask.weight(mask.label_at(x, z)));
    }
    Ok(Phantom {
        positions,
        amplitudes,
        seed,
        density_per_cell,
        geometry: geometry.clone(),
        mask: mask.clone(),
    })
}

/// A circular inclusion of the two-cyst evaluation phantom.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cyst {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Two anechoic cysts on the probe axis: 10 mm diameter with its top at 10 mm
/// depth and 15 mm diameter with its top at 28 mm depth.
pub fn test_cysts() -> [Cyst; 2] {
    [
        Cyst {
            center: [0.0, 10e-3 + 5e-3],
            radius: 5e-3,
        },
        Cyst {
            center: [0.0, 28e-3 + 7.5e-3],
            radius: 7.5e-3,
        },
    ]
}

/// Mask of the two-cyst test phantom over `geometry`.
pub fn test_phantom_mask(geometry: &PhantomGeometry) -> EchogenicityMask {
    let mut mask = EchogenicityMask::background(geometry, DEFAULT_MASK_CELL);
    for cyst in test_cysts() {
        mask.paint(Label::Anechoic, |x, z| {
            (x - cyst.center[0]).hypot(z - cyst.center[1]) <= cyst.radius
        });
    }
    mask
}

/// Speckle phantom with the two anechoic test cysts on the default geometry.
pub fn make_test_phantom(probe: &ProbeConfig, seed: u64) -> Result<Phantom> {
    let geometry = PhantomGeometry::default();
    make_test_phantom_on(&geometry, probe, seed, DEFAULT_DENSITY_PER_CELL)
}

pub fn make_test_phantom_on(
    geometry: &PhantomGeometry,
    probe: &ProbeConfig,
    seed: u64,
    density_per_cell: f64,
) -> Result<Phantom> {
    let mask = test_phantom_mask(geometry);
    generate_phantom_with_density(geometry, &mask, probe, seed, density_per_cell)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::mask::{procedural_mask, MaskShape, RegionKind};

    fn small_geometry() -> PhantomGeometry {
        PhantomGeometry {
            x_span: 10e-3,
            z_start: 10e-3,
            z_span: 8e-3,
        }
    }

    #[test]
    fn count_follows_density() {
        let probe = ProbeConfig::default();
        let g = small_geometry();
        let expected = (60.0 * g.area() / resolution_cell(&probe, &g)).round() as usize;
        let mask = EchogenicityMask::background(&g, DEFAULT_MASK_CELL);
        let ph = generate_phantom(&g, &mask, &probe, 5).unwrap();
        assert_eq!(ph.len(), expected);
        assert!(ph.positions.iter().all(|p| g.contains(p[0], p[1])));
    }

    #[test]
    fn all_anechoic_gives_zero_amplitudes() {
        let probe = ProbeConfig::default();
        let g = small_geometry();
        let mut mask = EchogenicityMask::background(&g, DEFAULT_MASK_CELL);
        mask.paint(Label::Anechoic, |_, _| true);
        let ph = generate_phantom(&g, &mask, &probe, 1).unwrap();
        assert!(!ph.is_empty());
        assert!(ph.amplitudes.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let probe = ProbeConfig::default();
        let g = small_geometry();
        let mask = procedural_mask(&g, 4, MaskShape::Blob, RegionKind::Hyperechoic).unwrap();
        let a = generate_phantom(&g, &mask, &probe, 11).unwrap();
        let b = generate_phantom(&g, &mask, &probe, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn background_amplitudes_have_zero_mean() {
        let probe = ProbeConfig::default();
        let g = small_geometry();
        let mask = EchogenicityMask::background(&g, DEFAULT_MASK_CELL);
        let ph = generate_phantom(&g, &mask, &probe, 7).unwrap();
        let n = ph.len() as f64;
        let mean = ph.amplitudes.iter().sum::<f64>() / n;
        // standard-normal draws: |mean| < 3 σ / √N with σ = 1
        assert!(mean.abs() < 3.0 / n.sqrt(), "mean {mean} for n = {n}");
    }

    #[test]
    fn mask_extent_mismatch_is_rejected() {
        let probe = ProbeConfig::default();
        let g = small_geometry();
        let mask = EchogenicityMask::background(&PhantomGeometry::default(), DEFAULT_MASK_CELL);
        assert!(generate_phantom(&g, &mask, &probe, 1).is_err());
    }

    #[test]
    fn test_phantom_cysts_are_silent() {
        let probe = ProbeConfig::default();
        let geometry = PhantomGeometry::default();
        let ph = make_test_phantom_on(&geometry, &probe, 3, 2.0).unwrap();
        let cysts = test_cysts();
        assert_eq!(cysts[0].center[0], 0.0);
        assert!((cysts[0].center[1] - 15e-3).abs() < 1e-15);
        assert!((cysts[1].center[1] - 35.5e-3).abs() < 1e-15);
        assert_eq!((cysts[0].radius * 2.0, cysts[1].radius * 2.0), (10e-3, 15e-3));
        let mut inside = 0;
        for (p, a) in ph.positions.iter().zip(&ph.amplitudes) {
            // stay a mask cell away from the rim where the raster rounds
            if cysts
                .iter()
                .any(|c| (p[0] - c.center[0]).hypot(p[1] - c.center[1]) < c.radius - 0.2e-3)
            {
                inside += 1;
                assert_eq!(*a, 0.0);
            }
        }
        assert!(inside > 0);
        assert_eq!(ph.mask.label_at(0.0, 15e-3), Label::Anechoic);
        assert_eq!(ph.mask.label_at(0.0, 35.5e-3), Label::Anechoic);
        assert_eq!(ph.mask.label_at(0.0, 25e-3), Label::Background);
        assert_eq!(ph.mask.label_at(10e-3, 35.5e-3), Label::Background);
        let again = make_test_phantom_on(&geometry, &probe, 3, 2.0).unwrap();
        assert_eq!(ph, again);
    }
}

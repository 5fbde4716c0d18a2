//! Echogenicity masks: a label grid laid over the phantom rectangle.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::probe::PhantomGeometry;
use crate::{Error, Result};

/// Interval of amplitude weights for hyperechoic regions (+3 dB to +12 dB).
pub const HYPER_WEIGHT_RANGE: (f64, f64) = (2.0, 15.8);

/// Default mask cell size (0.1 mm).
pub const DEFAULT_MASK_CELL: f64 = 0.1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Background,
    Anechoic,
    Hyperechoic,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Background => 0,
            Label::Anechoic => 1,
            Label::Hyperechoic => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Label> {
        match code {
            0 => Some(Label::Background),
            1 => Some(Label::Anechoic),
            2 => Some(Label::Hyperechoic),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskShape {
    Disk,
    Ellipse,
    Blob,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Anechoic,
    Hyperechoic,
}

impl From<RegionKind> for Label {
    fn from(k: RegionKind) -> Label {
        match k {
            RegionKind::Anechoic => Label::Anechoic,
            RegionKind::Hyperechoic => Label::Hyperechoic,
        }
    }
}

/// Region labels sampled on a regular `(nz, nx)` grid spanning `geometry`.
///
/// Cell `(iz, ix)` covers the rectangle whose center is
/// `(x_min + (ix + 0.5) dx, z_min + (iz + 0.5) dz)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EchogenicityMask {
    pub grid: Array2<Label>,
    /// Amplitude multiplier of hyperechoic cells. 1.0 when none are present.
    pub hyper_weight: f64,
    pub geometry: PhantomGeometry,
}

impl EchogenicityMask {
    /// Uniform background mask with cells of roughly `cell` meters.
    pub fn background(geometry: &PhantomGeometry, cell: f64) -> Self {
        let nx = ((geometry.x_span / cell).round() as usize).max(1);
        let nz = ((geometry.z_span / cell).round() as usize).max(1);
        Self {
            grid: Array2::from_elem((nz, nx), Label::Background),
            hyper_weight: 1.0,
            geometry: geometry.clone(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.dim()
    }

    fn cell_size(&self) -> (f64, f64) {
        let (nz, nx) = self.grid.dim();
        (
            self.geometry.x_span / nx as f64,
            self.geometry.z_span / nz as f64,
        )
    }

    /// Physical center of cell `(iz, ix)`.
    pub fn cell_center(&self, iz: usize, ix: usize) -> (f64, f64) {
        let (dx, dz) = self.cell_size();
        (
            self.geometry.x_min() + (ix as f64 + 0.5) * dx,
            self.geometry.z_min() + (iz as f64 + 0.5) * dz,
        )
    }

    /// Label of the cell containing `(x, z)`. Points on the outer boundary map
    /// to the nearest edge cell.
    pub fn label_at(&self, x: f64, z: f64) -> Label {
        let (nz, nx) = self.grid.dim();
        let (dx, dz) = self.cell_size();
        let ix = ((x - self.geometry.x_min()) / dx).floor().clamp(0.0, (nx - 1) as f64) as usize;
        let iz = ((z - self.geometry.z_min()) / dz).floor().clamp(0.0, (nz - 1) as f64) as usize;
        self.grid[[iz, ix]]
    }

    /// Amplitude multiplier for a label: 0 anechoic, 1 background, `hyper_weight` hyperechoic.
    pub fn weight(&self, label: Label) -> f64 {
        match label {
            Label::Background => 1.0,
            Label::Anechoic => 0.0,
            Label::Hyperechoic => self.hyper_weight,
        }
    }

    pub fn has_label(&self, label: Label) -> bool {
        self.grid.iter().any(|&l| l == label)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.grid.is_empty() {
            return Err(Error::invalid("mask grid is empty"));
        }
        if self.has_label(Label::Hyperechoic) {
            let (lo, hi) = HYPER_WEIGHT_RANGE;
            if !(self.hyper_weight >= lo && self.hyper_weight <= hi) {
                return Err(Error::invalid(format!(
                    "hyperechoic weight {} outside [{lo}, {hi}]",
                    self.hyper_weight
                )));
            }
        }
        Ok(())
    }

    /// Labels every cell whose center satisfies `inside` with `label`.
    pub fn paint(&mut self, label: Label, inside: impl Fn(f64, f64) -> bool) {
        let (nz, nx) = self.grid.dim();
        for iz in 0..nz {
            for ix in 0..nx {
                let (x, z) = self.cell_center(iz, ix);
                if inside(x, z) {
                    self.grid[[iz, ix]] = label;
                }
            }
        }
    }

    /// Builds a mask from a grayscale raster (row 0 = shallowest). Pixels above
    /// `threshold` become `kind`, the rest background.
    pub fn from_raster(
        raster: &Array2<u8>,
        threshold: u8,
        kind: RegionKind,
        hyper_weight: f64,
        geometry: &PhantomGeometry,
    ) -> Result<Self> {
        let grid = raster.mapv(|v| {
            if v > threshold {
                Label::from(kind)
            } else {
                Label::Background
            }
        });
        let mask = Self {
            grid,
            hyper_weight: if kind == RegionKind::Hyperechoic {
                hyper_weight
            } else {
                1.0
            },
            geometry: geometry.clone(),
        };
        mask.validate()?;
        Ok(mask)
    }
}

/// Margin kept between any procedural region and the phantom border.
const REGION_MARGIN: f64 = 1.0e-3;

/// Random single-region mask of the requested shape, fully inside `geometry`.
///
/// Region sizes: disks of radius 3-10 mm, ellipses with semi-axes 3-10 mm and
/// random orientation, and star-shaped blobs whose radius function is a
/// perturbed circle (so the region is always connected).
pub fn procedural_mask(
    geometry: &PhantomGeometry,
    seed: u64,
    shape: MaskShape,
    kind: RegionKind,
) -> Result<EchogenicityMask> {
    geometry.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = EchogenicityMask::background(geometry, DEFAULT_MASK_CELL);

    let max_extent = (geometry.x_span.min(geometry.z_span) / 2.0 - REGION_MARGIN).max(0.0);
    if max_extent <= 0.0 {
        return Err(Error::invalid("phantom too small for a procedural region"));
    }
    let size = |rng: &mut ChaCha8Rng| -> f64 {
        let r: f64 = rng.random_range(3.0e-3..10.0e-3);
        r.min(max_extent * 0.95)
    };

    // Each shape reports its bounding radius so the center can be placed inside the margins.
    let region: Box<dyn Fn(f64, f64) -> bool> = match shape {
        MaskShape::Disk => {
            let r = size(&mut rng);
            let (cx, cz) = place_center(&mut rng, geometry, r);
            Box::new(move |x, z| (x - cx).powi(2) + (z - cz).powi(2) <= r * r)
        }
        MaskShape::Ellipse => {
            let a = size(&mut rng);
            let b = size(&mut rng);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let (cx, cz) = place_center(&mut rng, geometry, a.max(b));
            let (s, c) = phi.sin_cos();
            Box::new(move |x, z| {
                let (dx, dz) = (x - cx, z - cz);
                let u = c * dx + s * dz;
                let v = -s * dx + c * dz;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            })
        }
        MaskShape::Blob => {
            let r0 = size(&mut rng) / 1.45;
            let harmonics: Vec<(f64, f64)> = (2..=4)
                .map(|_| (rng.random_range(0.0..0.15), rng.random_range(0.0..std::f64::consts::TAU)))
                .collect();
            let (cx, cz) = place_center(&mut rng, geometry, r0 * 1.45);
            Box::new(move |x, z| {
                let (dx, dz) = (x - cx, z - cz);
                let theta = dz.atan2(dx);
                let scale: f64 = 1.0
                    + harmonics
                        .iter()
                        .enumerate()
                        .map(|(k, (amp, ph))| amp * ((k as f64 + 2.0) * theta + ph).cos())
                        .sum::<f64>();
                dx.hypot(dz) <= r0 * scale
            })
        }
    };
    let label = Label::from(kind);
    mask.paint(label, region);

    if kind == RegionKind::Hyperechoic {
        let (lo, hi) = HYPER_WEIGHT_RANGE;
        mask.hyper_weight = rng.random_range(lo..=hi);
    }
    Ok(mask)
}

fn place_center(rng: &mut ChaCha8Rng, geometry: &PhantomGeometry, radius: f64) -> (f64, f64) {
    let m = radius + REGION_MARGIN;
    let cx = rng.random_range(geometry.x_min() + m..=geometry.x_max() - m);
    let cz = rng.random_range(geometry.z_min() + m..=geometry.z_max() - m);
    (cx, cz)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region_touches_border(mask: &EchogenicityMask) -> bool {
        let (nz, nx) = mask.shape();
        let margin_cells = (REGION_MARGIN / DEFAULT_MASK_CELL) as usize - 1;
        mask.grid.indexed_iter().any(|((iz, ix), &l)| {
            l != Label::Background
                && (iz < margin_cells
                    || ix < margin_cells
                    || iz >= nz - margin_cells
                    || ix >= nx - margin_cells)
        })
    }

    #[test]
    fn deterministic_given_seed() {
        let g = PhantomGeometry::default();
        let a = procedural_mask(&g, 1, MaskShape::Disk, RegionKind::Anechoic).unwrap();
        let b = procedural_mask(&g, 1, MaskShape::Disk, RegionKind::Anechoic).unwrap();
        assert_eq!(a, b);
        let c = procedural_mask(&g, 2, MaskShape::Disk, RegionKind::Anechoic).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn regions_stay_inside_margins() {
        let g = PhantomGeometry::default();
        for seed in 0..12 {
            for shape in [MaskShape::Disk, MaskShape::Ellipse, MaskShape::Blob] {
                for kind in [RegionKind::Anechoic, RegionKind::Hyperechoic] {
                    let m = procedural_mask(&g, seed, shape, kind).unwrap();
                    assert!(m.has_label(Label::from(kind)), "{shape:?} seed {seed} is empty");
                    assert!(!region_touches_border(&m), "{shape:?} seed {seed} reaches border");
                    m.validate().unwrap();
                }
            }
        }
    }

    #[test]
    fn hyperechoic_weight_in_range() {
        let g = PhantomGeometry::default();
        let m = procedural_mask(&g, 3, MaskShape::Disk, RegionKind::Hyperechoic).unwrap();
        assert!(m.hyper_weight >= 2.0 && m.hyper_weight <= 15.8);
        assert_eq!(m.weight(Label::Anechoic), 0.0);
    }

    #[test]
    fn label_lookup_matches_paint() {
        let g = PhantomGeometry::default();
        let mut m = EchogenicityMask::background(&g, DEFAULT_MASK_CELL);
        m.paint(Label::Anechoic, |x, z| x.hypot(z - 30e-3) < 5e-3);
        assert_eq!(m.label_at(0.0, 30e-3), Label::Anechoic);
        assert_eq!(m.label_at(0.0, 36e-3), Label::Background);
        // border points clamp to edge cells
        assert_eq!(m.label_at(g.x_max(), g.z_max()), Label::Background);
    }
}

use serde::{Deserialize, Serialize};

use crate::beamformer::ImageGrid;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiRole {
    Roi,
    Background,
}

/// Circular region, center `(x, z)` and radius in meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiSpec {
    pub center: [f64; 2],
    pub radius: f64,
    pub role: RoiRole,
}

/// Pixel `(iz, ix)` indices, row-major ordered.
pub type PixelSet = Vec<(usize, usize)>;

/// Pixels whose centers lie within `radius` of the center.
///
/// The disk must fit in the grid extended by half a pixel on each side.
pub fn circular_roi(spec: &RoiSpec, grid: &ImageGrid) -> Result<PixelSet> {
    if !(spec.radius > 0.0) {
        return Err(Error::invalid("ROI radius must be positive"));
    }
    let [cx, cz] = spec.center;
    let r = spec.radius;
    let tol = 1e-12;
    let inside = cx - r >= grid.x0 - grid.dx / 2.0 - tol
        && cx + r <= grid.x_max() + grid.dx / 2.0 + tol
        && cz - r >= grid.z0 - grid.dz / 2.0 - tol
        && cz + r <= grid.z_max() + grid.dz / 2.0 + tol;
    if !inside {
        return Err(Error::invalid(format!(
            "ROI at ({cx}, {cz}) radius {r} does not fit inside the image grid"
        )));
    }
    let ix_lo = (((cx - r - grid.x0) / grid.dx).floor().max(0.0)) as usize;
    let ix_hi = (((cx + r - grid.x0) / grid.dx).ceil() as usize).min(grid.nx - 1);
    let iz_lo = (((cz - r - grid.z0) / grid.dz).floor().max(0.0)) as usize;
    let iz_hi = (((cz + r - grid.z0) / grid.dz).ceil() as usize).min(grid.nz - 1);
    let mut set = Vec::new();
    for iz in iz_lo..=iz_hi {
        for ix in ix_lo..=ix_hi {
            let d2 = (grid.x(ix) - cx).powi(2) + (grid.z(iz) - cz).powi(2);
            if d2 <= r * r * (1.0 + 1e-12) {
                set.push((iz, ix));
            }
        }
    }
    if set.is_empty() {
        return Err(Error::invalid(format!(
            "ROI at ({cx}, {cz}) radius {r} selects no pixel"
        )));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> ImageGrid {
        ImageGrid::new(-10e-3, 0.2e-3, 101, 5e-3, 0.1e-3, 201).unwrap()
    }

    fn spec(x: f64, z: f64, r: f64) -> RoiSpec {
        RoiSpec {
            center: [x, z],
            radius: r,
            role: RoiRole::Roi,
        }
    }

    #[test]
    fn sub_pixel_radius_on_node_is_one_pixel() {
        let g = grid();
        let set = circular_roi(&spec(g.x(40), g.z(70), 0.05e-3), &g).unwrap();
        assert_eq!(set, vec![(70, 40)]);
    }

    #[test]
    fn pixel_count_matches_area() {
        let g = grid();
        let r = 3e-3;
        let set = circular_roi(&spec(0.0, 15e-3, r), &g).unwrap();
        let expected = std::f64::consts::PI * r * r / (g.dx * g.dz);
        let rel = (set.len() as f64 - expected).abs() / expected;
        assert!(rel < 0.1, "{} vs {expected}", set.len());
    }

    #[test]
    fn whole_pixel_translation_shifts_the_set() {
        let g = grid();
        let a = circular_roi(&spec(g.x(50), g.z(100), 1.3e-3), &g).unwrap();
        let b = circular_roi(&spec(g.x(53), g.z(95), 1.3e-3), &g).unwrap();
        let shifted: PixelSet = a.iter().map(|&(iz, ix)| (iz - 5, ix + 3)).collect();
        assert_eq!(shifted, b);
    }

    #[test]
    fn disk_outside_grid_is_rejected() {
        let g = grid();
        assert!(circular_roi(&spec(9.5e-3, 15e-3, 2e-3), &g).is_err());
        assert!(circular_roi(&spec(0.0, 15e-3, 0.0), &g).is_err());
    }
}

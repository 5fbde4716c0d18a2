//! Delay-and-sum beamforming of plane-wave channel data and coherent compounding.

use ndarray::{Array2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::simulator::{ChannelData, PhantomGeometry, ProbeConfig};
use crate::{Error, Result};

/// Number of angles in the full compounding sequence.
pub const FULL_ANGLE_COUNT: usize = 75;
/// The full sequence spans ±16° evenly.
pub const ANGLE_MAX_DEG: f64 = 16.0;

/// Spacing of the full sequence: 32° / 74 ≈ 0.432°.
pub fn angle_step_deg() -> f64 {
    2.0 * ANGLE_MAX_DEG / (FULL_ANGLE_COUNT - 1) as f64
}

/// Uniform pixel grid. `x` is lateral, `z` is depth, data is stored `(nz, nx)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageGrid {
    pub x0: f64,
    pub dx: f64,
    pub nx: usize,
    pub z0: f64,
    pub dz: f64,
    pub nz: usize,
}

impl ImageGrid {
    pub fn new(x0: f64, dx: f64, nx: usize, z0: f64, dz: f64, nz: usize) -> Result<Self> {
        let g = Self {
            x0,
            dx,
            nx,
            z0,
            dz,
            nz,
        };
        g.validate()?;
        Ok(g)
    }

    /// `nz × nx` grid whose outermost pixel centers sit on the phantom border.
    pub fn spanning(geometry: &PhantomGeometry, nz: usize, nx: usize) -> Result<Self> {
        if nz < 2 || nx < 2 {
            return Err(Error::invalid("grid needs at least 2 pixels per axis"));
        }
        Self::new(
            geometry.x_min(),
            geometry.x_span / (nx - 1) as f64,
            nx,
            geometry.z_min(),
            geometry.z_span / (nz - 1) as f64,
            nz,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.nz == 0 {
            return Err(Error::invalid("grid must have at least one pixel per axis"));
        }
        if !(self.dx > 0.0 && self.dz > 0.0) {
            return Err(Error::invalid("grid spacing must be positive (strictly increasing axes)"));
        }
        if !(self.x0.is_finite() && self.z0.is_finite() && self.z0 >= 0.0) {
            return Err(Error::invalid("grid origin must be finite with non-negative depth"));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nz, self.nx)
    }

    pub fn x(&self, ix: usize) -> f64 {
        self.x0 + ix as f64 * self.dx
    }

    pub fn z(&self, iz: usize) -> f64 {
        self.z0 + iz as f64 * self.dz
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    pub fn zs(&self) -> Vec<f64> {
        (0..self.nz).map(|i| self.z(i)).collect()
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.nx - 1)
    }

    pub fn z_max(&self) -> f64 {
        self.z(self.nz - 1)
    }
}

/// Beamformed RF image with the list of steering angles (radians) it combines.
#[derive(Clone, Debug, PartialEq)]
pub struct RfImage {
    pub data: Array2<f64>,
    pub grid: ImageGrid,
    pub n_compound: usize,
    pub angles: Vec<f64>,
}

/// JSON sidecar for RF image files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfImageMeta {
    pub grid: ImageGrid,
    pub n_compound: usize,
    pub angles: Vec<f64>,
}

impl RfImage {
    pub fn new(data: Array2<f64>, grid: ImageGrid, angles: Vec<f64>) -> Result<Self> {
        let img = Self {
            n_compound: angles.len(),
            data,
            grid,
            angles,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.data.dim() != self.grid.shape() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.grid.nz, self.grid.nx],
                actual: self.data.shape().to_vec(),
            });
        }
        if self.n_compound == 0 || self.n_compound != self.angles.len() {
            return Err(Error::invalid(format!(
                "n_compound {} must equal the number of angles {} and be at least 1",
                self.n_compound,
                self.angles.len()
            )));
        }
        if !self.data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("RF image".into()));
        }
        Ok(())
    }

    pub fn meta(&self) -> RfImageMeta {
        RfImageMeta {
            grid: self.grid.clone(),
            n_compound: self.n_compound,
            angles: self.angles.clone(),
        }
    }

    /// Same metadata, different pixel values.
    pub fn with_data(&self, data: Array2<f64>) -> Result<Self> {
        if data.dim() != self.data.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.data.shape().to_vec(),
                actual: data.shape().to_vec(),
            });
        }
        Ok(Self {
            data,
            grid: self.grid.clone(),
            n_compound: self.n_compound,
            angles: self.angles.clone(),
        })
    }
}

/// Plane-wave transmit delay to `pos = (x, z)` for steering `angle`.
///
/// The `half_aperture · |sin θ|` offset references the wavefront to the first
/// element that fires, which keeps delays non-negative over the aperture.
pub fn tx_delay(pos: [f64; 2], angle: f64, c: f64, half_aperture: f64) -> f64 {
    let (s, co) = angle.sin_cos();
    (pos[1] * co + pos[0] * s + half_aperture * s.abs()) / c
}

/// Receive delay from `pos = (x, z)` back to the element at lateral `element_x`.
pub fn rx_delay(pos: [f64; 2], element_x: f64, c: f64) -> f64 {
    (pos[0] - element_x).hypot(pos[1]) / c
}

/// Delay-and-sum with full-aperture rectangular apodization and linear
/// interpolation between samples. Delays falling outside the record contribute 0.
pub fn das_beamform(data: &ChannelData, probe: &ProbeConfig, grid: &ImageGrid) -> Result<RfImage> {
    probe.validate()?;
    grid.validate()?;
    if (data.fs - probe.fs).abs() > 1e-9 * probe.fs {
        return Err(Error::invalid(format!(
            "channel data sampled at {} Hz but probe expects {} Hz",
            data.fs, probe.fs
        )));
    }
    if data.num_elements() != probe.num_elements {
        return Err(Error::ShapeMismatch {
            expected: vec![probe.num_elements, data.num_samples()],
            actual: data.samples.shape().to_vec(),
        });
    }

    let element_x = probe.element_x();
    let xh = probe.half_aperture();
    let n_samples = data.num_samples();
    let last = n_samples as f64 - 1.0;
    let xs = grid.xs();
    let mut out = Array2::<f64>::zeros(grid.shape());

    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(iz, mut row)| {
            let z = grid.z(iz);
            for (ix, px) in row.iter_mut().enumerate() {
                let pos = [xs[ix], z];
                let t_tx = tx_delay(pos, data.angle, probe.c, xh);
                let mut acc = 0.0;
                for (e, &ex) in element_x.iter().enumerate() {
                    let u = (t_tx + rx_delay(pos, ex, probe.c) - data.t0) * data.fs;
                    if !(u >= 0.0 && u <= last) {
                        continue;
                    }
                    let i = u.floor() as usize;
                    let f = u - i as f64;
                    let trace = data.samples.row(e);
                    let v = if i + 1 < n_samples {
                        trace[i] * (1.0 - f) + trace[i + 1] * f
                    } else {
                        trace[i]
                    };
                    acc += v;
                }
                *px = acc;
            }
        });

    RfImage::new(out, grid.clone(), vec![data.angle])
}

/// Pixel-wise mean of images on a common grid.
pub fn compound(images: &[RfImage]) -> Result<RfImage> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("cannot compound an empty image list"))?;
    if let Some(bad) = images.iter().find(|im| im.grid != first.grid) {
        return Err(Error::invalid(format!(
            "grid mismatch in compound: {:?} vs {:?}",
            bad.grid, first.grid
        )));
    }
    if images.len() == 1 {
        return Ok(first.clone());
    }
    let mut sum = Array2::<f64>::zeros(first.grid.shape());
    for im in images {
        sum += &im.data;
    }
    let n = images.len() as f64;
    sum.mapv_inplace(|v| v / n);
    let angles: Vec<f64> = images.iter().flat_map(|im| im.angles.iter().copied()).collect();
    Ok(RfImage {
        data: sum,
        grid: first.grid.clone(),
        n_compound: images.iter().map(|im| im.n_compound).sum(),
        angles,
    })
}

/// Indices into the 75-angle sequence used by [`angle_set`].
pub fn angle_indices(k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > FULL_ANGLE_COUNT {
        return Err(Error::invalid(format!(
            "angle count {k} outside 1..={FULL_ANGLE_COUNT}"
        )));
    }
    let last = FULL_ANGLE_COUNT - 1;
    if k == 1 {
        return Ok(vec![last / 2]);
    }
    let step = last as f64 / (k - 1) as f64;
    // first half by rounding, second half mirrored so the set stays symmetric
    let mut idx = vec![0usize; k];
    for i in 0..k.div_ceil(2) {
        let v = (i as f64 * step).round() as usize;
        idx[i] = v;
        idx[k - 1 - i] = last - v;
    }
    Ok(idx)
}

/// `k` steering angles (radians), an evenly spaced symmetric subset of the
/// 75-angle sequence spanning -16° to +16°. `k = 1` gives {0°}.
pub fn angle_set(k: usize) -> Result<Vec<f64>> {
    let mid = (FULL_ANGLE_COUNT - 1) / 2;
    Ok(angle_indices(k)?
        .into_iter()
        .map(|i| {
            // signed offset from the center keeps 0° exact and the set symmetric
            let offset = i as f64 - mid as f64;
            (offset * angle_step_deg()).to_radians()
        })
        .collect())
}

/// Beamforms each emission and compounds the result.
pub fn beamform_compound(
    emissions: &[ChannelData],
    probe: &ProbeConfig,
    grid: &ImageGrid,
) -> Result<RfImage> {
    let images = emissions
        .iter()
        .map(|d| das_beamform(d, probe, grid))
        .collect::<Result<Vec<_>>>()?;
    compound(&images)
}

/// Elementwise `f(a, b)` over two images on the same grid.
pub(crate) fn zip_images(a: &RfImage, b: &RfImage, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Array2<f64>> {
    if a.grid != b.grid {
        return Err(Error::invalid("images live on different grids"));
    }
    let mut out = Array2::<f64>::zeros(a.data.dim());
    Zip::from(&mut out)
        .and(&a.data)
        .and(&b.data)
        .for_each(|o, &x, &y| *o = f(x, y));
    Ok(out)
}

//! On-disk forms of RF images, channel data and phantoms: a USTF tensor
//! `name.ustf` next to a JSON sidecar `name.json`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::tensor_file::{read_tensor, write_atomic, write_tensor, TensorRecord};
use crate::beamformer::{RfImage, RfImageMeta};
use crate::error::{Error, Result};
use crate::simulator::{ChannelData, ChannelMeta, Phantom, ProbeConfig};

/// Sidecar path for a tensor path.
pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json(value)?.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn save_rf_image(path: &Path, image: &RfImage) -> Result<()> {
    image.validate()?;
    write_tensor(path, &TensorRecord::from_array2(&image.data))?;
    write_json(&sidecar(path), &image.meta())
}

pub fn load_rf_image(path: &Path) -> Result<RfImage> {
    let meta: RfImageMeta = read_json(&sidecar(path))?;
    let data = read_tensor(path)?.to_array2().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let image = RfImage {
        data,
        grid: meta.grid,
        n_compound: meta.n_compound,
        angles: meta.angles,
    };
    image.validate().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(image)
}

pub fn save_channel_data(path: &Path, data: &ChannelData, probe: &ProbeConfig, seed: u64) -> Result<()> {
    write_tensor(path, &TensorRecord::from_array2(&data.samples))?;
    write_json(
        &sidecar(path),
        &ChannelMeta {
            angle: data.angle,
            fs: data.fs,
            t0: data.t0,
            num_elements: data.num_elements(),
            num_samples: data.num_samples(),
            probe: probe.clone(),
            seed,
        },
    )
}

pub fn load_channel_data(path: &Path) -> Result<(ChannelData, ChannelMeta)> {
    let meta: ChannelMeta = read_json(&sidecar(path))?;
    let samples = read_tensor(path)?.to_array2()?;
    if samples.dim() != (meta.num_elements, meta.num_samples) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!(
                "tensor {:?} disagrees with sidecar ({}, {})",
                samples.dim(),
                meta.num_elements,
                meta.num_samples
            ),
        });
    }
    Ok((
        ChannelData {
            samples,
            angle: meta.angle,
            fs: meta.fs,
            t0: meta.t0,
        },
        meta,
    ))
}

/// Scatterers as an `[n, 3]` tensor of `(x, z, amplitude)`, the mask labels
/// as `name_mask.ustf` and the description as the sidecar.
pub fn save_phantom(path: &Path, phantom: &Phantom) -> Result<()> {
    let mut table = Array2::<f64>::zeros((phantom.len(), 3));
    for (mut row, (p, a)) in table.outer_iter_mut().zip(phantom.positions.iter().zip(&phantom.amplitudes)) {
        row[0] = p[0];
        row[1] = p[1];
        row[2] = *a;
    }
    write_tensor(path, &TensorRecord::from_array2(&table))?;
    let labels = phantom.mask.grid.mapv(|l| l.code() as f64);
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("phantom");
    write_tensor(
        &path.with_file_name(format!("{stem}_mask.ustf")),
        &TensorRecord::from_array2(&labels),
    )?;
    write_json(&sidecar(path), &phantom.meta())
}

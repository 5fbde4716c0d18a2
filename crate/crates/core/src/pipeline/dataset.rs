//! Paired-image datasets on disk.
//!
//! A dataset directory holds `sample_NNNN_x0.ustf` / `sample_NNNN_x1.ustf`
//! (each with a JSON sidecar) and `manifest.json`. Building is resumable:
//! samples whose files are present and consistent are kept, partially written
//! ones are moved to `quarantine/` and regenerated.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::store::{load_rf_image, read_json, save_rf_image, sidecar, write_json};
use crate::beamformer::{angle_indices, compound, das_beamform, ImageGrid, RfImage, FULL_ANGLE_COUNT};
use crate::error::{Error, Result};
use crate::flow::{derived_rng, PairedSample};
use crate::simulator::{
    generate_phantom_with_density, procedural_mask, simulate_planewaves, MaskShape, Phantom, ProbeConfig,
    RegionKind,
};

pub const MANIFEST: &str = "manifest.json";
pub const QUARANTINE: &str = "quarantine";
const TAG_SAMPLE: u64 = 0xda7a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub index: usize,
    pub mask_seed: u64,
    pub phantom_seed: u64,
    pub mask_shape: MaskShape,
    pub region_kind: RegionKind,
    pub x0: String,
    pub x1: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub config: RunConfig,
    pub samples: Vec<SampleEntry>,
}

/// The deterministic recipe of sample `index`.
pub fn plan_sample(seed: u64, index: usize) -> SampleEntry {
    let mut rng = derived_rng(seed, &[TAG_SAMPLE, index as u64]);
    let mask_seed = rng.next_u64();
    let phantom_seed = rng.next_u64();
    let mask_shape = [MaskShape::Disk, MaskShape::Ellipse, MaskShape::Blob][rng.random_range(0..3)];
    let region_kind = if rng.random_bool(0.5) {
        RegionKind::Anechoic
    } else {
        RegionKind::Hyperechoic
    };
    SampleEntry {
        index,
        mask_seed,
        phantom_seed,
        mask_shape,
        region_kind,
        x0: format!("sample_{index:04}_x0.ustf"),
        x1: format!("sample_{index:04}_x1.ustf"),
    }
}

/// Simulates the union of the `j`- and `k`-angle sets once and returns the
/// `k`-angle compound (`x0`) and the `j`-angle compound (`x1`).
pub fn compound_pair(
    phantom: &Phantom,
    probe: &ProbeConfig,
    grid: &ImageGrid,
    j: usize,
    k: usize,
) -> Result<(RfImage, RfImage)> {
    let kset = angle_indices(k)?;
    let jset = angle_indices(j)?;
    let mut union: Vec<usize> = kset.iter().chain(&jset).copied().collect();
    union.sort_unstable();
    union.dedup();
    let mid = (FULL_ANGLE_COUNT - 1) / 2;
    let angles: Vec<f64> = union
        .iter()
        .map(|&i| ((i as f64 - mid as f64) * crate::beamformer::angle_step_deg()).to_radians())
        .collect();
    let channels = simulate_planewaves(phantom, probe, &angles)?;
    let images = channels
        .iter()
        .map(|c| das_beamform(c, probe, grid))
        .collect::<Result<Vec<_>>>()?;
    let pick = |set: &[usize]| -> Result<RfImage> {
        let chosen: Vec<RfImage> = set
            .iter()
            .map(|i| images[union.binary_search(i).expect("index in union")].clone())
            .collect();
        compound(&chosen)
    };
    Ok((pick(&kset)?, pick(&jset)?))
}

/// Simulates one planned sample.
pub fn generate_sample(config: &RunConfig, entry: &SampleEntry) -> Result<(RfImage, RfImage)> {
    let mask = procedural_mask(&config.geometry, entry.mask_seed, entry.mask_shape, entry.region_kind)?;
    let phantom = generate_phantom_with_density(
        &config.geometry,
        &mask,
        &config.probe,
        entry.phantom_seed,
        config.dataset.density_per_cell,
    )?;
    compound_pair(
        &phantom,
        &config.probe,
        &config.image_grid()?,
        config.scenario.j,
        config.scenario.k,
    )
}

fn sample_files(dir: &Path, entry: &SampleEntry) -> Vec<PathBuf> {
    let x0 = dir.join(&entry.x0);
    let x1 = dir.join(&entry.x1);
    vec![sidecar(&x0), x0, sidecar(&x1), x1]
}

/// Loads both images of a sample if they exist and match the config.
fn load_complete(dir: &Path, entry: &SampleEntry, config: &RunConfig) -> Option<(RfImage, RfImage)> {
    let grid = config.image_grid().ok()?;
    let x0 = load_rf_image(&dir.join(&entry.x0)).ok()?;
    let x1 = load_rf_image(&dir.join(&entry.x1)).ok()?;
    let ok = x0.grid == grid
        && x1.grid == grid
        && x0.n_compound == config.scenario.k
        && x1.n_compound == config.scenario.j;
    ok.then_some((x0, x1))
}

fn quarantine(dir: &Path, files: &[PathBuf]) -> Result<()> {
    let qdir = dir.join(QUARANTINE);
    for f in files {
        let partial = {
            let mut s = f.as_os_str().to_owned();
            s.push(".partial");
            PathBuf::from(s)
        };
        for path in [f.clone(), partial] {
            if !path.exists() {
                continue;
            }
            fs::create_dir_all(&qdir).map_err(|e| Error::io(&qdir, e))?;
            let name = path.file_name().expect("file name").to_string_lossy().into_owned();
            let mut target = qdir.join(&name);
            let mut n = 1;
            while target.exists() {
                target = qdir.join(format!("{name}.{n}"));
                n += 1;
            }
            warn!("quarantining {} -> {}", path.display(), target.display());
            fs::rename(&path, &target).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

/// Builds (or completes) the dataset described by `config` in `dir`.
pub fn build_dataset(config: &RunConfig, dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.exists() {
        let old: DatasetManifest = read_json(&manifest_path)?;
        if old.config != *config {
            return Err(Error::invalid(format!(
                "{} holds a dataset built with a different configuration",
                dir.display()
            )));
        }
    }
    let mut manifest = DatasetManifest {
        version: 1,
        config: config.clone(),
        samples: Vec::with_capacity(config.dataset.n_images),
    };
    for index in 0..config.dataset.n_images {
        let entry = plan_sample(config.seed, index);
        if load_complete(dir, &entry, config).is_some() {
            info!("sample {index}: present, skipping");
        } else {
            let files = sample_files(dir, &entry);
            quarantine(dir, &files)?;
            info!("sample {index}: simulating ({:?}, {:?})", entry.mask_shape, entry.region_kind);
            let (x0, x1) = generate_sample(config, &entry)?;
            save_rf_image(&dir.join(&entry.x1), &x1)?;
            save_rf_image(&dir.join(&entry.x0), &x0)?;
        }
        manifest.samples.push(entry);
        write_json(&manifest_path, &manifest)?;
    }
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}

/// Reads a dataset directory back as paired samples.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<PairedSample>)> {
    let manifest: DatasetManifest = read_json(&dir.join(MANIFEST))?;
    if manifest.samples.len() != manifest.config.dataset.n_images {
        return Err(Error::Format {
            path: dir.join(MANIFEST),
            reason: format!(
                "incomplete dataset: {} of {} samples",
                manifest.samples.len(),
                manifest.config.dataset.n_images
            ),
        });
    }
    let samples = manifest
        .samples
        .iter()
        .map(|e| PairedSample::new(load_rf_image(&dir.join(&e.x0))?, load_rf_image(&dir.join(&e.x1))?))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

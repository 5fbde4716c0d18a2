//! Run configuration: one JSON document describing a whole experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beamformer::{ImageGrid, FULL_ANGLE_COUNT};
use crate::error::{Error, Result};
use crate::flow::{Scenario, TrainOptions};
use crate::network::{Hyperparams, NetConfig};
use crate::simulator::{PhantomGeometry, ProbeConfig, DEFAULT_DENSITY_PER_CELL};

pub const CONFIG_VERSION: u32 = 1;

/// Beamforming grid size; the grid spans the phantom geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSize {
    pub nz: usize,
    pub nx: usize,
}

impl Default for GridSize {
    fn default() -> Self {
        Self { nz: 256, nx: 64 }
    }
}

/// Network shape without the input size, which comes from the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkShape {
    pub depth: usize,
    pub base_channels: usize,
    pub time_dim: usize,
}

impl Default for NetworkShape {
    fn default() -> Self {
        let d = NetConfig::default();
        Self {
            depth: d.depth,
            base_channels: d.base_channels,
            time_dim: d.time_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_images: usize,
    /// Scatterers per resolution cell.
    pub density_per_cell: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_images: 40,
            density_per_cell: DEFAULT_DENSITY_PER_CELL,
        }
    }
}

fn default_scenario() -> Scenario {
    Scenario::default()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

/// Everything needed to rerun an experiment. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub geometry: PhantomGeometry,
    #[serde(default)]
    pub grid: GridSize,
    #[serde(default = "default_scenario")]
    pub scenario: Scenario,
    #[serde(default)]
    pub hyper: Hyperparams,
    #[serde(default)]
    pub network: NetworkShape,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: TrainOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            probe: ProbeConfig::default(),
            geometry: PhantomGeometry::default(),
            grid: GridSize::default(),
            scenario: Scenario::default(),
            hyper: Hyperparams::default(),
            network: NetworkShape::default(),
            dataset: DatasetSpec::default(),
            train: TrainOptions::default(),
            seed: 0,
            output_dir: default_output_dir(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every field. `J == K` is accepted here (a dataset can be built
    /// with identical compounding), training additionally needs `J < K`.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::invalid(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.probe.validate()?;
        self.geometry.validate()?;
        self.image_grid()?;
        let s = &self.scenario;
        if s.j == 0 || s.j > s.k || s.k > FULL_ANGLE_COUNT {
            return Err(Error::invalid(format!(
                "scenario needs 1 <= J <= K <= {FULL_ANGLE_COUNT}, got J={} K={}",
                s.j, s.k
            )));
        }
        if s.steps == 0 {
            return Err(Error::invalid("scenario steps must be at least 1"));
        }
        self.hyper.validate()?;
        self.net_config().validate()?;
        if !(self.dataset.density_per_cell > 0.0 && self.dataset.density_per_cell.is_finite()) {
            return Err(Error::invalid("dataset density must be positive"));
        }
        Ok(())
    }

    pub fn image_grid(&self) -> Result<ImageGrid> {
        ImageGrid::spanning(&self.geometry, self.grid.nz, self.grid.nx)
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            depth: self.network.depth,
            base_channels: self.network.base_channels,
            time_dim: self.network.time_dim,
            nz: self.grid.nz,
            nx: self.grid.nx,
        }
    }
}

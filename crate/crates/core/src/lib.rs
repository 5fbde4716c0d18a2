//! Plane-wave ultrasound denoising with a deterministic interpolation flow.
//!
//! The crate covers the whole chain:
//!
//! * [`simulator`]: point-scatterer phantoms and per-element RF channel data
//!   for steered plane-wave emissions.
//! * [`beamformer`]: delay-and-sum reconstruction and coherent compounding.
//! * [`flow`]: the straight-line interpolation between high-compounding (`x0`)
//!   and low-compounding (`x1`) images, its velocity target, training loop and
//!   the deterministic reverse sampler.
//! * [`network`]: the time-conditioned encoder/decoder CNN with hand-written
//!   backpropagation and Adam.
//! * [`metrics`]: CNR, gCNR, NRMSE, SSIM, two-sample KS and Gaussian QQ data.
//! * [`pipeline`]: tensor files, envelope / B-mode rendering, dataset
//!   building, checkpoints and reports.

pub mod beamformer;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod simulator;

pub use error::{Error, Result};

/// Converts degrees to radians.
pub fn deg(angle_deg: f64) -> f64 {
    angle_deg.to_radians()
}

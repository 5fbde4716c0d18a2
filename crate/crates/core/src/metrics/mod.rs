//! Image-quality metrics.
//!
//! Domain conventions used by the pipeline: CNR and gCNR on envelope images,
//! KS on B-mode intensities, NRMSE on RF data, SSIM on B-mode images.

mod contrast;
mod ks;
mod qq;
mod roi;
mod similarity;

pub use contrast::{cnr, cnr_values, gcnr, gcnr_values, GCNR_BINS};
pub use ks::{ks_coefficient, ks_statistic, ks_test, KsResult};
pub use qq::{inverse_normal_cdf, qq_gaussian, qq_middle_deviation};
pub use roi::{circular_roi, PixelSet, RoiRole, RoiSpec};
pub use similarity::{gaussian_taps, nrmse, ssim, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};

use serde::{Deserialize, Serialize};

/// Metrics for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub image: String,
    pub scenario: Option<String>,
    pub iterations: Option<usize>,
    /// One entry per ROI pair, in ROI-file order.
    pub cnr_db: Vec<f64>,
    pub gcnr: Vec<f64>,
    pub nrmse: Option<f64>,
    pub ssim: Option<f64>,
    pub ks: Option<KsResult>,
}

impl MetricsReport {
    pub fn validate(&self) -> crate::Result<()> {
        if self.gcnr.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(crate::Error::invalid("gCNR outside [0, 1]"));
        }
        if let Some(s) = self.ssim {
            if !(-1.0..=1.0 + 1e-12).contains(&s) {
                return Err(crate::Error::invalid("SSIM outside [-1, 1]"));
            }
        }
        if let Some(e) = self.nrmse {
            if !(e >= 0.0) {
                return Err(crate::Error::invalid("NRMSE must be non-negative"));
            }
        }
        Ok(())
    }
}

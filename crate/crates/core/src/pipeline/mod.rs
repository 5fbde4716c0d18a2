//! File formats, rendering and end-to-end orchestration.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod envelope;
pub mod report;
pub mod store;
pub mod tensor_file;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, TrainingInfo};
pub use config::RunConfig;
pub use dataset::{build_dataset, load_dataset, DatasetManifest};
pub use envelope::{bmode, envelope, envelope_data, BModeImage, DEFAULT_DYNAMIC_RANGE_DB};
pub use report::{emit_report, evaluate_image, load_roi_file, test_phantom_rois, Panel, RoiPair};
pub use tensor_file::{read_tensor, write_tensor, TensorRecord};

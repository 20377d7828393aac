//! Localization and detection metrics.

pub mod detection;
pub mod doa;

pub use detection::{
    average_precision, cell_center, cell_of, hungarian_match, mean_e1_e2, nms_sphere, Assignment, Detection,
    DetectionSet, E1E2,
};
pub use doa::{accuracy_at, error_histogram, mean_ae, DoaAccumulator, ErrorHistogram, EvalReport, SubMetrics};

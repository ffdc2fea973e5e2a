//! Experiment metrics, gradient estimates, saliency overlap and the FGSM
//! baseline.

mod fgsm;
mod gradient;
mod metrics;

pub use fgsm::{fgsm, FgsmOutcome, DEFAULT_EPS};
pub use gradient::{fd_gradient, overlap_stat, proportion_z, saliency_map, Overlap, SaliencyMap, DEFAULT_FD_STEP};
pub use metrics::{summarize, write_csv, write_table, AttackRecord, ExperimentMetrics, MetricsRow, NA};

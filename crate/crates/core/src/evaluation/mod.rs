//! Attribute probing and distribution metrics.

pub mod boundary;
pub mod metrics;
pub mod pr;
pub mod probe;

pub use boundary::{classify_codes, fit_boundary, fit_boundary_vectors, SemanticBoundary, SvmConfig};
pub use metrics::{ffd, metric_report, mse_metric, swd, MetricReport, SwdConfig};
pub use pr::{pr_curve, PrCurve, PrPoint};
pub use probe::{fit_probe_boundaries, score_codes, semantic_probe_experiment, Inverter, ProbeReport};

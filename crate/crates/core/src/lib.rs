//! Metric differential privacy (d_X-privacy) for linear and statistical
//! queries over histograms: privacy metrics, parameter selection, Laplace and
//! exponential mechanisms, synthetic data release and an experiment harness.

pub mod error;
pub mod harness;
pub mod mech;
pub mod metric;
pub mod select;
pub mod sensitivity;
pub mod statq;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    check_feasibility, validate_metric, FeasibilityReport, Histogram, MetricReport, ModelParams, NoisyResponse,
    PrivacyMetric, QueryMatrix, UniversePoints, DEFAULT_TOL,
};

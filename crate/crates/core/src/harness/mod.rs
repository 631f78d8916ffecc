//! Experiment engine: synthetic universes and queries, per-query parameter
//! selection and Monte-Carlo error estimates, threshold-metric sweeps, and the
//! CSV/JSON file formats used by the CLI.

mod experiment;
mod generate;
pub mod io;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{blowfish_metric, euclidean_metric, smooth_metric, uniform_metric};
use crate::types::{PrivacyMetric, UniversePoints};

pub use experiment::{
    estimate_rmse, run_blowfish_sweep, run_experiment, run_single_experiment, QueryRecord, RunReport, Summary,
    SweepCell, SweepReport,
};
pub use generate::{
    attribute_query, correlated_elevation_points, gen_histogram, gen_queries, gen_universe, CoordBox,
};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_RECORDS: u64 = 10_000;
/// Histogram sampling law recorded in every report.
pub const HISTOGRAM_LAW: &str = "multinomial-uniform";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UniverseSpec {
    Random { size: usize, bounds: CoordBox },
    Csv { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MetricSpec {
    Euclidean,
    Uniform { eps: f64 },
    Blowfish { threshold: f64, eps: f64 },
    Smooth { threshold: f64, eps: f64 },
}

impl MetricSpec {
    pub fn build(&self, points: &UniversePoints) -> Result<PrivacyMetric> {
        match *self {
            MetricSpec::Euclidean => euclidean_metric(points),
            MetricSpec::Uniform { eps } => uniform_metric(points.len(), eps),
            MetricSpec::Blowfish { threshold, eps } => blowfish_metric(&euclidean_metric(points)?, threshold, eps),
            MetricSpec::Smooth { threshold, eps } => smooth_metric(&euclidean_metric(points)?, threshold, eps),
        }
    }

    pub fn label(&self) -> String {
        match self {
            MetricSpec::Euclidean => "euclidean".into(),
            MetricSpec::Uniform { eps } => format!("uniform(eps={eps})"),
            MetricSpec::Blowfish { threshold, eps } => format!("blowfish(T={threshold},eps={eps})"),
            MetricSpec::Smooth { threshold, eps } => format!("smooth(T={threshold},eps={eps})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientLaw {
    /// Uniform on `[0, 1]`.
    Uniform,
    /// Uniform on `{0, 1}`.
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QuerySpec {
    Random { count: usize, k: usize, law: CoefficientLaw },
    /// A single query whose coefficients are a named point attribute.
    Attribute { name: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    ClosedForm,
    Strategy1,
    Strategy2,
    Psa,
    Altmin,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::ClosedForm => "closed-form",
            Strategy::Strategy1 => "strategy1",
            Strategy::Strategy2 => "strategy2",
            Strategy::Psa => "psa",
            Strategy::Altmin => "altmin",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Mechanism {
    Vanilla,
    DxLaplace { strategy: Strategy },
    Smalldb { alpha: f64 },
    Mwem { rounds: usize },
}

impl Mechanism {
    pub fn name(&self) -> String {
        match self {
            Mechanism::Vanilla => "vanilla".into(),
            Mechanism::DxLaplace { strategy } => strategy.name().into(),
            Mechanism::Smalldb { .. } => "smalldb".into(),
            Mechanism::Mwem { .. } => "mwem".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    L1,
    #[default]
    L2sq,
    Linf,
}

impl Loss {
    pub fn eval(&self, z: &[f64], truth: &[f64]) -> f64 {
        let diffs = z.iter().zip(truth).map(|(a, b)| a - b);
        match self {
            Loss::L1 => diffs.map(f64::abs).sum(),
            Loss::L2sq => diffs.map(|d| d * d).sum(),
            Loss::Linf => diffs.map(f64::abs).fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub universe: UniverseSpec,
    pub metric: MetricSpec,
    pub queries: QuerySpec,
    pub mechanism: Mechanism,
    pub trials: usize,
    pub loss: Loss,
    /// Records in the multinomial histogram.
    pub records: u64,
}

impl ExperimentConfig {
    /// Desk-scale default: 50 random points in `[0,100]²`, Euclidean metric,
    /// 1000 uniform single queries, closed-form parameters.
    pub fn desk(seed: u64) -> Self {
        Self {
            seed,
            universe: UniverseSpec::Random {
                size: 50,
                bounds: CoordBox::default(),
            },
            metric: MetricSpec::Euclidean,
            queries: QuerySpec::Random {
                count: 1000,
                k: 1,
                law: CoefficientLaw::Uniform,
            },
            mechanism: Mechanism::DxLaplace {
                strategy: Strategy::ClosedForm,
            },
            trials: 100,
            loss: Loss::L2sq,
            records: DEFAULT_RECORDS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let UniverseSpec::Random { size, bounds } = &self.universe {
            if *size < 2 {
                return Err(Error::Invalid(format!("universe needs N >= 2, got {size}")));
            }
            bounds.validate()?;
        }
        if self.trials == 0 {
            return Err(Error::Invalid("trials must be >= 1".into()));
        }
        if let QuerySpec::Random { count, k, .. } = self.queries {
            if count == 0 || k == 0 {
                return Err(Error::Invalid("query count and K must be >= 1".into()));
            }
        }
        match self.mechanism {
            Mechanism::Smalldb { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                Err(Error::Invalid(format!("alpha must lie in (0, 1), got {alpha}")))
            }
            Mechanism::Mwem { rounds: 0 } => Err(Error::Invalid("MWEM needs rounds >= 1".into())),
            _ => Ok(()),
        }
    }

    pub fn load_universe(&self) -> Result<UniversePoints> {
        match &self.universe {
            UniverseSpec::Random { size, bounds } => gen_universe(*size, *bounds, self.seed),
            UniverseSpec::Csv { path } => io::ingest_points_csv(path),
        }
    }
}

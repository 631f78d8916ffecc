//! Parameter selection: procedures that turn a query matrix and a privacy
//! metric into model parameters `(c, Q′)` satisfying
//! `‖Q′_{:,i} − Q′_{:,j}‖₁ ≤ d(i, j)` for every pair.
//!
//! All closed forms keep `c ⊙ Q′ = Q` (zero bias). A row whose coefficients
//! never differ across a finitely budgeted pair gets `c_k = 0` and a zero row
//! in `Q′`.

mod altmin;
mod psa;

pub use altmin::{altmin_preopt, AltMinOutcome};
pub use psa::{psa, PsaOutcome, PsaStep, PSA_DEFAULT_MAX_ITERS, PSA_ZERO_STEP};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensitivity::{global_sensitivity, Norm};
use crate::types::{ModelParams, PrivacyMetric, QueryMatrix};

/// `max_{i<j} numer(i, j) / d(i, j)` over finitely budgeted pairs.
/// Zero-budget pairs must have a zero numerator.
pub(crate) fn max_ratio<F>(m: &PrivacyMetric, numer: F) -> Result<f64>
where
    F: Fn(usize, usize) -> f64,
{
    let mut best = 0.0f64;
    for (i, j, d) in m.pairs() {
        if d.is_infinite() {
            continue;
        }
        let a = numer(i, j);
        if a == 0.0 {
            continue;
        }
        if d == 0.0 {
            return Err(Error::Infeasible { i, j });
        }
        best = best.max(a / d);
    }
    Ok(best)
}

/// Zero-bias single-query solution: `c = max |q_i − q_j| / d(i, j)`, `q′ = q / c`.
pub fn closed_form_single(q: &[f64], m: &PrivacyMetric) -> Result<ModelParams> {
    let qm = QueryMatrix::single(q)?;
    qm.check_universe(m.size())?;
    let c = max_ratio(m, |i, j| (q[i] - q[j]).abs())?;
    ModelParams::from_scales(&qm, vec![c])
}

/// Strategy 1: each of the K queries gets an equal share `d / K` of every budget.
pub fn strategy1(q: &QueryMatrix, m: &PrivacyMetric) -> Result<ModelParams> {
    q.check_universe(m.size())?;
    let k = q.num_queries() as f64;
    let scales = q
        .rows()
        .map(|r| max_ratio(m, |i, j| (r[i] - r[j]).abs()).map(|c| c * k))
        .collect::<Result<Vec<_>>>()?;
    ModelParams::from_scales(q, scales)
}

/// Strategy 2: one shared scale from the column ℓ₁ sensitivity.
pub fn strategy2(q: &QueryMatrix, m: &PrivacyMetric) -> Result<ModelParams> {
    q.check_universe(m.size())?;
    let c = max_ratio(m, |i, j| q.column_l1_diff(i, j))?;
    ModelParams::from_scales(q, vec![c; q.num_queries()])
}

/// Single scale `c` and per-query transform `Q′ = Q / c` used by the
/// synthetic-database mechanisms, where each `q′` must satisfy
/// `|q′_i − q′_j| ≤ d(i, j)` on its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarTransform {
    pub scale: f64,
    pub transformed: QueryMatrix,
}

impl ScalarTransform {
    /// Answers query `k` on a (possibly real-valued) histogram as `c · q′(y)`.
    pub fn answer(&self, k: usize, y: &[f64]) -> f64 {
        self.scale * crate::types::dot(self.transformed.row(k), y)
    }

    pub fn answer_all(&self, y: &[f64]) -> Vec<f64> {
        (0..self.transformed.num_queries())
            .map(|k| self.answer(k, y))
            .collect()
    }
}

pub fn scalar_transform(q: &QueryMatrix, m: &PrivacyMetric) -> Result<ScalarTransform> {
    q.check_universe(m.size())?;
    let mut scale = 0.0f64;
    for r in q.rows() {
        scale = scale.max(max_ratio(m, |i, j| (r[i] - r[j]).abs())?);
    }
    let transformed = if scale > 0.0 {
        q.scaled(1.0 / scale)
    } else {
        QueryMatrix::zeros(q.num_queries(), q.universe_size())
    };
    Ok(ScalarTransform { scale, transformed })
}

/// Geometric mean of `(Δ^Q₁ / ε) / c_k` with `ε` the smallest finite
/// off-diagonal budget. Returns `f64::INFINITY` when some `c_k = 0`.
pub fn improvement_factor(params: &ModelParams, q: &QueryMatrix, m: &PrivacyMetric) -> Result<f64> {
    q.check_universe(m.size())?;
    let eps = m
        .min_finite_off_diagonal()
        .ok_or_else(|| Error::Invalid("metric has no finite off-diagonal budget".into()))?;
    if eps <= 0.0 {
        return Err(Error::Invalid("smallest budget is zero; vanilla baseline undefined".into()));
    }
    if params.scales().contains(&0.0) {
        return Ok(f64::INFINITY);
    }
    let vanilla = global_sensitivity(q, Norm::L1) / eps;
    let k = params.num_queries() as f64;
    let log_mean = params
        .scales()
        .iter()
        .map(|&c| (vanilla / c).ln())
        .sum::<f64>()
        / k;
    Ok(log_mean.exp())
}

/// Geometric mean of the noise scales.
pub fn geometric_mean_scale(params: &ModelParams) -> f64 {
    let s = params.scales();
    (s.iter().map(|c| c.ln()).sum::<f64>() / s.len() as f64).exp()
}

//! Domain types shared by every module: privacy metrics, histograms, query
//! matrices and the model parameters produced by parameter selection.
//!
//! Budgets are stored as `f64` with `f64::INFINITY` meaning "no constraint
//! for this pair". IEEE arithmetic gives the absorbing behaviour we need for
//! sums and triangle checks.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance for feasibility and metric checks.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Upper bound on the number of violating triples stored in a [`MetricReport`].
pub const MAX_REPORTED_VIOLATIONS: usize = 10_000;

/// Symmetric N×N matrix of per-pair privacy budgets `d_X(i, j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyMetric {
    size: usize,
    entries: Vec<f64>,
    validated: bool,
}

impl PrivacyMetric {
    /// Builds a metric from a row-major entry vector. Only structural checks
    /// (square shape, no negative or NaN entries) happen here; symmetry and the
    /// triangle inequality are checked by [`validate_metric`].
    pub fn from_entries(size: usize, entries: Vec<f64>) -> Result<Self> {
        if size == 0 {
            return Err(Error::Structure("metric must have at least one element".into()));
        }
        if entries.len() != size * size {
            return Err(Error::Structure(format!(
                "metric with {} entries is not {size}x{size}",
                entries.len()
            )));
        }
        if let Some(pos) = entries.iter().position(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::Structure(format!(
                "entry ({}, {}) = {} is not a nonnegative budget",
                pos / size,
                pos % size,
                entries[pos]
            )));
        }
        Ok(Self {
            size,
            entries,
            validated: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != size) {
            return Err(Error::Structure(format!(
                "row of length {} in a metric with {size} rows",
                bad.len()
            )));
        }
        Self::from_entries(size, rows.concat())
    }

    /// Builds a metric from a symmetric pair function evaluated on `i < j`.
    pub fn from_pair_fn<F>(size: usize, f: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> f64,
    {
        let mut entries = vec![0.0; size * size];
        for i in 0..size {
            for j in (i + 1)..size {
                let v = f(i, j);
                entries[i * size + j] = v;
                entries[j * size + i] = v;
            }
        }
        Self::from_entries(size, entries)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.size..(i + 1) * self.size]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.size).map(|r| r.to_vec()).collect()
    }

    pub fn is_validated(&self) -> bool {
        self.validated
    }

    /// Runs [`validate_metric`] and sets the validated flag iff there are no
    /// violations of any kind.
    pub fn into_validated(mut self, tol: f64) -> (Self, MetricReport) {
        let report = validate_metric(&self, tol);
        self.validated = report.is_valid();
        (self, report)
    }

    pub(crate) fn mark_validated(mut self) -> Self {
        self.validated = true;
        self
    }

    /// Iterator over unordered off-diagonal pairs `(i, j, d(i, j))` with `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.size).flat_map(move |i| ((i + 1)..self.size).map(move |j| (i, j, self.get(i, j))))
    }

    /// Smallest finite off-diagonal budget, the ε of the vanilla baseline.
    pub fn min_finite_off_diagonal(&self) -> Option<f64> {
        self.pairs()
            .map(|(_, _, d)| d)
            .filter(|d| d.is_finite())
            .min_by(f64::total_cmp)
    }

    pub fn max_finite_off_diagonal(&self) -> Option<f64> {
        self.pairs()
            .map(|(_, _, d)| d)
            .filter(|d| d.is_finite())
            .max_by(f64::total_cmp)
    }

    /// True when some off-diagonal budget is exactly zero.
    pub fn has_zero_budget(&self) -> bool {
        self.pairs().any(|(_, _, d)| d == 0.0)
    }
}

/// Outcome of [`validate_metric`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub symmetric: bool,
    pub zero_diagonal: bool,
    /// Ordered triples `(i, k, j)` with `d(i, j) > d(i, k) + d(k, j) + tol`,
    /// truncated to [`MAX_REPORTED_VIOLATIONS`].
    pub violations: Vec<(usize, usize, usize)>,
    pub violation_count: usize,
}

impl MetricReport {
    pub fn triangle_ok(&self) -> bool {
        self.violation_count == 0
    }

    pub fn is_valid(&self) -> bool {
        self.symmetric && self.zero_diagonal && self.triangle_ok()
    }
}

/// Checks symmetry, zero diagonal and the triangle inequality (∞ absorbing).
pub fn validate_metric(m: &PrivacyMetric, tol: f64) -> MetricReport {
    let n = m.size();
    let zero_diagonal = (0..n).all(|i| m.get(i, i) == 0.0);
    let symmetric = m.pairs().all(|(i, j, d)| {
        let e = m.get(j, i);
        d == e || (d - e).abs() <= tol
    });

    let per_row: Vec<(usize, Vec<(usize, usize, usize)>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut count = 0;
            let mut found = Vec::new();
            for j in 0..n {
                if i == j {
                    continue;
                }
                let direct = m.get(i, j);
                for k in 0..n {
                    if k == i || k == j {
                        continue;
                    }
                    if direct > m.get(i, k) + m.get(k, j) + tol {
                        count += 1;
                        if found.len() < MAX_REPORTED_VIOLATIONS {
                            found.push((i, k, j));
                        }
                    }
                }
            }
            (count, found)
        })
        .collect();

    let mut report = MetricReport {
        symmetric,
        zero_diagonal,
        ..Default::default()
    };
    for (count, found) in per_row {
        report.violation_count += count;
        let room = MAX_REPORTED_VIOLATIONS - report.violations.len();
        report.violations.extend(found.into_iter().take(room));
    }
    report
}

/// A database over a universe of N elements, as a vector of counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    counts: Vec<u64>,
    total: u64,
}

impl Histogram {
    pub fn new(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Number of records `n = ‖x‖₁`.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Moves one record from bin `from` to bin `to`, the neighbouring relation
    /// used throughout. Returns `None` when `from` is empty or the move is a no-op.
    pub fn move_one(&self, from: usize, to: usize) -> Option<Histogram> {
        if from == to || self.counts.get(from).copied().unwrap_or(0) == 0 || to >= self.len() {
            return None;
        }
        let mut counts = self.counts.clone();
        counts[from] -= 1;
        counts[to] += 1;
        Some(Histogram::new(counts))
    }
}

/// K×N matrix of linear query coefficients, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl QueryMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                what: "query matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if rows == 0 || cols == 0 {
            return Err(Error::Structure("query matrix must be non-empty".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Structure("query coefficients must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::Dimension {
                what: "query row length",
                expected: n,
                got: bad.len(),
            });
        }
        Self::new(k, n, rows.concat())
    }

    /// Single linear query (K = 1).
    pub fn single(q: &[f64]) -> Result<Self> {
        Self::new(1, q.len(), q.to_vec())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Number of queries K.
    pub fn num_queries(&self) -> usize {
        self.rows
    }

    /// Universe size N.
    pub fn universe_size(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.data[k * self.cols + i]
    }

    #[inline]
    pub(crate) fn set(&mut self, k: usize, i: usize, v: f64) {
        self.data[k * self.cols + i] = v;
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// ℓ₁ norm of the difference between columns `i` and `j`.
    pub fn column_l1_diff(&self, i: usize, j: usize) -> f64 {
        self.rows().map(|r| (r[i] - r[j]).abs()).sum()
    }

    /// `Q x` for a real vector `x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension {
                what: "vector length",
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok(self.rows().map(|r| dot(r, x)).collect())
    }

    pub fn answer(&self, x: &Histogram) -> Result<Vec<f64>> {
        self.apply(&x.as_f64())
    }

    /// Returns the matrix with row `k` multiplied by `factors[k]`.
    pub fn scale_rows(&self, factors: &[f64]) -> QueryMatrix {
        let mut out = self.clone();
        for (k, &f) in factors.iter().enumerate() {
            out.row_mut(k).iter_mut().for_each(|v| *v *= f);
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> QueryMatrix {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out
    }

    pub fn check_universe(&self, n: usize) -> Result<()> {
        if self.cols != n {
            return Err(Error::Dimension {
                what: "query universe size",
                expected: n,
                got: self.cols,
            });
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-query noise scales `c` and transformed queries `Q′`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    scales: Vec<f64>,
    transformed: QueryMatrix,
}

impl ModelParams {
    pub fn new(scales: Vec<f64>, transformed: QueryMatrix) -> Result<Self> {
        if scales.len() != transformed.num_queries() {
            return Err(Error::Dimension {
                what: "scale vector length",
                expected: transformed.num_queries(),
                got: scales.len(),
            });
        }
        if scales.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Invalid("noise scales must be finite and nonnegative".into()));
        }
        Ok(Self {
            scales,
            transformed,
        })
    }

    /// Builds params with `Q′_k = Q_k / c_k`, or a zero row when `c_k = 0`.
    pub fn from_scales(q: &QueryMatrix, scales: Vec<f64>) -> Result<Self> {
        let inv: Vec<f64> = scales
            .iter()
            .map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 })
            .collect();
        Self::new(scales, q.scale_rows(&inv))
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn transformed(&self) -> &QueryMatrix {
        &self.transformed
    }

    pub fn num_queries(&self) -> usize {
        self.scales.len()
    }

    /// The matrix `c ⊙ Q′` whose answers the mechanism releases in expectation.
    pub fn effective(&self) -> QueryMatrix {
        self.transformed.scale_rows(&self.scales)
    }

    /// Squared-loss surrogate `n² ‖c ⊙ Q′ − Q‖₂² + 2 ‖c‖₂²`.
    pub fn squared_loss_objective(&self, q: &QueryMatrix, n: f64) -> f64 {
        let bias: f64 = self
            .effective()
            .data()
            .iter()
            .zip(q.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let noise: f64 = self.scales.iter().map(|c| c * c).sum();
        n * n * bias + 2.0 * noise
    }

    /// Largest entrywise deviation `max |c ⊙ Q′ − Q|`.
    pub fn max_bias(&self, q: &QueryMatrix) -> f64 {
        self.effective()
            .data()
            .iter()
            .zip(q.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Result of [`check_feasibility`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Pair with the smallest slack `d(i, j) − ‖Q′_{:,i} − Q′_{:,j}‖₁`.
    pub worst_pair: Option<(usize, usize)>,
    pub worst_slack: f64,
}

/// Checks `‖Q′_{:,i} − Q′_{:,j}‖₁ ≤ d(i, j) + tol` for every pair with a finite budget.
pub fn check_feasibility(
    p: &ModelParams,
    m: &PrivacyMetric,
    tol: f64,
) -> Result<FeasibilityReport> {
    let qp = p.transformed();
    qp.check_universe(m.size())?;
    let mut worst_pair = None;
    let mut worst_slack = f64::INFINITY;
    for (i, j, d) in m.pairs() {
        if d.is_infinite() {
            continue;
        }
        let slack = d - qp.column_l1_diff(i, j);
        if slack < worst_slack {
            worst_slack = slack;
            worst_pair = Some((i, j));
        }
    }
    Ok(FeasibilityReport {
        feasible: worst_slack >= -tol,
        worst_pair,
        worst_slack,
    })
}

/// Released noisy answers together with the scales and seed that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyResponse {
    pub values: Vec<f64>,
    pub scales: Vec<f64>,
    pub seed: u64,
}

/// Points associated with the universe elements, plus optional named attributes
/// (elevation, population, ...).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UniversePoints {
    pub ids: Vec<String>,
    pub points: Vec<Vec<f64>>,
    pub attributes: BTreeMap<String, Vec<f64>>,
}

impl UniversePoints {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Invalid("points need dimension >= 1".into()));
        }
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::Dimension {
                what: "point dimension",
                expected: dim,
                got: bad.len(),
            });
        }
        let ids = (0..points.len()).map(|i| i.to_string()).collect();
        Ok(Self {
            ids,
            points,
            attributes: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn attribute(&self, name: &str) -> Option<&[f64]> {
        self.attributes.get(name).map(Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle345() -> PrivacyMetric {
        PrivacyMetric::from_rows(&[
            vec![0.0, 3.0, 4.0],
            vec![3.0, 0.0, 5.0],
            vec![4.0, 5.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(
            PrivacyMetric::from_entries(2, vec![0.0; 3]),
            Err(Error::Structure(_))
        ));
        assert!(matches!(
            PrivacyMetric::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0]]),
            Err(Error::Structure(_))
        ));
        assert!(matches!(
            PrivacyMetric::from_rows(&[vec![0.0, 1.0], vec![1.0]]),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn euclidean_triangle_is_valid() {
        let (m, report) = triangle345().into_validated(DEFAULT_TOL);
        assert!(report.is_valid());
        assert!(m.is_validated());
    }

    #[test]
    fn uniform_is_valid() {
        let m = PrivacyMetric::from_pair_fn(3, |_, _| 1.0).unwrap();
        assert!(validate_metric(&m, DEFAULT_TOL).is_valid());
    }

    #[test]
    fn blowfish_violation_reported() {
        let inf = f64::INFINITY;
        let m = PrivacyMetric::from_rows(&[
            vec![0.0, inf, 1.0],
            vec![inf, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ])
        .unwrap();
        let (m, report) = m.into_validated(DEFAULT_TOL);
        assert!(!m.is_validated());
        assert!(report.violations.contains(&(0, 2, 1)));
        assert!(report.violations.contains(&(1, 2, 0)));
        assert_eq!(report.violation_count, 2);
    }

    #[test]
    fn asymmetric_and_nonzero_diagonal_flagged() {
        let m = PrivacyMetric::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap();
        assert!(!validate_metric(&m, DEFAULT_TOL).symmetric);
        let m = PrivacyMetric::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(!validate_metric(&m, DEFAULT_TOL).zero_diagonal);
    }

    #[test]
    fn closed_form_params_are_tight() {
        // c = 0.75 from the binding pair (0, 2): |1 - 4| / 4.
        let q = QueryMatrix::single(&[1.0, 2.0, 4.0]).unwrap();
        let p = ModelParams::from_scales(&q, vec![0.75]).unwrap();
        let r = check_feasibility(&p, &triangle345(), DEFAULT_TOL).unwrap();
        assert!(r.feasible);
        assert_eq!(r.worst_pair, Some((0, 2)));
        assert!(r.worst_slack.abs() <= DEFAULT_TOL);
    }

    #[test]
    fn zero_transform_always_feasible() {
        let p = ModelParams::new(vec![1.0], QueryMatrix::zeros(1, 3)).unwrap();
        let m = PrivacyMetric::from_pair_fn(3, |_, _| 1e-6).unwrap();
        assert!(check_feasibility(&p, &m, 0.0).unwrap().feasible);
    }

    #[test]
    fn scaled_down_c_is_infeasible() {
        let q = QueryMatrix::single(&[1.0, 2.0, 4.0]).unwrap();
        let p = ModelParams::from_scales(&q, vec![0.7]).unwrap();
        let r = check_feasibility(&p, &triangle345(), DEFAULT_TOL).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.worst_pair, Some((0, 2)));
    }

    #[test]
    fn feasibility_dimension_mismatch() {
        let p = ModelParams::new(vec![1.0], QueryMatrix::zeros(1, 2)).unwrap();
        assert!(matches!(
            check_feasibility(&p, &triangle345(), DEFAULT_TOL),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn infinite_pairs_skipped() {
        let inf = f64::INFINITY;
        let m = PrivacyMetric::from_rows(&[vec![0.0, inf], vec![inf, 0.0]]).unwrap();
        let p = ModelParams::new(vec![1.0], QueryMatrix::single(&[0.0, 1e9]).unwrap()).unwrap();
        let r = check_feasibility(&p, &m, 0.0).unwrap();
        assert!(r.feasible);
        assert_eq!(r.worst_pair, None);
    }

    #[test]
    fn histogram_neighbour() {
        let x = Histogram::new(vec![2, 0, 1]);
        assert_eq!(x.total(), 3);
        let y = x.move_one(0, 1).unwrap();
        assert_eq!(y.counts(), &[1, 1, 1]);
        assert!(x.move_one(1, 0).is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn feasibility_monotone_in_scaling(
                coeffs in proptest::collection::vec(-5.0f64..5.0, 8),
                alpha in 0.0f64..=1.0,
            ) {
                let m = PrivacyMetric::from_pair_fn(4, |i, j| 0.5 + (i + j) as f64).unwrap();
                let raw = QueryMatrix::new(2, 4, coeffs).unwrap();
                // shrink onto the boundary of the feasible set first
                let worst = m
                    .pairs()
                    .map(|(i, j, d)| raw.column_l1_diff(i, j) / d)
                    .fold(0.0, f64::max);
                let qp = if worst > 0.0 { raw.scaled(1.0 / worst) } else { raw };
                let p = ModelParams::new(vec![1.0, 1.0], qp.clone()).unwrap();
                prop_assert!(check_feasibility(&p, &m, DEFAULT_TOL).unwrap().feasible);
                let scaled = ModelParams::new(vec![1.0, 1.0], qp.scaled(alpha)).unwrap();
                prop_assert!(check_feasibility(&scaled, &m, DEFAULT_TOL).unwrap().feasible);
            }
        }
    }
}

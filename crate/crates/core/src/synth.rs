//! Synthetic-database mechanisms over transformed queries `Q′` with a single
//! scale `c`: the small-database mechanism and multiplicative weights with the
//! exponential mechanism (MWEM). Answers to an original query are read off the
//! synthetic histogram as `c · q′(y)`.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mech::{exp_distribution, sample_index, sample_laplace};
use crate::types::{dot, Histogram, QueryMatrix};

pub const DEFAULT_CANDIDATE_CAP: usize = 2_000_000;
const MWEM_EXPONENT_CLAMP: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallDbConfig {
    pub alpha: f64,
    pub c: f64,
    pub cap: usize,
}

impl SmallDbConfig {
    pub fn new(alpha: f64, c: f64) -> Self {
        Self {
            alpha,
            c,
            cap: DEFAULT_CANDIDATE_CAP,
        }
    }

    /// Synthetic database size `ceil(ln|Q′| / α²)`, at least 1.
    pub fn database_size(&self, num_queries: usize) -> u64 {
        let raw = (num_queries as f64).ln() / (self.alpha * self.alpha);
        (raw.ceil() as u64).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MwemConfig {
    pub rounds: usize,
    pub c: f64,
    pub seed: u64,
}

/// `C(m + N − 1, N − 1)`, saturating.
pub fn candidate_count(n: usize, m: u64) -> u128 {
    if n == 0 {
        return 0;
    }
    let k = (n - 1) as u128;
    let total = m as u128 + k;
    let k = k.min(total - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(total - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// All histograms over `n` bins holding exactly `m` records, ordered with the
/// first bin descending.
pub fn enumerate_candidates(n: usize, m: u64, cap: usize) -> Result<Vec<Histogram>> {
    if n == 0 {
        return Err(Error::Invalid("universe size must be >= 1".into()));
    }
    let count = candidate_count(n, m);
    if count > cap as u128 {
        return Err(Error::CandidateCap { count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut current = vec![0u64; n];
    fill(&mut current, 0, m, &mut out);
    Ok(out)
}

fn fill(current: &mut [u64], pos: usize, left: u64, out: &mut Vec<Histogram>) {
    if pos == current.len() - 1 {
        current[pos] = left;
        out.push(Histogram::new(current.to_vec()));
        return;
    }
    for v in (0..=left).rev() {
        current[pos] = v;
        fill(current, pos + 1, left - v, out);
    }
}

fn check_shapes(x: &Histogram, qp: &QueryMatrix, c: f64) -> Result<()> {
    qp.check_universe(x.len())?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Invalid(format!("c must be positive, got {c}")));
    }
    Ok(())
}

/// Utility `−c · max_{q′} |q′(x) − q′(y)|` of candidate `y`.
fn smalldb_utility(qx: &[f64], qp: &QueryMatrix, c: f64, y: &Histogram) -> f64 {
    let yf = y.as_f64();
    let worst = qp
        .rows()
        .zip(qx)
        .map(|(r, a)| (a - dot(r, &yf)).abs())
        .fold(0.0, f64::max);
    -c * worst
}

/// Candidate set of size-`m` databases together with their exact selection
/// probabilities.
pub fn smalldb_distribution(
    x: &Histogram,
    qp: &QueryMatrix,
    c: f64,
    m: u64,
    cap: usize,
) -> Result<(Vec<Histogram>, Vec<f64>)> {
    check_shapes(x, qp, c)?;
    let candidates = enumerate_candidates(x.len(), m, cap)?;
    let qx = qp.answer(x)?;
    let utilities: Vec<f64> = candidates
        .iter()
        .map(|y| smalldb_utility(&qx, qp, c, y))
        .collect();
    let probs = exp_distribution(&utilities, c)?;
    Ok((candidates, probs))
}

/// Small-database mechanism with an explicit synthetic database size `m`.
pub fn smalldb_with_size<R: RngCore + ?Sized>(
    x: &Histogram,
    qp: &QueryMatrix,
    c: f64,
    m: u64,
    cap: usize,
    rng: &mut R,
) -> Result<Histogram> {
    let (mut candidates, probs) = smalldb_distribution(x, qp, c, m, cap)?;
    let idx = sample_index(&probs, rng);
    Ok(candidates.swap_remove(idx))
}

/// Small-database mechanism; the database size follows from `alpha` and `|Q′|`.
pub fn smalldb<R: RngCore + ?Sized>(
    x: &Histogram,
    qp: &QueryMatrix,
    cfg: &SmallDbConfig,
    rng: &mut R,
) -> Result<Histogram> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    let m = cfg.database_size(qp.num_queries());
    smalldb_with_size(x, qp, cfg.c, m, cfg.cap, rng)
}

/// `n · bias + (c n² (16 ln N ln|Q| + 4 ln(1/β)))^{1/3}`.
pub fn smalldb_error_bound(n: f64, universe: usize, num_queries: usize, bias: f64, c: f64, beta: f64) -> f64 {
    let inner = 16.0 * (universe as f64).ln() * (num_queries as f64).ln() + 4.0 * (1.0 / beta).ln();
    n * bias + (c * n * n * inner).cbrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MwemOutput {
    /// Average of `y^0, …, y^{T−1}`, summing to `n`.
    pub synthetic: Vec<f64>,
    /// `y^0, …, y^T`.
    pub trajectory: Vec<Vec<f64>>,
    pub selected: Vec<usize>,
    pub measurements: Vec<f64>,
    /// Parameter of the per-round exponential mechanism.
    pub selection_parameter: f64,
    /// Scale of the per-round Laplace measurement.
    pub measurement_scale: f64,
}

/// MWEM over transformed queries.
///
/// Each round selects a query with the exponential mechanism (parameter `2cT`,
/// score `c |q′(y) − q′(x)|`), measures `c q′(x) + Lap(2cT)`, and reweights
/// `y_i ∝ y_i exp(c q′_i (m − c q′(y)) / 2n)`, i.e. the multiplicative-weights
/// step on the original query `q = c q′`.
pub fn mwem<R: RngCore + ?Sized>(
    x: &Histogram,
    qp: &QueryMatrix,
    c: f64,
    rounds: usize,
    rng: &mut R,
) -> Result<MwemOutput> {
    check_shapes(x, qp, c)?;
    if rounds == 0 {
        return Err(Error::Invalid("MWEM needs at least one round".into()));
    }
    let n = x.total() as f64;
    if n == 0.0 {
        return Err(Error::Invalid("MWEM needs a non-empty histogram".into()));
    }
    let bins = x.len();
    let param = 2.0 * c * rounds as f64;
    let qx = qp.answer(x)?;

    let mut y = vec![n / bins as f64; bins];
    let mut trajectory = vec![y.clone()];
    let mut selected = Vec::with_capacity(rounds);
    let mut measurements = Vec::with_capacity(rounds);

    for _ in 0..rounds {
        let scores: Vec<f64> = qp
            .rows()
            .zip(&qx)
            .map(|(r, a)| c * (dot(r, &y) - a).abs())
            .collect();
        let probs = exp_distribution(&scores, param)?;
        let t = sample_index(&probs, rng);
        let measured = c * qx[t] + sample_laplace(param, rng)?;

        let row = qp.row(t);
        let synthetic_answer = c * dot(row, &y);
        let gap = measured - synthetic_answer;
        for (yi, &qi) in y.iter_mut().zip(row) {
            let e = (c * qi * gap / (2.0 * n)).clamp(-MWEM_EXPONENT_CLAMP, MWEM_EXPONENT_CLAMP);
            *yi *= e.exp();
        }
        let total: f64 = y.iter().sum();
        y.iter_mut().for_each(|v| *v *= n / total);

        selected.push(t);
        measurements.push(measured);
        trajectory.push(y.clone());
    }

    let mut synthetic = vec![0.0; bins];
    for state in &trajectory[..rounds] {
        for (s, v) in synthetic.iter_mut().zip(state) {
            *s += v / rounds as f64;
        }
    }
    Ok(MwemOutput {
        synthetic,
        trajectory,
        selected,
        measurements,
        selection_parameter: param,
        measurement_scale: param,
    })
}

/// `n · bias + 2n √(ln N / T) + 10 T c ln|Q|`.
pub fn mwem_error_bound(n: f64, universe: usize, num_queries: usize, bias: f64, c: f64, rounds: usize) -> f64 {
    let t = rounds as f64;
    n * bias + 2.0 * n * ((universe as f64).ln() / t).sqrt() + 10.0 * t * c * (num_queries as f64).ln()
}

/// Round count balancing the two random-error terms of [`mwem_error_bound`].
pub fn mwem_balanced_rounds(n: f64, universe: usize, num_queries: usize, c: f64) -> f64 {
    (n * (universe as f64).ln().sqrt() / (5.0 * c * (num_queries as f64).ln())).powf(2.0 / 3.0)
}

/// The bound at the balanced round count:
/// `n · bias + (20 / 5^{2/3}) (n² ln N ln|Q|)^{1/3} c^{1/3}`.
pub fn mwem_optimized_error_bound(n: f64, universe: usize, num_queries: usize, bias: f64, c: f64) -> f64 {
    let inner = n * n * (universe as f64).ln() * (num_queries as f64).ln();
    n * bias + 20.0 / 5f64.powf(2.0 / 3.0) * inner.cbrt() * c.cbrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mech::seeded_rng;

    #[test]
    fn compositions() {
        let c = enumerate_candidates(2, 2, 100).unwrap();
        let counts: Vec<&[u64]> = c.iter().map(Histogram::counts).collect();
        assert_eq!(counts, vec![&[2, 0][..], &[1, 1], &[0, 2]]);
        assert_eq!(enumerate_candidates(1, 4, 10).unwrap()[0].counts(), &[4]);
        assert_eq!(enumerate_candidates(3, 2, 10).unwrap().len(), 6);
        assert_eq!(candidate_count(3, 2), 6);
        assert_eq!(candidate_count(10, 5), 2002);
        assert!(matches!(
            enumerate_candidates(10, 5, 2001),
            Err(Error::CandidateCap { count: 2002, cap: 2001 })
        ));
        assert!(enumerate_candidates(60, 60, DEFAULT_CANDIDATE_CAP).is_err());
    }

    #[test]
    fn database_size_uses_natural_log() {
        let cfg = SmallDbConfig::new(0.5, 1.0);
        assert_eq!(cfg.database_size(8), (8f64.ln() / 0.25).ceil() as u64);
        assert_eq!(cfg.database_size(1), 1);
    }

    #[test]
    fn smalldb_weights() {
        let x = Histogram::new(vec![1, 1]);
        let qp = QueryMatrix::single(&[0.0, 1.0]).unwrap();
        let (_, probs) = smalldb_distribution(&x, &qp, 0.8, 2, 100).unwrap();
        let w = [(-0.5f64).exp(), 1.0, (-0.5f64).exp()];
        let z: f64 = w.iter().sum();
        for (p, wi) in probs.iter().zip(w) {
            assert!((p - wi / z).abs() < 1e-12);
        }
    }

    #[test]
    fn smalldb_mode_is_input() {
        let x = Histogram::new(vec![2, 1, 0]);
        let qp = QueryMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let (cands, probs) = smalldb_distribution(&x, &qp, 1.0, 3, 100).unwrap();
        let best = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(cands[best], x);
        let mut rng = seeded_rng(3);
        let y = smalldb_with_size(&x, &qp, 1.0, 3, 100, &mut rng).unwrap();
        assert_eq!(y.total(), 3);
    }

    #[test]
    fn smalldb_rejects_bad_config() {
        let x = Histogram::new(vec![1, 1]);
        let qp = QueryMatrix::single(&[0.0, 1.0]).unwrap();
        let mut rng = seeded_rng(0);
        assert!(smalldb(&x, &qp, &SmallDbConfig::new(1.5, 1.0), &mut rng).is_err());
        assert!(smalldb(&x, &qp, &SmallDbConfig::new(0.5, 0.0), &mut rng).is_err());
        let tiny = SmallDbConfig { alpha: 0.01, c: 1.0, cap: 10 };
        let two = QueryMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(smalldb(&x, &two, &tiny, &mut rng), Err(Error::CandidateCap { .. })));
    }

    #[test]
    fn smalldb_bound_algebra() {
        let base = smalldb_error_bound(100.0, 16, 8, 0.0, 0.1, 0.1);
        let inner: f64 = 16.0 * 16f64.ln() * 8f64.ln() + 4.0 * 10f64.ln();
        assert!((base - (0.1 * 1e4 * inner).cbrt()).abs() < 1e-9);
        let doubled = smalldb_error_bound(100.0, 16, 8, 0.0, 0.2, 0.1);
        assert!((doubled / base - 2f64.cbrt()).abs() < 1e-12);
        assert!((smalldb_error_bound(100.0, 16, 8, 0.5, 0.1, 0.1) - base - 50.0).abs() < 1e-9);
    }

    #[test]
    fn mwem_zero_queries_stay_uniform() {
        let x = Histogram::new(vec![5, 0, 3, 0]);
        let qp = QueryMatrix::zeros(3, 4);
        let mut rng = seeded_rng(1);
        let out = mwem(&x, &qp, 1.0, 1, &mut rng).unwrap();
        assert!(out.synthetic.iter().all(|v| (v - 2.0).abs() < 1e-12));
        let out = mwem(&x, &qp, 1.0, 4, &mut rng).unwrap();
        assert!(out.synthetic.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn mwem_invariants_and_accounting() {
        let x = Histogram::new(vec![10, 0, 5, 1, 0, 0, 20, 4]);
        let qp = QueryMatrix::from_rows(&[
            vec![1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0],
        ])
        .unwrap();
        let mut rng = seeded_rng(11);
        let out = mwem(&x, &qp, 0.3, 6, &mut rng).unwrap();
        assert_eq!(out.trajectory.len(), 7);
        for y in &out.trajectory {
            assert!(y.iter().all(|&v| v >= 0.0));
            assert!((y.iter().sum::<f64>() - 40.0).abs() < 1e-9);
        }
        assert_eq!(out.selection_parameter, 2.0 * 0.3 * 6.0);
        assert_eq!(out.measurement_scale, out.selection_parameter);
        assert!((out.synthetic.iter().sum::<f64>() - 40.0).abs() < 1e-9);
    }

    /// Exact reference for one multiplicative-weights step.
    #[test]
    fn mwem_update_matches_formula() {
        let x = Histogram::new(vec![3, 1]);
        let qp = QueryMatrix::single(&[2.0, 0.0]).unwrap();
        let c = 0.5;
        let mut rng = seeded_rng(9);
        let out = mwem(&x, &qp, c, 1, &mut rng).unwrap();
        let y0 = [2.0, 2.0];
        let gap = out.measurements[0] - c * 2.0 * y0[0];
        let w0 = y0[0] * (c * 2.0 * gap / 8.0).clamp(-50.0, 50.0).exp();
        let w1 = y0[1];
        let expect = [4.0 * w0 / (w0 + w1), 4.0 * w1 / (w0 + w1)];
        for (a, b) in out.trajectory[1].iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mwem_bounds() {
        let t = mwem_balanced_rounds(64.0, 8, 16, 0.1);
        let first = 2.0 * 64.0 * (8f64.ln() / t).sqrt();
        let second = 10.0 * t * 0.1 * 16f64.ln();
        assert!((first - second).abs() < 1e-9 * first);
        let sum = first + second;
        assert!((mwem_optimized_error_bound(64.0, 8, 16, 0.0, 0.1) - sum).abs() < 1e-9 * sum);

        let b = mwem_error_bound(64.0, 8, 16, 0.0, 0.1, 3);
        let hand = 128.0 * (8f64.ln() / 3.0).sqrt() + 3.0 * 16f64.ln();
        assert!((b - hand).abs() < 1e-12);
        assert!(b.is_finite() && b > 0.0);
        // T → ∞: first term vanishes, second grows
        let big = mwem_error_bound(64.0, 8, 16, 0.0, 0.1, 1_000_000);
        assert!(big > 1e6);
    }
}

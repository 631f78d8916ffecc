//! Statistical queries over row databases (`q(x) = (1/n) Σ q(x_i)`), released
//! after mapping every universe element `u ↦ u′`, and the per-coordinate
//! parameter search for d-way marginals under an additive metric.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mech::{add_laplace_noise, seeded_rng};
use crate::metric::metric_closure;
use crate::sensitivity::Norm;
use crate::types::{NoisyResponse, PrivacyMetric};

pub use crate::sensitivity::pair_sensitivity_statistical as statq_pair_sensitivity;

fn key(u: &[f64]) -> Vec<u64> {
    u.iter().map(|v| v.to_bits()).collect()
}

/// Image `u′` of every universe element `u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementMap {
    domain: Vec<Vec<f64>>,
    images: Vec<Vec<f64>>,
    #[serde(skip)]
    index: HashMap<Vec<u64>, usize>,
}

impl ElementMap {
    pub fn new(domain: Vec<Vec<f64>>, images: Vec<Vec<f64>>) -> Result<Self> {
        if domain.len() != images.len() {
            return Err(Error::Dimension {
                what: "element map images",
                expected: domain.len(),
                got: images.len(),
            });
        }
        for (u, v) in domain.iter().zip(&images) {
            if u.len() != v.len() {
                return Err(Error::Dimension {
                    what: "mapped element dimension",
                    expected: u.len(),
                    got: v.len(),
                });
            }
        }
        let index = domain.iter().enumerate().map(|(i, u)| (key(u), i)).collect();
        Ok(Self {
            domain,
            images,
            index,
        })
    }

    pub fn identity(domain: Vec<Vec<f64>>) -> Self {
        let images = domain.clone();
        Self::new(domain, images).expect("identity map has matching shapes")
    }

    /// Product map over a grid universe from per-coordinate value maps.
    pub fn from_coordinates(coords: &[CoordinateSolution]) -> Self {
        let mut domain: Vec<Vec<f64>> = vec![vec![]];
        let mut images: Vec<Vec<f64>> = vec![vec![]];
        for sol in coords {
            let mut nd = Vec::new();
            let mut ni = Vec::new();
            for (d, im) in domain.iter().zip(&images) {
                for (&u, &up) in sol.values.iter().zip(&sol.mapped) {
                    let mut a = d.clone();
                    a.push(u);
                    let mut b = im.clone();
                    b.push(up);
                    nd.push(a);
                    ni.push(b);
                }
            }
            domain = nd;
            images = ni;
        }
        Self::new(domain, images).expect("product map has matching shapes")
    }

    pub fn domain(&self) -> &[Vec<f64>] {
        &self.domain
    }

    pub fn images(&self) -> &[Vec<f64>] {
        &self.images
    }

    pub fn get(&self, u: &[f64]) -> Option<&[f64]> {
        let idx = match self.index.get(&key(u)) {
            Some(&i) => i,
            // index is skipped by serde; fall back to a scan after deserialization
            None => self.domain.iter().position(|d| d.as_slice() == u)?,
        };
        Some(&self.images[idx])
    }
}

/// `Z = c ⊙ (1/n) Σ q(x′_i) + (Lap(c_1), …, Lap(c_k))`.
pub fn statq_laplace<F>(
    db: &[Vec<f64>],
    q_point: F,
    emap: &ElementMap,
    c: &[f64],
    seed: u64,
) -> Result<NoisyResponse>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if db.is_empty() {
        return Err(Error::Invalid("empty database".into()));
    }
    let n = db.len() as f64;
    let mut mean = vec![0.0; c.len()];
    for (row_no, row) in db.iter().enumerate() {
        let mapped = emap
            .get(row)
            .ok_or_else(|| Error::Invalid(format!("row {row_no} has no entry in the element map")))?;
        let image = q_point(mapped);
        if image.len() != c.len() {
            return Err(Error::Dimension {
                what: "query output dimension",
                expected: c.len(),
                got: image.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(image) {
            *m += v / n;
        }
    }
    let mean: Vec<f64> = mean.iter().zip(c).map(|(m, ci)| m * ci).collect();
    let values = add_laplace_noise(&mean, c, &mut seeded_rng(seed))?;
    Ok(NoisyResponse {
        values,
        scales: c.to_vec(),
        seed,
    })
}

/// Largest violation `‖q(u′) − q(v′)‖₁ − n·d(u, v)` over all domain pairs;
/// the release is private when this is `≤ 0`. `budget` is indexed like
/// `emap.domain()`.
pub fn statq_max_violation<F>(emap: &ElementMap, q_point: F, budget: &PrivacyMetric, n: u64) -> Result<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if budget.size() != emap.domain().len() {
        return Err(Error::Dimension {
            what: "budget size",
            expected: emap.domain().len(),
            got: budget.size(),
        });
    }
    let imgs: Vec<Vec<f64>> = emap.images().iter().map(|u| q_point(u)).collect();
    let mut worst = f64::NEG_INFINITY;
    for (i, j, d) in budget.pairs() {
        let gap = Norm::L1.of(imgs[i].iter().zip(&imgs[j]).map(|(a, b)| a - b));
        worst = worst.max(gap - n as f64 * d);
    }
    Ok(worst)
}

/// Per-coordinate parameters: scale `c_i` and the value map `u ↦ u′`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSolution {
    pub scale: f64,
    pub values: Vec<f64>,
    pub mapped: Vec<f64>,
    /// `max_u |c u′ − u| + c`.
    pub objective: f64,
}

impl CoordinateSolution {
    pub fn max_bias(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.mapped)
            .map(|(u, up)| (self.scale * up - u).abs())
            .fold(0.0, f64::max)
    }
}

pub const DEFAULT_GRID: usize = 200;
const REFINE_ITERS: usize = 200;

/// Minimizes `max_u |c u′_u − u| + c` subject to `|u′_u − u′_v| ≤ n d(u, v)`.
///
/// With `w = c u′` the constraints read `|w_u − w_v| ≤ c n d(u, v)`, a system of
/// difference constraints. For fixed `c` the smallest achievable bias is
/// `max(0, max_{u,v} (u − v − c·SP(u, v)) / 2)` where `SP` is the shortest-path
/// closure of `n d`, so only `c` needs searching: a grid of `grid` points on
/// `(0, 2·range]` followed by golden-section refinement around the best cell.
pub fn marginal_coordinate_opt(
    values: &[f64],
    budget: &PrivacyMetric,
    n: u64,
    grid: usize,
) -> Result<CoordinateSolution> {
    if values.is_empty() {
        return Err(Error::Invalid("coordinate domain is empty".into()));
    }
    if budget.size() != values.len() {
        return Err(Error::Dimension {
            what: "coordinate budget size",
            expected: values.len(),
            got: budget.size(),
        });
    }
    if n == 0 || grid == 0 {
        return Err(Error::Invalid("n and grid must be >= 1".into()));
    }
    let k = values.len();
    let scaled = PrivacyMetric::from_entries(k, budget.entries().iter().map(|d| d * n as f64).collect())?;
    let sp = metric_closure(&scaled)?;

    let bias_at = |c: f64| -> f64 {
        let mut worst = 0.0f64;
        for a in 0..k {
            for b in 0..k {
                let reach = c * sp.get(a, b);
                worst = worst.max((values[a] - values[b] - reach) / 2.0);
            }
        }
        worst
    };
    let objective = |c: f64| bias_at(c) + c;

    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    let cmax = if range > 0.0 { 2.0 * range } else { 1.0 };
    let step = cmax / grid as f64;

    let mut best_c = step;
    let mut best_f = objective(step);
    let mut best_j = 1;
    for j in 2..=grid {
        let c = step * j as f64;
        let f = objective(c);
        if f < best_f {
            best_f = f;
            best_c = c;
            best_j = j;
        }
    }

    // objective is convex in c, so the minimizer lies in the neighbouring cells
    let mut a = step * (best_j - 1) as f64;
    let mut b = (step * (best_j + 1) as f64).min(cmax);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (objective(x1), objective(x2));
    for _ in 0..REFINE_ITERS {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = objective(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = objective(x2);
        }
        if b - a <= 1e-15 * b.max(1e-300) {
            break;
        }
    }
    for (c, f) in [(x1, f1), (x2, f2)] {
        if c > 0.0 && f < best_f {
            best_f = f;
            best_c = c;
        }
    }

    // lowest feasible assignment w_u = max_v (v − t − c·SP(v, u))
    let t = bias_at(best_c);
    let mapped: Vec<f64> = (0..k)
        .map(|u| {
            let w = (0..k)
                .map(|v| values[v] - t - best_c * sp.get(v, u))
                .fold(f64::NEG_INFINITY, f64::max);
            w / best_c
        })
        .collect();
    let mut sol = CoordinateSolution {
        scale: best_c,
        values: values.to_vec(),
        mapped,
        objective: 0.0,
    };
    sol.objective = sol.max_bias() + best_c;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::uniform_metric;

    fn pm1(eps: f64) -> PrivacyMetric {
        uniform_metric(2, eps).unwrap()
    }

    fn marginal(u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }

    #[test]
    fn pm1_optimum() {
        let sol = marginal_coordinate_opt(&[-1.0, 1.0], &pm1(1.0), 10, DEFAULT_GRID).unwrap();
        assert!((sol.scale - 0.2).abs() < 1e-6, "{}", sol.scale);
        assert!((sol.objective - 0.2).abs() < 1e-6);
        assert!((sol.mapped[0] + 5.0).abs() < 1e-4 && (sol.mapped[1] - 5.0).abs() < 1e-4);
        assert!((sol.mapped[1] - sol.mapped[0]).abs() <= 10.0 + 1e-9);
    }

    #[test]
    fn large_budget_drives_objective_to_zero() {
        let a = marginal_coordinate_opt(&[-1.0, 1.0], &pm1(1.0), 1_000, DEFAULT_GRID).unwrap();
        let b = marginal_coordinate_opt(&[-1.0, 1.0], &pm1(1.0), 1_000_000, DEFAULT_GRID).unwrap();
        assert!(b.objective < a.objective && b.objective < 1e-5);
    }

    #[test]
    fn singleton_domain() {
        let m = uniform_metric(1, 1.0).unwrap();
        let sol = marginal_coordinate_opt(&[3.0], &m, 5, DEFAULT_GRID).unwrap();
        assert!(sol.objective < 1e-3);
        assert!(sol.max_bias() < 1e-9);
    }

    #[test]
    fn empty_domain_rejected() {
        let m = uniform_metric(1, 1.0).unwrap();
        assert!(marginal_coordinate_opt(&[], &m, 5, 10).is_err());
    }

    #[test]
    fn identity_map_uniform_metric_is_vanilla() {
        // d-way marginal on {−1, 1}², identity map: sensitivity 2·2/n per pair at most
        let domain = vec![vec![-1.0, -1.0], vec![-1.0, 1.0], vec![1.0, -1.0], vec![1.0, 1.0]];
        let emap = ElementMap::identity(domain.clone());
        let db: Vec<Vec<f64>> = (0..10).map(|i| domain[i % 4].clone()).collect();
        let c = [0.4, 0.4];
        let r = statq_laplace(&db, marginal, &emap, &c, 7).unwrap();
        let r2 = statq_laplace(&db, marginal, &emap, &c, 7).unwrap();
        assert_eq!(r, r2);
        assert_eq!(r.scales, c.to_vec());

        let zero = statq_laplace(&db, |_| vec![1.5], &emap, &[0.0], 1).unwrap();
        assert_eq!(zero.values, vec![0.0]);
    }

    #[test]
    fn statq_mean_of_mapped_rows() {
        let sol = marginal_coordinate_opt(&[-1.0, 1.0], &pm1(1.0), 10, DEFAULT_GRID).unwrap();
        let emap = ElementMap::from_coordinates(&[sol.clone(), sol.clone()]);
        let db: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![if i < 7 { 1.0 } else { -1.0 }, if i % 2 == 0 { 1.0 } else { -1.0 }])
            .collect();
        let c = [sol.scale, sol.scale];
        let trials = 20_000;
        let mut acc = [0.0; 2];
        for s in 0..trials {
            let r = statq_laplace(&db, marginal, &emap, &c, s).unwrap();
            acc[0] += r.values[0] / trials as f64;
            acc[1] += r.values[1] / trials as f64;
        }
        // zero bias: mean of c·u′ equals the true marginal (0.4, 0.0)
        assert!((acc[0] - 0.4).abs() < 0.01, "{acc:?}");
        assert!(acc[1].abs() < 0.01, "{acc:?}");
    }

    #[test]
    fn missing_mapping() {
        let emap = ElementMap::identity(vec![vec![0.0]]);
        assert!(statq_laplace(&[vec![1.0]], marginal, &emap, &[1.0], 0).is_err());
    }

    #[test]
    fn produced_maps_are_private() {
        for (n, eps) in [(10u64, 1.0), (3, 0.2), (50, 0.01)] {
            let sol = marginal_coordinate_opt(&[-1.0, 0.0, 2.0], &uniform_metric(3, eps).unwrap(), n, 100).unwrap();
            let emap = ElementMap::from_coordinates(std::slice::from_ref(&sol));
            let budget = uniform_metric(3, eps).unwrap();
            assert!(statq_max_violation(&emap, marginal, &budget, n).unwrap() <= 1e-9);
        }
    }

    /// Independent dense grid over (c, u′₁, u′₂) for the {−1, +1} instance.
    #[test]
    fn dense_grid_oracle() {
        let n_eps = 10.0;
        let mut best = f64::INFINITY;
        for ci in 1..=400 {
            let c = ci as f64 * 0.005;
            for ai in -200..=200 {
                let a = ai as f64 * 0.05;
                for bi in -200..=200 {
                    let b = bi as f64 * 0.05;
                    if (a - b).abs() > n_eps {
                        continue;
                    }
                    let f = (c * a + 1.0).abs().max((c * b - 1.0).abs()) + c;
                    best = best.min(f);
                }
            }
        }
        let sol = marginal_coordinate_opt(&[-1.0, 1.0], &pm1(1.0), 10, DEFAULT_GRID).unwrap();
        assert!(sol.objective <= best + 1e-9);
        assert!((best - 0.2).abs() < 1e-9);
    }

    #[test]
    fn halving_grid_step_never_hurts() {
        let values = [-2.0, -0.5, 1.0, 3.0];
        let budget = PrivacyMetric::from_pair_fn(4, |i, j| 0.05 * (1 + i + j) as f64).unwrap();
        let mut prev = f64::INFINITY;
        for grid in [5, 10, 20, 40, 80, 160] {
            let sol = marginal_coordinate_opt(&values, &budget, 7, grid).unwrap();
            assert!(sol.objective <= prev + 1e-12, "grid {grid}");
            prev = sol.objective;
        }
    }

    #[test]
    fn separability_on_two_coordinates() {
        let v1 = [-1.0, 1.0];
        let v2 = [0.0, 1.0, 3.0];
        let d1 = pm1(0.5);
        let d2 = PrivacyMetric::from_pair_fn(3, |i, j| 0.3 * (j - i) as f64).unwrap();
        let n = 8;
        let s1 = marginal_coordinate_opt(&v1, &d1, n, DEFAULT_GRID).unwrap();
        let s2 = marginal_coordinate_opt(&v2, &d2, n, DEFAULT_GRID).unwrap();
        let emap = ElementMap::from_coordinates(&[s1.clone(), s2.clone()]);

        // joint ℓ₁ objective: max over the product universe of the summed bias, plus Σ c
        let joint = emap
            .domain()
            .iter()
            .zip(emap.images())
            .map(|(u, up)| (s1.scale * up[0] - u[0]).abs() + (s2.scale * up[1] - u[1]).abs())
            .fold(0.0, f64::max)
            + s1.scale
            + s2.scale;
        assert!((joint - (s1.objective + s2.objective)).abs() < 1e-12);

        // additive metric on the product universe
        let dom = emap.domain();
        let idx1 = |x: f64| v1.iter().position(|&v| v == x).unwrap();
        let idx2 = |x: f64| v2.iter().position(|&v| v == x).unwrap();
        let joint_budget = PrivacyMetric::from_pair_fn(dom.len(), |a, b| {
            d1.get(idx1(dom[a][0]), idx1(dom[b][0])) + d2.get(idx2(dom[a][1]), idx2(dom[b][1]))
        })
        .unwrap();
        assert!(statq_max_violation(&emap, marginal, &joint_budget, n).unwrap() <= 1e-9);
    }

    #[test]
    fn reexported_sensitivity() {
        let s = statq_pair_sensitivity(&[1.0, 1.0], &[1.0, -1.0], 10, Norm::L1).unwrap();
        assert!((s - 0.2).abs() < 1e-15);
    }
}

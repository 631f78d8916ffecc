//! Alternating minimization of the squared-loss surrogate
//! `f(c, Q′) = n² ‖c ⊙ Q′ − Q‖₂² + 2 ‖c‖₂²`
//! subject to `‖Q′_{:,i} − Q′_{:,j}‖₁ ≤ d(i, j)`.
//!
//! `f` is convex in `c` for fixed `Q′` (closed-form minimizer per row) and
//! convex in `Q′` for fixed `c` (projected gradient). The projection onto the
//! intersection of pair constraints is approximated by cyclic pairwise
//! projections; steps that fail to decrease `f` are rejected, so the objective
//! sequence is non-increasing.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::select::strategy2;
use crate::types::{ModelParams, PrivacyMetric, QueryMatrix};

const MAX_PROJECTION_PASSES: usize = 50;
const MAX_INNER_ITERS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AltMinOutcome {
    pub params: ModelParams,
    /// Objective at initialization followed by one value per outer iteration.
    pub objectives: Vec<f64>,
}

/// Euclidean projection of `v` onto the ℓ₁ ball of the given radius.
fn project_l1_ball(v: &mut [f64], radius: f64) {
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    if norm <= radius {
        return;
    }
    if radius <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (idx, &u) in mags.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - radius) / (idx + 1) as f64;
        if u > t {
            theta = t;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - theta).max(0.0);
    }
}

struct Constraint {
    i: usize,
    j: usize,
    budget: f64,
}

fn constraints(m: &PrivacyMetric) -> Vec<Constraint> {
    m.pairs()
        .filter(|(_, _, d)| d.is_finite())
        .map(|(i, j, budget)| Constraint { i, j, budget })
        .collect()
}

fn max_violation(qp: &QueryMatrix, cons: &[Constraint]) -> f64 {
    cons.iter()
        .map(|c| qp.column_l1_diff(c.i, c.j) - c.budget)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Cyclic projections onto each pair constraint, then a uniform shrink so the
/// result is feasible even when the passes did not fully converge.
fn project(qp: &mut QueryMatrix, cons: &[Constraint], tol: f64) {
    let k = qp.num_queries();
    let mut diff = vec![0.0; k];
    for _ in 0..MAX_PROJECTION_PASSES {
        if max_violation(qp, cons) <= tol {
            break;
        }
        for c in cons {
            let l1 = qp.column_l1_diff(c.i, c.j);
            if l1 <= c.budget {
                continue;
            }
            for (r, d) in diff.iter_mut().enumerate() {
                *d = qp.get(r, c.i) - qp.get(r, c.j);
            }
            project_l1_ball(&mut diff, c.budget);
            for (r, d) in diff.iter().enumerate() {
                let mid = 0.5 * (qp.get(r, c.i) + qp.get(r, c.j));
                qp.set(r, c.i, mid + 0.5 * d);
                qp.set(r, c.j, mid - 0.5 * d);
            }
        }
    }
    let shrink = cons
        .iter()
        .map(|c| {
            let l1 = qp.column_l1_diff(c.i, c.j);
            if l1 > c.budget {
                c.budget / l1
            } else {
                1.0
            }
        })
        .fold(1.0, f64::min);
    if shrink < 1.0 {
        *qp = qp.scaled(shrink);
    }
}

fn objective(c: &[f64], qp: &QueryMatrix, q: &QueryMatrix, n2: f64) -> f64 {
    let mut bias = 0.0;
    for (k, (rp, r)) in qp.rows().zip(q.rows()).enumerate() {
        bias += rp
            .iter()
            .zip(r)
            .map(|(a, b)| (c[k] * a - b).powi(2))
            .sum::<f64>();
    }
    n2 * bias + 2.0 * c.iter().map(|x| x * x).sum::<f64>()
}

fn relative_change(old: f64, new: f64) -> f64 {
    (old - new).abs() / old.abs().max(1e-300)
}

/// Starts from the strategy-2 solution and alternates an exact `c`-step with a
/// projected-gradient `Q′`-step until the relative objective change drops
/// below `tol` or `max_outer` rounds have run.
pub fn altmin_preopt(
    q: &QueryMatrix,
    m: &PrivacyMetric,
    n: u64,
    max_outer: usize,
    tol: f64,
) -> Result<AltMinOutcome> {
    let init = strategy2(q, m)?;
    let n2 = (n as f64).powi(2);
    let cons = constraints(m);
    let mut c = init.scales().to_vec();
    let mut qp = init.transformed().clone();
    let mut f = objective(&c, &qp, q, n2);
    let mut objectives = vec![f];

    for _ in 0..max_outer {
        let start = f;

        // c-step: argmin of n² ‖c_k q′ − q‖² + 2 c_k², clipped at zero.
        let mut next_c = c.clone();
        for (k, ck) in next_c.iter_mut().enumerate() {
            let rp = qp.row(k);
            let num = n2 * crate::types::dot(rp, q.row(k));
            let den = n2 * crate::types::dot(rp, rp) + 2.0;
            *ck = (num / den).max(0.0);
        }
        let fc = objective(&next_c, &qp, q, n2);
        if fc <= f {
            c = next_c;
            f = fc;
        }

        // Q′-step: projected gradient with step 1/L, L = 2 n² max c_k².
        let lipschitz = 2.0 * n2 * c.iter().map(|x| x * x).fold(0.0, f64::max);
        if lipschitz > 0.0 {
            let step = 1.0 / lipschitz;
            for _ in 0..MAX_INNER_ITERS {
                let mut cand = qp.clone();
                for k in 0..cand.num_queries() {
                    let ck = c[k];
                    let target = q.row(k);
                    for (v, t) in cand.row_mut(k).iter_mut().zip(target) {
                        let grad = 2.0 * n2 * ck * (ck * *v - t);
                        *v -= step * grad;
                    }
                }
                project(&mut cand, &cons, tol.min(1e-9));
                let fq = objective(&c, &cand, q, n2);
                if fq > f {
                    break;
                }
                let change = relative_change(f, fq);
                qp = cand;
                f = fq;
                if change < tol {
                    break;
                }
            }
        }

        objectives.push(f);
        if relative_change(start, f) < tol {
            break;
        }
    }

    let params = ModelParams::new(c, qp)?;
    Ok(AltMinOutcome { params, objectives })
}

//! Iterative proportional budget allocation across the rows of a multi-linear
//! query (strategy 3).
//!
//! Each round computes whole-budget scales, splits every pair budget across
//! queries in proportion to their normalized coefficient gaps, derives per-query
//! scales against those shares, deducts what was consumed, and accumulates the
//! inverse scales. Output scales are the inverses of the accumulated totals.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ModelParams, PrivacyMetric, QueryMatrix};

pub const PSA_DEFAULT_MAX_ITERS: usize = 100;
/// An increment vector below this (elementwise) counts as zero.
pub const PSA_ZERO_STEP: f64 = 1e-12;
/// Remaining budgets in `[-CLAMP, 0)` are treated as exhausted.
const CLAMP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsaStep {
    /// Inverse scales gained this round.
    pub increment: Vec<f64>,
    /// Smallest remaining pair budget after deduction (before clamping).
    pub min_remaining: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsaOutcome {
    pub params: ModelParams,
    pub iterations: usize,
    /// False when `max_iters` was hit before the increment vanished.
    pub converged: bool,
    pub trace: Vec<PsaStep>,
}

struct Pair {
    budget: f64,
    gaps: Vec<f64>,
}

#[inline]
fn ratio(gap: f64, budget: f64) -> f64 {
    if gap == 0.0 {
        0.0
    } else if budget <= 0.0 {
        f64::INFINITY
    } else {
        gap / budget
    }
}

#[inline]
fn inverse(c: f64) -> f64 {
    if c.is_infinite() || c == 0.0 {
        0.0
    } else {
        1.0 / c
    }
}

/// Runs the allocation loop. `tol` bounds the increment vector at which the loop
/// stops; it is floored at [`PSA_ZERO_STEP`].
pub fn psa(m: &PrivacyMetric, q: &QueryMatrix, max_iters: usize, tol: f64) -> Result<PsaOutcome> {
    q.check_universe(m.size())?;
    let k = q.num_queries();
    let stop = tol.max(PSA_ZERO_STEP);

    let mut pairs = Vec::new();
    for (i, j, d) in m.pairs() {
        if d.is_infinite() {
            continue;
        }
        let gaps: Vec<f64> = q.rows().map(|r| (r[i] - r[j]).abs()).collect();
        if d == 0.0 && gaps.iter().any(|&g| g > 0.0) {
            return Err(Error::Infeasible { i, j });
        }
        if gaps.iter().all(|&g| g == 0.0) {
            continue;
        }
        pairs.push(Pair { budget: d, gaps });
    }

    // Rows that never differ on a constrained pair need no budget at all.
    let active: Vec<bool> = (0..k)
        .map(|r| pairs.iter().any(|p| p.gaps[r] > 0.0))
        .collect();

    let mut acc = vec![0.0; k];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut shares = vec![0.0; k];

    while iterations < max_iters {
        iterations += 1;

        let whole_inv: Vec<f64> = (0..k)
            .map(|r| {
                let c = pairs
                    .iter()
                    .map(|p| ratio(p.gaps[r], p.budget))
                    .fold(0.0, f64::max);
                if active[r] {
                    inverse(c)
                } else {
                    0.0
                }
            })
            .collect();

        let mut scales = vec![0.0f64; k];
        for p in &pairs {
            let weights: Vec<f64> = (0..k).map(|r| whole_inv[r] * p.gaps[r]).collect();
            let total: f64 = weights.iter().sum();
            for r in 0..k {
                shares[r] = if total > 0.0 {
                    p.budget * weights[r] / total
                } else {
                    p.budget / k as f64
                };
                scales[r] = scales[r].max(ratio(p.gaps[r], shares[r]));
            }
        }
        let increment: Vec<f64> = (0..k)
            .map(|r| if active[r] { inverse(scales[r]) } else { 0.0 })
            .collect();

        let mut min_remaining = f64::INFINITY;
        for p in &mut pairs {
            let used: f64 = p.gaps.iter().zip(&increment).map(|(g, t)| g * t).sum();
            p.budget -= used;
            min_remaining = min_remaining.min(p.budget);
            if p.budget < 0.0 && p.budget >= -CLAMP {
                p.budget = 0.0;
            }
        }

        for (a, t) in acc.iter_mut().zip(&increment) {
            *a += t;
        }
        let done = increment.iter().all(|&t| t < stop);
        trace.push(PsaStep {
            increment,
            min_remaining,
        });
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("psa stopped after {max_iters} iterations without a vanishing increment");
    }

    let scales: Vec<f64> = acc.iter().map(|&a| if a > 0.0 { 1.0 / a } else { 0.0 }).collect();
    // Q′ = Q / c = R ⊙ Q, zero rows for inactive queries.
    let params = ModelParams::new(scales, q.scale_rows(&acc))?;
    Ok(PsaOutcome {
        params,
        iterations,
        converged,
        trace,
    })
}

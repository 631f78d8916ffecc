//! Randomized mechanisms: vanilla and metric-calibrated Laplace, the
//! exponential mechanism with scale parameter `c`, and their analytic bounds.
//!
//! Randomness comes from ChaCha20 keyed by a 64-bit seed. Independent trials
//! use [`derive_seed`] so a whole experiment replays from one root seed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::sensitivity::{global_sensitivity, Norm};
use crate::types::{Histogram, ModelParams, NoisyResponse, QueryMatrix};

pub type MechRng = ChaCha20Rng;

pub fn seeded_rng(seed: u64) -> MechRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// SplitMix64 mix of `(root, index)`; gives well-separated child seeds.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut z = root ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw from the open interval (0, 1).
fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Inverse-CDF Laplace sample with density `exp(−|y|/λ) / 2λ`.
pub fn sample_laplace<R: RngCore + ?Sized>(scale: f64, rng: &mut R) -> Result<f64> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::Invalid(format!("Laplace scale must be >= 0, got {scale}")));
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    let u = open_unit(rng) - 0.5;
    Ok(-scale * u.signum() * (1.0 - 2.0 * u.abs()).ln())
}

/// Adds independent `Lap(scales[k])` noise to `mean[k]`.
pub fn add_laplace_noise<R: RngCore + ?Sized>(
    mean: &[f64],
    scales: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    mean.iter()
        .zip(scales)
        .map(|(m, &s)| Ok(m + sample_laplace(s, rng)?))
        .collect()
}

/// Noise scale `Δ^Q₁ / ε` of the standard ε-DP Laplace mechanism.
pub fn vanilla_scale(q: &QueryMatrix, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("eps must be positive, got {eps}")));
    }
    Ok(global_sensitivity(q, Norm::L1) / eps)
}

/// `Z = Qx + Y` with every `Y_k ~ Lap(Δ^Q₁ / ε)`.
pub fn laplace_vanilla(x: &Histogram, q: &QueryMatrix, eps: f64, seed: u64) -> Result<NoisyResponse> {
    let scale = vanilla_scale(q, eps)?;
    let scales = vec![scale; q.num_queries()];
    let mean = q.answer(x)?;
    let values = add_laplace_noise(&mean, &scales, &mut seeded_rng(seed))?;
    Ok(NoisyResponse {
        values,
        scales,
        seed,
    })
}

/// `Z_k = c_k ⟨Q′_k, x⟩ + Lap(c_k)`.
pub fn laplace_dx(x: &Histogram, params: &ModelParams, seed: u64) -> Result<NoisyResponse> {
    let values = laplace_dx_with(x, params, &mut seeded_rng(seed))?;
    Ok(NoisyResponse {
        values,
        scales: params.scales().to_vec(),
        seed,
    })
}

pub fn laplace_dx_with<R: RngCore + ?Sized>(
    x: &Histogram,
    params: &ModelParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mean: Vec<f64> = params
        .transformed()
        .answer(x)?
        .iter()
        .zip(params.scales())
        .map(|(a, c)| a * c)
        .collect();
    add_laplace_noise(&mean, params.scales(), rng)
}

/// Log density-ratio bound `‖Q′_{:,i} − Q′_{:,j}‖₁` between histograms that
/// differ by one record moved from `i` to `j`.
pub fn laplace_ratio_bound(params: &ModelParams, i: usize, j: usize) -> Result<f64> {
    crate::sensitivity::pair_sensitivity_multi(params.transformed(), i, j, Norm::L1)
}

/// `2 {n² ‖c ⊙ Q′ − Q‖₂² + 2 ‖c‖₂²}`, an upper bound on `E‖Z − Qx‖₂²`.
pub fn l2_error_bound(params: &ModelParams, q: &QueryMatrix, n: f64) -> f64 {
    2.0 * params.squared_loss_objective(q, n)
}

/// `n ‖c ⊙ Q′ − Q‖_∞ + ln(K/δ) ‖c‖_∞`; exceeded by `‖Qx − Z‖_∞` with
/// probability at most `δ`.
pub fn linf_error_bound(params: &ModelParams, q: &QueryMatrix, n: f64, delta: f64) -> f64 {
    let k = params.num_queries() as f64;
    let cmax = params.scales().iter().copied().fold(0.0, f64::max);
    n * params.max_bias(q) + (k / delta).ln() * cmax
}

/// Exact selection probabilities `∝ exp(u / 2c)`, max-shifted before exponentiation.
pub fn exp_distribution(utilities: &[f64], c: f64) -> Result<Vec<f64>> {
    if utilities.is_empty() {
        return Err(Error::Invalid("empty candidate set".into()));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Invalid(format!("scale c must be positive, got {c}")));
    }
    if utilities.iter().any(|u| !u.is_finite()) {
        return Err(Error::Invalid("utilities must be finite".into()));
    }
    let logw: Vec<f64> = utilities.iter().map(|u| u / (2.0 * c)).collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Draws an index from a discrete distribution by inverse CDF.
pub fn sample_index<R: RngCore + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (idx, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return idx;
        }
    }
    // rounding left a sliver above the last cumulative value
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Exponential mechanism: returns the index of the selected candidate, chosen
/// with probability proportional to `exp(utility(r) / 2c)`.
pub fn exp_mechanism<T, F, R>(candidates: &[T], utility: F, c: f64, rng: &mut R) -> Result<usize>
where
    F: Fn(&T) -> f64,
    R: RngCore + ?Sized,
{
    let utilities: Vec<f64> = candidates.iter().map(utility).collect();
    let probs = exp_distribution(&utilities, c)?;
    Ok(sample_index(&probs, rng))
}

/// Utility threshold `δ + ⋆ − 2c (ln(|R| / |R⋆|) + t)`; the selected element's
/// utility exceeds it with probability at least `1 − e^{−t}`.
pub fn exp_accuracy_bound(
    r_size: usize,
    r_star_size: usize,
    c: f64,
    delta_uu: f64,
    star: f64,
    t: f64,
) -> Result<f64> {
    if r_star_size == 0 || r_star_size > r_size {
        return Err(Error::Invalid(format!(
            "need 1 <= |R*| <= |R|, got |R*| = {r_star_size}, |R| = {r_size}"
        )));
    }
    Ok(delta_uu + star - 2.0 * c * ((r_size as f64 / r_star_size as f64).ln() + t))
}

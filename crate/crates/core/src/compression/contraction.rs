//! Estimates of the contraction ratio `E‖x - comp(x)‖² / ‖x‖²`.
//!
//! For `x = 0` every operator returns 0, so the ratio is defined as 0.

use itertools::Itertools;
use rand::Rng;

use super::{rand_k_subset, top_k, CompressionError, CompressorSpec};
use crate::{sq_norm, Estimate};

/// Largest number of subsets [`contraction_exact`] is willing to enumerate for rand-k.
const MAX_SUBSETS: u128 = 2_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// Monte Carlo estimate of the contraction ratio over `trials` draws.
/// Deterministic operators are evaluated once.
pub fn contraction_estimate<R: Rng + ?Sized>(
    spec: &CompressorSpec,
    x: &[f64],
    trials: usize,
    rng: &mut R,
) -> Result<f64, CompressionError> {
    Ok(contraction_monte_carlo(spec, x, trials, rng)?.mean)
}

/// Like [`contraction_estimate`], with the standard error of the mean.
pub fn contraction_monte_carlo<R: Rng + ?Sized>(
    spec: &CompressorSpec,
    x: &[f64],
    trials: usize,
    rng: &mut R,
) -> Result<Estimate, CompressionError> {
    if trials == 0 {
        return Err(CompressionError::NoTrials);
    }
    spec.validate(x.len())?;
    let norm = sq_norm(x);
    if norm == 0.0 {
        return Ok(Estimate { mean: 0.0, std_err: 0.0 });
    }
    let trials = if spec.is_deterministic() { 1 } else { trials };
    let samples: Vec<f64> = (0..trials)
        .map(|_| Ok(spec.compress(x, rng)?.residual_sq_norm(x) / norm))
        .collect::<Result<_, CompressionError>>()?;
    Ok(Estimate::from_samples(&samples))
}

/// Exact contraction ratio by enumerating every outcome of the operator.
///
/// Identity and top-k have a single outcome; rand-k averages over all
/// `C(d, k)` subsets; rand-p averages over the gate and the chosen
/// coordinate. Returns `None` for QSGD or when rand-k has too many subsets.
pub fn contraction_exact(spec: &CompressorSpec, x: &[f64]) -> Result<Option<f64>, CompressionError> {
    let d = x.len();
    spec.validate(d)?;
    let norm = sq_norm(x);
    if norm == 0.0 {
        return Ok(Some(0.0));
    }
    let ratio = match *spec {
        CompressorSpec::Identity => 0.0,
        CompressorSpec::TopK { k } => top_k(x, k)?.residual_sq_norm(x) / norm,
        CompressorSpec::RandK { k } => {
            let count = binomial(d, k);
            if count > MAX_SUBSETS {
                return Ok(None);
            }
            let total: f64 = (0..d)
                .combinations(k)
                .map(|subset| rand_k_subset(x, &subset).residual_sq_norm(x))
                .sum();
            total / count as f64 / norm
        }
        CompressorSpec::RandP { p } => {
            // gate closed: nothing kept; gate open: coordinate j kept w.p. 1/d
            let open: f64 = (0..d)
                .map(|j| rand_k_subset(x, &[j]).residual_sq_norm(x))
                .sum::<f64>()
                / d as f64;
            ((1.0 - p) * norm + p * open) / norm
        }
        CompressorSpec::Qsgd { .. } => return Ok(None),
    };
    Ok(Some(ratio))
}

//! Runtime checks of the quantities the convergence analysis talks about.

use itertools::Itertools;
use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use super::{MemSgd, OptimError, StepSchedule};
use crate::compression::{rand_k, rand_k_subset, CompressionError, SparseUpdate};
use crate::objective::Objective;
use crate::{sq_norm, Estimate};

/// Subsets enumerated by [`variance_exact`] before it gives up.
const MAX_SUBSETS: usize = 2_000_000;

/// One logged step: sampled index, stepsize and the update actually applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub index: usize,
    pub eta: f64,
    pub update: SparseUpdate,
}

/// Distance between the virtual iterate `x̃_t = x_0 - Σ_{j<t} η_j ∇f_{i_j}(x_j)`
/// and `x_t - m_t`.
///
/// Summing the recursion gives `x̃_t - x_t = Σ g_j - Σ η_j ∇f_{i_j}(x_j) = -m_t`,
/// so the result is `‖(x̃_t - x_t) + m_t‖` and should sit at rounding level.
/// The iterates `x_j` are rebuilt from `x_0` and the logged updates, the
/// gradients are recomputed from scratch and summed without the memory.
pub fn virtual_gap(state: &MemSgd, obj: &Objective, log: &[ReplayEntry]) -> Result<f64, OptimError> {
    if log.len() as u64 != state.t() {
        return Err(OptimError::ReplayLength {
            log: log.len(),
            t: state.t(),
        });
    }
    let d = state.x().len();
    if obj.dim() != d {
        return Err(crate::objective::ObjectiveError::Dimension {
            expected: obj.dim(),
            got: d,
        }
        .into());
    }
    let mut x = state.x0().to_vec();
    let mut virt = state.x0().to_vec();
    let mut g = vec![0.0; d];
    for entry in log {
        obj.component_grad_into(&x, entry.index, &mut g);
        for (v, gj) in virt.iter_mut().zip(&g) {
            *v -= entry.eta * gj;
        }
        for (j, val) in entry.update.iter() {
            x[j] -= val;
        }
    }
    let gap: f64 = virt
        .iter()
        .zip(state.x())
        .zip(state.memory())
        .map(|((v, x), m)| (v - x + m).powi(2))
        .sum();
    Ok(gap.sqrt())
}

/// `η_t² · 4α/(α-4) · (d/k)² · G²`, the bound on the memory after `t` steps.
pub fn memory_bound(
    schedule: &StepSchedule,
    t: u64,
    alpha: f64,
    d: usize,
    k: f64,
    g2: f64,
) -> Result<f64, OptimError> {
    if !(alpha > 4.0) {
        return Err(OptimError::AlphaTooSmall(alpha));
    }
    if schedule.theoretical_form().is_none() {
        return Err(OptimError::UnsupportedSchedule(schedule.to_string()));
    }
    let eta = schedule.eta(t);
    let ratio = d as f64 / k;
    Ok(eta * eta * 4.0 * alpha / (alpha - 4.0) * ratio * ratio * g2)
}

/// Bound minus `‖m_t‖²` at the state's current step; negative means violated.
pub fn memory_bound_margin(
    state: &MemSgd,
    schedule: &StepSchedule,
    alpha: f64,
    d: usize,
    k: f64,
    g2: f64,
) -> Result<f64, OptimError> {
    let bound = memory_bound(schedule, state.t(), alpha, d, k, g2)?;
    Ok(bound - sq_norm(state.memory()))
}

/// Variance of the rescaled rand-k gradient estimator, single sample and mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceProbe {
    pub single: Estimate,
    pub batched: Estimate,
    pub batch: usize,
}

fn check_probe(obj: &Objective, k: usize, trials: usize) -> Result<(), OptimError> {
    let d = obj.dim();
    if k == 0 || k > d {
        return Err(CompressionError::KOutOfRange { k, d }.into());
    }
    if trials == 0 {
        return Err(CompressionError::NoTrials.into());
    }
    Ok(())
}

/// Monte Carlo estimates of `E‖(d/k)·rand_k(g) - ∇f(x)‖²` where `g` is one
/// stochastic gradient (`single`) or the mean over `batch` distinct indices
/// (`batched`).
pub fn variance_probe<R: Rng + ?Sized>(
    obj: &Objective,
    x: &[f64],
    k: usize,
    batch: usize,
    trials: usize,
    rng: &mut R,
) -> Result<VarianceProbe, OptimError> {
    check_probe(obj, k, trials)?;
    let (n, d) = (obj.n(), obj.dim());
    if batch == 0 || batch > n {
        return Err(OptimError::Probe(format!("batch must be in 1..={n}, got {batch}")));
    }
    let full = obj.full_gradient(x)?;
    let scale = d as f64 / k as f64;
    let mut g = vec![0.0; d];
    let mut mean = vec![0.0; d];
    let err = |est: &[f64], rng: &mut R| -> Result<f64, OptimError> {
        let kept = rand_k(est, k, rng)?;
        let mut total = sq_norm(&full);
        for (j, v) in kept.iter() {
            let e = scale * v - full[j];
            total += e * e - full[j] * full[j];
        }
        Ok(total)
    };

    let mut single = Vec::with_capacity(trials);
    let mut batched = Vec::with_capacity(trials);
    for _ in 0..trials {
        let i = rng.random_range(0..n);
        obj.component_grad_into(x, i, &mut g);
        single.push(err(&g, rng)?);

        mean.iter_mut().for_each(|v| *v = 0.0);
        for i in sample(rng, n, batch) {
            obj.component_grad_into(x, i, &mut g);
            for (m, gj) in mean.iter_mut().zip(&g) {
                *m += gj / batch as f64;
            }
        }
        batched.push(err(&mean, rng)?);
    }
    Ok(VarianceProbe {
        single: Estimate::from_samples(&single),
        batched: Estimate::from_samples(&batched),
        batch,
    })
}

/// Exact single-sample variance by enumerating every index and every k-subset.
/// `None` when there are more than a few million outcomes.
pub fn variance_exact(obj: &Objective, x: &[f64], k: usize) -> Result<Option<f64>, OptimError> {
    check_probe(obj, k, 1)?;
    let (n, d) = (obj.n(), obj.dim());
    let subsets: Vec<Vec<usize>> = (0..d).combinations(k).take(MAX_SUBSETS + 1).collect();
    if subsets.len() > MAX_SUBSETS || subsets.len().saturating_mul(n) > MAX_SUBSETS {
        return Ok(None);
    }
    let full = obj.full_gradient(x)?;
    let scale = d as f64 / k as f64;
    let mut total = 0.0;
    for i in 0..n {
        let g = obj.stochastic_grad(x, i)?.gradient;
        for s in &subsets {
            let kept = rand_k_subset(&g, s).to_dense();
            total += kept
                .iter()
                .zip(&full)
                .map(|(v, f)| (scale * v - f).powi(2))
                .sum::<f64>();
        }
    }
    Ok(Some(total / (n * subsets.len()) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::CompressorSpec;
    use crate::data::{make_quadratic_sized, make_synthetic_logistic, Dataset};
    use crate::optimizer::{shift_for, Averaging};
    use crate::rng_for;
    use std::sync::Arc;

    fn single_row(values: &[f64]) -> Objective {
        let mut ds = Dataset::new(values.len());
        let row: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
        ds.push_row(&row, 1.0).unwrap();
        Objective::logistic(Arc::new(ds), 0.0)
    }

    #[test]
    fn gap_is_zero_at_start_and_for_identity() {
        let p = make_synthetic_logistic(40, 6, 0.7, 0);
        let schedule = StepSchedule::InverseT;
        let mut st = MemSgd::new(vec![0.0; 6], Averaging::LastIterate, 1).record_replay();
        assert_eq!(virtual_gap(&st, &p.objective, st.replay().unwrap()).unwrap(), 0.0);
        for _ in 0..300 {
            st.step(&p.objective, &schedule, &CompressorSpec::Identity).unwrap();
        }
        assert_eq!(virtual_gap(&st, &p.objective, st.replay().unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn top1_gap_is_rounding_level() {
        let p = make_quadratic_sized(100, 20, 1.0, 4.0, 3);
        let a = shift_for(5.0, 20, 1.0).unwrap();
        let schedule = StepSchedule::Theoretical { mu: 1.0, a };
        let mut st = MemSgd::new(vec![0.0; 20], Averaging::LastIterate, 2).record_replay();
        for _ in 0..1000 {
            st.step(&p.objective, &schedule, &CompressorSpec::TopK { k: 1 }).unwrap();
        }
        let log = st.replay().unwrap();
        let gap = virtual_gap(&st, &p.objective, log).unwrap();
        assert!(gap <= 1e-8 * (1.0 + sq_norm(st.x()).sqrt()), "{gap}");
        assert!(sq_norm(st.memory()) > 0.0);
        assert_eq!(
            virtual_gap(&st, &p.objective, &log[..10]),
            Err(OptimError::ReplayLength { log: 10, t: 1000 })
        );
    }

    #[test]
    fn memory_bound_constants() {
        let s = StepSchedule::Theoretical { mu: 1.0, a: 7.0 };
        // η_0 = 8/7; 20 · (8/7)² · 1 · 1
        let b = memory_bound(&s, 0, 5.0, 1, 1.0, 1.0).unwrap();
        assert!((b - 20.0 * (8.0f64 / 7.0).powi(2)).abs() < 1e-12);
        assert_eq!(
            memory_bound(&s, 0, 4.0, 1, 1.0, 1.0),
            Err(OptimError::AlphaTooSmall(4.0))
        );
        assert!(matches!(
            memory_bound(&StepSchedule::InverseT, 0, 5.0, 1, 1.0, 1.0),
            Err(OptimError::UnsupportedSchedule(_))
        ));
    }

    #[test]
    fn identity_margin_equals_bound() {
        let p = make_quadratic_sized(10, 5, 1.0, 2.0, 0);
        let s = StepSchedule::Theoretical { mu: 1.0, a: 35.0 };
        let mut st = MemSgd::new(vec![0.0; 5], Averaging::LastIterate, 0);
        for _ in 0..50 {
            st.step(&p.objective, &s, &CompressorSpec::Identity).unwrap();
        }
        let margin = memory_bound_margin(&st, &s, 5.0, 5, 1.0, 3.0).unwrap();
        assert_eq!(margin, memory_bound(&s, 50, 5.0, 5, 1.0, 3.0).unwrap());
        assert!(margin >= 0.0);
    }

    #[test]
    fn four_coordinates_single_gradient_blowup() {
        // one logistic row with λ = 0 at x = 0: ∇f = -a/2
        let obj = single_row(&[1.0, -2.0, 0.5, 3.0]);
        let g = obj.full_gradient(&[0.0; 4]).unwrap();
        // oracle: (1/4) Σ_j ‖4 g_j e_j - g‖² = 4‖g‖² - ‖g‖²
        let mut oracle = 0.0;
        for j in 0..4 {
            let mut e = g.iter().map(|v| -v).collect::<Vec<_>>();
            e[j] += 4.0 * g[j];
            oracle += sq_norm(&e) / 4.0;
        }
        assert!((oracle - 3.0 * sq_norm(&g)).abs() < 1e-12);
        let exact = variance_exact(&obj, &[0.0; 4], 1).unwrap().unwrap();
        assert!((exact - oracle).abs() < 1e-12);
    }

    #[test]
    fn full_k_has_no_blowup() {
        let p = make_synthetic_logistic(30, 5, 1.0, 4);
        let x = vec![0.1; 5];
        let full = p.objective.full_gradient(&x).unwrap();
        let plain: f64 = (0..30)
            .map(|i| {
                let g = p.objective.stochastic_grad(&x, i).unwrap().gradient;
                g.iter().zip(&full).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / 30.0;
        let exact = variance_exact(&p.objective, &x, 5).unwrap().unwrap();
        assert!((exact - plain).abs() < 1e-12);
    }

    #[test]
    fn batching_removes_blowup() {
        let p = make_synthetic_logistic(200, 10, 1.0, 5);
        let x = vec![0.0; 10];
        let mut rng = rng_for(6, 0);
        let probe = variance_probe(&p.objective, &x, 1, 10, 4000, &mut rng).unwrap();
        let slack = 3.0 * (probe.single.std_err.powi(2) + probe.batched.std_err.powi(2)).sqrt();
        assert!(probe.batched.mean <= probe.single.mean + slack, "{probe:?}");
        let exact = variance_exact(&p.objective, &x, 1).unwrap().unwrap();
        assert!((probe.single.mean - exact).abs() <= 4.0 * probe.single.std_err);
    }

    #[test]
    fn probe_rejects_bad_arguments() {
        let p = make_synthetic_logistic(5, 3, 1.0, 0);
        let mut rng = rng_for(0, 0);
        assert!(variance_probe(&p.objective, &[0.0; 3], 0, 1, 1, &mut rng).is_err());
        assert!(variance_probe(&p.objective, &[0.0; 3], 1, 6, 1, &mut rng).is_err());
        assert!(variance_probe(&p.objective, &[0.0; 3], 1, 1, 0, &mut rng).is_err());
    }
}

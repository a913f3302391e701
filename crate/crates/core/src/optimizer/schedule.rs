use std::fmt;

use super::OptimError;

/// Stepsize sequence `η_t`, positive and nonincreasing in `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// `η_t = 8 / (μ (a + t))`.
    Theoretical { mu: f64, a: f64 },
    /// `η_t = γ / (λ (t + a))`.
    Practical { gamma: f64, lambda: f64, a: f64 },
    /// `η_t = 1 / (1 + t)`.
    InverseT,
    Constant { eta: f64 },
    /// `η_t = γ₀ / (1 + γ₀ λ t)`.
    Bottou { gamma0: f64, lambda: f64 },
}

impl StepSchedule {
    pub fn eta(&self, t: u64) -> f64 {
        let t = t as f64;
        match *self {
            StepSchedule::Theoretical { mu, a } => 8.0 / (mu * (a + t)),
            StepSchedule::Practical { gamma, lambda, a } => gamma / (lambda * (t + a)),
            StepSchedule::InverseT => 1.0 / (1.0 + t),
            StepSchedule::Constant { eta } => eta,
            StepSchedule::Bottou { gamma0, lambda } => gamma0 / (1.0 + gamma0 * lambda * t),
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |what: &str| Err(OptimError::Schedule(format!("{self}: {what}")));
        match *self {
            StepSchedule::Theoretical { mu, a } => {
                if !(mu > 0.0) {
                    return bad("mu must be positive");
                }
                if !(a > 0.0) {
                    return bad("shift a must be positive");
                }
            }
            StepSchedule::Practical { gamma, lambda, a } => {
                if !(gamma > 0.0 && lambda > 0.0) {
                    return bad("gamma and lambda must be positive");
                }
                if !(a > 0.0) {
                    return bad("shift a must be positive");
                }
            }
            StepSchedule::InverseT => {}
            StepSchedule::Constant { eta } => {
                if !(eta > 0.0 && eta.is_finite()) {
                    return bad("eta must be positive");
                }
            }
            StepSchedule::Bottou { gamma0, lambda } => {
                if !(gamma0 > 0.0 && lambda >= 0.0) {
                    return bad("gamma0 must be positive and lambda nonnegative");
                }
            }
        }
        Ok(())
    }

    /// `(μ, a)` such that `η_t = 8 / (μ (a + t))`, when the schedule has that form.
    ///
    /// The practical schedule maps to `μ = 8λ/γ`, a rescaling that makes
    /// both formulas produce the same stepsizes.
    pub fn theoretical_form(&self) -> Option<(f64, f64)> {
        match *self {
            StepSchedule::Theoretical { mu, a } => Some((mu, a)),
            StepSchedule::Practical { gamma, lambda, a } => Some((8.0 * lambda / gamma, a)),
            _ => None,
        }
    }

    /// The shift `a`, for schedules that have one.
    pub fn shift(&self) -> Option<f64> {
        self.theoretical_form().map(|(_, a)| a)
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            StepSchedule::Theoretical { mu, a } => write!(f, "theoretical(mu={mu}, a={a})"),
            StepSchedule::Practical { gamma, lambda, a } => {
                write!(f, "practical(gamma={gamma}, lambda={lambda}, a={a})")
            }
            StepSchedule::InverseT => write!(f, "inverse_t"),
            StepSchedule::Constant { eta } => write!(f, "constant(eta={eta})"),
            StepSchedule::Bottou { gamma0, lambda } => write!(f, "bottou(gamma0={gamma0}, lambda={lambda})"),
        }
    }
}

/// Shift `a = (α + 2) d / k` that keeps the memory bounded for `α > 4`.
pub fn shift_for(alpha: f64, d: usize, k: f64) -> Result<f64, OptimError> {
    if !(alpha > 4.0) {
        return Err(OptimError::AlphaTooSmall(alpha));
    }
    if d == 0 || !(k > 0.0) {
        return Err(OptimError::Schedule(format!("need d >= 1 and k > 0, got d = {d}, k = {k}")));
    }
    Ok((alpha + 2.0) * d as f64 / k)
}

/// `ρ = 4α / ((α - 4)(α + 1)²)`.
pub fn rho(alpha: f64) -> f64 {
    4.0 * alpha / ((alpha - 4.0) * (alpha + 1.0).powi(2))
}

/// Whether `a ≥ ((α + 1) d/k + ρ) / (ρ + 1)` with `a > 1` and `α > 4`.
pub fn shift_admissible(alpha: f64, d: usize, k: f64, a: f64) -> bool {
    if !(alpha > 4.0) || !(a > 1.0) {
        return false;
    }
    let r = rho(alpha);
    a >= ((alpha + 1.0) * d as f64 / k + r) / (r + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_values_for_common_alphas() {
        assert_eq!(shift_for(5.0, 2000, 1.0).unwrap(), 14000.0);
        assert_eq!(shift_for(5.0, 3, 3.0).unwrap(), 7.0);
        assert_eq!(shift_for(4.0, 3, 1.0), Err(OptimError::AlphaTooSmall(4.0)));
        assert!(shift_for(5.0, 3, 0.0).is_err());
    }

    #[test]
    fn shift_passes_admissibility() {
        for ratio in [1usize, 10, 2000] {
            let a = shift_for(5.0, ratio, 1.0).unwrap();
            // direct evaluation: ρ = 20/36, bound = (6·ratio + ρ)/(ρ + 1)
            let r = 20.0 / 36.0;
            let bound = (6.0 * ratio as f64 + r) / (r + 1.0);
            assert!(a >= bound);
            assert!(shift_admissible(5.0, ratio, 1.0, a));
        }
        assert!(!shift_admissible(5.0, 2000, 1.0, 10.0));
        assert!(!shift_admissible(4.0, 1, 1.0, 100.0));
    }

    #[test]
    fn theoretical_value() {
        let s = StepSchedule::Theoretical { mu: 1.0, a: 10.0 };
        assert_eq!(s.eta(0), 0.8);
        let p = StepSchedule::Practical {
            gamma: 2.0,
            lambda: 0.5,
            a: 4.0,
        };
        let (mu, a) = p.theoretical_form().unwrap();
        for t in [0, 1, 17, 1000] {
            let th = StepSchedule::Theoretical { mu, a };
            assert!((th.eta(t) - p.eta(t)).abs() <= 1e-15 * p.eta(t));
        }
        assert_eq!(StepSchedule::InverseT.eta(3), 0.25);
        assert_eq!(StepSchedule::InverseT.theoretical_form(), None);
    }

    #[test]
    fn schedules_are_positive_and_nonincreasing() {
        let all = [
            StepSchedule::Theoretical { mu: 0.3, a: 7.0 },
            StepSchedule::Practical {
                gamma: 2.0,
                lambda: 1e-3,
                a: 100.0,
            },
            StepSchedule::InverseT,
            StepSchedule::Constant { eta: 0.1 },
            StepSchedule::Bottou {
                gamma0: 1.0,
                lambda: 0.01,
            },
        ];
        for s in all {
            s.validate().unwrap();
            let mut prev = f64::INFINITY;
            for t in 0..5000 {
                let e = s.eta(t);
                assert!(e > 0.0 && e <= prev, "{s} at {t}");
                prev = e;
            }
        }
    }

    #[test]
    fn invalid_schedules() {
        assert!(StepSchedule::Theoretical { mu: 0.0, a: 1.0 }.validate().is_err());
        assert!(StepSchedule::Constant { eta: -1.0 }.validate().is_err());
        assert!(StepSchedule::Practical {
            gamma: 2.0,
            lambda: 0.0,
            a: 1.0
        }
        .validate()
        .is_err());
    }
}

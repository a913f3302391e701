//! Finite-sum objectives `f(x) = (1/n) Σ f_i(x)` and their stochastic gradient oracle.

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::data::Dataset;
use crate::{dot, sq_norm};

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("sample index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("at least one point is required")]
    NoPoints,
}

/// `log(1 + exp(-z))` without overflow for large |z|.
pub fn log1p_exp_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + exp(-z))`, evaluated on the side that cannot overflow.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// L2-regularised logistic regression:
/// `f_i(x) = log(1 + exp(-b_i a_iᵀx)) + (λ/2)‖x‖²`.
#[derive(Debug, Clone)]
pub struct Logistic {
    pub data: Arc<Dataset>,
    pub lambda: f64,
}

/// Finite-sum quadratic `f_i(x) = ½ (x - c_i)ᵀ H (x - c_i)` with a shared
/// symmetric positive definite `H`. The minimiser of `f` is the mean centre.
#[derive(Debug, Clone)]
pub struct Quadratic {
    dim: usize,
    /// Row-major d × d.
    hessian: Vec<f64>,
    /// Row-major n × d.
    centers: Vec<f64>,
    mu: f64,
    l: f64,
}

impl Quadratic {
    /// `hessian` must be symmetric with spectrum in `[mu, l]`; callers vouch for it.
    pub fn new(dim: usize, hessian: Vec<f64>, centers: Vec<f64>, mu: f64, l: f64) -> Self {
        assert_eq!(hessian.len(), dim * dim);
        assert_eq!(centers.len() % dim.max(1), 0);
        Quadratic {
            dim,
            hessian,
            centers,
            mu,
            l,
        }
    }

    pub fn hessian(&self) -> &[f64] {
        &self.hessian
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    pub fn n(&self) -> usize {
        self.centers.len() / self.dim.max(1)
    }

    fn hess_mul(&self, v: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(&self.hessian[r * self.dim..(r + 1) * self.dim], v);
        }
    }
}

#[derive(Debug, Clone)]
pub enum Objective {
    Logistic(Logistic),
    Quadratic(Quadratic),
}

/// `∇f_i(x)` together with the index it was drawn for.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub index: usize,
    pub gradient: Vec<f64>,
}

impl Objective {
    pub fn logistic(data: Arc<Dataset>, lambda: f64) -> Self {
        assert!(lambda >= 0.0, "lambda must be nonnegative");
        Objective::Logistic(Logistic { data, lambda })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Objective::Logistic(_) => "logistic",
            Objective::Quadratic(_) => "quadratic",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Objective::Logistic(l) => l.data.dim(),
            Objective::Quadratic(q) => q.dim,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Objective::Logistic(l) => l.data.n(),
            Objective::Quadratic(q) => q.n(),
        }
    }

    /// Strong-convexity modulus used by the theoretical schedule:
    /// λ for logistic, the smallest Hessian eigenvalue for the quadratic.
    pub fn mu(&self) -> f64 {
        match self {
            Objective::Logistic(l) => l.lambda,
            Objective::Quadratic(q) => q.mu,
        }
    }

    /// Componentwise smoothness bound `L̂`: `max_i ‖a_i‖²/4 + λ` for logistic,
    /// the largest Hessian eigenvalue for the quadratic.
    pub fn smoothness_bound(&self) -> f64 {
        match self {
            Objective::Logistic(l) => l.data.max_row_sq_norm() / 4.0 + l.lambda,
            Objective::Quadratic(q) => q.l,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ObjectiveError> {
        if x.len() != self.dim() {
            return Err(ObjectiveError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `f_i(x)`.
    pub fn component_value(&self, x: &[f64], i: usize) -> f64 {
        match self {
            Objective::Logistic(l) => {
                let margin = l.data.label(i) * l.data.row(i).dot(x);
                log1p_exp_neg(margin) + 0.5 * l.lambda * sq_norm(x)
            }
            Objective::Quadratic(q) => {
                let diff: Vec<f64> = x.iter().zip(q.center(i)).map(|(a, c)| a - c).collect();
                let mut hd = vec![0.0; q.dim];
                q.hess_mul(&diff, &mut hd);
                0.5 * dot(&diff, &hd)
            }
        }
    }

    /// Exact finite-sum value `f(x)`.
    pub fn full_value(&self, x: &[f64]) -> Result<f64, ObjectiveError> {
        self.check_dim(x)?;
        let n = self.n();
        Ok(match self {
            Objective::Logistic(l) => {
                let loss: f64 = (0..n)
                    .map(|i| log1p_exp_neg(l.data.label(i) * l.data.row(i).dot(x)))
                    .sum();
                let avg = if n == 0 { 0.0 } else { loss / n as f64 };
                avg + 0.5 * l.lambda * sq_norm(x)
            }
            Objective::Quadratic(_) => {
                (0..n).map(|i| self.component_value(x, i)).sum::<f64>() / n as f64
            }
        })
    }

    /// Writes `∇f_i(x)` into `out` without validating shapes. Hot-loop entry point.
    pub fn component_grad_into(&self, x: &[f64], i: usize, out: &mut [f64]) {
        match self {
            Objective::Logistic(l) => {
                let row = l.data.row(i);
                let b = l.data.label(i);
                let coef = -b * sigmoid(-b * row.dot(x));
                for (o, &xj) in out.iter_mut().zip(x) {
                    *o = l.lambda * xj;
                }
                for (&j, &v) in row.indices.iter().zip(row.values) {
                    out[j] += coef * v;
                }
            }
            Objective::Quadratic(q) => {
                let diff: Vec<f64> = x.iter().zip(q.center(i)).map(|(a, c)| a - c).collect();
                q.hess_mul(&diff, out);
            }
        }
    }

    pub fn stochastic_grad(&self, x: &[f64], i: usize) -> Result<GradientSample, ObjectiveError> {
        self.check_dim(x)?;
        if i >= self.n() {
            return Err(ObjectiveError::IndexOutOfRange {
                index: i,
                n: self.n(),
            });
        }
        let mut gradient = vec![0.0; self.dim()];
        self.component_grad_into(x, i, &mut gradient);
        Ok(GradientSample { index: i, gradient })
    }

    /// Draws `i` uniformly from `[n]` and returns `∇f_i(x)`.
    pub fn sample_grad<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        rng: &mut R,
    ) -> Result<GradientSample, ObjectiveError> {
        let i = rng.random_range(0..self.n());
        self.stochastic_grad(x, i)
    }

    pub fn full_gradient(&self, x: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        self.check_dim(x)?;
        let d = self.dim();
        let n = self.n();
        let mut g = vec![0.0; d];
        match self {
            Objective::Logistic(l) => {
                for i in 0..n {
                    let row = l.data.row(i);
                    let b = l.data.label(i);
                    let coef = -b * sigmoid(-b * row.dot(x)) / n as f64;
                    for (&j, &v) in row.indices.iter().zip(row.values) {
                        g[j] += coef * v;
                    }
                }
                for (gj, &xj) in g.iter_mut().zip(x) {
                    *gj += l.lambda * xj;
                }
            }
            Objective::Quadratic(q) => {
                let mut mean = vec![0.0; d];
                for i in 0..n {
                    for (m, c) in mean.iter_mut().zip(q.center(i)) {
                        *m += c;
                    }
                }
                let diff: Vec<f64> = x
                    .iter()
                    .zip(&mean)
                    .map(|(a, m)| a - m / n as f64)
                    .collect();
                q.hess_mul(&diff, &mut g);
            }
        }
        Ok(g)
    }

    /// `E_i ‖∇f_i(x)‖²` as the exact finite-sum average.
    pub fn expected_sq_grad_norm(&self, x: &[f64]) -> Result<f64, ObjectiveError> {
        self.check_dim(x)?;
        let mut g = vec![0.0; self.dim()];
        let mut total = 0.0;
        for i in 0..self.n() {
            self.component_grad_into(x, i, &mut g);
            total += sq_norm(&g);
        }
        Ok(total / self.n() as f64)
    }

    /// Objective restricted to the listed components.
    pub fn subsample(&self, rows: &[usize]) -> Objective {
        match self {
            Objective::Logistic(l) => Objective::Logistic(Logistic {
                data: Arc::new(l.data.select_rows(rows)),
                lambda: l.lambda,
            }),
            Objective::Quadratic(q) => {
                let centers = rows.iter().flat_map(|&i| q.center(i).to_vec()).collect();
                Objective::Quadratic(Quadratic::new(q.dim, q.hessian.clone(), centers, q.mu, q.l))
            }
        }
    }
}

/// Plug-in estimate of `G²`: the largest `E_i ‖∇f_i(x)‖²` over `points`.
pub fn grad_norm_bound_estimate(obj: &Objective, points: &[Vec<f64>]) -> Result<f64, ObjectiveError> {
    if points.is_empty() {
        return Err(ObjectiveError::NoPoints);
    }
    points.iter().try_fold(0.0f64, |acc, p| {
        Ok(acc.max(obj.expected_sq_grad_norm(p)?))
    })
}

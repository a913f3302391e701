//! Seeded synthetic problems with a known optimum.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::objective::{sigmoid, Objective, Quadratic};
use crate::{dot, rng_for, sq_norm};

/// Gradient-norm target of the reference solve.
const SOLVE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub objective: Objective,
    pub optimum: Option<Vec<f64>>,
    pub optimum_value: Option<f64>,
}

impl SyntheticProblem {
    pub fn dataset(&self) -> Option<&Dataset> {
        match &self.objective {
            Objective::Logistic(l) => Some(&l.data),
            Objective::Quadratic(_) => None,
        }
    }
}

fn gaussian(rng: &mut crate::Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Logistic regression data with `λ = 1/n`.
///
/// Each entry is present with probability `density` (at least one per row),
/// rows are scaled to unit norm and labels are drawn from a planted logistic
/// model. The optimum is found by a damped Newton-CG solve run until the
/// gradient norm drops below 1e-10.
pub fn make_synthetic_logistic(n: usize, d: usize, density: f64, seed: u64) -> SyntheticProblem {
    assert!(n >= 1 && d >= 1, "n and d must be positive");
    assert!(density > 0.0 && density <= 1.0, "density must be in (0, 1]");
    let mut rng = rng_for(seed, 0);
    let planted: Vec<f64> = (0..d).map(|_| 2.0 * gaussian(&mut rng)).collect();

    let mut ds = Dataset::new(d);
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(d);
    for _ in 0..n {
        entries.clear();
        for j in 0..d {
            if density >= 1.0 || rng.random_bool(density) {
                entries.push((j, gaussian(&mut rng)));
            }
        }
        if entries.is_empty() {
            entries.push((rng.random_range(0..d), gaussian(&mut rng)));
        }
        let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for e in entries.iter_mut() {
                e.1 /= norm;
            }
        }
        let margin: f64 = entries.iter().map(|&(j, v)| v * planted[j]).sum();
        let label = if rng.random_bool(sigmoid(margin)) { 1.0 } else { -1.0 };
        ds.push_row(&entries, label).expect("generator emits valid rows");
    }

    let objective = Objective::logistic(Arc::new(ds), 1.0 / n as f64);
    let optimum = newton_cg(&objective);
    let optimum_value = objective.full_value(&optimum).expect("dimensions agree");
    SyntheticProblem {
        objective,
        optimum: Some(optimum),
        optimum_value: Some(optimum_value),
    }
}

// Hessian-vector product of the regularised logistic loss at the point whose
// per-row curvature weights are `weights`.
fn logistic_hess_vec(obj: &Objective, weights: &[f64], v: &[f64], out: &mut [f64]) {
    let Objective::Logistic(l) = obj else {
        unreachable!("logistic only")
    };
    let n = l.data.n() as f64;
    for (o, &vj) in out.iter_mut().zip(v) {
        *o = l.lambda * vj;
    }
    for (i, &w) in weights.iter().enumerate() {
        let row = l.data.row(i);
        let c = w * row.dot(v) / n;
        for (&j, &a) in row.indices.iter().zip(row.values) {
            out[j] += c * a;
        }
    }
}

fn newton_cg(obj: &Objective) -> Vec<f64> {
    let Objective::Logistic(l) = obj else {
        unreachable!("logistic only")
    };
    let d = obj.dim();
    let mut x = vec![0.0; d];
    let mut weights = vec![0.0; l.data.n()];
    let mut hp = vec![0.0; d];
    for _ in 0..200 {
        let g = obj.full_gradient(&x).expect("dimensions agree");
        let gnorm = sq_norm(&g).sqrt();
        if gnorm < SOLVE_TOL {
            break;
        }
        for (i, w) in weights.iter_mut().enumerate() {
            let s = sigmoid(l.data.label(i) * l.data.row(i).dot(&x));
            *w = s * (1.0 - s);
        }
        // Solve H p = -g by conjugate gradients.
        let tol = (0.5f64).min(gnorm.sqrt()) * gnorm;
        let mut p = vec![0.0; d];
        let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut dir = r.clone();
        let mut rr = sq_norm(&r);
        for _ in 0..(4 * d + 50) {
            if rr.sqrt() <= tol {
                break;
            }
            logistic_hess_vec(obj, &weights, &dir, &mut hp);
            let step = rr / dot(&dir, &hp);
            for j in 0..d {
                p[j] += step * dir[j];
                r[j] -= step * hp[j];
            }
            let rr_new = sq_norm(&r);
            let beta = rr_new / rr;
            rr = rr_new;
            for j in 0..d {
                dir[j] = r[j] + beta * dir[j];
            }
        }
        // Backtracking only while the decrease is visible above rounding.
        let mut t = 1.0;
        if gnorm > 1e-6 {
            let f0 = obj.full_value(&x).expect("dimensions agree");
            let slope = dot(&g, &p);
            loop {
                let trial: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + t * b).collect();
                if obj.full_value(&trial).expect("dimensions agree") <= f0 + 1e-4 * t * slope
                    || t < 1e-10
                {
                    break;
                }
                t *= 0.5;
            }
        }
        for (xj, pj) in x.iter_mut().zip(&p) {
            *xj += t * pj;
        }
    }
    x
}

/// Finite-sum quadratic with `n = d` components; see [`make_quadratic_sized`].
pub fn make_quadratic(d: usize, mu: f64, l: f64, seed: u64) -> SyntheticProblem {
    make_quadratic_sized(d, d, mu, l, seed)
}

/// `f(x) = (1/n) Σ ½ (x - c_i)ᵀ H (x - c_i)` where `H = Q diag(λ) Qᵀ` has a
/// random orthogonal `Q` and eigenvalues geometrically spaced from `mu` to
/// `l`. Centres are a planted point plus unit Gaussian noise, so the optimum
/// is their mean and every `f_i` is `l`-smooth.
pub fn make_quadratic_sized(n: usize, d: usize, mu: f64, l: f64, seed: u64) -> SyntheticProblem {
    assert!(n >= 1 && d >= 1, "n and d must be positive");
    assert!(mu > 0.0 && mu <= l, "need 0 < mu <= L");
    let mut rng = rng_for(seed, 0);

    // Columns of `q` (row-major, q[r * d + c]) become orthonormal.
    let mut q: Vec<f64> = (0..d * d).map(|_| gaussian(&mut rng)).collect();
    for c in 0..d {
        for _pass in 0..2 {
            for prev in 0..c {
                let proj: f64 = (0..d).map(|r| q[r * d + c] * q[r * d + prev]).sum();
                for r in 0..d {
                    q[r * d + c] -= proj * q[r * d + prev];
                }
            }
        }
        let norm = (0..d).map(|r| q[r * d + c].powi(2)).sum::<f64>().sqrt();
        for r in 0..d {
            q[r * d + c] /= norm;
        }
    }
    let eig: Vec<f64> = (0..d)
        .map(|j| {
            if d == 1 {
                mu
            } else {
                mu * (l / mu).powf(j as f64 / (d - 1) as f64)
            }
        })
        .collect();
    let mut hessian = vec![0.0; d * d];
    for r in 0..d {
        for c in r..d {
            let v: f64 = (0..d).map(|j| q[r * d + j] * eig[j] * q[c * d + j]).sum();
            hessian[r * d + c] = v;
            hessian[c * d + r] = v;
        }
    }

    let planted: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
    let mut centers = Vec::with_capacity(n * d);
    for _ in 0..n {
        centers.extend(planted.iter().map(|p| p + gaussian(&mut rng)));
    }
    let mut optimum = vec![0.0; d];
    for i in 0..n {
        for (o, c) in optimum.iter_mut().zip(&centers[i * d..(i + 1) * d]) {
            *o += c;
        }
    }
    for o in optimum.iter_mut() {
        *o /= n as f64;
    }

    let objective = Objective::Quadratic(Quadratic::new(d, hessian, centers, mu, l));
    let optimum_value = objective.full_value(&optimum).expect("dimensions agree");
    SyntheticProblem {
        objective,
        optimum: Some(optimum),
        optimum_value: Some(optimum_value),
    }
}

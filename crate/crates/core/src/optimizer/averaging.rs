/// How the reported estimate is formed from the iterates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Averaging {
    /// `x̄_T = Σ_{t<T} w_t x_t / S_T` with `w_t = (a + t)²`.
    WeightedQuadratic { a: f64 },
    LastIterate,
}

/// `S_T = Σ_{t<T} (a + t)²`, exact in integers when `a` is integral.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSum {
    Exact { a: u64, sum: u128 },
    Float { a: f64, sum: f64 },
}

impl WeightSum {
    pub fn new(a: f64) -> Self {
        if a >= 0.0 && a.fract() == 0.0 && a < 1e15 {
            WeightSum::Exact { a: a as u64, sum: 0 }
        } else {
            WeightSum::Float { a, sum: 0.0 }
        }
    }

    /// Adds `w_t` and returns it.
    pub fn push(&mut self, t: u64) -> f64 {
        match self {
            WeightSum::Exact { a, sum } => {
                let base = (*a + t) as u128;
                let w = base * base;
                *sum += w;
                w as f64
            }
            WeightSum::Float { a, sum } => {
                let w = (*a + t as f64).powi(2);
                *sum += w;
                w
            }
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            WeightSum::Exact { sum, .. } => *sum as f64,
            WeightSum::Float { sum, .. } => *sum,
        }
    }

    pub fn exact(&self) -> Option<u128> {
        match self {
            WeightSum::Exact { sum, .. } => Some(*sum),
            WeightSum::Float { .. } => None,
        }
    }
}

/// Closed form `S_T = T (2T² + 6aT - 3T + 6a² - 6a + 1) / 6` for integer `a ≥ 1`.
pub fn weight_sum_closed_form(t: u64, a: u64) -> u128 {
    let (t, a) = (t as i128, a as i128);
    let inner = 2 * t * t + 6 * a * t - 3 * t + 6 * a * a - 6 * a + 1;
    (t * inner / 6) as u128
}

/// Running `Σ w_t x_t` together with `S_T`.
#[derive(Debug, Clone)]
pub struct Averager {
    accum: Vec<f64>,
    weights: WeightSum,
}

impl Averager {
    pub fn new(dim: usize, a: f64) -> Self {
        Averager {
            accum: vec![0.0; dim],
            weights: WeightSum::new(a),
        }
    }

    pub fn push(&mut self, t: u64, x: &[f64]) {
        let w = self.weights.push(t);
        for (acc, &xi) in self.accum.iter_mut().zip(x) {
            *acc += w * xi;
        }
    }

    pub fn weight_sum(&self) -> &WeightSum {
        &self.weights
    }

    /// `Σ w_t x_t / S_T`; `None` before the first push.
    pub fn average(&self) -> Option<Vec<f64>> {
        let s = self.weights.value();
        (s > 0.0).then(|| self.accum.iter().map(|v| v / s).collect())
    }
}

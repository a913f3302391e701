//! Error-compensated sparsified stochastic gradient descent.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`] holds row-sparse datasets, LIBSVM ingestion and synthetic
//!   problem generators.
//! * [`compression`] implements the k-contraction operators (top-k, rand-k,
//!   rand-p, QSGD, identity) and contraction estimators.
//! * [`objective`] provides the finite-sum objectives and their stochastic
//!   gradient oracle.
//! * [`optimizer`] is the sequential Mem-SGD loop with its stepsize
//!   schedules, weighted averaging and runtime diagnostics.
//! * [`parallel`] runs several workers with private memories against one
//!   lock-free shared parameter vector.
//! * [`comm`] models the number of bits each update costs on the wire.
//! * [`harness`] is the experiment layer behind the `memsgd` binary.

pub mod comm;
pub mod compression;
pub mod data;
pub mod harness;
pub mod objective;
pub mod optimizer;
pub mod parallel;

pub use compression::{CompressorSpec, SparseUpdate};
pub use data::{Dataset, SyntheticProblem};
pub use objective::Objective;
pub use optimizer::{Averaging, MemSgd, RunMetrics, StepSchedule};

/// Seeded random stream used everywhere randomness is consumed.
///
/// Worker `w` of a parallel run uses stream `w` of the same seed, so worker 0
/// replays the sequential run exactly.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the random stream for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    /// Mean and standard error of `samples`; the error is 0 for fewer than two samples.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std_err = if samples.len() < 2 {
            0.0
        } else {
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Estimate { mean, std_err }
    }
}

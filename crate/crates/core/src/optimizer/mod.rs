//! Sequential SGD with memory (error feedback).
//!
//! One step, with `i` drawn uniformly and `η = η_t`:
//!
//! ```text
//! v       = m + η ∇f_i(x)
//! g       = comp(v)
//! x      <- x - g          (only the coordinates of g are written)
//! m      <- v - g
//! ```
//!
//! The memory collects everything compression has held back so far and
//! feeds it into later updates. With the identity compressor `m` stays zero
//! and the loop is plain SGD.

mod averaging;
mod diagnostics;
mod schedule;

pub use averaging::{weight_sum_closed_form, Averager, Averaging, WeightSum};
pub use diagnostics::{
    memory_bound, memory_bound_margin, variance_exact, variance_probe, virtual_gap, ReplayEntry,
    VarianceProbe,
};
pub use schedule::{rho, shift_admissible, shift_for, StepSchedule};

use std::time::Instant;

use rand::Rng as _;
use serde::Serialize;
use thiserror::Error;

use crate::comm::{BitTracker, CostModel};
use crate::compression::{CompressionError, CompressorSpec, SparseUpdate};
use crate::objective::{Objective, ObjectiveError};
use crate::{rng_for, sq_norm, Rng};

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Compression(#[from] CompressionError),
    #[error("alpha = {0} must exceed 4")]
    AlphaTooSmall(f64),
    #[error("invalid schedule {0}")]
    Schedule(String),
    #[error("the memory bound needs a schedule of the form 8/(mu(a+t)), got {0}")]
    UnsupportedSchedule(String),
    #[error("replay log has {log} entries but the state is at step {t}")]
    ReplayLength { log: usize, t: u64 },
    #[error("replay logging is disabled for this state")]
    ReplayDisabled,
    #[error("steps must be at least 1")]
    NoSteps,
    #[error("invalid variance probe: {0}")]
    Probe(String),
}

/// What one step did.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub index: usize,
    pub eta: f64,
    pub update: SparseUpdate,
}

/// Iterate, memory, step counter, averaging accumulator and random stream.
#[derive(Debug, Clone)]
pub struct MemSgd {
    x0: Vec<f64>,
    x: Vec<f64>,
    m: Vec<f64>,
    t: u64,
    averager: Option<Averager>,
    rng: Rng,
    scratch: Vec<f64>,
    grad: Vec<f64>,
    replay: Option<Vec<ReplayEntry>>,
}

impl MemSgd {
    /// Starts at `x0` with zero memory.
    pub fn new(x0: Vec<f64>, averaging: Averaging, seed: u64) -> Self {
        Self::with_rng(x0, averaging, rng_for(seed, 0))
    }

    pub fn with_rng(x0: Vec<f64>, averaging: Averaging, rng: Rng) -> Self {
        let d = x0.len();
        let averager = match averaging {
            Averaging::WeightedQuadratic { a } => Some(Averager::new(d, a)),
            Averaging::LastIterate => None,
        };
        MemSgd {
            x: x0.clone(),
            x0,
            m: vec![0.0; d],
            t: 0,
            averager,
            rng,
            scratch: vec![0.0; d],
            grad: vec![0.0; d],
            replay: None,
        }
    }

    /// Keep a replay log of `(i_t, η_t, g_t)` for [`virtual_gap`].
    pub fn record_replay(mut self) -> Self {
        self.replay = Some(Vec::new());
        self
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn memory(&self) -> &[f64] {
        &self.m
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn replay(&self) -> Option<&[ReplayEntry]> {
        self.replay.as_deref()
    }

    pub fn averager(&self) -> Option<&Averager> {
        self.averager.as_ref()
    }

    /// The reported estimate: the weighted average when averaging is on and
    /// at least one step was taken, the current iterate otherwise.
    pub fn estimate(&self) -> Vec<f64> {
        self.averager
            .as_ref()
            .and_then(|a| a.average())
            .unwrap_or_else(|| self.x.clone())
    }

    pub fn step(
        &mut self,
        obj: &Objective,
        schedule: &StepSchedule,
        comp: &CompressorSpec,
    ) -> Result<StepInfo, OptimError> {
        let d = self.x.len();
        if obj.dim() != d {
            return Err(ObjectiveError::Dimension {
                expected: obj.dim(),
                got: d,
            }
            .into());
        }
        if let Some(avg) = self.averager.as_mut() {
            avg.push(self.t, &self.x);
        }
        let index = self.rng.random_range(0..obj.n());
        let eta = schedule.eta(self.t);
        obj.component_grad_into(&self.x, index, &mut self.grad);
        for ((v, &m), &g) in self.scratch.iter_mut().zip(&self.m).zip(&self.grad) {
            *v = m + eta * g;
        }
        let update = comp.compress(&self.scratch, &mut self.rng)?;
        // m <- v - g, written only where g is nonzero
        std::mem::swap(&mut self.m, &mut self.scratch);
        for (j, val) in update.iter() {
            self.x[j] -= val;
            self.m[j] -= val;
        }
        if let Some(log) = self.replay.as_mut() {
            log.push(ReplayEntry {
                index,
                eta,
                update: update.clone(),
            });
        }
        self.t += 1;
        Ok(StepInfo { index, eta, update })
    }
}

/// One row of run output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointRecord {
    pub iter: u64,
    pub objective: f64,
    pub subopt: Option<f64>,
    pub mem_sq_norm: f64,
    pub bits_cum: f64,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub checkpoints: Vec<CheckpointRecord>,
    /// `f` at the last iterate.
    pub final_objective: f64,
    /// `f` at the reported estimate (weighted average or last iterate).
    pub output_objective: f64,
    pub total_bits: f64,
    pub steps: u64,
    pub elapsed_ms: f64,
}

/// Everything [`run`] needs besides the objective.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub schedule: StepSchedule,
    pub compressor: CompressorSpec,
    pub steps: u64,
    pub averaging: Averaging,
    pub seed: u64,
    /// Iteration counts (after that many steps) at which a record is taken.
    pub checkpoints: Vec<u64>,
    pub cost_model: CostModel,
    /// Starting point; zero when absent.
    pub x0: Option<Vec<f64>>,
    pub optimum_value: Option<f64>,
    /// Record wall-clock time; when off the `ms` column is 0 so output is reproducible.
    pub timing: bool,
}

impl RunSpec {
    pub fn new(schedule: StepSchedule, compressor: CompressorSpec, steps: u64, seed: u64) -> Self {
        RunSpec {
            schedule,
            compressor,
            steps,
            averaging: Averaging::LastIterate,
            seed,
            checkpoints: vec![steps],
            cost_model: CostModel::default(),
            x0: None,
            optimum_value: None,
            timing: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub x_final: Vec<f64>,
    pub x_avg: Vec<f64>,
    pub metrics: RunMetrics,
    pub state: MemSgd,
}

/// `count` checkpoints per `n` iterations (one epoch), plus the final step.
pub fn epoch_checkpoints(n: usize, per_epoch: usize, steps: u64) -> Vec<u64> {
    let interval = ((n as u64).div_ceil(per_epoch.max(1) as u64)).max(1);
    let mut out: Vec<u64> = (1..).map(|j| j * interval).take_while(|&t| t <= steps).collect();
    if out.last() != Some(&steps) {
        out.push(steps);
    }
    out
}

/// Runs `spec.steps` Mem-SGD steps and records metrics at each checkpoint.
pub fn run(obj: &Objective, spec: &RunSpec) -> Result<RunOutcome, OptimError> {
    if spec.steps == 0 {
        return Err(OptimError::NoSteps);
    }
    spec.schedule.validate()?;
    spec.compressor.validate(obj.dim())?;
    let x0 = spec.x0.clone().unwrap_or_else(|| vec![0.0; obj.dim()]);
    let mut state = MemSgd::new(x0, spec.averaging, spec.seed);
    let mut checkpoints: Vec<u64> = spec
        .checkpoints
        .iter()
        .copied()
        .filter(|&c| c >= 1 && c <= spec.steps)
        .collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();

    let start = Instant::now();
    let mut bits = BitTracker::default();
    let mut records = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();
    while state.t() < spec.steps {
        let info = state.step(obj, &spec.schedule, &spec.compressor)?;
        bits.add(spec.cost_model.bits_for_update(&spec.compressor, &info.update));
        if next.peek() == Some(&&state.t()) {
            next.next();
            let objective = obj.full_value(&state.estimate())?;
            records.push(CheckpointRecord {
                iter: state.t(),
                objective,
                subopt: spec.optimum_value.map(|f| objective - f),
                mem_sq_norm: sq_norm(state.memory()),
                bits_cum: bits.total(),
                ms: if spec.timing {
                    start.elapsed().as_secs_f64() * 1e3
                } else {
                    0.0
                },
            });
        }
    }
    let x_final = state.x().to_vec();
    let x_avg = state.estimate();
    let metrics = RunMetrics {
        checkpoints: records,
        final_objective: obj.full_value(&x_final)?,
        output_objective: obj.full_value(&x_avg)?,
        total_bits: bits.total(),
        steps: state.t(),
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(RunOutcome {
        x_final,
        x_avg,
        metrics,
        state,
    })
}

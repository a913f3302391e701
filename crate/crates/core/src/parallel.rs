//! Several Mem-SGD workers sharing one parameter vector without locks.
//!
//! Each worker owns its memory and random stream and runs the sequential
//! step against a snapshot of the shared vector, then subtracts its sparse
//! update coordinate by coordinate with atomic compare-and-swap. Single
//! coordinates never tear; the vector as a whole may be read while another
//! worker is halfway through its update.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Barrier;
use std::time::Instant;

use rand::Rng as _;
use serde::Serialize;
use thiserror::Error;

use crate::comm::CostModel;
use crate::compression::{CompressionError, CompressorSpec};
use crate::objective::{Objective, ObjectiveError};
use crate::optimizer::StepSchedule;
use crate::{rng_for, sq_norm};

#[derive(Debug, Error, PartialEq)]
pub enum ParallelError {
    #[error("need at least one worker")]
    NoWorkers,
    #[error("{requested} workers requested but only {available} hardware threads; enable oversubscription to allow this")]
    TooManyWorkers { requested: usize, available: usize },
    #[error("staleness needs a run with tracing enabled")]
    TracingDisabled,
    #[error(transparent)]
    Compression(#[from] CompressionError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

#[derive(Debug, Clone)]
pub struct ParallelConfig {
    pub workers: usize,
    pub steps_per_worker: u64,
    pub schedule: StepSchedule,
    pub compressor: CompressorSpec,
    pub base_seed: u64,
    /// Record per-step staleness.
    pub trace: bool,
    /// Allow more workers than hardware threads.
    pub oversubscribe: bool,
    /// Yield the thread between reading `x` and writing the update, which
    /// forces interleaving even on a single core.
    pub yield_between_read_and_write: bool,
    pub cost_model: CostModel,
}

impl ParallelConfig {
    pub fn new(
        workers: usize,
        steps_per_worker: u64,
        schedule: StepSchedule,
        compressor: CompressorSpec,
        base_seed: u64,
    ) -> Self {
        ParallelConfig {
            workers,
            steps_per_worker,
            schedule,
            compressor,
            base_seed,
            trace: false,
            oversubscribe: false,
            yield_between_read_and_write: false,
            cost_model: CostModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkerReport {
    pub worker: usize,
    pub steps: u64,
    /// Coordinates this worker wrote to the shared vector.
    pub writes: u64,
    pub bits: f64,
    pub final_mem_sq_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub worker: usize,
    pub t: u64,
    /// Coordinates changed by other workers between this step's read and write.
    pub staleness: u64,
}

pub type Trace = Vec<TraceRecord>;

#[derive(Debug, Clone)]
pub struct ParallelOutcome {
    pub x_final: Vec<f64>,
    pub final_objective: f64,
    pub workers: Vec<WorkerReport>,
    pub total_writes: u64,
    pub trace: Option<Trace>,
    pub elapsed_ms: f64,
}

struct SharedVector {
    coords: Vec<AtomicU64>,
    versions: Vec<AtomicU64>,
}

impl SharedVector {
    fn zeros(d: usize) -> Self {
        SharedVector {
            coords: (0..d).map(|_| AtomicU64::new(0f64.to_bits())).collect(),
            versions: (0..d).map(|_| AtomicU64::new(0)).collect(),
        }
    }

    fn read_into(&self, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.coords) {
            *o = f64::from_bits(c.load(Ordering::Relaxed));
        }
    }

    fn subtract(&self, j: usize, val: f64) {
        let _ = self.coords[j].fetch_update(Ordering::Relaxed, Ordering::Relaxed, |bits| {
            Some((f64::from_bits(bits) - val).to_bits())
        });
        self.versions[j].fetch_add(1, Ordering::Relaxed);
    }

    fn versions_into(&self, out: &mut [u64]) {
        for (o, v) in out.iter_mut().zip(&self.versions) {
            *o = v.load(Ordering::Relaxed);
        }
    }

    fn changed_since(&self, seen: &[u64]) -> u64 {
        seen.iter()
            .zip(&self.versions)
            .filter(|(s, v)| v.load(Ordering::Relaxed) != **s)
            .count() as u64
    }

    fn into_vec(self) -> Vec<f64> {
        self.coords.into_iter().map(|c| f64::from_bits(c.into_inner())).collect()
    }
}

fn available_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs `cfg.workers` workers for `cfg.steps_per_worker` steps each from `x = 0`.
///
/// Worker `w` draws from stream `(base_seed, w)` and uses its own step
/// counter for the stepsize. The call returns when every worker is done.
pub fn run_parallel(obj: &Objective, cfg: &ParallelConfig) -> Result<ParallelOutcome, ParallelError> {
    if cfg.workers == 0 {
        return Err(ParallelError::NoWorkers);
    }
    let available = available_threads();
    if cfg.workers > available && !cfg.oversubscribe {
        return Err(ParallelError::TooManyWorkers {
            requested: cfg.workers,
            available,
        });
    }
    let d = obj.dim();
    cfg.compressor.validate(d)?;
    cfg.schedule
        .validate()
        .map_err(|e| ParallelError::Schedule(e.to_string()))?;

    let shared = SharedVector::zeros(d);
    let barrier = Barrier::new(cfg.workers);
    let start = Instant::now();
    let results: Vec<Result<(WorkerReport, Trace), ParallelError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.workers)
            .map(|w| {
                let (shared, barrier) = (&shared, &barrier);
                scope.spawn(move || worker_loop(obj, cfg, w, shared, barrier))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;

    let mut workers = Vec::with_capacity(cfg.workers);
    let mut trace = cfg.trace.then(Vec::new);
    for r in results {
        let (report, records) = r?;
        workers.push(report);
        if let Some(t) = trace.as_mut() {
            t.extend(records);
        }
    }
    let x_final = shared.into_vec();
    Ok(ParallelOutcome {
        final_objective: obj.full_value(&x_final)?,
        x_final,
        total_writes: workers.iter().map(|w| w.writes).sum(),
        workers,
        trace,
        elapsed_ms,
    })
}

fn worker_loop(
    obj: &Objective,
    cfg: &ParallelConfig,
    worker: usize,
    shared: &SharedVector,
    barrier: &Barrier,
) -> Result<(WorkerReport, Trace), ParallelError> {
    let d = obj.dim();
    let mut rng = rng_for(cfg.base_seed, worker as u64);
    let mut x = vec![0.0; d];
    let mut m = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut seen = vec![0u64; if cfg.trace { d } else { 0 }];
    let mut trace = Vec::new();
    let mut report = WorkerReport {
        worker,
        steps: 0,
        writes: 0,
        bits: 0.0,
        final_mem_sq_norm: 0.0,
    };
    barrier.wait();
    for t in 0..cfg.steps_per_worker {
        let i = rng.random_range(0..obj.n());
        let eta = cfg.schedule.eta(t);
        if cfg.trace {
            shared.versions_into(&mut seen);
        }
        shared.read_into(&mut x);
        obj.component_grad_into(&x, i, &mut g);
        for ((vj, &mj), &gj) in v.iter_mut().zip(&m).zip(&g) {
            *vj = mj + eta * gj;
        }
        let update = cfg.compressor.compress(&v, &mut rng)?;
        if cfg.yield_between_read_and_write {
            std::thread::yield_now();
        }
        if cfg.trace {
            trace.push(TraceRecord {
                worker,
                t,
                staleness: shared.changed_since(&seen),
            });
        }
        std::mem::swap(&mut m, &mut v);
        for (j, val) in update.iter() {
            shared.subtract(j, val);
            m[j] -= val;
        }
        report.steps += 1;
        report.writes += update.nnz() as u64;
        report.bits += cfg.cost_model.bits_for_update(&cfg.compressor, &update);
    }
    report.final_mem_sq_norm = sq_norm(&m);
    Ok((report, trace))
}

/// Counts of traced steps by staleness: `counts[s]` steps saw `s` foreign writes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StalenessHistogram {
    pub counts: Vec<u64>,
}

impl StalenessHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let weighted: u64 = self.counts.iter().enumerate().map(|(s, c)| s as u64 * c).sum();
        weighted as f64 / total as f64
    }
}

pub fn staleness_probe(trace: Option<&Trace>) -> Result<StalenessHistogram, ParallelError> {
    let trace = trace.ok_or(ParallelError::TracingDisabled)?;
    let max = trace.iter().map(|r| r.staleness).max().unwrap_or(0) as usize;
    let mut counts = vec![0u64; max + 1];
    for r in trace {
        counts[r.staleness as usize] += 1;
    }
    Ok(StalenessHistogram { counts })
}

/// Writes the trace as CSV with header `worker,t,staleness`.
pub fn write_trace_csv<W: Write>(trace: &Trace, mut out: W) -> std::io::Result<()> {
    writeln!(out, "worker,t,staleness")?;
    for r in trace {
        writeln!(out, "{},{},{}", r.worker, r.t, r.staleness)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic_logistic;
    use crate::optimizer::{run, RunSpec};

    fn cfg(workers: usize, steps: u64, comp: CompressorSpec) -> ParallelConfig {
        let mut c = ParallelConfig::new(workers, steps, StepSchedule::InverseT, comp, 11);
        c.oversubscribe = true;
        c
    }

    #[test]
    fn single_worker_matches_sequential_run() {
        let p = make_synthetic_logistic(200, 20, 0.5, 3);
        for comp in [CompressorSpec::TopK { k: 1 }, CompressorSpec::RandK { k: 2 }] {
            let par = run_parallel(&p.objective, &cfg(1, 2000, comp)).unwrap();
            let seq = run(&p.objective, &RunSpec::new(StepSchedule::InverseT, comp, 2000, 11)).unwrap();
            assert_eq!(par.x_final, seq.x_final);
            assert!((par.final_objective - seq.metrics.final_objective).abs() <= 1e-12);
        }
    }

    #[test]
    fn writes_bounded_by_k_per_step() {
        let p = make_synthetic_logistic(200, 20, 0.5, 3);
        for (workers, k) in [(2, 1), (4, 3)] {
            let out = run_parallel(&p.objective, &cfg(workers, 500, CompressorSpec::TopK { k })).unwrap();
            assert!(out.total_writes <= workers as u64 * 500 * k as u64);
            assert_eq!(out.workers.len(), workers);
            assert!(out.workers.iter().all(|w| w.steps == 500));
        }
    }

    #[test]
    fn staleness_accounting() {
        let p = make_synthetic_logistic(100, 10, 1.0, 1);
        let mut c = cfg(1, 300, CompressorSpec::TopK { k: 1 });
        assert_eq!(
            staleness_probe(run_parallel(&p.objective, &c).unwrap().trace.as_ref()),
            Err(ParallelError::TracingDisabled)
        );
        c.trace = true;
        let hist = staleness_probe(run_parallel(&p.objective, &c).unwrap().trace.as_ref()).unwrap();
        assert_eq!(hist.counts, vec![300]);

        c.workers = 3;
        c.yield_between_read_and_write = true;
        let out = run_parallel(&p.objective, &c).unwrap();
        let hist = staleness_probe(out.trace.as_ref()).unwrap();
        assert_eq!(hist.total(), 900);
    }

    #[test]
    fn dense_updates_are_staler_than_top1() {
        let p = make_synthetic_logistic(100, 10, 1.0, 1);
        let mean = |comp| {
            let mut c = cfg(2, 400, comp);
            c.trace = true;
            c.yield_between_read_and_write = true;
            staleness_probe(run_parallel(&p.objective, &c).unwrap().trace.as_ref())
                .unwrap()
                .mean()
        };
        let (dense, sparse) = (mean(CompressorSpec::Identity), mean(CompressorSpec::TopK { k: 1 }));
        assert!(dense > sparse, "{dense} vs {sparse}");
    }

    #[test]
    fn worker_limit() {
        let p = make_synthetic_logistic(10, 3, 1.0, 1);
        let mut c = cfg(0, 1, CompressorSpec::Identity);
        assert_eq!(run_parallel(&p.objective, &c).unwrap_err(), ParallelError::NoWorkers);
        c.workers = available_threads() + 1;
        c.oversubscribe = false;
        assert!(matches!(
            run_parallel(&p.objective, &c),
            Err(ParallelError::TooManyWorkers { .. })
        ));
    }

    #[test]
    fn trace_csv_format() {
        let trace = vec![TraceRecord {
            worker: 1,
            t: 4,
            staleness: 2,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "worker,t,staleness\n1,4,2\n");
    }
}

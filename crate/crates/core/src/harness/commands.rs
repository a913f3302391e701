use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::Serialize;

use super::config::{ProblemSpec, RunConfig};
use super::metrics::{self, Summary, SUMMARY_SCHEMA};
use super::{HarnessError, Problem};
use crate::data::{read_libsvm_file, ParseOptions};
use crate::optimizer::{
    epoch_checkpoints, run, variance_exact, variance_probe, CheckpointRecord, RunSpec, StepSchedule, VarianceProbe,
};
use crate::parallel::{run_parallel, staleness_probe, write_trace_csv, ParallelConfig, Trace};
use crate::{rng_for, Estimate};

/// Stream id reserved for picking the tuning subsample.
const SUBSAMPLE_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone)]
pub struct RunReport {
    pub label: String,
    pub rows: Vec<CheckpointRecord>,
    pub summary: Summary,
    pub trace: Option<Trace>,
}

/// Runs `cfg` on an already built problem.
pub fn execute(cfg: &RunConfig, problem: &Problem) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let obj = &problem.objective;
    let d = obj.dim();
    cfg.compressor.validate(d)?;
    let k_eff = cfg.compressor.k_eff(d);
    let schedule = cfg.schedule.resolve(obj.mu(), d, k_eff);
    schedule.validate()?;
    let label = cfg.label();

    let (rows, summary, trace) = if cfg.workers == 1 {
        let mut spec = RunSpec::new(schedule, cfg.compressor, cfg.steps, cfg.seed);
        spec.averaging = cfg.averaging_for(schedule.shift(), d, k_eff);
        spec.checkpoints = epoch_checkpoints(obj.n(), cfg.checkpoints_per_epoch, cfg.steps);
        spec.optimum_value = problem.optimum_value;
        spec.timing = cfg.timing;
        let out = run(obj, &spec)?;
        let m = out.metrics;
        let summary = Summary {
            schema: SUMMARY_SCHEMA,
            label: label.clone(),
            seed: cfg.seed,
            mode: "sequential",
            problem: problem.summary.clone(),
            compressor: cfg.compressor.to_string(),
            schedule: schedule.to_string(),
            steps: m.steps,
            final_objective: m.final_objective,
            output_objective: m.output_objective,
            output_subopt: problem.optimum_value.map(|f| m.output_objective - f),
            total_bits: m.total_bits,
            elapsed_ms: m.elapsed_ms,
            workers: None,
            mean_staleness: None,
            config: cfg.to_ini(),
        };
        (m.checkpoints, summary, None)
    } else {
        let mut pc = ParallelConfig::new(
            cfg.workers,
            cfg.steps / cfg.workers as u64,
            schedule,
            cfg.compressor,
            cfg.seed,
        );
        pc.trace = cfg.trace;
        pc.oversubscribe = cfg.oversubscribe;
        pc.yield_between_read_and_write = cfg.yield_stress;
        let out = run_parallel(obj, &pc)?;
        let bits: f64 = out.workers.iter().map(|w| w.bits).sum();
        let row = CheckpointRecord {
            iter: cfg.steps,
            objective: out.final_objective,
            subopt: problem.optimum_value.map(|f| out.final_objective - f),
            mem_sq_norm: out.workers.iter().map(|w| w.final_mem_sq_norm).sum(),
            bits_cum: bits,
            ms: if cfg.timing { out.elapsed_ms } else { 0.0 },
        };
        let mean_staleness = match &out.trace {
            Some(t) => Some(staleness_probe(Some(t))?.mean()),
            None => None,
        };
        let summary = Summary {
            schema: SUMMARY_SCHEMA,
            label: label.clone(),
            seed: cfg.seed,
            mode: "parallel",
            problem: problem.summary.clone(),
            compressor: cfg.compressor.to_string(),
            schedule: schedule.to_string(),
            steps: cfg.steps,
            final_objective: out.final_objective,
            output_objective: out.final_objective,
            output_subopt: row.subopt,
            total_bits: bits,
            elapsed_ms: out.elapsed_ms,
            workers: Some(out.workers),
            mean_staleness,
            config: cfg.to_ini(),
        };
        (vec![row], summary, out.trace)
    };
    Ok(RunReport {
        label,
        rows,
        summary,
        trace,
    })
}

pub fn cmd_run(cfg: &RunConfig) -> Result<RunReport, HarnessError> {
    let problem = cfg.problem.build()?;
    let report = execute(cfg, &problem)?;
    if let Some(prefix) = &cfg.output {
        write_report(prefix, std::slice::from_ref(&report))?;
    }
    Ok(report)
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| HarnessError::io(path, e))
}

/// Writes `<prefix>.csv` with every report's rows, `<prefix>.json` with the
/// summaries (an object for one report, an array otherwise), and
/// `<prefix>.trace.csv` when a single report carries a trace.
pub fn write_report(prefix: &Path, reports: &[RunReport]) -> Result<(), HarnessError> {
    let csv_path = with_ext(prefix, ".csv");
    let mut csv = create(&csv_path)?;
    let io = |e| HarnessError::io(&csv_path, e);
    metrics::write_csv_header(&mut csv).map_err(io)?;
    for r in reports {
        metrics::write_csv_rows(&mut csv, &r.label, &r.rows).map_err(io)?;
    }
    csv.flush().map_err(io)?;

    let json_path = with_ext(prefix, ".json");
    let mut json = create(&json_path)?;
    let summaries: Vec<&Summary> = reports.iter().map(|r| &r.summary).collect();
    let res = if summaries.len() == 1 {
        serde_json::to_writer_pretty(&mut json, summaries[0])
    } else {
        serde_json::to_writer_pretty(&mut json, &summaries)
    };
    res.map_err(|e| HarnessError::io(&json_path, e.into()))?;
    writeln!(json).and_then(|_| json.flush()).map_err(|e| HarnessError::io(&json_path, e))?;

    if let [RunReport { trace: Some(t), .. }] = reports {
        let trace_path = with_ext(prefix, ".trace.csv");
        let mut out = create(&trace_path)?;
        write_trace_csv(t, &mut out)
            .and_then(|_| out.flush())
            .map_err(|e| HarnessError::io(&trace_path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub runs: Vec<RunReport>,
}

impl CompareReport {
    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        metrics::write_csv_header(&mut buf).expect("writing to memory");
        for r in &self.runs {
            metrics::write_csv_rows(&mut buf, &r.label, &r.rows).expect("writing to memory");
        }
        String::from_utf8(buf).expect("csv is ascii")
    }
}

/// Runs every config on their common problem and merges the results.
pub fn cmd_compare(configs: &[RunConfig], output: Option<&Path>) -> Result<CompareReport, HarnessError> {
    if configs.len() < 2 {
        return Err(HarnessError::TooFewConfigs(configs.len()));
    }
    let first = &configs[0].problem;
    if let Some(other) = configs.iter().map(|c| &c.problem).find(|p| *p != first) {
        return Err(HarnessError::MismatchedProblems {
            first: describe(first),
            other: describe(other),
        });
    }
    let mut seen = HashSet::new();
    for c in configs {
        c.validate()?;
        if !seen.insert(c.label()) {
            return Err(HarnessError::DuplicateLabel(c.label()));
        }
    }
    let problem = first.build()?;
    let runs = configs
        .iter()
        .map(|c| execute(c, &problem))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(prefix) = output {
        write_report(prefix, &runs)?;
    }
    Ok(CompareReport { runs })
}

fn describe(p: &ProblemSpec) -> String {
    match p {
        ProblemSpec::Libsvm { path, .. } => format!("libsvm {}", path.display()),
        ProblemSpec::SyntheticLogistic { n, d, density, seed } => {
            format!("synthetic_logistic n={n} d={d} density={density} seed={seed}")
        }
        ProblemSpec::Quadratic { n, d, mu, l, seed } => format!("quadratic n={n} d={d} mu={mu} l={l} seed={seed}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneRow {
    pub gamma0: f64,
    pub final_objective: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneReport {
    pub best_gamma0: f64,
    pub subsample_n: usize,
    pub rows: Vec<TuneRow>,
}

impl TuneReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("gamma0,final_objective,diverged\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.gamma0, r.final_objective, r.diverged));
        }
        s
    }
}

/// Grid search over `γ₀` for `η_t = γ₀/(1 + γ₀ λ t)` on a random subsample.
///
/// Each value runs `cfg.steps` steps with the configured compressor and
/// averaging on `fraction · n` components; the value with the lowest final
/// objective wins. Non-finite final objectives count as diverged.
pub fn cmd_tune_gamma0(cfg: &RunConfig, grid: &[f64], fraction: f64) -> Result<TuneReport, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    if let Some(g) = grid.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(HarnessError::Usage(format!("gamma0 must be positive, got {g}")));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(HarnessError::Usage(format!("subsample fraction must be in (0, 1], got {fraction}")));
    }
    cfg.validate()?;
    let full = cfg.problem.build()?;
    let n = full.objective.n();
    let m = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut rows: Vec<usize> = sample(&mut rng_for(cfg.seed, SUBSAMPLE_STREAM), n, m).into_vec();
    rows.sort_unstable();
    let obj = full.objective.subsample(&rows);
    let d = obj.dim();
    cfg.compressor.validate(d)?;
    let k_eff = cfg.compressor.k_eff(d);

    let mut table = Vec::with_capacity(grid.len());
    for &gamma0 in grid {
        let schedule = StepSchedule::Bottou {
            gamma0,
            lambda: obj.mu(),
        };
        let mut spec = RunSpec::new(schedule, cfg.compressor, cfg.steps, cfg.seed);
        spec.averaging = cfg.averaging_for(None, d, k_eff);
        let value = run(&obj, &spec)?.metrics.output_objective;
        table.push(TuneRow {
            gamma0,
            final_objective: value,
            diverged: !value.is_finite(),
        });
    }
    let best = table
        .iter()
        .filter(|r| !r.diverged)
        .min_by(|a, b| a.final_objective.total_cmp(&b.final_objective))
        .ok_or_else(|| HarnessError::AllDiverged(grid.to_vec()))?;
    Ok(TuneReport {
        best_gamma0: best.gamma0,
        subsample_n: m,
        rows: table,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetInfo {
    pub n: usize,
    pub d: usize,
    pub nnz: usize,
    pub density: f64,
    pub positive: usize,
    pub negative: usize,
    pub max_row_sq_norm: f64,
}

pub fn dataset_info(path: &Path, zero_one_labels: bool) -> Result<DatasetInfo, HarnessError> {
    let ds = read_libsvm_file(
        path,
        &ParseOptions {
            zero_one_labels,
            dim: None,
        },
    )?;
    let positive = ds.labels().iter().filter(|&&b| b > 0.0).count();
    Ok(DatasetInfo {
        n: ds.n(),
        d: ds.dim(),
        nnz: ds.nnz(),
        density: ds.density(),
        positive,
        negative: ds.n() - positive,
        max_row_sq_norm: ds.max_row_sq_norm(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub k: usize,
    pub d: usize,
    pub batch: usize,
    pub trials: usize,
    pub single: Estimate,
    pub batched: Estimate,
    /// Exact single-sample variance when enumeration is small enough.
    pub single_exact: Option<f64>,
}

/// Variance of the rescaled rand-k estimator at `x = 0`, single sample versus
/// a batch of `batch` distinct components (default `⌈d/k⌉`, capped at `n`).
pub fn variance_report(
    problem: &Problem,
    k: usize,
    batch: Option<usize>,
    trials: usize,
    seed: u64,
) -> Result<VarianceReport, HarnessError> {
    let obj = &problem.objective;
    let d = obj.dim();
    if k == 0 || k > d {
        return Err(HarnessError::Usage(format!("k must be in 1..={d}, got {k}")));
    }
    let batch = batch.unwrap_or_else(|| d.div_ceil(k).min(obj.n()));
    let x = vec![0.0; d];
    let VarianceProbe { single, batched, .. } = variance_probe(obj, &x, k, batch, trials, &mut rng_for(seed, 0))?;
    Ok(VarianceReport {
        k,
        d,
        batch,
        trials,
        single,
        batched,
        single_exact: variance_exact(obj, &x, k)?,
    })
}

//! Self-check suites run by `memsgd check`.

use rand::Rng;
use serde::Serialize;

use super::config::{AveragingSpec, ProblemSpec, RunConfig, ScheduleSpec, ShiftSpec};
use super::commands::execute;
use super::metrics;
use crate::compression::{contraction_exact, top_k_with_ties, CompressorSpec, TieBreak};
use crate::data::{make_quadratic_sized, make_synthetic_logistic};
use crate::objective::{grad_norm_bound_estimate, Objective};
use crate::optimizer::{
    memory_bound_margin, shift_for, virtual_gap, weight_sum_closed_form, Averaging, MemSgd, StepSchedule, WeightSum,
};
use crate::{rng_for, sq_norm};

pub const SUITES: [&str; 6] = [
    "contraction",
    "determinism",
    "virtual_sequence",
    "memory_bound",
    "averaging",
    "gradient",
];

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    /// Tie rule used for top-k inside the suites. Anything other than the
    /// default lowest-index rule must make the determinism suite fail.
    pub tie_break: TieBreak,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            tie_break: TieBreak::LowestIndex,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub suite: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Runs every suite once, in the order of [`SUITES`].
pub fn cmd_check(opts: &CheckOptions) -> Vec<SuiteResult> {
    let runs: [fn(&CheckOptions) -> Outcome; 6] = [
        contraction,
        determinism,
        virtual_sequence,
        memory_bound,
        averaging,
        gradient,
    ];
    SUITES
        .iter()
        .zip(runs)
        .map(|(&suite, f)| {
            let (passed, detail) = match f(opts) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            SuiteResult { suite, passed, detail }
        })
        .collect()
}

fn contraction(opts: &CheckOptions) -> Outcome {
    let mut rng = rng_for(1, 0);
    let mut cases = 0;
    for d in 2..=6usize {
        for k in 1..=d {
            for trial in 0..10 {
                // every other vector has integer entries, so ties are common
                let x: Vec<f64> = (0..d)
                    .map(|_| {
                        if trial % 2 == 0 {
                            rng.random_range(-3i32..=3) as f64
                        } else {
                            rng.random_range(-5.0..5.0)
                        }
                    })
                    .collect();
                let norm = sq_norm(&x);
                let exact = contraction_exact(&CompressorSpec::RandK { k }, &x)
                    .map_err(|e| e.to_string())?
                    .ok_or("enumeration declined")?;
                let expected = if norm == 0.0 { 0.0 } else { 1.0 - k as f64 / d as f64 };
                ensure((exact - expected).abs() <= 1e-12, || {
                    format!("rand_k d={d} k={k}: {exact} != {expected}")
                })?;
                let top = top_k_with_ties(&x, k, opts.tie_break).map_err(|e| e.to_string())?;
                ensure(top.residual_sq_norm(&x) <= exact * norm + 1e-12, || {
                    format!("top_k worse than rand_k at d={d} k={k}")
                })?;
                cases += 1;
            }
        }
    }
    for p in [0.1, 0.5, 1.0] {
        for d in 1..=6usize {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let r = contraction_exact(&CompressorSpec::RandP { p }, &x)
                .map_err(|e| e.to_string())?
                .ok_or("enumeration declined")?;
            ensure((r - (1.0 - p / d as f64)).abs() <= 1e-12, || format!("rand_p p={p} d={d}: {r}"))?;
            cases += 1;
        }
    }
    Ok(format!("{cases} vectors"))
}

fn determinism(opts: &CheckOptions) -> Outcome {
    // ties in magnitude resolve toward the lowest index
    let golden: [(&[f64], usize, &[usize]); 3] = [
        (&[1.0, -1.0, 1.0, 0.5, -1.0], 2, &[0, 1]),
        (&[0.0, 0.0, 0.0], 1, &[0]),
        (&[2.0, -3.0, 3.0, -3.0], 2, &[1, 2]),
    ];
    for (x, k, want) in golden {
        let got = top_k_with_ties(x, k, opts.tie_break).map_err(|e| e.to_string())?;
        ensure(got.indices() == want, || {
            format!("top_{k} of {x:?} picked {:?}, expected {want:?}", got.indices())
        })?;
    }
    let cfg = RunConfig {
        problem: ProblemSpec::SyntheticLogistic {
            n: 50,
            d: 8,
            density: 0.5,
            seed: 4,
        },
        compressor: CompressorSpec::RandK { k: 2 },
        schedule: ScheduleSpec::Practical {
            gamma: 2.0,
            lambda: None,
            a: ShiftSpec::RatioOfDK(1.0),
        },
        averaging: AveragingSpec::WeightedQuadratic { a: None },
        steps: 500,
        seed: 9,
        workers: 1,
        oversubscribe: false,
        trace: false,
        yield_stress: false,
        checkpoints_per_epoch: 10,
        timing: false,
        label: None,
        output: None,
    };
    let problem = cfg.problem.build().map_err(|e| e.to_string())?;
    let csv = || -> Result<Vec<u8>, String> {
        let r = execute(&cfg, &problem).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        metrics::write_csv_header(&mut buf).map_err(|e| e.to_string())?;
        metrics::write_csv_rows(&mut buf, &r.label, &r.rows).map_err(|e| e.to_string())?;
        Ok(buf)
    };
    ensure(csv()? == csv()?, || "two identical runs wrote different CSVs".into())?;
    Ok("tie rule and run output reproducible".into())
}

fn virtual_sequence(_: &CheckOptions) -> Outcome {
    let p = make_synthetic_logistic(200, 20, 0.5, 2);
    let schedule = StepSchedule::Practical {
        gamma: 2.0,
        lambda: p.objective.mu(),
        a: 20.0,
    };
    let mut worst = 0.0f64;
    for comp in [CompressorSpec::TopK { k: 1 }, CompressorSpec::RandK { k: 1 }] {
        let mut st = MemSgd::new(vec![0.0; 20], Averaging::LastIterate, 5).record_replay();
        for _ in 0..10 {
            for _ in 0..200 {
                st.step(&p.objective, &schedule, &comp).map_err(|e| e.to_string())?;
            }
            let gap = virtual_gap(&st, &p.objective, st.replay().unwrap_or_default()).map_err(|e| e.to_string())?;
            let tol = 1e-8 * (1.0 + sq_norm(st.x()).sqrt());
            ensure(gap <= tol, || format!("{comp} at t={}: gap {gap:e} > {tol:e}", st.t()))?;
            worst = worst.max(gap);
        }
    }
    Ok(format!("largest gap {worst:e}"))
}

fn memory_bound(_: &CheckOptions) -> Outcome {
    let d = 20;
    let p = make_quadratic_sized(40, d, 1.0, 4.0, 6);
    let a = shift_for(5.0, d, 1.0).map_err(|e| e.to_string())?;
    let schedule = StepSchedule::Theoretical { mu: 1.0, a };
    let mut worst = f64::INFINITY;
    for seed in 0..3 {
        let mut st = MemSgd::new(vec![0.0; d], Averaging::LastIterate, seed);
        let mut states = Vec::new();
        for _ in 0..50 {
            for _ in 0..40 {
                st.step(&p.objective, &schedule, &CompressorSpec::TopK { k: 1 })
                    .map_err(|e| e.to_string())?;
            }
            states.push(st.clone());
        }
        let mut points: Vec<Vec<f64>> = states.iter().map(|s| s.x().to_vec()).collect();
        points.push(vec![0.0; d]);
        let g2 = grad_norm_bound_estimate(&p.objective, &points).map_err(|e| e.to_string())?;
        for s in &states {
            let margin = memory_bound_margin(s, &schedule, 5.0, d, 1.0, g2).map_err(|e| e.to_string())?;
            ensure(margin >= 0.0, || format!("seed {seed} t={}: margin {margin}", s.t()))?;
            worst = worst.min(margin);
        }
    }
    Ok(format!("smallest margin {worst:e}"))
}

fn averaging(_: &CheckOptions) -> Outcome {
    for a in [1u64, 2, 7, 14000] {
        let mut s = WeightSum::new(a as f64);
        for t in 0..=2000u64 {
            let acc = s.exact().ok_or("integer shift did not accumulate exactly")?;
            ensure(acc == weight_sum_closed_form(t, a), || format!("S_{t} mismatch for a={a}"))?;
            ensure(3 * acc >= (t as u128).pow(3), || format!("S_{t} < T^3/3 for a={a}"))?;
            s.push(t);
        }
    }
    Ok("closed form and cubic lower bound hold for T <= 2000".into())
}

fn gradient(_: &CheckOptions) -> Outcome {
    let mut rng = rng_for(3, 0);
    let objectives: [Objective; 2] = [
        make_synthetic_logistic(30, 6, 0.7, 1).objective,
        make_quadratic_sized(10, 6, 0.5, 3.0, 1).objective,
    ];
    let h = 1e-6;
    let mut worst = 0.0f64;
    for obj in &objectives {
        for _ in 0..20 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let i = rng.random_range(0..obj.n());
            let g = obj.stochastic_grad(&x, i).map_err(|e| e.to_string())?.gradient;
            let fd: Vec<f64> = (0..6)
                .map(|j| {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[j] += h;
                    xm[j] -= h;
                    (obj.component_value(&xp, i) - obj.component_value(&xm, i)) / (2.0 * h)
                })
                .collect();
            let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let rel = diff / sq_norm(&g).sqrt().max(1e-12);
            ensure(rel < 1e-5, || format!("{} component {i}: relative error {rel:e}", obj.kind()))?;
            worst = worst.max(rel);
        }
    }
    Ok(format!("largest relative error {worst:e}"))
}

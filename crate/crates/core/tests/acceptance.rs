//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use memsgd::comm::{bits_qsgd, bits_sparse, CostModel};
use memsgd::compression::{contraction_exact, top_k, CompressorSpec};
use memsgd::data::{make_quadratic, make_synthetic_logistic, Dataset};
use memsgd::harness::{
    cmd_compare, metrics::parse_csv, AveragingSpec, ProblemSpec, RunConfig, ScheduleSpec,
};
use memsgd::objective::{grad_norm_bound_estimate, Objective};
use memsgd::optimizer::{
    memory_bound, run, shift_for, variance_exact, variance_probe, virtual_gap, weight_sum_closed_form, Averaging,
    MemSgd, RunSpec, StepSchedule, WeightSum,
};
use memsgd::parallel::{run_parallel, ParallelConfig};
use memsgd::rng_for;

// Tolerances and limits, one place.
const C1_TOL: f64 = 1e-12;
const C1_LIMIT: Duration = Duration::from_secs(5);
const C2_TOL: f64 = 1e-12;
const C3_REL_TOL: f64 = 1e-8;
const C3_LIMIT: Duration = Duration::from_secs(30);
const C4_ALPHA: f64 = 5.0;
const C5_FACTOR: f64 = 2.0;
const C5_LIMIT: Duration = Duration::from_secs(120);
const C7_MIN_RATIO: f64 = 1e3;
const C8_TOL: f64 = 1e-9;
const C8_MIN_RATIO: f64 = 10.0;
const C9_TOL: f64 = 1e-12;
const C9_SIGMAS: f64 = 3.0;
const C10_REL_TOL: f64 = 0.10;
const C11_STEP: f64 = 1e-6;
const C11_REL_TOL: f64 = 1e-5;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn random_vec(rng: &mut memsgd::Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-10.0..10.0)).collect()
}

/// `E‖x - rand_k(x)‖²` by walking all bitmasks with `k` bits set.
fn rand_k_oracle(x: &[f64], k: usize) -> f64 {
    let d = x.len();
    let (mut total, mut count) = (0.0, 0u64);
    for mask in 0u32..(1 << d) {
        if mask.count_ones() as usize != k {
            continue;
        }
        total += (0..d).filter(|j| mask & (1 << j) == 0).map(|j| x[j] * x[j]).sum::<f64>();
        count += 1;
    }
    total / count as f64
}

fn c1_contraction() -> Verdict {
    let start = Instant::now();
    let mut rng = rng_for(101, 0);
    let (mut cases, mut worst) = (0, 0.0f64);
    for d in 2..=8 {
        for k in 1..=d {
            for _ in 0..50 {
                let x = random_vec(&mut rng, d);
                let norm = sq(&x);
                let target = (1.0 - k as f64 / d as f64) * norm;
                let exact = contraction_exact(&CompressorSpec::RandK { k }, &x).unwrap().unwrap() * norm;
                let oracle = rand_k_oracle(&x, k);
                let err = (exact - target).abs().max((oracle - target).abs()) / norm;
                worst = worst.max(err);
                let top = top_k(&x, k).unwrap().residual_sq_norm(&x);
                if err > C1_TOL || top > exact + C1_TOL * norm {
                    return verdict(false, format!("d={d} k={k}: err {err:e}, top {top} vs rand {exact}"));
                }
                cases += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        elapsed < C1_LIMIT,
        format!("{cases} vectors, worst relative error {worst:e}, {elapsed:.2?} (limit {C1_LIMIT:?})"),
    )
}

fn c2_rand_p() -> Verdict {
    let mut rng = rng_for(102, 0);
    let mut worst = 0.0f64;
    for p in [0.1, 0.5, 1.0] {
        for d in 1..=6 {
            for _ in 0..50 {
                let x = random_vec(&mut rng, d);
                let norm = sq(&x);
                // oracle: gate closed keeps nothing; open keeps coordinate j with probability 1/d
                let open: f64 = (0..d).map(|j| norm - x[j] * x[j]).sum::<f64>() / d as f64;
                let oracle = (1.0 - p) * norm + p * open;
                let exact = contraction_exact(&CompressorSpec::RandP { p }, &x).unwrap().unwrap() * norm;
                let target = (1.0 - p / d as f64) * norm;
                let err = (exact - target).abs().max((oracle - target).abs()) / norm;
                worst = worst.max(err);
                if err > C2_TOL {
                    return verdict(false, format!("p={p} d={d}: relative error {err:e}"));
                }
            }
        }
    }
    verdict(true, format!("p in {{0.1, 0.5, 1}}, d <= 6, worst relative error {worst:e}"))
}

fn c3_virtual_sequence() -> Verdict {
    let start = Instant::now();
    let (n, d) = (1000, 100);
    let p = make_synthetic_logistic(n, d, 1.0, 103);
    let schedule = StepSchedule::Practical {
        gamma: 2.0,
        lambda: p.objective.mu(),
        a: d as f64,
    };
    let mut worst = 0.0f64;
    let mut literal = 0.0f64;
    for comp in [CompressorSpec::TopK { k: 1 }, CompressorSpec::RandK { k: 1 }] {
        let mut st = MemSgd::new(vec![0.0; d], Averaging::LastIterate, 7).record_replay();
        while st.t() < 10_000 {
            for _ in 0..n / 10 {
                st.step(&p.objective, &schedule, &comp).unwrap();
            }
            let log = st.replay().unwrap();
            let gap = virtual_gap(&st, &p.objective, log).unwrap();
            let scale = 1.0 + sq(st.x()).sqrt();
            worst = worst.max(gap / scale);
            // the same replay against x_t + m_t is off by 2‖m_t‖
            literal = literal.max(2.0 * sq(st.memory()).sqrt() / scale);
            if gap > C3_REL_TOL * scale {
                return verdict(false, format!("{comp} t={}: gap {gap:e} > {:e}", st.t(), C3_REL_TOL * scale));
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        elapsed < C3_LIMIT,
        format!(
            "worst ‖(x̃-x)+m‖/(1+‖x‖) = {worst:e} over 200 checkpoints; with x̃-x = +m it would be ~{literal:.3}; {elapsed:.2?}"
        ),
    )
}

fn c4_memory_bound() -> Verdict {
    let d = 100;
    let k = 1.0;
    let a = shift_for(C4_ALPHA, d, k).unwrap();
    let mut worst_ratio = 0.0f64;
    for seed in 0..3 {
        let p = make_quadratic(d, 1.0, 10.0, 104);
        let schedule = StepSchedule::Theoretical { mu: p.objective.mu(), a };
        let mut st = MemSgd::new(vec![0.0; d], Averaging::LastIterate, seed);
        let mut snaps = Vec::new();
        while st.t() < 10_000 {
            for _ in 0..10 {
                st.step(&p.objective, &schedule, &CompressorSpec::TopK { k: 1 }).unwrap();
            }
            snaps.push((st.t(), st.x().to_vec(), sq(st.memory())));
        }
        let mut points: Vec<Vec<f64>> = snaps.iter().map(|s| s.1.clone()).collect();
        points.push(vec![0.0; d]);
        let g2 = grad_norm_bound_estimate(&p.objective, &points).unwrap();
        for (t, _, mem) in &snaps {
            let bound = memory_bound(&schedule, *t, C4_ALPHA, d, k, g2).unwrap();
            worst_ratio = worst_ratio.max(mem / bound);
            if *mem > bound {
                return verdict(false, format!("seed {seed} t={t}: ‖m‖² = {mem:e} > {bound:e}"));
            }
        }
    }
    verdict(true, format!("a = {a}, 3 seeds, max ‖m‖²/bound = {worst_ratio:.4}"))
}

fn c5_parity() -> Verdict {
    let start = Instant::now();
    let (d, kappa) = (100usize, 10.0f64);
    let steps = (50.0 * d as f64 * kappa.sqrt()).round() as u64;
    let a = shift_for(C4_ALPHA, d, 1.0).unwrap();
    let p = make_quadratic(d, 1.0, kappa, 105);
    let fstar = p.optimum_value.unwrap();
    let gap = |comp: CompressorSpec| {
        (0..5)
            .map(|seed| {
                let mut spec = RunSpec::new(StepSchedule::Theoretical { mu: 1.0, a }, comp, steps, seed);
                spec.averaging = Averaging::WeightedQuadratic { a };
                run(&p.objective, &spec).unwrap().metrics.output_objective - fstar
            })
            .sum::<f64>()
            / 5.0
    };
    let mem = gap(CompressorSpec::TopK { k: 1 });
    let sgd = gap(CompressorSpec::Identity);
    let ratio = mem / sgd;
    let elapsed = start.elapsed();
    verdict(
        ratio <= C5_FACTOR && ratio >= 1.0 / C5_FACTOR && elapsed < C5_LIMIT,
        format!("T = {steps}, a = {a}: top_1 gap {mem:e}, SGD gap {sgd:e}, ratio {ratio:.3}, {elapsed:.2?}"),
    )
}

fn c6_averaging() -> Verdict {
    for a in [1u64, 2, 7, 14000] {
        let mut lib = WeightSum::new(a as f64);
        let mut direct: u128 = 0;
        for t in 0..=10_000u64 {
            let closed = weight_sum_closed_form(t, a);
            // oracle: (T/6)(2T² + 6aT - 3T + 6a² - 6a + 1) evaluated in signed integers
            let (ti, ai) = (t as i128, a as i128);
            let formula = ti * (2 * ti * ti + 6 * ai * ti - 3 * ti + 6 * ai * ai - 6 * ai + 1);
            if formula % 6 != 0 || (formula / 6) as u128 != direct || closed != direct || lib.exact() != Some(direct) {
                return verdict(false, format!("a={a} T={t}: S_T mismatch"));
            }
            if 3 * direct < (t as u128).pow(3) {
                return verdict(false, format!("a={a} T={t}: S_T < T³/3"));
            }
            direct += ((a + t) as u128).pow(2);
            lib.push(t);
        }
    }
    verdict(true, "a in {1, 2, 7, 14000}, T <= 10^4: exact match, S_T >= T^3/3")
}

fn dense_problem() -> ProblemSpec {
    ProblemSpec::SyntheticLogistic {
        n: 200,
        d: 2000,
        density: 1.0,
        seed: 107,
    }
}

fn c7_comm_ratio() -> Verdict {
    let problem = dense_problem().build().unwrap();
    let d = problem.objective.dim();
    let per_iter = |comp: CompressorSpec| {
        let out = run(&problem.objective, &RunSpec::new(StepSchedule::InverseT, comp, 50, 1)).unwrap();
        out.metrics.total_bits / 50.0
    };
    let (top, dense) = (per_iter(CompressorSpec::TopK { k: 1 }), per_iter(CompressorSpec::Identity));
    let ratio = dense / top;
    let model = CostModel::default();
    let formula = model.bits_dense(d) as f64 / bits_sparse(1, d, &model).unwrap() as f64;
    let values_only = (32 * d) as f64 / 32.0;
    verdict(
        ratio >= C7_MIN_RATIO && ratio == formula,
        format!("d = {d}: {dense} vs {top} bits per iteration, ratio {ratio:.1} (values only: {values_only})"),
    )
}

fn c8_qsgd() -> Verdict {
    let mut worst = 0.0f64;
    for s in [2usize, 4, 16, 256] {
        let mut log2 = 0u32;
        while (1usize << log2) < s {
            log2 += 1;
        }
        for d in 1..=10_000usize {
            let naive = (log2 as f64 + 1.0) * d as f64;
            let elias = 3.0 * s as f64 * (s as f64 + (d as f64).sqrt()) + 32.0;
            let err = (bits_qsgd(d, s) - naive.min(elias)).abs();
            worst = worst.max(err);
            if err > C8_TOL {
                return verdict(false, format!("d={d} s={s}: off by {err:e}"));
            }
        }
    }

    let cfg = |comp: CompressorSpec| RunConfig {
        problem: dense_problem(),
        compressor: comp,
        schedule: ScheduleSpec::Bottou {
            gamma0: 1.0,
            lambda: None,
        },
        averaging: AveragingSpec::LastIterate,
        steps: 400,
        seed: 3,
        workers: 1,
        oversubscribe: false,
        trace: false,
        yield_stress: false,
        checkpoints_per_epoch: 10,
        timing: false,
        label: None,
        output: None,
    };
    let configs = [
        cfg(CompressorSpec::TopK { k: 1 }),
        cfg(CompressorSpec::Qsgd { s: 16 }),
        cfg(CompressorSpec::Identity),
    ];
    let report = cmd_compare(&configs, None).unwrap();
    let rows = parse_csv(&report.to_csv()).unwrap();
    let series = |label: &str| -> Vec<(u64, f64)> {
        rows.iter().filter(|r| r.label == label).map(|r| (r.iter, r.bits_cum)).collect()
    };
    let (top, q, dense) = (series("top_k_k=1"), series("qsgd_s=16"), series("identity"));
    if top.is_empty() || top.len() != q.len() || q.len() != dense.len() {
        return verdict(false, "compare output is missing a series");
    }
    let mut min_ratio = f64::INFINITY;
    for ((t, b), ((tq, bq), (td, bd))) in top.iter().zip(q.iter().zip(&dense)) {
        if t != tq || t != td || !(b < bq && bq < bd) || C8_MIN_RATIO * b > *bq {
            return verdict(false, format!("iteration {t}: bits {b} / {bq} / {bd}"));
        }
        min_ratio = min_ratio.min(bq / b);
    }
    verdict(
        true,
        format!("formula worst error {worst:e}; qsgd/top_1 bits >= {min_ratio:.1} at all {} checkpoints", top.len()),
    )
}

fn c9_variance() -> Verdict {
    let mut ds = Dataset::new(4);
    ds.push_row(&[(0, 0.5), (1, -1.5), (2, 2.0), (3, 0.25)], 1.0).unwrap();
    let one = Objective::logistic(std::sync::Arc::new(ds), 0.0);
    let x = [0.3, 0.1, -0.2, 0.4];
    let g = one.full_gradient(&x).unwrap();
    // oracle: (1/4) Σ_j ‖4 g_j e_j - g‖²
    let oracle: f64 = (0..4)
        .map(|j| {
            let mut e: Vec<f64> = g.iter().map(|v| -v).collect();
            e[j] += 4.0 * g[j];
            sq(&e)
        })
        .sum::<f64>()
        / 4.0;
    let exact = variance_exact(&one, &x, 1).unwrap().unwrap();
    let target = 3.0 * sq(&g);
    if (exact - target).abs() > C9_TOL * target || (oracle - target).abs() > C9_TOL * target {
        return verdict(false, format!("enumeration {exact} / oracle {oracle} vs 3‖g‖² = {target}"));
    }

    let p = make_synthetic_logistic(1000, 100, 1.0, 109);
    let k = 1;
    let batch = 100usize.div_ceil(k);
    let probe = variance_probe(&p.objective, &vec![0.0; 100], k, batch, 2000, &mut rng_for(9, 0)).unwrap();
    let slack = C9_SIGMAS * (probe.single.std_err.powi(2) + probe.batched.std_err.powi(2)).sqrt();
    verdict(
        probe.batched.mean <= probe.single.mean + slack,
        format!(
            "exact 3‖g‖² = {exact:.6}; batch {batch}: {:.4e} ± {:.1e} vs single {:.4e} ± {:.1e}",
            probe.batched.mean, probe.batched.std_err, probe.single.mean, probe.single.std_err
        ),
    )
}

fn c10_parallel() -> Verdict {
    let p = make_synthetic_logistic(10_000, 100, 1.0, 110);
    let total: u64 = 200_000;
    let mut lines = Vec::new();
    let mut pass = true;
    for seed in 0..3 {
        let mut base = None;
        for w in [1usize, 2, 4] {
            let mut cfg = ParallelConfig::new(
                w,
                total / w as u64,
                StepSchedule::InverseT,
                CompressorSpec::TopK { k: 1 },
                seed,
            );
            cfg.oversubscribe = true;
            let out = run_parallel(&p.objective, &cfg).unwrap();
            if out.total_writes > total {
                pass = false;
            }
            let f = out.final_objective;
            let f1 = *base.get_or_insert(f);
            let rel = (f - f1).abs() / f1;
            if rel > C10_REL_TOL {
                pass = false;
            }
            lines.push(format!("s{seed} W{w}: {f:.5} ({:+.2}%)", 100.0 * (f - f1) / f1));
        }
    }
    verdict(pass, format!("{} gradients per run; {}", total, lines.join(", ")))
}

fn c11_gradient() -> Verdict {
    let mut rng = rng_for(111, 0);
    let objectives = [
        make_synthetic_logistic(50, 10, 0.6, 111).objective,
        make_quadratic(10, 1.0, 10.0, 111).objective,
    ];
    let mut worst = 0.0f64;
    for obj in &objectives {
        let d = obj.dim();
        for _ in 0..20 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let i = rng.random_range(0..obj.n());
            let g = obj.stochastic_grad(&x, i).unwrap().gradient;
            let fd: Vec<f64> = (0..d)
                .map(|j| {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[j] += C11_STEP;
                    xm[j] -= C11_STEP;
                    (obj.component_value(&xp, i) - obj.component_value(&xm, i)) / (2.0 * C11_STEP)
                })
                .collect();
            let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
            let rel = (sq(&diff) / sq(&g)).sqrt();
            worst = worst.max(rel);
        }
    }
    verdict(worst < C11_REL_TOL, format!("40 points, worst relative error {worst:e}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("contraction exactness", c1_contraction),
        ("rand_p contraction", c2_rand_p),
        ("virtual-sequence identity", c3_virtual_sequence),
        ("memory bound", c4_memory_bound),
        ("convergence parity", c5_parity),
        ("averaging arithmetic", c6_averaging),
        ("communication ratio", c7_comm_ratio),
        ("qsgd bit formula", c8_qsgd),
        ("variance probe", c9_variance),
        ("parallel parity", c10_parallel),
        ("gradient oracle", c11_gradient),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} C{:<2} {name} [{:.2?}]: {}",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed(),
            v.detail
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

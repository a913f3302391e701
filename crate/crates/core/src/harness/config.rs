//! Run configuration files.
//!
//! The format is sections of `key = value` lines with `#` comments:
//!
//! ```text
//! [problem]
//! kind = synthetic_logistic
//! n = 1000
//! d = 100
//!
//! [compressor]
//! kind = top_k
//! k = 1
//!
//! [schedule]
//! kind = practical
//! gamma = 2
//! a = d/k
//!
//! [run]
//! steps = 10000
//! seed = 1
//! ```
//!
//! Unknown sections and keys are errors. Values can be overridden with
//! `section.key=value` strings before interpretation.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::HarnessError;
use crate::compression::CompressorSpec;
use crate::optimizer::{Averaging, StepSchedule};

fn config_err(line: Option<usize>, msg: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        line,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    key: String,
    value: String,
    line: Option<usize>,
}

/// Parsed but uninterpreted configuration text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ini {
    sections: Vec<(String, Vec<Entry>)>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut ini = Ini::default();
        let mut current: Option<usize> = None;
        for (no, raw) in text.lines().enumerate() {
            let no = no + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(Some(no), format!("malformed section header `{line}`")))?
                    .trim();
                if ini.sections.iter().any(|(s, _)| s == name) {
                    return Err(config_err(Some(no), format!("duplicate section [{name}]")));
                }
                ini.sections.push((name.to_string(), Vec::new()));
                current = Some(ini.sections.len() - 1);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(Some(no), format!("expected `key = value`, got `{line}`")))?;
            let idx = current.ok_or_else(|| config_err(Some(no), "key outside of any section"))?;
            let key = key.trim();
            let entries = &mut ini.sections[idx].1;
            if entries.iter().any(|e| e.key == key) {
                return Err(config_err(Some(no), format!("duplicate key `{key}`")));
            }
            entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line: Some(no),
            });
        }
        Ok(ini)
    }

    /// Applies `section.key=value`, replacing an existing value.
    ///
    /// `compressor=<spec>` (for example `compressor=top_k k=1`) replaces the
    /// whole compressor section.
    pub fn set_override(&mut self, spec: &str) -> Result<(), HarnessError> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| config_err(None, format!("override `{spec}` is not section.key=value")))?;
        if path.trim() == "compressor" {
            let comp: CompressorSpec = value
                .parse()
                .map_err(|e| config_err(None, format!("override `{spec}`: {e}")))?;
            self.sections.retain(|(s, _)| s != "compressor");
            self.set("compressor", "kind", comp.kind_name());
            for (k, v) in comp.params() {
                self.set("compressor", k, &v);
            }
            return Ok(());
        }
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| config_err(None, format!("override `{spec}` is not section.key=value")))?;
        self.set(section, key, value.trim());
        Ok(())
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        let idx = match self.sections.iter().position(|(s, _)| s == section) {
            Some(i) => i,
            None => {
                self.sections.push((section.to_string(), Vec::new()));
                self.sections.len() - 1
            }
        };
        let entries = &mut self.sections[idx].1;
        match entries.iter_mut().find(|e| e.key == key) {
            Some(e) => {
                e.value = value.to_string();
                e.line = None;
            }
            None => entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
                line: None,
            }),
        }
    }

    fn section(&self, name: &str) -> Section<'_> {
        Section {
            name: name.to_string(),
            entries: self
                .sections
                .iter()
                .find(|(s, _)| s == name)
                .map_or(&[][..], |(_, e)| e.as_slice()),
            used: Default::default(),
        }
    }

    fn check_sections(&self, allowed: &[&str]) -> Result<(), HarnessError> {
        for (name, entries) in &self.sections {
            if !allowed.contains(&name.as_str()) {
                let line = entries.first().and_then(|e| e.line);
                return Err(config_err(line, format!("unknown section [{name}]")));
            }
        }
        Ok(())
    }
}

/// Reads typed values from one section and tracks which keys were consumed.
struct Section<'a> {
    name: String,
    entries: &'a [Entry],
    used: std::cell::RefCell<Vec<&'a str>>,
}

impl<'a> Section<'a> {
    fn raw(&self, key: &str) -> Option<&'a Entry> {
        let e = self.entries.iter().find(|e| e.key == key)?;
        self.used.borrow_mut().push(&e.key);
        Some(e)
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, HarnessError> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => e.value.parse().map(Some).map_err(|_| {
                config_err(e.line, format!("[{}] {key}: cannot parse `{}`", self.name, e.value))
            }),
        }
    }

    fn req<T: FromStr>(&self, key: &str) -> Result<T, HarnessError> {
        self.opt(key)?
            .ok_or_else(|| config_err(None, format!("[{}] missing required key `{key}`", self.name)))
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, HarnessError> {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn finish(self) -> Result<(), HarnessError> {
        let used = self.used.borrow();
        match self.entries.iter().find(|e| !used.contains(&e.key.as_str())) {
            Some(e) => Err(config_err(e.line, format!("[{}] unknown key `{}`", self.name, e.key))),
            None => Ok(()),
        }
    }
}

/// A shift written either as a number or as a multiple of `d/k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShiftSpec {
    Value(f64),
    /// `mult · d/k`.
    RatioOfDK(f64),
}

impl ShiftSpec {
    /// `k_eff` is `None` for compressors without a k (QSGD), which count as dense.
    pub fn resolve(&self, d: usize, k_eff: Option<f64>) -> f64 {
        match *self {
            ShiftSpec::Value(v) => v,
            ShiftSpec::RatioOfDK(mult) => mult * d as f64 / k_eff.unwrap_or(d as f64),
        }
    }
}

impl FromStr for ShiftSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s.strip_suffix("d/k") {
            Some(prefix) => {
                let prefix = prefix.trim().trim_end_matches('*').trim();
                if prefix.is_empty() {
                    Ok(ShiftSpec::RatioOfDK(1.0))
                } else {
                    prefix
                        .parse()
                        .map(ShiftSpec::RatioOfDK)
                        .map_err(|_| format!("bad multiplier in `{s}`"))
                }
            }
            None => s.parse().map(ShiftSpec::Value).map_err(|_| format!("bad shift `{s}`")),
        }
    }
}

impl fmt::Display for ShiftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ShiftSpec::Value(v) => write!(f, "{v}"),
            ShiftSpec::RatioOfDK(1.0) => write!(f, "d/k"),
            ShiftSpec::RatioOfDK(m) => write!(f, "{m}d/k"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Libsvm {
        path: PathBuf,
        /// Defaults to `1/n`.
        lambda: Option<f64>,
        zero_one_labels: bool,
        dim: Option<usize>,
    },
    SyntheticLogistic {
        n: usize,
        d: usize,
        density: f64,
        seed: u64,
    },
    Quadratic {
        n: usize,
        d: usize,
        mu: f64,
        l: f64,
        seed: u64,
    },
}

/// Schedule parameters before `d`, `k` and `λ` are known.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    /// `mu` defaults to the objective's strong convexity constant.
    Theoretical { mu: Option<f64>, a: ShiftSpec },
    /// `lambda` defaults to the objective's regulariser.
    Practical {
        gamma: f64,
        lambda: Option<f64>,
        a: ShiftSpec,
    },
    InverseT,
    Constant { eta: f64 },
    Bottou { gamma0: f64, lambda: Option<f64> },
}

impl ScheduleSpec {
    pub fn resolve(&self, mu: f64, d: usize, k_eff: Option<f64>) -> StepSchedule {
        match *self {
            ScheduleSpec::Theoretical { mu: m, a } => StepSchedule::Theoretical {
                mu: m.unwrap_or(mu),
                a: a.resolve(d, k_eff),
            },
            ScheduleSpec::Practical { gamma, lambda, a } => StepSchedule::Practical {
                gamma,
                lambda: lambda.unwrap_or(mu),
                a: a.resolve(d, k_eff),
            },
            ScheduleSpec::InverseT => StepSchedule::InverseT,
            ScheduleSpec::Constant { eta } => StepSchedule::Constant { eta },
            ScheduleSpec::Bottou { gamma0, lambda } => StepSchedule::Bottou {
                gamma0,
                lambda: lambda.unwrap_or(mu),
            },
        }
    }

    fn shift(&self) -> Option<ShiftSpec> {
        match *self {
            ScheduleSpec::Theoretical { a, .. } | ScheduleSpec::Practical { a, .. } => Some(a),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AveragingSpec {
    LastIterate,
    /// `a` defaults to the schedule's shift, or 1 when it has none.
    WeightedQuadratic { a: Option<ShiftSpec> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub compressor: CompressorSpec,
    pub schedule: ScheduleSpec,
    pub averaging: AveragingSpec,
    /// Total stochastic gradients, split evenly across workers.
    pub steps: u64,
    pub seed: u64,
    pub workers: usize,
    pub oversubscribe: bool,
    pub trace: bool,
    pub yield_stress: bool,
    pub checkpoints_per_epoch: usize,
    pub timing: bool,
    pub label: Option<String>,
    /// Output prefix: `<output>.csv` and `<output>.json`.
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let mut ini = Ini::parse(&text)?;
        for o in overrides {
            ini.set_override(o)?;
        }
        let mut cfg = Self::from_ini(&ini)?;
        if let ProblemSpec::Libsvm { path: data, .. } = &mut cfg.problem {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_ini(ini: &Ini) -> Result<Self, HarnessError> {
        ini.check_sections(&["problem", "compressor", "schedule", "run"])?;

        let p = ini.section("problem");
        let problem = match p.req::<String>("kind")?.as_str() {
            "libsvm" => ProblemSpec::Libsvm {
                path: p.req("path")?,
                lambda: p.opt("lambda")?,
                zero_one_labels: p.or("zero_one_labels", false)?,
                dim: p.opt("dim")?,
            },
            "synthetic_logistic" => ProblemSpec::SyntheticLogistic {
                n: p.req("n")?,
                d: p.req("d")?,
                density: p.or("density", 1.0)?,
                seed: p.or("seed", 0)?,
            },
            "quadratic" => {
                let d = p.req("d")?;
                ProblemSpec::Quadratic {
                    n: p.or("n", d)?,
                    d,
                    mu: p.req("mu")?,
                    l: p.req("l")?,
                    seed: p.or("seed", 0)?,
                }
            }
            other => return Err(config_err(None, format!("[problem] unknown kind `{other}`"))),
        };
        p.finish()?;

        let c = ini.section("compressor");
        let kind: String = c.req("kind")?;
        let compressor = CompressorSpec::from_parts(&kind, |key| c.raw(key).map(|e| e.value.as_str()))
        .map_err(|e| config_err(None, format!("[compressor] {e}")))?;
        c.finish()?;

        let s = ini.section("schedule");
        let shift = |key: &str| -> Result<ShiftSpec, HarnessError> {
            let e = s
                .raw(key)
                .ok_or_else(|| config_err(None, format!("[schedule] missing required key `{key}`")))?;
            e.value
                .parse()
                .map_err(|msg| config_err(e.line, format!("[schedule] {key}: {msg}")))
        };
        let schedule = match s.req::<String>("kind")?.as_str() {
            "theoretical" => ScheduleSpec::Theoretical {
                mu: s.opt("mu")?,
                a: shift("a")?,
            },
            "practical" => ScheduleSpec::Practical {
                gamma: s.req("gamma")?,
                lambda: s.opt("lambda")?,
                a: shift("a")?,
            },
            "inverse_t" => ScheduleSpec::InverseT,
            "constant" => ScheduleSpec::Constant { eta: s.req("eta")? },
            "bottou" => ScheduleSpec::Bottou {
                gamma0: s.req("gamma0")?,
                lambda: s.opt("lambda")?,
            },
            other => return Err(config_err(None, format!("[schedule] unknown kind `{other}`"))),
        };
        s.finish()?;

        let r = ini.section("run");
        let averaging = match r.or("averaging", "last_iterate".to_string())?.as_str() {
            "last_iterate" => AveragingSpec::LastIterate,
            "weighted_quadratic" => AveragingSpec::WeightedQuadratic {
                a: match r.raw("averaging_a") {
                    None => None,
                    Some(e) => Some(
                        e.value
                            .parse()
                            .map_err(|msg| config_err(e.line, format!("[run] averaging_a: {msg}")))?,
                    ),
                },
            },
            other => return Err(config_err(None, format!("[run] unknown averaging `{other}`"))),
        };
        let cfg = RunConfig {
            problem,
            compressor,
            schedule,
            averaging,
            steps: r.req("steps")?,
            seed: r.or("seed", 0)?,
            workers: r.or("workers", 1)?,
            oversubscribe: r.or("oversubscribe", false)?,
            trace: r.or("trace", false)?,
            yield_stress: r.or("yield_stress", false)?,
            checkpoints_per_epoch: r.or("checkpoints_per_epoch", 10)?,
            timing: r.or("timing", false)?,
            label: r.opt("label")?,
            output: r.opt("output")?,
        };
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(config_err(None, msg));
        if self.steps == 0 {
            return bad("[run] steps must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("[run] workers must be at least 1".into());
        }
        if !self.steps.is_multiple_of(self.workers as u64) {
            return bad(format!(
                "[run] steps = {} is not divisible by workers = {}",
                self.steps, self.workers
            ));
        }
        if self.checkpoints_per_epoch == 0 {
            return bad("[run] checkpoints_per_epoch must be at least 1".into());
        }
        if let Some(label) = &self.label {
            if label.is_empty() || label.contains([',', '"', '\n']) {
                return bad(format!("[run] label `{label}` must be nonempty without commas or quotes"));
            }
        }
        match &self.problem {
            ProblemSpec::SyntheticLogistic { n, d, density, .. } => {
                if *n == 0 || *d == 0 || !(*density > 0.0 && *density <= 1.0) {
                    return bad("[problem] need n, d >= 1 and 0 < density <= 1".into());
                }
            }
            ProblemSpec::Quadratic { n, d, mu, l, .. } => {
                if *n == 0 || *d == 0 || !(*mu > 0.0 && l >= mu) {
                    return bad("[problem] need n, d >= 1 and 0 < mu <= l".into());
                }
            }
            ProblemSpec::Libsvm { lambda, .. } => {
                if lambda.is_some_and(|l| !(l >= 0.0)) {
                    return bad("[problem] lambda must be nonnegative".into());
                }
            }
        }
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                bad(format!("[schedule] {what} must be positive"))
            }
        };
        match &self.schedule {
            ScheduleSpec::Theoretical { mu, a } => {
                if let Some(m) = mu {
                    positive(*m, "mu")?;
                }
                positive(a.resolve(1, Some(1.0)), "a")?;
            }
            ScheduleSpec::Practical { gamma, lambda, a } => {
                positive(*gamma, "gamma")?;
                if let Some(l) = lambda {
                    positive(*l, "lambda")?;
                }
                positive(a.resolve(1, Some(1.0)), "a")?;
            }
            ScheduleSpec::InverseT => {}
            ScheduleSpec::Constant { eta } => positive(*eta, "eta")?,
            ScheduleSpec::Bottou { gamma0, lambda } => {
                positive(*gamma0, "gamma0")?;
                if lambda.is_some_and(|l| !(l >= 0.0)) {
                    return bad("[schedule] lambda must be nonnegative".into());
                }
            }
        }
        self.compressor
            .check()
            .map_err(|e| config_err(None, format!("[compressor] {e}")))?;
        Ok(())
    }

    pub fn averaging_for(&self, schedule_shift: Option<f64>, d: usize, k_eff: Option<f64>) -> Averaging {
        match &self.averaging {
            AveragingSpec::LastIterate => Averaging::LastIterate,
            AveragingSpec::WeightedQuadratic { a } => Averaging::WeightedQuadratic {
                a: a.map(|s| s.resolve(d, k_eff))
                    .or(schedule_shift)
                    .or_else(|| self.schedule.shift().map(|s| s.resolve(d, k_eff)))
                    .unwrap_or(1.0),
            },
        }
    }

    /// Run label: the configured one, or the compressor description.
    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.compressor.to_string().replace(' ', "_"))
    }

    /// Serialises to the configuration format; parsing the result gives `self` back.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let out = &mut out;
        header(out, "problem");
        kv(out, "kind", &problem_kind(&self.problem));
        match &self.problem {
            ProblemSpec::Libsvm {
                path,
                lambda,
                zero_one_labels,
                dim,
            } => {
                kv(out, "path", &path.display());
                if let Some(l) = lambda {
                    kv(out, "lambda", l);
                }
                kv(out, "zero_one_labels", zero_one_labels);
                if let Some(d) = dim {
                    kv(out, "dim", d);
                }
            }
            ProblemSpec::SyntheticLogistic { n, d, density, seed } => {
                kv(out, "n", n);
                kv(out, "d", d);
                kv(out, "density", density);
                kv(out, "seed", seed);
            }
            ProblemSpec::Quadratic { n, d, mu, l, seed } => {
                kv(out, "n", n);
                kv(out, "d", d);
                kv(out, "mu", mu);
                kv(out, "l", l);
                kv(out, "seed", seed);
            }
        }

        header(out, "compressor");
        kv(out, "kind", &self.compressor.kind_name());
        for (k, v) in self.compressor.params() {
            kv(out, k, &v);
        }

        header(out, "schedule");
        match &self.schedule {
            ScheduleSpec::Theoretical { mu, a } => {
                kv(out, "kind", &"theoretical");
                if let Some(m) = mu {
                    kv(out, "mu", m);
                }
                kv(out, "a", a);
            }
            ScheduleSpec::Practical { gamma, lambda, a } => {
                kv(out, "kind", &"practical");
                kv(out, "gamma", gamma);
                if let Some(l) = lambda {
                    kv(out, "lambda", l);
                }
                kv(out, "a", a);
            }
            ScheduleSpec::InverseT => kv(out, "kind", &"inverse_t"),
            ScheduleSpec::Constant { eta } => {
                kv(out, "kind", &"constant");
                kv(out, "eta", eta);
            }
            ScheduleSpec::Bottou { gamma0, lambda } => {
                kv(out, "kind", &"bottou");
                kv(out, "gamma0", gamma0);
                if let Some(l) = lambda {
                    kv(out, "lambda", l);
                }
            }
        }

        header(out, "run");
        kv(out, "steps", &self.steps);
        kv(out, "seed", &self.seed);
        match &self.averaging {
            AveragingSpec::LastIterate => kv(out, "averaging", &"last_iterate"),
            AveragingSpec::WeightedQuadratic { a } => {
                kv(out, "averaging", &"weighted_quadratic");
                if let Some(a) = a {
                    kv(out, "averaging_a", a);
                }
            }
        }
        kv(out, "workers", &self.workers);
        kv(out, "oversubscribe", &self.oversubscribe);
        kv(out, "trace", &self.trace);
        kv(out, "yield_stress", &self.yield_stress);
        kv(out, "checkpoints_per_epoch", &self.checkpoints_per_epoch);
        kv(out, "timing", &self.timing);
        if let Some(l) = &self.label {
            kv(out, "label", l);
        }
        if let Some(o) = &self.output {
            kv(out, "output", &o.display());
        }
        std::mem::take(out)
    }
}

fn header(out: &mut String, name: &str) {
    if !out.is_empty() {
        out.push('\n');
    }
    let _ = writeln!(out, "[{name}]");
}

fn kv(out: &mut String, key: &str, value: &dyn fmt::Display) {
    let _ = writeln!(out, "{key} = {value}");
}

fn problem_kind(p: &ProblemSpec) -> &'static str {
    match p {
        ProblemSpec::Libsvm { .. } => "libsvm",
        ProblemSpec::SyntheticLogistic { .. } => "synthetic_logistic",
        ProblemSpec::Quadratic { .. } => "quadratic",
    }
}

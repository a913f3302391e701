//! k-contraction compression operators.
//!
//! An operator `comp` is a k-contraction when
//! `E‖x - comp(x)‖² ≤ (1 - k/d)‖x‖²` for every `x`. Every operator here
//! takes its randomness from an explicit stream, so runs are reproducible and
//! parallel workers can use independent streams.

mod contraction;

pub use contraction::{contraction_estimate, contraction_exact, contraction_monte_carlo};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CompressionError {
    #[error("k = {k} must satisfy 1 <= k <= d = {d}")]
    KOutOfRange { k: usize, d: usize },
    #[error("p = {0} must satisfy 0 < p <= 1")]
    POutOfRange(f64),
    #[error("s = {0} must be at least 1")]
    SOutOfRange(usize),
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("invalid compressor spec: {0}")]
    Spec(String),
    #[error("sparse entries must have strictly increasing indices below {dim}")]
    BadEntries { dim: usize },
}

/// Compressed vector: index/value pairs with strictly increasing indices in `[0, dim)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseUpdate {
    dim: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseUpdate {
    pub fn empty(dim: usize) -> Self {
        SparseUpdate {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_entries(dim: usize, entries: &[(usize, f64)]) -> Result<Self, CompressionError> {
        let ordered = entries.windows(2).all(|w| w[0].0 < w[1].0);
        if !ordered || entries.last().is_some_and(|&(j, _)| j >= dim) {
            return Err(CompressionError::BadEntries { dim });
        }
        Ok(SparseUpdate {
            dim,
            indices: entries.iter().map(|e| e.0).collect(),
            values: entries.iter().map(|e| e.1).collect(),
        })
    }

    /// Keeps `x` on the sorted index set `indices`, copying values.
    fn gather(x: &[f64], indices: Vec<usize>) -> Self {
        let values = indices.iter().map(|&j| x[j]).collect();
        SparseUpdate {
            dim: x.len(),
            indices,
            values,
        }
    }

    pub fn clear(&mut self, dim: usize) {
        self.dim = dim;
        self.indices.clear();
        self.values.clear();
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (j, v) in self.iter() {
            out[j] = v;
        }
        out
    }

    /// `x - self`, computed only on the stored coordinates.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = x.to_vec();
        for (j, v) in self.iter() {
            r[j] -= v;
        }
        r
    }

    /// `‖x - self‖²`.
    pub fn residual_sq_norm(&self, x: &[f64]) -> f64 {
        let mut total: f64 = x.iter().map(|v| v * v).sum();
        for (j, v) in self.iter() {
            total += (x[j] - v).powi(2) - x[j] * x[j];
        }
        total.max(0.0)
    }
}

/// Order in which equal magnitudes are taken by [`top_k_with_ties`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    LowestIndex,
    HighestIndex,
}

/// The `k` largest-magnitude entries of `x`; equal magnitudes go to the lower index.
pub fn top_k(x: &[f64], k: usize) -> Result<SparseUpdate, CompressionError> {
    top_k_with_ties(x, k, TieBreak::LowestIndex)
}

pub fn top_k_with_ties(x: &[f64], k: usize, ties: TieBreak) -> Result<SparseUpdate, CompressionError> {
    let d = x.len();
    if k == 0 || k > d {
        return Err(CompressionError::KOutOfRange { k, d });
    }
    let mut idx: Vec<usize> = (0..d).collect();
    if k < d {
        // Strict total order: magnitude descending, then the tie rule.
        idx.select_nth_unstable_by(k - 1, |&a, &b| {
            x[b].abs().total_cmp(&x[a].abs()).then(match ties {
                TieBreak::LowestIndex => a.cmp(&b),
                TieBreak::HighestIndex => b.cmp(&a),
            })
        });
        idx.truncate(k);
        idx.sort_unstable();
    }
    Ok(SparseUpdate::gather(x, idx))
}

/// Keeps the coordinates in `subset`, which must be sorted and in range.
pub fn rand_k_subset(x: &[f64], subset: &[usize]) -> SparseUpdate {
    debug_assert!(subset.windows(2).all(|w| w[0] < w[1]));
    SparseUpdate::gather(x, subset.to_vec())
}

/// Keeps a uniformly random `k`-subset of the coordinates of `x`.
pub fn rand_k<R: Rng + ?Sized>(x: &[f64], k: usize, rng: &mut R) -> Result<SparseUpdate, CompressionError> {
    let d = x.len();
    if k == 0 || k > d {
        return Err(CompressionError::KOutOfRange { k, d });
    }
    let mut idx = if k == d {
        (0..d).collect()
    } else {
        rand::seq::index::sample(rng, d, k).into_vec()
    };
    idx.sort_unstable();
    Ok(SparseUpdate::gather(x, idx))
}

/// With probability `p` keeps one uniformly random coordinate, otherwise
/// nothing. `E‖x - comp(x)‖² = (1 - p/d)‖x‖²`, so this is a p-contraction
/// and transmits fewer than one coordinate per call on average when `p < 1`.
pub fn rand_p<R: Rng + ?Sized>(x: &[f64], p: f64, rng: &mut R) -> Result<SparseUpdate, CompressionError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(CompressionError::POutOfRange(p));
    }
    let d = x.len();
    if d == 0 || !rng.random_bool(p) {
        return Ok(SparseUpdate::empty(d));
    }
    let j = rng.random_range(0..d);
    Ok(SparseUpdate::gather(x, vec![j]))
}

/// Unbiased stochastic quantisation to `s` levels of `‖x‖₂`.
///
/// Coordinate `i` becomes `‖x‖ sign(x_i) ℓ/s` or `‖x‖ sign(x_i) (ℓ+1)/s`
/// with `ℓ = ⌊s|x_i|/‖x‖⌋`, rounding up with probability `s|x_i|/‖x‖ - ℓ`.
/// Zero levels are not stored.
pub fn qsgd<R: Rng + ?Sized>(x: &[f64], s: usize, rng: &mut R) -> Result<SparseUpdate, CompressionError> {
    if s == 0 {
        return Err(CompressionError::SOutOfRange(s));
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = SparseUpdate::empty(x.len());
    if norm == 0.0 {
        return Ok(out);
    }
    let levels = s as f64;
    for (j, &v) in x.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let r = (levels * v.abs() / norm).min(levels);
        let floor = r.floor();
        let up = r - floor;
        let level = if up > 0.0 && rng.random_bool(up) { floor + 1.0 } else { floor };
        if level > 0.0 {
            out.indices.push(j);
            out.values.push(norm * v.signum() * level / levels);
        }
    }
    Ok(out)
}

/// Which compression operator to apply, with its parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompressorSpec {
    Identity,
    TopK { k: usize },
    RandK { k: usize },
    RandP { p: f64 },
    Qsgd { s: usize },
}

impl CompressorSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CompressorSpec::Identity => "identity",
            CompressorSpec::TopK { .. } => "top_k",
            CompressorSpec::RandK { .. } => "rand_k",
            CompressorSpec::RandP { .. } => "rand_p",
            CompressorSpec::Qsgd { .. } => "qsgd",
        }
    }

    /// Parameter checks that do not depend on the dimension.
    pub fn check(&self) -> Result<(), CompressionError> {
        match *self {
            CompressorSpec::TopK { k } | CompressorSpec::RandK { k } if k == 0 => {
                Err(CompressionError::KOutOfRange { k, d: 0 })
            }
            CompressorSpec::RandP { p } if !(p > 0.0 && p <= 1.0) => Err(CompressionError::POutOfRange(p)),
            CompressorSpec::Qsgd { s } if s == 0 => Err(CompressionError::SOutOfRange(s)),
            _ => Ok(()),
        }
    }

    pub fn validate(&self, d: usize) -> Result<(), CompressionError> {
        self.check()?;
        match *self {
            CompressorSpec::TopK { k } | CompressorSpec::RandK { k } if k > d => {
                Err(CompressionError::KOutOfRange { k, d })
            }
            _ => Ok(()),
        }
    }

    /// The contraction parameter: `k` for top/rand-k, `p` for rand-p, `d`
    /// for identity. `None` for QSGD, which is not parameterised by k.
    pub fn k_eff(&self, d: usize) -> Option<f64> {
        match *self {
            CompressorSpec::Identity => Some(d as f64),
            CompressorSpec::TopK { k } | CompressorSpec::RandK { k } => Some(k as f64),
            CompressorSpec::RandP { p } => Some(p),
            CompressorSpec::Qsgd { .. } => None,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, CompressorSpec::Identity | CompressorSpec::TopK { .. })
    }

    /// Whether the output is a subset of the input coordinates with copied values.
    pub fn is_sparsifier(&self) -> bool {
        !matches!(self, CompressorSpec::Qsgd { .. })
    }

    pub fn compress<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<SparseUpdate, CompressionError> {
        match *self {
            CompressorSpec::Identity => Ok(SparseUpdate::gather(x, (0..x.len()).collect())),
            CompressorSpec::TopK { k } => top_k(x, k),
            CompressorSpec::RandK { k } => rand_k(x, k, rng),
            CompressorSpec::RandP { p } => rand_p(x, p, rng),
            CompressorSpec::Qsgd { s } => qsgd(x, s, rng),
        }
    }

    /// `(key, value)` parameter pairs, as used in run configuration files.
    pub fn params(&self) -> Vec<(&'static str, String)> {
        match *self {
            CompressorSpec::Identity => vec![],
            CompressorSpec::TopK { k } | CompressorSpec::RandK { k } => vec![("k", k.to_string())],
            CompressorSpec::RandP { p } => vec![("p", p.to_string())],
            CompressorSpec::Qsgd { s } => vec![("s", s.to_string())],
        }
    }

    /// Builds a spec from a kind name and a parameter lookup.
    pub fn from_parts<'a>(
        kind: &str,
        param: impl Fn(&str) -> Option<&'a str>,
    ) -> Result<Self, CompressionError> {
        fn num<T: FromStr>(key: &str, v: Option<&str>) -> Result<T, CompressionError> {
            let v = v.ok_or_else(|| CompressionError::Spec(format!("missing `{key}`")))?;
            v.parse()
                .map_err(|_| CompressionError::Spec(format!("bad value `{v}` for `{key}`")))
        }
        let spec = match kind {
            "identity" | "none" => CompressorSpec::Identity,
            "top_k" => CompressorSpec::TopK { k: num("k", param("k"))? },
            "rand_k" => CompressorSpec::RandK { k: num("k", param("k"))? },
            "rand_p" => CompressorSpec::RandP { p: num("p", param("p"))? },
            "qsgd" => CompressorSpec::Qsgd { s: num("s", param("s"))? },
            other => return Err(CompressionError::Spec(format!("unknown compressor `{other}`"))),
        };
        spec.check()?;
        Ok(spec)
    }
}

impl fmt::Display for CompressorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind_name())?;
        for (k, v) in self.params() {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

/// Parses `top_k k=1`, `rand_p p=0.5`, `qsgd s=16`, `identity`.
impl FromStr for CompressorSpec {
    type Err = CompressionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut toks = s.split_whitespace();
        let kind = toks
            .next()
            .ok_or_else(|| CompressionError::Spec("empty spec".into()))?;
        let kind = kind.strip_prefix("compressor=").unwrap_or(kind);
        let mut pairs = Vec::new();
        for t in toks {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| CompressionError::Spec(format!("expected key=value, got `{t}`")))?;
            if !matches!(k, "k" | "p" | "s") {
                return Err(CompressionError::Spec(format!("unknown parameter `{k}`")));
            }
            pairs.push((k, v));
        }
        CompressorSpec::from_parts(kind, |key| {
            pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
        })
    }
}

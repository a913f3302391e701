//! Bit-cost model for transmitted updates.
//!
//! These are modeled counts, not the output of a real encoder. A sparse
//! update costs `value_bits` per value plus the index bits; a dense update
//! costs `dense_bits_per_coord` per coordinate; QSGD uses the smaller of a
//! naive and an Elias-coded estimate.

use serde::Serialize;
use thiserror::Error;

use crate::compression::{CompressorSpec, SparseUpdate};

#[derive(Debug, Error, PartialEq)]
pub enum CommError {
    #[error("sparse update needs 1 <= k <= d, got k = {k}, d = {d}")]
    OutOfRange { k: usize, d: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IndexBits {
    /// `⌈log₂ d⌉` bits per index.
    CeilLog2,
    Fixed(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CostModel {
    pub value_bits: u32,
    pub index_bits: IndexBits,
    pub dense_bits_per_coord: u32,
    /// Count QSGD on the nonzero coordinates only instead of the full dimension.
    pub qsgd_sparse_aware: bool,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            value_bits: 32,
            index_bits: IndexBits::CeilLog2,
            dense_bits_per_coord: 32,
            qsgd_sparse_aware: false,
        }
    }
}

/// `⌈log₂ n⌉` for `n ≥ 1`.
pub fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

impl CostModel {
    pub fn bits_per_index(&self, d: usize) -> u64 {
        match self.index_bits {
            IndexBits::CeilLog2 => ceil_log2(d as u64) as u64,
            IndexBits::Fixed(b) => b as u64,
        }
    }

    pub fn bits_dense(&self, d: usize) -> u64 {
        d as u64 * self.dense_bits_per_coord as u64
    }

    /// Bits for one transmitted update produced by `spec`.
    pub fn bits_for_update(&self, spec: &CompressorSpec, update: &SparseUpdate) -> f64 {
        let d = update.dim();
        match spec {
            CompressorSpec::Identity => self.bits_dense(d) as f64,
            CompressorSpec::Qsgd { s } if self.qsgd_sparse_aware => bits_qsgd_sparse_aware(update.nnz(), *s),
            CompressorSpec::Qsgd { s } => bits_qsgd(d, *s),
            _ => update.nnz() as f64 * (self.value_bits as u64 + self.bits_per_index(d)) as f64,
        }
    }
}

/// `k · (value_bits + index_bits)` for a `k`-sparse update of a `d`-vector.
pub fn bits_sparse(k: usize, d: usize, model: &CostModel) -> Result<u64, CommError> {
    if k == 0 || k > d {
        return Err(CommError::OutOfRange { k, d });
    }
    Ok(k as u64 * (model.value_bits as u64 + model.bits_per_index(d)))
}

/// QSGD bits for `d` coordinates at `s` levels:
/// `min{(⌈log₂ s⌉ + 1)·d, 3s(s + √d) + 32}`.
pub fn bits_qsgd(d: usize, s: usize) -> f64 {
    let naive = (ceil_log2(s as u64) as f64 + 1.0) * d as f64;
    let s = s as f64;
    let elias = 3.0 * s * (s + (d as f64).sqrt()) + 32.0;
    naive.min(elias)
}

/// QSGD sending only its `nnz` nonzero coordinates and their indices.
pub fn bits_qsgd_sparse_aware(nnz: usize, s: usize) -> f64 {
    bits_qsgd(nnz, s)
}

/// Running total of transmitted bits.
#[derive(Debug, Clone, Default)]
pub struct BitTracker {
    total: f64,
}

impl BitTracker {
    pub fn add(&mut self, bits: f64) -> f64 {
        self.total += bits;
        self.total
    }

    pub fn total(&self) -> f64 {
        self.total
    }
}

/// Prefix sums of per-iteration bit counts.
pub fn track(per_iteration_bits: &[f64]) -> Vec<f64> {
    let mut tracker = BitTracker::default();
    per_iteration_bits.iter().map(|&b| tracker.add(b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(1024), 10);
        assert_eq!(ceil_log2(1025), 11);
        assert_eq!(ceil_log2(2000), 11);
    }

    #[test]
    fn sparse_bits() {
        let m = CostModel::default();
        assert_eq!(bits_sparse(1, 2000, &m), Ok(43));
        assert_eq!(bits_sparse(2, 2, &m), Ok(66));
        assert!(bits_sparse(2, 2, &m).unwrap() >= m.bits_dense(2));
        assert_eq!(bits_sparse(0, 5, &m), Err(CommError::OutOfRange { k: 0, d: 5 }));
        assert_eq!(bits_sparse(6, 5, &m), Err(CommError::OutOfRange { k: 6, d: 5 }));
    }

    #[test]
    fn dense_to_top1_ratio() {
        let m = CostModel::default();
        let ratio = m.bits_dense(2000) as f64 / bits_sparse(1, 2000, &m).unwrap() as f64;
        assert!((ratio - 64000.0 / 43.0).abs() < 1e-9);
        assert!(ratio > 1e3);
    }

    #[test]
    fn fixed_zero_index_bits_match_dense() {
        let m = CostModel {
            index_bits: IndexBits::Fixed(0),
            ..Default::default()
        };
        for d in [1, 2, 17, 2000] {
            assert_eq!(bits_sparse(d, d, &m).unwrap(), m.bits_dense(d));
        }
    }

    #[test]
    fn qsgd_bits_reference_values() {
        let elias = 48.0 * (16.0 + 2000f64.sqrt()) + 32.0;
        assert!((bits_qsgd(2000, 16) - elias).abs() < 1e-9);
        assert!((bits_qsgd(2000, 16) - 2946.6).abs() < 0.1);
        assert_eq!(bits_qsgd(1, 1), 1.0);
        assert_eq!(bits_qsgd_sparse_aware(0, 1), 0.0);
        let d71 = bits_qsgd_sparse_aware(71, 16);
        assert_eq!(d71, (5.0 * 71.0f64).min(48.0 * (16.0 + 71f64.sqrt()) + 32.0));
    }

    #[test]
    fn qsgd_bits_monotone_in_d() {
        for s in [1, 2, 4, 16, 256] {
            let mut prev = 0.0;
            for d in 1..=10_000 {
                let b = bits_qsgd(d, s);
                assert!(b >= prev);
                assert!(b >= 0.0);
                let naive = (ceil_log2(s as u64) as f64 + 1.0) * d as f64;
                if naive <= 3.0 * s as f64 * (s as f64 + (d as f64).sqrt()) + 32.0 {
                    assert_eq!(b, naive);
                }
                prev = b;
            }
            for nnz in [0, 1, 71, 500] {
                assert!(bits_qsgd_sparse_aware(nnz, s) <= bits_qsgd(10_000, s));
            }
        }
    }

    #[test]
    fn prefix_sums() {
        assert_eq!(track(&[43.0; 100]).last(), Some(&4300.0));
        assert!(track(&[]).is_empty());
        let series = [1.5, 0.0, 7.0, 2.25];
        let cum = track(&series);
        for (i, c) in cum.iter().enumerate() {
            assert_eq!(*c, series[..=i].iter().sum::<f64>());
        }
        assert!(cum.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn update_costs_by_kind() {
        let m = CostModel::default();
        let u = SparseUpdate::from_entries(2000, &[(5, 1.0)]).unwrap();
        assert_eq!(m.bits_for_update(&CompressorSpec::TopK { k: 1 }, &u), 43.0);
        assert_eq!(m.bits_for_update(&CompressorSpec::RandP { p: 0.5 }, &SparseUpdate::empty(2000)), 0.0);
        assert_eq!(m.bits_for_update(&CompressorSpec::Identity, &u), 64000.0);
        assert_eq!(m.bits_for_update(&CompressorSpec::Qsgd { s: 16 }, &u), bits_qsgd(2000, 16));
        let aware = CostModel {
            qsgd_sparse_aware: true,
            ..m
        };
        assert_eq!(aware.bits_for_update(&CompressorSpec::Qsgd { s: 16 }, &u), bits_qsgd(1, 16));
    }
}

//! Activation-aware pruning of quantized weights.
//!
//! Each int8 weight is scored by `channel_max[c] * |q[r][c]|` and the lowest
//! scoring entries are set to zero. No sparse index is produced; the zeros
//! stay in the dense tensor and are absorbed by the entropy coder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::QuantizedTensor;
use crate::tensor::ActivationStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneScope {
    #[default]
    PerTensor,
    PerRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub sparsity: f64,
    #[serde(default)]
    pub scope: PruneScope,
}

impl PruneConfig {
    pub fn new(sparsity: f64, scope: PruneScope) -> Result<Self> {
        if !(0.0..=1.0).contains(&sparsity) {
            return Err(Error::InvalidParameter(format!("sparsity {sparsity} outside [0, 1]")));
        }
        Ok(Self { sparsity, scope })
    }
}

/// Number of entries pruned out of `n`: `floor(sparsity * n)`.
///
/// A tiny epsilon absorbs products like `0.29 * 100 = 28.999999999999996`.
pub fn prune_count(sparsity: f64, n: usize) -> usize {
    ((sparsity * n as f64 + 1e-9).floor() as usize).min(n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub rows: usize,
    pub cols: usize,
    pub scores: Vec<f64>,
}

pub fn prune_scores(q: &QuantizedTensor, stats: &ActivationStats) -> Result<ScoreMatrix> {
    stats
        .check_matches(q.cols)
        .map_err(|e| e.context(format!("scoring `{}`", q.name)))?;
    if q.rows.checked_mul(q.cols) != Some(q.qvalues.len()) {
        return Err(Error::DimensionMismatch(format!(
            "`{}` holds {} values for shape {}x{}",
            q.name,
            q.qvalues.len(),
            q.rows,
            q.cols
        )));
    }
    let cols = q.cols;
    let scores = q
        .qvalues
        .iter()
        .enumerate()
        .map(|(i, &v)| stats.channel_max[i % cols] * (v as f64).abs())
        .collect();
    Ok(ScoreMatrix { rows: q.rows, cols, scores })
}

/// Indices (into `scores`, offset by `base`) of the `k` lowest scores, ties
/// broken by lower index first.
fn lowest_k(scores: &[f64], base: usize, k: usize, out: &mut Vec<usize>) {
    if k == 0 {
        return;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*a].total_cmp(&scores[*b]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    out.extend(idx.into_iter().map(|i| i + base));
}

/// Positions that [`prune`] zeroes, in ascending order.
pub fn prune_mask(scores: &ScoreMatrix, cfg: &PruneConfig) -> Vec<usize> {
    let mut picked = Vec::new();
    match cfg.scope {
        PruneScope::PerTensor => {
            let k = prune_count(cfg.sparsity, scores.scores.len());
            lowest_k(&scores.scores, 0, k, &mut picked);
        }
        PruneScope::PerRow => {
            let k = prune_count(cfg.sparsity, scores.cols);
            for (r, row) in scores.scores.chunks(scores.cols.max(1)).enumerate() {
                lowest_k(row, r * scores.cols, k, &mut picked);
            }
        }
    }
    picked.sort_unstable();
    picked
}

/// Zeroes the lowest-scoring `floor(sparsity * n)` weights (per tensor or per row).
///
/// Everything else, including the dequantization metadata, is left untouched.
pub fn prune(q: &QuantizedTensor, stats: &ActivationStats, cfg: &PruneConfig) -> Result<QuantizedTensor> {
    PruneConfig::new(cfg.sparsity, cfg.scope)?;
    let scores = prune_scores(q, stats)?;
    let mut out = q.clone();
    for i in prune_mask(&scores, cfg) {
        out.qvalues[i] = 0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::ScaleVector;

    fn qt(rows: usize, cols: usize, q: Vec<i8>) -> QuantizedTensor {
        QuantizedTensor {
            name: "q".into(),
            rows,
            cols,
            qvalues: q,
            max_abs: 1.0,
            scale: ScaleVector::identity(cols),
        }
    }

    fn st(v: &[f64]) -> ActivationStats {
        ActivationStats::new("q", v.to_vec()).unwrap()
    }

    #[test]
    fn scores_drop_the_sign() {
        let s = prune_scores(&qt(1, 2, vec![10, -10]), &st(&[1.0, 2.0])).unwrap();
        assert_eq!(s.scores, vec![10.0, 20.0]);
        let s = prune_scores(&qt(1, 2, vec![0, 5]), &st(&[1e9, 0.0])).unwrap();
        assert_eq!(s.scores, vec![0.0, 0.0]);
    }

    #[test]
    fn score_dims_checked() {
        assert!(prune_scores(&qt(1, 2, vec![1, 2]), &st(&[1.0])).is_err());
    }

    #[test]
    fn zero_and_full_sparsity() {
        let q = qt(2, 3, vec![1, -2, 3, -4, 5, -6]);
        let s = st(&[1.0, 0.5, 2.0]);
        let cfg = PruneConfig::new(0.0, PruneScope::PerTensor).unwrap();
        assert_eq!(prune(&q, &s, &cfg).unwrap(), q);
        let cfg = PruneConfig::new(1.0, PruneScope::PerTensor).unwrap();
        assert!(prune(&q, &s, &cfg).unwrap().qvalues.iter().all(|&v| v == 0));
        let cfg = PruneConfig::new(1.0, PruneScope::PerRow).unwrap();
        assert!(prune(&q, &s, &cfg).unwrap().qvalues.iter().all(|&v| v == 0));
    }

    #[test]
    fn ties_prune_lower_index_first() {
        let q = qt(1, 4, vec![3, 3, 3, 3]);
        let cfg = PruneConfig::new(0.5, PruneScope::PerTensor).unwrap();
        let p = prune(&q, &st(&[1.0; 4]), &cfg).unwrap();
        assert_eq!(p.qvalues, vec![0, 0, 3, 3]);
    }

    #[test]
    fn per_row_prunes_each_row() {
        let q = qt(2, 4, vec![1, 2, 3, 4, 40, 30, 20, 10]);
        let cfg = PruneConfig::new(0.25, PruneScope::PerRow).unwrap();
        let p = prune(&q, &st(&[1.0; 4]), &cfg).unwrap();
        assert_eq!(p.qvalues, vec![0, 2, 3, 4, 40, 30, 20, 0]);
    }

    #[test]
    fn bad_sparsity_rejected() {
        assert!(PruneConfig::new(1.5, PruneScope::PerTensor).is_err());
        assert!(PruneConfig::new(-0.1, PruneScope::PerRow).is_err());
    }

    #[test]
    fn prune_count_floor() {
        assert_eq!(prune_count(0.2, 1000), 200);
        assert_eq!(prune_count(0.29, 100), 29);
        assert_eq!(prune_count(0.25, 7), 1);
        assert_eq!(prune_count(1.0, 7), 7);
    }
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Per-feature cut points. A value's bin is the number of cut points `<=` it,
/// so `bin <= b` holds exactly when `x < cuts[b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMapper {
    pub cuts: Vec<Vec<f32>>,
}

impl BinMapper {
    /// Cut points from the distinct values of each column, thinned to
    /// quantiles when there are more than `max_bins`.
    pub fn fit(values: &[f32], n_cols: usize, max_bins: usize) -> Self {
        let n_rows = if n_cols == 0 { 0 } else { values.len() / n_cols };
        let cuts = (0..n_cols)
            .into_par_iter()
            .map(|j| {
                let mut col: Vec<f32> = (0..n_rows).map(|r| values[r * n_cols + j]).collect();
                col.sort_by(f32::total_cmp);
                let mut distinct = col.clone();
                distinct.dedup();
                if distinct.len() <= max_bins {
                    return distinct.split_off(1.min(distinct.len()));
                }
                let mut cuts: Vec<f32> = (1..max_bins).map(|q| col[q * n_rows / max_bins]).collect();
                cuts.dedup();
                cuts.retain(|&c| c > col[0]);
                cuts
            })
            .collect();
        BinMapper { cuts }
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.cuts[feature].len() + 1
    }

    pub fn bin(&self, feature: usize, x: f32) -> u8 {
        self.cuts[feature].partition_point(|&c| c <= x) as u8
    }

    /// Column-major bin codes.
    pub fn transform(&self, values: &[f32], n_cols: usize) -> Vec<Vec<u8>> {
        let n_rows = if n_cols == 0 { 0 } else { values.len() / n_cols };
        (0..n_cols)
            .into_par_iter()
            .map(|j| (0..n_rows).map(|r| self.bin(j, values[r * n_cols + j])).collect())
            .collect()
    }
}

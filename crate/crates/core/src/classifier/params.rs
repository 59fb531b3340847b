use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boosting hyperparameters. The defaults were tuned on synthetic dumps only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Minimum hessian sum on each side of a split.
    pub min_child_weight: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Weight of positive rows; `#neg / #pos` of the training rows when unset.
    pub positive_class_weight: Option<f64>,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample: f64,
    /// Fraction of features considered by each tree.
    pub colsample: f64,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_trees: 400,
            max_depth: 6,
            learning_rate: 0.05,
            min_child_weight: 1.0,
            lambda: 1.0,
            positive_class_weight: None,
            subsample: 0.8,
            colsample: 1.0,
            max_bins: 256,
            seed: 0,
        }
    }
}

impl GbdtParams {
    pub fn check(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::DegenerateConfig(format!("classifier {what}")));
        if self.max_depth == 0 || self.max_depth > 16 {
            return bad("max_depth must be in 1..=16");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return bad("min_child_weight must be non-negative");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if let Some(w) = self.positive_class_weight {
            if !(w > 0.0 && w.is_finite()) {
                return bad("positive_class_weight must be positive");
            }
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) || !(self.colsample > 0.0 && self.colsample <= 1.0) {
            return bad("sampling fractions must be in (0, 1]");
        }
        if !(2..=256).contains(&self.max_bins) {
            return bad("max_bins must be in 2..=256");
        }
        Ok(())
    }
}

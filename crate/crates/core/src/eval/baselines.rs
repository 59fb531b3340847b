//! Inference-only uncertainty baselines scored from the with-context pass.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dump::{ActivationDump, Document, LoadParts, PassBlock, PASS_WITH};
use crate::error::{Error, Result};
use crate::features::output::{free_energy, shannon_entropy};
use crate::numeric::softmax;

pub const WINDOW_SIZE: usize = 9;
pub const WINDOW_TOP_K: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    TokenEntropy,
    SemanticEnergy,
    SlidingWindowEntropy,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [
        Baseline::TokenEntropy,
        Baseline::SemanticEnergy,
        Baseline::SlidingWindowEntropy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::TokenEntropy => "token_entropy",
            Baseline::SemanticEnergy => "semantic_energy",
            Baseline::SlidingWindowEntropy => "sliding_window_entropy",
        }
    }
}

impl std::fmt::Display for Baseline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::DegenerateConfig(format!("unknown baseline `{s}`")))
    }
}

fn row(block: &PassBlock, i: usize) -> Vec<f64> {
    block.full_row(i).unwrap_or_default().iter().map(|&z| z as f64).collect()
}

/// `H(p+)` per summary token.
pub fn token_entropy(block: &PassBlock) -> Result<Vec<f64>> {
    match block {
        PassBlock::Full { rows, .. } => (0..*rows).map(|i| shannon_entropy(&softmax(&row(block, i)))).collect(),
        PassBlock::TopK { records } => Ok(records.iter().map(|r| r.entropy).collect()),
    }
}

/// Free energy `-logsumexp(z+)`; flatter distributions score higher.
pub fn semantic_energy(block: &PassBlock) -> Result<Vec<f64>> {
    match block {
        PassBlock::Full { rows, .. } => (0..*rows).map(|i| free_energy(&row(block, i))).collect(),
        PassBlock::TopK { records } => Ok(records.iter().map(|r| r.energy).collect()),
    }
}

/// Entropy of the `k` largest probabilities renormalized to sum 1.
pub fn truncated_entropy(probs: &[f64], k: usize) -> f64 {
    let mut top = probs.to_vec();
    top.sort_by(|a, b| b.total_cmp(a));
    top.truncate(k.max(1));
    let total: f64 = top.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    top.iter()
        .map(|&p| p / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

/// Mean over a centered window of `w` tokens (clipped at the edges).
pub fn window_mean(values: &[f64], w: usize) -> Vec<f64> {
    let half = w / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

pub fn sliding_window_entropy(block: &PassBlock, w: usize, k: usize) -> Result<Vec<f64>> {
    let per_token: Vec<f64> = match block {
        PassBlock::Full { rows, .. } => (0..*rows).map(|i| truncated_entropy(&softmax(&row(block, i)), k)).collect(),
        PassBlock::TopK { records } => records.iter().map(|r| truncated_entropy(&r.probs, k)).collect(),
    };
    Ok(window_mean(&per_token, w))
}

pub fn score_document(doc: &Document, baseline: Baseline) -> Result<Vec<f64>> {
    let block = doc.pass(PASS_WITH)?;
    match baseline {
        Baseline::TokenEntropy => token_entropy(block),
        Baseline::SemanticEnergy => semantic_energy(block),
        Baseline::SlidingWindowEntropy => sliding_window_entropy(block, WINDOW_SIZE, WINDOW_TOP_K),
    }
}

/// Scores of every summary token of the listed documents (all when `None`),
/// in document order.
pub fn score_dump(dump: &ActivationDump, baseline: Baseline, doc_ids: Option<&[String]>) -> Result<Vec<Vec<f64>>> {
    if !dump.descriptor().has_pass(PASS_WITH) {
        return Err(Error::MissingPass(PASS_WITH.into()));
    }
    let indices: Vec<usize> = match doc_ids {
        Some(ids) => ids.iter().map(|id| dump.doc_index(id)).collect::<Result<_>>()?,
        None => (0..dump.len()).collect(),
    };
    indices
        .par_iter()
        .map(|&i| {
            let doc = dump.load_document_with(i, LoadParts::LOGITS)?;
            score_document(&doc, baseline).map_err(|e| e.context(format!("document `{}`", doc.doc_id)))
        })
        .collect()
}

//! Uncertainty signals and ranking/semantic-similarity features computed from
//! a single pass's next-token distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{clamp_prob, logsumexp, mean, softmax, std_pop, EPSILON};

/// Number of leading predictions kept per token; covers the largest ranking window.
pub const TOP_LIST_LEN: usize = 20;
/// Prefix summed by `topk_cumulative`.
pub const CUMULATIVE_TOP: usize = 10;
/// Similarity above which a prediction counts as a semantic match.
pub const SEMANTIC_MATCH: f64 = 0.7;
pub const RANK_WINDOWS: [usize; 3] = [5, 10, 20];

/// Shannon entropy in nats, `0 log 0 = 0`.
pub fn shannon_entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum())
}

/// Free energy `-logsumexp(z)`.
pub fn free_energy(logits: &[f64]) -> Result<f64> {
    let lse = logsumexp(logits).ok_or(Error::EmptyInput("logit vector"))?;
    Ok(-lse)
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::EmptyInput("probability vector"));
    }
    let mut sum = 0.0;
    for (i, &v) in p.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidDistribution(format!("entry {i} = {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-3 {
        return Err(Error::InvalidDistribution(format!("sums to {sum}")));
    }
    Ok(())
}

/// Top-K encoding of one next-token distribution, as stored in TOPK dumps.
///
/// Entropy and energy are computed over the full vocabulary when the record is
/// produced; the tail beyond the stored ids is a single pseudo-bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKRecord {
    pub ids: Vec<u32>,
    pub probs: Vec<f64>,
    pub tail_mass: f64,
    pub entropy: f64,
    pub energy: f64,
    pub actual_prob: f64,
}

impl TopKRecord {
    pub fn from_logits(logits: &[f64], k: usize, actual_id: u32) -> Result<Self> {
        let view = DistributionView::from_logits(logits, actual_id, Vec::new())?;
        let probs = softmax(logits);
        let order = descending_order(&probs);
        let k = k.min(probs.len());
        let ids: Vec<u32> = order[..k].iter().map(|&i| i as u32).collect();
        let top: Vec<f64> = order[..k].iter().map(|&i| probs[i]).collect();
        let tail_mass = (1.0 - top.iter().sum::<f64>()).max(0.0);
        Ok(TopKRecord {
            ids,
            probs: top,
            tail_mass,
            entropy: view.entropy,
            energy: view.energy,
            actual_prob: view.actual_prob,
        })
    }
}

/// Indices sorted by descending probability, ties by lower index.
fn descending_order(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

/// Everything the output-side features need about one token's distribution.
#[derive(Debug, Clone)]
pub struct DistributionView {
    pub vocab_size: usize,
    pub actual_id: u32,
    pub actual_prob: f64,
    pub entropy: f64,
    pub energy: f64,
    /// Leading prediction ids, most probable first.
    pub top_ids: Vec<u32>,
    pub top_probs: Vec<f64>,
    /// `sum_j j * p_(j)` over the descending-sorted vocabulary (1-based `j`).
    pub weighted_rank_sum: f64,
    /// Cosine similarity of the actual token's embedding to each leading prediction.
    pub topk_cosine_sims: Vec<f64>,
}

impl DistributionView {
    pub fn from_logits(logits: &[f64], actual_id: u32, sims: Vec<f64>) -> Result<Self> {
        if logits.len() < 2 {
            return Err(Error::ShapeViolation(format!(
                "vocabulary of size {} (need >= 2)",
                logits.len()
            )));
        }
        if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
            return Err(Error::NonFinite(format!("logit {i}")));
        }
        let energy = free_energy(logits)?;
        let probs = softmax(logits);
        let mut view = Self::from_full(&probs, actual_id, sims)?;
        view.energy = energy;
        Ok(view)
    }

    /// Builds a view from probabilities alone; `ln p` plays the role of the
    /// logits, so the free energy is 0.
    pub fn from_probs(probs: &[f64], actual_id: u32, sims: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::ShapeViolation(format!(
                "vocabulary of size {} (need >= 2)",
                probs.len()
            )));
        }
        check_distribution(probs)?;
        Self::from_full(probs, actual_id, sims)
    }

    fn from_full(probs: &[f64], actual_id: u32, sims: Vec<f64>) -> Result<Self> {
        let actual = actual_id as usize;
        if actual >= probs.len() {
            return Err(Error::ShapeViolation(format!(
                "actual token {actual_id} outside vocabulary of {}",
                probs.len()
            )));
        }
        let entropy = shannon_entropy(probs)?;
        let order = descending_order(probs);
        let weighted_rank_sum = order
            .iter()
            .enumerate()
            .map(|(j, &i)| (j + 1) as f64 * probs[i])
            .sum();
        let keep = TOP_LIST_LEN.min(probs.len());
        Ok(DistributionView {
            vocab_size: probs.len(),
            actual_id,
            actual_prob: probs[actual],
            entropy,
            energy: 0.0,
            top_ids: order[..keep].iter().map(|&i| i as u32).collect(),
            top_probs: order[..keep].iter().map(|&i| probs[i]).collect(),
            weighted_rank_sum,
            topk_cosine_sims: sims,
        })
    }

    /// View over a TOPK record. The tail mass is spread uniformly over the
    /// `V - K` unstored ids when the Gini rank sum is formed.
    pub fn from_topk(
        record: &TopKRecord,
        vocab_size: usize,
        actual_id: u32,
        sims: Vec<f64>,
    ) -> Result<Self> {
        let k = record.probs.len();
        if vocab_size < 2 || k == 0 || k > vocab_size || record.ids.len() != k {
            return Err(Error::ShapeViolation(format!(
                "top-k record with {k} probs, {} ids over vocabulary {vocab_size}",
                record.ids.len()
            )));
        }
        if record.probs.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::ShapeViolation("top-k probabilities not descending".into()));
        }
        if record.probs.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) || record.tail_mass < 0.0 {
            return Err(Error::InvalidDistribution("top-k probabilities out of range".into()));
        }
        let total = record.probs.iter().sum::<f64>() + record.tail_mass;
        if (total - 1.0).abs() > 1e-3 {
            return Err(Error::InvalidDistribution(format!("top-k mass sums to {total}")));
        }
        let mut weighted_rank_sum: f64 = record
            .probs
            .iter()
            .enumerate()
            .map(|(j, &p)| (j + 1) as f64 * p)
            .sum();
        if vocab_size > k {
            // Positions K+1..=V share the tail equally.
            weighted_rank_sum += record.tail_mass * (k + 1 + vocab_size) as f64 / 2.0;
        }
        Ok(DistributionView {
            vocab_size,
            actual_id,
            actual_prob: record.actual_prob,
            entropy: record.entropy,
            energy: record.energy,
            top_ids: record.ids.clone(),
            top_probs: record.probs.clone(),
            weighted_rank_sum,
            topk_cosine_sims: sims,
        })
    }

    fn top(&self, j: usize) -> f64 {
        self.top_probs.get(j).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShapeFeatures {
    pub entropy: f64,
    pub normalized_entropy: f64,
    pub max_prob: f64,
    pub current_prob: f64,
    pub margin: f64,
    pub ratio: f64,
    pub topk_cumulative: f64,
    pub gini: f64,
    pub perplexity: f64,
    pub energy: f64,
}

impl ShapeFeatures {
    pub const NAMES: [&'static str; 10] = [
        "entropy",
        "normalized_entropy",
        "max_prob",
        "current_prob",
        "margin",
        "ratio",
        "topk_cumulative",
        "gini",
        "perplexity",
        "energy",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.entropy,
            self.normalized_entropy,
            self.max_prob,
            self.current_prob,
            self.margin,
            self.ratio,
            self.topk_cumulative,
            self.gini,
            self.perplexity,
            self.energy,
        ]
    }
}

/// The ten logit-group features.
///
/// Gini follows the descending-sort convention, so it is 0 for a uniform
/// distribution and `(1 - V) / V` for a one-hot one.
pub fn shape_features(view: &DistributionView) -> Result<ShapeFeatures> {
    let v = view.vocab_size;
    if v < 2 {
        return Err(Error::InvalidDistribution(format!("vocabulary of size {v}")));
    }
    if view.top_probs.len() < CUMULATIVE_TOP.min(v) {
        return Err(Error::ShapeViolation(format!(
            "{} leading probabilities stored, need {}",
            view.top_probs.len(),
            CUMULATIVE_TOP.min(v)
        )));
    }
    let vf = v as f64;
    let (p1, p2) = (view.top(0), view.top(1));
    Ok(ShapeFeatures {
        entropy: view.entropy,
        normalized_entropy: view.entropy / vf.ln(),
        max_prob: p1,
        current_prob: view.actual_prob,
        margin: p1 - p2,
        ratio: if p2 > 0.0 { p1 / p2 } else { p1 / EPSILON },
        topk_cumulative: view.top_probs.iter().take(CUMULATIVE_TOP).sum(),
        gini: 2.0 * view.weighted_rank_sum / vf - (vf + 1.0) / vf,
        perplexity: (-clamp_prob(view.actual_prob).ln()).exp(),
        energy: view.energy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SemanticFeatures {
    pub rank: f64,
    pub in_topk: f64,
    pub max_sim: f64,
    pub avg_sim: f64,
    pub top3_sim: f64,
    pub sim_std: f64,
    pub semantic_rank: f64,
}

impl SemanticFeatures {
    /// Column names for window `k`, in registry order.
    pub fn names(k: usize) -> [String; 7] {
        [
            format!("rank_top{k}"),
            format!("in_top{k}"),
            format!("max_sim_top{k}"),
            format!("avg_sim_top{k}"),
            format!("top3_sim_top{k}"),
            format!("sim_std_top{k}"),
            format!("semantic_rank_top{k}"),
        ]
    }

    pub fn values(&self) -> [f64; 7] {
        [
            self.rank,
            self.in_topk,
            self.max_sim,
            self.avg_sim,
            self.top3_sim,
            self.sim_std,
            self.semantic_rank,
        ]
    }
}

/// Ranking and embedding-similarity aggregates over the `k` leading predictions.
pub fn semantic_features(view: &DistributionView, k: usize) -> Result<SemanticFeatures> {
    if !RANK_WINDOWS.contains(&k) {
        return Err(Error::InvalidK(k));
    }
    let sims = &view.topk_cosine_sims;
    if sims.len() < k {
        return Err(Error::ShapeViolation(format!(
            "{} cosine similarities stored, need {k}",
            sims.len()
        )));
    }
    let reachable = k.min(view.vocab_size);
    if view.top_ids.len() < reachable {
        return Err(Error::ShapeViolation(format!(
            "{} leading ids stored, need {reachable}",
            view.top_ids.len()
        )));
    }
    let rank = view.top_ids[..reachable]
        .iter()
        .position(|&id| id == view.actual_id)
        .map_or(0, |p| p + 1);
    let window = &sims[..k];
    let semantic_rank = window
        .iter()
        .position(|&s| s > SEMANTIC_MATCH)
        .map_or(0, |p| p + 1);
    Ok(SemanticFeatures {
        rank: rank as f64,
        in_topk: if rank > 0 { 1.0 } else { 0.0 },
        max_sim: window.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        avg_sim: mean(window),
        top3_sim: mean(&window[..3]),
        sim_std: std_pop(window),
        semantic_rank: semantic_rank as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn entropy_examples() {
        assert!(close(shannon_entropy(&[0.25; 4]).unwrap(), 4f64.ln(), 1e-12));
        assert_eq!(shannon_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        // 40-digit oracle: 0.80181855254333730856...
        assert!(close(
            shannon_entropy(&[0.7, 0.2, 0.1]).unwrap(),
            0.801_818_552_543_337_3,
            1e-12
        ));
        let err = shannon_entropy(&[1.2, -0.2]).unwrap_err();
        assert_eq!(err.code(), "INVALID_DISTRIBUTION");
    }

    #[test]
    fn energy_examples() {
        assert!(close(free_energy(&[0.0; 4]).unwrap(), -(4f64.ln()), 1e-12));
        assert_eq!(free_energy(&[5.0]).unwrap(), -5.0);
        assert!(close(
            free_energy(&[1.0, 2.0, 3.0]).unwrap(),
            -3.407_605_964_444_380_3,
            1e-12
        ));
        assert_eq!(free_energy(&[]).unwrap_err().code(), "EMPTY_INPUT");
        assert!(free_energy(&[1e4, -1e4, 9999.0]).unwrap().is_finite());
    }

    #[test]
    fn shape_uniform_and_onehot() {
        let v = DistributionView::from_probs(&[0.25; 4], 2, vec![]).unwrap();
        let f = shape_features(&v).unwrap();
        assert!(close(f.margin, 0.0, 1e-12));
        assert!(close(f.ratio, 1.0, 1e-9));
        assert!(close(f.gini, 0.0, 1e-12));
        assert!(close(f.normalized_entropy, 1.0, 1e-12));

        let v = DistributionView::from_probs(&[0.0, 1.0, 0.0, 0.0], 1, vec![]).unwrap();
        let f = shape_features(&v).unwrap();
        assert_eq!(f.current_prob, 1.0);
        assert_eq!(f.perplexity, 1.0);
        assert!(close(f.gini, -0.75, 1e-12));
    }

    #[test]
    fn shape_three_way() {
        let v = DistributionView::from_probs(&[0.7, 0.2, 0.1], 0, vec![]).unwrap();
        let f = shape_features(&v).unwrap();
        // sum_j j p_(j) = 1.4 -> 2 * 1.4 / 3 - 4 / 3
        assert!(close(f.margin, 0.5, 1e-9));
        assert!(close(f.ratio, 3.5, 1e-9));
        assert!(close(f.gini, -0.4, 1e-9));
    }

    #[test]
    fn semantic_examples() {
        let mut sims = vec![1.0];
        sims.extend(std::iter::repeat(0.2).take(19));
        let v = DistributionView::from_probs(&[0.6, 0.3, 0.1], 0, sims).unwrap();
        let s = semantic_features(&v, 5).unwrap();
        assert_eq!((s.rank, s.in_topk, s.max_sim), (1.0, 1.0, 1.0));

        let v = DistributionView::from_probs(&[0.6, 0.3, 0.1], 2, vec![0.0; 20]).unwrap();
        let s = semantic_features(&v, 20).unwrap();
        assert_eq!((s.semantic_rank, s.avg_sim), (0.0, 0.0));
        assert_eq!(s.rank, 3.0);

        let v = DistributionView::from_probs(&[0.6, 0.3, 0.1], 0, vec![0.9, 0.5, 0.3, 0.1, 0.1])
            .unwrap();
        let s = semantic_features(&v, 5).unwrap();
        assert!(close(s.top3_sim, 0.566_666_666_666_666_6, 1e-12));
        assert_eq!(s.semantic_rank, 1.0);
        assert_eq!(semantic_features(&v, 7).unwrap_err().code(), "INVALID_K");
    }

    #[test]
    fn actual_token_absent_from_top_k() {
        let mut probs = vec![0.001; 100];
        probs[0] = 1.0 - 0.099;
        let v = DistributionView::from_probs(&probs, 99, vec![0.1; 20]).unwrap();
        let s = semantic_features(&v, 5).unwrap();
        assert_eq!((s.rank, s.in_topk), (0.0, 0.0));
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn entropy_bounded_by_log_v(p in (2usize..40).prop_flat_map(simplex)) {
            let h = shannon_entropy(&p).unwrap();
            let max = (p.len() as f64).ln();
            prop_assert!(h >= 0.0 && h <= max + 1e-12);
        }

        #[test]
        fn energy_shift_identity(z in proptest::collection::vec(-50.0f64..50.0, 1..64), c in -1e3f64..1e3) {
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let lhs = free_energy(&shifted).unwrap();
            let rhs = free_energy(&z).unwrap() - c;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        }

        #[test]
        fn margin_in_unit_interval(p in (2usize..30).prop_flat_map(simplex)) {
            let v = DistributionView::from_probs(&p, 0, vec![]).unwrap();
            let f = shape_features(&v).unwrap();
            prop_assert!(f.margin >= 0.0 && f.margin <= 1.0);
        }

        #[test]
        fn topk_reencoding_matches_full(z in proptest::collection::vec(-8.0f64..8.0, 2..48), a in 0usize..48) {
            let actual = (a % z.len()) as u32;
            let full = DistributionView::from_logits(&z, actual, vec![]).unwrap();
            let rec = TopKRecord::from_logits(&z, z.len(), actual).unwrap();
            let topk = DistributionView::from_topk(&rec, z.len(), actual, vec![]).unwrap();
            let a = shape_features(&full).unwrap().values();
            let b = shape_features(&topk).unwrap().values();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn entropy_maximal_at_uniform() {
        let u = shannon_entropy(&[0.2; 5]).unwrap();
        let skew = shannon_entropy(&[0.2 + 1e-6, 0.2 - 1e-6, 0.2, 0.2, 0.2]).unwrap();
        assert!(u > skew);
    }

    #[test]
    fn topk_gini_uses_uniform_tail() {
        // V = 4, K = 2 with tail 0.2 spread over ranks 3 and 4.
        let rec = TopKRecord {
            ids: vec![0, 1],
            probs: vec![0.5, 0.3],
            tail_mass: 0.2,
            entropy: 1.0,
            energy: -1.0,
            actual_prob: 0.5,
        };
        let v = DistributionView::from_topk(&rec, 4, 0, vec![]).unwrap();
        let full = DistributionView::from_probs(&[0.5, 0.3, 0.1, 0.1], 0, vec![]).unwrap();
        assert!(close(v.weighted_rank_sum, full.weighted_rank_sum, 1e-12));
    }
}

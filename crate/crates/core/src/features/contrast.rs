//! Distributional signals contrasting the with-context, without-context and
//! prior passes.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{clamp_prob, mean, std_pop, EPSILON};

/// Per-token scalars from the three passes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TriPassStats {
    pub p_plus: f64,
    pub p_minus: f64,
    pub h_plus: f64,
    pub h_minus: f64,
    pub e_plus: f64,
    pub e_minus: f64,
    pub prior: Option<PriorStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PriorStats {
    pub p_prior: f64,
    pub h_prior: f64,
}

impl TriPassStats {
    fn prior(&self) -> Result<PriorStats> {
        self.prior
            .ok_or_else(|| Error::MissingPriorPass("prior-dependent features".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaFeatures {
    pub delta_prob: f64,
    pub delta_entropy: f64,
    pub delta_energy: f64,
}

impl DeltaFeatures {
    pub const NAMES: [&'static str; 3] = ["delta_prob", "delta_entropy", "delta_energy"];

    pub fn values(&self) -> [f64; 3] {
        [self.delta_prob, self.delta_entropy, self.delta_energy]
    }
}

pub fn delta_features(t: &TriPassStats) -> DeltaFeatures {
    DeltaFeatures {
        delta_prob: t.p_plus - t.p_minus,
        delta_entropy: t.h_plus - t.h_minus,
        delta_energy: t.e_plus - t.e_minus,
    }
}

/// `KL(p || q)` in nats. `q` is smoothed by `EPSILON` per entry and
/// renormalized before the log, so the result stays non-negative.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::EmptyInput("distribution"));
    }
    let q_total: f64 = q.iter().sum::<f64>() + EPSILON * q.len() as f64;
    Ok(p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / ((qi + EPSILON) / q_total)).ln())
        .sum())
}

/// Jensen-Shannon divergence in nats, bounded by `ln 2`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::EmptyInput("distribution"));
    }
    let half_kl = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(&ai, _)| ai > 0.0)
            .map(|(&ai, &bi)| ai * (ai / (0.5 * (ai + bi))).ln())
            .sum::<f64>()
    };
    Ok(0.5 * half_kl(p, q) + 0.5 * half_kl(q, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PmiFeatures {
    pub pmi: f64,
    pub pmi_vs_prior: f64,
    pub npmi: f64,
}

impl PmiFeatures {
    pub const NAMES: [&'static str; 3] = ["pmi", "pmi_vs_prior", "npmi"];

    pub fn values(&self) -> [f64; 3] {
        [self.pmi, self.pmi_vs_prior, self.npmi]
    }
}

/// PMI against the without-context pass, normalised by `-ln p+`.
pub fn pmi(p_plus: f64, p_minus: f64) -> (f64, f64) {
    let lp = clamp_prob(p_plus).ln();
    let pmi = lp - clamp_prob(p_minus).ln();
    (pmi, pmi / (-lp + EPSILON))
}

pub fn pmi_features(t: &TriPassStats) -> Result<PmiFeatures> {
    let prior = t.prior()?;
    let (pmi, npmi) = pmi(t.p_plus, t.p_minus);
    Ok(PmiFeatures {
        pmi,
        pmi_vs_prior: clamp_prob(t.p_plus).ln() - clamp_prob(prior.p_prior).ln(),
        npmi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyDecomposition {
    pub bhc_info_gain: f64,
    pub ctx_info_gain: f64,
    pub total_info_gain: f64,
    pub bhc_contribution_ratio: f64,
    pub bhc_info_gain_norm: f64,
}

impl EntropyDecomposition {
    pub const NAMES: [&'static str; 5] = [
        "bhc_info_gain",
        "ctx_info_gain",
        "total_info_gain",
        "bhc_contribution_ratio",
        "bhc_info_gain_norm",
    ];

    pub fn values(&self) -> [f64; 5] {
        [
            self.bhc_info_gain,
            self.ctx_info_gain,
            self.total_info_gain,
            self.bhc_contribution_ratio,
            self.bhc_info_gain_norm,
        ]
    }
}

/// Splits the entropy reduction into the part due to the source record and
/// the part due to the rest of the context. Signs are never clamped.
pub fn entropy_decomposition(t: &TriPassStats) -> Result<EntropyDecomposition> {
    let prior = t.prior()?;
    let bhc = t.h_minus - t.h_plus;
    let ctx = prior.h_prior - t.h_minus;
    let total = prior.h_prior - t.h_plus;
    Ok(EntropyDecomposition {
        bhc_info_gain: bhc,
        ctx_info_gain: ctx,
        total_info_gain: total,
        bhc_contribution_ratio: bhc / (total + EPSILON),
        bhc_info_gain_norm: bhc / (prior.h_prior + EPSILON),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriorDecomposition {
    pub halluc_risk_ratio: f64,
    pub patient_specificity: f64,
    pub context_reliance_score: f64,
    pub prob_dominance_order: f64,
    pub patient_specificity_norm: f64,
}

impl PriorDecomposition {
    pub const NAMES: [&'static str; 5] = [
        "halluc_risk_ratio",
        "patient_specificity",
        "context_reliance_score",
        "prob_dominance_order",
        "patient_specificity_norm",
    ];

    pub fn values(&self) -> [f64; 5] {
        [
            self.halluc_risk_ratio,
            self.patient_specificity,
            self.context_reliance_score,
            self.prob_dominance_order,
            self.patient_specificity_norm,
        ]
    }
}

pub fn prior_decomposition(t: &TriPassStats) -> Result<PriorDecomposition> {
    let prior = t.prior()?;
    let candidates = [prior.p_prior, t.p_minus, t.p_plus];
    let mut order = 0;
    for (i, &p) in candidates.iter().enumerate() {
        if p > candidates[order] {
            order = i;
        }
    }
    Ok(PriorDecomposition {
        halluc_risk_ratio: t.p_plus / (prior.p_prior + EPSILON),
        patient_specificity: t.p_plus - prior.p_prior,
        context_reliance_score: (t.p_plus - t.p_minus) / (t.p_minus + EPSILON),
        prob_dominance_order: order as f64,
        patient_specificity_norm: (t.p_plus - prior.p_prior) / (prior.p_prior + EPSILON),
    })
}

/// Conditional PMI: z-scores PMI within each entity-type group of one
/// document. Singleton and constant groups map to 0.
pub fn cpmi(pmi_values: &[f64], entity_types: &[u8]) -> Result<Vec<f64>> {
    if pmi_values.len() != entity_types.len() {
        return Err(Error::DimMismatch {
            left: pmi_values.len(),
            right: entity_types.len(),
        });
    }
    let mut groups: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for (&v, &ty) in pmi_values.iter().zip(entity_types) {
        groups.entry(ty).or_default().push(v);
    }
    let stats: BTreeMap<u8, (usize, f64, f64)> = groups
        .iter()
        .map(|(&ty, vals)| (ty, (vals.len(), mean(vals), std_pop(vals))))
        .collect();
    Ok(pmi_values
        .iter()
        .zip(entity_types)
        .map(|(&v, ty)| {
            let (n, m, s) = stats[ty];
            if n < 2 || s <= 1e-12 * m.abs().max(1.0) {
                0.0
            } else {
                (v - m) / (s + EPSILON)
            }
        })
        .collect())
}

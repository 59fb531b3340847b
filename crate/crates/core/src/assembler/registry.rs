use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dump::ModelDescriptor;
use crate::error::Result;
use crate::features::context::{Lexical, Neighborhood, F93_WINDOWS, NER_BASIC_NAMES, NER_FULL_NAMES, NER_WINDOWS};
use crate::features::contrast::{DeltaFeatures, EntropyDecomposition, PmiFeatures, PriorDecomposition};
use crate::features::output::{SemanticFeatures, ShapeFeatures, RANK_WINDOWS};
use crate::features::schedule::{make_schedule, SamplingSchedule};
use crate::features::FeatureConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Logit,
    Contrast,
    Ranking,
    Neighborhood,
    MedicalKeyword,
    Ner,
    Lexical,
    Pmi,
    EntropyDecomposition,
    PriorDecomposition,
    Hidden,
    HiddenChange,
    AttentionSnapshot,
    AttentionDrift,
    Rollout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub group: Group,
}

/// Ordered feature columns of one configuration on one model shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRegistry {
    pub config: FeatureConfig,
    pub columns: Vec<Column>,
    pub schedule: SamplingSchedule,
    /// Notes on counts and dropped columns.
    pub log: Vec<String>,
}

impl FeatureRegistry {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn group_count(&self, group: Group) -> usize {
        self.columns.iter().filter(|c| c.group == group).count()
    }

    /// Hex sha256 over the configuration and column names.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config.as_str().as_bytes());
        for c in &self.columns {
            h.update(b"\n");
            h.update(c.name.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Keeps the columns for which `keep` holds, logging each dropped name.
    pub(crate) fn retain(&mut self, mut keep: impl FnMut(&Column) -> bool, reason: &str) -> Vec<String> {
        let mut dropped = Vec::new();
        self.columns.retain(|c| {
            let k = keep(c);
            if !k {
                dropped.push(c.name.clone());
            }
            k
        });
        if !dropped.is_empty() {
            self.log.push(format!("dropped {} columns ({reason}): {}", dropped.len(), dropped.join(", ")));
        }
        dropped
    }
}

/// Feature totals printed in the configuration captions for the two
/// reference model shapes.
pub fn caption_total(config: FeatureConfig, n_layers: usize) -> Option<usize> {
    match (config, n_layers) {
        (FeatureConfig::F93, 32 | 80) => Some(93),
        (FeatureConfig::F120, 32 | 80) => Some(120),
        (FeatureConfig::F204, 32 | 80) => Some(204),
        (FeatureConfig::Fmax, 32) => Some(454),
        (FeatureConfig::Fmax, 80) => Some(886),
        _ => None,
    }
}

struct Builder(Vec<Column>);

impl Builder {
    fn add(&mut self, group: Group, name: impl Into<String>) {
        self.0.push(Column {
            name: name.into(),
            group,
        });
    }

    fn add_all<S: Into<String>>(&mut self, group: Group, names: impl IntoIterator<Item = S>) {
        for n in names {
            self.add(group, n);
        }
    }
}

pub fn registry(descriptor: &ModelDescriptor, config: FeatureConfig) -> Result<FeatureRegistry> {
    let schedule = make_schedule(descriptor, config)?;
    let mut b = Builder(Vec::new());
    b.add_all(Group::Logit, ShapeFeatures::NAMES);
    b.add_all(Group::Contrast, DeltaFeatures::NAMES);
    for k in RANK_WINDOWS {
        b.add_all(Group::Ranking, SemanticFeatures::names(k));
    }
    let windows: &[usize] = if config == FeatureConfig::F93 {
        &F93_WINDOWS
    } else {
        &NER_WINDOWS
    };
    for &w in windows {
        for n in Neighborhood::NAMES {
            b.add(Group::Neighborhood, format!("{n}_w{w}"));
        }
        b.add(Group::Neighborhood, format!("medical_density_w{w}"));
    }
    match config {
        FeatureConfig::F93 => b.add(Group::MedicalKeyword, "is_medical"),
        FeatureConfig::F120 => b.add_all(Group::Ner, NER_BASIC_NAMES),
        _ => b.add_all(Group::Ner, NER_FULL_NAMES),
    }
    b.add_all(Group::Lexical, Lexical::NAMES);
    b.add_all(Group::Lexical, ["baseline_prob", "baseline_entropy"]);
    if config.needs_prior() {
        b.add_all(Group::Pmi, PmiFeatures::NAMES);
        b.add_all(Group::EntropyDecomposition, EntropyDecomposition::NAMES);
        b.add_all(Group::PriorDecomposition, PriorDecomposition::NAMES);
    }
    for &l in &schedule.hidden_layers {
        b.add_all(
            Group::Hidden,
            [format!("hidden_norm_l{l}"), format!("hidden_mean_l{l}"), format!("hidden_std_l{l}")],
        );
    }
    for &(a, c) in &schedule.change_pairs {
        b.add_all(
            Group::HiddenChange,
            [format!("layer_change_l{a}_to_l{c}"), format!("layer_cosine_l{a}_to_l{c}")],
        );
    }
    for &(l, h) in &schedule.snapshot_pairs {
        b.add_all(
            Group::AttentionSnapshot,
            [format!("attn_entropy_l{l}_h{h}"), format!("attn_to_bhc_l{l}_h{h}"), format!("attn_max_l{l}_h{h}")],
        );
    }
    for &(a, c) in &schedule.drift_pairs {
        for &h in &schedule.drift_heads {
            b.add(Group::AttentionDrift, format!("attn_drift_l{a}_l{c}_h{h}"));
        }
    }
    for &l in &schedule.rollout_checkpoints {
        b.add_all(
            Group::Rollout,
            [format!("rollout_to_bhc_l{l}"), format!("rollout_entropy_l{l}"), format!("rollout_max_weight_l{l}")],
        );
    }

    let count = b.0.len();
    let mut log = vec![
        format!("config {config}: {count} columns from group definitions"),
        format!("schedule: {}", schedule.mapping),
    ];
    if let Some(caption) = caption_total(config, descriptor.n_layers) {
        if caption != count {
            log.push(format!(
                "deviation: caption total is {caption}, group rows sum to {count}; group rows are used"
            ));
        }
    }
    Ok(FeatureRegistry {
        config,
        columns: b.0,
        schedule,
        log,
    })
}

//! Neighborhood smoothness, medical entity and lexical corpus features.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::EPSILON;

pub const F93_WINDOWS: [usize; 3] = [2, 3, 5];
pub const NER_WINDOWS: [usize; 4] = [2, 3, 5, 7];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neighborhood {
    pub neighbor_avg: f64,
    pub neighbor_std: f64,
    pub isolation: f64,
    pub relative_isolation: f64,
}

impl Neighborhood {
    pub const NAMES: [&'static str; 4] =
        ["neighbor_avg", "neighbor_std", "isolation", "relative_isolation"];

    pub fn values(&self) -> [f64; 4] {
        [self.neighbor_avg, self.neighbor_std, self.isolation, self.relative_isolation]
    }
}

fn window(len: usize, i: usize, w: usize) -> impl Iterator<Item = usize> {
    let lo = i.saturating_sub(w);
    let hi = (i + w + 1).min(len);
    (lo..hi).filter(move |&j| j != i)
}

/// Window statistics over up to `w` tokens on each side of `i`, clipped at
/// the sequence edges.
pub fn neighborhood(probs: &[f64], i: usize, w: usize) -> Result<Neighborhood> {
    if i >= probs.len() {
        return Err(Error::ShapeViolation(format!(
            "token {i} outside sequence of {}",
            probs.len()
        )));
    }
    let vals: Vec<f64> = window(probs.len(), i, w).map(|j| probs[j]).collect();
    if vals.is_empty() {
        return Ok(Neighborhood {
            neighbor_avg: 0.0,
            neighbor_std: 0.0,
            isolation: 0.0,
            relative_isolation: 0.0,
        });
    }
    let n = vals.len() as f64;
    let avg = vals.iter().sum::<f64>() / n;
    let std = (vals.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>() / n).sqrt();
    let isolation = probs[i] - avg;
    Ok(Neighborhood {
        neighbor_avg: avg,
        neighbor_std: std,
        isolation,
        relative_isolation: isolation / (std + EPSILON),
    })
}

/// Fraction of flagged tokens in the same window `neighborhood` uses.
pub fn medical_density(flags: &[bool], i: usize, w: usize) -> f64 {
    let (mut hits, mut total) = (0usize, 0usize);
    for j in window(flags.len(), i, w) {
        total += 1;
        hits += flags[j] as usize;
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

const DEFAULT_WORDLIST: &str = include_str!("medical_terms.txt");

/// Case-insensitive medical keyword list, one term per line.
#[derive(Debug, Clone)]
pub struct Wordlist {
    terms: HashSet<String>,
}

impl Default for Wordlist {
    fn default() -> Self {
        Wordlist::parse(DEFAULT_WORDLIST)
    }
}

impl Wordlist {
    pub fn parse(text: &str) -> Self {
        let terms = text
            .lines()
            .map(|l| l.trim())
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.to_lowercase())
            .collect();
        Wordlist { terms }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Wordlist::parse(&text))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Matches a token after trimming whitespace and edge punctuation.
    pub fn matches(&self, token: &str) -> bool {
        let core = token.trim_matches(|c: char| !c.is_alphanumeric());
        !core.is_empty() && self.terms.contains(&core.to_lowercase())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityType {
    #[default]
    O,
    #[serde(alias = "DRUG")]
    Chemical,
    Disease,
    Gene,
    Cancer,
    Anatomy,
    Pathology,
    Organism,
    Cell,
    Tissue,
    Procedure,
    OtherEntity,
}

impl EntityType {
    pub const ALL: [EntityType; 12] = [
        EntityType::O,
        EntityType::Chemical,
        EntityType::Disease,
        EntityType::Gene,
        EntityType::Cancer,
        EntityType::Anatomy,
        EntityType::Pathology,
        EntityType::Organism,
        EntityType::Cell,
        EntityType::Tissue,
        EntityType::Procedure,
        EntityType::OtherEntity,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        EntityType::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::UnknownEntity(code.to_string()))
    }

    pub fn name(self) -> &'static str {
        match self {
            EntityType::O => "O",
            EntityType::Chemical => "CHEMICAL",
            EntityType::Disease => "DISEASE",
            EntityType::Gene => "GENE",
            EntityType::Cancer => "CANCER",
            EntityType::Anatomy => "ANATOMY",
            EntityType::Pathology => "PATHOLOGY",
            EntityType::Organism => "ORGANISM",
            EntityType::Cell => "CELL",
            EntityType::Tissue => "TISSUE",
            EntityType::Procedure => "PROCEDURE",
            EntityType::OtherEntity => "OTHER_ENTITY",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_uppercase();
        if upper == "DRUG" {
            return Ok(EntityType::Chemical);
        }
        EntityType::ALL
            .iter()
            .copied()
            .find(|e| e.name() == upper)
            .ok_or_else(|| Error::UnknownEntity(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NerSource {
    #[default]
    None,
    Vocab,
    Ner,
    Both,
}

impl NerSource {
    pub fn confidence(self) -> f64 {
        match self {
            NerSource::None => 0.0,
            NerSource::Vocab => 0.6,
            NerSource::Ner => 0.85,
            NerSource::Both => 1.0,
        }
    }
}

/// One `ner.json` entry. Tokens without an entry are non-entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerRecord {
    pub token_index: usize,
    pub entity_type: EntityType,
    pub source: NerSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct NerAnnotation {
    pub entity_type: EntityType,
    pub source: NerSource,
}

impl NerAnnotation {
    pub fn new(entity_type: EntityType, source: NerSource) -> Result<Self> {
        let a = NerAnnotation {
            entity_type,
            source,
        };
        a.check()?;
        Ok(a)
    }

    pub fn is_medical(&self) -> bool {
        self.entity_type != EntityType::O
    }

    pub fn confidence(&self) -> f64 {
        self.source.confidence()
    }

    /// Entity and source must agree on whether the token is an entity.
    pub fn check(&self) -> Result<()> {
        if (self.entity_type == EntityType::O) != (self.source == NerSource::None) {
            return Err(Error::UnknownEntity(format!(
                "entity {} with source {:?}",
                self.entity_type, self.source
            )));
        }
        Ok(())
    }
}

/// Expands sparse `ner.json` records into one annotation per summary token.
pub fn annotations_from_records(records: &[NerRecord], n_tokens: usize) -> Result<Vec<NerAnnotation>> {
    let mut out = vec![NerAnnotation::default(); n_tokens];
    for r in records {
        let slot = out.get_mut(r.token_index).ok_or_else(|| {
            Error::ShapeViolation(format!(
                "ner entry for token {} beyond {n_tokens} tokens",
                r.token_index
            ))
        })?;
        *slot = NerAnnotation::new(r.entity_type, r.source)?;
    }
    Ok(out)
}

pub const NER_BASIC_NAMES: [&str; 3] = ["is_medical", "ner_entity_type", "medical_confidence"];
pub const NER_FULL_NAMES: [&str; 10] = [
    "is_medical",
    "ner_entity_type",
    "medical_confidence",
    "ner_is_chemical",
    "ner_is_disease",
    "ner_is_gene",
    "ner_is_cancer",
    "ner_is_anatomy",
    "ner_is_pathology",
    "ner_is_high_risk",
];

/// The three-feature entity block followed, when `one_hot`, by the entity
/// flags and the high-risk indicator.
pub fn ner_features(a: &NerAnnotation, one_hot: bool) -> Result<Vec<f64>> {
    a.check()?;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let mut out = vec![
        flag(a.is_medical()),
        a.entity_type.code() as f64,
        a.confidence(),
    ];
    if one_hot {
        let t = a.entity_type;
        out.extend([
            flag(t == EntityType::Chemical),
            flag(t == EntityType::Disease),
            flag(t == EntityType::Gene),
            flag(t == EntityType::Cancer),
            flag(t == EntityType::Anatomy),
            flag(t == EntityType::Pathology),
            flag(matches!(t, EntityType::Chemical | EntityType::Cancer)),
        ]);
    }
    Ok(out)
}

/// Token frequency tables over the training split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub freq: HashMap<String, u64>,
    pub doc_freq: HashMap<String, u64>,
    pub n_documents: u64,
    pub total_tokens: u64,
}

impl CorpusStats {
    /// Each item is one document's token texts.
    pub fn build<'a, D, T>(docs: D) -> Self
    where
        D: IntoIterator<Item = T>,
        T: IntoIterator<Item = &'a str>,
    {
        let mut stats = CorpusStats::default();
        for doc in docs {
            stats.n_documents += 1;
            let mut seen = HashSet::new();
            for tok in doc {
                stats.total_tokens += 1;
                *stats.freq.entry(tok.to_string()).or_default() += 1;
                if seen.insert(tok) {
                    *stats.doc_freq.entry(tok.to_string()).or_default() += 1;
                }
            }
        }
        stats
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lexical {
    pub freq: f64,
    pub freq_normalized: f64,
    pub freq_log: f64,
    pub idf: f64,
    pub rarity: f64,
}

impl Lexical {
    pub const NAMES: [&'static str; 5] = ["freq", "freq_normalized", "freq_log", "idf", "rarity"];

    pub fn values(&self) -> [f64; 5] {
        [self.freq, self.freq_normalized, self.freq_log, self.idf, self.rarity]
    }
}

pub fn lexical(token: &str, stats: &CorpusStats) -> Lexical {
    let freq = stats.freq.get(token).copied().unwrap_or(0) as f64;
    let df = stats.doc_freq.get(token).copied().unwrap_or(0) as f64;
    let n = stats.n_documents as f64;
    let freq_normalized = if stats.total_tokens == 0 {
        0.0
    } else {
        freq / stats.total_tokens as f64
    };
    let idf = if n > 0.0 { (n / (df + 1.0)).ln() } else { 0.0 };
    Lexical {
        freq,
        freq_normalized,
        freq_log: (freq + 1.0).ln(),
        idf,
        rarity: 1.0 / (freq + 1.0),
    }
}

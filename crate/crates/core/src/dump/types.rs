use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dump::tensor::DType;
use crate::error::{Error, Result};
use crate::features::context::NerRecord;
use crate::features::output::TopKRecord;

pub const FORMAT_NAME: &str = "revprobe-dump";
pub const FORMAT_VERSION: u32 = 1;
pub const PASS_WITH: &str = "with_bhc";
pub const PASS_WITHOUT: &str = "no_bhc";
pub const PASS_PRIOR: &str = "prior";
/// Width of the stored top prediction cosine-similarity rows.
pub const SIMS_WIDTH: usize = 20;
/// Per-layer hidden summary columns: norm, mean, std, l2 and cosine to the next stored layer.
pub const HIDDEN_SUMMARY_WIDTH: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub tokenizer_id: String,
    pub pass_names: Vec<String>,
}

impl ModelDescriptor {
    pub fn check(&self) -> Result<()> {
        if self.n_layers < 1 || self.n_heads < 1 || self.hidden_dim < 1 || self.vocab_size < 2 {
            return Err(Error::ShapeViolation(format!(
                "descriptor L={} H={} d={} V={}",
                self.n_layers, self.n_heads, self.hidden_dim, self.vocab_size
            )));
        }
        for required in [PASS_WITH, PASS_WITHOUT] {
            if !self.has_pass(required) {
                return Err(Error::MissingPass(required.into()));
            }
        }
        Ok(())
    }

    pub fn has_pass(&self, name: &str) -> bool {
        self.pass_names.iter().any(|p| p == name)
    }

    pub fn has_prior(&self) -> bool {
        self.has_pass(PASS_PRIOR)
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("descriptor serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LogitEncoding {
    #[default]
    Full,
    Topk,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogitSpec {
    pub encoding: LogitEncoding,
    /// Storage of FULL logit rows. TOPK scalars are always 32-bit.
    pub dtype: DType,
    pub top_k: Option<usize>,
}

impl Default for LogitSpec {
    fn default() -> Self {
        LogitSpec {
            encoding: LogitEncoding::Full,
            dtype: DType::F16,
            top_k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenSpec {
    pub raw: bool,
    pub summary: bool,
    pub layers: Vec<usize>,
    pub dtype: DType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSpec {
    /// (layer, head) pairs stored in `attn_rows.bin`, in file order.
    pub row_pairs: Vec<(usize, usize)>,
    pub avg_stream: bool,
    pub dtype: DType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub bytes: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentEntry {
    pub doc_id: String,
    pub dir: String,
    /// Context length (source record plus summary tokens).
    pub n_tokens: usize,
    pub n_summary: usize,
    pub files: BTreeMap<String, FileEntry>,
}

/// Everything about a dump except its documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpLayout {
    pub descriptor: ModelDescriptor,
    pub logits: LogitSpec,
    /// Prior pass stored per summary position instead of as one distribution.
    pub prior_per_position: bool,
    pub hidden: Option<HiddenSpec>,
    pub attention: Option<AttentionSpec>,
    pub topk_sims: bool,
    pub ner: bool,
}

impl DumpLayout {
    pub fn check(&self) -> Result<()> {
        self.descriptor.check()?;
        let d = &self.descriptor;
        if self.logits.encoding == LogitEncoding::Topk {
            match self.logits.top_k {
                Some(k) if k >= 1 && k <= d.vocab_size => {}
                other => {
                    return Err(Error::ShapeViolation(format!("top_k {other:?} for V={}", d.vocab_size)))
                }
            }
        }
        if let Some(h) = &self.hidden {
            if !h.raw && !h.summary {
                return Err(Error::ShapeViolation("hidden block with no encoding".into()));
            }
            if h.layers.is_empty()
                || h.layers.windows(2).any(|w| w[1] <= w[0])
                || h.layers.iter().any(|&l| l >= d.n_layers)
            {
                return Err(Error::ShapeViolation(format!("hidden layers {:?}", h.layers)));
            }
        }
        if let Some(a) = &self.attention {
            if let Some(&(l, h)) = a.row_pairs.iter().find(|&&(l, h)| l >= d.n_layers || h >= d.n_heads) {
                return Err(Error::ShapeViolation(format!("attention pair ({l}, {h})")));
            }
            let mut sorted = a.row_pairs.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != a.row_pairs.len() {
                return Err(Error::ShapeViolation("duplicate attention pairs".into()));
            }
        }
        Ok(())
    }

    pub fn prior_rows(&self, n_summary: usize) -> usize {
        if self.prior_per_position || self.logits.encoding == LogitEncoding::Topk {
            n_summary
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    #[serde(flatten)]
    pub layout: DumpLayout,
    pub documents: Vec<DocumentEntry>,
}

/// One token with character offsets into the concatenated context text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpan {
    pub start: usize,
    pub end: usize,
    pub error_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokensFile {
    pub bhc_len: usize,
    pub summary_range: (usize, usize),
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LabelsFile {
    pub spans: Vec<LabelSpan>,
}

/// Logit data of one pass for the summary tokens.
#[derive(Debug, Clone, PartialEq)]
pub enum PassBlock {
    /// Row-major `[rows x vocab]` logits.
    Full { rows: usize, vocab: usize, logits: Vec<f32> },
    TopK { records: Vec<TopKRecord> },
}

impl PassBlock {
    pub fn rows(&self) -> usize {
        match self {
            PassBlock::Full { rows, .. } => *rows,
            PassBlock::TopK { records } => records.len(),
        }
    }

    pub fn full_row(&self, i: usize) -> Option<&[f32]> {
        match self {
            PassBlock::Full { vocab, logits, .. } => logits.get(i * vocab..(i + 1) * vocab),
            PassBlock::TopK { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenBlock {
    pub layers: Vec<usize>,
    pub dim: usize,
    /// `[n_summary x layers x dim]`.
    pub raw: Option<Vec<f32>>,
    /// `[n_summary x layers x 5]`.
    pub summary: Option<Vec<f32>>,
}

impl HiddenBlock {
    pub fn layer_slot(&self, layer: usize) -> Option<usize> {
        self.layers.binary_search(&layer).ok()
    }

    pub fn raw_vector(&self, token: usize, slot: usize) -> Option<&[f32]> {
        let m = self.layers.len();
        let start = (token * m + slot) * self.dim;
        self.raw.as_ref().and_then(|r| r.get(start..start + self.dim))
    }

    pub fn summary_row(&self, token: usize, slot: usize) -> Option<&[f32]> {
        let start = (token * self.layers.len() + slot) * HIDDEN_SUMMARY_WIDTH;
        self.summary
            .as_ref()
            .and_then(|s| s.get(start..start + HIDDEN_SUMMARY_WIDTH))
    }
}

/// Per-summary-token attention rows at the stored (layer, head) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRows {
    pub pairs: Vec<(usize, usize)>,
    pub ctx: usize,
    /// `[n_summary x pairs x ctx]`, zero-padded past each token's position.
    pub data: Vec<f32>,
}

impl AttentionRows {
    pub fn pair_slot(&self, layer: usize, head: usize) -> Option<usize> {
        self.pairs.iter().position(|&p| p == (layer, head))
    }

    pub fn row(&self, token: usize, slot: usize) -> &[f32] {
        let start = (token * self.pairs.len() + slot) * self.ctx;
        &self.data[start..start + self.ctx]
    }
}

/// One fully loaded document (everything except the averaged attention stream).
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub bhc_len: usize,
    pub summary_range: (usize, usize),
    pub tokens: Vec<Token>,
    pub label_spans: Vec<LabelSpan>,
    pub passes: BTreeMap<String, PassBlock>,
    pub hidden: Option<HiddenBlock>,
    pub attention: Option<AttentionRows>,
    /// `[n_summary x 20]`.
    pub topk_sims: Option<Vec<f32>>,
    pub ner: Option<Vec<NerRecord>>,
}

impl Document {
    pub fn n_summary(&self) -> usize {
        self.summary_range.1 - self.summary_range.0
    }

    pub fn summary_tokens(&self) -> &[Token] {
        &self.tokens[self.summary_range.0..self.summary_range.1]
    }

    /// Context position of the `i`-th summary token.
    pub fn position(&self, i: usize) -> usize {
        self.summary_range.0 + i
    }

    pub fn pass(&self, name: &str) -> Result<&PassBlock> {
        self.passes
            .get(name)
            .ok_or_else(|| Error::MissingPass(format!("{name} in {}", self.doc_id)))
    }

    pub fn sims_row(&self, i: usize) -> Option<&[f32]> {
        self.topk_sims
            .as_ref()
            .and_then(|s| s.get(i * SIMS_WIDTH..(i + 1) * SIMS_WIDTH))
    }

    pub fn tokens_file(&self) -> TokensFile {
        TokensFile {
            bhc_len: self.bhc_len,
            summary_range: self.summary_range,
            tokens: self.tokens.clone(),
        }
    }
}

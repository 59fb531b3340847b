use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::params::GbdtParams;
use crate::classifier::train::sigmoid;
use crate::classifier::tree::{Node, Tree};
use crate::error::{Error, Result};
use crate::eval::report::ImportanceRow;

pub const MODEL_MAGIC: &[u8; 8] = b"RPMODEL1";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub n_rows: usize,
    pub n_positive: usize,
    pub positive_weight: f64,
    /// Weighted mean logistic loss before the first tree and after each one.
    pub loss_history: Vec<f64>,
    /// Training documents, when known.
    pub doc_ids: Vec<String>,
    /// F1-maximizing threshold on the training rows.
    pub threshold: f64,
}

/// A boosted ensemble; the score of a row is `sigmoid(base_score + sum of leaves)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UQModel {
    pub trees: Vec<Tree>,
    pub base_score: f64,
    pub registry_hash: String,
    pub feature_names: Vec<String>,
    pub params: GbdtParams,
    /// Total split gain per feature.
    pub gains: Vec<f64>,
    pub training: TrainingSummary,
}

/// Everything but the trees; stored as JSON inside the binary file.
#[derive(Serialize, Deserialize)]
struct Header {
    base_score: f64,
    registry_hash: String,
    feature_names: Vec<String>,
    params: GbdtParams,
    gains: Vec<f64>,
    training: TrainingSummary,
}

impl UQModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn margin(&self, row: &[f32]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn score(&self, row: &[f32]) -> f64 {
        sigmoid(self.margin(row))
    }

    /// Scores of row-major `values`, which must have this model's column count.
    pub fn predict_values(&self, values: &[f32]) -> Result<Vec<f64>> {
        let c = self.n_features();
        if c == 0 || values.len() % c != 0 {
            return Err(Error::DimMismatch {
                left: values.len(),
                right: c,
            });
        }
        Ok(values.par_chunks(c).map(|row| self.score(row)).collect())
    }

    /// Percent of total split gain per feature, in column order. All zeros
    /// for a model without splits.
    pub fn importance(&self) -> Vec<ImportanceRow> {
        let total: f64 = self.gains.iter().sum();
        self.feature_names
            .iter()
            .zip(&self.gains)
            .map(|(f, &g)| ImportanceRow {
                feature: f.clone(),
                percent: if total > 0.0 { 100.0 * g / total } else { 0.0 },
            })
            .collect()
    }

    /// Importance rows sorted by decreasing share, ties by column order.
    pub fn top_features(&self, n: usize) -> Vec<ImportanceRow> {
        let mut rows = self.importance();
        rows.sort_by(|a, b| b.percent.total_cmp(&a.percent));
        rows.truncate(n);
        rows
    }

    pub fn check(&self) -> Result<()> {
        let c = self.n_features();
        if self.gains.len() != c {
            return Err(Error::ShapeViolation(format!("{} gains for {c} features", self.gains.len())));
        }
        if !self.base_score.is_finite() {
            return Err(Error::NonFinite("base score".into()));
        }
        if let Some(i) = self.trees.iter().position(|t| !t.is_well_formed(c)) {
            return Err(Error::ShapeViolation(format!("tree {i} is malformed")));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            base_score: self.base_score,
            registry_hash: self.registry_hash.clone(),
            feature_names: self.feature_names.clone(),
            params: self.params.clone(),
            gains: self.gains.clone(),
            training: self.training.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::json("<model header>", e))?;
        let mut out = Vec::with_capacity(json.len() + 64 + self.trees.len() * 64);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.trees.len() as u32).to_le_bytes());
        for t in &self.trees {
            out.extend_from_slice(&(t.nodes.len() as u32).to_le_bytes());
            for n in &t.nodes {
                match *n {
                    Node::Leaf { value } => {
                        out.push(0);
                        out.extend_from_slice(&value.to_le_bytes());
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                        gain,
                    } => {
                        out.push(1);
                        out.extend_from_slice(&feature.to_le_bytes());
                        out.extend_from_slice(&threshold.to_le_bytes());
                        out.extend_from_slice(&left.to_le_bytes());
                        out.extend_from_slice(&right.to_le_bytes());
                        out.extend_from_slice(&gain.to_le_bytes());
                    }
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptBlock {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 8 + 4 + 8 + 4 || &bytes[..8] != MODEL_MAGIC {
            return Err(corrupt("not a model file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: MODEL_VERSION,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(Error::ChecksumMismatch(path.to_path_buf()));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let len = r.u64().ok_or_else(|| corrupt("truncated header"))? as usize;
        let json = r.take(len).ok_or_else(|| corrupt("truncated header"))?;
        let h: Header = serde_json::from_slice(json).map_err(|e| Error::json(path, e))?;
        let n_trees = r.u32().ok_or_else(|| corrupt("truncated trees"))?;
        let mut trees = Vec::with_capacity(n_trees as usize);
        for _ in 0..n_trees {
            let n_nodes = r.u32().ok_or_else(|| corrupt("truncated tree"))?;
            let mut nodes = Vec::with_capacity(n_nodes as usize);
            for _ in 0..n_nodes {
                let node = match r.take(1).map(|b| b[0]) {
                    Some(0) => r.f64().map(|value| Node::Leaf { value }),
                    Some(1) => (|| {
                        Some(Node::Split {
                            feature: r.u32()?,
                            threshold: f32::from_le_bytes(r.take(4)?.try_into().ok()?),
                            left: r.u32()?,
                            right: r.u32()?,
                            gain: r.f64()?,
                        })
                    })(),
                    _ => None,
                };
                nodes.push(node.ok_or_else(|| corrupt("bad node record"))?);
            }
            trees.push(Tree { nodes });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        let m = UQModel {
            trees,
            base_score: h.base_score,
            registry_hash: h.registry_hash,
            feature_names: h.feature_names,
            params: h.params,
            gains: h.gains,
            training: h.training,
        };
        m.check()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Inspection export of the full model, trees included.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("<model>", e))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

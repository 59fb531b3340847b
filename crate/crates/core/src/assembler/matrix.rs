use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembler::registry::FeatureRegistry;
use crate::dump::tensor::{decode_f32, encode_f32, expect_shape, DType};
use crate::error::{Error, Result};

/// Value written where an input block is absent for one document.
pub const MISSING_SENTINEL: f32 = -999.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocRows {
    pub doc_id: String,
    pub rows: usize,
}

/// Everything about a feature matrix except its values. Rows are grouped by
/// document in `documents` order; within a document, row `j` is summary token `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub registry: FeatureRegistry,
    pub registry_hash: String,
    pub descriptor_hash: String,
    pub documents: Vec<DocRows>,
    pub labels: Vec<u8>,
    pub tokens: Vec<String>,
    /// Column name -> rows holding [`MISSING_SENTINEL`].
    pub missing: BTreeMap<String, Vec<usize>>,
    pub warnings: Vec<String>,
    /// Documents the corpus statistics were built from.
    pub stats_doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub meta: MatrixMeta,
    /// Row-major `[rows x columns]`.
    pub values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.meta.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.meta.registry.len()
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let c = self.n_cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn column(&self, name: &str) -> Option<Vec<f32>> {
        let j = self.meta.registry.index_of(name)?;
        Some((0..self.n_rows()).map(|r| self.row(r)[j]).collect())
    }

    pub fn labels(&self) -> &[u8] {
        &self.meta.labels
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.meta.documents.iter().map(|d| d.doc_id.clone()).collect()
    }

    /// Row range of every document, in order.
    pub fn doc_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.meta
            .documents
            .iter()
            .map(|d| {
                let r = start..start + d.rows;
                start += d.rows;
                r
            })
            .collect()
    }

    /// Row indices of the listed documents, in the order given.
    pub fn rows_of(&self, doc_ids: &[String]) -> Result<Vec<usize>> {
        let ranges = self.doc_ranges();
        let index: BTreeMap<&str, usize> = self
            .meta
            .documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.as_str(), i))
            .collect();
        let mut rows = Vec::new();
        for id in doc_ids {
            let &i = index.get(id.as_str()).ok_or_else(|| Error::UnknownDocument(id.clone()))?;
            rows.extend(ranges[i].clone());
        }
        Ok(rows)
    }

    pub fn check(&self) -> Result<()> {
        let (n, c) = (self.n_rows(), self.n_cols());
        let listed: usize = self.meta.documents.iter().map(|d| d.rows).sum();
        if self.values.len() != n * c || listed != n || self.meta.tokens.len() != n {
            return Err(Error::ShapeViolation(format!(
                "{} values, {n} labels, {listed} document rows, {} tokens for {c} columns",
                self.values.len(),
                self.meta.tokens.len()
            )));
        }
        if self.meta.registry_hash != self.meta.registry.hash() {
            return Err(Error::RegistryMismatch("stored hash does not match the column list".into()));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "row {} column `{}`",
                i / c,
                self.meta.registry.columns[i % c].name
            )));
        }
        Ok(())
    }

    /// Sidecar path for a matrix file: the same path with `.json` appended.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes the binary tensor and its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.check()?;
        let bytes = encode_f32(&[self.n_rows(), self.n_cols()], &self.values, DType::F32)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let side = Self::sidecar_path(path);
        let json = serde_json::to_vec_pretty(&self.meta).map_err(|e| Error::json(&side, e))?;
        fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = Self::sidecar_path(path);
        let json = fs::read(&side).map_err(|e| Error::io(&side, e))?;
        let meta: MatrixMeta = serde_json::from_slice(&json).map_err(|e| Error::json(&side, e))?;
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (shape, values) = decode_f32(&bytes, DType::F32, path)?;
        expect_shape(path, &shape, &[meta.labels.len(), meta.registry.len()])?;
        let m = FeatureMatrix { meta, values };
        m.check()?;
        Ok(m)
    }

    /// Human-readable export: identifiers, label, then one column per feature.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        write!(out, "doc_id,token_index,label")?;
        for name in self.meta.registry.names() {
            write!(out, ",{name}")?;
        }
        writeln!(out)?;
        for (d, range) in self.meta.documents.iter().zip(self.doc_ranges()) {
            for (j, r) in range.enumerate() {
                write!(out, "{},{j},{}", d.doc_id, self.meta.labels[r])?;
                for v in self.row(r) {
                    write!(out, ",{v}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

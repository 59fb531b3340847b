use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use crate::dump::tensor::{decode_f32, decode_u32, expect_shape, DType};
use crate::dump::types::*;
use crate::error::{Error, Result};
use crate::features::context::NerRecord;
use crate::features::output::TopKRecord;

/// Optional blocks to read in [`ActivationDump::load_document_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadParts {
    pub hidden: bool,
    pub attention: bool,
    pub sims: bool,
    pub ner: bool,
}

impl LoadParts {
    pub const ALL: LoadParts = LoadParts {
        hidden: true,
        attention: true,
        sims: true,
        ner: true,
    };
    pub const LOGITS: LoadParts = LoadParts {
        hidden: false,
        attention: false,
        sims: false,
        ner: false,
    };
}

/// Read-only handle on a dump directory. Documents and attention layers are
/// loaded on demand; the handle is `Sync` and may be shared across threads.
#[derive(Debug, Clone)]
pub struct ActivationDump {
    root: PathBuf,
    manifest: Manifest,
    index: HashMap<String, usize>,
}

impl ActivationDump {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join("manifest.json");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::json(&path, e))?;
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let manifest: Manifest = serde_json::from_value(value).map_err(|e| Error::json(&path, e))?;
        if manifest.format != FORMAT_NAME {
            return Err(Error::CorruptBlock {
                path,
                reason: format!("format `{}`", manifest.format),
            });
        }
        manifest.layout.check()?;
        let mut index = HashMap::new();
        for (i, d) in manifest.documents.iter().enumerate() {
            if index.insert(d.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateDocument(d.doc_id.clone()));
            }
        }
        Ok(ActivationDump {
            root,
            manifest,
            index,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn layout(&self) -> &DumpLayout {
        &self.manifest.layout
    }

    pub fn descriptor(&self) -> &ModelDescriptor {
        &self.manifest.layout.descriptor
    }

    pub fn documents(&self) -> &[DocumentEntry] {
        &self.manifest.documents
    }

    pub fn len(&self) -> usize {
        self.manifest.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.documents.is_empty()
    }

    pub fn doc_index(&self, doc_id: &str) -> Result<usize> {
        self.index
            .get(doc_id)
            .copied()
            .ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))
    }

    fn entry(&self, idx: usize) -> Result<&DocumentEntry> {
        self.manifest
            .documents
            .get(idx)
            .ok_or_else(|| Error::UnknownDocument(format!("#{idx}")))
    }

    /// Reads one listed file, checking its length and checksum.
    fn read_file(&self, entry: &DocumentEntry, name: &str) -> Result<(PathBuf, Vec<u8>)> {
        let path = self.root.join(&entry.dir).join(name);
        let listed = entry
            .files
            .get(name)
            .ok_or_else(|| Error::MissingFile(path.clone()))?;
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() as u64 != listed.bytes {
            return Err(Error::CorruptBlock {
                path,
                reason: format!("{} bytes on disk, manifest lists {}", bytes.len(), listed.bytes),
            });
        }
        if crc32fast::hash(&bytes) != listed.crc32 {
            return Err(Error::ChecksumMismatch(path));
        }
        Ok((path, bytes))
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, entry: &DocumentEntry, name: &str) -> Result<T> {
        let (path, bytes) = self.read_file(entry, name)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
    }

    fn read_f32(&self, entry: &DocumentEntry, name: &str, dtype: DType, shape: &[usize]) -> Result<Vec<f32>> {
        let (path, bytes) = self.read_file(entry, name)?;
        let (got, data) = decode_f32(&bytes, dtype, &path)?;
        expect_shape(&path, &got, shape)?;
        Ok(data)
    }

    /// Token records and label spans only.
    pub fn load_tokens(&self, idx: usize) -> Result<(TokensFile, Vec<LabelSpan>)> {
        let entry = self.entry(idx)?;
        let tokens: TokensFile = self.read_json(entry, "tokens.json")?;
        let labels: LabelsFile = self.read_json(entry, "labels.json")?;
        Ok((tokens, labels.spans))
    }

    pub fn load_document(&self, idx: usize) -> Result<Document> {
        self.load_document_with(idx, LoadParts::ALL)
    }

    /// Loads tokens, labels and every pass plus the selected optional blocks;
    /// skipped blocks come back as `None`.
    pub fn load_document_with(&self, idx: usize, parts: LoadParts) -> Result<Document> {
        let entry = self.entry(idx)?;
        self.load_inner(entry, parts)
            .map_err(|e| e.context(format!("document `{}`", entry.doc_id)))
    }

    fn load_inner(&self, entry: &DocumentEntry, parts: LoadParts) -> Result<Document> {
        let layout = self.layout();
        let (tokens, spans) = self.load_tokens(self.doc_index(&entry.doc_id)?)?;
        let n = entry.n_summary;
        let ctx = entry.n_tokens;
        if tokens.tokens.len() != ctx || tokens.summary_range.1.saturating_sub(tokens.summary_range.0) != n {
            return Err(Error::ShapeViolation("tokens.json disagrees with the manifest".into()));
        }
        let mut passes = BTreeMap::new();
        for name in &layout.descriptor.pass_names {
            let rows = if name == PASS_PRIOR { layout.prior_rows(n) } else { n };
            passes.insert(name.clone(), self.load_pass(entry, name, rows)?);
        }
        let hidden = match &layout.hidden {
            Some(spec) if parts.hidden => {
                let m = spec.layers.len();
                let d = layout.descriptor.hidden_dim;
                let raw = if spec.raw {
                    Some(self.read_f32(entry, "hidden.bin", spec.dtype, &[n, m, d])?)
                } else {
                    None
                };
                let summary = if spec.summary {
                    Some(self.read_f32(entry, "hidden_summary.bin", DType::F32, &[n, m, HIDDEN_SUMMARY_WIDTH])?)
                } else {
                    None
                };
                Some(HiddenBlock {
                    layers: spec.layers.clone(),
                    dim: d,
                    raw,
                    summary,
                })
            }
            _ => None,
        };
        let attention = match &layout.attention {
            Some(spec) if parts.attention && !spec.row_pairs.is_empty() => {
                let p = spec.row_pairs.len();
                Some(AttentionRows {
                    pairs: spec.row_pairs.clone(),
                    ctx,
                    data: self.read_f32(entry, "attn_rows.bin", spec.dtype, &[n, p, ctx])?,
                })
            }
            _ => None,
        };
        let topk_sims = if parts.sims && layout.topk_sims {
            Some(self.read_f32(entry, "topk_sims.bin", DType::F32, &[n, SIMS_WIDTH])?)
        } else {
            None
        };
        let ner = if parts.ner && layout.ner && entry.files.contains_key("ner.json") {
            Some(self.read_json::<Vec<NerRecord>>(entry, "ner.json")?)
        } else {
            None
        };
        Ok(Document {
            doc_id: entry.doc_id.clone(),
            bhc_len: tokens.bhc_len,
            summary_range: tokens.summary_range,
            tokens: tokens.tokens,
            label_spans: spans,
            passes,
            hidden,
            attention,
            topk_sims,
            ner,
        })
    }

    fn load_pass(&self, entry: &DocumentEntry, name: &str, rows: usize) -> Result<PassBlock> {
        let layout = self.layout();
        let file = format!("pass_{name}/logits.bin");
        match layout.logits.encoding {
            LogitEncoding::Full => {
                let v = layout.descriptor.vocab_size;
                let logits = self.read_f32(entry, &file, layout.logits.dtype, &[rows, v])?;
                Ok(PassBlock::Full {
                    rows,
                    vocab: v,
                    logits,
                })
            }
            LogitEncoding::Topk => {
                let k = layout.logits.top_k.unwrap_or(0);
                let scalars = self.read_f32(entry, &file, DType::F32, &[rows, k + 4])?;
                let (path, bytes) = self.read_file(entry, &format!("pass_{name}/topk.bin"))?;
                let (shape, ids) = decode_u32(&bytes, &path)?;
                expect_shape(&path, &shape, &[rows, k])?;
                let records = (0..rows)
                    .map(|i| {
                        let s = &scalars[i * (k + 4)..(i + 1) * (k + 4)];
                        TopKRecord {
                            ids: ids[i * k..(i + 1) * k].to_vec(),
                            probs: s[..k].iter().map(|&p| p as f64).collect(),
                            tail_mass: s[k] as f64,
                            entropy: s[k + 1] as f64,
                            energy: s[k + 2] as f64,
                            actual_prob: s[k + 3] as f64,
                        }
                    })
                    .collect();
                Ok(PassBlock::TopK { records })
            }
        }
    }

    /// Head-averaged attention matrices of one document, layer 0 first,
    /// loaded one at a time.
    pub fn stream_attention_layers(&self, idx: usize) -> Result<AttentionStream<'_>> {
        let entry = self.entry(idx)?;
        let has_stream = self.layout().attention.as_ref().is_some_and(|a| a.avg_stream);
        if !has_stream || !entry.files.contains_key(&layer_file(0)) {
            if has_stream && entry.files.keys().any(|k| k.starts_with("attn_avg/")) {
                return Err(Error::OutOfOrder {
                    doc_id: entry.doc_id.clone(),
                    layer: 0,
                });
            }
            return Err(Error::MissingStream(entry.doc_id.clone()));
        }
        Ok(AttentionStream {
            dump: self,
            entry,
            next: 0,
            failed: false,
        })
    }
}

fn layer_file(k: usize) -> String {
    format!("attn_avg/layer_{k}.bin")
}

pub struct AttentionStream<'a> {
    dump: &'a ActivationDump,
    entry: &'a DocumentEntry,
    next: usize,
    failed: bool,
}

impl AttentionStream<'_> {
    pub fn ctx(&self) -> usize {
        self.entry.n_tokens
    }
}

impl Iterator for AttentionStream<'_> {
    type Item = Result<Vec<f32>>;

    fn next(&mut self) -> Option<Self::Item> {
        let l = self.dump.descriptor().n_layers;
        if self.failed || self.next >= l {
            return None;
        }
        let k = self.next;
        self.next += 1;
        let name = layer_file(k);
        if !self.entry.files.contains_key(&name) {
            self.failed = true;
            return Some(Err(Error::OutOfOrder {
                doc_id: self.entry.doc_id.clone(),
                layer: k,
            }));
        }
        let dtype = self.dump.layout().attention.as_ref().map_or(DType::F16, |a| a.dtype);
        let ctx = self.entry.n_tokens;
        let out = self.dump.read_f32(self.entry, &name, dtype, &[ctx, ctx]);
        self.failed = out.is_err();
        Some(out)
    }
}

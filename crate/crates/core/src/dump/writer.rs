use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::dump::tensor::{encode_f32, encode_u32, DType};
use crate::dump::types::*;
use crate::error::{Error, Result};

/// Streaming dump writer. Documents go to disk as they arrive; the manifest
/// is written by [`DumpWriter::finish`], so an unfinished dump never opens.
#[derive(Debug)]
pub struct DumpWriter {
    root: PathBuf,
    layout: DumpLayout,
    documents: Vec<DocumentEntry>,
    seen: HashSet<String>,
}

impl DumpWriter {
    /// Fails if `root` already holds a manifest.
    pub fn create(root: impl Into<PathBuf>, layout: DumpLayout) -> Result<Self> {
        let root = root.into();
        layout.check()?;
        let manifest = root.join("manifest.json");
        if manifest.exists() {
            return Err(Error::Io {
                path: manifest,
                source: std::io::Error::new(std::io::ErrorKind::AlreadyExists, "dump already exists"),
            });
        }
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(DumpWriter {
            root,
            layout,
            documents: Vec::new(),
            seen: HashSet::new(),
        })
    }

    pub fn layout(&self) -> &DumpLayout {
        &self.layout
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes one document. `avg_stream` supplies the head-averaged
    /// `[ctx x ctx]` attention matrices in layer order and is required
    /// exactly when the layout stores the stream.
    pub fn write_document<I>(&mut self, doc: &Document, avg_stream: Option<I>) -> Result<()>
    where
        I: IntoIterator<Item = Vec<f32>>,
    {
        let ctx = format!("document `{}`", doc.doc_id);
        self.write_inner(doc, avg_stream).map_err(|e| e.context(ctx))
    }

    fn write_inner<I>(&mut self, doc: &Document, avg_stream: Option<I>) -> Result<()>
    where
        I: IntoIterator<Item = Vec<f32>>,
    {
        if self.seen.contains(&doc.doc_id) {
            return Err(Error::DuplicateDocument(doc.doc_id.clone()));
        }
        check_document(&self.layout, doc)?;
        let dir = format!("doc_{:05}", self.documents.len());
        let mut files = BTreeMap::new();
        let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
            let path = self.root.join(&dir).join(&name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            files.insert(
                name,
                FileEntry {
                    bytes: bytes.len() as u64,
                    crc32: crc32fast::hash(&bytes),
                },
            );
            Ok(())
        };

        let n = doc.n_summary();
        let ctx_len = doc.tokens.len();
        put("tokens.json".into(), to_json(&doc.tokens_file())?)?;
        put(
            "labels.json".into(),
            to_json(&LabelsFile {
                spans: doc.label_spans.clone(),
            })?,
        )?;
        for (name, block) in &doc.passes {
            let dir = format!("pass_{name}");
            match block {
                PassBlock::Full { rows, vocab, logits } => {
                    let bytes = encode_f32(&[*rows, *vocab], logits, self.layout.logits.dtype)?;
                    put(format!("{dir}/logits.bin"), bytes)?;
                }
                PassBlock::TopK { records } => {
                    let k = self.layout.logits.top_k.unwrap_or(0);
                    let mut scalars = Vec::with_capacity(records.len() * (k + 4));
                    let mut ids = Vec::with_capacity(records.len() * k);
                    for r in records {
                        scalars.extend(r.probs.iter().map(|&p| p as f32));
                        scalars.extend([r.tail_mass, r.entropy, r.energy, r.actual_prob].map(|v| v as f32));
                        ids.extend_from_slice(&r.ids);
                    }
                    put(
                        format!("{dir}/logits.bin"),
                        encode_f32(&[records.len(), k + 4], &scalars, DType::F32)?,
                    )?;
                    put(format!("{dir}/topk.bin"), encode_u32(&[records.len(), k], &ids)?)?;
                }
            }
        }
        if let (Some(spec), Some(h)) = (&self.layout.hidden, &doc.hidden) {
            let m = spec.layers.len();
            if let Some(raw) = &h.raw {
                put("hidden.bin".into(), encode_f32(&[n, m, h.dim], raw, spec.dtype)?)?;
            }
            if let Some(summary) = &h.summary {
                put(
                    "hidden_summary.bin".into(),
                    encode_f32(&[n, m, HIDDEN_SUMMARY_WIDTH], summary, DType::F32)?,
                )?;
            }
        }
        if let (Some(spec), Some(a)) = (&self.layout.attention, &doc.attention) {
            put(
                "attn_rows.bin".into(),
                encode_f32(&[n, a.pairs.len(), ctx_len], &a.data, spec.dtype)?,
            )?;
        }
        if let Some(sims) = &doc.topk_sims {
            put("topk_sims.bin".into(), encode_f32(&[n, SIMS_WIDTH], sims, DType::F32)?)?;
        }
        if let Some(ner) = &doc.ner {
            put("ner.json".into(), to_json(ner)?)?;
        }
        let stream_dtype = self.layout.attention.as_ref().filter(|a| a.avg_stream).map(|a| a.dtype);
        match (stream_dtype, avg_stream) {
            (Some(dtype), Some(stream)) => {
                let mut count = 0;
                for (k, m) in stream.into_iter().enumerate() {
                    if k >= self.layout.descriptor.n_layers {
                        return Err(Error::ShapeViolation("attention stream longer than L".into()));
                    }
                    put(format!("attn_avg/layer_{k}.bin"), encode_f32(&[ctx_len, ctx_len], &m, dtype)?)?;
                    count += 1;
                }
                if count != self.layout.descriptor.n_layers {
                    return Err(Error::ShapeViolation(format!(
                        "attention stream has {count} layers, expected {}",
                        self.layout.descriptor.n_layers
                    )));
                }
            }
            (Some(_), None) => return Err(Error::MissingStream(doc.doc_id.clone())),
            (None, Some(_)) => {
                return Err(Error::ShapeViolation("layout stores no attention stream".into()))
            }
            (None, None) => {}
        }

        self.seen.insert(doc.doc_id.clone());
        self.documents.push(DocumentEntry {
            doc_id: doc.doc_id.clone(),
            dir,
            n_tokens: ctx_len,
            n_summary: n,
            files,
        });
        Ok(())
    }

    pub fn finish(self) -> Result<PathBuf> {
        let manifest = Manifest {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            layout: self.layout,
            documents: self.documents,
        };
        let path = self.root.join("manifest.json");
        let bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(self.root)
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    serde_json::to_vec(value).map_err(|e| Error::json("<memory>", e))
}

fn shape_err(msg: String) -> Error {
    Error::ShapeViolation(msg)
}

/// Payload checks against the layout. Numeric content checks beyond shape and
/// top-k ordering belong to `validate`.
pub(crate) fn check_document(layout: &DumpLayout, doc: &Document) -> Result<()> {
    let d = &layout.descriptor;
    let (s, e) = doc.summary_range;
    if doc.tokens.is_empty() || s > e || e > doc.tokens.len() || doc.bhc_len > s || s == e {
        return Err(shape_err(format!(
            "summary range {:?} with bhc_len {} over {} tokens",
            doc.summary_range,
            doc.bhc_len,
            doc.tokens.len()
        )));
    }
    let n = doc.n_summary();
    let ctx = doc.tokens.len();
    for name in &d.pass_names {
        let block = doc.pass(name)?;
        let rows = if name == PASS_PRIOR { layout.prior_rows(n) } else { n };
        if block.rows() != rows {
            return Err(shape_err(format!("pass {name}: {} rows, expected {rows}", block.rows())));
        }
        match (layout.logits.encoding, block) {
            (LogitEncoding::Full, PassBlock::Full { rows: r, vocab, logits }) => {
                if *vocab != d.vocab_size || logits.len() != r * vocab {
                    return Err(shape_err(format!("pass {name}: logits of vocab {vocab}")));
                }
            }
            (LogitEncoding::Topk, PassBlock::TopK { records }) => {
                let k = layout.logits.top_k.unwrap_or(0);
                for (i, r) in records.iter().enumerate() {
                    if r.probs.len() != k || r.ids.len() != k {
                        return Err(shape_err(format!("pass {name} row {i}: top-k width {}", r.probs.len())));
                    }
                    if r.probs.windows(2).any(|w| w[1] > w[0]) {
                        return Err(shape_err(format!("pass {name} row {i}: top-k probabilities not descending")));
                    }
                    if r.ids.iter().any(|&id| id as usize >= d.vocab_size) {
                        return Err(shape_err(format!("pass {name} row {i}: token id beyond vocabulary")));
                    }
                    let total: f64 = r.probs.iter().sum::<f64>() + r.tail_mass;
                    if (total - 1.0).abs() > 1e-3 || r.tail_mass < 0.0 {
                        return Err(Error::InvalidDistribution(format!(
                            "pass {name} row {i}: top-k mass {total}"
                        )));
                    }
                }
            }
            _ => return Err(shape_err(format!("pass {name}: encoding differs from the manifest"))),
        }
    }
    if let Some(extra) = doc.passes.keys().find(|k| !d.has_pass(k)) {
        return Err(shape_err(format!("pass {extra} not in the descriptor")));
    }
    match (&layout.hidden, &doc.hidden) {
        (Some(spec), Some(h)) => {
            let m = spec.layers.len();
            if h.layers != spec.layers || h.dim != d.hidden_dim {
                return Err(shape_err("hidden block layers or dim differ from the manifest".into()));
            }
            if spec.raw != h.raw.is_some() || spec.summary != h.summary.is_some() {
                return Err(shape_err("hidden encodings differ from the manifest".into()));
            }
            if h.raw.as_ref().is_some_and(|r| r.len() != n * m * h.dim) {
                return Err(shape_err("raw hidden block size".into()));
            }
            if h.summary.as_ref().is_some_and(|r| r.len() != n * m * HIDDEN_SUMMARY_WIDTH) {
                return Err(shape_err("hidden summary block size".into()));
            }
        }
        (None, None) => {}
        _ => return Err(shape_err("hidden block presence differs from the manifest".into())),
    }
    match (&layout.attention, &doc.attention) {
        (Some(spec), Some(a)) => {
            if a.pairs != spec.row_pairs || a.ctx != ctx || a.data.len() != n * a.pairs.len() * ctx {
                return Err(shape_err("attention rows differ from the manifest".into()));
            }
        }
        (Some(spec), None) if spec.row_pairs.is_empty() => {}
        (None, None) => {}
        _ => return Err(shape_err("attention rows presence differs from the manifest".into())),
    }
    match (&doc.topk_sims, layout.topk_sims) {
        (Some(s), true) if s.len() == n * SIMS_WIDTH => {}
        (None, false) => {}
        _ => return Err(shape_err("top-k similarity block differs from the manifest".into())),
    }
    if doc.ner.is_some() && !layout.ner {
        return Err(shape_err("ner annotations in a dump without ner".into()));
    }
    Ok(())
}

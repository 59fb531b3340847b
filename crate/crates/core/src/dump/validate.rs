use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dump::reader::ActivationDump;
use crate::dump::types::*;
use crate::features::context::NerAnnotation;
use crate::features::internal::hidden_summary;

const ROW_TOL: f64 = 1e-3;
const COS_TOL: f64 = 1e-6;
const CROSS_CHECK_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub code: String,
    pub doc_id: String,
    pub token_index: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub documents_checked: usize,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn count(&self, code: &str) -> usize {
        self.findings.iter().filter(|f| f.code == code).count()
    }
}

struct Sink<'a> {
    doc_id: &'a str,
    out: Vec<Finding>,
}

impl Sink<'_> {
    fn push(&mut self, code: &str, token: Option<usize>, detail: impl Into<String>) {
        self.out.push(Finding {
            code: code.into(),
            doc_id: self.doc_id.to_string(),
            token_index: token,
            detail: detail.into(),
        });
    }
}

/// Checks every document against the dump invariants. Documents are checked
/// in parallel; findings come back in document order.
pub fn validate(dump: &ActivationDump) -> ValidationReport {
    let findings: Vec<Vec<Finding>> = (0..dump.len())
        .into_par_iter()
        .map(|i| validate_document(dump, i))
        .collect();
    ValidationReport {
        documents_checked: dump.len(),
        findings: findings.into_iter().flatten().collect(),
    }
}

pub fn validate_document(dump: &ActivationDump, idx: usize) -> Vec<Finding> {
    let entry = &dump.documents()[idx];
    let mut sink = Sink {
        doc_id: &entry.doc_id,
        out: Vec::new(),
    };
    match dump.load_document(idx) {
        Ok(doc) => check_loaded(dump.layout(), &doc, &mut sink),
        Err(e) => sink.push(e.code(), None, e.to_string()),
    }
    if dump.layout().attention.as_ref().is_some_and(|a| a.avg_stream) {
        check_stream(dump, idx, entry.n_tokens, &mut sink);
    }
    sink.out
}

fn check_loaded(layout: &DumpLayout, doc: &Document, sink: &mut Sink) {
    let d = &layout.descriptor;
    let (s, e) = doc.summary_range;
    if doc.bhc_len > s || s >= e || e > doc.tokens.len() {
        sink.push(
            "SUMMARY_RANGE_INVALID",
            None,
            format!("range {:?}, bhc_len {}, {} tokens", doc.summary_range, doc.bhc_len, doc.tokens.len()),
        );
        return;
    }
    let mut last_start = 0;
    for (i, t) in doc.tokens.iter().enumerate() {
        if t.start > t.end || t.start < last_start {
            sink.push("OFFSETS_NOT_MONOTONE", Some(i), format!("[{}, {})", t.start, t.end));
        }
        last_start = t.start;
        if t.id as usize >= d.vocab_size {
            sink.push("TOKEN_ID_OUT_OF_RANGE", Some(i), format!("id {}", t.id));
        }
    }
    let summary = doc.summary_tokens();
    let lo = summary.first().map_or(0, |t| t.start);
    let hi = summary.last().map_or(0, |t| t.end);
    for span in &doc.label_spans {
        if span.start >= span.end {
            sink.push("MALFORMED_SPAN", None, format!("[{}, {})", span.start, span.end));
        } else if span.start < lo || span.end > hi {
            sink.push(
                "SPAN_OUT_OF_RANGE",
                None,
                format!("[{}, {}) outside summary [{lo}, {hi})", span.start, span.end),
            );
        }
    }

    for (name, block) in &doc.passes {
        match block {
            PassBlock::Full { rows, vocab, logits } => {
                for r in 0..*rows {
                    if logits[r * vocab..(r + 1) * vocab].iter().any(|v| !v.is_finite()) {
                        sink.push("NON_FINITE", Some(r), format!("pass {name}"));
                    }
                }
            }
            PassBlock::TopK { records } => {
                for (r, rec) in records.iter().enumerate() {
                    if rec.probs.windows(2).any(|w| w[1] > w[0]) {
                        sink.push("TOPK_NOT_DESCENDING", Some(r), format!("pass {name}"));
                    }
                    let total = rec.probs.iter().sum::<f64>() + rec.tail_mass;
                    if (total - 1.0).abs() > ROW_TOL || rec.probs.iter().any(|&p| p < 0.0) || rec.tail_mass < 0.0 {
                        sink.push("ROW_NOT_STOCHASTIC", Some(r), format!("pass {name}: mass {total}"));
                    }
                    let scalars = [rec.entropy, rec.energy, rec.actual_prob];
                    if scalars.iter().any(|v| !v.is_finite()) {
                        sink.push("NON_FINITE", Some(r), format!("pass {name}"));
                    }
                    if rec.ids.iter().any(|&id| id as usize >= d.vocab_size) {
                        sink.push("TOKEN_ID_OUT_OF_RANGE", Some(r), format!("pass {name} top-k id"));
                    }
                }
            }
        }
    }

    if let Some(h) = &doc.hidden {
        check_hidden(h, doc.n_summary(), sink);
    }
    if let Some(a) = &doc.attention {
        for i in 0..doc.n_summary() {
            let pos = doc.position(i);
            for (slot, &(l, hd)) in a.pairs.iter().enumerate() {
                if let Some((code, detail)) = check_row(a.row(i, slot), pos) {
                    sink.push(code, Some(i), format!("layer {l} head {hd}: {detail}"));
                }
            }
        }
    }
    if let Some(sims) = &doc.topk_sims {
        for (i, row) in sims.chunks_exact(SIMS_WIDTH).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                sink.push("NON_FINITE", Some(i), "top-k similarities");
            } else if row.iter().any(|&v| (v as f64).abs() > 1.0 + COS_TOL) {
                sink.push("COSINE_OUT_OF_RANGE", Some(i), "top-k similarities");
            }
        }
    }
    if let Some(ner) = &doc.ner {
        let mut seen = vec![false; doc.n_summary()];
        for r in ner {
            match seen.get_mut(r.token_index) {
                None => sink.push("NER_OUT_OF_RANGE", Some(r.token_index), "entry beyond summary"),
                Some(flag) => {
                    if *flag {
                        sink.push("NER_INCONSISTENT", Some(r.token_index), "duplicate entry");
                    }
                    *flag = true;
                    if NerAnnotation::new(r.entity_type, r.source).is_err() {
                        sink.push(
                            "NER_INCONSISTENT",
                            Some(r.token_index),
                            format!("entity {} with source {:?}", r.entity_type, r.source),
                        );
                    }
                }
            }
        }
    }
}

fn check_hidden(h: &HiddenBlock, n: usize, sink: &mut Sink) {
    let m = h.layers.len();
    for i in 0..n {
        for slot in 0..m {
            let raw = h.raw_vector(i, slot);
            if raw.is_some_and(|v| v.iter().any(|x| !x.is_finite())) {
                sink.push("NON_FINITE", Some(i), format!("hidden layer {}", h.layers[slot]));
            }
            let Some(row) = h.summary_row(i, slot) else {
                continue;
            };
            if row.iter().any(|x| !x.is_finite()) {
                sink.push("NON_FINITE", Some(i), format!("hidden summary layer {}", h.layers[slot]));
                continue;
            }
            if row[0] < 0.0 || row[2] < 0.0 || row[3] < 0.0 {
                sink.push("NEGATIVE_ENTRY", Some(i), format!("hidden summary layer {}", h.layers[slot]));
            }
            if (row[4] as f64).abs() > 1.0 + COS_TOL {
                sink.push("COSINE_OUT_OF_RANGE", Some(i), format!("hidden summary layer {}", h.layers[slot]));
            }
            if let Some(v) = raw {
                let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
                if let Ok(s) = hidden_summary(&v) {
                    let stored = [row[0] as f64, row[1] as f64, row[2] as f64];
                    let ok = [s.norm, s.mean, s.std]
                        .iter()
                        .zip(stored)
                        .all(|(a, b)| (a - b).abs() <= CROSS_CHECK_TOL * b.abs().max(1.0));
                    if !ok {
                        sink.push(
                            "CROSS_CHECK_FAILED",
                            Some(i),
                            format!("hidden layer {}: raw and summary disagree", h.layers[slot]),
                        );
                    }
                }
            }
        }
    }
}

/// Non-negativity, causal zeros past `pos`, and unit mass on the prefix.
fn check_row(row: &[f32], pos: usize) -> Option<(&'static str, String)> {
    if row.iter().any(|v| !v.is_finite()) {
        return Some(("NON_FINITE", "attention row".into()));
    }
    if let Some(j) = row.iter().position(|&v| v < 0.0) {
        return Some(("NEGATIVE_ENTRY", format!("position {j}")));
    }
    if let Some(j) = row.iter().skip(pos + 1).position(|&v| v != 0.0) {
        return Some(("CAUSAL_VIOLATION", format!("mass at position {}", pos + 1 + j)));
    }
    let sum: f64 = row[..=pos.min(row.len() - 1)].iter().map(|&v| v as f64).sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Some(("ROW_NOT_STOCHASTIC", format!("row sums to {sum:.6}")));
    }
    None
}

fn check_stream(dump: &ActivationDump, idx: usize, ctx: usize, sink: &mut Sink) {
    let stream = match dump.stream_attention_layers(idx) {
        Ok(s) => s,
        Err(e) => {
            sink.push(e.code(), None, e.to_string());
            return;
        }
    };
    for (layer, m) in stream.enumerate() {
        let m = match m {
            Ok(m) => m,
            Err(e) => {
                sink.push(e.code(), None, e.to_string());
                return;
            }
        };
        for r in 0..ctx {
            if let Some((code, detail)) = check_row(&m[r * ctx..(r + 1) * ctx], r) {
                sink.push(code, None, format!("averaged layer {layer} row {r}: {detail}"));
            }
        }
    }
}

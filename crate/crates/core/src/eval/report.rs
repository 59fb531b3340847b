use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{select_threshold, Metrics};
use crate::numeric::{mean, std_pop};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Scores and labels of one document's summary tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScores {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRef {
    pub doc_id: String,
    pub token_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionSets {
    pub tp: Vec<TokenRef>,
    pub fp: Vec<TokenRef>,
    #[serde(rename = "fn")]
    pub fn_: Vec<TokenRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub feature: String,
    pub percent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub micro_f1: f64,
    pub auroc: f64,
    pub auprc: f64,
}

/// Per-fold metrics with their mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: Vec<Metrics>,
    pub fold_doc_ids: Vec<Vec<String>>,
    pub mean: MetricTriple,
    pub std: MetricTriple,
}

impl CvSummary {
    pub fn new(folds: Vec<Metrics>, fold_doc_ids: Vec<Vec<String>>) -> Self {
        let col = |f: fn(&Metrics) -> f64| folds.iter().map(f).collect::<Vec<_>>();
        let (f1, roc, pr) = (col(|m| m.micro_f1), col(|m| m.auroc), col(|m| m.auprc));
        CvSummary {
            mean: MetricTriple {
                micro_f1: mean(&f1),
                auroc: mean(&roc),
                auprc: mean(&pr),
            },
            std: MetricTriple {
                micro_f1: std_pop(&f1),
                auroc: std_pop(&roc),
                auprc: std_pop(&pr),
            },
            folds,
            fold_doc_ids,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMetrics {
    pub method: String,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub method: String,
    pub metrics: Metrics,
    pub threshold: f64,
    pub documents: Vec<DocScores>,
    pub confusion: ConfusionSets,
    #[serde(default)]
    pub importance: Vec<ImportanceRow>,
    #[serde(default)]
    pub cv: Option<CvSummary>,
    #[serde(default)]
    pub baselines: Vec<NamedMetrics>,
}

impl EvalReport {
    /// Pools all tokens, scores them at `threshold` and records the confusion sets.
    pub fn new(method: impl Into<String>, documents: Vec<DocScores>, threshold: f64) -> Result<Self> {
        for d in &documents {
            if d.scores.len() != d.labels.len() || d.tokens.len() != d.labels.len() {
                return Err(Error::DimMismatch {
                    left: d.scores.len(),
                    right: d.labels.len(),
                }
                .context(format!("document `{}`", d.doc_id)));
            }
        }
        let scores: Vec<f64> = documents.iter().flat_map(|d| d.scores.iter().copied()).collect();
        let labels: Vec<u8> = documents.iter().flat_map(|d| d.labels.iter().copied()).collect();
        let metrics = Metrics::compute(&scores, &labels, threshold)?;
        let mut confusion = ConfusionSets::default();
        for d in &documents {
            for (i, (&s, &l)) in d.scores.iter().zip(&d.labels).enumerate() {
                let r = || TokenRef {
                    doc_id: d.doc_id.clone(),
                    token_index: i,
                };
                match (s >= threshold, l != 0) {
                    (true, true) => confusion.tp.push(r()),
                    (true, false) => confusion.fp.push(r()),
                    (false, true) => confusion.fn_.push(r()),
                    _ => {}
                }
            }
        }
        Ok(EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            method: method.into(),
            metrics,
            threshold,
            documents,
            confusion,
            importance: Vec::new(),
            cv: None,
            baselines: Vec::new(),
        })
    }

    /// Threshold picked on these documents' own scores.
    pub fn self_thresholded(method: impl Into<String>, documents: Vec<DocScores>) -> Result<Self> {
        let scores: Vec<f64> = documents.iter().flat_map(|d| d.scores.iter().copied()).collect();
        let labels: Vec<u8> = documents.iter().flat_map(|d| d.labels.iter().copied()).collect();
        let t = select_threshold(&scores, &labels)?;
        Self::new(method, documents, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Ansi,
    Html,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 4] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Ansi, ReportFormat::Html];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Ansi => "txt",
            ReportFormat::Html => "html",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "ansi" => Ok(ReportFormat::Ansi),
            "html" => Ok(ReportFormat::Html),
            _ => Err(Error::UnknownFormat(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mark {
    Tp,
    Fp,
    Fn,
    None,
}

fn mark(score: f64, label: u8, threshold: f64) -> Mark {
    match (score >= threshold, label != 0) {
        (true, true) => Mark::Tp,
        (true, false) => Mark::Fp,
        (false, true) => Mark::Fn,
        _ => Mark::None,
    }
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<Vec<u8>> {
    Ok(match format {
        ReportFormat::Json => {
            let mut v = serde_json::to_vec_pretty(report).map_err(|e| Error::json("<report>", e))?;
            v.push(b'\n');
            v
        }
        ReportFormat::Csv => render_csv(report).into_bytes(),
        ReportFormat::Ansi => render_ansi(report).into_bytes(),
        ReportFormat::Html => render_html(report).into_bytes(),
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) || s.starts_with(' ') || s.ends_with(' ') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn render_csv(r: &EvalReport) -> String {
    let mut out = String::from("doc_id,token_index,token,score,label,flagged\n");
    for d in &r.documents {
        for (i, t) in d.tokens.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{i},{},{},{},{}",
                csv_field(&d.doc_id),
                csv_field(t),
                d.scores[i],
                d.labels[i],
                (d.scores[i] >= r.threshold) as u8
            );
        }
    }
    out
}

fn metric_line(r: &EvalReport) -> String {
    let m = &r.metrics;
    format!(
        "{}: micro F1 {:.4}  AUROC {:.4}  AUPRC {:.4}  threshold {:.4}  ({} tokens, {} positive)",
        r.method, m.micro_f1, m.auroc, m.auprc, r.threshold, m.n_tokens, m.n_positive
    )
}

fn render_ansi(r: &EvalReport) -> String {
    let mut out = metric_line(r);
    out.push_str("\nlegend: \x1b[42;30m TP \x1b[0m \x1b[41;30m FP \x1b[0m \x1b[44;30m FN \x1b[0m\n");
    for d in &r.documents {
        let _ = write!(out, "\n== {} ==\n", d.doc_id);
        for (i, t) in d.tokens.iter().enumerate() {
            let s = d.scores[i];
            let code = match mark(s, d.labels[i], r.threshold) {
                Mark::Tp => "42;30",
                Mark::Fp => "41;30",
                Mark::Fn => "44;30",
                Mark::None => {
                    out.push_str(t);
                    continue;
                }
            };
            let _ = write!(out, "\x1b[{code}m{t}\x1b[0m");
            if s >= r.threshold {
                let _ = write!(out, "\x1b[2m[{s:.2}]\x1b[0m");
            }
        }
        out.push('\n');
    }
    out
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

const TP_COLOR: &str = "#9be39b";
const FP_COLOR: &str = "#f29b9b";
const FN_COLOR: &str = "#9bbcf2";

fn render_html(r: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>");
    out.push_str(&escape_html(&r.method));
    out.push_str("</title></head>\n<body style=\"font-family:sans-serif;max-width:60em;margin:2em auto\">\n");
    let _ = writeln!(out, "<h1>{}</h1>", escape_html(&r.method));
    let _ = writeln!(out, "<p>{}</p>", escape_html(&metric_line(r)));
    let _ = writeln!(
        out,
        "<p>Legend: <b style=\"color:#2a8a2a\">true positive</b>, <b style=\"color:#b02a2a\">false positive</b>, <b style=\"color:#2a5ab0\">false negative</b>.</p>"
    );
    for d in &r.documents {
        let _ = writeln!(out, "<h2>{}</h2>", escape_html(&d.doc_id));
        out.push_str("<p style=\"white-space:pre-wrap;line-height:1.8\">");
        for (i, t) in d.tokens.iter().enumerate() {
            let s = d.scores[i];
            let color = match mark(s, d.labels[i], r.threshold) {
                Mark::Tp => TP_COLOR,
                Mark::Fp => FP_COLOR,
                Mark::Fn => FN_COLOR,
                Mark::None => {
                    out.push_str(&escape_html(t));
                    continue;
                }
            };
            let _ = write!(out, "<span style=\"background:{color}\">{}", escape_html(t));
            if s >= r.threshold {
                let _ = write!(out, "<sub style=\"font-size:70%\">{s:.2}</sub>");
            }
            out.push_str("</span>");
        }
        out.push_str("</p>\n");
    }
    if !r.importance.is_empty() {
        out.push_str("<h2>Feature importance</h2>\n<table>\n");
        for row in &r.importance {
            let _ = writeln!(
                out,
                "<tr><td>{}</td><td style=\"text-align:right\">{:.2}%</td></tr>",
                escape_html(&row.feature),
                row.percent
            );
        }
        out.push_str("</table>\n");
    }
    out.push_str("</body></html>\n");
    out
}

//! End-to-end run over one dump: split, assemble, train, cross-validate,
//! score the baselines and build the report.

use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::assembler::{assemble, AssemblyOptions, FeatureMatrix};
use crate::classifier::{cross_validate, predict, train, CvResult, GbdtParams, UQModel};
use crate::dump::ActivationDump;
use crate::error::Result;
use crate::eval::baselines::{score_dump, Baseline};
use crate::eval::labels::spans_to_labels;
use crate::eval::metrics::select_threshold;
use crate::eval::report::{DocScores, EvalReport, NamedMetrics};
use crate::eval::split::doc_split;
use crate::features::context::Wordlist;
use crate::features::FeatureConfig;

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub config: FeatureConfig,
    pub params: GbdtParams,
    pub train_ratio: f64,
    pub seed: u64,
    /// Cross-validation folds; 0 skips cross-validation.
    pub folds: usize,
    pub baselines: Vec<Baseline>,
    pub wordlist: Wordlist,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            config: FeatureConfig::F93,
            params: GbdtParams::default(),
            train_ratio: 0.8,
            seed: 0,
            folds: 5,
            baselines: Baseline::ALL.to_vec(),
            wordlist: Wordlist::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub assemble_s: f64,
    pub train_s: f64,
    pub cv_s: f64,
    pub baselines_s: f64,
}

pub struct PipelineOutput {
    pub train_doc_ids: Vec<String>,
    pub test_doc_ids: Vec<String>,
    pub matrix: FeatureMatrix,
    pub model: UQModel,
    /// Held-out report for the test documents, with baselines and folds attached.
    pub report: EvalReport,
    pub cv: Option<CvResult>,
    pub timings: StageTimings,
}

/// Per-document scores for the listed documents, in the listed order.
pub fn doc_scores(m: &FeatureMatrix, scores: &[f64], doc_ids: &[String]) -> Result<Vec<DocScores>> {
    doc_ids
        .iter()
        .map(|id| {
            let rows = m.rows_of(std::slice::from_ref(id))?;
            Ok(DocScores {
                doc_id: id.clone(),
                tokens: rows.iter().map(|&r| m.meta.tokens[r].clone()).collect(),
                scores: rows.iter().map(|&r| scores[r]).collect(),
                labels: rows.iter().map(|&r| m.labels()[r]).collect(),
            })
        })
        .collect()
}

/// Baseline scores with labels read from the dump, in the listed order.
pub fn baseline_docs(dump: &ActivationDump, baseline: Baseline, doc_ids: &[String]) -> Result<Vec<DocScores>> {
    let scores = score_dump(dump, baseline, Some(doc_ids))?;
    doc_ids
        .iter()
        .zip(scores)
        .map(|(id, scores)| {
            let (tokens, spans) = dump.load_tokens(dump.doc_index(id)?)?;
            let summary = &tokens.tokens[tokens.summary_range.0..tokens.summary_range.1];
            Ok(DocScores {
                doc_id: id.clone(),
                labels: spans_to_labels(&spans, summary)?,
                tokens: summary.iter().map(|t| t.text.clone()).collect(),
                scores,
            })
        })
        .collect()
}

/// Held-out report for a baseline; the threshold comes from the training documents.
pub fn evaluate_baseline(
    dump: &ActivationDump,
    baseline: Baseline,
    train_ids: &[String],
    test_ids: &[String],
) -> Result<EvalReport> {
    let train = baseline_docs(dump, baseline, train_ids)?;
    let scores: Vec<f64> = train.iter().flat_map(|d| d.scores.iter().copied()).collect();
    let labels: Vec<u8> = train.iter().flat_map(|d| d.labels.iter().copied()).collect();
    let threshold = select_threshold(&scores, &labels)?;
    EvalReport::new(baseline.to_string(), baseline_docs(dump, baseline, test_ids)?, threshold)
}

pub fn run(dump: &ActivationDump, opts: &PipelineOptions) -> Result<PipelineOutput> {
    let mut timings = StageTimings::default();
    let ids: Vec<String> = dump.documents().iter().map(|d| d.doc_id.clone()).collect();
    let (train_ids, test_ids) = doc_split(&ids, opts.train_ratio, opts.seed)?;
    info!("split: {} training, {} test documents", train_ids.len(), test_ids.len());

    let t = Instant::now();
    let matrix = assemble(
        dump,
        &AssemblyOptions {
            config: opts.config,
            wordlist: opts.wordlist.clone(),
            doc_ids: None,
            stats_doc_ids: Some(train_ids.clone()),
        },
    )?;
    timings.assemble_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let model = train(&matrix, Some(&train_ids), &opts.params)?;
    let scores = predict(&model, &matrix)?;
    let test_docs = doc_scores(&matrix, &scores, &test_ids)?;
    let mut report = EvalReport::new(
        format!("reverse_probing_{}", opts.config),
        test_docs,
        model.training.threshold,
    )?;
    report.importance = model.importance();
    timings.train_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let cv = if opts.folds > 0 {
        let cv = cross_validate(&matrix, &opts.params, opts.folds, opts.seed)?;
        report.cv = Some(cv.summary.clone());
        Some(cv)
    } else {
        None
    };
    timings.cv_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    for &b in &opts.baselines {
        let r = evaluate_baseline(dump, b, &train_ids, &test_ids)?;
        report.baselines.push(NamedMetrics {
            method: r.method,
            metrics: r.metrics,
        });
    }
    timings.baselines_s = t.elapsed().as_secs_f64();
    info!(
        "test: F1 {:.4} AUROC {:.4} AUPRC {:.4} (prevalence {:.4})",
        report.metrics.micro_f1, report.metrics.auroc, report.metrics.auprc, report.metrics.prevalence
    );
    Ok(PipelineOutput {
        train_doc_ids: train_ids,
        test_doc_ids: test_ids,
        matrix,
        model,
        report,
        cv,
        timings,
    })
}

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::info;
use serde_json::{json, Value};

use revprobe_core::assembler::{assemble_timed, AssemblyOptions, FeatureMatrix};
use revprobe_core::classifier::{cross_validate, predict, train, UQModel};
use revprobe_core::dump::{synthesize, validate, ActivationDump, Finding, ValidationReport};
use revprobe_core::eval::report::REPORT_SCHEMA_VERSION;
use revprobe_core::eval::{doc_split, render_report, Baseline, EvalReport, ReportFormat};
use revprobe_core::features::context::Wordlist;
use revprobe_core::pipeline::{self, doc_scores, PipelineOptions};

use crate::config::{self, FileConfig};
use crate::Command;

pub struct Ctx {
    pub seed: u64,
    pub json: bool,
    pub file: FileConfig,
}

/// What a subcommand hands back: a JSON summary, the text rendering and the exit code.
pub struct Outcome {
    pub json: Value,
    pub text: String,
    pub exit: u8,
}

impl Outcome {
    fn ok(json: Value, text: String) -> Self {
        Outcome { json, text, exit: 0 }
    }
}

pub fn dispatch(ctx: &Ctx, command: Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Validate { dump } => cmd_validate(&dump),
        Command::Synth { out, synth } => {
            let cfg = synth.resolve(&ctx.file, ctx.seed)?;
            cmd_synth(&cfg, &out)
        }
        Command::Features {
            dump,
            config,
            out,
            csv,
            wordlist,
            docs,
            stats_docs,
        } => {
            let opts = AssemblyOptions {
                config: config::feature_config(config.as_deref(), &ctx.file)?,
                wordlist: load_wordlist(wordlist.as_deref().or(ctx.file.wordlist.as_deref()))?,
                doc_ids: docs,
                stats_doc_ids: stats_docs,
            };
            cmd_features(&dump, &opts, &out, csv.as_deref())
        }
        Command::Train {
            features,
            out,
            docs,
            classifier,
        } => {
            let params = classifier.resolve(&ctx.file, ctx.seed)?;
            let m = FeatureMatrix::load(&features)?;
            let model = train(&m, docs.as_deref(), &params)?;
            model.save(&out)?;
            let top = model.top_features(10);
            let mut text = format!(
                "trained {} trees on {} rows ({} positive), threshold {:.6}\n",
                model.trees.len(),
                model.training.n_rows,
                model.training.n_positive,
                model.training.threshold
            );
            for r in &top {
                writeln!(text, "  {:<32} {:6.2}%", r.feature, r.percent)?;
            }
            writeln!(text, "wrote {}", out.display())?;
            Ok(Outcome::ok(
                json!({
                    "model": out,
                    "trees": model.trees.len(),
                    "training": model.training,
                    "top_features": top,
                }),
                text,
            ))
        }
        Command::Predict {
            model,
            features,
            out,
            docs,
            threshold,
        } => cmd_predict(&model, &features, &out, docs, threshold),
        Command::Cv {
            features,
            folds,
            out,
            classifier,
        } => {
            let params = classifier.resolve(&ctx.file, ctx.seed)?;
            let k = folds.or(ctx.file.folds).unwrap_or(5);
            let m = FeatureMatrix::load(&features)?;
            let cv = cross_validate(&m, &params, k, ctx.seed)?;
            if let Some(out) = &out {
                write_file(out, &serde_json::to_vec_pretty(&cv.summary)?)?;
            }
            let mut text = String::new();
            for (i, f) in cv.summary.folds.iter().enumerate() {
                writeln!(
                    text,
                    "fold {i}: F1 {:.4}  AUROC {:.4}  AUPRC {:.4}  ({} docs)",
                    f.micro_f1,
                    f.auroc,
                    f.auprc,
                    cv.summary.fold_doc_ids[i].len()
                )?;
            }
            let (mu, sd) = (&cv.summary.mean, &cv.summary.std);
            writeln!(
                text,
                "mean:   F1 {:.4}±{:.4}  AUROC {:.4}±{:.4}  AUPRC {:.4}±{:.4}",
                mu.micro_f1, sd.micro_f1, mu.auroc, sd.auroc, mu.auprc, sd.auprc
            )?;
            Ok(Outcome::ok(json!({ "cv": cv.summary, "thresholds": cv.thresholds }), text))
        }
        Command::Baseline {
            dump,
            method,
            train_ratio,
            out,
        } => {
            let methods = parse_baselines(method.or_else(|| ctx.file.baselines.clone()))?;
            let ratio = train_ratio.or(ctx.file.train_ratio).unwrap_or(0.8);
            cmd_baseline(&dump, &methods, ratio, ctx.seed, out.as_deref())
        }
        Command::Report { report, format, out } => {
            let formats = format.or_else(|| ctx.file.formats.clone());
            cmd_report(&report, formats, out.as_deref(), ctx.json)
        }
        Command::Pipeline {
            dump,
            out,
            config,
            wordlist,
            folds,
            train_ratio,
            format,
            baselines,
            synth,
            classifier,
        } => {
            let f = &ctx.file;
            let out = out.or_else(|| f.out.clone()).context("pipeline needs --out")?;
            let opts = PipelineOptions {
                config: config::feature_config(config.as_deref(), f)?,
                params: classifier.resolve(f, ctx.seed)?,
                train_ratio: train_ratio.or(f.train_ratio).unwrap_or(0.8),
                seed: ctx.seed,
                folds: folds.or(f.folds).unwrap_or(5),
                baselines: parse_baselines(baselines.or_else(|| f.baselines.clone()))?,
                wordlist: load_wordlist(wordlist.as_deref().or(f.wordlist.as_deref()))?,
            };
            let dump = match dump.or_else(|| f.dump.clone()) {
                Some(d) => d,
                None => {
                    let d = out.join("dump");
                    let cfg = synth.resolve(f, ctx.seed)?;
                    info!("synthesizing {} documents into {}", cfg.n_docs, d.display());
                    synthesize(&cfg, &d)?;
                    d
                }
            };
            let formats = parse_formats(format.or_else(|| f.formats.clone()))?;
            cmd_pipeline(&dump, &out, &opts, &formats)
        }
    }
}

fn load_wordlist(path: Option<&Path>) -> anyhow::Result<Wordlist> {
    Ok(match path {
        Some(p) => Wordlist::load(p)?,
        None => Wordlist::default(),
    })
}

fn parse_baselines(names: Option<Vec<String>>) -> anyhow::Result<Vec<Baseline>> {
    match names {
        None => Ok(Baseline::ALL.to_vec()),
        Some(v) if v.iter().any(|s| s == "none") => Ok(Vec::new()),
        Some(v) if v.iter().any(|s| s == "all") => Ok(Baseline::ALL.to_vec()),
        Some(v) => v.iter().map(|s| Ok(s.parse::<Baseline>()?)).collect(),
    }
}

fn parse_formats(names: Option<Vec<String>>) -> anyhow::Result<Vec<ReportFormat>> {
    let names = names.unwrap_or_else(|| vec!["json".into(), "html".into()]);
    names.iter().map(|s| Ok(s.parse::<ReportFormat>()?)).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn format_finding(f: &Finding) -> String {
    match f.token_index {
        Some(t) => format!("{} {} token {}: {}", f.code, f.doc_id, t, f.detail),
        None if f.doc_id.is_empty() => format!("{}: {}", f.code, f.detail),
        None => format!("{} {}: {}", f.code, f.doc_id, f.detail),
    }
}

fn cmd_validate(path: &Path) -> anyhow::Result<Outcome> {
    // A dump that cannot be opened is reported as a finding, not an error.
    let report = match ActivationDump::open(path) {
        Ok(dump) => validate(&dump),
        Err(e) => ValidationReport {
            documents_checked: 0,
            findings: vec![Finding {
                code: e.code().to_string(),
                doc_id: String::new(),
                token_index: None,
                detail: e.to_string(),
            }],
        },
    };
    let mut text = String::new();
    for f in &report.findings {
        writeln!(text, "{}", format_finding(f))?;
    }
    writeln!(
        text,
        "{} documents checked, {} findings",
        report.documents_checked,
        report.findings.len()
    )?;
    Ok(Outcome {
        exit: if report.is_clean() { 0 } else { 1 },
        json: serde_json::to_value(&report)?,
        text,
    })
}

fn cmd_synth(cfg: &revprobe_core::dump::SynthConfig, out: &Path) -> anyhow::Result<Outcome> {
    synthesize(cfg, out)?;
    let dump = ActivationDump::open(out)?;
    let ids: Vec<String> = dump.documents().iter().map(|d| d.doc_id.clone()).collect();
    let labelled = pipeline::baseline_docs(&dump, Baseline::TokenEntropy, &ids)?;
    let n: usize = labelled.iter().map(|d| d.labels.len()).sum();
    let pos: usize = labelled.iter().map(|d| d.labels.iter().filter(|&&l| l != 0).count()).sum();
    let prevalence = pos as f64 / n.max(1) as f64;
    let text = format!(
        "wrote {} documents to {} ({n} summary tokens, {pos} positive, prevalence {:.4})\n",
        dump.len(),
        out.display(),
        prevalence
    );
    Ok(Outcome::ok(
        json!({
            "dump": out,
            "documents": dump.len(),
            "summary_tokens": n,
            "positive_tokens": pos,
            "prevalence": prevalence,
        }),
        text,
    ))
}

fn matrix_summary(m: &FeatureMatrix) -> Value {
    json!({
        "config": m.meta.registry.config,
        "rows": m.n_rows(),
        "columns": m.n_cols(),
        "documents": m.meta.documents.len(),
        "registry_hash": m.meta.registry_hash,
        "warnings": m.meta.warnings,
        "missing_columns": m.meta.missing.keys().collect::<Vec<_>>(),
    })
}

fn cmd_features(dump: &Path, opts: &AssemblyOptions, out: &Path, csv: Option<&Path>) -> anyhow::Result<Outcome> {
    let dump = ActivationDump::open(dump)?;
    let (m, timings) = assemble_timed(&dump, opts)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    m.save(out)?;
    if let Some(csv) = csv {
        let mut buf = Vec::new();
        m.write_csv(&mut buf)?;
        write_file(csv, &buf)?;
    }
    let mut text = String::new();
    for w in &m.meta.warnings {
        writeln!(text, "warning: {w}")?;
    }
    writeln!(
        text,
        "{}: {} rows x {} columns from {} documents -> {}",
        opts.config,
        m.n_rows(),
        m.n_cols(),
        m.meta.documents.len(),
        out.display()
    )?;
    writeln!(
        text,
        "assembly {:.2} s, of which {:.2} s reading the attention stream",
        timings.total_s, timings.stream_read_s
    )?;
    let mut v = matrix_summary(&m);
    v["out"] = json!(out);
    v["timings"] = json!(timings);
    Ok(Outcome::ok(v, text))
}

fn metrics_line(name: &str, m: &revprobe_core::eval::Metrics) -> String {
    format!(
        "{name:<28} F1 {:.4}  AUROC {:.4}  AUPRC {:.4}  P {:.4}  R {:.4}\n",
        m.micro_f1, m.auroc, m.auprc, m.precision, m.recall
    )
}

fn cmd_predict(
    model: &Path,
    features: &Path,
    out: &Path,
    docs: Option<Vec<String>>,
    threshold: Option<f64>,
) -> anyhow::Result<Outcome> {
    let model = UQModel::load(model)?;
    let m = FeatureMatrix::load(features)?;
    let scores = predict(&model, &m)?;
    let ids = docs.unwrap_or_else(|| m.doc_ids());
    let threshold = threshold.unwrap_or(model.training.threshold);
    let mut report = EvalReport::new("reverse_probing", doc_scores(&m, &scores, &ids)?, threshold)?;
    report.importance = model.importance();
    write_file(out, &render_report(&report, ReportFormat::Json)?)?;
    let mut text = metrics_line(&report.method, &report.metrics);
    writeln!(text, "wrote {}", out.display())?;
    Ok(Outcome::ok(json!({ "report": out, "metrics": report.metrics }), text))
}

fn cmd_baseline(
    dump: &Path,
    methods: &[Baseline],
    ratio: f64,
    seed: u64,
    out: Option<&Path>,
) -> anyhow::Result<Outcome> {
    if methods.is_empty() {
        bail!("no baseline selected");
    }
    let dump = ActivationDump::open(dump)?;
    let ids: Vec<String> = dump.documents().iter().map(|d| d.doc_id.clone()).collect();
    let (train_ids, test_ids) = doc_split(&ids, ratio, seed)?;
    let mut text = String::new();
    let mut rows = Vec::new();
    for &b in methods {
        let r = pipeline::evaluate_baseline(&dump, b, &train_ids, &test_ids)?;
        text.push_str(&metrics_line(&r.method, &r.metrics));
        if let Some(dir) = out {
            write_file(&dir.join(format!("baseline_{b}.json")), &render_report(&r, ReportFormat::Json)?)?;
        }
        rows.push(json!({ "method": r.method, "metrics": r.metrics }));
    }
    Ok(Outcome::ok(
        json!({ "baselines": rows, "test_documents": test_ids }),
        text,
    ))
}

fn load_report(path: &Path) -> anyhow::Result<EvalReport> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let report: EvalReport =
        serde_json::from_slice(&bytes).with_context(|| format!("parsing report {}", path.display()))?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        bail!(
            "report {} has schema version {}, expected {}",
            path.display(),
            report.schema_version,
            REPORT_SCHEMA_VERSION
        );
    }
    Ok(report)
}

fn cmd_report(path: &Path, formats: Option<Vec<String>>, out: Option<&Path>, json_mode: bool) -> anyhow::Result<Outcome> {
    let report = load_report(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report").to_string();
    match out {
        None => {
            let formats = parse_formats(Some(formats.unwrap_or_else(|| vec!["ansi".into()])))?;
            if formats.len() != 1 {
                bail!("several formats need --out");
            }
            let bytes = render_report(&report, formats[0])?;
            let content = String::from_utf8(bytes)?;
            let v = if json_mode {
                json!({ "format": formats[0].extension(), "content": content })
            } else {
                Value::Null
            };
            Ok(Outcome::ok(v, content))
        }
        Some(dir) => {
            let formats = parse_formats(formats)?;
            let mut written: Vec<PathBuf> = Vec::new();
            for f in formats {
                let p = dir.join(format!("{stem}.{}", f.extension()));
                write_file(&p, &render_report(&report, f)?)?;
                written.push(p);
            }
            let text = written.iter().map(|p| format!("wrote {}\n", p.display())).collect();
            Ok(Outcome::ok(json!({ "written": written }), text))
        }
    }
}

fn cmd_pipeline(dump: &Path, out: &Path, opts: &PipelineOptions, formats: &[ReportFormat]) -> anyhow::Result<Outcome> {
    let dump = ActivationDump::open(dump)?;
    let run = pipeline::run(&dump, opts)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    run.matrix.save(&out.join("features.bin"))?;
    run.model.save(&out.join("model.bin"))?;
    for &f in formats {
        write_file(&out.join(format!("report.{}", f.extension())), &render_report(&run.report, f)?)?;
    }
    if !formats.contains(&ReportFormat::Json) {
        write_file(&out.join("report.json"), &render_report(&run.report, ReportFormat::Json)?)?;
    }

    let r = &run.report;
    let mut text = String::new();
    for w in &run.matrix.meta.warnings {
        writeln!(text, "warning: {w}")?;
    }
    writeln!(
        text,
        "{} train / {} test documents, {} features, prevalence {:.4}",
        run.train_doc_ids.len(),
        run.test_doc_ids.len(),
        run.matrix.n_cols(),
        r.metrics.prevalence
    )?;
    if let Some(cv) = &r.cv {
        writeln!(
            text,
            "cv ({} folds): F1 {:.4}±{:.4}  AUROC {:.4}±{:.4}  AUPRC {:.4}±{:.4}",
            cv.folds.len(),
            cv.mean.micro_f1,
            cv.std.micro_f1,
            cv.mean.auroc,
            cv.std.auroc,
            cv.mean.auprc,
            cv.std.auprc
        )?;
    }
    text.push_str(&metrics_line(&r.method, &r.metrics));
    for b in &r.baselines {
        text.push_str(&metrics_line(&b.method, &b.metrics));
    }
    let t = run.timings;
    writeln!(
        text,
        "time: assemble {:.1}s, train {:.1}s, cv {:.1}s, baselines {:.1}s",
        t.assemble_s, t.train_s, t.cv_s, t.baselines_s
    )?;
    writeln!(text, "wrote {}", out.display())?;
    Ok(Outcome::ok(
        json!({
            "out": out,
            "features": matrix_summary(&run.matrix),
            "train_documents": run.train_doc_ids,
            "test_documents": run.test_doc_ids,
            "metrics": r.metrics,
            "cv": r.cv.as_ref().map(|c| json!({ "mean": c.mean, "std": c.std })),
            "baselines": r.baselines,
            "timings": t,
        }),
        text,
    ))
}

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::assembler::matrix::{DocRows, FeatureMatrix, MatrixMeta, MISSING_SENTINEL};
use crate::assembler::registry::{registry, FeatureRegistry, Group};
use crate::dump::{ActivationDump, Document, DumpLayout, LoadParts, LogitEncoding, PassBlock, PASS_PRIOR, PASS_WITH, PASS_WITHOUT};
use crate::error::{Error, Result};
use crate::eval::labels::spans_to_labels;
use crate::features::context::{
    annotations_from_records, lexical, medical_density, neighborhood, ner_features, CorpusStats, NerAnnotation,
    Wordlist, F93_WINDOWS, NER_WINDOWS,
};
use crate::features::contrast::{
    delta_features, entropy_decomposition, pmi_features, prior_decomposition, PriorStats, TriPassStats,
};
use crate::features::contrast::kl_divergence;
use crate::features::internal::{attention_row_stats, hidden_summary, layer_change, rollout, unpad_row};
use crate::features::output::{semantic_features, shape_features, shannon_entropy, DistributionView, RANK_WINDOWS, TOP_LIST_LEN};
use crate::features::FeatureConfig;
use crate::numeric::softmax;

const SIM_PREFIXES: [&str; 5] = ["max_sim_top", "avg_sim_top", "top3_sim_top", "sim_std_top", "semantic_rank_top"];

#[derive(Debug, Clone)]
pub struct AssemblyOptions {
    pub config: FeatureConfig,
    /// Keyword list behind the keyword flag and keyword density.
    pub wordlist: Wordlist,
    /// Documents to assemble, in output order; every document when `None`.
    pub doc_ids: Option<Vec<String>>,
    /// Documents the corpus frequency tables come from; the assembled set when `None`.
    pub stats_doc_ids: Option<Vec<String>>,
}

impl AssemblyOptions {
    pub fn new(config: FeatureConfig) -> Self {
        AssemblyOptions {
            config,
            wordlist: Wordlist::default(),
            doc_ids: None,
            stats_doc_ids: None,
        }
    }
}

/// Registry actually produced for one dump: the canonical columns minus
/// those whose inputs the dump lacks.
#[derive(Debug, Clone)]
pub struct Plan {
    pub canonical: FeatureRegistry,
    pub registry: FeatureRegistry,
    pub warnings: Vec<String>,
    keep: Vec<usize>,
    /// Canonical columns replaced by the sentinel when a document has no `ner.json`.
    ner_columns: Vec<usize>,
    parts: LoadParts,
}

fn hidden_check(layout: &DumpLayout, reg: &FeatureRegistry) -> Result<()> {
    let s = &reg.schedule;
    if s.hidden_layers.is_empty() && s.change_pairs.is_empty() {
        return Ok(());
    }
    let spec = layout
        .hidden
        .as_ref()
        .ok_or_else(|| Error::MissingBlock(format!("hidden states required by {}", reg.config)))?;
    let missing: Vec<usize> = s
        .hidden_layer_set()
        .into_iter()
        .filter(|l| spec.layers.binary_search(l).is_err())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingBlock(format!("hidden layers {missing:?} not stored")));
    }
    if !spec.raw {
        for &(a, c) in &s.change_pairs {
            let slot = spec.layers.binary_search(&a).unwrap_or(usize::MAX);
            if spec.layers.get(slot.wrapping_add(1)) != Some(&c) {
                return Err(Error::MissingBlock(format!(
                    "layer change {a}->{c} needs raw hidden vectors (summary rows only pair consecutive stored layers)"
                )));
            }
        }
    }
    Ok(())
}

fn attention_check(layout: &DumpLayout, reg: &FeatureRegistry) -> Result<()> {
    let s = &reg.schedule;
    let pairs = s.attention_row_pairs();
    if !pairs.is_empty() {
        let stored = layout.attention.as_ref().map(|a| a.row_pairs.as_slice()).unwrap_or_default();
        let missing: Vec<_> = pairs.iter().filter(|p| !stored.contains(p)).collect();
        if !missing.is_empty() {
            return Err(Error::MissingBlock(format!("attention rows for (layer, head) {missing:?}")));
        }
    }
    if !s.rollout_checkpoints.is_empty() && !layout.attention.as_ref().is_some_and(|a| a.avg_stream) {
        return Err(Error::MissingBlock("head-averaged attention stream needed for rollout".into()));
    }
    Ok(())
}

pub fn plan(layout: &DumpLayout, config: FeatureConfig) -> Result<Plan> {
    let desc = &layout.descriptor;
    for pass in [PASS_WITH, PASS_WITHOUT] {
        if !desc.has_pass(pass) {
            return Err(Error::MissingPass(pass.into()));
        }
    }
    if config.needs_prior() && !desc.has_prior() {
        return Err(Error::MissingPriorPass(config.to_string()));
    }
    let canonical = registry(desc, config)?;
    hidden_check(layout, &canonical)?;
    attention_check(layout, &canonical)?;

    let mut reg = canonical.clone();
    let mut warnings = Vec::new();
    let mut prune = |reg: &mut FeatureRegistry, keep: &dyn Fn(&str, Group) -> bool, reason: &str| {
        let dropped = reg.retain(|c| keep(&c.name, c.group), reason);
        if !dropped.is_empty() {
            warnings.push(format!("dropped {} columns ({reason})", dropped.len()));
        }
    };
    if !desc.has_prior() {
        prune(&mut reg, &|n, _| !n.starts_with("baseline_"), "no prior pass");
    }
    if !layout.topk_sims {
        prune(
            &mut reg,
            &|n, _| !SIM_PREFIXES.iter().any(|p| n.starts_with(p)),
            "no top prediction similarities",
        );
    }
    if layout.logits.encoding == LogitEncoding::Topk {
        let k_stored = layout.logits.top_k.unwrap_or(0);
        let short: Vec<usize> = RANK_WINDOWS
            .into_iter()
            .filter(|&k| k.min(desc.vocab_size) > k_stored)
            .collect();
        if !short.is_empty() {
            let names: Vec<String> = short
                .iter()
                .flat_map(|k| [format!("rank_top{k}"), format!("in_top{k}")])
                .collect();
            prune(
                &mut reg,
                &|n, _| !names.iter().any(|x| x == n),
                &format!("top-{k_stored} logits cannot rank within top-{short:?}"),
            );
        }
    }
    if config != FeatureConfig::F93 && !layout.ner {
        prune(
            &mut reg,
            &|n, g| g != Group::Ner && !n.starts_with("medical_density_"),
            "dump carries no NER annotations",
        );
    }
    let keep: Vec<usize> = reg
        .columns
        .iter()
        .map(|c| canonical.index_of(&c.name).expect("kept column comes from the canonical registry"))
        .collect();
    let ner_columns = if config == FeatureConfig::F93 {
        Vec::new()
    } else {
        canonical
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.group == Group::Ner || c.name.starts_with("medical_density_"))
            .map(|(i, _)| i)
            .collect()
    };
    let s = &canonical.schedule;
    let parts = LoadParts {
        hidden: !s.hidden_layers.is_empty(),
        attention: !s.attention_row_pairs().is_empty(),
        sims: layout.topk_sims,
        ner: config != FeatureConfig::F93 && layout.ner,
    };
    for w in &warnings {
        warn!("{w}");
    }
    Ok(Plan {
        canonical,
        registry: reg,
        warnings,
        keep,
        ner_columns,
        parts,
    })
}

fn f64s(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn view(block: &PassBlock, i: usize, vocab: usize, actual: u32, sims: Vec<f64>) -> Result<DistributionView> {
    match block {
        PassBlock::Full { .. } => {
            let row = block
                .full_row(i)
                .ok_or_else(|| Error::ShapeViolation(format!("logit row {i} missing")))?;
            DistributionView::from_logits(&f64s(row), actual, sims)
        }
        PassBlock::TopK { records } => {
            let rec = records
                .get(i)
                .ok_or_else(|| Error::ShapeViolation(format!("top-k record {i} missing")))?;
            let mut v = DistributionView::from_topk(rec, vocab, actual, sims)?;
            // Ids past the stored K never match; the affected rank columns are dropped.
            let want = TOP_LIST_LEN.min(vocab);
            v.top_ids.resize(want.max(v.top_ids.len()), u32::MAX);
            Ok(v)
        }
    }
}

fn prior_stats(block: &PassBlock, actual: &[u32]) -> Result<Vec<PriorStats>> {
    match block {
        PassBlock::Full { rows, .. } => {
            let dist = |r: usize| -> Result<(Vec<f64>, f64)> {
                let p = softmax(&f64s(block.full_row(r).unwrap_or_default()));
                let h = shannon_entropy(&p)?;
                Ok((p, h))
            };
            if *rows == 1 {
                let (p, h) = dist(0)?;
                Ok(actual
                    .iter()
                    .map(|&a| PriorStats {
                        p_prior: p[a as usize],
                        h_prior: h,
                    })
                    .collect())
            } else {
                actual
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| {
                        let (p, h) = dist(i)?;
                        Ok(PriorStats {
                            p_prior: p[a as usize],
                            h_prior: h,
                        })
                    })
                    .collect()
            }
        }
        PassBlock::TopK { records } => Ok(records
            .iter()
            .map(|r| PriorStats {
                p_prior: r.actual_prob,
                h_prior: r.entropy,
            })
            .collect()),
    }
}

struct DocBlock {
    values: Vec<f32>,
    labels: Vec<u8>,
    tokens: Vec<String>,
    /// (kept column, local row) pairs holding the sentinel.
    missing: Vec<(usize, usize)>,
    ner_missing: bool,
    stream_read: Duration,
}

struct Ctx<'a> {
    dump: &'a ActivationDump,
    plan: &'a Plan,
    stats: &'a CorpusStats,
    wordlist: &'a Wordlist,
}

fn assemble_document(cx: &Ctx<'_>, idx: usize) -> Result<DocBlock> {
    let plan = cx.plan;
    let config = plan.canonical.config;
    let sched = &plan.canonical.schedule;
    let layout = cx.dump.layout();
    let vocab = layout.descriptor.vocab_size;
    let doc: Document = cx.dump.load_document_with(idx, plan.parts)?;
    let n = doc.n_summary();
    let summary = doc.summary_tokens();
    let actual: Vec<u32> = summary.iter().map(|t| t.id).collect();
    let labels = spans_to_labels(&doc.label_spans, summary)?;
    let at = |i: usize, e: Error| e.context(format!("token {i}"));

    let with = doc.pass(PASS_WITH)?;
    let without = doc.pass(PASS_WITHOUT)?;
    let mut plus = Vec::with_capacity(n);
    let mut minus = Vec::with_capacity(n);
    for i in 0..n {
        let sims = doc.sims_row(i).map(f64s).unwrap_or_else(|| vec![0.0; TOP_LIST_LEN]);
        plus.push(view(with, i, vocab, actual[i], sims).map_err(|e| at(i, e))?);
        minus.push(view(without, i, vocab, actual[i], Vec::new()).map_err(|e| at(i, e))?);
    }
    let prior = match doc.passes.get(PASS_PRIOR) {
        Some(b) => Some(prior_stats(b, &actual)?),
        None => None,
    };
    let p_plus: Vec<f64> = plus.iter().map(|v| v.actual_prob).collect();

    let keyword: Vec<bool> = summary.iter().map(|t| cx.wordlist.matches(&t.text)).collect();
    let ner_missing = config != FeatureConfig::F93 && layout.ner && doc.ner.is_none();
    let annotations: Vec<NerAnnotation> = match &doc.ner {
        Some(records) => annotations_from_records(records, n)?,
        None => vec![NerAnnotation::default(); n],
    };
    let ner_flags: Vec<bool> = annotations.iter().map(|a| a.is_medical()).collect();
    let (windows, density_flags): (&[usize], &[bool]) = if config == FeatureConfig::F93 {
        (&F93_WINDOWS, &keyword)
    } else {
        (&NER_WINDOWS, &ner_flags)
    };

    let positions: Vec<usize> = (0..n).map(|i| doc.position(i)).collect();
    let mut stream_read = Duration::ZERO;
    let rollouts = if sched.rollout_checkpoints.is_empty() {
        Vec::new()
    } else {
        let mut stream = cx.dump.stream_attention_layers(idx)?;
        let ctx = stream.ctx();
        let timed = std::iter::from_fn(|| {
            let t = Instant::now();
            let item = stream.next();
            stream_read += t.elapsed();
            item
        });
        rollout(timed, ctx, &sched.rollout_checkpoints, &positions, doc.bhc_len)?
    };

    let width = plan.canonical.len();
    let mut values = Vec::with_capacity(n * plan.keep.len());
    let mut missing = Vec::new();
    let mut row = Vec::with_capacity(width);
    for i in 0..n {
        row.clear();
        fill_row(&mut row, cx, &doc, i, &plus, &minus, prior.as_deref(), &p_plus, &keyword, &annotations, windows, density_flags, &rollouts)
            .map_err(|e| at(i, e))?;
        debug_assert_eq!(row.len(), width);
        if ner_missing {
            for &c in &plan.ner_columns {
                row[c] = MISSING_SENTINEL as f64;
            }
        }
        for (k, &c) in plan.keep.iter().enumerate() {
            let v = row[c];
            if !v.is_finite() {
                return Err(at(i, Error::NonFinite(format!("column `{}`", plan.canonical.columns[c].name))));
            }
            values.push(v as f32);
            if ner_missing && plan.ner_columns.contains(&c) {
                missing.push((k, i));
            }
        }
    }
    Ok(DocBlock {
        values,
        labels,
        tokens: summary.iter().map(|t| t.text.clone()).collect(),
        missing,
        ner_missing,
        stream_read,
    })
}

/// Pushes one token's canonical row, group by group in registry order.
#[allow(clippy::too_many_arguments)]
fn fill_row(
    row: &mut Vec<f64>,
    cx: &Ctx<'_>,
    doc: &Document,
    i: usize,
    plus: &[DistributionView],
    minus: &[DistributionView],
    prior: Option<&[PriorStats]>,
    p_plus: &[f64],
    keyword: &[bool],
    annotations: &[NerAnnotation],
    windows: &[usize],
    density_flags: &[bool],
    rollouts: &[Vec<crate::features::internal::RolloutStats>],
) -> Result<()> {
    let config = cx.plan.canonical.config;
    let sched = &cx.plan.canonical.schedule;
    let (vp, vm) = (&plus[i], &minus[i]);
    let tri = TriPassStats {
        p_plus: vp.actual_prob,
        p_minus: vm.actual_prob,
        h_plus: vp.entropy,
        h_minus: vm.entropy,
        e_plus: vp.energy,
        e_minus: vm.energy,
        prior: prior.map(|p| p[i]),
    };

    row.extend(shape_features(vp)?.values());
    row.extend(delta_features(&tri).values());
    for k in RANK_WINDOWS {
        row.extend(semantic_features(vp, k)?.values());
    }
    for &w in windows {
        row.extend(neighborhood(p_plus, i, w)?.values());
        row.push(medical_density(density_flags, i, w));
    }
    if config == FeatureConfig::F93 {
        row.push(if keyword[i] { 1.0 } else { 0.0 });
    } else {
        row.extend(ner_features(&annotations[i], config != FeatureConfig::F120)?);
    }
    let text = &doc.summary_tokens()[i].text;
    row.extend(lexical(text, cx.stats).values());
    match tri.prior {
        Some(p) => row.extend([p.p_prior, p.h_prior]),
        None => row.extend([0.0, 0.0]),
    }
    if config.needs_prior() {
        row.extend(pmi_features(&tri)?.values());
        row.extend(entropy_decomposition(&tri)?.values());
        row.extend(prior_decomposition(&tri)?.values());
    }

    if !sched.hidden_layers.is_empty() || !sched.change_pairs.is_empty() {
        let h = doc
            .hidden
            .as_ref()
            .ok_or_else(|| Error::MissingBlock("hidden states".into()))?;
        let slot = |l: usize| h.layer_slot(l).ok_or_else(|| Error::MissingBlock(format!("hidden layer {l}")));
        for &l in &sched.hidden_layers {
            let s = slot(l)?;
            match h.raw_vector(i, s) {
                Some(v) => {
                    let hs = hidden_summary(&f64s(v))?;
                    row.extend([hs.norm, hs.mean, hs.std]);
                }
                None => {
                    let r = h.summary_row(i, s).ok_or_else(|| Error::MissingBlock(format!("hidden layer {l}")))?;
                    row.extend(r[..3].iter().map(|&x| x as f64));
                }
            }
        }
        for &(a, c) in &sched.change_pairs {
            let (sa, sc) = (slot(a)?, slot(c)?);
            match (h.raw_vector(i, sa), h.raw_vector(i, sc)) {
                (Some(va), Some(vc)) => {
                    let ch = layer_change(&f64s(va), &f64s(vc))?;
                    row.extend([ch.l2_change, ch.cosine]);
                }
                _ => {
                    let r = h.summary_row(i, sa).ok_or_else(|| Error::MissingBlock(format!("hidden layer {a}")))?;
                    row.extend([r[3] as f64, r[4] as f64]);
                }
            }
        }
    }

    if !sched.snapshot_pairs.is_empty() || !sched.drift_pairs.is_empty() {
        let att = doc
            .attention
            .as_ref()
            .ok_or_else(|| Error::MissingBlock("attention rows".into()))?;
        let pos = doc.position(i);
        let prefix = |l: usize, hd: usize| -> Result<Vec<f64>> {
            let s = att
                .pair_slot(l, hd)
                .ok_or_else(|| Error::MissingBlock(format!("attention row ({l}, {hd})")))?;
            Ok(f64s(&att.row(i, s)[..=pos]))
        };
        for &(l, hd) in &sched.snapshot_pairs {
            let st = attention_row_stats(&prefix(l, hd)?, pos, doc.bhc_len)?;
            row.extend([st.attn_entropy, st.attn_to_bhc, st.attn_max]);
        }
        // Each (layer, head) row is normalized once and shared by its two drift pairs.
        let mut normalized: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
        for &(a, c) in &sched.drift_pairs {
            for &hd in &sched.drift_heads {
                for l in [a, c] {
                    if !normalized.contains_key(&(l, hd)) {
                        normalized.insert((l, hd), unpad_row(&prefix(l, hd)?, pos)?);
                    }
                }
                row.push(kl_divergence(&normalized[&(a, hd)], &normalized[&(c, hd)])?);
            }
        }
    }

    for per_checkpoint in rollouts {
        let r = per_checkpoint[i];
        row.extend([r.rollout_to_bhc, r.rollout_entropy, r.rollout_max_weight]);
    }
    Ok(())
}

fn build_stats(dump: &ActivationDump, ids: &[String]) -> Result<CorpusStats> {
    let texts: Vec<Vec<String>> = ids
        .par_iter()
        .map(|id| {
            let (tokens, _) = dump.load_tokens(dump.doc_index(id)?)?;
            let (s, e) = tokens.summary_range;
            Ok(tokens.tokens[s..e].iter().map(|t| t.text.clone()).collect())
        })
        .collect::<Result<_>>()?;
    Ok(CorpusStats::build(texts.iter().map(|d| d.iter().map(String::as_str))))
}

/// One row per summary token of the selected documents, columns per the plan.
///
/// Documents are processed in parallel and merged in the requested order, so
/// the result does not depend on the worker count.
pub fn assemble(dump: &ActivationDump, opts: &AssemblyOptions) -> Result<FeatureMatrix> {
    assemble_timed(dump, opts).map(|(m, _)| m)
}

/// Wall time of one assembly and the part of it spent reading the
/// head-averaged attention stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssemblyTimings {
    pub total_s: f64,
    /// Summed over documents, so with several workers it can exceed the
    /// wall time.
    pub stream_read_s: f64,
}

/// [`assemble`] plus timings. The matrix does not depend on them.
pub fn assemble_timed(dump: &ActivationDump, opts: &AssemblyOptions) -> Result<(FeatureMatrix, AssemblyTimings)> {
    let start = Instant::now();
    let plan = plan(dump.layout(), opts.config)?;
    let doc_ids: Vec<String> = match &opts.doc_ids {
        Some(ids) => ids.clone(),
        None => dump.documents().iter().map(|d| d.doc_id.clone()).collect(),
    };
    let indices: Vec<usize> = doc_ids.iter().map(|id| dump.doc_index(id)).collect::<Result<_>>()?;
    let stats_ids = opts.stats_doc_ids.clone().unwrap_or_else(|| doc_ids.clone());
    let stats = build_stats(dump, &stats_ids)?;
    let mut warnings = plan.warnings.clone();
    if opts.stats_doc_ids.is_none() {
        warnings.push("corpus statistics built from the assembled documents".into());
    }

    let cx = Ctx {
        dump,
        plan: &plan,
        stats: &stats,
        wordlist: &opts.wordlist,
    };
    let blocks: Vec<DocBlock> = indices
        .par_iter()
        .map(|&idx| assemble_document(&cx, idx))
        .collect::<Result<_>>()?;

    let n_rows: usize = blocks.iter().map(|b| b.labels.len()).sum();
    let mut values = Vec::with_capacity(n_rows * plan.keep.len());
    let mut labels = Vec::with_capacity(n_rows);
    let mut tokens = Vec::with_capacity(n_rows);
    let mut documents = Vec::with_capacity(blocks.len());
    let mut missing: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut stream_read = Duration::ZERO;
    for (id, b) in doc_ids.iter().zip(blocks) {
        stream_read += b.stream_read;
        let offset = labels.len();
        if b.ner_missing {
            warnings.push(format!("document `{id}` has no ner.json; NER columns hold the sentinel"));
        }
        for (k, r) in b.missing {
            missing
                .entry(plan.registry.columns[k].name.clone())
                .or_default()
                .push(offset + r);
        }
        documents.push(DocRows {
            doc_id: id.clone(),
            rows: b.labels.len(),
        });
        values.extend(b.values);
        labels.extend(b.labels);
        tokens.extend(b.tokens);
    }
    info!(
        "assembled {} rows x {} columns ({}) from {} documents",
        n_rows,
        plan.registry.len(),
        opts.config,
        documents.len()
    );
    let m = FeatureMatrix {
        meta: MatrixMeta {
            registry_hash: plan.registry.hash(),
            registry: plan.registry,
            descriptor_hash: dump.descriptor().hash(),
            documents,
            labels,
            tokens,
            missing,
            warnings,
            stats_doc_ids: stats_ids,
        },
        values,
    };
    m.check()?;
    let timings = AssemblyTimings {
        total_s: start.elapsed().as_secs_f64(),
        stream_read_s: stream_read.as_secs_f64(),
    };
    Ok((m, timings))
}

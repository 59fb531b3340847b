//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! The two heavy criteria (the end-to-end run and the fmax timing) synthesize
//! full-size dumps; the fmax dump needs about 7 GB of scratch disk and is
//! removed afterwards. Set RP_ACCEPT_SCRATCH to put it somewhere other than
//! the system temp directory.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use revprobe_core::assembler::registry;
use revprobe_core::dump::ModelDescriptor;
use revprobe_core::eval::{auprc, auroc};
use revprobe_core::features::context::*;
use revprobe_core::features::contrast::*;
use revprobe_core::features::internal::*;
use revprobe_core::features::output::*;
use revprobe_core::FeatureConfig;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn revprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_revprobe"))
        .args(args)
        .env("RP_LOG", "error")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> std::result::Result<Output, String> {
    let out = revprobe(args);
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!(
            "`revprobe {}` exited {:?}: {}{}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

// ---------------------------------------------------------------- formulas

struct Suite {
    failures: Vec<String>,
    count: usize,
}

impl Suite {
    fn close(&mut self, what: &str, got: f64, want: f64) {
        self.count += 1;
        if !((got - want).abs() <= 1e-9) {
            self.failures.push(format!("{what}: got {got:.15}, want {want:.15}"));
        }
    }

    fn all(&mut self, what: &str, got: &[f64], want: &[f64]) {
        if got.len() != want.len() {
            self.failures.push(format!("{what}: length {} vs {}", got.len(), want.len()));
            return;
        }
        for (i, (&g, &w)) in got.iter().zip(want).enumerate() {
            self.close(&format!("{what}[{i}]"), g, w);
        }
    }
}

// Oracle values computed at 50 digits and frozen here.
const H_721: f64 = 0.801_818_552_543_337_308_56;
const NEG_LSE_123: f64 = -3.407_605_964_444_380_304_5;
const KL_91_55: f64 = 0.368_064_207_168_497_069_91;
const ATTN_H_5_25_25: f64 = 1.039_720_770_839_917_964_1;
const CTX_RELIANCE: f64 = 1.999_999_999_000_000_000_5;
const NPMI_HALF_QUARTER: f64 = 0.999_999_999_855_730_495_93;
const BHC_RATIO: f64 = 0.499_999_999_987_5;
const BHC_NORM: f64 = 0.399_999_999_992;
const TOP3: f64 = 0.566_666_666_666_666_666_67;
const LN2: f64 = 0.693_147_180_559_945_309_42;
const LN4: f64 = 1.386_294_361_119_890_618_8;
const LN10: f64 = 2.302_585_092_994_045_684;

fn formula_suite(t: &mut Suite) -> revprobe_core::Result<()> {
    // distribution shape
    t.close("entropy uniform", shannon_entropy(&[0.25; 4])?, LN4);
    t.close("entropy one-hot", shannon_entropy(&[0.0, 1.0, 0.0])?, 0.0);
    t.close("entropy (.7,.2,.1)", shannon_entropy(&[0.7, 0.2, 0.1])?, H_721);
    t.close("energy zeros", free_energy(&[0.0; 4])?, -LN4);
    t.close("energy single", free_energy(&[5.0])?, -5.0);
    t.close("energy (1,2,3)", free_energy(&[1.0, 2.0, 3.0])?, NEG_LSE_123);

    let f = shape_features(&DistributionView::from_probs(&[0.25; 4], 1, vec![])?)?;
    t.all("shape uniform", &[f.margin, f.ratio, f.gini, f.normalized_entropy], &[0.0, 1.0, 0.0, 1.0]);
    let f = shape_features(&DistributionView::from_probs(&[0.0, 0.0, 1.0, 0.0], 2, vec![])?)?;
    t.all("shape one-hot", &[f.current_prob, f.perplexity], &[1.0, 1.0]);
    let f = shape_features(&DistributionView::from_probs(&[0.7, 0.2, 0.1], 0, vec![])?)?;
    t.all("shape (.7,.2,.1)", &[f.margin, f.ratio, f.gini], &[0.5, 3.5, -0.4]);

    let mut sims = vec![1.0];
    sims.resize(20, 0.3);
    let v = DistributionView::from_probs(&[0.5, 0.3, 0.2], 0, sims)?;
    let sf = semantic_features(&v, 5)?;
    t.all("semantic self", &[sf.rank, sf.in_topk, sf.max_sim], &[1.0, 1.0, 1.0]);
    let v = DistributionView::from_probs(&[0.5, 0.3, 0.2], 1, vec![0.0; 20])?;
    let sf = semantic_features(&v, 10)?;
    t.all("semantic zero sims", &[sf.semantic_rank, sf.avg_sim], &[0.0, 0.0]);
    let v = DistributionView::from_probs(&[0.5, 0.3, 0.2], 0, vec![0.9, 0.5, 0.3, 0.1, 0.1])?;
    let sf = semantic_features(&v, 5)?;
    t.all("semantic top3", &[sf.top3_sim, sf.semantic_rank], &[TOP3, 1.0]);

    // contrast
    let tri = |p_plus, p_minus, h_plus, h_minus, prior: Option<(f64, f64)>| TriPassStats {
        p_plus,
        p_minus,
        h_plus,
        h_minus,
        e_plus: 0.0,
        e_minus: 0.0,
        prior: prior.map(|(p_prior, h_prior)| PriorStats { p_prior, h_prior }),
    };
    t.all("delta identical", &delta_features(&tri(0.4, 0.4, 1.0, 1.0, None)).values(), &[0.0; 3]);
    t.close("delta_prob", delta_features(&tri(0.8, 0.3, 0.0, 0.0, None)).delta_prob, 0.5);
    t.close("delta_entropy", delta_features(&tri(0.0, 0.0, 0.5, 1.2, None)).delta_entropy, -0.7);

    let p = [0.1, 0.2, 0.3, 0.4];
    t.close("kl p=q", kl_divergence(&p, &p)?, 0.0);
    t.close("kl one-hot vs uniform", kl_divergence(&[1.0, 0.0, 0.0, 0.0], &[0.25; 4])?, LN4);
    t.close("js p=q", js_divergence(&p, &p)?, 0.0);
    t.close("js disjoint", js_divergence(&[1.0, 0.0], &[0.0, 1.0])?, LN2);

    t.close("pmi equal", pmi(0.3, 0.3).0, 0.0);
    t.close("pmi (.8,.2)", pmi(0.8, 0.2).0, LN4);
    t.close("npmi (.5,.25)", pmi(0.5, 0.25).1, NPMI_HALF_QUARTER);
    let pf = pmi_features(&tri(0.8, 0.2, 0.0, 0.0, Some((0.2, 1.0))))?;
    t.all("pmi features", &[pf.pmi, pf.pmi_vs_prior], &[LN4, LN4]);

    let d = entropy_decomposition(&tri(0.0, 0.0, 2.0, 2.0, Some((0.1, 2.0))))?;
    t.all("decomposition flat", &d.values(), &[0.0; 5]);
    let d = entropy_decomposition(&tri(0.0, 0.0, 1.0, 3.0, Some((0.1, 5.0))))?;
    t.all(
        "decomposition (5,3,1)",
        &d.values(),
        &[2.0, 2.0, 4.0, BHC_RATIO, BHC_NORM],
    );
    let d = entropy_decomposition(&tri(0.0, 0.0, 2.0, 1.0, Some((0.1, 3.0))))?;
    t.close("decomposition sign kept", d.bhc_info_gain, -1.0);

    let d = prior_decomposition(&tri(0.4, 0.3, 0.0, 0.0, Some((0.4, 1.0))))?;
    t.all(
        "prior decomposition equal",
        &[d.halluc_risk_ratio, d.patient_specificity],
        &[0.4 / (0.4 + 1e-10), 0.0],
    );
    let d = prior_decomposition(&tri(0.6, 0.2, 0.0, 0.0, Some((0.1, 1.0))))?;
    t.all(
        "prior decomposition (.1,.2,.6)",
        &[d.prob_dominance_order, d.context_reliance_score],
        &[2.0, CTX_RELIANCE],
    );
    let d = prior_decomposition(&tri(0.6, 0.0, 0.0, 0.0, Some((0.1, 1.0))))?;
    t.count += 1;
    if !d.context_reliance_score.is_finite() {
        t.failures.push("context_reliance with p- = 0 is not finite".into());
    }

    t.all("cpmi equal", &cpmi(&[0.7; 4], &[1; 4])?, &[0.0; 4]);
    t.all("cpmi pair", &cpmi(&[1.0, 3.0], &[2, 2])?, &[-1.0, 1.0]);
    t.all("cpmi singleton", &cpmi(&[1.0, 3.0, 5.0], &[2, 2, 4])?, &[-1.0, 1.0, 0.0]);

    // internal state
    let h = hidden_summary(&[0.0; 6])?;
    t.all("hidden zero", &[h.norm, h.mean, h.std], &[0.0; 3]);
    let h = hidden_summary(&[1.0; 4])?;
    t.all("hidden ones", &[h.norm, h.mean, h.std], &[2.0, 1.0, 0.0]);
    let h = hidden_summary(&[3.0, 4.0])?;
    t.all("hidden (3,4)", &[h.norm, h.mean, h.std], &[5.0, 3.5, 0.5]);
    let c = layer_change(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0])?;
    t.all("change same", &[c.l2_change, c.cosine], &[0.0, 1.0]);
    let c = layer_change(&[1.0, 0.0], &[0.0, 1.0])?;
    t.all("change orthogonal", &[c.l2_change, c.cosine], &[2f64.sqrt(), 0.0]);
    let c = layer_change(&[3.0, 4.0], &[-3.0, -4.0])?;
    t.all("change negated", &[c.l2_change, c.cosine], &[10.0, -1.0]);

    let a = attention_row_stats(&[0.125; 8], 7, 3)?;
    t.all("attention uniform", &[a.attn_entropy, a.attn_to_bhc, a.attn_max], &[8f64.ln(), 0.375, 0.125]);
    let a = attention_row_stats(&[0.0, 1.0, 0.0, 0.0], 3, 2)?;
    t.all("attention one bhc", &[a.attn_entropy, a.attn_to_bhc, a.attn_max], &[0.0, 1.0, 1.0]);
    let a = attention_row_stats(&[0.5, 0.25, 0.25], 2, 1)?;
    t.all("attention (.5,.25,.25)", &[a.attn_entropy, a.attn_to_bhc, a.attn_max], &[ATTN_H_5_25_25, 0.5, 0.5]);
    t.close("drift identical", attention_drift(&[0.2, 0.8], &[0.2, 0.8])?, 0.0);
    t.close("drift one-hot vs uniform", attention_drift(&[1.0, 0.0, 0.0, 0.0], &[0.25; 4])?, LN4);
    t.close("drift (.9,.1)", attention_drift(&[0.9, 0.1], &[0.5, 0.5])?, KL_91_55);

    let n = 6;
    let identity: Vec<f64> = (0..n * n).map(|k| if k % (n + 1) == 0 { 1.0 } else { 0.0 }).collect();
    let stats = rollout((0..3).map(|_| Ok(identity.clone())), n, &[0, 2], &[4, 5], 2)?;
    for cp in &stats {
        for r in cp {
            t.all("rollout identity", &[r.rollout_to_bhc, r.rollout_entropy, r.rollout_max_weight], &[0.0, 0.0, 1.0]);
        }
    }
    let b = 3;
    let stats = rollout(std::iter::once(Ok(vec![1.0 / n as f64; n * n])), n, &[0], &[0, 4], b)?;
    let mut state = RolloutState::new(n);
    state.consume(0, &vec![1.0 / n as f64; n * n])?;
    for i in 0..n {
        let want: Vec<f64> = (0..n).map(|j| 0.5 / n as f64 + if i == j { 0.5 } else { 0.0 }).collect();
        t.all("rollout uniform row", state.matrix().row(i), &want);
    }
    // position 4 lies outside the first b columns
    t.close("rollout uniform to_bhc", stats[0][1].rollout_to_bhc, 0.5 * b as f64 / n as f64);

    // context
    let nb = neighborhood(&[0.4; 7], 3, 2)?;
    t.all("neighborhood constant", &[nb.isolation, nb.neighbor_std, nb.relative_isolation], &[0.0; 3]);
    let nb = neighborhood(&[0.5, 0.1, 0.3, 0.8, 0.2], 0, 2)?;
    t.close("neighborhood edge", nb.neighbor_avg, 0.2);
    let nb = neighborhood(&[0.1, 0.1, 0.9, 0.1, 0.1], 2, 2)?;
    t.close("neighborhood isolated", nb.isolation, 0.8);
    t.close("density all", medical_density(&[true, true, false, true, true], 2, 2), 1.0);
    t.close("density none", medical_density(&[false; 5], 2, 2), 0.0);
    t.close("density half", medical_density(&[true, false, false, true, false], 2, 2), 0.5);

    let stats = CorpusStats::build(vec![vec!["a", "b"], vec!["b", "c"], vec!["b"], vec!["d"]]);
    t.all("lexical unseen", &lexical("zzz", &stats).values(), &[0.0, 0.0, 0.0, 4f64.ln(), 1.0]);
    t.close("lexical df = N-1", lexical("b", &stats).idf, 0.0);
    let mut nine = CorpusStats::default();
    nine.freq.insert("x".into(), 9);
    nine.doc_freq.insert("x".into(), 2);
    nine.n_documents = 5;
    nine.total_tokens = 30;
    t.close("lexical freq_log", lexical("x", &nine).freq_log, LN10);

    t.all("ner none", &ner_features(&NerAnnotation::default(), true)?, &[0.0; 10]);
    let chem = ner_features(&NerAnnotation::new(EntityType::Chemical, NerSource::Both)?, true)?;
    t.all("ner chemical", &[chem[2], chem[3], chem[9]], &[1.0, 1.0, 1.0]);
    let dis = ner_features(&NerAnnotation::new(EntityType::Disease, NerSource::Vocab)?, true)?;
    t.all("ner disease", &[dis[2], dis[4], dis[9]], &[0.6, 1.0, 0.0]);
    Ok(())
}

fn criterion_formulas() -> Check {
    let start = Instant::now();
    let mut t = Suite {
        failures: Vec::new(),
        count: 0,
    };
    formula_suite(&mut t).map_err(|e| format!("error {}: {e}", e.code()))?;
    let elapsed = start.elapsed();
    ensure(t.failures.is_empty(), || t.failures.join("; "))?;
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("{} values within 1e-9 in {:.3} s", t.count, elapsed.as_secs_f64()))
}

// ----------------------------------------------------------------- rollout

fn random_stochastic(rng: &mut ChaCha8Rng, n: usize, causal: bool) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        let end = if causal { i + 1 } else { n };
        let row = &mut a[i * n..i * n + end];
        for v in row.iter_mut() {
            // a fraction of exact zeros exercises the sparse paths
            *v = if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() };
        }
        if row.iter().all(|&v| v == 0.0) {
            row[rng.gen_range(0..end)] = 1.0;
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    a
}

/// `R_k = (0.5 A_k + 0.5 I) R_{k-1}` by plain dense products.
fn dense_product(layers: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut r: Vec<f64> = (0..n * n).map(|k| if k % (n + 1) == 0 { 1.0 } else { 0.0 }).collect();
    for a in layers {
        let mut next = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let m = 0.5 * a[i * n + k] + if i == k { 0.5 } else { 0.0 };
                for j in 0..n {
                    next[i * n + j] += m * r[k * n + j];
                }
            }
        }
        r = next;
    }
    r
}

fn criterion_rollout() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut worst_row) = (0.0f64, 0.0f64);
    for case in 0..200 {
        let n = rng.gen_range(1..=64);
        let layers = rng.gen_range(1..=8);
        let causal = case % 2 == 0;
        let mats: Vec<Vec<f64>> = (0..layers).map(|_| random_stochastic(&mut rng, n, causal)).collect();
        let mut state = RolloutState::new(n);
        for (l, m) in mats.iter().enumerate() {
            state.consume(l, m).map_err(|e| e.to_string())?;
        }
        let oracle = dense_product(&mats, n);
        for i in 0..n {
            let row = state.matrix().row(i);
            for (j, &v) in row.iter().enumerate() {
                worst = worst.max((v - oracle[i * n + j]).abs());
            }
            worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("max deviation {worst:e}"))?;
    ensure(worst_row <= 1e-5, || format!("row sum off by {worst_row:e}"))?;
    Ok(format!("200 instances, max deviation {worst:.1e}, max row-sum error {worst_row:.1e}"))
}

// ----------------------------------------------------------------- metrics

fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] == 0 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Steps through every distinct score as a threshold `score >= t`.
fn brute_auprc(scores: &[f64], labels: &[u8]) -> f64 {
    let pos = labels.iter().filter(|&&y| y != 0).count() as f64;
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let mut tp = 0.0;
        let mut predicted = 0.0;
        for (&s, &y) in scores.iter().zip(labels) {
            if s >= t {
                predicted += 1.0;
                if y != 0 {
                    tp += 1.0;
                }
            }
        }
        let recall = tp / pos;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    ap
}

fn criterion_metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut instances = 0;
    while instances < 1000 {
        let n = rng.gen_range(2..=200);
        // coarse score grids force many ties
        let levels = rng.gen_range(1..=20);
        let rate = rng.gen_range(0.05..0.95);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_bool(rate) as u8).collect();
        if labels.iter().all(|&y| y == 0) || labels.iter().all(|&y| y == 1) {
            continue;
        }
        instances += 1;
        let a = auroc(&scores, &labels).map_err(|e| e.to_string())?;
        let p = auprc(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((a - brute_auroc(&scores, &labels)).abs());
        worst = worst.max((p - brute_auprc(&scores, &labels)).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("1000 instances, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- registry

fn criterion_registry() -> Check {
    let d = ModelDescriptor {
        n_layers: 32,
        n_heads: 32,
        hidden_dim: 4096,
        vocab_size: 32000,
        tokenizer_id: "reference-32".into(),
        pass_names: vec!["with_bhc".into(), "no_bhc".into(), "prior".into()],
    };
    let mut counts = Vec::new();
    for (config, want, caption) in [
        (FeatureConfig::F93, 93, None),
        (FeatureConfig::F120, 120, None),
        (FeatureConfig::F204, 182, Some("204")),
        (FeatureConfig::Fmax, 408, Some("454")),
    ] {
        let r = registry(&d, config).map_err(|e| e.to_string())?;
        ensure(r.len() == want, || format!("{config}: {} columns, want {want}", r.len()))?;
        match caption {
            Some(c) => ensure(r.log.iter().any(|l| l.contains(c) && l.contains(&want.to_string())), || {
                format!("{config}: log lacks the {c} caption note: {:?}", r.log)
            })?,
            None => ensure(!r.log.iter().any(|l| l.contains("deviation")), || {
                format!("{config}: unexpected deviation note")
            })?,
        }
        counts.push(format!("{config}={}", r.len()));
    }
    Ok(format!("{} (204/454 caption notes logged)", counts.join(" ")))
}

// ------------------------------------------------------- end-to-end runs

struct E2e {
    out: PathBuf,
    seconds: f64,
    report: Value,
}

fn pipeline_run(cfg: &Path, out: &Path, workers: &str) -> std::result::Result<E2e, String> {
    let start = Instant::now();
    run_ok(&["--config-file", s(cfg), "--workers", workers, "--json", "pipeline", "--out", s(out)])?;
    let seconds = start.elapsed().as_secs_f64();
    let text = std::fs::read_to_string(out.join("report.json")).map_err(|e| e.to_string())?;
    let report = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    Ok(E2e {
        out: out.to_path_buf(),
        seconds,
        report,
    })
}

fn criterion_e2e(run: &E2e) -> Check {
    let m = &run.report["metrics"];
    let (auprc, auroc, prevalence) = (
        m["auprc"].as_f64().unwrap_or(f64::NAN),
        m["auroc"].as_f64().unwrap_or(f64::NAN),
        m["prevalence"].as_f64().unwrap_or(f64::NAN),
    );
    let line = format!(
        "test AUPRC {auprc:.4} ({:.1}x prevalence {prevalence:.4}), AUROC {auroc:.4}, {:.1} s",
        auprc / prevalence,
        run.seconds
    );
    ensure(auprc >= 10.0 * prevalence, || line.clone())?;
    ensure(auroc >= 0.85, || line.clone())?;
    ensure(run.seconds < 600.0, || line.clone())?;
    Ok(line)
}

fn criterion_baselines(run: &E2e) -> Check {
    let probe = run.report["metrics"]["auprc"].as_f64().unwrap_or(f64::NAN);
    let baselines = run.report["baselines"].as_array().ok_or("report has no baselines")?;
    let mut parts = vec![format!("probe {probe:.4}")];
    for name in ["token_entropy", "sliding_window_entropy"] {
        let b = baselines
            .iter()
            .find(|b| b["method"] == name)
            .ok_or_else(|| format!("baseline {name} missing"))?;
        let v = b["metrics"]["auprc"].as_f64().unwrap_or(f64::NAN);
        parts.push(format!("{name} {v:.4}"));
        ensure(probe > v, || parts.join(", "))?;
    }
    Ok(format!("AUPRC {}", parts.join(", ")))
}

fn criterion_determinism(a: &E2e, cfg: &Path, scratch: &Path) -> Check {
    let b = pipeline_run(cfg, &scratch.join("run_w8"), "8")?;
    for file in ["features.bin", "features.bin.json", "model.bin", "report.json"] {
        let x = std::fs::read(a.out.join(file)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.out.join(file)).map_err(|e| e.to_string())?;
        ensure(x == y, || format!("{file} differs between --workers 1 and --workers 8"))?;
    }
    Ok("features.bin, model.bin and report.json byte-identical for --workers 1 vs 8".into())
}

// -------------------------------------------------------------- throughput

fn criterion_throughput(scratch: &Path) -> Check {
    let dump = scratch.join("fmax_dump");
    let result = throughput_inner(&dump, scratch);
    let _ = std::fs::remove_dir_all(&dump);
    result
}

fn throughput_inner(dump: &Path, scratch: &Path) -> Check {
    run_ok(&[
        "--seed", "7", "synth", s(dump), "--docs", "100", "--tokens", "512", "--layers", "32", "--heads", "32",
        "--hidden-dim", "64", "--schedule", "fmax", "--planted-rate", "0.0205",
    ])?;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let workers = cores.min(8).to_string();
    let out = scratch.join("fmax.bin");
    let start = Instant::now();
    let run = run_ok(&["--json", "--workers", &workers, "features", s(dump), "--config", "fmax", "--out", s(&out)])?;
    let wall = start.elapsed().as_secs_f64();
    let v: Value = serde_json::from_slice(&run.stdout).map_err(|e| e.to_string())?;
    let total = v["timings"]["total_s"].as_f64().ok_or("no timings in features output")?;
    let stream = v["timings"]["stream_read_s"].as_f64().ok_or("no timings in features output")?;
    // stream reads are summed over workers
    let assembly = total - stream / workers.parse::<f64>().unwrap();
    let line = format!(
        "fmax 100x512 (L32/H32): {assembly:.1} s excluding {stream:.1} s of attention-stream reads \
         ({total:.1} s assembly, {wall:.1} s process) on {workers} worker(s), {cores} core(s) available"
    );
    ensure(assembly < 60.0, || line.clone())?;
    Ok(line)
}

// -------------------------------------------------------------------- main

fn main() {
    // libtest flags such as --nocapture are accepted and ignored
    let base = std::env::var_os("RP_ACCEPT_SCRATCH").map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&base).expect("scratch directory");
    let scratch = tempfile::Builder::new().prefix("revprobe-accept").tempdir_in(&base).expect("scratch");
    let cfg = scratch.path().join("e2e.toml");
    std::fs::write(
        &cfg,
        "seed = 7\ndocs = 100\ntokens = 512\nplanted_rate = 0.0205\neffect = \"moderate\"\nfeature_config = \"f93\"\n",
    )
    .expect("config file");

    let mut results: Vec<(&str, Check)> = vec![
        ("formula suite", criterion_formulas()),
        ("rollout oracle", criterion_rollout()),
        ("metric oracle", criterion_metrics()),
        ("registry counts", criterion_registry()),
    ];
    match pipeline_run(&cfg, &scratch.path().join("run_w1"), "1") {
        Ok(run) => {
            results.push(("end-to-end planted signal", criterion_e2e(&run)));
            results.push(("baseline ordering", criterion_baselines(&run)));
            results.push(("determinism", criterion_determinism(&run, &cfg, scratch.path())));
        }
        Err(e) => {
            for name in ["end-to-end planted signal", "baseline ordering", "determinism"] {
                results.push((name, Err(e.clone())));
            }
        }
    }
    results.push(("fmax throughput", criterion_throughput(scratch.path())));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

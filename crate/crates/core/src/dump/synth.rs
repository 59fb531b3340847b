//! Deterministic synthetic dumps with planted unsupported spans.
//!
//! Planted tokens get a weaker grounding boost from the source record in the
//! with-context pass, a uniform negative logit shift (higher free energy),
//! less attention to the source record and noisier hidden trajectories. A
//! per-document logit offset shared by both passes hides the energy shift from
//! single-pass scores while leaving the cross-pass deltas intact.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dump::tensor::DType;
use crate::dump::types::*;
use crate::dump::writer::DumpWriter;
use crate::error::{Error, Result};
use crate::features::context::{EntityType, NerRecord, NerSource, Wordlist};
use crate::features::internal::hidden_summary;
use crate::features::output::TopKRecord;
use crate::features::schedule::make_schedule;
use crate::features::FeatureConfig;
use crate::numeric::softmax;

const DEFAULT_TERMS: &str = include_str!("../features/medical_terms.txt");
const MAX_SPAN: usize = 5;
const RECENT: usize = 8;
const EMBED_DIM: usize = 16;
const ERROR_TYPES: [&str; 3] = ["unsupported_medication", "unsupported_finding", "unsupported_detail"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_docs: usize,
    /// Context length per document; the first quarter is the source record.
    pub tokens_per_doc: usize,
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub planted_rate: f64,
    pub effect_strength: f64,
    pub seed: u64,
    pub bhc_fraction: f64,
    pub logits: LogitSpec,
    pub prior: bool,
    /// Store rows for this configuration only; `None` stores what every
    /// configuration that fits the model needs.
    pub schedule: Option<FeatureConfig>,
    pub hidden_raw: bool,
    pub hidden_summary: bool,
    pub attention_dtype: DType,
    pub ner: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_docs: 20,
            tokens_per_doc: 128,
            vocab_size: 256,
            hidden_dim: 32,
            n_layers: 12,
            n_heads: 8,
            planted_rate: 0.0205,
            effect_strength: 1.0,
            seed: 7,
            bhc_fraction: 0.25,
            logits: LogitSpec::default(),
            prior: true,
            schedule: None,
            hidden_raw: true,
            hidden_summary: true,
            attention_dtype: DType::F16,
            ner: true,
        }
    }
}

/// Named effect strengths accepted by the command line.
pub fn effect_strength(name: &str) -> Result<f64> {
    match name.trim().to_ascii_lowercase().as_str() {
        "none" => Ok(0.0),
        "weak" => Ok(0.5),
        "moderate" => Ok(1.0),
        "strong" => Ok(1.5),
        other => other
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| Error::DegenerateConfig(format!("effect strength `{name}`"))),
    }
}

impl SynthConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::DegenerateConfig(m));
        if self.vocab_size < 2 {
            return bad(format!("vocab {}", self.vocab_size));
        }
        if self.tokens_per_doc < 2 {
            return bad(format!("{} tokens per document", self.tokens_per_doc));
        }
        if self.n_docs < 1 {
            return bad("no documents".into());
        }
        if !(self.planted_rate > 0.0 && self.planted_rate < 1.0) {
            return bad(format!("planted rate {}", self.planted_rate));
        }
        if !(0.0..1.0).contains(&self.bhc_fraction) {
            return bad(format!("bhc fraction {}", self.bhc_fraction));
        }
        if !self.effect_strength.is_finite() || self.effect_strength < 0.0 {
            return bad(format!("effect strength {}", self.effect_strength));
        }
        if self.hidden_dim < 1 || self.n_layers < 1 || self.n_heads < 1 {
            return bad("model dimensions must be positive".into());
        }
        if !self.hidden_raw && !self.hidden_summary {
            return bad("no hidden encoding".into());
        }
        Ok(())
    }

    fn descriptor(&self) -> ModelDescriptor {
        let mut pass_names = vec![PASS_WITH.to_string(), PASS_WITHOUT.to_string()];
        if self.prior {
            pass_names.push(PASS_PRIOR.to_string());
        }
        ModelDescriptor {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            hidden_dim: self.hidden_dim,
            vocab_size: self.vocab_size,
            tokenizer_id: format!("synthetic-v{}", self.vocab_size),
            pass_names,
        }
    }

    pub fn layout(&self) -> Result<DumpLayout> {
        self.check()?;
        let descriptor = self.descriptor();
        let configs: Vec<FeatureConfig> = match self.schedule {
            Some(c) => vec![c],
            None => FeatureConfig::ALL.to_vec(),
        };
        let mut layers = Vec::new();
        let mut pairs = Vec::new();
        let mut stream = false;
        for c in configs {
            let s = match make_schedule(&descriptor, c) {
                Ok(s) => s,
                Err(e) if self.schedule.is_none() => {
                    log::debug!("synthetic dump skips {c}: {e}");
                    continue;
                }
                Err(e) => return Err(e),
            };
            layers.extend(s.hidden_layer_set());
            pairs.extend(s.attention_row_pairs());
            stream |= !s.rollout_checkpoints.is_empty();
        }
        layers.sort_unstable();
        layers.dedup();
        pairs.sort_unstable();
        pairs.dedup();
        if layers.is_empty() {
            layers = (0..self.n_layers).collect();
        }
        let mut logits = self.logits.clone();
        if logits.encoding == LogitEncoding::Topk {
            logits.top_k = Some(logits.top_k.unwrap_or(128).min(self.vocab_size));
        }
        let layout = DumpLayout {
            descriptor,
            logits,
            prior_per_position: false,
            hidden: Some(HiddenSpec {
                raw: self.hidden_raw,
                summary: self.hidden_summary,
                layers,
                dtype: DType::F16,
            }),
            attention: Some(AttentionSpec {
                row_pairs: pairs,
                avg_stream: stream,
                dtype: self.attention_dtype,
            }),
            topk_sims: true,
            ner: self.ner,
        };
        layout.check()?;
        Ok(layout)
    }
}

/// Token texts and unigram weights shared by every document.
struct Vocabulary {
    texts: Vec<String>,
    log_unigram: Vec<f64>,
    cumulative: Vec<f64>,
    medical: Vec<u32>,
    entity: Vec<EntityType>,
    embeddings: Vec<[f64; EMBED_DIM]>,
}

const ENTITY_CYCLE: [EntityType; 6] = [
    EntityType::Chemical,
    EntityType::Disease,
    EntityType::Anatomy,
    EntityType::Pathology,
    EntityType::Procedure,
    EntityType::Cancer,
];

impl Vocabulary {
    fn new(v: usize, seed: u64) -> Self {
        let terms: Vec<&str> = DEFAULT_TERMS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .take(v / 4)
            .collect();
        const SYL: [&str; 16] = [
            "ba", "ko", "ri", "te", "mu", "sa", "lo", "ne", "di", "pa", "vu", "ge", "hi", "zo", "ca", "fe",
        ];
        let mut texts = Vec::with_capacity(v);
        let mut entity = Vec::with_capacity(v);
        let mut medical = Vec::new();
        for id in 0..v {
            if id == 0 {
                texts.push(" .".to_string());
                entity.push(EntityType::O);
            } else if id <= terms.len() {
                texts.push(format!(" {}", terms[id - 1]));
                entity.push(ENTITY_CYCLE[(id - 1) % ENTITY_CYCLE.len()]);
                medical.push(id as u32);
            } else {
                let mut word = String::from(" ");
                let mut k = id;
                loop {
                    word.push_str(SYL[k % SYL.len()]);
                    k /= SYL.len();
                    if k == 0 {
                        break;
                    }
                }
                texts.push(word);
                entity.push(EntityType::O);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_70c5);
        let mut ranks: Vec<usize> = (0..v).collect();
        for i in (1..v).rev() {
            ranks.swap(i, rng.gen_range(0..=i));
        }
        let weights: Vec<f64> = ranks.iter().map(|&r| 1.0 / (r as f64 + 10.0)).collect();
        let total: f64 = weights.iter().sum();
        let log_unigram = weights.iter().map(|w| (w / total).ln()).collect();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        let embeddings = (0..v)
            .map(|_| {
                let mut e = [0.0; EMBED_DIM];
                e.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
                let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
                e.iter_mut().for_each(|x| *x /= n);
                e
            })
            .collect();
        Vocabulary {
            texts,
            log_unigram,
            cumulative,
            medical,
            entity,
            embeddings,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        let u: f64 = rng.gen();
        self.cumulative.partition_point(|&c| c < u).min(self.texts.len() - 1) as u32
    }

    fn cosine(&self, a: u32, b: u32) -> f64 {
        let (x, y) = (&self.embeddings[a as usize], &self.embeddings[b as usize]);
        x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>().clamp(-1.0, 1.0)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn doc_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 step so neighbouring indices get unrelated streams
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Normalizes `exp(scores)` over `row[..=pos]` in place, zeroing the rest.
fn causal_softmax(row: &mut [f32], pos: usize) {
    let max = row[..=pos].iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row[..=pos].iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row[..=pos].iter_mut() {
        *v /= sum;
    }
    row[pos + 1..].fill(0.0);
}

struct Generated {
    doc: Document,
    stream: Option<Vec<Vec<f32>>>,
}

fn generate(cfg: &SynthConfig, layout: &DumpLayout, vocab: &Vocabulary, index: usize) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(doc_seed(cfg.seed, index));
    let es = cfg.effect_strength;
    let v = cfg.vocab_size;
    let ctx = cfg.tokens_per_doc;
    let bhc_len = ((ctx as f64 * cfg.bhc_fraction).round() as usize).min(ctx - 1);
    let n = ctx - bhc_len;

    // Planted spans: count chosen so the expected positive fraction is the rate.
    let mean_len = (1 + MAX_SPAN) as f64 / 2.0;
    let want = cfg.planted_rate * n as f64 / mean_len;
    let mut n_spans = want.floor() as usize;
    if rng.gen::<f64>() < want.fract() {
        n_spans += 1;
    }
    let mut planted = vec![false; n];
    let mut span_of = vec![usize::MAX; n];
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut attempts = 0;
    while spans.len() < n_spans && attempts < 100 * (n_spans + 1) {
        attempts += 1;
        let len = rng.gen_range(1..=MAX_SPAN).min(n);
        let start = rng.gen_range(0..=n - len);
        let lo = start.saturating_sub(1);
        let hi = (start + len + 1).min(n);
        if planted[lo..hi].iter().any(|&p| p) {
            continue;
        }
        for i in start..start + len {
            planted[i] = true;
            span_of[i] = spans.len();
        }
        spans.push((start, start + len));
    }
    let span_latent: Vec<f64> = spans.iter().map(|_| normal(&mut rng).abs()).collect();

    // Token ids: the summary copies source tokens half the time.
    let mut ids: Vec<u32> = (0..bhc_len).map(|_| vocab.sample(&mut rng)).collect();
    for i in 0..n {
        let id = if planted[i] && !vocab.medical.is_empty() && rng.gen::<f64>() < 0.5 {
            vocab.medical[rng.gen_range(0..vocab.medical.len())]
        } else if !planted[i] && bhc_len > 0 && rng.gen::<f64>() < 0.5 {
            ids[rng.gen_range(0..bhc_len)]
        } else {
            vocab.sample(&mut rng)
        };
        ids.push(id);
    }
    let in_bhc: HashSet<u32> = ids[..bhc_len].iter().copied().collect();

    let mut tokens = Vec::with_capacity(ctx);
    let mut offset = 0;
    for &id in &ids {
        let text = vocab.texts[id as usize].clone();
        let len = text.chars().count();
        tokens.push(Token {
            text,
            start: offset,
            end: offset + len,
            id,
        });
        offset += len;
    }
    let label_spans = spans
        .iter()
        .map(|&(a, b)| LabelSpan {
            start: tokens[bhc_len + a].start + 1,
            end: tokens[bhc_len + b - 1].end,
            error_type: ERROR_TYPES[rng.gen_range(0..ERROR_TYPES.len())].to_string(),
        })
        .collect();

    // Logits for both passes.
    let doc_offset = 2.0 * normal(&mut rng);
    let full = layout.logits.encoding == LogitEncoding::Full;
    let k = layout.logits.top_k.unwrap_or(v);
    let mut with_rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut without_rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let actual = ids[bhc_len + i] as usize;
        let token_offset = normal(&mut rng) + doc_offset;
        let predictability = 2.0 + 1.2 * normal(&mut rng);
        let mut gain = 2.2 + 1.0 * normal(&mut rng);
        // Context moves the free energy of every token a little, not only planted ones.
        let mut shift = 0.6 * normal(&mut rng);
        if planted[i] {
            gain -= 2.0 * es + 0.4 * es * span_latent[span_of[i]];
            shift += 0.5 * es;
        }
        let mut without = Vec::with_capacity(v);
        let mut with = Vec::with_capacity(v);
        for (w, &lu) in vocab.log_unigram.iter().enumerate() {
            let z = lu + normal(&mut rng) + token_offset;
            without.push(z);
            let copy = if in_bhc.contains(&(w as u32)) { 1.0 } else { 0.0 };
            with.push(z + 0.3 * normal(&mut rng) + copy - shift);
        }
        without[actual] += predictability;
        with[actual] += predictability + gain;
        with_rows.push(with);
        without_rows.push(without);
    }

    let mut passes = BTreeMap::new();
    let pack = |rows: &[Vec<f64>], actual: &dyn Fn(usize) -> u32| -> PassBlock {
        if full {
            PassBlock::Full {
                rows: rows.len(),
                vocab: v,
                logits: rows.iter().flatten().map(|&z| z as f32).collect(),
            }
        } else {
            PassBlock::TopK {
                records: rows
                    .iter()
                    .enumerate()
                    .map(|(i, r)| TopKRecord::from_logits(r, k, actual(i)).expect("finite logits"))
                    .collect(),
            }
        }
    };
    let actual_of = |i: usize| ids[bhc_len + i];
    passes.insert(PASS_WITH.to_string(), pack(&with_rows, &actual_of));
    passes.insert(PASS_WITHOUT.to_string(), pack(&without_rows, &actual_of));
    if cfg.prior {
        let prior_row: Vec<f64> = vocab.log_unigram.clone();
        let rows: Vec<Vec<f64>> = if full {
            vec![prior_row]
        } else {
            vec![prior_row; n]
        };
        passes.insert(PASS_PRIOR.to_string(), pack(&rows, &actual_of));
    }

    // Cosine similarity of the actual token to the leading with-context predictions.
    let mut sims = Vec::with_capacity(n * SIMS_WIDTH);
    for (i, row) in with_rows.iter().enumerate() {
        let probs = softmax(row);
        let mut order: Vec<usize> = (0..v).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        for j in 0..SIMS_WIDTH {
            let s = order.get(j).map_or(0.0, |&t| vocab.cosine(actual_of(i), t as u32));
            sims.push(s as f32);
        }
    }
    drop(with_rows);
    drop(without_rows);

    // Token-level latents shared by the hidden and attention blocks, so planted
    // tokens overlap with ordinary ones instead of separating cleanly.
    let bhc_bias: Vec<f64> = (0..n)
        .map(|i| 0.7 * normal(&mut rng) - if planted[i] { 0.8 * es } else { 0.0 })
        .collect();
    let step_scale: Vec<f64> = (0..n)
        .map(|i| 0.5 * (0.3 * normal(&mut rng)).exp() * if planted[i] { 1.0 + 0.3 * es } else { 1.0 })
        .collect();

    let hidden = layout.hidden.as_ref().map(|spec| {
        let d = cfg.hidden_dim;
        let m = spec.layers.len();
        let mut raw = Vec::with_capacity(n * m * d);
        let mut summary = Vec::with_capacity(n * m * HIDDEN_SUMMARY_WIDTH);
        for i in 0..n {
            let sigma = step_scale[i];
            let mut h: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            let mut stored: Vec<Vec<f64>> = Vec::with_capacity(m);
            for layer in 0..cfg.n_layers {
                if layer > 0 {
                    for x in h.iter_mut() {
                        *x = 1.05 * *x + sigma * normal(&mut rng);
                    }
                }
                if spec.layers.binary_search(&layer).is_ok() {
                    // Round through f16 so the stored summary matches the stored raw vectors.
                    let q: Vec<f64> = h.iter().map(|&x| half::f16::from_f64(x).to_f64()).collect();
                    raw.extend(q.iter().map(|&x| x as f32));
                    stored.push(q);
                }
            }
            for s in 0..m {
                let hs = hidden_summary(&stored[s]).expect("non-empty");
                let (l2, cos) = match stored.get(s + 1) {
                    Some(next) => {
                        let c = crate::features::internal::layer_change(&stored[s], next).expect("same dim");
                        (c.l2_change, c.cosine)
                    }
                    None => (0.0, 0.0),
                };
                summary.extend([hs.norm, hs.mean, hs.std, l2, cos].map(|x| x as f32));
            }
        }
        HiddenBlock {
            layers: spec.layers.clone(),
            dim: d,
            raw: spec.raw.then_some(raw),
            summary: spec.summary.then_some(summary),
        }
    });

    let attention = layout.attention.as_ref().filter(|a| !a.row_pairs.is_empty()).map(|spec| {
        let p = spec.row_pairs.len();
        let mut data = vec![0.0f32; n * p * ctx];
        let mut base = vec![0.0f32; ctx];
        for i in 0..n {
            let pos = bhc_len + i;
            let token_bias = bhc_bias[i];
            let layer_noise = 0.6 * step_scale[i] * if planted[i] { 1.0 + 0.2 * es } else { 1.0 };
            let mut current_head = usize::MAX;
            // Pairs are sorted by layer; regenerate the per-head base when the head changes.
            let mut by_head: Vec<usize> = (0..p).collect();
            by_head.sort_by_key(|&s| (spec.row_pairs[s].1, spec.row_pairs[s].0));
            for slot in by_head {
                let (_, head) = spec.row_pairs[slot];
                if head != current_head {
                    current_head = head;
                    let head_bias = 0.3 * (head as f64 % 3.0) - 0.3;
                    for (j, b) in base[..=pos].iter_mut().enumerate() {
                        let mut s = 0.5 * normal(&mut rng);
                        if j < bhc_len {
                            s += head_bias + token_bias;
                        }
                        if pos - j < RECENT {
                            s += 1.0;
                        }
                        *b = s as f32;
                    }
                }
                let row = &mut data[(i * p + slot) * ctx..(i * p + slot + 1) * ctx];
                for j in 0..=pos {
                    row[j] = base[j] + (layer_noise * normal(&mut rng)) as f32;
                }
                causal_softmax(row, pos);
            }
        }
        AttentionRows {
            pairs: spec.row_pairs.clone(),
            ctx,
            data,
        }
    });

    let stream = layout.attention.as_ref().filter(|a| a.avg_stream).map(|_| {
        (0..cfg.n_layers)
            .map(|_| {
                let mut m = vec![0.0f32; ctx * ctx];
                for r in 0..ctx {
                    let bias = if r >= bhc_len { bhc_bias[r - bhc_len] } else { 0.0 };
                    let row = &mut m[r * ctx..(r + 1) * ctx];
                    for (j, x) in row[..=r].iter_mut().enumerate() {
                        let mut s = 0.5 * normal(&mut rng);
                        if j < bhc_len {
                            s += bias;
                        }
                        if r - j < RECENT {
                            s += 1.0;
                        }
                        *x = s as f32;
                    }
                    causal_softmax(row, r);
                }
                m
            })
            .collect()
    });

    let ner = cfg.ner.then(|| {
        let mut out = Vec::new();
        for i in 0..n {
            let id = ids[bhc_len + i] as usize;
            let ty = vocab.entity[id];
            if ty != EntityType::O {
                let source = if rng.gen::<f64>() < 0.7 { NerSource::Both } else { NerSource::Vocab };
                out.push(NerRecord {
                    token_index: i,
                    entity_type: ty,
                    source,
                });
            } else if rng.gen::<f64>() < 0.03 {
                out.push(NerRecord {
                    token_index: i,
                    entity_type: EntityType::Organism,
                    source: NerSource::Ner,
                });
            }
        }
        out
    });

    Generated {
        doc: Document {
            doc_id: format!("doc_{index:05}"),
            bhc_len,
            summary_range: (bhc_len, ctx),
            tokens,
            label_spans,
            passes,
            hidden,
            attention,
            topk_sims: Some(sims),
            ner,
        },
        stream,
    }
}

/// Writes a synthetic dump to `root`. Documents are generated in parallel
/// batches and written in index order, so the bytes depend only on `cfg`.
pub fn synthesize(cfg: &SynthConfig, root: &Path) -> Result<()> {
    let layout = cfg.layout()?;
    let vocab = Vocabulary::new(cfg.vocab_size, cfg.seed);
    let mut writer = DumpWriter::create(root, layout.clone())?;
    let batch = rayon::current_num_threads().max(1);
    for start in (0..cfg.n_docs).step_by(batch) {
        let end = (start + batch).min(cfg.n_docs);
        let docs: Vec<Generated> = (start..end)
            .into_par_iter()
            .map(|i| generate(cfg, &layout, &vocab, i))
            .collect();
        for g in docs {
            writer.write_document(&g.doc, g.stream)?;
        }
    }
    writer.finish()?;
    Ok(())
}

/// The default medical wordlist matches the synthetic medical vocabulary.
pub fn synthetic_wordlist() -> Wordlist {
    Wordlist::parse(DEFAULT_TERMS)
}

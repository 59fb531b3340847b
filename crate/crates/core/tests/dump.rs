use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use revprobe_core::dump::*;
use revprobe_core::features::output::TopKRecord;
use revprobe_core::FeatureConfig;

fn small_layout(encoding: LogitEncoding) -> DumpLayout {
    DumpLayout {
        descriptor: ModelDescriptor {
            n_layers: 4,
            n_heads: 2,
            hidden_dim: 3,
            vocab_size: 8,
            tokenizer_id: "toy".into(),
            pass_names: vec![PASS_WITH.into(), PASS_WITHOUT.into()],
        },
        logits: LogitSpec {
            encoding,
            dtype: DType::F32,
            top_k: (encoding == LogitEncoding::Topk).then_some(3),
        },
        prior_per_position: false,
        hidden: None,
        attention: Some(AttentionSpec {
            row_pairs: vec![(1, 0)],
            avg_stream: true,
            dtype: DType::F32,
        }),
        topk_sims: false,
        ner: false,
    }
}

fn toy_doc(encoding: LogitEncoding) -> Document {
    let texts = [" a", " b", " c", " d"];
    let tokens: Vec<Token> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| Token {
            text: t.to_string(),
            start: 2 * i,
            end: 2 * i + 2,
            id: i as u32,
        })
        .collect();
    let logits: Vec<f32> = (0..4 * 8).map(|i| (i % 7) as f32 * 0.25 - 0.5).collect();
    let block = match encoding {
        LogitEncoding::Full => PassBlock::Full {
            rows: 4,
            vocab: 8,
            logits,
        },
        LogitEncoding::Topk => PassBlock::TopK {
            records: (0..4)
                .map(|i| {
                    let row: Vec<f64> = logits[i * 8..(i + 1) * 8].iter().map(|&z| z as f64).collect();
                    TopKRecord::from_logits(&row, 3, i as u32).unwrap()
                })
                .collect(),
        },
    };
    let mut passes = BTreeMap::new();
    passes.insert(PASS_WITH.to_string(), block.clone());
    passes.insert(PASS_WITHOUT.to_string(), block);
    let mut rows = vec![0.0f32; 4 * 4];
    for i in 0..4 {
        for j in 0..=i {
            rows[i * 4 + j] = 1.0 / (i + 1) as f32;
        }
    }
    Document {
        doc_id: "d0".into(),
        bhc_len: 0,
        summary_range: (0, 4),
        tokens,
        label_spans: vec![LabelSpan {
            start: 3,
            end: 4,
            error_type: "x".into(),
        }],
        passes,
        hidden: None,
        attention: Some(AttentionRows {
            pairs: vec![(1, 0)],
            ctx: 4,
            data: rows.clone(),
        }),
        topk_sims: None,
        ner: None,
    }
}

fn stream() -> Vec<Vec<f32>> {
    let mut m = vec![0.0f32; 16];
    for i in 0..4 {
        for j in 0..=i {
            m[i * 4 + j] = 1.0 / (i + 1) as f32;
        }
    }
    vec![m; 4]
}

fn write_toy(root: &Path, encoding: LogitEncoding) {
    let mut w = DumpWriter::create(root, small_layout(encoding)).unwrap();
    w.write_document(&toy_doc(encoding), Some(stream())).unwrap();
    w.finish().unwrap();
}

#[test]
fn roundtrip_full_and_topk() {
    for enc in [LogitEncoding::Full, LogitEncoding::Topk] {
        let dir = tempfile::tempdir().unwrap();
        write_toy(dir.path(), enc);
        let dump = ActivationDump::open(dir.path()).unwrap();
        let doc = dump.load_document(0).unwrap();
        let orig = toy_doc(enc);
        assert_eq!(doc.tokens, orig.tokens);
        assert_eq!(doc.label_spans, orig.label_spans);
        match (&doc.passes[PASS_WITH], &orig.passes[PASS_WITH]) {
            (PassBlock::Full { logits: a, .. }, PassBlock::Full { logits: b, .. }) => {
                assert_eq!(a, b);
                assert_eq!(fs::metadata(dir.path().join("doc_00000/pass_with_bhc/logits.bin")).unwrap().len(), 8 + 8 + 16 + 32 * 4);
            }
            (PassBlock::TopK { records: a }, PassBlock::TopK { records: b }) => {
                for (x, y) in a.iter().zip(b) {
                    assert_eq!(x.ids, y.ids);
                    for (p, q) in x.probs.iter().zip(&y.probs) {
                        assert_eq!(*p as f32, *q as f32);
                    }
                }
            }
            _ => panic!("encoding changed"),
        }
        assert_eq!(doc.attention, orig.attention);
        assert!(validate(&dump).is_clean(), "{:?}", validate(&dump).findings);
    }
}

#[test]
fn topk_boundaries() {
    let layout = small_layout(LogitEncoding::Topk);
    let mut doc = toy_doc(LogitEncoding::Topk);
    let rec = |probs: Vec<f64>, tail: f64| TopKRecord {
        ids: vec![0, 1, 2],
        probs,
        tail_mass: tail,
        entropy: 1.0,
        energy: -1.0,
        actual_prob: 0.1,
    };
    let set = |doc: &mut Document, r: TopKRecord| {
        doc.passes.insert(PASS_WITH.into(), PassBlock::TopK { records: vec![r; 4] });
    };
    set(&mut doc, rec(vec![0.25, 0.15, 0.1], 0.5));
    let dir = tempfile::tempdir().unwrap();
    let mut w = DumpWriter::create(dir.path(), layout.clone()).unwrap();
    w.write_document(&doc, Some(stream())).unwrap();

    set(&mut doc, rec(vec![0.1, 0.15, 0.25], 0.5));
    doc.doc_id = "d1".into();
    let err = w.write_document(&doc, Some(stream())).unwrap_err();
    assert_eq!(err.code(), "SHAPE_VIOLATION");
}

#[test]
fn writer_rejects_bad_payloads() {
    let dir = tempfile::tempdir().unwrap();
    let mut w = DumpWriter::create(dir.path(), small_layout(LogitEncoding::Full)).unwrap();
    w.write_document(&toy_doc(LogitEncoding::Full), Some(stream())).unwrap();
    let err = w.write_document(&toy_doc(LogitEncoding::Full), Some(stream())).unwrap_err();
    assert_eq!(err.code(), "DUPLICATE_DOC_ID");

    let mut doc = toy_doc(LogitEncoding::Full);
    doc.doc_id = "nan".into();
    if let Some(PassBlock::Full { logits, .. }) = doc.passes.get_mut(PASS_WITH) {
        logits[3] = f32::NAN;
    }
    assert_eq!(w.write_document(&doc, Some(stream())).unwrap_err().code(), "NON_FINITE");

    let mut doc = toy_doc(LogitEncoding::Full);
    doc.doc_id = "short".into();
    doc.passes.insert(
        PASS_WITHOUT.into(),
        PassBlock::Full {
            rows: 3,
            vocab: 8,
            logits: vec![0.0; 24],
        },
    );
    assert_eq!(w.write_document(&doc, Some(stream())).unwrap_err().code(), "SHAPE_VIOLATION");
}

#[test]
fn reader_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path(), LogitEncoding::Full);
    let logits = dir.path().join("doc_00000/pass_with_bhc/logits.bin");
    let bytes = fs::read(&logits).unwrap();

    fs::write(&logits, &bytes[..bytes.len() - 4]).unwrap();
    let dump = ActivationDump::open(dir.path()).unwrap();
    assert_eq!(dump.load_document(0).unwrap_err().code(), "CORRUPT_BLOCK");

    let mut flipped = bytes.clone();
    *flipped.last_mut().unwrap() ^= 1;
    fs::write(&logits, &flipped).unwrap();
    assert_eq!(dump.load_document(0).unwrap_err().code(), "CHECKSUM_MISMATCH");
    let report = validate(&dump);
    assert_eq!(report.count("CHECKSUM_MISMATCH"), 1);

    let manifest = dir.path().join("manifest.json");
    let text = fs::read_to_string(&manifest).unwrap().replace("\"version\": 1", "\"version\": 99");
    fs::write(&manifest, text).unwrap();
    assert_eq!(ActivationDump::open(dir.path()).unwrap_err().code(), "UNSUPPORTED_VERSION");

    let empty = tempfile::tempdir().unwrap();
    assert_eq!(ActivationDump::open(empty.path()).unwrap_err().code(), "MISSING_FILE");
}

#[test]
fn validation_findings() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = toy_doc(LogitEncoding::Full);
    if let Some(a) = doc.attention.as_mut() {
        a.data[3 * 4] = 0.45; // row of token 3 now sums to 1.2
    }
    doc.label_spans.push(LabelSpan {
        start: 6,
        end: 40,
        error_type: "x".into(),
    });
    let mut w = DumpWriter::create(dir.path(), small_layout(LogitEncoding::Full)).unwrap();
    w.write_document(&doc, Some(stream())).unwrap();
    w.finish().unwrap();
    let report = validate(&ActivationDump::open(dir.path()).unwrap());
    assert_eq!(report.count("ROW_NOT_STOCHASTIC"), 1, "{:?}", report.findings);
    assert_eq!(report.count("SPAN_OUT_OF_RANGE"), 1);
    assert_eq!(report.findings.len(), 2);
    let row = report.findings.iter().find(|f| f.code == "ROW_NOT_STOCHASTIC").unwrap();
    assert_eq!((row.doc_id.as_str(), row.token_index), ("d0", Some(3)));
}

#[test]
fn attention_stream() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path(), LogitEncoding::Full);
    let dump = ActivationDump::open(dir.path()).unwrap();
    let layers: Vec<Vec<f32>> = dump.stream_attention_layers(0).unwrap().map(|m| m.unwrap()).collect();
    assert_eq!(layers.len(), 4);
    for m in &layers {
        assert_eq!(m.len(), 16);
        for r in 0..4 {
            let s: f32 = m[r * 4..(r + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-3);
        }
    }

    let mut layout = small_layout(LogitEncoding::Full);
    layout.attention.as_mut().unwrap().avg_stream = false;
    let dir = tempfile::tempdir().unwrap();
    let mut w = DumpWriter::create(dir.path(), layout).unwrap();
    w.write_document(&toy_doc(LogitEncoding::Full), None::<Vec<Vec<f32>>>).unwrap();
    w.finish().unwrap();
    let dump = ActivationDump::open(dir.path()).unwrap();
    assert_eq!(dump.stream_attention_layers(0).err().unwrap().code(), "MISSING_STREAM");
}

#[test]
fn stream_gap_is_out_of_order() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path(), LogitEncoding::Full);
    let manifest = dir.path().join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    m["documents"][0]["files"].as_object_mut().unwrap().remove("attn_avg/layer_2.bin");
    fs::write(&manifest, serde_json::to_string(&m).unwrap()).unwrap();
    let dump = ActivationDump::open(dir.path()).unwrap();
    let results: Vec<_> = dump.stream_attention_layers(0).unwrap().collect();
    assert_eq!(results.len(), 3);
    assert_eq!(results[2].as_ref().unwrap_err().code(), "OUT_OF_ORDER");
}

fn synth_cfg(seed: u64) -> SynthConfig {
    SynthConfig {
        n_docs: 4,
        tokens_per_doc: 48,
        vocab_size: 64,
        hidden_dim: 8,
        n_layers: 12,
        n_heads: 8,
        planted_rate: 0.1,
        seed,
        ..SynthConfig::default()
    }
}

fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in fs::read_dir(&p).unwrap() {
            let e = e.unwrap().path();
            if e.is_dir() {
                stack.push(e);
            } else {
                out.push((e.strip_prefix(root).unwrap().display().to_string(), fs::read(&e).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synthesize_is_deterministic_and_valid() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synthesize(&synth_cfg(3), a.path()).unwrap();
    synthesize(&synth_cfg(3), b.path()).unwrap();
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    let dump = ActivationDump::open(a.path()).unwrap();
    let report = validate(&dump);
    assert!(report.is_clean(), "{:?}", &report.findings[..report.findings.len().min(5)]);
    assert_eq!(dump.len(), 4);
    let layers: Vec<_> = dump.stream_attention_layers(1).unwrap().collect();
    assert_eq!(layers.len(), 12);
}

#[test]
fn synthesize_topk_single_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        logits: LogitSpec {
            encoding: LogitEncoding::Topk,
            dtype: DType::F32,
            top_k: Some(16),
        },
        schedule: Some(FeatureConfig::F93),
        hidden_raw: false,
        ..synth_cfg(5)
    };
    synthesize(&cfg, dir.path()).unwrap();
    let dump = ActivationDump::open(dir.path()).unwrap();
    assert!(validate(&dump).is_clean());
    assert!(!dump.layout().attention.as_ref().unwrap().avg_stream);
    assert_eq!(dump.layout().hidden.as_ref().unwrap().layers, [3, 6, 9, 11]);
}

#[test]
fn planted_prevalence_tracks_rate() {
    for rate in [0.0733, 0.0205] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_docs: 40,
            tokens_per_doc: 256,
            vocab_size: 64,
            hidden_dim: 4,
            planted_rate: rate,
            schedule: Some(FeatureConfig::F93),
            ..SynthConfig::default()
        };
        synthesize(&cfg, dir.path()).unwrap();
        let dump = ActivationDump::open(dir.path()).unwrap();
        let (mut pos, mut total) = (0usize, 0usize);
        for i in 0..dump.len() {
            let (tokens, spans) = dump.load_tokens(i).unwrap();
            let summary = &tokens.tokens[tokens.summary_range.0..tokens.summary_range.1];
            total += summary.len();
            pos += summary
                .iter()
                .filter(|t| spans.iter().any(|s| s.start < t.end && t.start < s.end))
                .count();
        }
        let prevalence = pos as f64 / total as f64;
        assert!((prevalence - rate).abs() < 0.012, "rate {rate}: prevalence {prevalence}");
    }
}

#[test]
fn degenerate_synth_configs() {
    let dir = tempfile::tempdir().unwrap();
    for cfg in [
        SynthConfig { vocab_size: 1, ..SynthConfig::default() },
        SynthConfig { tokens_per_doc: 1, ..SynthConfig::default() },
        SynthConfig { planted_rate: 0.0, ..SynthConfig::default() },
    ] {
        assert_eq!(synthesize(&cfg, dir.path()).unwrap_err().code(), "DEGENERATE_CONFIG");
    }
}

mod synth_property {
    use super::*;
    use proptest::prelude::*;

    fn any_config() -> impl Strategy<Value = SynthConfig> {
        (
            (1usize..4, 24usize..72, 40usize..96, 12usize..17, 8usize..12),
            (0.01f64..0.3, 0.0f64..2.0, any::<u64>()),
            (prop_oneof![Just(None), Just(Some(5)), Just(Some(10)), Just(Some(20))], any::<bool>()),
            (any::<bool>(), any::<bool>(), any::<bool>()),
            prop_oneof![
                Just(None),
                Just(Some(FeatureConfig::F93)),
                Just(Some(FeatureConfig::F120)),
                Just(Some(FeatureConfig::F204)),
            ],
        )
            .prop_map(|((docs, tokens, vocab, layers, heads), (rate, es, seed), (topk, f32_logits), (prior, ner, raw), schedule)| {
                SynthConfig {
                    n_docs: docs,
                    tokens_per_doc: tokens,
                    vocab_size: vocab,
                    hidden_dim: 8,
                    n_layers: layers,
                    n_heads: heads,
                    planted_rate: rate,
                    effect_strength: es,
                    seed,
                    logits: LogitSpec {
                        encoding: if topk.is_some() { LogitEncoding::Topk } else { LogitEncoding::Full },
                        dtype: if f32_logits { DType::F32 } else { DType::F16 },
                        top_k: topk,
                    },
                    prior: prior || schedule == Some(FeatureConfig::F204),
                    ner,
                    hidden_raw: raw,
                    schedule,
                    ..SynthConfig::default()
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn every_synthetic_dump_validates(cfg in any_config()) {
            prop_assume!(cfg.check().is_ok());
            let dir = tempfile::tempdir().unwrap();
            synthesize(&cfg, dir.path()).unwrap();
            let dump = ActivationDump::open(dir.path()).unwrap();
            let report = validate(&dump);
            prop_assert!(report.is_clean(), "{:?}", report.findings);
            prop_assert_eq!(report.documents_checked, cfg.n_docs);
        }
    }
}

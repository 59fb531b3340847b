use criterion::{criterion_group, criterion_main, Criterion};

use revprobe_bench::fixture;
use revprobe_core::assembler::{assemble, AssemblyOptions};
use revprobe_core::classifier::{predict, train, GbdtParams};
use revprobe_core::dump::SynthConfig;
use revprobe_core::FeatureConfig;

fn training(c: &mut Criterion) {
    let f = fixture(&SynthConfig {
        n_docs: 20,
        tokens_per_doc: 256,
        planted_rate: 0.05,
        ..SynthConfig::default()
    });
    let m = assemble(&f.dump, &AssemblyOptions::new(FeatureConfig::F93)).unwrap();
    let params = GbdtParams {
        n_trees: 50,
        ..GbdtParams::default()
    };
    let mut group = c.benchmark_group("gbdt");
    group.sample_size(10);
    group.bench_function("train_f93_50_trees", |b| b.iter(|| train(&m, None, &params).unwrap()));
    let model = train(&m, None, &params).unwrap();
    group.bench_function("predict_f93", |b| b.iter(|| predict(&model, &m).unwrap()));
    group.finish();
}

criterion_group!(benches, training);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use revprobe_bench::causal_layers;
use revprobe_core::features::internal::RolloutState;

fn streaming_rollout(c: &mut Criterion) {
    let mut group = c.benchmark_group("rollout");
    group.sample_size(10);
    for n in [128, 256, 512] {
        let layers = causal_layers(n, 8, 1);
        group.bench_with_input(BenchmarkId::new("8_layers", n), &layers, |b, layers| {
            b.iter(|| {
                let mut state = RolloutState::new(n);
                for (l, a) in layers.iter().enumerate() {
                    state.consume(l, a).unwrap();
                }
                state.row_stats(n - 1, n / 4)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, streaming_rollout);
criterion_main!(benches);

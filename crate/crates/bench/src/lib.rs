//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use revprobe_core::dump::{synthesize, ActivationDump, SynthConfig};

/// A synthetic dump in a temporary directory that lives as long as the value.
pub struct Fixture {
    _dir: TempDir,
    pub dump: ActivationDump,
}

pub fn fixture(cfg: &SynthConfig) -> Fixture {
    let dir = tempfile::tempdir().expect("temp dir");
    synthesize(cfg, dir.path()).expect("synthesize");
    let dump = ActivationDump::open(dir.path()).expect("open");
    Fixture { _dir: dir, dump }
}

/// `layers` causal row-stochastic `n x n` matrices.
pub fn causal_layers(n: usize, layers: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..layers)
        .map(|_| {
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                let row = &mut a[i * n..=i * n + i];
                row.iter_mut().for_each(|v| *v = rng.gen::<f64>());
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= total);
            }
            a
        })
        .collect()
}

//! Layer and head sampling schedules for each feature configuration.

use serde::{Deserialize, Serialize};

use crate::dump::ModelDescriptor;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;

const REF_LAYERS: usize = 32;
const REF_HEADS: usize = 32;

const REF_F93_HIDDEN: [usize; 4] = [8, 16, 24, 31];
const REF_F120_HIDDEN: [usize; 8] = [2, 6, 10, 14, 18, 22, 26, 31];
const REF_SNAPSHOT: [(usize, usize); 6] = [(7, 16), (15, 24), (23, 0), (23, 9), (23, 28), (31, 8)];
const REF_BANDS: [(usize, usize); 3] = [(0, 3), (14, 17), (28, 31)];
const REF_BAND_HEADS: [usize; 3] = [0, 8, 16];
const REF_FMAX_HEADS: [usize; 4] = [0, 8, 16, 24];
const REF_F204_ROLLOUT: [usize; 3] = [3, 17, 31];
const REF_FMAX_ROLLOUT: [usize; 8] = [3, 7, 11, 15, 19, 23, 27, 31];

const WIDE_LAYERS: usize = 80;
const WIDE_HEADS: usize = 64;
const WIDE_F93_HIDDEN: [usize; 4] = [20, 40, 60, 79];
const WIDE_F120_HIDDEN: [usize; 8] = [5, 15, 25, 35, 45, 55, 65, 79];
const WIDE_SNAPSHOT: [(usize, usize); 6] = [(7, 16), (17, 24), (57, 0), (57, 9), (57, 28), (77, 8)];
const WIDE_BANDS: [(usize, usize); 3] = [(0, 7), (35, 42), (70, 79)];
const WIDE_BAND_HEADS: [usize; 4] = [0, 16, 32, 48];
const WIDE_FMAX_HEADS: [usize; 4] = [0, 16, 32, 48];
const WIDE_FMAX_ROLLOUT: [usize; 8] = [9, 19, 29, 39, 49, 59, 69, 79];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSchedule {
    pub config: FeatureConfig,
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden_layers: Vec<usize>,
    pub change_pairs: Vec<(usize, usize)>,
    pub snapshot_pairs: Vec<(usize, usize)>,
    pub drift_heads: Vec<usize>,
    pub drift_pairs: Vec<(usize, usize)>,
    pub rollout_checkpoints: Vec<usize>,
    /// How indices were obtained (printed table or proportional scaling).
    pub mapping: String,
}

impl SamplingSchedule {
    /// Every (layer, head) whose attention row the schedule reads, sorted.
    pub fn attention_row_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = self.snapshot_pairs.clone();
        for &(a, b) in &self.drift_pairs {
            for &h in &self.drift_heads {
                pairs.push((a, h));
                pairs.push((b, h));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    /// Layers whose hidden states the schedule reads, sorted.
    pub fn hidden_layer_set(&self) -> Vec<usize> {
        let mut layers = self.hidden_layers.clone();
        for &(a, b) in &self.change_pairs {
            layers.push(a);
            layers.push(b);
        }
        layers.sort_unstable();
        layers.dedup();
        layers
    }

    /// Number of averaged attention layers rollout needs to stream.
    pub fn rollout_depth(&self) -> usize {
        self.rollout_checkpoints.last().map_or(0, |&l| l + 1)
    }
}

fn scale_layer(idx: usize, n_layers: usize) -> usize {
    let scaled = (idx as f64 * (n_layers - 1) as f64 / (REF_LAYERS - 1) as f64).round() as usize;
    scaled.min(n_layers - 1)
}

fn scale_head(idx: usize, n_heads: usize) -> usize {
    (idx * n_heads / REF_HEADS).min(n_heads - 1)
}

fn dedup_sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

fn consecutive(layers: &[usize]) -> Vec<(usize, usize)> {
    layers.windows(2).map(|w| (w[0], w[1])).collect()
}

fn band_layers(bands: &[(usize, usize)]) -> Vec<usize> {
    bands.iter().flat_map(|&(a, b)| a..=b).collect()
}

fn require(what: &str, got: usize, want: usize, desc: &ModelDescriptor) -> Result<()> {
    if got < want {
        return Err(Error::ScheduleTooSmall(format!(
            "{what}: {got} distinct indices for {want} required on L={} H={}",
            desc.n_layers, desc.n_heads
        )));
    }
    Ok(())
}

/// Builds the sampling schedule of `config` for a model shape.
///
/// 32-layer/32-head and 80-layer/64-head models get the printed index sets.
/// Any other shape maps the 32-layer reference as
/// `round(idx * (L-1) / 31)` for layers and `floor(h * H / 32)` for heads.
pub fn make_schedule(desc: &ModelDescriptor, config: FeatureConfig) -> Result<SamplingSchedule> {
    let (l, h) = (desc.n_layers, desc.n_heads);
    if l < 2 || h < 1 {
        return Err(Error::ScheduleTooSmall(format!(
            "model with {l} layers and {h} heads"
        )));
    }
    let wide = l == WIDE_LAYERS && h == WIDE_HEADS;
    let exact = wide || (l == REF_LAYERS && h == REF_HEADS);
    let layer = |i: usize| if exact { i } else { scale_layer(i, l) };
    let head = |i: usize| if exact { i } else { scale_head(i, h) };

    let hidden_ref: &[usize] = match (config, wide) {
        (FeatureConfig::F93, false) => &REF_F93_HIDDEN,
        (FeatureConfig::F93, true) => &WIDE_F93_HIDDEN,
        (_, false) => &REF_F120_HIDDEN,
        (_, true) => &WIDE_F120_HIDDEN,
    };
    let hidden_layers = if config == FeatureConfig::Fmax {
        (0..l).collect()
    } else if wide {
        hidden_ref.to_vec()
    } else {
        dedup_sorted(hidden_ref.iter().map(|&i| layer(i)).collect())
    };
    require("hidden layers", hidden_layers.len(), hidden_ref.len(), desc)?;
    let change_pairs = consecutive(&hidden_layers);

    let snapshot_pairs = if wide {
        WIDE_SNAPSHOT.to_vec()
    } else {
        let mut p: Vec<_> = REF_SNAPSHOT.iter().map(|&(a, b)| (layer(a), head(b))).collect();
        let order = p.clone();
        p.sort_unstable();
        p.dedup();
        require("snapshot pairs", p.len(), REF_SNAPSHOT.len(), desc)?;
        order
    };

    let (drift_heads, drift_pairs, rollout_checkpoints) = match config {
        FeatureConfig::F93 | FeatureConfig::F120 => (vec![], vec![], vec![]),
        FeatureConfig::F204 => {
            let (bands, heads): (&[(usize, usize)], &[usize]) = if wide {
                (&WIDE_BANDS, &WIDE_BAND_HEADS)
            } else {
                (&REF_BANDS, &REF_BAND_HEADS)
            };
            let layers = if wide {
                band_layers(bands)
            } else {
                dedup_sorted(band_layers(bands).into_iter().map(layer).collect())
            };
            require("drift layers", layers.len(), 2 * bands.len(), desc)?;
            let heads = dedup_sorted(heads.iter().map(|&i| head(i)).collect());
            let want_heads = if wide { WIDE_BAND_HEADS.len() } else { REF_BAND_HEADS.len() };
            require("drift heads", heads.len(), want_heads, desc)?;
            let rollout = if wide {
                REF_F204_ROLLOUT.to_vec()
            } else {
                dedup_sorted(REF_F204_ROLLOUT.iter().map(|&i| layer(i)).collect())
            };
            require("rollout checkpoints", rollout.len(), REF_F204_ROLLOUT.len(), desc)?;
            (heads, consecutive(&layers), rollout)
        }
        FeatureConfig::Fmax => {
            let heads = if wide {
                WIDE_FMAX_HEADS.to_vec()
            } else {
                dedup_sorted(REF_FMAX_HEADS.iter().map(|&i| head(i)).collect())
            };
            require("drift heads", heads.len(), REF_FMAX_HEADS.len(), desc)?;
            let rollout = if wide {
                WIDE_FMAX_ROLLOUT.to_vec()
            } else {
                dedup_sorted(REF_FMAX_ROLLOUT.iter().map(|&i| layer(i)).collect())
            };
            require("rollout checkpoints", rollout.len(), REF_FMAX_ROLLOUT.len(), desc)?;
            let all: Vec<usize> = (0..l).collect();
            (heads, consecutive(&all), rollout)
        }
    };

    let mapping = if exact {
        format!("printed index sets for L={l} H={h}")
    } else {
        format!(
            "scaled from the 32-layer reference: layer round(i*{}/31), head floor(h*{h}/32)",
            l - 1
        )
    };
    Ok(SamplingSchedule {
        config,
        n_layers: l,
        n_heads: h,
        hidden_layers,
        change_pairs,
        snapshot_pairs,
        drift_heads,
        drift_pairs,
        rollout_checkpoints,
        mapping,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(l: usize, h: usize) -> ModelDescriptor {
        ModelDescriptor {
            n_layers: l,
            n_heads: h,
            hidden_dim: 16,
            vocab_size: 64,
            tokenizer_id: "t".into(),
            pass_names: vec![],
        }
    }

    #[test]
    fn printed_sets_8b() {
        let s = make_schedule(&desc(32, 32), FeatureConfig::F93).unwrap();
        assert_eq!(s.hidden_layers, [8, 16, 24, 31]);
        assert_eq!(s.change_pairs, [(8, 16), (16, 24), (24, 31)]);
        assert_eq!(s.snapshot_pairs, REF_SNAPSHOT);
        let s = make_schedule(&desc(32, 32), FeatureConfig::F204).unwrap();
        assert_eq!(s.rollout_checkpoints, [3, 17, 31]);
        assert_eq!(s.drift_pairs.len(), 11);
        assert_eq!(s.drift_heads, [0, 8, 16]);
        let s = make_schedule(&desc(32, 32), FeatureConfig::Fmax).unwrap();
        assert_eq!(s.hidden_layers.len(), 32);
        assert_eq!(s.drift_pairs.len(), 31);
        assert_eq!(s.rollout_checkpoints, REF_FMAX_ROLLOUT);
    }

    #[test]
    fn printed_sets_70b() {
        let s = make_schedule(&desc(80, 64), FeatureConfig::F120).unwrap();
        assert_eq!(s.hidden_layers, [5, 15, 25, 35, 45, 55, 65, 79]);
        let s = make_schedule(&desc(80, 64), FeatureConfig::F93).unwrap();
        assert_eq!(s.hidden_layers, [20, 40, 60, 79]);
        assert_eq!(s.snapshot_pairs, WIDE_SNAPSHOT);
        let s = make_schedule(&desc(80, 64), FeatureConfig::F204).unwrap();
        assert_eq!(s.rollout_checkpoints, [3, 17, 31]);
    }

    #[test]
    fn scaled_small_model() {
        let d = desc(12, 8);
        let s = make_schedule(&d, FeatureConfig::F93).unwrap();
        assert_eq!(s.hidden_layers, [3, 6, 9, 11]);
        assert_eq!(s.snapshot_pairs, [(2, 4), (5, 6), (8, 0), (8, 2), (8, 7), (11, 2)]);
        let s = make_schedule(&d, FeatureConfig::F120).unwrap();
        assert_eq!(s.hidden_layers, [1, 2, 4, 5, 6, 8, 9, 11]);
        let s = make_schedule(&d, FeatureConfig::F204).unwrap();
        assert_eq!(s.drift_pairs, [(0, 1), (1, 5), (5, 6), (6, 10), (10, 11)]);
        assert_eq!(s.rollout_checkpoints, [1, 6, 11]);
        let s = make_schedule(&d, FeatureConfig::Fmax).unwrap();
        assert_eq!(s.rollout_checkpoints, [1, 2, 4, 5, 7, 8, 10, 11]);
        assert_eq!(s.drift_heads, [0, 2, 4, 6]);
    }

    #[test]
    fn too_small_models_fail() {
        let err = make_schedule(&desc(4, 8), FeatureConfig::F120).unwrap_err();
        assert_eq!(err.code(), "SCHEDULE_TOO_SMALL");
        let err = make_schedule(&desc(12, 2), FeatureConfig::F93).unwrap_err();
        assert_eq!(err.code(), "SCHEDULE_TOO_SMALL");
    }

    #[test]
    fn indices_in_range() {
        for l in [9, 12, 16, 24, 32, 48, 80] {
            for h in [4, 8, 32, 64] {
                for cfg in FeatureConfig::ALL {
                    let Ok(s) = make_schedule(&desc(l, h), cfg) else {
                        continue;
                    };
                    assert!(s.hidden_layer_set().iter().all(|&x| x < l));
                    assert!(s.attention_row_pairs().iter().all(|&(a, b)| a < l && b < h));
                    assert!(s.rollout_checkpoints.windows(2).all(|w| w[0] < w[1]));
                }
            }
        }
    }
}

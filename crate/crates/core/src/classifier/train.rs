use log::debug;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classifier::binning::BinMapper;
use crate::classifier::model::{TrainingSummary, UQModel};
use crate::classifier::params::GbdtParams;
use crate::classifier::tree::{Node, Tree};
use crate::error::{Error, Result};
use crate::eval::metrics::select_threshold;

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dense row-major training data.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub values: &'a [f32],
    pub n_cols: usize,
    pub labels: &'a [u8],
}

impl Dataset<'_> {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.n_cols..(r + 1) * self.n_cols]
    }

    fn check(&self) -> Result<()> {
        if self.values.len() != self.labels.len() * self.n_cols {
            return Err(Error::DimMismatch {
                left: self.values.len(),
                right: self.labels.len() * self.n_cols,
            });
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature row {} column {}", i / self.n_cols, i % self.n_cols)));
        }
        Ok(())
    }
}

type Hist = Vec<(f64, f64)>;

struct Grower<'a> {
    bins: &'a [Vec<u8>],
    mapper: &'a BinMapper,
    grad: &'a [f64],
    hess: &'a [f64],
    features: &'a [usize],
    p: &'a GbdtParams,
}

struct Pending {
    node: usize,
    rows: Vec<u32>,
    depth: usize,
    hists: Vec<Hist>,
}

struct Best {
    feature: usize,
    bin: usize,
    gain: f64,
}

impl Grower<'_> {
    fn histograms(&self, rows: &[u32]) -> Vec<Hist> {
        self.features
            .par_iter()
            .map(|&f| {
                let col = &self.bins[f];
                let mut h = vec![(0.0, 0.0); self.mapper.n_bins(f)];
                for &r in rows {
                    let e = &mut h[col[r as usize] as usize];
                    e.0 += self.grad[r as usize];
                    e.1 += self.hess[r as usize];
                }
                h
            })
            .collect()
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.p.lambda)
    }

    fn best_split(&self, hists: &[Hist]) -> Option<Best> {
        let candidates: Vec<Option<(usize, f64)>> = hists
            .par_iter()
            .map(|h| {
                let (gt, ht) = h.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
                let parent = self.score(gt, ht);
                let (mut gl, mut hl) = (0.0, 0.0);
                let mut best: Option<(usize, f64)> = None;
                for (b, &(g, hh)) in h[..h.len() - 1].iter().enumerate() {
                    gl += g;
                    hl += hh;
                    let (gr, hr) = (gt - gl, ht - hl);
                    if hl < self.p.min_child_weight || hr < self.p.min_child_weight || hl <= 0.0 || hr <= 0.0 {
                        continue;
                    }
                    let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent);
                    if gain > best.map_or(0.0, |x| x.1) {
                        best = Some((b, gain));
                    }
                }
                best
            })
            .collect();
        let mut best: Option<Best> = None;
        for (k, c) in candidates.into_iter().enumerate() {
            if let Some((bin, gain)) = c {
                if gain > best.as_ref().map_or(1e-12, |b| b.gain) {
                    best = Some(Best {
                        feature: self.features[k],
                        bin,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn leaf_value(&self, rows: &[u32]) -> f64 {
        let (g, h) = rows.iter().fold((0.0, 0.0), |a, &r| (a.0 + self.grad[r as usize], a.1 + self.hess[r as usize]));
        -self.p.learning_rate * g / (h + self.p.lambda)
    }

    /// Depth-wise growth; the smaller child's histograms are built and the
    /// sibling's obtained by subtraction.
    fn grow(&self, rows: Vec<u32>, gains: &mut [f64]) -> Tree {
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let hists = self.histograms(&rows);
        let mut level = vec![Pending {
            node: 0,
            rows,
            depth: 0,
            hists,
        }];
        while !level.is_empty() {
            let mut next = Vec::new();
            for item in level {
                let split = if item.depth < self.p.max_depth && item.rows.len() >= 2 {
                    self.best_split(&item.hists)
                } else {
                    None
                };
                let Some(best) = split else {
                    nodes[item.node] = Node::Leaf {
                        value: self.leaf_value(&item.rows),
                    };
                    continue;
                };
                let col = &self.bins[best.feature];
                let (left, right): (Vec<u32>, Vec<u32>) =
                    item.rows.iter().partition(|&&r| (col[r as usize] as usize) <= best.bin);
                let (small, large_is_left) = if left.len() <= right.len() {
                    (&left, false)
                } else {
                    (&right, true)
                };
                let small_h = self.histograms(small);
                let large_h: Vec<Hist> = item
                    .hists
                    .into_iter()
                    .zip(&small_h)
                    .map(|(mut p, s)| {
                        for (a, b) in p.iter_mut().zip(s) {
                            a.0 -= b.0;
                            a.1 -= b.1;
                        }
                        p
                    })
                    .collect();
                let (lh, rh) = if large_is_left { (large_h, small_h) } else { (small_h, large_h) };
                let (li, ri) = (nodes.len(), nodes.len() + 1);
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[item.node] = Node::Split {
                    feature: best.feature as u32,
                    threshold: self.mapper.cuts[best.feature][best.bin],
                    left: li as u32,
                    right: ri as u32,
                    gain: best.gain,
                };
                gains[best.feature] += best.gain;
                next.push(Pending {
                    node: li,
                    rows: left,
                    depth: item.depth + 1,
                    hists: lh,
                });
                next.push(Pending {
                    node: ri,
                    rows: right,
                    depth: item.depth + 1,
                    hists: rh,
                });
            }
            level = next;
        }
        Tree { nodes }
    }
}

/// Weighted mean logistic loss.
fn logistic_loss(margin: &[f64], labels: &[u8], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for ((&m, &y), &w) in margin.iter().zip(labels).zip(weights) {
        // log(1 + e^{-m}) for positives, log(1 + e^{m}) for negatives, stably
        let z = if y != 0 { -m } else { m };
        total += w * (z.max(0.0) + (-z.abs()).exp().ln_1p());
        wsum += w;
    }
    total / wsum
}

/// Fits a boosted ensemble under the logistic loss.
pub fn train_dataset(
    data: Dataset<'_>,
    feature_names: Vec<String>,
    registry_hash: String,
    params: &GbdtParams,
) -> Result<UQModel> {
    params.check()?;
    data.check()?;
    if feature_names.len() != data.n_cols {
        return Err(Error::RegistryMismatch(format!(
            "{} names for {} columns",
            feature_names.len(),
            data.n_cols
        )));
    }
    let n = data.n_rows();
    let n_pos = data.labels.iter().filter(|&&y| y != 0).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::DegenerateLabels);
    }
    let pos_weight = params
        .positive_class_weight
        .unwrap_or((n - n_pos) as f64 / n_pos as f64);
    let weights: Vec<f64> = data.labels.iter().map(|&y| if y != 0 { pos_weight } else { 1.0 }).collect();
    let wpos = pos_weight * n_pos as f64;
    let wneg = (n - n_pos) as f64;
    let base_score = (wpos / wneg).ln();

    let mapper = BinMapper::fit(data.values, data.n_cols, params.max_bins);
    let bins = mapper.transform(data.values, data.n_cols);
    let mut margin = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut gains = vec![0.0; data.n_cols];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut loss = vec![logistic_loss(&margin, data.labels, &weights)];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_sample = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let n_feat = ((params.colsample * data.n_cols as f64).round() as usize).clamp(1, data.n_cols);

    for t in 0..params.n_trees {
        for r in 0..n {
            let p = sigmoid(margin[r]);
            let y = data.labels[r] as f64;
            grad[r] = weights[r] * (p - y);
            hess[r] = (weights[r] * p * (1.0 - p)).max(1e-16);
        }
        let mut rows: Vec<u32> = if n_sample == n {
            (0..n as u32).collect()
        } else {
            sample(&mut rng, n, n_sample).into_iter().map(|r| r as u32).collect()
        };
        rows.sort_unstable();
        let mut features: Vec<usize> = if n_feat == data.n_cols {
            (0..data.n_cols).collect()
        } else {
            sample(&mut rng, data.n_cols, n_feat).into_vec()
        };
        features.sort_unstable();
        let grower = Grower {
            bins: &bins,
            mapper: &mapper,
            grad: &grad,
            hess: &hess,
            features: &features,
            p: params,
        };
        let tree = grower.grow(rows, &mut gains);
        margin
            .par_iter_mut()
            .enumerate()
            .for_each(|(r, m)| *m += tree.predict(data.row(r)));
        loss.push(logistic_loss(&margin, data.labels, &weights));
        if t % 50 == 0 {
            debug!("tree {t}: loss {:.6}, {} nodes", loss[t + 1], tree.nodes.len());
        }
        trees.push(tree);
    }
    let mut model = UQModel {
        trees,
        base_score,
        registry_hash,
        feature_names,
        params: params.clone(),
        gains,
        training: TrainingSummary {
            n_rows: n,
            n_positive: n_pos,
            positive_weight: pos_weight,
            loss_history: loss,
            doc_ids: Vec::new(),
            threshold: 0.5,
        },
    };
    let scores = model.predict_values(data.values)?;
    model.training.threshold = select_threshold(&scores, data.labels)?;
    Ok(model)
}

//! Internal signals: hidden-state summaries, layer change, attention
//! snapshots, inter-layer drift and streaming attention rollout.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::contrast::kl_divergence;
use crate::numeric::EPSILON;

pub use crate::features::schedule::{make_schedule, SamplingSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HiddenSummary {
    pub norm: f64,
    pub mean: f64,
    pub std: f64,
}

/// L2 norm, mean and population standard deviation of one hidden vector.
pub fn hidden_summary(h: &[f64]) -> Result<HiddenSummary> {
    if h.is_empty() {
        return Err(Error::EmptyInput("hidden vector"));
    }
    let n = h.len() as f64;
    let mean = h.iter().sum::<f64>() / n;
    let var = h.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(HiddenSummary {
        norm: h.iter().map(|v| v * v).sum::<f64>().sqrt(),
        mean,
        std: var.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerChange {
    pub l2_change: f64,
    pub cosine: f64,
}

pub fn layer_change(from: &[f64], to: &[f64]) -> Result<LayerChange> {
    if from.len() != to.len() {
        return Err(Error::DimMismatch {
            left: from.len(),
            right: to.len(),
        });
    }
    let (mut dot, mut nf, mut nt, mut diff) = (0.0, 0.0, 0.0, 0.0);
    for (&a, &b) in from.iter().zip(to) {
        dot += a * b;
        nf += a * a;
        nt += b * b;
        diff += (b - a) * (b - a);
    }
    let cosine = (dot / (nf.sqrt() * nt.sqrt() + EPSILON)).clamp(-1.0, 1.0);
    Ok(LayerChange {
        l2_change: diff.sqrt(),
        cosine,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttentionRowStats {
    pub attn_entropy: f64,
    pub attn_to_bhc: f64,
    pub attn_max: f64,
}

/// Renormalizes the causal prefix `row[..=token_index]` into a fresh vector.
pub fn unpad_row(row: &[f64], token_index: usize) -> Result<Vec<f64>> {
    if token_index >= row.len() {
        return Err(Error::ShapeViolation(format!(
            "token index {token_index} beyond attention row of {}",
            row.len()
        )));
    }
    let prefix = &row[..=token_index];
    let total: f64 = prefix.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroAttention);
    }
    Ok(prefix.iter().map(|v| v / total).collect())
}

/// Entropy, mass on source-record positions (`< bhc_len`) and peak weight of
/// a renormalized attention row.
pub fn attention_row_stats(
    row: &[f64],
    token_index: usize,
    bhc_len: usize,
) -> Result<AttentionRowStats> {
    let row = unpad_row(row, token_index)?;
    Ok(distribution_stats(&row, bhc_len))
}

fn distribution_stats(row: &[f64], bhc_len: usize) -> AttentionRowStats {
    let mut entropy = 0.0;
    let mut to_bhc = 0.0;
    let mut max = 0.0f64;
    for (j, &v) in row.iter().enumerate() {
        if v > 0.0 {
            entropy -= v * v.ln();
        }
        if j < bhc_len {
            to_bhc += v;
        }
        max = max.max(v);
    }
    AttentionRowStats {
        attn_entropy: entropy,
        attn_to_bhc: to_bhc,
        attn_max: max,
    }
}

/// KL from the shallower layer's renormalized row to the deeper one's.
pub fn attention_drift(row_shallow: &[f64], row_deep: &[f64]) -> Result<f64> {
    if row_shallow.len() != row_deep.len() {
        return Err(Error::DimMismatch {
            left: row_shallow.len(),
            right: row_deep.len(),
        });
    }
    let last = row_shallow.len().checked_sub(1).ok_or(Error::EmptyInput("attention row"))?;
    let p = unpad_row(row_shallow, last)?;
    let q = unpad_row(row_deep, last)?;
    kl_divergence(&p, &q)
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        SquareMatrix { n, data }
    }

    pub fn from_rows(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::ShapeViolation(format!(
                "{} entries for a {n}x{n} matrix",
                data.len()
            )));
        }
        Ok(SquareMatrix { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Plain `self * rhs`.
    pub fn matmul(&self, rhs: &SquareMatrix) -> SquareMatrix {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let (dst, src) = (&mut out[i * n..(i + 1) * n], &rhs.data[k * n..(k + 1) * n]);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        SquareMatrix { n, data: out }
    }
}

const ROLLOUT_BLOCK: usize = 8;

/// Incremental rollout `R <- (0.5 A_k + 0.5 I) R`, starting from the identity.
///
/// Holds `R` plus one scratch buffer. Rows of `R` are tracked by their last
/// non-zero column so that causal (lower-triangular) inputs cost about a sixth
/// of a dense product.
#[derive(Debug, Clone)]
pub struct RolloutState {
    r: SquareMatrix,
    scratch: Vec<f64>,
    extent: Vec<usize>,
    layers_consumed: usize,
}

impl RolloutState {
    pub fn new(ctx: usize) -> Self {
        RolloutState {
            r: SquareMatrix::identity(ctx),
            scratch: vec![0.0; ctx * ctx],
            extent: (1..=ctx).collect(),
            layers_consumed: 0,
        }
    }

    pub fn layers_consumed(&self) -> usize {
        self.layers_consumed
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.r
    }

    /// Folds in the head-averaged attention of `layer`, which must be the next
    /// layer in order.
    pub fn consume<T: Copy + Into<f64>>(&mut self, layer: usize, attention: &[T]) -> Result<()> {
        let n = self.r.n;
        if layer != self.layers_consumed {
            return Err(Error::OutOfOrder {
                doc_id: String::new(),
                layer,
            });
        }
        if attention.len() != n * n {
            return Err(Error::ShapeViolation(format!(
                "attention matrix with {} entries for context {n}",
                attention.len()
            )));
        }
        // Rows are updated in blocks so each source row of R is read once per
        // block; every output element still accumulates in ascending j.
        let mut new_extent = vec![0usize; n];
        let mut a_block = vec![0.0f64; ROLLOUT_BLOCK * n];
        for i0 in (0..n).step_by(ROLLOUT_BLOCK) {
            let i1 = (i0 + ROLLOUT_BLOCK).min(n);
            let mut j_end = 0;
            for (b, i) in (i0..i1).enumerate() {
                let a_row = &mut a_block[b * n..(b + 1) * n];
                for (d, &a) in a_row.iter_mut().zip(&attention[i * n..(i + 1) * n]) {
                    *d = a.into();
                }
                let mut ext = self.extent[i];
                for (j, &a) in a_row.iter().enumerate() {
                    if a != 0.0 {
                        ext = ext.max(self.extent[j]);
                        j_end = j_end.max(j + 1);
                    }
                }
                new_extent[i] = ext;
                let dst = &mut self.scratch[i * n..(i + 1) * n];
                dst.fill(0.0);
                for (d, s) in dst.iter_mut().zip(&self.r.data[i * n..i * n + self.extent[i]]) {
                    *d = 0.5 * s;
                }
            }
            let block = &mut self.scratch[i0 * n..i1 * n];
            accumulate(block, &a_block, &self.r.data, &self.extent, n, i1 - i0, j_end);
        }
        std::mem::swap(&mut self.r.data, &mut self.scratch);
        self.extent = new_extent;
        self.layers_consumed += 1;
        Ok(())
    }

    pub fn row_stats(&self, position: usize, bhc_len: usize) -> RolloutStats {
        let s = distribution_stats(self.r.row(position), bhc_len);
        RolloutStats {
            rollout_to_bhc: s.attn_to_bhc,
            rollout_entropy: s.attn_entropy,
            rollout_max_weight: s.attn_max,
        }
    }
}

/// `block[b] += 0.5 * a[b][j] * R[j]` for every row `b` of the block, in
/// ascending `j`.
fn accumulate(block: &mut [f64], a_block: &[f64], r: &[f64], extent: &[usize], n: usize, rows: usize, j_end: usize) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: AVX2 support was checked just above.
        unsafe { accumulate_avx2(block, a_block, r, extent, n, rows, j_end) };
        return;
    }
    accumulate_plain(block, a_block, r, extent, n, rows, j_end);
}

// Wider registers only; no fused multiply-add, so results match the plain path bit for bit.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn accumulate_avx2(
    block: &mut [f64],
    a_block: &[f64],
    r: &[f64],
    extent: &[usize],
    n: usize,
    rows: usize,
    j_end: usize,
) {
    accumulate_plain(block, a_block, r, extent, n, rows, j_end);
}

#[inline(always)]
fn accumulate_plain(
    block: &mut [f64],
    a_block: &[f64],
    r: &[f64],
    extent: &[usize],
    n: usize,
    rows: usize,
    j_end: usize,
) {
    for j in 0..j_end {
        let src = &r[j * n..j * n + extent[j]];
        for b in 0..rows {
            let a = a_block[b * n + j];
            if a == 0.0 {
                continue;
            }
            let w = 0.5 * a;
            for (d, s) in block[b * n..b * n + src.len()].iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RolloutStats {
    pub rollout_to_bhc: f64,
    pub rollout_entropy: f64,
    pub rollout_max_weight: f64,
}

/// Streams head-averaged attention matrices in layer order and emits, at each
/// checkpoint, the rollout statistics of every requested context position.
///
/// The result is indexed `[checkpoint][position]`.
pub fn rollout<I, T>(
    stream: I,
    ctx: usize,
    checkpoints: &[usize],
    positions: &[usize],
    bhc_len: usize,
) -> Result<Vec<Vec<RolloutStats>>>
where
    I: IntoIterator<Item = Result<Vec<T>>>,
    T: Copy + Into<f64>,
{
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::ShapeViolation("rollout checkpoints must increase".into()));
    }
    if let Some(&p) = positions.iter().find(|&&p| p >= ctx) {
        return Err(Error::ShapeViolation(format!(
            "position {p} outside context of {ctx}"
        )));
    }
    let mut state = RolloutState::new(ctx);
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();
    for (layer, matrix) in stream.into_iter().enumerate() {
        let Some(&&target) = next.peek() else {
            break;
        };
        state.consume(layer, &matrix?)?;
        if layer == target {
            out.push(
                positions
                    .iter()
                    .map(|&p| state.row_stats(p, bhc_len))
                    .collect(),
            );
            next.next();
        }
    }
    if let Some(&missing) = next.next() {
        return Err(Error::ScheduleTooSmall(format!(
            "rollout checkpoint {missing} beyond the {} streamed layers",
            state.layers_consumed()
        )));
    }
    Ok(out)
}

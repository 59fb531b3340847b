use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded shuffle, then the first `ceil(ratio * n)` documents train.
pub fn doc_split(doc_ids: &[String], ratio: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if doc_ids.len() < 2 {
        return Err(Error::TooFewDocuments {
            needed: 2,
            found: doc_ids.len(),
        });
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::DegenerateConfig(format!("split ratio {ratio}")));
    }
    let mut ids = doc_ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // the epsilon keeps 0.8 * 100 from rounding up to 81
    let cut = ((ratio * ids.len() as f64 - 1e-9).ceil() as usize).clamp(1, ids.len() - 1);
    let test = ids.split_off(cut);
    Ok((ids, test))
}

/// Seeded partition of documents into `k` folds of near-equal size.
pub fn kfold(doc_ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k < 2 || doc_ids.len() < k {
        return Err(Error::TooFewDocuments {
            needed: k.max(2),
            found: doc_ids.len(),
        });
    }
    let mut ids = doc_ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    Ok(folds)
}

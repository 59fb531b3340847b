use log::info;

use crate::assembler::FeatureMatrix;
use crate::classifier::params::GbdtParams;
use crate::classifier::{gather_rows, train};
use crate::error::Result;
use crate::eval::metrics::Metrics;
use crate::eval::report::CvSummary;
use crate::eval::split::kfold;

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub summary: CvSummary,
    /// Score of every matrix row from the fold that held its document out.
    pub out_of_fold: Vec<f64>,
    pub thresholds: Vec<f64>,
}

/// Document-level k-fold: each fold trains on the other folds' documents,
/// picks its threshold on those training predictions and is scored on its own rows.
pub fn cross_validate(m: &FeatureMatrix, params: &GbdtParams, k: usize, seed: u64) -> Result<CvResult> {
    let all = m.doc_ids();
    let folds = kfold(&all, k, seed)?;
    let mut out_of_fold = vec![0.0; m.n_rows()];
    let mut metrics = Vec::with_capacity(k);
    let mut thresholds = Vec::with_capacity(k);
    for (f, test) in folds.iter().enumerate() {
        let train_ids: Vec<String> = all.iter().filter(|d| !test.contains(d)).cloned().collect();
        let model = train(m, Some(&train_ids), params).map_err(|e| e.context(format!("fold {f}")))?;
        let threshold = model.training.threshold;
        let test_rows = m.rows_of(test)?;
        let (values, l) = gather_rows(m, &test_rows);
        let s = model.predict_values(&values)?;
        let fm = Metrics::compute(&s, &l, threshold).map_err(|e| e.context(format!("fold {f}")))?;
        info!("fold {f}: F1 {:.4} AUROC {:.4} AUPRC {:.4}", fm.micro_f1, fm.auroc, fm.auprc);
        for (&r, &v) in test_rows.iter().zip(&s) {
            out_of_fold[r] = v;
        }
        metrics.push(fm);
        thresholds.push(threshold);
    }
    Ok(CvResult {
        summary: CvSummary::new(metrics, folds),
        out_of_fold,
        thresholds,
    })
}

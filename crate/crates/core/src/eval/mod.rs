//! Token labels, metrics, document splits, inference-only baselines and reports.

pub mod baselines;
pub mod labels;
pub mod metrics;
pub mod report;
pub mod split;

pub use baselines::Baseline;
pub use labels::spans_to_labels;
pub use metrics::{auprc, auroc, f1_at, select_threshold, Metrics};
pub use report::{render_report, DocScores, EvalReport, ReportFormat};
pub use split::{doc_split, kfold};

//! Histogram gradient-boosted trees under the logistic loss.

pub mod binning;
pub mod cv;
pub mod model;
pub mod params;
pub mod train;
pub mod tree;

pub use cv::{cross_validate, CvResult};
pub use model::{TrainingSummary, UQModel};
pub use params::GbdtParams;
pub use train::{train_dataset, Dataset};
pub use tree::{Node, Tree};

use crate::assembler::FeatureMatrix;
use crate::error::{Error, Result};

/// Copies the listed rows into a dense block.
pub fn gather_rows(m: &FeatureMatrix, rows: &[usize]) -> (Vec<f32>, Vec<u8>) {
    let mut values = Vec::with_capacity(rows.len() * m.n_cols());
    let mut labels = Vec::with_capacity(rows.len());
    for &r in rows {
        values.extend_from_slice(m.row(r));
        labels.push(m.labels()[r]);
    }
    (values, labels)
}

/// Trains on every row of the listed documents (all documents when `None`).
pub fn train(m: &FeatureMatrix, doc_ids: Option<&[String]>, params: &GbdtParams) -> Result<UQModel> {
    let ids = doc_ids.map(<[String]>::to_vec).unwrap_or_else(|| m.doc_ids());
    let rows = m.rows_of(&ids)?;
    let (values, labels) = gather_rows(m, &rows);
    let data = Dataset {
        values: &values,
        n_cols: m.n_cols(),
        labels: &labels,
    };
    let names = m.meta.registry.names().into_iter().map(String::from).collect();
    let mut model = train_dataset(data, names, m.meta.registry_hash.clone(), params)?;
    model.training.doc_ids = ids;
    Ok(model)
}

/// Scores every row of the matrix, refusing a matrix assembled with other columns.
pub fn predict(model: &UQModel, m: &FeatureMatrix) -> Result<Vec<f64>> {
    if model.registry_hash != m.meta.registry_hash {
        return Err(Error::RegistryMismatch(format!(
            "model trained on registry {}, matrix has {}",
            &model.registry_hash[..12.min(model.registry_hash.len())],
            &m.meta.registry_hash[..12.min(m.meta.registry_hash.len())]
        )));
    }
    model.predict_values(&m.values)
}

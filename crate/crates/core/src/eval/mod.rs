//! Confusion matrices, OA/Sen/Spe, bitwidth sweeps and report files.

pub mod metrics;
pub mod report;
pub mod sweep;

use rayon::prelude::*;

pub use metrics::{confusion, metrics, ClassMetrics, ConfusionMatrix, MetricsReport};
pub use report::{emit_reports, ReportBundle};
pub use sweep::{sweep, sweep_csv, SweepPoint};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::format::QuantModel;
use crate::infer::QuantEngine;
use crate::net::Network;

/// Anything that maps a record to a class; ties break to the lowest index.
pub trait Classifier {
    fn class_count(&self) -> usize;
    fn predict_all(&self, data: &Dataset) -> Result<Vec<usize>>;
}

impl Classifier for Network {
    fn class_count(&self) -> usize {
        self.spec().class_count
    }

    fn predict_all(&self, data: &Dataset) -> Result<Vec<usize>> {
        data.records().par_iter().map(|r| self.predict(r.samples())).collect()
    }
}

impl Classifier for QuantModel {
    fn class_count(&self) -> usize {
        self.spec.class_count
    }

    fn predict_all(&self, data: &Dataset) -> Result<Vec<usize>> {
        let engine = QuantEngine::new(self)?;
        data.records().par_iter().map(|r| engine.predict(r.samples())).collect()
    }
}

pub fn evaluate<C: Classifier + ?Sized>(model: &C, test: &Dataset) -> Result<(ConfusionMatrix, MetricsReport)> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds = model.predict_all(test)?;
    let cm = confusion(&preds, &test.labels(), model.class_count())?;
    let m = metrics(&cm)?;
    Ok((cm, m))
}

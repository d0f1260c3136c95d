use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::{ConfusionMatrix, MetricsReport};
use super::sweep::{sweep_csv, SweepPoint};
use crate::error::Result;
use crate::format::MemoryReport;

/// Whatever a run produced; absent parts write no files.
#[derive(Debug, Clone, Default)]
pub struct ReportBundle {
    pub evaluation: Option<(ConfusionMatrix, MetricsReport)>,
    pub memory: Option<MemoryReport>,
    pub sweep: Option<Vec<SweepPoint>>,
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Writes the bundle under `out_dir` and returns the paths written, in order.
///
/// Output is a pure function of the bundle.
pub fn emit_reports(bundle: &ReportBundle, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut files: Vec<(&str, String)> = Vec::new();
    if let Some((cm, m)) = &bundle.evaluation {
        files.push(("metrics.json", json(m)));
        files.push(("confusion.csv", cm.to_csv()));
        files.push(("confusion_normalized.csv", cm.normalized_csv()));
        files.push(("confusion_heat.txt", cm.heat_table()));
    }
    if let Some(mem) = &bundle.memory {
        files.push(("memory.json", json(mem)));
        files.push(("memory.txt", mem.to_table()));
    }
    if let Some(points) = &bundle.sweep {
        files.push(("sweep.csv", sweep_csv(points)));
        files.push(("sweep.json", json(points)));
    }
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = out_dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

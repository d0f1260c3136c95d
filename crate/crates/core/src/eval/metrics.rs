use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[t][p]`: records of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Each row divided by its sum; all-zero rows stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = header(self.classes());
        for (t, row) in self.counts.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&format!("{t},{}\n", cells.join(",")));
        }
        out
    }

    pub fn normalized_csv(&self) -> String {
        let mut out = header(self.classes());
        for (t, row) in self.normalized().iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&format!("{t},{}\n", cells.join(",")));
        }
        out
    }

    /// Plain-text rendering of the row-normalized matrix: percentages with a
    /// shade glyph per cell.
    pub fn heat_table(&self) -> String {
        const SHADES: [char; 5] = [' ', '.', ':', '+', '#'];
        let k = self.classes();
        let mut out = String::from("true\\pred");
        for p in 0..k {
            out.push_str(&format!(" {p:>4}"));
        }
        out.push('\n');
        for (t, row) in self.normalized().iter().enumerate() {
            out.push_str(&format!("{t:>9}"));
            for &v in row {
                let shade = SHADES[((v * 4.0).round() as usize).min(4)];
                if v == 0.0 {
                    out.push_str("     ");
                } else {
                    out.push_str(&format!(" {:>3}{shade}", (v * 100.0).round() as u32));
                }
            }
            out.push('\n');
        }
        out
    }
}

fn header(k: usize) -> String {
    let cols: Vec<String> = (0..k).map(|p| format!("pred_{p}")).collect();
    format!("true,{}\n", cols.join(","))
}

pub fn confusion(preds: &[usize], truth: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&p, &t) in preds.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::InvalidParam(format!(
                "label out of range: {} (classes: {classes})",
                p.max(t)
            )));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    /// `None` when the class has no records.
    pub sensitivity: Option<f64>,
    /// `None` when every record belongs to this class.
    pub specificity: Option<f64>,
}

/// Percentages in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: u64,
    /// `trace / N`.
    pub oa: f64,
    /// Macro mean of one-vs-rest sensitivities over supported classes.
    pub sen: f64,
    /// Macro mean of one-vs-rest specificities.
    pub spe: f64,
    /// `sum_i (TP_i + TN_i) / N`, which exceeds 100 for more than one class.
    pub oa_one_vs_rest_sum: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Classes with zero support, left out of `sen`.
    pub excluded_classes: Vec<usize>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, k) = values.fold((0.0, 0usize), |(s, k), v| (s + v, k + 1));
    if k == 0 {
        0.0
    } else {
        sum / k as f64
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::InvalidParam("confusion matrix is all zero".into()));
    }
    let k = cm.classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|i| {
            let tp = cm.counts[i][i];
            let row: u64 = cm.counts[i].iter().sum();
            let col: u64 = cm.counts.iter().map(|r| r[i]).sum();
            let (fn_, fp) = (row - tp, col - tp);
            let tn = n - tp - fn_ - fp;
            ClassMetrics {
                class: i,
                support: row,
                tp,
                fp,
                fn_,
                tn,
                sensitivity: (row > 0).then(|| 100.0 * tp as f64 / row as f64),
                specificity: (tn + fp > 0).then(|| 100.0 * tn as f64 / (tn + fp) as f64),
            }
        })
        .collect();
    let literal: u64 = per_class.iter().map(|c| c.tp + c.tn).sum();
    Ok(MetricsReport {
        n,
        oa: 100.0 * cm.trace() as f64 / n as f64,
        sen: mean(per_class.iter().filter_map(|c| c.sensitivity)),
        spe: mean(per_class.iter().filter_map(|c| c.specificity)),
        oa_one_vs_rest_sum: 100.0 * literal as f64 / n as f64,
        excluded_classes: per_class.iter().filter(|c| c.support == 0).map(|c| c.class).collect(),
        per_class,
    })
}

//! Per-layer memory accounting in the style of a compression table.
//!
//! The headline figure counts only binary-base bits (`params x average
//! bitwidth`). Coordinate storage and container headers are reported
//! separately.

use serde::{Deserialize, Serialize};

use super::container::encode_model;
use super::model::QuantModel;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMemory {
    pub name: String,
    /// `(1/m) sum I_k`; `None` for rows injected without group structure.
    pub group_mean_bitwidth: Option<f64>,
    /// `base_bits / params`.
    pub avg_bitwidth: f64,
    pub params: usize,
    pub base_bits: usize,
    /// `32 * sum I_k`; zero for injected rows.
    pub coord_bits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub layers: Vec<LayerMemory>,
    pub total_params: usize,
    pub total_base_bits: usize,
    pub avg_bitwidth: f64,
    /// `total_base_bits / 8 / 1024`, rounded to 3 decimals.
    pub base_kilobytes: f64,
    pub coordinate_overhead_bits: usize,
    /// Size of the encoded container, when computed from a model.
    pub file_bits: Option<usize>,
    /// `32 * total_params / total_base_bits`; `None` when no bases remain.
    pub compression_rate: Option<f64>,
}

pub fn kilobytes(bits: usize) -> f64 {
    let kb = bits as f64 / 8.0 / 1024.0;
    (kb * 1000.0).round() / 1000.0
}

impl MemoryReport {
    fn from_rows(layers: Vec<LayerMemory>, file_bits: Option<usize>) -> Self {
        let total_params: usize = layers.iter().map(|l| l.params).sum();
        let total_base_bits: usize = layers.iter().map(|l| l.base_bits).sum();
        let coordinate_overhead_bits = layers.iter().map(|l| l.coord_bits).sum();
        let avg_bitwidth = if total_params == 0 {
            0.0
        } else {
            total_base_bits as f64 / total_params as f64
        };
        let compression_rate = (total_base_bits > 0).then(|| (total_params * 32) as f64 / total_base_bits as f64);
        Self {
            layers,
            total_params,
            total_base_bits,
            avg_bitwidth,
            base_kilobytes: kilobytes(total_base_bits),
            coordinate_overhead_bits,
            file_bits,
            compression_rate,
        }
    }

    /// Accounting for externally supplied `(name, params, avg_bitwidth)`
    /// rows: `base_bits = round(params * avg_bitwidth)`.
    pub fn from_bitwidths<S: AsRef<str>>(rows: &[(S, usize, f64)]) -> Self {
        let layers = rows
            .iter()
            .map(|(name, params, bw)| LayerMemory {
                name: name.as_ref().to_string(),
                group_mean_bitwidth: None,
                avg_bitwidth: *bw,
                params: *params,
                base_bits: (*params as f64 * bw).round() as usize,
                coord_bits: 0,
            })
            .collect();
        Self::from_rows(layers, None)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table: layer, average bitwidth, params, memory.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<[String; 4]> = vec![[
            "Layer".into(),
            "Average Bitwidth".into(),
            "Params".into(),
            "Memory".into(),
        ]];
        for l in &self.layers {
            rows.push([
                l.name.clone(),
                format!("{:.4}", l.avg_bitwidth),
                thousands(l.params),
                format!("{} Bit", thousands(l.base_bits)),
            ]);
        }
        rows.push([
            "Total".into(),
            format!("{:.4}", self.avg_bitwidth),
            thousands(self.total_params),
            format!(
                "{} Bit = {:.3} KB",
                thousands(self.total_base_bits),
                self.base_kilobytes
            ),
        ]);
        let widths: Vec<usize> = (0..4)
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            let line = format!(
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
                r[0],
                r[1],
                r[2],
                r[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
            out.push_str(line.trim_end());
            out.push('\n');
            if i == 0 || i == rows.len() - 2 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 6));
                out.push('\n');
            }
        }
        out.push_str(&format!(
            "coordinate overhead: {} Bit",
            thousands(self.coordinate_overhead_bits)
        ));
        if let Some(bits) = self.file_bits {
            out.push_str(&format!(
                "; container: {} Bit = {:.3} KB",
                thousands(bits),
                kilobytes(bits)
            ));
        }
        if let Some(rate) = self.compression_rate {
            out.push_str(&format!("; compression {rate:.2}x"));
        }
        out.push('\n');
        out
    }
}

fn thousands(v: usize) -> String {
    let s = v.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn memory_report(model: &QuantModel) -> Result<MemoryReport> {
    let layers = model
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let (group_mean, weighted) = l.average_bitwidth();
            LayerMemory {
                name: model.layer_name(i),
                group_mean_bitwidth: Some(group_mean),
                avg_bitwidth: weighted,
                params: l.param_count,
                base_bits: l.base_bits(),
                coord_bits: 32 * l.coordinate_count(),
            }
        })
        .collect();
    let file_bits = encode_model(model)?.len() * 8;
    Ok(MemoryReport::from_rows(layers, Some(file_bits)))
}

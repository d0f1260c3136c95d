//! Labeled 10 s ECG fragments: ingestion, per-record normalization,
//! train/test splitting and a synthetic generator for desk-scale runs.
//!
//! Two on-disk formats are supported. CSV rows hold 3,600 decimal samples
//! followed by an integer label. The raw container is the magic `ALQD`, a
//! little-endian `u32` record count, then per record 3,600 little-endian
//! `f32` samples and a `u8` label.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Samples in one fragment: 10 s at 360 Hz.
pub const SAMPLES_PER_RECORD: usize = 3600;
/// Number of rhythm classes.
pub const CLASS_COUNT: usize = 17;
/// Sampling frequency of the fragments in Hz.
pub const SAMPLE_RATE_HZ: f64 = 360.0;

const RAW_MAGIC: &[u8; 4] = b"ALQD";

#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    samples: Vec<f32>,
    label: u8,
}

impl EcgRecord {
    pub fn new(samples: Vec<f32>, label: usize) -> Result<Self> {
        if samples.len() != SAMPLES_PER_RECORD {
            return Err(Error::InvalidParam(format!(
                "expected {SAMPLES_PER_RECORD} samples, got {}",
                samples.len()
            )));
        }
        if label >= CLASS_COUNT {
            return Err(Error::InvalidParam(format!("label {label} out of range")));
        }
        if let Some(pos) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidParam(format!("sample {pos} is not finite")));
        }
        Ok(Self {
            samples,
            label: label as u8,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn label(&self) -> usize {
        self.label as usize
    }
}

/// Per-record z-score with population standard deviation.
///
/// A constant (flatline) record maps to all zeros; use [`is_flatline`] to
/// detect that case.
pub fn normalize(record: &EcgRecord) -> EcgRecord {
    let n = record.samples.len() as f64;
    let mean = record.samples.iter().map(|&s| s as f64).sum::<f64>() / n;
    let var = record
        .samples
        .iter()
        .map(|&s| {
            let d = s as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let samples = if std > 0.0 {
        record
            .samples
            .iter()
            .map(|&s| ((s as f64 - mean) / std) as f32)
            .collect()
    } else {
        vec![0.0; record.samples.len()]
    };
    EcgRecord {
        samples,
        label: record.label,
    }
}

pub fn is_flatline(record: &EcgRecord) -> bool {
    let first = record.samples[0];
    record.samples.iter().all(|&s| s == first)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<EcgRecord>,
    class_count: usize,
}

impl Dataset {
    pub fn new(records: Vec<EcgRecord>) -> Self {
        Self {
            records,
            class_count: CLASS_COUNT,
        }
    }

    pub fn records(&self) -> &[EcgRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(EcgRecord::label).collect()
    }

    /// Records at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            class_count: self.class_count,
        }
    }

    /// Normalizes every record. Returns the normalized dataset and the number
    /// of flatline records that were mapped to zeros.
    pub fn normalized(&self) -> (Dataset, usize) {
        let mut flat = 0;
        let records = self
            .records
            .iter()
            .map(|r| {
                if is_flatline(r) {
                    flat += 1;
                }
                normalize(r)
            })
            .collect();
        if flat > 0 {
            warn!("{flat} flatline record(s) normalized to zeros");
        }
        (
            Dataset {
                records,
                class_count: self.class_count,
            },
            flat,
        )
    }

    /// Seeded sample of at most `count` records, in ascending index order.
    pub fn sample(&self, count: usize, seed: u64) -> Dataset {
        if count >= self.len() {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(count);
        idx.sort_unstable();
        self.subset(&idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    RawF32,
}

impl DataFormat {
    /// `.csv` maps to CSV; anything else is treated as the raw container.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::RawF32,
        }
    }
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    match format {
        DataFormat::Csv => read_csv(reader),
        DataFormat::RawF32 => read_raw(reader),
    }
}

pub fn save_dataset(path: &Path, format: DataFormat, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        DataFormat::Csv => write_csv(&mut w, dataset)?,
        DataFormat::RawF32 => write_raw(&mut w, dataset)?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = Vec::new();
    for (index, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Ingest {
            index,
            reason: e.to_string(),
        })?;
        let ingest = |reason: String| Error::Ingest { index, reason };
        if row.len() < 2 {
            return Err(ingest(format!(
                "expected {SAMPLES_PER_RECORD} samples, got {}",
                row.len().saturating_sub(1)
            )));
        }
        let n_samples = row.len() - 1;
        if n_samples != SAMPLES_PER_RECORD {
            return Err(ingest(format!(
                "expected {SAMPLES_PER_RECORD} samples, got {n_samples}"
            )));
        }
        let mut samples = Vec::with_capacity(n_samples);
        for (col, field) in row.iter().take(n_samples).enumerate() {
            let v: f32 = field
                .parse()
                .map_err(|_| ingest(format!("non-numeric sample {field:?} in column {col}")))?;
            if !v.is_finite() {
                return Err(ingest(format!("non-finite sample in column {col}")));
            }
            samples.push(v);
        }
        let label_field = &row[n_samples];
        let label: i64 = label_field
            .parse()
            .map_err(|_| ingest(format!("non-integer label {label_field:?}")))?;
        if !(0..CLASS_COUNT as i64).contains(&label) {
            return Err(ingest(format!("label out of range: {label}")));
        }
        records.push(EcgRecord {
            samples,
            label: label as u8,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset::new(records))
}

pub fn write_csv<W: Write>(w: &mut W, dataset: &Dataset) -> Result<()> {
    let mut line = String::new();
    for r in &dataset.records {
        line.clear();
        for s in &r.samples {
            // `{}` on f32 prints the shortest representation that parses back exactly.
            line.push_str(&format!("{s},"));
        }
        line.push_str(&format!("{}\n", r.label));
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn read_raw<R: Read>(mut reader: R) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(|_| Error::EmptyDataset)?;
    if &magic != RAW_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic".into(),
        });
    }
    let mut count = [0u8; 4];
    reader.read_exact(&mut count).map_err(|_| Error::Format {
        offset: 4,
        reason: "truncated record count".into(),
    })?;
    let count = u32::from_le_bytes(count) as usize;
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut buf = vec![0u8; SAMPLES_PER_RECORD * 4 + 1];
    let mut records = Vec::with_capacity(count);
    for index in 0..count {
        reader.read_exact(&mut buf).map_err(|_| Error::Ingest {
            index,
            reason: "truncated record".into(),
        })?;
        let samples: Vec<f32> = buf[..SAMPLES_PER_RECORD * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let label = buf[SAMPLES_PER_RECORD * 4] as usize;
        let record = EcgRecord::new(samples, label).map_err(|e| Error::Ingest {
            index,
            reason: match e {
                Error::InvalidParam(msg) if msg.starts_with("label") => "label out of range".into(),
                other => other.to_string(),
            },
        })?;
        records.push(record);
    }
    Ok(Dataset::new(records))
}

pub fn write_raw<W: Write>(w: &mut W, dataset: &Dataset) -> Result<()> {
    w.write_all(RAW_MAGIC)?;
    w.write_all(&(dataset.len() as u32).to_le_bytes())?;
    for r in &dataset.records {
        for s in &r.samples {
            w.write_all(&s.to_le_bytes())?;
        }
        w.write_all(&[r.label])?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            stratified: true,
        }
    }
}

/// Record indices of each side of a split, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(dataset: &Dataset, spec: &SplitSpec) -> Result<SplitIndices> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidParam("train_fraction must be in (0,1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = dataset.len();
    let mut train = Vec::new();
    let mut test = Vec::new();

    if !spec.stratified {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let n_train = (spec.train_fraction * n as f64).round() as usize;
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    } else {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, r) in dataset.records.iter().enumerate() {
            by_class.entry(r.label()).or_default().push(i);
        }
        let mut small = Vec::new();
        let mut regular = Vec::new();
        for (class, mut idx) in by_class {
            idx.shuffle(&mut rng);
            if idx.len() < 2 {
                warn!("class {class} has {} record(s); all assigned to train", idx.len());
                small.push(idx);
            } else {
                regular.push((class, idx));
            }
        }
        // Largest-remainder allocation: each class gets floor(f * n_c) and
        // the leftover quota goes to the largest fractional parts.
        let eligible: usize = regular.iter().map(|(_, v)| v.len()).sum();
        let quota = (spec.train_fraction * eligible as f64).round() as usize;
        let mut alloc: Vec<usize> = regular
            .iter()
            .map(|(_, v)| (spec.train_fraction * v.len() as f64).floor() as usize)
            .collect();
        let mut order: Vec<usize> = (0..regular.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = spec.train_fraction * regular[a].1.len() as f64 - alloc[a] as f64;
            let fb = spec.train_fraction * regular[b].1.len() as f64 - alloc[b] as f64;
            fb.total_cmp(&fa).then(regular[a].0.cmp(&regular[b].0))
        });
        let mut remaining = quota.saturating_sub(alloc.iter().sum());
        for &k in order.iter().cycle().take(order.len() * 2) {
            if remaining == 0 {
                break;
            }
            if alloc[k] < regular[k].1.len() {
                alloc[k] += 1;
                remaining -= 1;
            }
        }
        for ((_, idx), take) in regular.iter().zip(&alloc) {
            train.extend_from_slice(&idx[..*take]);
            test.extend_from_slice(&idx[*take..]);
        }
        for idx in small {
            train.extend(idx);
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let SplitIndices { train, test } = split_indices(dataset, spec)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

/// Noise-free signal for one synthetic class: a slow sinusoid plus a
/// Gaussian pulse train, each with class-specific frequency, phase, period
/// and pulse width.
pub fn synth_template(class: usize) -> Vec<f32> {
    let c = class as f64;
    let freq = 0.35 + 0.21 * c;
    let phase = 0.9 * c;
    let period = 170 + 37 * class;
    let offset = (53 * class) % period;
    let width = 3.0 + 2.0 * (class % 4) as f64;
    let pulse_amp = if class.is_multiple_of(2) { 1.0 } else { -0.8 };
    (0..SAMPLES_PER_RECORD)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE_HZ;
            let base = 0.4 * (2.0 * std::f64::consts::PI * freq * t + phase).sin();
            // Distance to the nearest pulse center.
            let rel = (i + period - offset) % period;
            let d = rel.min(period - rel) as f64;
            let pulse = pulse_amp * (-0.5 * (d / width).powi(2)).exp();
            (base + pulse) as f32
        })
        .collect()
}

pub fn synth_generate(n_per_class: usize, seed: u64, noise_sigma: f64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::InvalidParam("n_per_class must be >= 1".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidParam("noise_sigma must be finite and >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidParam(e.to_string()))?;
    let mut records = Vec::with_capacity(CLASS_COUNT * n_per_class);
    for class in 0..CLASS_COUNT {
        let template = synth_template(class);
        for _ in 0..n_per_class {
            let samples = if noise_sigma == 0.0 {
                template.clone()
            } else {
                template
                    .iter()
                    .map(|&s| (s as f64 + noise.sample(&mut rng)) as f32)
                    .collect()
            };
            records.push(EcgRecord {
                samples,
                label: class as u8,
            });
        }
    }
    Ok(Dataset::new(records))
}

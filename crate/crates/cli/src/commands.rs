use std::fs;
use std::path::{Path, PathBuf};

use alq_core::alq::{alq_pipeline, AlqConfig, IMaxMap, PruneTarget};
use alq_core::data::{load_dataset, save_dataset, split, synth_generate, DataFormat, Dataset, SplitSpec};
use alq_core::eval::{emit_reports, evaluate, sweep as run_sweep, ReportBundle};
use alq_core::format::{self, memory_report, QuantModel};
use alq_core::net::{self, default_ecgnet_spec, train as run_train, Network, TrainConfig};
use anyhow::{Context, Result};
use log::{info, warn};
use serde::Serialize;

use crate::args::{AlqArgs, EvalArgs, FormatArg, QuantizeArgs, ReportArgs, SweepArgs, SynthArgs, TrainArgs};
use crate::manifest::{beside, Manifest};
use crate::Invalid;

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Invalid(format!("input not found: {}", path.display())).into());
    }
    Ok(())
}

fn prepare_out_file(out: &Path) -> Result<()> {
    if out.is_dir() {
        return Err(Invalid(format!("output path is a directory: {}", out.display())).into());
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn data_format(path: &Path, flag: Option<FormatArg>) -> DataFormat {
    match flag {
        Some(FormatArg::Csv) => DataFormat::Csv,
        Some(FormatArg::Raw) => DataFormat::RawF32,
        None => DataFormat::from_path(path),
    }
}

/// Loads and z-score normalizes every record.
fn load_normalized(path: &Path, flag: Option<FormatArg>) -> Result<Dataset> {
    let raw = load_dataset(path, data_format(path, flag)).with_context(|| format!("loading {}", path.display()))?;
    let (data, flat) = raw.normalized();
    if flat > 0 {
        warn!("{}: {flat} flat-line records normalized to zeros", path.display());
    }
    info!("{}: {} records", path.display(), data.len());
    Ok(data)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    out.with_file_name(name)
}

#[derive(Serialize)]
struct SynthConfig {
    n_per_class: usize,
    seed: u64,
    noise: f64,
    train_fraction: Option<f64>,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    prepare_out_file(&a.out)?;
    let data = synth_generate(a.n_per_class, a.seed, a.noise)?;
    let fmt = data_format(&a.out, a.format);
    let mut manifest = Manifest::new("synth");
    manifest.seed = Some(a.seed);
    manifest.config(&SynthConfig {
        n_per_class: a.n_per_class,
        seed: a.seed,
        noise: a.noise,
        train_fraction: a.test_out.as_ref().map(|_| a.train_fraction),
    })?;
    match &a.test_out {
        Some(test_out) => {
            prepare_out_file(test_out)?;
            let spec = SplitSpec {
                train_fraction: a.train_fraction,
                seed: a.seed,
                stratified: true,
            };
            let (train, test) = split(&data, &spec)?;
            save_dataset(&a.out, fmt, &train)?;
            save_dataset(test_out, data_format(test_out, a.format), &test)?;
            info!("wrote {} training and {} test records", train.len(), test.len());
            manifest.outputs = vec![a.out.clone(), test_out.clone()];
        }
        None => {
            save_dataset(&a.out, fmt, &data)?;
            info!("wrote {} records", data.len());
            manifest.outputs = vec![a.out.clone()];
        }
    }
    manifest.write(&beside(&a.out))
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            require_file(path)?;
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Invalid(format!("invalid config {}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.optimizer {
        cfg.optimizer = v.into();
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    require_file(&a.data.data)?;
    prepare_out_file(&a.out)?;
    let mut manifest = Manifest::new("train");
    manifest.seed = Some(cfg.seed);
    manifest.config(&cfg)?;
    manifest.input(&a.data.data)?;

    let data = load_normalized(&a.data.data, a.data.format)?;
    let init = Network::init(default_ecgnet_spec(), cfg.seed)?;
    let (net, report) = run_train(init, &data, &cfg)?;
    net::save_checkpoint(&net, &a.out)?;
    let report_path = sibling(&a.out, ".train.json");
    write_json(&report_path, &report)?;
    info!(
        "final epoch loss {:.6}; wrote {}",
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        a.out.display()
    );
    manifest.outputs = vec![a.out.clone(), report_path];
    manifest.write(&beside(&a.out))
}

fn alq_config(a: &AlqArgs) -> Result<AlqConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            require_file(path)?;
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Invalid(format!("invalid config {}: {e}", path.display())))?
        }
        None => AlqConfig::default(),
    };
    if let Some(v) = a.group_size {
        cfg.group_size = v;
    }
    if let Some(v) = a.i_max {
        cfg.i_max = IMaxMap::uniform(v);
    }
    if let Some(v) = a.prune_rate {
        cfg.prune = PruneTarget::Rate(v);
    }
    if let Some(v) = a.target_bitwidth {
        cfg.prune = PruneTarget::TargetAvgBitwidth(v);
    }
    if let Some(v) = a.scorer {
        cfg.scorer = v.into();
    }
    if let Some(v) = a.refine_iters {
        cfg.refine_iters = v;
    }
    if let Some(v) = a.calib_batch {
        cfg.calib_batch = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn quantize(a: QuantizeArgs) -> Result<()> {
    let cfg = alq_config(&a.alq)?;
    require_file(&a.model)?;
    if let Some(c) = &a.calib {
        require_file(c)?;
    }
    prepare_out_file(&a.out)?;
    let mut manifest = Manifest::new("quantize");
    manifest.seed = Some(cfg.seed);
    manifest.config(&cfg)?;
    manifest.input(&a.model)?;

    let net = net::load_checkpoint(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let calib = match &a.calib {
        Some(path) => {
            manifest.input(path)?;
            Some(load_normalized(path, a.format)?)
        }
        None => None,
    };
    let (model, report) = alq_pipeline(&net, calib.as_ref(), &cfg)?;
    format::serialize(&model, &a.out)?;
    let report_path = sibling(&a.out, ".report.json");
    write_json(&report_path, &report)?;
    info!(
        "average bitwidth {:.4}, {} coordinates pruned; wrote {}",
        report.final_bitwidth,
        report.removed_coordinates,
        a.out.display()
    );
    manifest.outputs = vec![a.out.clone(), report_path];
    manifest.write(&beside(&a.out))
}

enum AnyModel {
    Full(Network),
    Quant(QuantModel),
}

fn load_any_model(path: &Path) -> Result<AnyModel> {
    require_file(path)?;
    let bytes = fs::read(path)?;
    let model = match bytes.get(..4) {
        Some(b"ALQF") => AnyModel::Full(net::checkpoint::decode_checkpoint(&bytes)?),
        Some(b"ALQQ") => AnyModel::Quant(format::decode_model(&bytes)?),
        _ => return Err(Invalid(format!("{}: neither a checkpoint nor a packed model", path.display())).into()),
    };
    Ok(model)
}

fn finish_dir(mut manifest: Manifest, out: &Path, written: Vec<PathBuf>) -> Result<()> {
    manifest.outputs = written;
    manifest.write(&out.join("manifest.json"))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    require_file(&a.model)?;
    require_file(&a.data.data)?;
    let mut manifest = Manifest::new("eval");
    manifest.input(&a.model)?;
    manifest.input(&a.data.data)?;
    let model = load_any_model(&a.model)?;
    let data = load_normalized(&a.data.data, a.data.format)?;
    let bundle = match &model {
        AnyModel::Full(net) => ReportBundle {
            evaluation: Some(evaluate(net, &data)?),
            ..ReportBundle::default()
        },
        AnyModel::Quant(q) => ReportBundle {
            evaluation: Some(evaluate(q, &data)?),
            memory: Some(memory_report(q)?),
            sweep: None,
        },
    };
    if let Some((_, m)) = &bundle.evaluation {
        println!("OA {:.2}%  Sen {:.2}%  Spe {:.2}%  (N = {})", m.oa, m.sen, m.spe, m.n);
    }
    let written = emit_reports(&bundle, &a.out)?;
    finish_dir(manifest, &a.out, written)
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = alq_config(&a.alq)?;
    for p in [&a.model, &a.calib, &a.test] {
        require_file(p)?;
    }
    let mut manifest = Manifest::new("sweep");
    manifest.seed = Some(cfg.seed);
    manifest.config(&cfg)?;
    for p in [&a.model, &a.calib, &a.test] {
        manifest.input(p)?;
    }
    let net = net::load_checkpoint(&a.model)?;
    let calib = load_normalized(&a.calib, a.format)?;
    let test = load_normalized(&a.test, a.format)?;
    let points = run_sweep(&net, &calib, &test, &a.rates, &cfg)?;
    for p in &points {
        println!(
            "rate {:<5} bitwidth {:.4}  loss {:.4} -> {:.4}  OA {:.2}%",
            p.prune_rate, p.avg_bitwidth, p.calib_loss, p.post_refine_loss, p.test_oa
        );
    }
    let bundle = ReportBundle {
        sweep: Some(points),
        ..ReportBundle::default()
    };
    let written = emit_reports(&bundle, &a.out)?;
    finish_dir(manifest, &a.out, written)
}

pub fn report(a: ReportArgs) -> Result<()> {
    require_file(&a.model)?;
    let mut manifest = Manifest::new("report");
    manifest.input(&a.model)?;
    let model = format::deserialize(&a.model)?;
    let mem = memory_report(&model)?;
    print!("{}", mem.to_table());
    let bundle = ReportBundle {
        memory: Some(mem),
        ..ReportBundle::default()
    };
    let written = emit_reports(&bundle, &a.out)?;
    finish_dir(manifest, &a.out, written)
}

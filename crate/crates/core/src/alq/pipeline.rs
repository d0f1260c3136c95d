//! End-to-end quantization: flatten, partition, greedy init, score and
//! prune in the alpha domain, then alternate base and coordinate refinement.

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AlqConfig, IMaxMap, PruneTarget, Scorer};
use super::group::{optimize_bases, optimize_coords, WeightGroup};
use super::layer::QuantLayer;
use super::prune::{dequantized_network, prune_coordinates, score_coordinates, CoordinateScore, PruneOutcome};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::format::{ModelMeta, QuantModel};
use crate::net::{mean_loss, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlqReport {
    /// Squared reconstruction error summed over all groups.
    pub init_sq_error: f64,
    pub pruned_sq_error: f64,
    pub final_sq_error: f64,
    /// Mean calibration cross-entropy, when a calibration set is available.
    pub full_precision_loss: Option<f64>,
    pub pre_refine_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub removed_coordinates: usize,
    pub target_was_active: bool,
    pub bitwidth_before_prune: f64,
    pub final_bitwidth: f64,
}

fn total_sq_error(layers: &[QuantLayer], groups: &[Vec<WeightGroup>]) -> f64 {
    layers
        .iter()
        .zip(groups)
        .map(|(l, gs)| l.groups.iter().zip(gs).map(|(q, w)| q.sq_error(&w.values)).sum::<f64>())
        .sum()
}

/// `iters` rounds of (bases with coordinates fixed, then coordinates with
/// bases fixed) on every group. Groups are processed in parallel.
pub fn refine(layers: &mut [QuantLayer], groups: &[Vec<WeightGroup>], iters: usize) -> Result<()> {
    for (layer, ws) in layers.iter_mut().zip(groups) {
        layer
            .groups
            .par_iter_mut()
            .zip(ws.par_iter())
            .try_for_each(|(q, w)| -> Result<()> {
                for _ in 0..iters {
                    if q.bitwidth() == 0 {
                        break;
                    }
                    *q = optimize_bases(&w.values, q)?;
                    *q = optimize_coords(&w.values, q)?;
                }
                Ok(())
            })?;
    }
    Ok(())
}

/// Initialized and scored state, shared by every prune target of a sweep.
pub struct AlqSession<'a> {
    network: &'a Network,
    calib: Option<Dataset>,
    config: AlqConfig,
    layers: Vec<QuantLayer>,
    groups: Vec<Vec<WeightGroup>>,
    scores: Vec<CoordinateScore>,
    full_precision_loss: Option<f64>,
}

impl<'a> AlqSession<'a> {
    pub fn new(network: &'a Network, calib: Option<&Dataset>, config: &AlqConfig) -> Result<Self> {
        config.validate()?;
        let calib = calib
            .filter(|c| !c.is_empty())
            .map(|c| c.sample(config.calib_batch, config.seed));
        if config.scorer == Scorer::LossAware && calib.is_none() {
            return Err(Error::InvalidParam("loss-aware scoring needs a calibration set".into()));
        }
        let (layers, groups) = init_layers(network, config.group_size, &config.i_max)?;
        let scores = score_coordinates(&layers, network, calib.as_ref(), config.scorer, config.curvature)?;
        let full_precision_loss = calib.as_ref().map(|c| mean_loss(network, c)).transpose()?;
        Ok(Self {
            network,
            calib,
            config: config.clone(),
            layers,
            groups,
            scores,
            full_precision_loss,
        })
    }

    pub fn calibration(&self) -> Option<&Dataset> {
        self.calib.as_ref()
    }

    pub fn initial_layers(&self) -> &[QuantLayer] {
        &self.layers
    }

    pub fn weight_groups(&self) -> &[Vec<WeightGroup>] {
        &self.groups
    }

    pub fn scores(&self) -> &[CoordinateScore] {
        &self.scores
    }

    fn calib_loss(&self, layers: &[QuantLayer]) -> Result<Option<f64>> {
        match &self.calib {
            Some(c) => Ok(Some(mean_loss(&dequantized_network(self.network, layers)?, c)?)),
            None => Ok(None),
        }
    }

    /// Prunes a copy of the initial layers toward `target`, refines and
    /// assembles the model.
    pub fn run(&self, target: PruneTarget) -> Result<(QuantModel, AlqReport)> {
        let mut layers = self.layers.clone();
        let init_sq_error = total_sq_error(&layers, &self.groups);
        let PruneOutcome {
            removed,
            target_was_active,
            bitwidth_before,
            ..
        } = prune_coordinates(&mut layers, &self.scores, target)?;
        let pruned_sq_error = total_sq_error(&layers, &self.groups);
        let pre_refine_loss = self.calib_loss(&layers)?;

        refine(&mut layers, &self.groups, self.config.refine_iters)?;
        for l in &mut layers {
            for g in &mut l.groups {
                g.round_coords_to_f32();
            }
        }
        let final_sq_error = total_sq_error(&layers, &self.groups);
        let final_loss = self.calib_loss(&layers)?;

        let model = QuantModel::new(
            self.network.spec().clone(),
            self.config.group_size,
            layers,
            ModelMeta {
                seed: self.config.seed,
                config_digest: self.config.digest(),
            },
        )?;
        let report = AlqReport {
            init_sq_error,
            pruned_sq_error,
            final_sq_error,
            full_precision_loss: self.full_precision_loss,
            pre_refine_loss,
            final_loss,
            removed_coordinates: removed,
            target_was_active,
            bitwidth_before_prune: bitwidth_before,
            final_bitwidth: model.average_bitwidth(),
        };
        info!(
            "quantized: bitwidth {:.4} -> {:.4}, sq error {:.4e} -> {:.4e}",
            report.bitwidth_before_prune, report.final_bitwidth, report.pruned_sq_error, report.final_sq_error
        );
        Ok((model, report))
    }
}

fn init_layers(
    network: &Network,
    group_size: usize,
    i_max: &IMaxMap,
) -> Result<(Vec<QuantLayer>, Vec<Vec<WeightGroup>>)> {
    let spec = network.spec();
    let mut layers = Vec::new();
    let mut groups = Vec::new();
    for idx in spec.param_layer_indices() {
        let bits = i_max.get(&spec.layer_name(idx));
        let (layer, gs) = QuantLayer::init(&network.flatten_params(idx)?, idx, group_size, bits)?;
        layers.push(layer);
        groups.push(gs);
    }
    Ok((layers, groups))
}

/// Full quantization run with `config.prune` as the target.
pub fn alq_pipeline(network: &Network, calib: Option<&Dataset>, config: &AlqConfig) -> Result<(QuantModel, AlqReport)> {
    AlqSession::new(network, calib, config)?.run(config.prune)
}

/// Greedy init at exactly `bits` per group: no pruning, no refinement.
pub fn uniform_baseline(network: &Network, bits: usize, group_size: usize) -> Result<QuantModel> {
    if bits == 0 {
        return Err(Error::InvalidParam("bitwidth must be >= 1".into()));
    }
    if bits > u8::MAX as usize {
        return Err(Error::InvalidParam("bitwidth must be <= 255".into()));
    }
    let (mut layers, _) = init_layers(network, group_size, &IMaxMap::uniform(bits))?;
    for l in &mut layers {
        for g in &mut l.groups {
            g.round_coords_to_f32();
        }
    }
    QuantModel::new(network.spec().clone(), group_size, layers, ModelMeta::default())
}

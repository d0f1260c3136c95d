//! Significance scores for coordinates in the alpha domain and global
//! lowest-score-first pruning.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use log::info;

use super::config::{PruneTarget, Scorer};
use super::layer::{network_bitwidth, QuantLayer};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{loss_and_gradient, Network};

/// Score of coordinate `coord` in group `group` of `qlayers[layer]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateScore {
    pub layer: usize,
    pub group: usize,
    pub coord: usize,
    pub score: f64,
    /// `alpha * sqrt(n_k)`, the norm of the removed contribution.
    pub magnitude: f64,
}

impl CoordinateScore {
    /// Ascending score, then magnitude, then `(layer, group, coord)`.
    pub fn significance_order(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then(self.magnitude.total_cmp(&other.magnitude))
            .then((self.layer, self.group, self.coord).cmp(&(other.layer, other.group, other.coord)))
    }
}

/// Copy of `network` with every quantized layer replaced by its
/// reconstruction.
pub fn dequantized_network(network: &Network, qlayers: &[QuantLayer]) -> Result<Network> {
    let mut net = network.clone();
    for l in qlayers {
        net.unflatten_params(l.layer_index, &l.reconstruct())?;
    }
    Ok(net)
}

/// Scores every live coordinate; lower means less significant.
///
/// * `Magnitude`: `alpha_i * sqrt(n_k)`.
/// * `LossAware`: `|g_k . (alpha_i beta_i)| + curvature/2 * ||alpha_i beta_i||^2`
///   where `g_k` is the mean cross-entropy gradient over `calib` with respect
///   to the group's dequantized weights.
pub fn score_coordinates(
    qlayers: &[QuantLayer],
    network: &Network,
    calib: Option<&Dataset>,
    scorer: Scorer,
    curvature: f64,
) -> Result<Vec<CoordinateScore>> {
    let grads: Option<Vec<Vec<f64>>> = match scorer {
        Scorer::Magnitude => None,
        Scorer::LossAware => {
            let calib = calib
                .filter(|c| !c.is_empty())
                .ok_or_else(|| Error::InvalidParam("loss-aware scoring needs a calibration set".into()))?;
            let deq = dequantized_network(network, qlayers)?;
            let (_, g) = loss_and_gradient(&deq, calib)?;
            let flat = qlayers
                .iter()
                .map(|l| {
                    g.layers
                        .iter()
                        .find(|p| p.layer == l.layer_index)
                        .map(|p| p.flatten())
                        .ok_or_else(|| Error::Shape(format!("no gradient for layer {}", l.layer_index)))
                })
                .collect::<Result<_>>()?;
            Some(flat)
        }
    };

    let mut scores = Vec::new();
    for (li, layer) in qlayers.iter().enumerate() {
        let mut offset = 0;
        for (gi, group) in layer.groups.iter().enumerate() {
            let n = group.n();
            for (ci, &alpha) in group.coords().iter().enumerate() {
                let magnitude = alpha * (n as f64).sqrt();
                let score = match &grads {
                    None => magnitude,
                    Some(g) => {
                        let gk = &g[li][offset..offset + n];
                        let dot: f64 = gk
                            .iter()
                            .enumerate()
                            .map(|(j, v)| if group.sign(ci, j) { *v } else { -*v })
                            .sum();
                        (alpha * dot).abs() + 0.5 * curvature * alpha * alpha * n as f64
                    }
                };
                scores.push(CoordinateScore {
                    layer: li,
                    group: gi,
                    coord: ci,
                    score,
                    magnitude,
                });
            }
            offset += n;
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneOutcome {
    pub removed: usize,
    /// False when the target was already met and nothing was removed.
    pub target_was_active: bool,
    pub bitwidth_before: f64,
    pub bitwidth_after: f64,
}

/// Removes coordinates in ascending score order, across all layers, until
/// `target` is met.
pub fn prune_coordinates(
    qlayers: &mut [QuantLayer],
    scores: &[CoordinateScore],
    target: PruneTarget,
) -> Result<PruneOutcome> {
    let live: usize = qlayers.iter().map(QuantLayer::coordinate_count).sum();
    if scores.len() != live {
        return Err(Error::InvalidParam(format!(
            "{} scores for {live} live coordinates",
            scores.len()
        )));
    }
    let mut order: Vec<&CoordinateScore> = scores.iter().collect();
    order.sort_by(|a, b| a.significance_order(b));

    let before = network_bitwidth(qlayers);
    let mut removal: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    let mut active = true;
    match target {
        PruneTarget::Rate(rate) => {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidParam("prune rate must be in [0,1]".into()));
            }
            let k = (rate * live as f64).round() as usize;
            removal.extend(order.iter().take(k).map(|s| (s.layer, s.group, s.coord)));
        }
        PruneTarget::TargetAvgBitwidth(t) => {
            let params: usize = qlayers.iter().map(|l| l.param_count).sum();
            let mut bits: usize = qlayers.iter().map(QuantLayer::base_bits).sum();
            let budget = t * params as f64;
            if bits as f64 <= budget {
                info!("average bitwidth {before:.4} already at or below target {t}; nothing pruned");
                active = false;
            }
            for s in &order {
                if bits as f64 <= budget {
                    break;
                }
                bits -= qlayers[s.layer].groups[s.group].n();
                removal.insert((s.layer, s.group, s.coord));
            }
        }
    }
    // Descending coordinate order keeps the remaining indices valid.
    for &(l, g, c) in removal.iter().rev() {
        qlayers[l].groups[g].remove_coordinate(c);
    }
    Ok(PruneOutcome {
        removed: removal.len(),
        target_was_active: active,
        bitwidth_before: before,
        bitwidth_after: network_bitwidth(qlayers),
    })
}

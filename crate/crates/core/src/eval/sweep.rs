use serde::{Deserialize, Serialize};

use super::evaluate;
use crate::alq::{AlqConfig, AlqSession, PruneTarget};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub prune_rate: f64,
    /// Weight-weighted, after refinement.
    pub avg_bitwidth: f64,
    /// Calibration loss after pruning, before refinement.
    pub calib_loss: f64,
    pub post_refine_loss: f64,
    /// Percent.
    pub test_oa: f64,
}

/// One pipeline run per rate, all sharing the same initialization and
/// scores.
pub fn sweep(
    network: &Network,
    calib: &Dataset,
    test: &Dataset,
    rates: &[f64],
    config: &AlqConfig,
) -> Result<Vec<SweepPoint>> {
    if rates.is_empty() {
        return Err(Error::InvalidParam("no prune rates".into()));
    }
    if rates.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(Error::InvalidParam("prune rates must be in [0,1)".into()));
    }
    if rates.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParam("prune rates must be sorted ascending".into()));
    }
    if calib.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let session = AlqSession::new(network, Some(calib), config)?;
    rates
        .iter()
        .map(|&rate| {
            let (model, report) = session.run(PruneTarget::Rate(rate))?;
            let (_, m) = evaluate(&model, test)?;
            log::info!(
                "sweep rate {rate}: bitwidth {:.4}, oa {:.2}",
                report.final_bitwidth,
                m.oa
            );
            Ok(SweepPoint {
                prune_rate: rate,
                avg_bitwidth: report.final_bitwidth,
                calib_loss: report.pre_refine_loss.expect("calibration present"),
                post_refine_loss: report.final_loss.expect("calibration present"),
                test_oa: m.oa,
            })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("prune_rate,avg_bitwidth,calib_loss,post_refine_loss,test_oa\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.prune_rate, p.avg_bitwidth, p.calib_loss, p.post_refine_loss, p.test_oa
        ));
    }
    out
}

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::ops::{backward, forward_trace, Gradients, Mode};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParam("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParam("learning_rate must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean cross-entropy of each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct AdamState {
    m: Gradients,
    v: Gradients,
    step: i32,
}

/// SplitMix64 finalizer, used to derive independent per-example seeds.
pub(crate) fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Summed loss and gradients over `indices` of `data`.
///
/// Per-example work runs in parallel; the reduction runs in index order so the
/// result is bitwise independent of the thread count.
fn batch_gradients(
    net: &Network,
    data: &Dataset,
    indices: &[usize],
    dropout_seeds: Option<&[u64]>,
) -> Result<(f64, Gradients)> {
    let per_example: Vec<Result<(f64, Gradients)>> = indices
        .par_iter()
        .enumerate()
        .map(|(j, &i)| {
            let r = &data.records()[i];
            let mode = match dropout_seeds {
                Some(seeds) => Mode::Train { dropout_seed: seeds[j] },
                None => Mode::Inference,
            };
            let trace = forward_trace(net, r.samples(), mode)?;
            Ok(backward(net, &trace, r.label()))
        })
        .collect();
    let mut total = Gradients::zeros_like(net);
    let mut loss = 0.0;
    for item in per_example {
        let (l, g) = item?;
        loss += l;
        total.add_assign(&g);
    }
    Ok((loss, total))
}

/// Mean cross-entropy and its gradient over `data` in inference mode.
pub fn loss_and_gradient(net: &Network, data: &Dataset) -> Result<(f64, Gradients)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = Gradients::zeros_like(net);
    let mut loss = 0.0;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(64) {
        let (l, g) = batch_gradients(net, data, chunk, None)?;
        loss += l;
        total.add_assign(&g);
    }
    let n = data.len() as f64;
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

/// Mean cross-entropy over `data` in inference mode.
pub fn mean_loss(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let losses: Vec<Result<f64>> = data
        .records()
        .par_iter()
        .map(|r| {
            let logits = net.logits(r.samples())?;
            Ok(super::ops::cross_entropy(&logits, r.label()))
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / data.len() as f64)
}

pub fn train(mut net: Network, train_set: &Dataset, config: &TrainConfig) -> Result<(Network, TrainReport)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = net.spec().class_count;
    if let Some(bad) = train_set.labels().into_iter().find(|&l| l >= classes) {
        return Err(Error::InvalidParam(format!(
            "label {bad} outside network class count {classes}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState {
        m: Gradients::zeros_like(&net),
        v: Gradients::zeros_like(&net),
        step: 0,
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut seed_counter = mix_seed(config.seed ^ 0xD1B5_4A32_D192_ED03);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let seeds: Vec<u64> = batch
                .iter()
                .map(|_| {
                    seed_counter = mix_seed(seed_counter);
                    seed_counter
                })
                .collect();
            let (loss, mut grads) = batch_gradients(&net, train_set, batch, Some(&seeds)).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged { epoch },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            epoch_loss += loss;
            grads.scale(1.0 / batch.len() as f64);
            match config.optimizer {
                Optimizer::Sgd => sgd_step(&mut net, &grads, config.learning_rate),
                Optimizer::Adam => adam_step(&mut net, &grads, &mut adam, config.learning_rate),
            }
        }
        let mean = epoch_loss / train_set.len() as f64;
        if !mean.is_finite() || !net.all_finite() {
            return Err(Error::Diverged { epoch });
        }
        info!("epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok((net, TrainReport { epoch_losses }))
}

fn sgd_step(net: &mut Network, grads: &Gradients, lr: f64) {
    for (p, g) in net.params_mut().iter_mut().zip(&grads.layers) {
        for (w, d) in p.weights.iter_mut().zip(&g.weights) {
            *w -= lr * d;
        }
        for (w, d) in p.bias.iter_mut().zip(&g.bias) {
            *w -= lr * d;
        }
    }
}

fn adam_step(net: &mut Network, grads: &Gradients, st: &mut AdamState, lr: f64) {
    st.step += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(st.step);
    let c2 = 1.0 - ADAM_BETA2.powi(st.step);
    let update = |w: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    };
    for (((p, g), m), v) in net
        .params_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(st.m.layers.iter_mut())
        .zip(st.v.layers.iter_mut())
    {
        for i in 0..p.weights.len() {
            update(&mut p.weights[i], g.weights[i], &mut m.weights[i], &mut v.weights[i]);
        }
        for i in 0..p.bias.len() {
            update(&mut p.bias[i], g.bias[i], &mut m.bias[i], &mut v.bias[i]);
        }
    }
}

//! Forward and backward passes over a [`Network`].
//!
//! Activations are channel-major `[channels, length]` buffers of `f64`.
//! Convolution is cross-correlation with zero padding; max pooling drops any
//! tail shorter than the window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{LayerParams, Network};
use super::spec::{Activation, LayerKind, LayerSpec, Shape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Inference,
    /// Dropout active, masks drawn from a generator seeded with `dropout_seed`.
    Train {
        dropout_seed: u64,
    },
}

/// Range of output positions `t` for which `t*stride + k - padding` lands
/// inside `[0, in_len)`.
#[inline]
pub(crate) fn valid_range(k: usize, stride: usize, padding: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if padding > k { (padding - k).div_ceil(stride) } else { 0 };
    let hi = if in_len + padding > k {
        ((in_len + padding - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Conv1d pre-activation output.
pub(crate) fn conv1d_forward(x: &[f64], input: Shape, p: &LayerParams, spec: &LayerSpec, out_len: usize) -> Vec<f64> {
    let [units, in_ch, kernel] = p.weight_shape;
    let (s, pad, l_in) = (spec.stride, spec.padding, input.length);
    let mut y = vec![0.0; units * out_len];
    for o in 0..units {
        let yo = &mut y[o * out_len..(o + 1) * out_len];
        yo.fill(p.bias[o]);
        for c in 0..in_ch {
            let xc = &x[c * l_in..(c + 1) * l_in];
            for k in 0..kernel {
                let w = p.weights[(o * in_ch + c) * kernel + k];
                let (lo, hi) = valid_range(k, s, pad, l_in, out_len);
                if s == 1 {
                    let off = lo + k - pad;
                    for (yt, xv) in yo[lo..hi].iter_mut().zip(&xc[off..off + (hi - lo)]) {
                        *yt += w * xv;
                    }
                } else {
                    for (t, yt) in yo.iter_mut().enumerate().take(hi).skip(lo) {
                        *yt += w * xc[t * s + k - pad];
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
fn conv1d_backward(
    x: &[f64],
    input: Shape,
    p: &LayerParams,
    spec: &LayerSpec,
    out_len: usize,
    dy: &[f64],
    grad: &mut LayerParams,
    need_dx: bool,
) -> Vec<f64> {
    let [units, in_ch, kernel] = p.weight_shape;
    let (s, pad, l_in) = (spec.stride, spec.padding, input.length);
    let mut dx = if need_dx { vec![0.0; in_ch * l_in] } else { Vec::new() };
    for o in 0..units {
        let dyo = &dy[o * out_len..(o + 1) * out_len];
        grad.bias[o] += dyo.iter().sum::<f64>();
        for c in 0..in_ch {
            let xc = &x[c * l_in..(c + 1) * l_in];
            for k in 0..kernel {
                let wi = (o * in_ch + c) * kernel + k;
                let w = p.weights[wi];
                let (lo, hi) = valid_range(k, s, pad, l_in, out_len);
                let mut gw = 0.0;
                for t in lo..hi {
                    let xi = t * s + k - pad;
                    gw += dyo[t] * xc[xi];
                    if need_dx {
                        dx[c * l_in + xi] += w * dyo[t];
                    }
                }
                grad.weights[wi] += gw;
            }
        }
    }
    dx
}

/// Max pooling; returns outputs and the argmax input index of each output
/// (first maximum wins).
pub(crate) fn max_pool_forward(x: &[f64], input: Shape, spec: &LayerSpec, out_len: usize) -> (Vec<f64>, Vec<usize>) {
    let (k, s, pad, l_in) = (spec.kernel, spec.stride, spec.padding, input.length);
    let mut y = Vec::with_capacity(input.channels * out_len);
    let mut idx = Vec::with_capacity(input.channels * out_len);
    for c in 0..input.channels {
        for t in 0..out_len {
            let mut best = f64::NEG_INFINITY;
            let mut best_i = usize::MAX;
            for j in 0..k {
                let pos = (t * s + j) as isize - pad as isize;
                if pos < 0 || pos as usize >= l_in {
                    // Padding never wins the max.
                    continue;
                }
                let v = x[c * l_in + pos as usize];
                if v > best || best_i == usize::MAX {
                    best = v;
                    best_i = c * l_in + pos as usize;
                }
            }
            y.push(best);
            idx.push(best_i);
        }
    }
    (y, idx)
}

pub(crate) fn dense_forward(x: &[f64], p: &LayerParams) -> Vec<f64> {
    let [units, n_in, _] = p.weight_shape;
    (0..units)
        .map(|o| {
            let row = &p.weights[o * n_in..(o + 1) * n_in];
            p.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect()
}

pub(crate) fn relu_in_place(y: &mut [f64]) {
    for v in y {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]`, computed via log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_finite(y: &[f64], layer: usize, spec_name: impl FnOnce() -> String) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            layer,
            name: spec_name(),
        })
    }
}

/// Everything a backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input of every layer followed by the logits.
    pub acts: Vec<Vec<f64>>,
    pool_idx: Vec<Vec<usize>>,
    masks: Vec<Option<Vec<f64>>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().expect("trace has at least the input")
    }
}

pub fn forward_trace(net: &Network, input: &[f32], mode: Mode) -> Result<Trace> {
    let spec = net.spec();
    let shapes = net.shapes();
    if input.len() != shapes[0].size() {
        return Err(Error::Shape(format!(
            "input has {} values, network expects {}",
            input.len(),
            shapes[0].size()
        )));
    }
    let mut rng = match mode {
        Mode::Train { dropout_seed } => Some(ChaCha8Rng::seed_from_u64(dropout_seed)),
        Mode::Inference => None,
    };
    let n = spec.layers.len();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    acts.push(input.iter().map(|&v| v as f64).collect());
    let mut pool_idx = vec![Vec::new(); n];
    let mut masks = vec![None; n];
    let mut params = net.params().iter();
    for (i, l) in spec.layers.iter().enumerate() {
        let x = &acts[i];
        let (in_shape, out_shape) = (shapes[i], shapes[i + 1]);
        let mut y = match l.kind {
            LayerKind::Conv1d => {
                let p = params.next().expect("params aligned with spec");
                conv1d_forward(x, in_shape, p, l, out_shape.length)
            }
            LayerKind::MaxPool1d => {
                let (y, idx) = max_pool_forward(x, in_shape, l, out_shape.length);
                pool_idx[i] = idx;
                y
            }
            LayerKind::Flatten => x.clone(),
            LayerKind::Dense | LayerKind::SoftmaxDense => {
                let p = params.next().expect("params aligned with spec");
                dense_forward(x, p)
            }
        };
        if l.activation == Activation::Relu {
            relu_in_place(&mut y);
        }
        if let (Some(rng), true) = (rng.as_mut(), l.dropout_rate > 0.0) {
            let keep = 1.0 - l.dropout_rate as f64;
            let mask: Vec<f64> = (0..y.len())
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            for (v, m) in y.iter_mut().zip(&mask) {
                *v *= m;
            }
            masks[i] = Some(mask);
        }
        check_finite(&y, i, || spec.layer_name(i))?;
        acts.push(y);
    }
    Ok(Trace { acts, pool_idx, masks })
}

/// Parameter gradients laid out like `Network::params`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .params()
                .iter()
                .map(|p| LayerParams {
                    layer: p.layer,
                    weight_shape: p.weight_shape,
                    weights: vec![0.0; p.weights.len()],
                    bias: vec![0.0; p.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v *= s;
            }
        }
    }
}

/// Cross-entropy gradient for one example. Returns the loss and gradients.
#[allow(clippy::needless_range_loop)]
pub fn backward(net: &Network, trace: &Trace, label: usize) -> (f64, Gradients) {
    let spec = net.spec();
    let shapes = net.shapes();
    let logits = trace.logits();
    let loss = cross_entropy(logits, label);
    let mut grads = Gradients::zeros_like(net);

    let mut dy: Vec<f64> = softmax(logits);
    dy[label] -= 1.0;

    let mut param_slot = net.params().len();
    for i in (0..spec.layers.len()).rev() {
        let l = &spec.layers[i];
        let out = &trace.acts[i + 1];
        if let Some(mask) = &trace.masks[i] {
            for (g, m) in dy.iter_mut().zip(mask) {
                *g *= m;
            }
        }
        if l.activation == Activation::Relu {
            for (g, &o) in dy.iter_mut().zip(out) {
                if o <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let x = &trace.acts[i];
        let need_dx = i > 0;
        dy = match l.kind {
            LayerKind::Conv1d => {
                param_slot -= 1;
                let p = &net.params()[param_slot];
                conv1d_backward(
                    x,
                    shapes[i],
                    p,
                    l,
                    shapes[i + 1].length,
                    &dy,
                    &mut grads.layers[param_slot],
                    need_dx,
                )
            }
            LayerKind::MaxPool1d => {
                let mut dx = vec![0.0; x.len()];
                for (g, &src) in dy.iter().zip(&trace.pool_idx[i]) {
                    dx[src] += g;
                }
                dx
            }
            LayerKind::Flatten => dy,
            LayerKind::Dense | LayerKind::SoftmaxDense => {
                param_slot -= 1;
                let p = &net.params()[param_slot];
                let g = &mut grads.layers[param_slot];
                let [units, n_in, _] = p.weight_shape;
                let mut dx = vec![0.0; if need_dx { n_in } else { 0 }];
                for o in 0..units {
                    let d = dy[o];
                    g.bias[o] += d;
                    if d == 0.0 {
                        continue;
                    }
                    let row = &p.weights[o * n_in..(o + 1) * n_in];
                    let grow = &mut g.weights[o * n_in..(o + 1) * n_in];
                    for j in 0..n_in {
                        grow[j] += d * x[j];
                    }
                    if need_dx {
                        for j in 0..n_in {
                            dx[j] += d * row[j];
                        }
                    }
                }
                dx
            }
        };
    }
    (loss, grads)
}

impl Network {
    /// Pre-softmax outputs in inference mode.
    pub fn logits(&self, input: &[f32]) -> Result<Vec<f64>> {
        Ok(forward_trace(self, input, Mode::Inference)?
            .acts
            .pop()
            .unwrap_or_default())
    }

    /// Class probabilities. `inference_mode == false` applies dropout with a
    /// fixed seed of 0; use [`forward_trace`] to control the seed.
    pub fn forward(&self, input: &[f32], inference_mode: bool) -> Result<Vec<f64>> {
        let mode = if inference_mode {
            Mode::Inference
        } else {
            Mode::Train { dropout_seed: 0 }
        };
        let trace = forward_trace(self, input, mode)?;
        Ok(softmax(trace.logits()))
    }

    pub fn predict(&self, input: &[f32]) -> Result<usize> {
        Ok(argmax(&self.logits(input)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::spec::{default_ecgnet_spec, NetworkSpec};

    #[test]
    fn valid_range_matches_bruteforce() {
        for &(k, s, p, l_in) in &[
            (3, 1, 1, 10),
            (16, 2, 7, 40),
            (12, 2, 5, 13),
            (1, 1, 0, 5),
            (5, 3, 4, 7),
        ] {
            for kk in 0..k {
                let out = (l_in + 2 * p - k) / s + 1;
                let brute: Vec<usize> = (0..out)
                    .filter(|&t| {
                        let pos = (t * s + kk) as isize - p as isize;
                        pos >= 0 && (pos as usize) < l_in
                    })
                    .collect();
                let (lo, hi) = valid_range(kk, s, p, l_in, out);
                assert_eq!((lo..hi).collect::<Vec<_>>(), brute, "k={k} s={s} p={p} kk={kk}");
            }
        }
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let spec = LayerSpec::conv(1, 1, 1, 0);
        let p = LayerParams {
            layer: 0,
            weight_shape: [1, 1, 1],
            weights: vec![1.0],
            bias: vec![0.0],
        };
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let shape = Shape {
            channels: 1,
            length: 20,
        };
        assert_eq!(conv1d_forward(&x, shape, &p, &spec, 20), x);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let net = Network::init(default_ecgnet_spec(), 2).unwrap();
        let input: Vec<f32> = (0..3600).map(|i| ((i as f32) * 0.05).sin()).collect();
        let p = net.forward(&input, true).unwrap();
        assert_eq!(p.len(), 17);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(p, net.forward(&input, true).unwrap());
    }

    #[test]
    fn zero_network_is_uniform() {
        let net = Network::zeroed(default_ecgnet_spec()).unwrap();
        let p = net.forward(&vec![0.0; 3600], true).unwrap();
        for v in p {
            assert!((v - 1.0 / 17.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_input_length_is_shape_error() {
        let net = Network::zeroed(default_ecgnet_spec()).unwrap();
        assert!(matches!(net.logits(&[0.0; 10]), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_names_layer() {
        let mut net = Network::init(default_ecgnet_spec(), 2).unwrap();
        net.params_mut()[0].bias[0] = f64::INFINITY;
        let err = net.logits(&vec![0.0; 3600]).unwrap_err();
        assert!(
            matches!(err, Error::NonFinite { layer: 0, ref name } if name == "Conv1D_1"),
            "{err}"
        );
    }

    #[test]
    fn pool_drops_tail() {
        let spec = LayerSpec::pool(2, 2);
        let x = [1.0, 3.0, 2.0, 0.0, 9.0];
        let (y, idx) = max_pool_forward(&x, Shape { channels: 1, length: 5 }, &spec, 2);
        assert_eq!(y, [3.0, 2.0]);
        assert_eq!(idx, [1, 2]);
    }

    #[test]
    fn cross_entropy_matches_softmax() {
        let z = [0.3, -1.2, 2.5];
        let p = softmax(&z);
        assert!((cross_entropy(&z, 2) + p[2].ln()).abs() < 1e-12);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    /// Two-channel toy: permuting conv output channels together with the
    /// next layer's input columns leaves the logits unchanged.
    #[test]
    fn channel_permutation_equivariance() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::conv(3, 2, 1, 1),
                LayerSpec::pool(2, 2),
                LayerSpec::flatten(),
                LayerSpec::softmax(3),
            ],
            input_length: 8,
            input_channels: 1,
            class_count: 3,
        };
        let net = Network::init(spec, 4).unwrap();
        let mut perm = net.clone();
        {
            let p = perm.params_mut();
            let conv = &mut p[0];
            let (a, b) = conv.weights.split_at_mut(3);
            a.swap_with_slice(b);
            conv.bias.swap(0, 1);
            // flatten width 8: channel 0 -> cols 0..4, channel 1 -> cols 4..8
            let dense = &mut p[1];
            for o in 0..3 {
                let row = &mut dense.weights[o * 8..(o + 1) * 8];
                let (a, b) = row.split_at_mut(4);
                a.swap_with_slice(b);
            }
        }
        let x: Vec<f32> = vec![0.3, -0.1, 0.9, 0.4, -0.7, 0.2, 0.05, 1.1];
        let l0 = net.logits(&x).unwrap();
        let l1 = perm.logits(&x).unwrap();
        for (a, b) in l0.iter().zip(&l1) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

//! Inference directly on packed binary bases.
//!
//! A group's contribution to a dot product is
//! `sum_i alpha_i * (beta_i . x)` with `beta_i . x = 2 * sum_{bit=1} x_j - sum x_j`,
//! so no dequantized weight is ever materialized. All accumulation is `f64`.

use rayon::prelude::*;

use crate::alq::QuantGroup;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::format::QuantModel;
use crate::net::ops::{check_finite, max_pool_forward, relu_in_place};
use crate::net::{argmax, softmax, Activation, LayerKind, Network, Shape};

/// `sum_i alpha_i * (beta_i[start..start+x.len()] . x)`.
pub fn segment_dot(q: &QuantGroup, start: usize, x: &[f64]) -> f64 {
    assert!(start + x.len() <= q.n(), "segment outside group");
    let total: f64 = x.iter().sum();
    let mut acc = 0.0;
    for (i, &alpha) in q.coords().iter().enumerate() {
        let col = q.column(i);
        let mut pos = 0.0;
        for (j, &v) in x.iter().enumerate() {
            let b = start + j;
            // All-ones when the bit is set, zero otherwise.
            let mask = (((col[b >> 3] >> (b & 7)) & 1) as u64).wrapping_neg();
            pos += f64::from_bits(v.to_bits() & mask);
        }
        acc += alpha * (2.0 * pos - total);
    }
    acc
}

/// Dot product of a whole group with `x`.
pub fn group_dot(q: &QuantGroup, x: &[f64]) -> Result<f64> {
    if x.len() != q.n() {
        return Err(Error::Shape(format!(
            "group of {} weights against {} inputs",
            q.n(),
            x.len()
        )));
    }
    Ok(segment_dot(q, 0, x))
}

/// Full-precision network whose parameters are the reconstructed weights.
pub fn dequantize(model: &QuantModel) -> Result<Network> {
    let mut net = Network::zeroed(model.spec.clone())?;
    for l in &model.layers {
        net.unflatten_params(l.layer_index, &l.reconstruct())?;
    }
    Ok(net)
}

/// Part of a group that multiplies one contiguous run of one output's
/// weight row.
#[derive(Debug, Clone, Copy)]
struct Segment {
    group: usize,
    start: usize,
    len: usize,
    out: usize,
    /// Offset into the row (`c * kernel + k`).
    src: usize,
}

#[derive(Debug, Clone)]
struct LayerPlan {
    quant: usize,
    units: usize,
    row: usize,
    segments: Vec<Segment>,
    /// Reconstructed from the bases as dot products with a constant 1.
    bias: Vec<f64>,
}

fn plan_layer(quant: usize, groups: &[QuantGroup], weight_shape: [usize; 3]) -> LayerPlan {
    let [units, in_ch, kernel] = weight_shape;
    let row = in_ch * kernel;
    let n_weights = units * row;
    let mut segments = Vec::new();
    let mut bias = vec![0.0; units];
    let mut flat = 0;
    for (gi, g) in groups.iter().enumerate() {
        let mut j = 0;
        while j < g.n() {
            let f = flat + j;
            if f < n_weights {
                let (out, src) = (f / row, f % row);
                let len = (row - src).min(g.n() - j);
                if g.bitwidth() > 0 {
                    segments.push(Segment {
                        group: gi,
                        start: j,
                        len,
                        out,
                        src,
                    });
                }
                j += len;
            } else {
                bias[f - n_weights] = segment_dot(g, j, &[1.0]);
                j += 1;
            }
        }
        flat += g.n();
    }
    LayerPlan {
        quant,
        units,
        row,
        segments,
        bias,
    }
}

/// A quantized model prepared for repeated inference.
#[derive(Debug, Clone)]
pub struct QuantEngine<'m> {
    model: &'m QuantModel,
    shapes: Vec<Shape>,
    plans: Vec<Option<LayerPlan>>,
}

impl<'m> QuantEngine<'m> {
    pub fn new(model: &'m QuantModel) -> Result<Self> {
        model.validate()?;
        let spec = &model.spec;
        let shapes = spec.shapes()?;
        let mut plans = vec![None; spec.layers.len()];
        for (qi, l) in model.layers.iter().enumerate() {
            let (shape, _) = spec.param_shape(l.layer_index)?;
            plans[l.layer_index] = Some(plan_layer(qi, &l.groups, shape));
        }
        Ok(Self { model, shapes, plans })
    }

    pub fn model(&self) -> &QuantModel {
        self.model
    }

    fn apply(&self, plan: &LayerPlan, patch: &[f64], y: &mut [f64], stride_out: usize, t: usize) {
        let groups = &self.model.layers[plan.quant].groups;
        for s in &plan.segments {
            y[s.out * stride_out + t] += segment_dot(&groups[s.group], s.start, &patch[s.src..s.src + s.len]);
        }
    }

    /// Pre-softmax outputs.
    pub fn logits(&self, input: &[f32]) -> Result<Vec<f64>> {
        let spec = &self.model.spec;
        if input.len() != self.shapes[0].size() {
            return Err(Error::Shape(format!(
                "input has {} values, network expects {}",
                input.len(),
                self.shapes[0].size()
            )));
        }
        let mut x: Vec<f64> = input.iter().map(|&v| v as f64).collect();
        for (i, l) in spec.layers.iter().enumerate() {
            let (in_shape, out_shape) = (self.shapes[i], self.shapes[i + 1]);
            let mut y = match (l.kind, &self.plans[i]) {
                (LayerKind::Conv1d, Some(plan)) => {
                    let out_len = out_shape.length;
                    let mut y = vec![0.0; plan.units * out_len];
                    for (o, b) in plan.bias.iter().enumerate() {
                        y[o * out_len..(o + 1) * out_len].fill(*b);
                    }
                    let mut patch = vec![0.0; plan.row];
                    let (k, s, p, l_in) = (l.kernel, l.stride, l.padding, in_shape.length);
                    for t in 0..out_len {
                        for c in 0..in_shape.channels {
                            for j in 0..k {
                                let pos = (t * s + j) as isize - p as isize;
                                patch[c * k + j] = if pos >= 0 && (pos as usize) < l_in {
                                    x[c * l_in + pos as usize]
                                } else {
                                    0.0
                                };
                            }
                        }
                        self.apply(plan, &patch, &mut y, out_len, t);
                    }
                    y
                }
                (LayerKind::Dense | LayerKind::SoftmaxDense, Some(plan)) => {
                    let mut y = plan.bias.clone();
                    self.apply(plan, &x, &mut y, 1, 0);
                    y
                }
                (LayerKind::MaxPool1d, _) => max_pool_forward(&x, in_shape, l, out_shape.length).0,
                (LayerKind::Flatten, _) => x,
                (kind, None) => return Err(Error::Shape(format!("no quantized parameters for {kind:?} layer {i}"))),
            };
            if l.activation == Activation::Relu {
                relu_in_place(&mut y);
            }
            check_finite(&y, i, || spec.layer_name(i))?;
            x = y;
        }
        Ok(x)
    }

    /// Class probabilities.
    pub fn forward(&self, input: &[f32]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(input)?))
    }

    pub fn predict(&self, input: &[f32]) -> Result<usize> {
        Ok(argmax(&self.logits(input)?))
    }

    /// Probabilities and predicted class of every record, in dataset order.
    pub fn predict_batch(&self, data: &Dataset) -> Result<Vec<(Vec<f64>, usize)>> {
        data.records()
            .par_iter()
            .map(|r| {
                let p = self.forward(r.samples())?;
                let c = argmax(&p);
                Ok((p, c))
            })
            .collect()
    }
}

/// Class probabilities of one record under a quantized model.
pub fn qforward(model: &QuantModel, input: &[f32]) -> Result<Vec<f64>> {
    QuantEngine::new(model)?.forward(input)
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{NetworkSpec, Shape};
use crate::error::{Error, Result};

/// Weights and bias of one parameterized layer.
///
/// Weights are stored row-major as `[units, in_channels, kernel]`; dense
/// layers use `kernel == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Index into `NetworkSpec::layers`.
    pub layer: usize,
    pub weight_shape: [usize; 3],
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weights (row-major) followed by biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.weights);
        v.extend_from_slice(&self.bias);
        v
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Shape(format!(
                "layer {}: expected {} parameters, got {}",
                self.layer,
                self.len(),
                flat.len()
            )));
        }
        let (w, b) = flat.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<Shape>,
    params: Vec<LayerParams>,
}

impl Network {
    /// All parameters zero.
    pub fn zeroed(spec: NetworkSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        let params = spec
            .param_layer_indices()
            .into_iter()
            .map(|layer| {
                let (weight_shape, bias_len) = spec.param_shape(layer)?;
                Ok(LayerParams {
                    layer,
                    weight_shape,
                    weights: vec![0.0; weight_shape.iter().product()],
                    bias: vec![0.0; bias_len],
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { spec, shapes, params })
    }

    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut net.params {
            let fan_in = (p.weight_shape[1] * p.weight_shape[2]) as f64;
            let bound = 1.0 / fan_in.sqrt();
            for w in p.weights.iter_mut().chain(p.bias.iter_mut()) {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Input shape of every layer followed by the output shape.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    /// Parameters of spec layer `layer`, if it is parameterized.
    pub fn layer_params(&self, layer: usize) -> Result<&LayerParams> {
        self.params
            .iter()
            .find(|p| p.layer == layer)
            .ok_or_else(|| Error::Shape(format!("layer {layer} has no parameters")))
    }

    fn layer_params_mut(&mut self, layer: usize) -> Result<&mut LayerParams> {
        self.params
            .iter_mut()
            .find(|p| p.layer == layer)
            .ok_or_else(|| Error::Shape(format!("layer {layer} has no parameters")))
    }

    pub fn flatten_params(&self, layer: usize) -> Result<Vec<f64>> {
        Ok(self.layer_params(layer)?.flatten())
    }

    pub fn unflatten_params(&mut self, layer: usize, flat: &[f64]) -> Result<()> {
        self.layer_params_mut(layer)?.assign_flat(flat)
    }

    /// Per-spec-layer parameter counts and the total.
    pub fn param_count(&self) -> (Vec<usize>, usize) {
        let mut counts = vec![0; self.spec.layers.len()];
        for p in &self.params {
            counts[p.layer] = p.len();
        }
        let total = counts.iter().sum();
        (counts, total)
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.weights.iter().chain(&p.bias).all(|v| v.is_finite()))
    }
}

use serde::{Deserialize, Serialize};

use crate::data::{CLASS_COUNT, SAMPLES_PER_RECORD};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv1d,
    MaxPool1d,
    Flatten,
    Dense,
    /// Dense layer whose outputs are the logits fed to softmax.
    SoftmaxDense,
}

impl LayerKind {
    pub fn is_parameterized(self) -> bool {
        matches!(self, LayerKind::Conv1d | LayerKind::Dense | LayerKind::SoftmaxDense)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    /// Output channels for conv, output width for dense layers.
    pub units: usize,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
    pub dropout_rate: f32,
}

impl LayerSpec {
    pub fn conv(kernel: usize, units: usize, stride: usize, padding: usize) -> Self {
        Self {
            kind: LayerKind::Conv1d,
            kernel,
            units,
            stride,
            padding,
            activation: Activation::Relu,
            dropout_rate: 0.0,
        }
    }

    pub fn pool(kernel: usize, stride: usize) -> Self {
        Self {
            kind: LayerKind::MaxPool1d,
            kernel,
            units: 0,
            stride,
            padding: 0,
            activation: Activation::None,
            dropout_rate: 0.0,
        }
    }

    pub fn flatten() -> Self {
        Self {
            kind: LayerKind::Flatten,
            kernel: 1,
            units: 0,
            stride: 1,
            padding: 0,
            activation: Activation::None,
            dropout_rate: 0.0,
        }
    }

    pub fn dense(units: usize, dropout_rate: f32) -> Self {
        Self {
            kind: LayerKind::Dense,
            kernel: 1,
            units,
            stride: 1,
            padding: 0,
            activation: Activation::Relu,
            dropout_rate,
        }
    }

    pub fn softmax(units: usize) -> Self {
        Self {
            kind: LayerKind::SoftmaxDense,
            kernel: 1,
            units,
            stride: 1,
            padding: 0,
            activation: Activation::None,
            dropout_rate: 0.0,
        }
    }
}

/// Activation shape between layers: channels x length. Dense layers see
/// `channels * length` inputs and produce `(units, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub length: usize,
}

impl Shape {
    pub fn size(self) -> usize {
        self.channels * self.length
    }
}

/// Output length of a conv/pool window: `floor((len + 2p - k) / s) + 1`.
pub fn out_length(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Shape("kernel and stride must be >= 1".into()));
    }
    let padded = len + 2 * padding;
    if padded < kernel {
        return Err(Error::Shape(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub input_length: usize,
    pub input_channels: usize,
    pub class_count: usize,
}

impl NetworkSpec {
    /// Validates the stack and returns the input shape of every layer plus
    /// the final output shape (`layers.len() + 1` entries).
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shape = Shape {
            channels: self.input_channels,
            length: self.input_length,
        };
        if shape.size() == 0 {
            return Err(Error::Shape("empty input".into()));
        }
        let mut shapes = vec![shape];
        for (i, l) in self.layers.iter().enumerate() {
            if l.kind.is_parameterized() && l.units == 0 {
                return Err(Error::Shape(format!("layer {i}: units must be >= 1")));
            }
            if !(0.0..1.0).contains(&l.dropout_rate) {
                return Err(Error::Shape(format!("layer {i}: dropout must be in [0,1)")));
            }
            shape = match l.kind {
                LayerKind::Conv1d => Shape {
                    channels: l.units,
                    length: out_length(shape.length, l.kernel, l.stride, l.padding)
                        .map_err(|e| Error::Shape(format!("layer {i}: {e}")))?,
                },
                LayerKind::MaxPool1d => Shape {
                    channels: shape.channels,
                    length: out_length(shape.length, l.kernel, l.stride, l.padding)
                        .map_err(|e| Error::Shape(format!("layer {i}: {e}")))?,
                },
                LayerKind::Flatten => Shape {
                    channels: shape.size(),
                    length: 1,
                },
                LayerKind::Dense | LayerKind::SoftmaxDense => Shape {
                    channels: l.units,
                    length: 1,
                },
            };
            shapes.push(shape);
        }
        if shape.size() != self.class_count {
            return Err(Error::Shape(format!(
                "final layer outputs {} values, expected {}",
                shape.size(),
                self.class_count
            )));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    /// Indices (into `layers`) of layers that carry weights.
    pub fn param_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind.is_parameterized())
            .map(|(i, _)| i)
            .collect()
    }

    /// `(weight_shape, bias_len)` for a parameterized layer, where the weight
    /// shape is `[units, in_channels, kernel]` (dense layers use kernel 1 and
    /// treat the flattened input as channels).
    pub fn param_shape(&self, layer: usize) -> Result<([usize; 3], usize)> {
        let l = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::Shape(format!("no layer {layer}")))?;
        if !l.kind.is_parameterized() {
            return Err(Error::Shape(format!("layer {layer} has no parameters")));
        }
        let input = self.shapes()?[layer];
        Ok(match l.kind {
            LayerKind::Conv1d => ([l.units, input.channels, l.kernel], l.units),
            _ => ([l.units, input.size(), 1], l.units),
        })
    }

    pub fn param_count(&self, layer: usize) -> Result<usize> {
        let (w, b) = self.param_shape(layer)?;
        Ok(w.iter().product::<usize>() + b)
    }

    /// Per-layer parameter counts (zero for pool/flatten) and their total.
    pub fn param_counts(&self) -> Result<(Vec<usize>, usize)> {
        let counts: Vec<usize> = (0..self.layers.len())
            .map(|i| {
                if self.layers[i].kind.is_parameterized() {
                    self.param_count(i)
                } else {
                    Ok(0)
                }
            })
            .collect::<Result<_>>()?;
        let total = counts.iter().sum();
        Ok((counts, total))
    }

    /// Display name of a layer: `Conv1D_<n>`, `Dense` (or `Dense_<n>` when
    /// there are several), `Softmax`, `MaxPooling1D_<n>`, `Flatten`.
    pub fn layer_name(&self, layer: usize) -> String {
        let kind = self.layers[layer].kind;
        let ordinal = self.layers[..=layer].iter().filter(|l| l.kind == kind).count();
        let total = self.layers.iter().filter(|l| l.kind == kind).count();
        let numbered = |base: &str| {
            if total == 1 {
                base.to_string()
            } else {
                format!("{base}_{ordinal}")
            }
        };
        match kind {
            LayerKind::Conv1d => format!("Conv1D_{ordinal}"),
            LayerKind::MaxPool1d => format!("MaxPooling1D_{ordinal}"),
            LayerKind::Flatten => numbered("Flatten"),
            LayerKind::Dense => numbered("Dense"),
            LayerKind::SoftmaxDense => numbered("Softmax"),
        }
    }
}

/// The 17-layer ECG classifier: seven conv/ReLU/max-pool blocks, flatten,
/// a 216 -> 64 ReLU dense layer with dropout 0.1 and a 64 -> 17 softmax layer.
pub fn default_ecgnet_spec() -> NetworkSpec {
    NetworkSpec {
        layers: vec![
            LayerSpec::conv(16, 8, 2, 7),
            LayerSpec::pool(8, 4),
            LayerSpec::conv(12, 12, 2, 5),
            LayerSpec::pool(4, 2),
            LayerSpec::conv(9, 32, 1, 4),
            LayerSpec::pool(5, 2),
            LayerSpec::conv(7, 64, 1, 3),
            LayerSpec::pool(4, 2),
            LayerSpec::conv(5, 64, 1, 2),
            LayerSpec::pool(2, 2),
            LayerSpec::conv(3, 64, 1, 1),
            LayerSpec::pool(2, 2),
            LayerSpec::conv(3, 72, 1, 1),
            LayerSpec::pool(2, 2),
            LayerSpec::flatten(),
            LayerSpec::dense(64, 0.1),
            LayerSpec::softmax(CLASS_COUNT),
        ],
        input_length: SAMPLES_PER_RECORD,
        input_channels: 1,
        class_count: CLASS_COUNT,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_length_examples() {
        assert_eq!(out_length(3600, 16, 2, 7).unwrap(), 1800);
        assert_eq!(out_length(1800, 8, 4, 0).unwrap(), 449);
        assert_eq!(out_length(123, 1, 1, 0).unwrap(), 123);
        assert!(matches!(out_length(3, 8, 1, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn default_spec_layout() {
        let spec = default_ecgnet_spec();
        let count = |k| spec.layers.iter().filter(|l| l.kind == k).count();
        assert_eq!(count(LayerKind::Conv1d), 7);
        assert_eq!(count(LayerKind::MaxPool1d), 7);
        assert_eq!(count(LayerKind::Flatten), 1);
        assert_eq!(count(LayerKind::Dense) + count(LayerKind::SoftmaxDense), 2);
        assert_eq!(spec.layers.len(), 17);
    }

    #[test]
    fn default_spec_length_propagation() {
        let spec = default_ecgnet_spec();
        let shapes = spec.shapes().unwrap();
        let lengths: Vec<usize> = shapes[1..15].iter().map(|s| s.length).collect();
        assert_eq!(lengths, [1800, 449, 224, 111, 111, 54, 54, 26, 26, 13, 13, 6, 6, 3]);
        assert_eq!(shapes[15].channels, 216);
        assert_eq!(shapes[16].channels, 64);
        assert_eq!(shapes[17].size(), 17);
    }

    #[test]
    fn default_spec_param_counts() {
        let spec = default_ecgnet_spec();
        let (counts, total) = spec.param_counts().unwrap();
        let nonzero: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
        assert_eq!(nonzero, [136, 1164, 3488, 14400, 20544, 12352, 13896, 13888, 1105]);
        assert_eq!(total, 80_973);
    }

    #[test]
    fn layer_names() {
        let spec = default_ecgnet_spec();
        let names: Vec<String> = spec
            .param_layer_indices()
            .into_iter()
            .map(|i| spec.layer_name(i))
            .collect();
        assert_eq!(
            names,
            ["Conv1D_1", "Conv1D_2", "Conv1D_3", "Conv1D_4", "Conv1D_5", "Conv1D_6", "Conv1D_7", "Dense", "Softmax"]
        );
    }

    #[test]
    fn wrong_final_width_is_rejected() {
        let mut spec = default_ecgnet_spec();
        spec.layers[16].units = 5;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn param_shape_rejects_pool() {
        let spec = default_ecgnet_spec();
        assert!(spec.param_shape(1).is_err());
        assert_eq!(spec.param_shape(0).unwrap(), ([8, 1, 16], 8));
    }
}

use crate::alq::QuantLayer;
use crate::error::{Error, Result};
use crate::net::NetworkSpec;

/// Provenance stored alongside a quantized model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModelMeta {
    pub seed: u64,
    /// SHA-256 of the quantizer config that produced the model.
    pub config_digest: [u8; 32],
}

/// A network whose parameterized layers are stored as binary bases and
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantModel {
    pub spec: NetworkSpec,
    pub group_size: usize,
    /// One entry per parameterized layer, in spec order.
    pub layers: Vec<QuantLayer>,
    pub meta: ModelMeta,
}

impl QuantModel {
    pub fn new(spec: NetworkSpec, group_size: usize, layers: Vec<QuantLayer>, meta: ModelMeta) -> Result<Self> {
        let model = Self {
            spec,
            group_size,
            layers,
            meta,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let expected = self.spec.param_layer_indices();
        if expected.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} quantized layers for {} parameterized layers",
                self.layers.len(),
                expected.len()
            )));
        }
        for (l, &idx) in self.layers.iter().zip(&expected) {
            if l.layer_index != idx {
                return Err(Error::Shape(format!(
                    "layer {} out of order (expected {idx})",
                    l.layer_index
                )));
            }
            if l.group_size != self.group_size {
                return Err(Error::Shape(format!(
                    "layer {idx}: group size {} != {}",
                    l.group_size, self.group_size
                )));
            }
            let count = self.spec.param_count(idx)?;
            if l.param_count != count {
                return Err(Error::Shape(format!(
                    "layer {idx}: {} parameters, spec has {count}",
                    l.param_count
                )));
            }
            l.check()?;
            for (gi, g) in l.groups.iter().enumerate() {
                if g.bitwidth() > u8::MAX as usize {
                    return Err(Error::Shape(format!("layer {idx} group {gi}: bitwidth above 255")));
                }
                if !g.is_canonical() {
                    return Err(Error::Shape(format!("layer {idx} group {gi}: not in canonical form")));
                }
            }
        }
        Ok(())
    }

    pub fn layer_name(&self, i: usize) -> String {
        self.spec.layer_name(self.layers[i].layer_index)
    }

    pub fn total_params(&self) -> usize {
        self.layers.iter().map(|l| l.param_count).sum()
    }

    pub fn total_base_bits(&self) -> usize {
        self.layers.iter().map(QuantLayer::base_bits).sum()
    }

    /// Weight-weighted average bitwidth over the whole network.
    pub fn average_bitwidth(&self) -> f64 {
        crate::alq::network_bitwidth(&self.layers)
    }
}

use super::group::{init_decompose, partition_groups, QuantGroup, WeightGroup};
use crate::error::{Error, Result};

/// The quantized groups of one parameterized layer, in flattened order.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayer {
    /// Index into `NetworkSpec::layers`.
    pub layer_index: usize,
    pub group_size: usize,
    pub param_count: usize,
    pub groups: Vec<QuantGroup>,
}

impl QuantLayer {
    pub fn new(layer_index: usize, group_size: usize, groups: Vec<QuantGroup>) -> Result<Self> {
        if group_size == 0 {
            return Err(Error::InvalidParam("group size must be >= 1".into()));
        }
        let param_count = groups.iter().map(QuantGroup::n).sum();
        let layer = Self {
            layer_index,
            group_size,
            param_count,
            groups,
        };
        layer.check()?;
        Ok(layer)
    }

    /// Partitions `flat` and decomposes every group greedily at `i_max` bits.
    pub fn init(flat: &[f64], layer_index: usize, group_size: usize, i_max: usize) -> Result<(Self, Vec<WeightGroup>)> {
        let groups = partition_groups(flat, group_size, layer_index)?;
        let quant = groups.iter().map(|g| init_decompose(&g.values, i_max)).collect();
        Ok((Self::new(layer_index, group_size, quant)?, groups))
    }

    /// Every group has size `group_size` except possibly the last.
    pub fn check(&self) -> Result<()> {
        let total: usize = self.groups.iter().map(QuantGroup::n).sum();
        if total != self.param_count {
            return Err(Error::Shape(format!(
                "layer {}: groups cover {total} parameters, expected {}",
                self.layer_index, self.param_count
            )));
        }
        let k = self.groups.len();
        for (i, g) in self.groups.iter().enumerate() {
            let ok = if i + 1 < k {
                g.n() == self.group_size
            } else {
                g.n() >= 1 && g.n() <= self.group_size
            };
            if !ok {
                return Err(Error::Shape(format!(
                    "layer {}: group {i} has size {} with group size {}",
                    self.layer_index,
                    g.n(),
                    self.group_size
                )));
            }
        }
        Ok(())
    }

    /// Concatenated `B_k * alpha_k` over all groups.
    pub fn reconstruct(&self) -> Vec<f64> {
        self.groups.iter().flat_map(QuantGroup::reconstruct).collect()
    }

    /// `sum_k n_k * I_k`.
    pub fn base_bits(&self) -> usize {
        self.groups.iter().map(|g| g.n() * g.bitwidth()).sum()
    }

    pub fn coordinate_count(&self) -> usize {
        self.groups.iter().map(QuantGroup::bitwidth).sum()
    }

    /// `(group_mean, weight_weighted)`: `(1/m) sum I_k` and
    /// `sum n_k I_k / sum n_k`.
    pub fn average_bitwidth(&self) -> (f64, f64) {
        average_bitwidth(&self.groups)
    }
}

pub fn average_bitwidth(groups: &[QuantGroup]) -> (f64, f64) {
    if groups.is_empty() {
        return (0.0, 0.0);
    }
    let m = groups.len() as f64;
    let group_mean = groups.iter().map(|g| g.bitwidth() as f64).sum::<f64>() / m;
    let bits: usize = groups.iter().map(|g| g.n() * g.bitwidth()).sum();
    let params: usize = groups.iter().map(QuantGroup::n).sum();
    (group_mean, bits as f64 / params as f64)
}

/// Weight-weighted average bitwidth over several layers.
pub fn network_bitwidth(layers: &[QuantLayer]) -> f64 {
    let bits: usize = layers.iter().map(QuantLayer::base_bits).sum();
    let params: usize = layers.iter().map(|l| l.param_count).sum();
    if params == 0 {
        0.0
    } else {
        bits as f64 / params as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group_with_bits(n: usize, bits: usize) -> QuantGroup {
        let coords: Vec<f64> = (0..bits).map(|i| 1.0 / (i + 1) as f64).collect();
        let cols: Vec<Vec<bool>> = (0..bits).map(|i| (0..n).map(|j| (j >> i) & 1 == 0).collect()).collect();
        let g = QuantGroup::from_columns(n, &coords, &cols).unwrap();
        assert_eq!(g.bitwidth(), bits);
        g
    }

    #[test]
    fn group_mean_literal() {
        let groups: Vec<QuantGroup> = [2, 1, 1, 0].iter().map(|&b| group_with_bits(16, b)).collect();
        let (mean, weighted) = average_bitwidth(&groups);
        assert_eq!(mean, 1.0);
        assert_eq!(weighted, 1.0);
    }

    #[test]
    fn weight_weighted_with_tail() {
        let groups = vec![group_with_bits(16, 1), group_with_bits(8, 2)];
        let (mean, weighted) = average_bitwidth(&groups);
        assert_eq!(mean, 1.5);
        assert!((weighted - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn init_covers_layer() {
        let flat: Vec<f64> = (0..136).map(|i| (i as f64 * 0.7).sin()).collect();
        let (layer, groups) = QuantLayer::init(&flat, 0, 16, 2).unwrap();
        assert_eq!(layer.groups.len(), 9);
        assert_eq!(layer.param_count, 136);
        let concat: Vec<f64> = groups.iter().flat_map(|g| g.values.clone()).collect();
        assert_eq!(concat, flat);
        assert!(layer.base_bits() <= 272);
    }

    #[test]
    fn check_rejects_short_middle_group() {
        let groups = vec![group_with_bits(8, 1), group_with_bits(16, 1)];
        assert!(QuantLayer::new(0, 16, groups).is_err());
    }
}

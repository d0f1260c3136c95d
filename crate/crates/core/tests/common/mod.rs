//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use alq_core::alq::QuantGroup;
use alq_core::format::{ModelMeta, QuantModel};
use alq_core::net::{LayerSpec, NetworkSpec};
use alq_core::QuantLayer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 39 parameters over full-length records: strided conv, one wide pool and
/// a 3-way softmax.
pub fn tiny_spec() -> NetworkSpec {
    NetworkSpec {
        layers: vec![
            LayerSpec::conv(8, 2, 8, 0),
            LayerSpec::pool(150, 150),
            LayerSpec::flatten(),
            LayerSpec::softmax(3),
        ],
        input_length: 3600,
        input_channels: 1,
        class_count: 3,
    }
}

/// Small network with every layer kind, for fast end-to-end checks.
pub fn small_spec() -> NetworkSpec {
    NetworkSpec {
        layers: vec![
            LayerSpec::conv(16, 4, 4, 6),
            LayerSpec::pool(8, 4),
            LayerSpec::conv(5, 6, 2, 2),
            LayerSpec::pool(4, 4),
            LayerSpec::flatten(),
            LayerSpec::dense(12, 0.1),
            LayerSpec::softmax(17),
        ],
        input_length: 3600,
        input_channels: 1,
        class_count: 17,
    }
}

/// Random canonical group: up to `max_bits` columns with `f32` coordinates.
pub fn random_group(rng: &mut ChaCha8Rng, n: usize, max_bits: usize) -> QuantGroup {
    let bits = rng.random_range(0..=max_bits);
    let coords: Vec<f64> = (0..bits).map(|_| rng.random_range(1e-4f32..4.0) as f64).collect();
    let columns: Vec<Vec<bool>> = (0..bits)
        .map(|_| (0..n).map(|_| rng.random::<bool>()).collect())
        .collect();
    let mut g = QuantGroup::from_columns(n, &coords, &columns).unwrap();
    g.round_coords_to_f32();
    g
}

/// Random valid model over one of a few small specs.
pub fn random_model(seed: u64) -> QuantModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = match rng.random_range(0..3) {
        0 => tiny_spec(),
        1 => small_spec(),
        _ => NetworkSpec {
            layers: vec![LayerSpec::flatten(), LayerSpec::dense(3, 0.0), LayerSpec::softmax(2)],
            input_length: rng.random_range(1..40),
            input_channels: rng.random_range(1..3),
            class_count: 2,
        },
    };
    let group_size = rng.random_range(1..=24);
    let max_bits = rng.random_range(0..=6);
    let layers = spec
        .param_layer_indices()
        .into_iter()
        .map(|idx| {
            let count = spec.param_count(idx).unwrap();
            let mut groups = Vec::new();
            let mut left = count;
            while left > 0 {
                let n = left.min(group_size);
                groups.push(random_group(&mut rng, n, max_bits));
                left -= n;
            }
            QuantLayer::new(idx, group_size, groups).unwrap()
        })
        .collect();
    let mut digest = [0u8; 32];
    rng.fill(&mut digest);
    let meta = ModelMeta {
        seed: rng.random(),
        config_digest: digest,
    };
    QuantModel::new(spec, group_size, layers, meta).unwrap()
}

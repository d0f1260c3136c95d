//! Adaptive loss-aware multi-bit quantization.

pub mod config;
pub mod group;
pub mod layer;
pub mod pipeline;
pub mod prune;

pub use config::{AlqConfig, IMaxMap, PruneTarget, Scorer};
pub use group::{init_decompose, optimize_bases, optimize_coords, partition_groups, QuantGroup, WeightGroup};
pub use layer::{average_bitwidth, network_bitwidth, QuantLayer};
pub use pipeline::{alq_pipeline, refine, uniform_baseline, AlqReport, AlqSession};
pub use prune::{dequantized_network, prune_coordinates, score_coordinates, CoordinateScore, PruneOutcome};

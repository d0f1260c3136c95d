//! Adaptive loss-aware multi-bit quantization for a 1-D CNN ECG classifier.
//!
//! * [`data`]: record ingest, normalization, splits and synthetic data.
//! * [`net`]: the classifier, its training loop and checkpoints.
//! * [`alq`]: group decomposition, pruning in the alpha domain, refinement.
//! * [`format`]: the bit-packed container and memory accounting.
//! * [`infer`]: inference on packed bases.
//! * [`eval`]: metrics, sweeps and report files.

pub mod alq;
mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod format;
pub mod infer;
pub mod net;

pub use alq::{alq_pipeline, AlqConfig, AlqReport, PruneTarget, QuantGroup, QuantLayer, Scorer};
pub use data::{Dataset, EcgRecord, CLASS_COUNT, SAMPLES_PER_RECORD};
pub use error::{Error, Result};
pub use eval::{evaluate, ConfusionMatrix, MetricsReport, SweepPoint};
pub use format::{MemoryReport, QuantModel};
pub use infer::{dequantize, QuantEngine};
pub use net::{default_ecgnet_spec, Network, NetworkSpec, TrainConfig};

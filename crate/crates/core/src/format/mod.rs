//! Bit-packed storage of quantized models and memory accounting.

pub mod container;
pub mod memory;
pub mod model;

pub use container::{decode_model, deserialize, encode_model, inspect, serialize, ContainerStats};
pub use memory::{kilobytes, memory_report, LayerMemory, MemoryReport};
pub use model::{ModelMeta, QuantModel};

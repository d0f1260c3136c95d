//! The `ALQQ` container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "ALQQ" | u16 version | network descriptor | u16 group_size
//! | u64 seed | [u8; 32] config digest
//! per layer:  u32 group_count
//!   per group:  u16 n_k | u8 I_k | I_k x f32 alpha | I_k x ceil(n_k/8) bytes of bases
//! ```
//!
//! Base columns are packed LSB-first: bit `b` of byte `j` of column `i` is
//! the sign of weight `8j + b` (`+1` is bit 1). Each column is padded to a
//! byte boundary with zero bits.

use std::fs;
use std::path::Path;

use crate::alq::{QuantGroup, QuantLayer};
use crate::codec::{checked_u16, put_f32, put_spec, put_u16, put_u32, read_spec, Reader};
use crate::error::{Error, Result};

use super::model::{ModelMeta, QuantModel};

pub const MODEL_MAGIC: &[u8; 4] = b"ALQQ";
pub const MODEL_VERSION: u16 = 1;

pub fn encode_model(model: &QuantModel) -> Result<Vec<u8>> {
    model.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    put_u16(&mut out, MODEL_VERSION);
    put_spec(&mut out, &model.spec)?;
    put_u16(&mut out, checked_u16(model.group_size, "group_size")?);
    out.extend_from_slice(&model.meta.seed.to_le_bytes());
    out.extend_from_slice(&model.meta.config_digest);
    for layer in &model.layers {
        put_u32(&mut out, layer.groups.len() as u32);
        for g in &layer.groups {
            put_u16(&mut out, checked_u16(g.n(), "group length")?);
            out.push(g.bitwidth() as u8);
            for &a in g.coords() {
                put_f32(&mut out, a as f32);
            }
            out.extend_from_slice(g.packed_bases());
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<QuantModel> {
    let mut r = Reader::new(bytes);
    r.expect_magic(MODEL_MAGIC)?;
    let version = r.u16("version")?;
    if version != MODEL_VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let spec = read_spec(&mut r)?;
    let group_size = r.u16("group size")? as usize;
    if group_size == 0 {
        return Err(r.error("group size 0"));
    }
    let seed = r.u64("metadata")?;
    let config_digest: [u8; 32] = r.bytes(32, "metadata")?.try_into().expect("32 bytes");

    let mut layers = Vec::new();
    for (li, layer_index) in spec.param_layer_indices().into_iter().enumerate() {
        let layer_start = r.offset();
        let count = r.u32(&format!("group count of layer {li}"))? as usize;
        let mut groups = Vec::with_capacity(count.min(1 << 20));
        for gi in 0..count {
            let group_start = r.offset();
            let what = format!("header of layer {li} group {gi}");
            let n = r.u16(&what)? as usize;
            let bits = r.u8(&what)? as usize;
            if n == 0 {
                return Err(Error::Format {
                    offset: group_start,
                    reason: format!("layer {li} group {gi}: empty group"),
                });
            }
            let what = format!("coordinates of layer {li} group {gi}");
            let coords = (0..bits)
                .map(|_| r.f32(&what).map(f64::from))
                .collect::<Result<Vec<_>>>()?;
            let base_len = bits * n.div_ceil(8);
            let bases = r.bytes(base_len, &format!("bases of layer {li} group {gi}"))?.to_vec();
            let invalid = |e: Error| Error::Format {
                offset: group_start,
                reason: format!("layer {li} group {gi}: {e}"),
            };
            let g = QuantGroup::from_packed(n, coords, bases).map_err(invalid)?;
            if !g.is_canonical() {
                return Err(invalid(Error::Shape("not in canonical form".into())));
            }
            groups.push(g);
        }
        let layer = QuantLayer::new(layer_index, group_size, groups).map_err(|e| Error::Format {
            offset: layer_start,
            reason: e.to_string(),
        })?;
        layers.push(layer);
    }
    r.finish()?;
    let end = r.offset();
    QuantModel::new(spec, group_size, layers, ModelMeta { seed, config_digest }).map_err(|e| Error::Format {
        offset: end,
        reason: e.to_string(),
    })
}

pub fn serialize(model: &QuantModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn deserialize(path: &Path) -> Result<QuantModel> {
    decode_model(&fs::read(path)?)
}

/// Byte budget of an encoded container, by section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContainerStats {
    /// Magic, version, descriptor, group size, metadata, group counts and
    /// per-group headers.
    pub header_bytes: usize,
    pub coord_bytes: usize,
    /// Packed base bytes, including column padding.
    pub base_bytes: usize,
    /// Base bits excluding column padding, `sum n_k * I_k`.
    pub base_bits: usize,
}

impl ContainerStats {
    pub fn total_bytes(&self) -> usize {
        self.header_bytes + self.coord_bytes + self.base_bytes
    }
}

/// Walks an encoded container and tallies its sections.
pub fn inspect(bytes: &[u8]) -> Result<ContainerStats> {
    let model = decode_model(bytes)?;
    let mut coord_bytes = 0;
    let mut base_bytes = 0;
    let mut base_bits = 0;
    for l in &model.layers {
        for g in &l.groups {
            coord_bytes += 4 * g.bitwidth();
            base_bytes += g.packed_bases().len();
            base_bits += g.n() * g.bitwidth();
        }
    }
    Ok(ContainerStats {
        header_bytes: bytes.len() - coord_bytes - base_bytes,
        coord_bytes,
        base_bytes,
        base_bits,
    })
}

//! Little-endian primitives shared by the on-disk containers.

use crate::error::{Error, Result};
use crate::net::spec::{Activation, LayerKind, LayerSpec, NetworkSpec};

/// Cursor over a byte buffer that reports the offset of any failure.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn error(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            offset: self.offset(),
            reason: reason.into(),
        }
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(format!("truncated {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.bytes(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.bytes(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_bits(self.u32(what)?))
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let at = self.offset();
        let got = self.bytes(4, "magic")?;
        if got != magic {
            return Err(Error::Format {
                offset: at,
                reason: "bad magic".into(),
            });
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.error(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub(crate) fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn checked_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::InvalidParam(format!("{what} {v} exceeds u16")))
}

/// Network descriptor: `u32 input_length, u16 input_channels, u16 class_count,
/// u16 layer_count`, then per layer `u8 kind, u8 activation, u16 kernel,
/// u16 units, u16 stride, u16 padding, f32 dropout_rate`.
pub(crate) fn put_spec(out: &mut Vec<u8>, spec: &NetworkSpec) -> Result<()> {
    put_u32(out, spec.input_length as u32);
    put_u16(out, checked_u16(spec.input_channels, "input_channels")?);
    put_u16(out, checked_u16(spec.class_count, "class_count")?);
    put_u16(out, checked_u16(spec.layers.len(), "layer count")?);
    for l in &spec.layers {
        out.push(match l.kind {
            LayerKind::Conv1d => 0,
            LayerKind::MaxPool1d => 1,
            LayerKind::Flatten => 2,
            LayerKind::Dense => 3,
            LayerKind::SoftmaxDense => 4,
        });
        out.push(match l.activation {
            Activation::None => 0,
            Activation::Relu => 1,
        });
        put_u16(out, checked_u16(l.kernel, "kernel")?);
        put_u16(out, checked_u16(l.units, "units")?);
        put_u16(out, checked_u16(l.stride, "stride")?);
        put_u16(out, checked_u16(l.padding, "padding")?);
        put_f32(out, l.dropout_rate);
    }
    Ok(())
}

pub(crate) fn read_spec(r: &mut Reader<'_>) -> Result<NetworkSpec> {
    let start = r.offset();
    let input_length = r.u32("spec descriptor")? as usize;
    let input_channels = r.u16("spec descriptor")? as usize;
    let class_count = r.u16("spec descriptor")? as usize;
    let n = r.u16("spec descriptor")? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = match r.u8("layer descriptor")? {
            0 => LayerKind::Conv1d,
            1 => LayerKind::MaxPool1d,
            2 => LayerKind::Flatten,
            3 => LayerKind::Dense,
            4 => LayerKind::SoftmaxDense,
            k => return Err(r.error(format!("unknown layer kind {k}"))),
        };
        let activation = match r.u8("layer descriptor")? {
            0 => Activation::None,
            1 => Activation::Relu,
            a => return Err(r.error(format!("unknown activation {a}"))),
        };
        layers.push(LayerSpec {
            kind,
            activation,
            kernel: r.u16("layer descriptor")? as usize,
            units: r.u16("layer descriptor")? as usize,
            stride: r.u16("layer descriptor")? as usize,
            padding: r.u16("layer descriptor")? as usize,
            dropout_rate: r.f32("layer descriptor")?,
        });
    }
    let spec = NetworkSpec {
        layers,
        input_length,
        input_channels,
        class_count,
    };
    spec.validate().map_err(|e| Error::Format {
        offset: start,
        reason: format!("invalid network descriptor: {e}"),
    })?;
    Ok(spec)
}

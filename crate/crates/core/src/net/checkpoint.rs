//! Full-precision checkpoint: magic `ALQF`, `u16` version, network
//! descriptor, then every parameterized layer's flattened parameters
//! (weights then biases) as little-endian `f32`.

use std::fs;
use std::path::Path;

use super::network::Network;
use crate::codec::{put_f32, put_spec, put_u16, read_spec, Reader};
use crate::error::Result;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ALQF";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode_checkpoint(net: &Network) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u16(&mut out, CHECKPOINT_VERSION);
    put_spec(&mut out, net.spec())?;
    for p in net.params() {
        for &v in p.weights.iter().chain(&p.bias) {
            put_f32(&mut out, v as f32);
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let spec = read_spec(&mut r)?;
    let mut net = Network::zeroed(spec)?;
    for p in net.params_mut() {
        let what = format!("parameters of layer {}", p.layer);
        for v in p.weights.iter_mut().chain(p.bias.iter_mut()) {
            *v = r.f32(&what)? as f64;
        }
    }
    r.finish()?;
    Ok(net)
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(net)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::net::spec::default_ecgnet_spec;

    #[test]
    fn round_trip_rounds_to_f32() {
        let net = Network::init(default_ecgnet_spec(), 8).unwrap();
        let bytes = encode_checkpoint(&net).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        for (a, b) in net.params().iter().zip(back.params()) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        // a second pass is exact
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        assert_eq!(bytes.len(), 4 + 2 + 10 + 17 * 14 + 80_973 * 4);
    }

    #[test]
    fn corrupt_inputs() {
        let net = Network::init(default_ecgnet_spec(), 8).unwrap();
        let mut bytes = encode_checkpoint(&net).unwrap();
        let err = decode_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        bytes[0] = b'Z';
        assert_eq!(
            decode_checkpoint(&bytes).unwrap_err().to_string(),
            "format error at offset 0: bad magic"
        );
    }
}

//! Binary checkpoint format.
//!
//! ```text
//! "SBNN" | version: u32 | layers: u32
//! per layer: m: u32 | n: u32 | p: u32 | gain: f32 | W (m*n f32) | A (m/p*n f32) | B (m/p*n f32)
//! crc32 of everything above: u32
//! ```
//! All integers and floats are little-endian; matrices are row-major.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::layer::SupportedBinaryLayer;
use crate::network::Network;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"SBNN";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, VERSION);
    push_u32(&mut out, net.depth() as u32);
    for layer in net.layers() {
        push_u32(&mut out, layer.rows() as u32);
        push_u32(&mut out, layer.cols() as u32);
        push_u32(&mut out, layer.block_size() as u32);
        out.extend_from_slice(&(layer.gain().to_f64_lossy() as f32).to_le_bytes());
        for m in [layer.weights(), layer.supports_a(), layer.supports_b()] {
            for &v in m.iter() {
                out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    push_u32(&mut out, crc);
    out
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Network<T>> {
    if bytes.len() < 16 {
        return Err(Error::Corruption(format!("{} bytes is too short", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Corruption("missing SBNN magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = LittleEndian::read_u32(tail);
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Corruption(format!(
            "crc mismatch: stored {stored:#010x}, computed {actual:#010x}"
        )));
    }
    let mut cur = Reader { buf: body, pos: 4 };
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let depth = cur.u32()? as usize;
    let mut layers = Vec::with_capacity(depth.min(1024));
    for _ in 0..depth {
        let m = cur.u32()? as usize;
        let n = cur.u32()? as usize;
        let p = cur.u32()? as usize;
        if p == 0 || m % p != 0 {
            return Err(Error::Corruption(format!("block size {p} does not divide {m}")));
        }
        let gain = T::of(f64::from(f32::from_bits(cur.u32()?)));
        let w = cur.matrix(m, n)?;
        let a = cur.matrix(m / p, n)?;
        let b = cur.matrix(m / p, n)?;
        let layer = SupportedBinaryLayer::from_parts(w, a, b, p).and_then(|l| l.with_gain(gain));
        layers.push(layer.map_err(|e| Error::Corruption(e.to_string()))?);
    }
    if cur.pos != body.len() {
        return Err(Error::Corruption(format!(
            "{} trailing bytes after last layer",
            body.len() - cur.pos
        )));
    }
    Network::new(layers).map_err(|e| Error::Corruption(e.to_string()))
}

pub fn save_checkpoint<T: Scalar>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(net))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Network<T>> {
    decode_checkpoint(&fs::read(path)?)
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Corruption(format!("need {n} bytes at offset {}, file ends at {}", self.pos, self.buf.len()))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }

    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize) -> Result<Array2<T>> {
        let len = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::Corruption("matrix size overflow".into()))?;
        let raw = self.take(len)?;
        let vals: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::of(f64::from(LittleEndian::read_f32(c))))
            .collect();
        Array2::from_shape_vec((rows, cols), vals).map_err(|e| Error::Corruption(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;

    fn net() -> Network<f32> {
        Network::random(&NetworkSpec::uniform(&[8, 4, 2], 2).with_fan_in_scaling(true), 11).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&net());
        assert_eq!(&bytes[..4], b"SBNN");
        assert_eq!(LittleEndian::read_u32(&bytes[4..8]), VERSION);
        assert_eq!(LittleEndian::read_u32(&bytes[8..12]), 2);
        assert_eq!(LittleEndian::read_u32(&bytes[12..16]), 8);
        assert_eq!(LittleEndian::read_u32(&bytes[16..20]), 4);
        assert_eq!(LittleEndian::read_u32(&bytes[20..24]), 2);
        assert_eq!(LittleEndian::read_f32(&bytes[24..28]), (1.0 / 8f64.sqrt()) as f32);
        // header + layer1 (3 u32 + 1 + 32 + 16 + 16 floats) + layer2 (3 u32 + 1 + 8 + 4 + 4 floats) + crc
        assert_eq!(bytes.len(), 12 + 12 + 65 * 4 + 12 + 17 * 4 + 4);
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let bytes = encode_checkpoint(&net());
        let back: Network<f32> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, net());
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn truncation_is_corruption() {
        let bytes = encode_checkpoint(&net());
        for cut in [3, 15, 40, bytes.len() - 1] {
            assert!(matches!(
                decode_checkpoint::<f32>(&bytes[..cut]),
                Err(Error::Corruption(_))
            ));
        }
    }

    #[test]
    fn flipped_bit_is_corruption() {
        let mut bytes = encode_checkpoint(&net());
        bytes[40] ^= 0x10;
        assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::Corruption(_))));
    }

    #[test]
    fn other_version_rejected() {
        let mut bytes = encode_checkpoint(&net());
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        let body_len = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode_checkpoint::<f32>(&bytes),
            Err(Error::Version { found: 7, expected: 1 })
        ));
    }
}

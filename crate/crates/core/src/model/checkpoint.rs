//! Binary serialization of [`ModelParams`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "DPNM" | version u32 | d u32 | h u32 | h2 u32 | l u32 | tensors…
//! ```
//!
//! Each tensor, in [`TENSOR_NAMES`] order: name length (u16), name bytes,
//! rank (u8), one u32 per dimension, then the row-major f64 payload. Weights
//! are rank 2; biases are stored rank 1. Every decode failure is a
//! [`Error::Format`] naming the byte offset where reading went wrong.

use super::{LayerParams, ModelDims, ModelParams, TENSOR_NAMES};
use crate::error::{Error, Result};
use crate::mat::Mat;
use std::path::Path;

const MAGIC: &[u8; 4] = b"DPNM";
const VERSION: u32 = 1;

/// Shape each serialized tensor must have, derived from the header dims.
/// `(rank-1 tensors are written as a bare length; rank-2 as rows, cols)`.
fn expected_shapes(dims: &ModelDims) -> Result<[(&'static str, Vec<u32>); 6]> {
    let as_u32 = |v: usize, what: &str| -> Result<u32> {
        u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} exceeds u32")))
    };
    let d = as_u32(dims.d, "d")?;
    let h = as_u32(dims.h, "h")?;
    let h2 = as_u32(dims.h2, "h2")?;
    let l = as_u32(dims.l, "l")?;
    let lh = l
        .checked_mul(h)
        .ok_or_else(|| Error::InvalidArgument(format!("l*h = {l}*{h} exceeds u32")))?;
    let ll = l
        .checked_mul(l)
        .ok_or_else(|| Error::InvalidArgument(format!("l*l = {l}*{l} exceeds u32")))?;
    Ok([
        (TENSOR_NAMES[0], vec![d, h]),
        (TENSOR_NAMES[1], vec![h]),
        (TENSOR_NAMES[2], vec![lh, h2]),
        (TENSOR_NAMES[3], vec![h2]),
        (TENSOR_NAMES[4], vec![h2, ll]),
        (TENSOR_NAMES[5], vec![ll]),
    ])
}

/// Serializes parameters to the byte format above.
pub fn encode_checkpoint(params: &ModelParams) -> Result<Vec<u8>> {
    let dims = &params.dims;
    dims.validate()?;
    let shapes = expected_shapes(dims)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [dims.d, dims.h, dims.h2, dims.l] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for ((name, t), (_, shape)) in params.tensors().iter().zip(&shapes) {
        let count: usize = shape.iter().map(|&v| v as usize).product();
        if t.rows() * t.cols() != count {
            return Err(Error::shape(
                "encode_checkpoint tensor size",
                count,
                t.rows() * t.cols(),
            ));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(shape.len() as u8);
        for &dim in shape.iter() {
            out.extend_from_slice(&dim.to_le_bytes());
        }
        for &v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Byte reader that tracks its offset for error reporting.
struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.offset < n {
            return Err(Error::Format {
                offset: self.bytes.len(),
                what: format!("file ends inside {what}"),
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16_le(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn read_tensor(r: &mut Reader, name: &str, shape: &[u32]) -> Result<Mat> {
    let name_offset = r.offset;
    let len = r.u16_le("tensor name length")? as usize;
    if len != name.len() {
        return Err(Error::Format {
            offset: name_offset,
            what: format!("tensor name length {len}, expected {} ({name})", name.len()),
        });
    }
    let got = r.take(len, "tensor name")?;
    if got != name.as_bytes() {
        return Err(Error::Format {
            offset: name_offset + 2,
            what: format!("tensor name {:?}, expected {name}", String::from_utf8_lossy(got)),
        });
    }
    let rank_offset = r.offset;
    let rank = r.u8("tensor rank")? as usize;
    if rank != shape.len() {
        return Err(Error::Format {
            offset: rank_offset,
            what: format!("{name} rank {rank}, expected {}", shape.len()),
        });
    }
    for &expected in shape {
        let dim_offset = r.offset;
        let got = r.u32_le("tensor dimension")?;
        if got != expected {
            return Err(Error::Format {
                offset: dim_offset,
                what: format!("{name} dimension {got} disagrees with header ({expected})"),
            });
        }
    }
    let count: usize = shape.iter().map(|&v| v as usize).product();
    let payload = r.take(count * 8, "tensor payload")?;
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks_exact yields 8 bytes")))
        .collect();
    let (rows, cols) = match shape {
        [n] => (1, *n as usize),
        [r, c] => (*r as usize, *c as usize),
        _ => unreachable!("ranks above 2 are rejected earlier"),
    };
    Ok(Mat::from_vec(rows, cols, data)?)
}

/// Parses the byte format above back into parameters.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, offset: 0 };
    let magic = r.take(MAGIC.len(), "magic bytes")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            what: format!("bad magic {magic:02x?}, expected {MAGIC:02x?}"),
        });
    }
    let version_offset = r.offset;
    let version = r.u32_le("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: version_offset,
            what: format!("unsupported version {version}, expected {VERSION}"),
        });
    }
    let mut raw = [0u32; 4];
    for (i, v) in raw.iter_mut().enumerate() {
        let dim_offset = r.offset;
        *v = r.u32_le("dims record")?;
        if *v == 0 {
            return Err(Error::Format {
                offset: dim_offset,
                what: format!("dimension {} is zero", ["d", "h", "h2", "l"][i]),
            });
        }
    }
    let dims = ModelDims {
        d: raw[0] as usize,
        h: raw[1] as usize,
        h2: raw[2] as usize,
        l: raw[3] as usize,
    };
    let shapes = expected_shapes(&dims)?;
    let mut tensors = Vec::with_capacity(6);
    for (name, shape) in &shapes {
        tensors.push(read_tensor(&mut r, name, shape)?);
    }
    if r.offset != bytes.len() {
        return Err(Error::Format {
            offset: r.offset,
            what: format!("{} trailing bytes after last tensor", bytes.len() - r.offset),
        });
    }
    let mut it = tensors.into_iter();
    let mut layer = || -> LayerParams {
        let weight = it.next().expect("six tensors were read");
        let bias = it.next().expect("six tensors were read");
        LayerParams { weight, bias }
    };
    Ok(ModelParams {
        dims,
        encoder: layer(),
        head: layer(),
        score: layer(),
    })
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
        let dims = ModelDims {
            d: rng.random_range(1..6),
            h: rng.random_range(1..8),
            h2: rng.random_range(1..8),
            l: rng.random_range(2..6),
        };
        ModelParams::init(&dims, rng).unwrap()
    }

    fn assert_bit_identical(a: &ModelParams, b: &ModelParams) {
        assert_eq!(a.dims, b.dims);
        for ((_, ta), (name, tb)) in a.tensors().iter().zip(b.tensors()) {
            assert!(ta.same_shape(tb), "{name}");
            for (va, vb) in ta.as_slice().iter().zip(tb.as_slice()) {
                assert_eq!(va.to_bits(), vb.to_bits(), "{name}");
            }
        }
    }

    #[test]
    fn roundtrip_is_bit_identical_over_many_random_parameter_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for _ in 0..20 {
            let params = random_params(&mut rng);
            let bytes = encode_checkpoint(&params).unwrap();
            let back = decode_checkpoint(&bytes).unwrap();
            assert_bit_identical(&params, &back);
            assert_eq!(bytes, encode_checkpoint(&back).unwrap());
        }
    }

    #[test]
    fn save_and_load_through_the_filesystem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let params = random_params(&mut rng);
        save_checkpoint(&params, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_bit_identical(&params, &back);
    }

    fn sample_bytes() -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        encode_checkpoint(&random_params(&mut rng)).unwrap()
    }

    fn expect_format_error(bytes: &[u8]) -> (usize, String) {
        match decode_checkpoint(bytes) {
            Err(Error::Format { offset, what }) => (offset, what),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_magic_is_rejected_at_offset_zero() {
        let mut bytes = sample_bytes();
        bytes[1] ^= 0xff;
        let (offset, what) = expect_format_error(&bytes);
        assert_eq!(offset, 0);
        assert!(what.contains("magic"), "{what}");
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = sample_bytes();
        bytes[4] = 2;
        let (offset, what) = expect_format_error(&bytes);
        assert_eq!(offset, 4);
        assert!(what.contains("version"), "{what}");
    }

    #[test]
    fn truncation_is_rejected_with_the_file_length() {
        let bytes = sample_bytes();
        for cut in [3, 10, 23, bytes.len() / 2, bytes.len() - 1] {
            let (offset, _) = expect_format_error(&bytes[..cut]);
            assert_eq!(offset, cut);
        }
    }

    #[test]
    fn header_dims_disagreeing_with_tensor_shapes_are_rejected() {
        let mut bytes = sample_bytes();
        // bump `d` in the header; encoder.weight's recorded rows no longer match
        let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        bytes[8..12].copy_from_slice(&(d + 1).to_le_bytes());
        let (_, what) = expect_format_error(&bytes);
        assert!(what.contains("disagrees with header"), "{what}");
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let mut bytes = sample_bytes();
        let end = bytes.len();
        bytes.push(0);
        let (offset, what) = expect_format_error(&bytes);
        assert_eq!(offset, end);
        assert!(what.contains("trailing"), "{what}");
    }

    #[test]
    fn tampered_tensor_name_is_rejected() {
        let mut bytes = sample_bytes();
        // first tensor name starts right after the 24-byte header + u16 length
        bytes[26] = b'X';
        let (offset, what) = expect_format_error(&bytes);
        assert_eq!(offset, 26);
        assert!(what.contains("encoder.weight"), "{what}");
    }

    #[test]
    fn zero_dimension_in_header_is_rejected() {
        let mut bytes = sample_bytes();
        bytes[12..16].copy_from_slice(&0u32.to_le_bytes());
        let (offset, what) = expect_format_error(&bytes);
        assert_eq!(offset, 12);
        assert!(what.contains("zero"), "{what}");
    }
}

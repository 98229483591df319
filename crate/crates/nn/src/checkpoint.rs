//! Parameter checkpoint file.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    4 bytes  "TCKP"
//! version  u32      = 1
//! count    u32      number of entries
//! entry*:
//!   name_len u32, name (utf-8)
//!   rows u32, cols u32
//!   rows*cols f32, row-major
//! ```

use std::io::{Read, Write};

use crate::error::{NnError, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TCKP";
pub const VERSION: u32 = 1;

pub fn write_params<T: Scalar, W: Write>(out: &mut W, params: &ParamSet<T>) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rows() as u32).to_le_bytes())?;
        out.write_all(&(t.cols() as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_params<R: Read>(input: &mut R) -> Result<ParamSet<f32>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(input)?;
    if version != VERSION {
        return Err(NnError::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(input)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = read_u32(input)? as usize;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| NnError::Format(e.to_string()))?;
        let rows = read_u32(input)? as usize;
        let cols = read_u32(input)? as usize;
        let mut buf = vec![0u8; rows * cols * 4];
        input.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.push(name, Tensor::from_vec(rows, cols, data)?);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = ParamSet::<f32>::new();
        p.push(
            "a",
            Tensor::from_vec(2, 2, vec![1.0, -0.0, f32::MIN_POSITIVE, 3.25]).unwrap(),
        );
        p.push("block.0.b", Tensor::row_vector(vec![0.1, 0.2, 0.3]));
        let mut bytes = Vec::new();
        write_params(&mut bytes, &p).unwrap();
        let back = read_params(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.names(), p.names());
        for (a, b) in back.tensors().iter().zip(p.tensors()) {
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn rejects_wrong_magic() {
        let bytes = b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00".to_vec();
        assert!(read_params(&mut bytes.as_slice()).is_err());
    }
}

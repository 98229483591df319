//! Feature map file.
//!
//! Little-endian layout:
//!
//! ```text
//! magic     4 bytes "TGRD"
//! version   u32 = 1
//! origin    2 x f64 (x, y), meters
//! cell size f64, meters
//! width     u32, height u32
//! planes    8 x (width*height) f32, row-major, in channel order:
//!           observed_mean, observed_variance, predicted_mean,
//!           predicted_variance, height_spread, normal_angle,
//!           concavity_angle, known (1.0 / 0.0)
//! ```

use std::io::{Read, Write};

use super::{FeatureMap, GridGeometry, NUM_CHANNELS};
use crate::error::{CoreError, Result};

pub const MAGIC: &[u8; 4] = b"TGRD";
pub const VERSION: u32 = 1;

fn bad(detail: impl Into<String>) -> CoreError {
    CoreError::Format {
        what: "map file",
        detail: detail.into(),
    }
}

pub fn write_map<W: Write>(out: &mut W, map: &FeatureMap<f32>) -> Result<()> {
    let g = &map.geometry;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&g.origin_x.to_le_bytes())?;
    out.write_all(&g.origin_y.to_le_bytes())?;
    out.write_all(&g.cell_size.to_le_bytes())?;
    out.write_all(&(g.width as u32).to_le_bytes())?;
    out.write_all(&(g.height as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(g.len() * 4 * (NUM_CHANNELS + 1));
    for ch in super::Channel::ALL {
        for &v in map.plane(ch) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &k in map.known() {
        buf.extend_from_slice(&(if k { 1.0f32 } else { 0.0 }).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_map<R: Read>(input: &mut R) -> Result<FeatureMap<f32>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(format!("magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut f64s = [0.0; 3];
    for v in &mut f64s {
        input.read_exact(&mut b8)?;
        *v = f64::from_le_bytes(b8);
    }
    input.read_exact(&mut b4)?;
    let width = u32::from_le_bytes(b4) as usize;
    input.read_exact(&mut b4)?;
    let height = u32::from_le_bytes(b4) as usize;
    if !(f64s[2] > 0.0) {
        return Err(bad("cell size must be positive"));
    }
    let geometry = GridGeometry::new(f64s[0], f64s[1], f64s[2], width, height);
    let n = geometry.len();
    let mut buf = vec![0u8; n * 4 * (NUM_CHANNELS + 1)];
    input.read_exact(&mut buf)?;
    let vals: Vec<f32> = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let planes = (0..NUM_CHANNELS)
        .map(|c| vals[c * n..(c + 1) * n].to_vec())
        .collect();
    let known = vals[NUM_CHANNELS * n..].iter().map(|&v| v != 0.0).collect();
    FeatureMap::from_planes(geometry, planes, known)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::Channel;

    #[test]
    fn round_trip_is_bit_exact() {
        let geom = GridGeometry::new(-20.0, -20.5, 0.2, 3, 2);
        let mut fm = FeatureMap::<f32>::empty(geom);
        for (k, ch) in Channel::ALL.into_iter().enumerate() {
            for (i, v) in fm.plane_mut(ch).iter_mut().enumerate() {
                *v = (k as f32 + 1.0) * 0.1 + i as f32 * 1e-3;
            }
        }
        fm.set_known(1, true);
        fm.set_known(4, true);
        let mut bytes = Vec::new();
        write_map(&mut bytes, &fm).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 24 + 8 + 6 * 4 * 8);
        let back = read_map(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, fm);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let fm = FeatureMap::<f32>::empty(GridGeometry::new(0.0, 0.0, 0.2, 4, 4));
        let mut bytes = Vec::new();
        write_map(&mut bytes, &fm).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(read_map(&mut bytes.as_slice()).is_err());
    }
}

use std::io::{BufRead, Read, Write};

use super::pose::VehiclePose;
use super::tokens::{PatchToken, PseudoLabel, TokenConfig, TokenId};
use crate::error::{CoreError, Result};

const TOKEN_MAGIC: &[u8; 4] = b"TTOK";
const TOKEN_VERSION: u32 = 1;

fn format_err(detail: impl Into<String>) -> CoreError {
    CoreError::Format {
        what: "token file",
        detail: detail.into(),
    }
}

/// Writes poses as `stamp,tx,ty,tz,qw,qx,qy,qz` with a header line.
pub fn write_poses<W: Write>(mut out: W, poses: &[VehiclePose]) -> Result<()> {
    writeln!(out, "stamp,tx,ty,tz,qw,qx,qy,qz")?;
    for p in poses {
        let t = p.translation();
        let q = p.quaternion();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            p.stamp, t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        )?;
    }
    Ok(())
}

/// Reads the pose CSV. A leading header line is skipped; blank lines and
/// lines starting with `#` are ignored.
pub fn read_poses<R: BufRead>(input: R) -> Result<Vec<VehiclePose>> {
    let mut poses = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (lineno == 0 && line.starts_with("stamp")) {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| CoreError::Format {
            what: "pose file",
            detail: format!("line {}: {e}", lineno + 1),
        })?;
        if vals.len() != 8 {
            return Err(CoreError::Format {
                what: "pose file",
                detail: format!(
                    "line {}: expected 8 fields, found {}",
                    lineno + 1,
                    vals.len()
                ),
            });
        }
        poses.push(VehiclePose::from_quaternion(
            vals[0],
            [vals[1], vals[2], vals[3]],
            [vals[4], vals[5], vals[6], vals[7]],
        )?);
    }
    Ok(poses)
}

/// Token file: header `TTOK`, version, K, M, C, count, then per token the
/// id triple, centre row/col, `M*M*C` features, label code and `K` soft
/// label values. Little-endian throughout.
pub fn write_tokens<W: Write>(mut out: W, cfg: &TokenConfig, tokens: &[PatchToken]) -> Result<()> {
    let len = cfg.token_len();
    out.write_all(TOKEN_MAGIC)?;
    for v in [
        TOKEN_VERSION,
        cfg.classes as u32,
        cfg.patch as u32,
        super::tokens::CELL_VALUES as u32,
        tokens.len() as u32,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    for t in tokens {
        if t.features.len() != len || t.soft.len() != cfg.classes {
            return Err(CoreError::Shape(format!(
                "token {:?} does not match the configured layout",
                t.id
            )));
        }
        for v in [
            t.id.frame,
            t.id.window,
            t.id.patch,
            t.center.0 as u32,
            t.center.1 as u32,
        ] {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in &t.features {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&[t.label.code()])?;
        for v in &t.soft {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| format_err(format!("truncated: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|e| format_err(format!("truncated: {e}")))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Returns `(classes, patch, tokens)`.
pub fn read_tokens<R: Read>(mut input: R) -> Result<(usize, usize, Vec<PatchToken>)> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| format_err("missing header"))?;
    if &magic != TOKEN_MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = read_u32(&mut input)?;
    if version != TOKEN_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let k = read_u32(&mut input)? as usize;
    let m = read_u32(&mut input)? as usize;
    let c = read_u32(&mut input)? as usize;
    let count = read_u32(&mut input)? as usize;
    if c != super::tokens::CELL_VALUES {
        return Err(format_err(format!(
            "expected {} values per cell, found {c}",
            super::tokens::CELL_VALUES
        )));
    }
    let mut tokens = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let id = TokenId {
            frame: read_u32(&mut input)?,
            window: read_u32(&mut input)?,
            patch: read_u32(&mut input)?,
        };
        let center = (
            read_u32(&mut input)? as usize,
            read_u32(&mut input)? as usize,
        );
        let features = read_f32s(&mut input, m * m * c)?;
        let mut code = [0u8; 1];
        input
            .read_exact(&mut code)
            .map_err(|e| format_err(format!("truncated: {e}")))?;
        let label = PseudoLabel::from_code(code[0])
            .ok_or_else(|| format_err(format!("bad label code {}", code[0])))?;
        let soft = read_f32s(&mut input, k)?;
        tokens.push(PatchToken {
            id,
            center,
            features,
            label,
            soft,
        });
    }
    Ok((k, m, tokens))
}

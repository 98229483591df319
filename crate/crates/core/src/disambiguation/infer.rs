use std::io::{Read, Write};

use super::trainer::{window_ranges, window_tensor};
use super::Model;
use crate::error::{CoreError, Result};
use crate::labeling::{extract_tokens, LabelGrid, PatchToken, TokenConfig};
use crate::terrain::{FeatureMap, GridGeometry};

/// Cell value for "no prediction".
pub const UNKNOWN_CLASS: u8 = 0;

/// Per-cell predicted class, `1..=K`, or [`UNKNOWN_CLASS`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClassGrid {
    pub geometry: GridGeometry,
    pub classes: Vec<u8>,
}

impl ClassGrid {
    pub fn unknown(geometry: GridGeometry) -> Self {
        ClassGrid {
            geometry,
            classes: vec![UNKNOWN_CLASS; geometry.len()],
        }
    }

    pub fn known_count(&self) -> usize {
        self.classes.iter().filter(|&&c| c != UNKNOWN_CLASS).count()
    }
}

const CLASS_MAGIC: &[u8; 4] = b"TCLS";
const CLASS_VERSION: u32 = 1;

fn bad(detail: impl Into<String>) -> CoreError {
    CoreError::Format {
        what: "class grid file",
        detail: detail.into(),
    }
}

/// Class grid file: `TCLS`, version, origin x/y and cell size as f64,
/// width and height as u32, then one byte per cell, row-major.
/// Little-endian.
pub fn write_class_grid<W: Write>(out: &mut W, grid: &ClassGrid) -> Result<()> {
    let g = &grid.geometry;
    out.write_all(CLASS_MAGIC)?;
    out.write_all(&CLASS_VERSION.to_le_bytes())?;
    for v in [g.origin_x, g.origin_y, g.cell_size] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&(g.width as u32).to_le_bytes())?;
    out.write_all(&(g.height as u32).to_le_bytes())?;
    out.write_all(&grid.classes)?;
    Ok(())
}

pub fn read_class_grid<R: Read>(input: &mut R) -> Result<ClassGrid> {
    let mut head = [0u8; 40];
    input
        .read_exact(&mut head)
        .map_err(|e| bad(format!("truncated header: {e}")))?;
    if &head[..4] != CLASS_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap());
    let f64_at = |i: usize| f64::from_le_bytes(head[i..i + 8].try_into().unwrap());
    if u32_at(4) != CLASS_VERSION {
        return Err(bad(format!("unsupported version {}", u32_at(4))));
    }
    let geometry = GridGeometry::new(
        f64_at(8),
        f64_at(16),
        f64_at(24),
        u32_at(32) as usize,
        u32_at(36) as usize,
    );
    if !(geometry.cell_size > 0.0) {
        return Err(bad("cell size must be positive"));
    }
    let mut classes = vec![0u8; geometry.len()];
    input
        .read_exact(&mut classes)
        .map_err(|e| bad(format!("truncated cells: {e}")))?;
    Ok(ClassGrid { geometry, classes })
}

/// Arg-max class (0-based) for every token, windows evaluated together.
pub fn classify_tokens(model: &Model, tokens: &[PatchToken]) -> Result<Vec<usize>> {
    let mut out = vec![0; tokens.len()];
    for w in window_ranges(tokens) {
        let x = window_tensor(&tokens[w.clone()])?;
        let (_, probs) = model.forward_window(&x)?;
        for (i, slot) in w.enumerate() {
            let row = probs.row(i);
            let mut best = 0;
            for (j, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = j;
                }
            }
            out[slot] = best;
        }
    }
    Ok(out)
}

/// Classifies every patch of `map` and broadcasts the class to the patch's
/// known cells. Cells not covered by a classified patch stay unknown.
pub fn infer_map(model: &Model, map: &FeatureMap<f32>, cfg: &TokenConfig) -> Result<ClassGrid> {
    let g = map.geometry;
    let labels = LabelGrid::unlabeled(g);
    let tokens = extract_tokens(map, &labels, cfg, 0)?;
    let classes = classify_tokens(model, &tokens)?;
    let mut grid = ClassGrid::unknown(g);
    let half = cfg.patch / 2;
    for (t, &c) in tokens.iter().zip(&classes) {
        let (r0, c0) = (t.center.0 - half, t.center.1 - half);
        for r in r0..(r0 + cfg.patch).min(g.height) {
            for col in c0..(c0 + cfg.patch).min(g.width) {
                if map.is_known(r, col) {
                    grid.classes[g.index(r, col)] = (c + 1) as u8;
                }
            }
        }
    }
    Ok(grid)
}

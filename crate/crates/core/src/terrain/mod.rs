//! Probabilistic 2.5D terrain grid: per-cell elevation statistics fused from
//! scan points, kernel-based dense inference, and the derived per-cell
//! feature channels.

mod features;
mod fusion;
mod inference;
pub mod io;
pub mod render;

pub use features::{compute_features, Channel, FeatureMap, NUM_CHANNELS};
pub use fusion::{ElevationCell, ElevationGrid, FuseReport, VARIANCE_FLOOR};
pub use inference::{infer_dense, sparse_kernel, DenseGrid, InferenceParams};

/// Placement of a regular grid in its frame. Rows run along +y, columns
/// along +x; cell `(row, col)` covers
/// `[ox + col*r, ox + (col+1)*r) x [oy + row*r, oy + (row+1)*r)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

impl GridGeometry {
    pub fn new(origin_x: f64, origin_y: f64, cell_size: f64, width: usize, height: usize) -> Self {
        GridGeometry {
            origin_x,
            origin_y,
            cell_size,
            width,
            height,
        }
    }

    /// Square grid of `extent` meters centred on `(cx, cy)`.
    pub fn centered(cx: f64, cy: f64, extent: f64, cell_size: f64) -> Self {
        let n = (extent / cell_size).round() as usize;
        GridGeometry::new(cx - extent / 2.0, cy - extent / 2.0, cell_size, n, n)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.origin_x) / self.cell_size).floor();
        let r = ((y - self.origin_y) / self.cell_size).floor();
        if c < 0.0 || r < 0.0 || !c.is_finite() || !r.is_finite() {
            return None;
        }
        let (r, c) = (r as usize, c as usize);
        (r < self.height && c < self.width).then_some((r, c))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_size,
            self.origin_y + (row as f64 + 0.5) * self.cell_size,
        )
    }
}

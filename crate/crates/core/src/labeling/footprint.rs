use nalgebra::Vector3;

use super::pose::{transform_to_current, VehiclePose};
use crate::error::{invalid, Result};
use crate::terrain::GridGeometry;

/// Wheel-ground contact points in the body frame (x forward, y left).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Footprint {
    pub left_front: Vector3<f64>,
    pub right_front: Vector3<f64>,
    pub left_rear: Vector3<f64>,
    pub right_rear: Vector3<f64>,
}

impl Footprint {
    pub fn new(
        left_front: Vector3<f64>,
        right_front: Vector3<f64>,
        left_rear: Vector3<f64>,
        right_rear: Vector3<f64>,
    ) -> Result<Self> {
        let fp = Footprint {
            left_front,
            right_front,
            left_rear,
            right_rear,
        };
        let [a, b, c, d] = fp.polygon_order();
        let normal = (b - a).cross(&(d - a));
        let nn = normal.norm();
        if nn < 1e-9 {
            return Err(invalid("footprint is degenerate"));
        }
        let off = (c - a).dot(&normal) / nn;
        if off.abs() > 1e-6 {
            return Err(invalid(format!(
                "footprint contact points are not coplanar ({off:e} m)"
            )));
        }
        if polygon_area(&fp.polygon_order().map(|p| [p.x, p.y])).abs() < 1e-9 {
            return Err(invalid("footprint quadrilateral has zero area"));
        }
        Ok(fp)
    }

    /// Rectangle with the given wheelbase and track, centred on the body origin.
    pub fn rectangle(wheelbase: f64, track: f64) -> Result<Self> {
        let (hx, hy) = (wheelbase / 2.0, track / 2.0);
        Footprint::new(
            Vector3::new(hx, hy, 0.0),
            Vector3::new(hx, -hy, 0.0),
            Vector3::new(-hx, hy, 0.0),
            Vector3::new(-hx, -hy, 0.0),
        )
    }

    /// Corners in boundary order (lf, rf, rr, lr).
    pub fn polygon_order(&self) -> [Vector3<f64>; 4] {
        [
            self.left_front,
            self.right_front,
            self.right_rear,
            self.left_rear,
        ]
    }
}

/// Contact points of the pose at `at`, expressed in the body frame of
/// `current`, in boundary order.
pub fn transform_footprint(
    fp: &Footprint,
    at: &VehiclePose,
    current: &VehiclePose,
) -> [Vector3<f64>; 4] {
    let pts = transform_to_current(&fp.polygon_order(), at, current);
    [pts[0], pts[1], pts[2], pts[3]]
}

/// Signed shoelace area.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

/// Indices of the cells whose centres lie inside the polygon (even-odd rule).
///
/// Fill rule: a centre exactly on the boundary is inside when it lies on a
/// left or bottom edge and outside when on a right or top edge (edges are
/// half-open `[y_low, y_high)` in y and spans half-open `[x_left, x_right)`
/// in x). Zero-area polygons cover nothing. Result is sorted.
pub fn rasterize_polygon(poly: &[[f64; 2]], geom: &GridGeometry) -> Vec<usize> {
    let mut cells = Vec::new();
    if poly.len() < 3
        || polygon_area(poly).abs() < 1e-12
        || poly.iter().flatten().any(|v| !v.is_finite())
    {
        return cells;
    }
    let ymin = poly.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let ymax = poly.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let r = geom.cell_size;
    let row_lo = (((ymin - geom.origin_y) / r - 0.5).floor().max(0.0)) as usize;
    let row_hi =
        ((((ymax - geom.origin_y) / r - 0.5).ceil() + 1.0).max(0.0) as usize).min(geom.height);
    let center_x = |c: isize| geom.origin_x + (c as f64 + 0.5) * r;
    // first column whose centre is >= x
    let first_at_or_after = |x: f64| -> isize {
        let mut c = ((x - geom.origin_x) / r - 0.5).ceil() as isize;
        while center_x(c - 1) >= x {
            c -= 1;
        }
        while center_x(c) < x {
            c += 1;
        }
        c
    };
    let mut xs = Vec::with_capacity(poly.len());
    for row in row_lo..row_hi {
        let (_, yc) = geom.cell_center(row, 0);
        xs.clear();
        for i in 0..poly.len() {
            let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
            let (lo, hi) = if a[1] <= b[1] { (a, b) } else { (b, a) };
            if lo[1] <= yc && yc < hi[1] {
                xs.push(lo[0] + (yc - lo[1]) * (hi[0] - lo[0]) / (hi[1] - lo[1]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            let c0 = first_at_or_after(span[0]).max(0);
            let c1 = first_at_or_after(span[1]).min(geom.width as isize);
            for c in c0..c1 {
                cells.push(geom.index(row, c as usize));
            }
        }
    }
    cells.sort_unstable();
    cells.dedup();
    cells
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;

    fn geom() -> GridGeometry {
        GridGeometry::new(0.0, 0.0, 0.2, 20, 20)
    }

    #[test]
    fn identity_transform_returns_contact_points() {
        let fp = Footprint::rectangle(2.0, 1.2).unwrap();
        let p = VehiclePose::identity(0.0);
        let out = transform_footprint(&fp, &p, &p);
        assert_eq!(out, fp.polygon_order());
    }

    #[test]
    fn translated_past_pose() {
        let at = VehiclePose::from_yaw(0.0, 1.0, 0.0, 0.0, 0.0);
        let cur = VehiclePose::identity(1.0);
        let out = transform_to_current(&[Vector3::new(2.0, 0.0, 0.0)], &at, &cur);
        assert_eq!(out[0], Vector3::new(3.0, 0.0, 0.0));
    }

    #[test]
    fn rotated_current_pose() {
        let at = VehiclePose::identity(0.0);
        let cur = VehiclePose::from_yaw(1.0, 0.0, 0.0, 0.0, FRAC_PI_2);
        let out = transform_to_current(&[Vector3::new(1.0, 0.0, 0.0)], &at, &cur);
        // oracle: explicit R^T for a +90 deg yaw
        let rt = nalgebra::Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let expect = rt * Vector3::new(1.0, 0.0, 0.0);
        assert!((out[0] - expect).norm() < 1e-12);
        assert!((out[0] - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn aligned_square_covers_25_cells() {
        let sq = [[1.0, 1.0], [2.0, 1.0], [2.0, 2.0], [1.0, 2.0]];
        assert_eq!(rasterize_polygon(&sq, &geom()).len(), 25);
    }

    #[test]
    fn degenerate_quad_is_empty() {
        assert!(rasterize_polygon(&[[1.0, 1.0]; 4], &geom()).is_empty());
        assert!(
            rasterize_polygon(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]], &geom())
                .is_empty()
        );
    }

    #[test]
    fn boundary_fill_rule() {
        // centres at 0.1 + 0.2k; edges exactly through centres x=0.5, y=0.5
        let sq = [[0.5, 0.5], [0.9, 0.5], [0.9, 0.9], [0.5, 0.9]];
        let cells = rasterize_polygon(&sq, &geom());
        let g = geom();
        // left (x=0.5) and bottom (y=0.5) edges inside, right/top outside
        let expect: Vec<usize> = vec![g.index(2, 2), g.index(2, 3), g.index(3, 2), g.index(3, 3)];
        assert_eq!(cells, expect);
    }

    #[test]
    fn clipped_to_grid() {
        let big = [[-5.0, -5.0], [50.0, -5.0], [50.0, 50.0], [-5.0, 50.0]];
        assert_eq!(rasterize_polygon(&big, &geom()).len(), 400);
    }

    #[test]
    fn rejects_non_coplanar_footprint() {
        let r = Footprint::new(
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(1.0, -1.0, 0.0),
            Vector3::new(-1.0, 1.0, 0.0),
            Vector3::new(-1.0, -1.0, 0.01),
        );
        assert!(r.is_err());
    }
}

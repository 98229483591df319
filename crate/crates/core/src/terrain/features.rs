use std::f64::consts::FRAC_PI_2;

use travgrid_nn::Scalar;

use super::{DenseGrid, ElevationGrid, GridGeometry};

pub const NUM_CHANNELS: usize = 7;

/// Feature channels, in file and token order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    ObservedMean = 0,
    ObservedVariance = 1,
    PredictedMean = 2,
    PredictedVariance = 3,
    HeightSpread = 4,
    NormalAngle = 5,
    ConcavityAngle = 6,
}

impl Channel {
    pub const ALL: [Channel; NUM_CHANNELS] = [
        Channel::ObservedMean,
        Channel::ObservedVariance,
        Channel::PredictedMean,
        Channel::PredictedVariance,
        Channel::HeightSpread,
        Channel::NormalAngle,
        Channel::ConcavityAngle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::ObservedMean => "observed_mean",
            Channel::ObservedVariance => "observed_variance",
            Channel::PredictedMean => "predicted_mean",
            Channel::PredictedVariance => "predicted_variance",
            Channel::HeightSpread => "height_spread",
            Channel::NormalAngle => "normal_angle",
            Channel::ConcavityAngle => "concavity_angle",
        }
    }
}

/// Multi-channel terrain feature map. Unknown cells hold 0 in every channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub geometry: GridGeometry,
    planes: Vec<Vec<T>>,
    known: Vec<bool>,
}

impl<T: Scalar> FeatureMap<T> {
    /// All-unknown map.
    pub fn empty(geometry: GridGeometry) -> Self {
        FeatureMap {
            geometry,
            planes: vec![vec![T::zero(); geometry.len()]; NUM_CHANNELS],
            known: vec![false; geometry.len()],
        }
    }

    pub fn from_planes(
        geometry: GridGeometry,
        planes: Vec<Vec<T>>,
        known: Vec<bool>,
    ) -> crate::Result<Self> {
        if planes.len() != NUM_CHANNELS
            || planes.iter().any(|p| p.len() != geometry.len())
            || known.len() != geometry.len()
        {
            return Err(crate::CoreError::Shape(format!(
                "feature planes do not match a {}x{} grid",
                geometry.width, geometry.height
            )));
        }
        Ok(FeatureMap {
            geometry,
            planes,
            known,
        })
    }

    pub fn plane(&self, ch: Channel) -> &[T] {
        &self.planes[ch as usize]
    }

    pub fn plane_mut(&mut self, ch: Channel) -> &mut [T] {
        &mut self.planes[ch as usize]
    }

    pub fn known(&self) -> &[bool] {
        &self.known
    }

    pub fn is_known(&self, row: usize, col: usize) -> bool {
        self.known[self.geometry.index(row, col)]
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|&&k| k).count()
    }

    pub fn get(&self, ch: Channel, row: usize, col: usize) -> T {
        self.planes[ch as usize][self.geometry.index(row, col)]
    }

    /// Marks a cell unknown and resets it to the fill value.
    pub fn clear_cell(&mut self, i: usize) {
        self.known[i] = false;
        for p in &mut self.planes {
            p[i] = T::zero();
        }
    }

    pub fn set_known(&mut self, i: usize, known: bool) {
        self.known[i] = known;
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap {
            geometry: self.geometry,
            planes: self
                .planes
                .iter()
                .map(|p| p.iter().map(|&v| U::lit(v.as_f64())).collect())
                .collect(),
            known: self.known.clone(),
        }
    }
}

/// Least-squares plane `z = a x + b y + c` through the given points.
/// `None` for fewer than three points or collinear support.
fn fit_plane(points: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let (mx, my, mz) = points.iter().fold((0.0, 0.0, 0.0), |a, p| {
        (a.0 + p.0 / n, a.1 + p.1 / n, a.2 + p.2 / n)
    });
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, z) in points {
        let (dx, dy, dz) = (x - mx, y - my, z - mz);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
        sxz += dx * dz;
        syz += dy * dz;
    }
    let det = sxx * syy - sxy * sxy;
    let scale = (sxx + syy).powi(2);
    if det <= 1e-9 * scale || scale == 0.0 {
        return None;
    }
    Some(((sxz * syy - syz * sxy) / det, (syz * sxx - sxz * sxy) / det))
}

/// Derives the feature channels from the observed statistics and the dense
/// prediction.
///
/// Normal angle: angle between the least-squares plane normal of the 3x3
/// neighbourhood of predicted means and the vertical. Concavity angle: mean
/// over known 4-neighbours `j` of `pi/2 - angle(n_i, p_j - p_i)`, so a bowl
/// (neighbours above the local plane) is positive. Cells with fewer than
/// three known cells in their 3x3 neighbourhood are unknown.
pub fn compute_features<T: Scalar>(grid: &ElevationGrid<T>, dense: &DenseGrid<T>) -> FeatureMap<T> {
    let geom = grid.geometry;
    let r = geom.cell_size;
    let mut fm = FeatureMap::empty(geom);
    let mut pts = Vec::with_capacity(9);
    for row in 0..geom.height {
        for col in 0..geom.width {
            let i = geom.index(row, col);
            let Some((mu_i, _)) = dense.get(row, col) else {
                continue;
            };
            let mu_i = mu_i.as_f64();
            pts.clear();
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (rr, cc) = (row as isize + dr, col as isize + dc);
                    if rr < 0 || cc < 0 || rr >= geom.height as isize || cc >= geom.width as isize {
                        continue;
                    }
                    if let Some((mu, _)) = dense.get(rr as usize, cc as usize) {
                        pts.push((dc as f64 * r, dr as f64 * r, mu.as_f64()));
                    }
                }
            }
            let Some((a, b)) = fit_plane(&pts) else {
                continue;
            };
            let norm = (1.0 + a * a + b * b).sqrt();
            let normal = (-a / norm, -b / norm, 1.0 / norm);
            let theta_n = (a * a + b * b).sqrt().atan();

            let mut sum = 0.0;
            let mut count = 0;
            for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                let (rr, cc) = (row as isize + dr, col as isize + dc);
                if rr < 0 || cc < 0 || rr >= geom.height as isize || cc >= geom.width as isize {
                    continue;
                }
                if let Some((mu_j, _)) = dense.get(rr as usize, cc as usize) {
                    let d = (dc as f64 * r, dr as f64 * r, mu_j.as_f64() - mu_i);
                    let len = (d.0 * d.0 + d.1 * d.1 + d.2 * d.2).sqrt();
                    let cos =
                        ((normal.0 * d.0 + normal.1 * d.1 + normal.2 * d.2) / len).clamp(-1.0, 1.0);
                    sum += FRAC_PI_2 - cos.acos();
                    count += 1;
                }
            }
            let theta_c = if count > 0 { sum / count as f64 } else { 0.0 };

            let cell = grid.cell(row, col);
            let (mu_d, var_d) = dense.get(row, col).unwrap();
            fm.planes[0][i] = if cell.observed() {
                cell.mean
            } else {
                T::zero()
            };
            fm.planes[1][i] = cell.variance().unwrap_or_else(T::zero);
            fm.planes[2][i] = mu_d;
            fm.planes[3][i] = var_d;
            fm.planes[4][i] = cell.spread().unwrap_or_else(T::zero);
            fm.planes[5][i] = T::lit(theta_n);
            fm.planes[6][i] = T::lit(theta_c);
            fm.known[i] = true;
        }
    }
    fm
}

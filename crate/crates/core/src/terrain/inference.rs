use std::f64::consts::PI;

use travgrid_nn::Scalar;

use super::{ElevationGrid, GridGeometry};

/// Parameters of the two-pass kernel inference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferenceParams {
    /// Kernel support radius (m).
    pub length_scale: f64,
    /// Range (elevation) bandwidth of the bilateral term (m).
    pub range_sigma: f64,
    /// Prior variance added as `beta / sum(w)` (m^2).
    pub prior_beta: f64,
}

impl Default for InferenceParams {
    fn default() -> Self {
        InferenceParams {
            length_scale: 0.6,
            range_sigma: 0.3,
            prior_beta: 0.01,
        }
    }
}

/// Compactly supported sparse kernel, `k(0) = 1`, `k(d) = 0` for `d >= l`.
pub fn sparse_kernel(d: f64, l: f64) -> f64 {
    if d >= l {
        return 0.0;
    }
    let a = 2.0 * PI * d / l;
    (2.0 + a.cos()) * (1.0 - d / l) / 3.0 + a.sin() / (2.0 * PI)
}

/// Dense predicted elevation mean and variance for every cell with kernel
/// support.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrid<T> {
    pub geometry: GridGeometry,
    pub mean: Vec<T>,
    pub variance: Vec<T>,
    pub known: Vec<bool>,
}

impl<T: Scalar> DenseGrid<T> {
    pub fn get(&self, row: usize, col: usize) -> Option<(T, T)> {
        let i = self.geometry.index(row, col);
        self.known[i].then(|| (self.mean[i], self.variance[i]))
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|&&k| k).count()
    }
}

/// Predicts `(mu, Sigma)` for every cell from the observed cells inside the
/// kernel support.
///
/// First pass: kernel-weighted mean `mu~`. Second pass: weights
/// `w_j = k(d_j) exp(-(mu^_j - mu~)^2 / (2 sigma_r^2))`,
/// `mu = sum w mu^ / sum w`,
/// `Sigma = sum w (Sigma^_j + (mu^_j - mu)^2) / sum w + beta / sum w`.
/// If the bilateral weights underflow, the first-pass weights are used.
/// Cells without any observed cell in support stay unknown.
pub fn infer_dense<T: Scalar>(grid: &ElevationGrid<T>, params: &InferenceParams) -> DenseGrid<T> {
    let geom = grid.geometry;
    let reach = (params.length_scale / geom.cell_size).ceil() as isize;
    let mut offsets = Vec::new();
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            let d = geom.cell_size * ((dr * dr + dc * dc) as f64).sqrt();
            let k = sparse_kernel(d, params.length_scale);
            if k > 0.0 {
                offsets.push((dr, dc, T::lit(k)));
            }
        }
    }

    let two_var = T::lit(2.0 * params.range_sigma * params.range_sigma);
    let beta = T::lit(params.prior_beta);
    let tiny = T::lit(1e-12);
    let n = geom.len();
    let mut out = DenseGrid {
        geometry: geom,
        mean: vec![T::zero(); n],
        variance: vec![T::zero(); n],
        known: vec![false; n],
    };
    let mut support: Vec<(T, T, T)> = Vec::with_capacity(offsets.len());

    for row in 0..geom.height {
        for col in 0..geom.width {
            support.clear();
            for &(dr, dc, k) in &offsets {
                let (r, c) = (row as isize + dr, col as isize + dc);
                if r < 0 || c < 0 || r >= geom.height as isize || c >= geom.width as isize {
                    continue;
                }
                let cell = grid.cell(r as usize, c as usize);
                if let Some(var) = cell.variance() {
                    support.push((k, cell.mean, var));
                }
            }
            let ksum = support.iter().fold(T::zero(), |a, s| a + s.0);
            if support.is_empty() || ksum <= T::zero() {
                continue;
            }
            let first = support.iter().fold(T::zero(), |a, s| a + s.0 * s.1) / ksum;

            let mut weights: Vec<T> = support
                .iter()
                .map(|&(k, m, _)| {
                    let d = m - first;
                    k * (-(d * d) / two_var).exp()
                })
                .collect();
            let mut wsum = weights.iter().fold(T::zero(), |a, &w| a + w);
            if wsum <= tiny * ksum {
                weights = support.iter().map(|s| s.0).collect();
                wsum = ksum;
            }
            let mu = support
                .iter()
                .zip(&weights)
                .fold(T::zero(), |a, (s, &w)| a + w * s.1)
                / wsum;
            let spread = support.iter().zip(&weights).fold(T::zero(), |a, (s, &w)| {
                let d = s.1 - mu;
                a + w * (s.2 + d * d)
            });
            let i = geom.index(row, col);
            out.mean[i] = mu;
            out.variance[i] = spread / wsum + beta / wsum;
            out.known[i] = true;
        }
    }
    out
}

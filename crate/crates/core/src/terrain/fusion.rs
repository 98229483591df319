use travgrid_nn::Scalar;

use super::GridGeometry;

/// Variance reported for cells holding fewer than two samples (m^2).
pub const VARIANCE_FLOOR: f64 = 1e-4;

/// Running elevation statistics of one cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElevationCell<T> {
    pub n: u32,
    pub mean: T,
    /// Sum of squared deviations from the mean.
    pub m2: T,
    pub z_min: T,
    pub z_max: T,
}

impl<T: Scalar> Default for ElevationCell<T> {
    fn default() -> Self {
        ElevationCell {
            n: 0,
            mean: T::zero(),
            m2: T::zero(),
            z_min: T::infinity(),
            z_max: T::neg_infinity(),
        }
    }
}

impl<T: Scalar> ElevationCell<T> {
    pub fn observed(&self) -> bool {
        self.n > 0
    }

    pub fn push(&mut self, z: T) {
        self.n += 1;
        let delta = z - self.mean;
        self.mean += delta / T::from_u32(self.n).unwrap();
        self.m2 += delta * (z - self.mean);
        self.z_min = self.z_min.min(z);
        self.z_max = self.z_max.max(z);
    }

    /// Combines two independent accumulations (pairwise update).
    pub fn merge(&self, other: &ElevationCell<T>) -> ElevationCell<T> {
        if other.n == 0 {
            return *self;
        }
        if self.n == 0 {
            return *other;
        }
        let (na, nb) = (T::from_u32(self.n).unwrap(), T::from_u32(other.n).unwrap());
        let n = na + nb;
        let delta = other.mean - self.mean;
        ElevationCell {
            n: self.n + other.n,
            mean: self.mean + delta * nb / n,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n,
            z_min: self.z_min.min(other.z_min),
            z_max: self.z_max.max(other.z_max),
        }
    }

    /// Population variance `m2 / n`, floored when `n < 2`; `None` when unobserved.
    pub fn variance(&self) -> Option<T> {
        match self.n {
            0 => None,
            1 => Some(T::lit(VARIANCE_FLOOR)),
            n => Some(self.m2 / T::from_u32(n).unwrap()),
        }
    }

    pub fn spread(&self) -> Option<T> {
        self.observed().then(|| self.z_max - self.z_min)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FuseReport {
    pub fused: usize,
    /// Points that fell outside the grid.
    pub skipped: usize,
}

impl std::ops::AddAssign for FuseReport {
    fn add_assign(&mut self, rhs: Self) {
        self.fused += rhs.fused;
        self.skipped += rhs.skipped;
    }
}

/// Grid of fused elevation statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ElevationGrid<T> {
    pub geometry: GridGeometry,
    cells: Vec<ElevationCell<T>>,
}

impl<T: Scalar> ElevationGrid<T> {
    pub fn new(geometry: GridGeometry) -> Self {
        ElevationGrid {
            geometry,
            cells: vec![ElevationCell::default(); geometry.len()],
        }
    }

    pub fn cells(&self) -> &[ElevationCell<T>] {
        &self.cells
    }

    pub fn cell(&self, row: usize, col: usize) -> &ElevationCell<T> {
        &self.cells[self.geometry.index(row, col)]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut ElevationCell<T> {
        let i = self.geometry.index(row, col);
        &mut self.cells[i]
    }

    pub fn observed_count(&self) -> usize {
        self.cells.iter().filter(|c| c.observed()).count()
    }

    /// Accumulates points (already expressed in the grid's frame) into their
    /// containing cells. Points outside the grid are counted and skipped.
    pub fn fuse_points(&mut self, points: &[[T; 3]]) -> FuseReport {
        let mut report = FuseReport::default();
        for p in points {
            match self.geometry.cell_of(p[0].as_f64(), p[1].as_f64()) {
                Some((r, c)) if p[2].is_finite() => {
                    let i = self.geometry.index(r, c);
                    self.cells[i].push(p[2]);
                    report.fused += 1;
                }
                _ => report.skipped += 1,
            }
        }
        report
    }

    /// Cell-wise [`ElevationCell::merge`] of two grids with equal geometry.
    pub fn merge(&self, other: &ElevationGrid<T>) -> crate::Result<ElevationGrid<T>> {
        if self.geometry != other.geometry {
            return Err(crate::error::invalid(
                "cannot merge grids with different geometry",
            ));
        }
        let cells = self
            .cells
            .iter()
            .zip(&other.cells)
            .map(|(a, b)| a.merge(b))
            .collect();
        Ok(ElevationGrid {
            geometry: self.geometry,
            cells,
        })
    }
}

use super::footprint::{rasterize_polygon, transform_footprint, Footprint};
use super::pose::VehiclePose;
use crate::terrain::GridGeometry;

/// Which poses contribute footprints to the map at time `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelWindow {
    /// Seconds before `t` (`t_p = t - past`).
    pub past: f64,
    /// Seconds after `t` (`t_f = t + future`).
    pub future: f64,
    /// Minimum spacing between rasterised footprints (s).
    pub sample_period: f64,
}

impl Default for LabelWindow {
    fn default() -> Self {
        LabelWindow {
            past: 30.0,
            future: 30.0,
            sample_period: 0.1,
        }
    }
}

/// Per-cell positive / unlabeled annotation of one map.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelGrid {
    pub geometry: GridGeometry,
    pub positive: Vec<bool>,
}

impl LabelGrid {
    pub fn unlabeled(geometry: GridGeometry) -> Self {
        LabelGrid {
            geometry,
            positive: vec![false; geometry.len()],
        }
    }

    pub fn is_positive(&self, row: usize, col: usize) -> bool {
        self.positive[self.geometry.index(row, col)]
    }

    pub fn positive_count(&self) -> usize {
        self.positive.iter().filter(|&&p| p).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub labels: LabelGrid,
    pub footprints: usize,
    pub warning: Option<String>,
}

/// Marks every cell covered by a footprint of a pose inside
/// `[t - past, t + future]` as positive. The map lives in the body frame of
/// `current`.
pub fn annotate_map(
    geometry: &GridGeometry,
    poses: &[VehiclePose],
    current: &VehiclePose,
    footprint: &Footprint,
    window: &LabelWindow,
) -> Annotation {
    let mut labels = LabelGrid::unlabeled(*geometry);
    let (t_p, t_f) = (current.stamp - window.past, current.stamp + window.future);
    let mut last: Option<f64> = None;
    let mut used = 0;
    let mut in_window: Vec<&VehiclePose> = poses
        .iter()
        .filter(|p| p.stamp >= t_p && p.stamp <= t_f)
        .collect();
    in_window.sort_by(|a, b| a.stamp.total_cmp(&b.stamp));
    for pose in in_window {
        if let Some(prev) = last {
            if pose.stamp - prev < window.sample_period - 1e-9 {
                continue;
            }
        }
        last = Some(pose.stamp);
        used += 1;
        let quad = transform_footprint(footprint, pose, current).map(|p| [p.x, p.y]);
        for i in rasterize_polygon(&quad, geometry) {
            labels.positive[i] = true;
        }
    }
    let warning =
        (used == 0).then(|| format!("no pose within [{t_p:.2}, {t_f:.2}] s; map left unlabeled"));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Annotation {
        labels,
        footprints: used,
        warning,
    }
}

//! Ground truth, PA / mIoU under maximum-overlap class matching, the
//! threshold baseline, and a PCA view of embeddings.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::disambiguation::{ClassGrid, UNKNOWN_CLASS};
use crate::error::{invalid, CoreError, Result};
use crate::labeling::LabelGrid;
use crate::terrain::render::write_ppm;
use crate::terrain::{Channel, FeatureMap, GridGeometry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Traversable,
    Risky,
    NonTraversable,
}

pub const NUM_LEVELS: usize = 3;

impl Level {
    pub const ALL: [Level; NUM_LEVELS] = [Level::Traversable, Level::Risky, Level::NonTraversable];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Traversable => "traversable",
            Level::Risky => "risky",
            Level::NonTraversable => "non_traversable",
        }
    }

    /// Green / yellow / red.
    pub fn color(self) -> [u8; 3] {
        match self {
            Level::Traversable => [40, 170, 60],
            Level::Risky => [235, 200, 40],
            Level::NonTraversable => [200, 40, 40],
        }
    }
}

/// Per-cell traversability level; `None` where no ground truth exists.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthGrid {
    pub geometry: GridGeometry,
    pub levels: Vec<Option<Level>>,
}

/// Maps the semantic labels of the points in each cell to a level. A cell is
/// traversable (risky) only when every point maps to traversable (risky);
/// any other mix is non-traversable. Cells without points have no level.
pub fn build_ground_truth<S: AsRef<str>>(
    cells: &[Vec<S>],
    mapping: &BTreeMap<String, Level>,
) -> Result<Vec<Option<Level>>> {
    cells
        .iter()
        .map(|pts| {
            let mut levels = Vec::with_capacity(pts.len());
            for p in pts {
                let l = mapping
                    .get(p.as_ref())
                    .ok_or_else(|| invalid(format!("unmapped semantic label '{}'", p.as_ref())))?;
                levels.push(*l);
            }
            Ok(if levels.is_empty() {
                None
            } else if levels.iter().all(|&l| l == Level::Traversable) {
                Some(Level::Traversable)
            } else if levels.iter().all(|&l| l == Level::Risky) {
                Some(Level::Risky)
            } else {
                Some(Level::NonTraversable)
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfusionMatrix {
    /// `counts[gt][pred]`; the extra last column counts cells without a
    /// prediction.
    pub counts: [[u64; NUM_LEVELS + 1]; NUM_LEVELS],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Score {
    pub pixel_accuracy: f64,
    pub mean_iou: f64,
    /// Per-level IoU, `None` when the level is absent from both grids.
    pub iou: [Option<f64>; NUM_LEVELS],
    /// Level assigned to each predicted class (index `c - 1`).
    pub mapping: Vec<Level>,
    /// Cells of each predicted class per ground-truth level.
    pub overlap: Vec<[u64; NUM_LEVELS]>,
    pub confusion: ConfusionMatrix,
}

/// Class-to-level overlap counts over cells known in both grids.
pub fn overlap_counts(
    pred: &ClassGrid,
    gt: &GroundTruthGrid,
    classes: usize,
) -> Result<Vec<[u64; NUM_LEVELS]>> {
    if pred.geometry != gt.geometry || pred.classes.len() != gt.levels.len() {
        return Err(CoreError::Shape(
            "prediction and ground-truth grids are not aligned".into(),
        ));
    }
    let mut overlap = vec![[0u64; NUM_LEVELS]; classes];
    for (&c, l) in pred.classes.iter().zip(&gt.levels) {
        if let (true, Some(l)) = (c != UNKNOWN_CLASS, l) {
            let ci = c as usize - 1;
            if ci >= classes {
                return Err(invalid(format!(
                    "predicted class {c} exceeds K = {classes}"
                )));
            }
            overlap[ci][l.index()] += 1;
        }
    }
    Ok(overlap)
}

/// Class 1 is traversable; every other class takes the level it overlaps
/// most (ties to the lower level index).
pub fn max_overlap_mapping(overlap: &[[u64; NUM_LEVELS]]) -> Vec<Level> {
    overlap
        .iter()
        .enumerate()
        .map(|(c, row)| {
            if c == 0 {
                return Level::Traversable;
            }
            let mut best = 0;
            for l in 1..NUM_LEVELS {
                if row[l] > row[best] {
                    best = l;
                }
            }
            Level::ALL[best]
        })
        .collect()
}

/// Scores `pred` under a fixed class-to-level mapping. Without `mask` the
/// cells known in both grids are scored; with `mask` every masked cell
/// with ground truth is scored and a missing prediction counts as wrong.
pub fn score_with_mapping(
    pred: &ClassGrid,
    gt: &GroundTruthGrid,
    mapping: &[Level],
    mask: Option<&[bool]>,
) -> Result<Score> {
    let overlap = overlap_counts(pred, gt, mapping.len())?;
    if let Some(m) = mask {
        if m.len() != gt.levels.len() {
            return Err(CoreError::Shape(
                "evaluation mask does not match the grid".into(),
            ));
        }
    }
    let mut cm = ConfusionMatrix::default();
    for (i, (&c, l)) in pred.classes.iter().zip(&gt.levels).enumerate() {
        let Some(l) = l else { continue };
        let scored = match mask {
            Some(m) => m[i],
            None => c != UNKNOWN_CLASS,
        };
        if !scored {
            continue;
        }
        let p = if c == UNKNOWN_CLASS {
            NUM_LEVELS
        } else {
            mapping[c as usize - 1].index()
        };
        cm.counts[l.index()][p] += 1;
    }
    let total = cm.total();
    let correct: u64 = (0..NUM_LEVELS).map(|l| cm.counts[l][l]).sum();
    let mut iou = [None; NUM_LEVELS];
    for (l, slot) in iou.iter_mut().enumerate() {
        let gt_l: u64 = cm.counts[l].iter().sum();
        let pred_l: u64 = (0..NUM_LEVELS).map(|g| cm.counts[g][l]).sum();
        let union = gt_l + pred_l - cm.counts[l][l];
        if union > 0 {
            *slot = Some(cm.counts[l][l] as f64 / union as f64);
        }
    }
    let present: Vec<f64> = iou.iter().flatten().copied().collect();
    Ok(Score {
        pixel_accuracy: if total > 0 {
            correct as f64 / total as f64
        } else {
            0.0
        },
        mean_iou: if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        },
        iou,
        mapping: mapping.to_vec(),
        overlap,
        confusion: cm,
    })
}

/// PA and mIoU under maximum-overlap matching with class 1 pinned to
/// traversable.
pub fn match_and_score(
    pred: &ClassGrid,
    gt: &GroundTruthGrid,
    classes: usize,
    mask: Option<&[bool]>,
) -> Result<Score> {
    let overlap = overlap_counts(pred, gt, classes)?;
    let mapping = max_overlap_mapping(&overlap);
    score_with_mapping(pred, gt, &mapping, mask)
}

/// Mapping report: one line per predicted class with its level and overlaps.
pub fn mapping_report(score: &Score) -> String {
    let mut s = String::from("class,level,traversable,risky,non_traversable\n");
    for (c, (l, o)) in score.mapping.iter().zip(&score.overlap).enumerate() {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            c + 1,
            l.name(),
            o[0],
            o[1],
            o[2]
        ));
    }
    s
}

/// Limits on height spread, normal angle and absolute concavity angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleThresholds {
    pub soft: [f64; 3],
    pub hard: [f64; 3],
}

fn rule_features(map: &FeatureMap<f32>, i: usize) -> [f64; 3] {
    [
        map.plane(Channel::HeightSpread)[i] as f64,
        map.plane(Channel::NormalAngle)[i] as f64,
        (map.plane(Channel::ConcavityAngle)[i] as f64).abs(),
    ]
}

fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let k = ((v.len() - 1) as f64 * q).round() as usize;
    v[k]
}

/// Soft limits are the 95th percentiles over known positive cells; hard
/// limits are `hard_factor` times larger.
pub fn calibrate_thresholds(
    map: &FeatureMap<f32>,
    labels: &LabelGrid,
    hard_factor: f64,
) -> Result<RuleThresholds> {
    if labels.geometry != map.geometry {
        return Err(CoreError::Shape("label grid does not match the map".into()));
    }
    let mut cols: [Vec<f64>; 3] = Default::default();
    for i in 0..map.geometry.len() {
        if map.known()[i] && labels.positive[i] {
            for (c, v) in cols.iter_mut().zip(rule_features(map, i)) {
                c.push(v);
            }
        }
    }
    let soft = cols.map(|c| percentile(c, 0.95));
    Ok(RuleThresholds {
        soft,
        hard: soft.map(|s| s * hard_factor),
    })
}

/// Class 1 (traversable) when every feature is within its soft limit, class
/// 3 (non-traversable) when any exceeds its hard limit, class 2 otherwise.
pub fn rule_baseline(map: &FeatureMap<f32>, th: &RuleThresholds) -> ClassGrid {
    let mut out = ClassGrid::unknown(map.geometry);
    for i in 0..map.geometry.len() {
        if !map.known()[i] {
            continue;
        }
        let f = rule_features(map, i);
        out.classes[i] = if (0..3).any(|k| f[k] > th.hard[k]) {
            3
        } else if (0..3).all(|k| f[k] <= th.soft[k]) {
            1
        } else {
            2
        };
    }
    out
}

/// Fixed mapping for [`rule_baseline`] output.
pub const RULE_MAPPING: [Level; 3] = [Level::Traversable, Level::Risky, Level::NonTraversable];

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub coords: Vec<[f64; 2]>,
    /// Variance along each returned component.
    pub variance: [f64; 2],
    /// Mean silhouette over the labels in embedding space; `None` when
    /// undefined (a single cluster or all points coincide).
    pub silhouette: Option<f64>,
}

/// Projects embeddings onto their top two principal directions (estimated
/// from the centred covariance; the raw vectors are projected, so unit
/// inputs give coordinates in `[-1, 1]`).
pub fn project_embeddings(embeddings: &[Vec<f32>], labels: &[usize]) -> Result<Projection> {
    let n = embeddings.len();
    if labels.len() != n {
        return Err(CoreError::Shape(
            "one label per embedding is required".into(),
        ));
    }
    let k = {
        let mut l = labels.to_vec();
        l.sort_unstable();
        l.dedup();
        l.len()
    };
    if n < k + 1 || n == 0 {
        return Err(invalid(format!(
            "need at least {} embeddings, got {n}",
            k + 1
        )));
    }
    let d = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != d) || d == 0 {
        return Err(CoreError::Shape(
            "embeddings must share a positive dimension".into(),
        ));
    }
    let x = DMatrix::from_fn(n, d, |r, c| embeddings[r][c] as f64);
    let mean = x.row_mean();
    let centred = DMatrix::from_fn(n, d, |r, c| x[(r, c)] - mean[c]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let comp = |j: usize| -> Option<(nalgebra::DVector<f64>, f64)> {
        order.get(j).map(|&i| {
            (
                eig.eigenvectors.column(i).into_owned(),
                eig.eigenvalues[i].max(0.0),
            )
        })
    };
    let (v0, l0) = comp(0).expect("d >= 1");
    let (v1, l1) = comp(1).unwrap_or_else(|| (nalgebra::DVector::zeros(d), 0.0));
    let coords = (0..n)
        .map(|r| {
            let row = x.row(r);
            [row.dot(&v0.transpose()), row.dot(&v1.transpose())]
        })
        .collect();
    Ok(Projection {
        coords,
        variance: [l0, l1],
        silhouette: silhouette(embeddings, labels),
    })
}

/// Mean silhouette coefficient with Euclidean distances.
pub fn silhouette(points: &[Vec<f32>], labels: &[usize]) -> Option<f64> {
    let n = points.len();
    let mut clusters: Vec<usize> = labels.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    if clusters.len() < 2 {
        return None;
    }
    let dist = |a: &[f32], b: &[f32]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    let mut any_spread = false;
    for i in 0..n {
        let mut sums = vec![(0.0, 0usize); clusters.len()];
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = dist(&points[i], &points[j]);
            any_spread |= d > 0.0;
            let c = clusters.binary_search(&labels[j]).unwrap();
            sums[c].0 += d;
            sums[c].1 += 1;
        }
        let own = clusters.binary_search(&labels[i]).unwrap();
        if sums[own].1 == 0 {
            continue;
        }
        let a = sums[own].0 / sums[own].1 as f64;
        let b = sums
            .iter()
            .enumerate()
            .filter(|(c, s)| *c != own && s.1 > 0)
            .map(|(_, s)| s.0 / s.1 as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    any_spread.then(|| total / n as f64)
}

/// Level image: green / yellow / red, black where unknown.
pub fn render_levels<W: Write>(
    out: &mut W,
    geometry: &GridGeometry,
    levels: &[Option<Level>],
) -> Result<()> {
    write_ppm(out, geometry, |i| levels[i].map(Level::color))
}

/// Prediction image through a class-to-level mapping.
pub fn render_prediction<W: Write>(out: &mut W, pred: &ClassGrid, mapping: &[Level]) -> Result<()> {
    write_ppm(out, &pred.geometry, |i| {
        let c = pred.classes[i];
        (c != UNKNOWN_CLASS).then(|| mapping[c as usize - 1].color())
    })
}

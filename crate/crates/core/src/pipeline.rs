//! End-to-end runs on synthetic scenes: drive, key-frame maps, labels,
//! tokens, training, inference and scoring, plus the ablation grid.

use std::fmt::Write as _;
use std::str::FromStr;

use log::{info, warn};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::disambiguation::{infer_map, ClassGrid, EpochMetrics, LossMode, Model, Trainer};
use crate::error::{CoreError, Result};
use crate::eval::{calibrate_thresholds, match_and_score, rule_baseline, GroundTruthGrid, Score};
use crate::labeling::{annotate_map, extract_tokens, LabelGrid, PatchToken, VehiclePose};
use crate::synthworld::{generate_scene, plan_trajectory, simulate_scans, Scan, Scene};
use crate::terrain::{
    compute_features, infer_dense, Channel, ElevationGrid, FeatureMap, GridGeometry,
    InferenceParams,
};

/// Map input form of the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputForm {
    /// Latest scan only, observed channels only.
    #[serde(rename = "s-bev")]
    SingleScan,
    /// All scans so far, observed channels only.
    #[serde(rename = "m-bev")]
    MultiScan,
    /// All scans so far with dense inference and every channel.
    #[serde(rename = "f")]
    Full,
}

impl InputForm {
    pub const ALL: [InputForm; 3] = [InputForm::SingleScan, InputForm::MultiScan, InputForm::Full];

    pub fn name(self) -> &'static str {
        match self {
            InputForm::SingleScan => "s-bev",
            InputForm::MultiScan => "m-bev",
            InputForm::Full => "f",
        }
    }
}

impl FromStr for InputForm {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        InputForm::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                CoreError::Config(format!(
                    "unknown input form '{s}' (expected s-bev, m-bev or f)"
                ))
            })
    }
}

/// Scene, planned poses and the scans taken along them.
#[derive(Clone, Debug)]
pub struct Drive {
    pub scene: Scene,
    pub poses: Vec<VehiclePose>,
    pub scans: Vec<Scan>,
}

fn every(period: f64, rate: f64) -> usize {
    ((period * rate).round() as usize).max(1)
}

pub fn simulate_drive(cfg: &RunConfig) -> Result<Drive> {
    let scene = generate_scene(&cfg.scene)?;
    let footprint = cfg.labeling.footprint()?;
    let poses = plan_trajectory(&scene, &footprint, &cfg.drive, cfg.scene.seed)?;
    let scan_poses: Vec<VehiclePose> = poses
        .iter()
        .step_by(every(cfg.map.scan_period, cfg.drive.rate))
        .copied()
        .collect();
    let scans = simulate_scans(&scene, &scan_poses);
    Ok(Drive {
        scene,
        poses,
        scans,
    })
}

/// Key-frame poses: one every `keyframe_period`, starting one period in.
pub fn keyframe_poses(cfg: &RunConfig, poses: &[VehiclePose]) -> Vec<VehiclePose> {
    let step = every(cfg.map.keyframe_period, cfg.drive.rate);
    poses.iter().skip(step).step_by(step).copied().collect()
}

/// Map grid in the body frame of `pose`, axis-aligned with that frame and
/// centred on the body-frame position of the world point `center`.
pub fn map_geometry(cfg: &RunConfig, pose: &VehiclePose, center: [f64; 2]) -> GridGeometry {
    let c = pose.to_body(&Vector3::new(center[0], center[1], 0.0));
    let n = cfg.map.cells();
    let half = n as f64 * cfg.map.cell_size / 2.0;
    GridGeometry::new(c.x - half, c.y - half, cfg.map.cell_size, n, n)
}

/// Fuses world-frame scan points into a grid in the body frame of `pose`.
pub fn fuse_scans(
    scans: &[Scan],
    pose: &VehiclePose,
    geometry: GridGeometry,
) -> ElevationGrid<f64> {
    let mut grid = ElevationGrid::new(geometry);
    for s in scans {
        let pts: Vec<[f64; 3]> = s
            .points
            .iter()
            .map(|p| {
                let b = pose.to_body(&Vector3::new(p[0], p[1], p[2]));
                [b.x, b.y, b.z]
            })
            .collect();
        grid.fuse_points(&pts);
    }
    grid
}

/// Feature map of the requested form. Bird's-eye-view forms keep the
/// observed channels of observed cells and zero everything inferred.
pub fn feature_map(
    grid: &ElevationGrid<f64>,
    params: &InferenceParams,
    form: InputForm,
) -> FeatureMap<f32> {
    if form == InputForm::Full {
        let dense = infer_dense(grid, params);
        return compute_features(grid, &dense).cast();
    }
    let mut map = FeatureMap::<f32>::empty(grid.geometry);
    for (i, cell) in grid.cells().iter().enumerate() {
        if !cell.observed() {
            continue;
        }
        map.plane_mut(Channel::ObservedMean)[i] = cell.mean as f32;
        map.plane_mut(Channel::ObservedVariance)[i] = cell.variance().unwrap_or(0.0) as f32;
        map.plane_mut(Channel::HeightSpread)[i] = cell.spread().unwrap_or(0.0) as f32;
        map.set_known(i, true);
    }
    map
}

/// Map of one key frame from the scans taken up to its time stamp; the
/// single-scan form keeps only the latest of them.
pub fn keyframe_map(
    cfg: &RunConfig,
    scans: &[Scan],
    pose: &VehiclePose,
    geometry: GridGeometry,
    form: InputForm,
) -> FeatureMap<f32> {
    let seen: Vec<Scan> = scans
        .iter()
        .filter(|s| s.pose.stamp <= pose.stamp + 1e-9)
        .cloned()
        .collect();
    let used = match form {
        InputForm::SingleScan => &seen[seen.len().saturating_sub(1)..],
        _ => &seen[..],
    };
    feature_map(
        &fuse_scans(used, pose, geometry),
        &cfg.map.inference(),
        form,
    )
}

/// One training / evaluation frame.
#[derive(Clone, Debug)]
pub struct KeyFrame {
    pub pose: VehiclePose,
    pub map: FeatureMap<f32>,
    /// Known mask of the full-feature map of the same frame; the common
    /// evaluation region of the input-form ablation.
    pub reference_known: Vec<bool>,
    pub labels: LabelGrid,
    pub ground_truth: GroundTruthGrid,
}

pub fn build_keyframes(cfg: &RunConfig, drive: &Drive, form: InputForm) -> Result<Vec<KeyFrame>> {
    let footprint = cfg.labeling.footprint()?;
    let window = cfg.labeling.window();
    let e = drive.scene.spec.extent;
    let mut frames = Vec::new();
    for pose in keyframe_poses(cfg, &drive.poses) {
        let geom = map_geometry(cfg, &pose, [e / 2.0, e / 2.0]);
        let map = keyframe_map(cfg, &drive.scans, &pose, geom, form);
        let reference_known = if form == InputForm::Full {
            map.known().to_vec()
        } else {
            keyframe_map(cfg, &drive.scans, &pose, geom, InputForm::Full)
                .known()
                .to_vec()
        };
        let ann = annotate_map(&geom, &drive.poses, &pose, &footprint, &window);
        if let Some(w) = &ann.warning {
            warn!("key frame at {:.1} s: {w}", pose.stamp);
        }
        let ground_truth = drive.scene.ground_truth_on(&geom, &pose);
        frames.push(KeyFrame {
            pose,
            map,
            reference_known,
            labels: ann.labels,
            ground_truth,
        });
    }
    if frames.is_empty() {
        return Err(CoreError::Invalid(
            "drive too short for a single key frame".into(),
        ));
    }
    Ok(frames)
}

pub fn build_tokens(cfg: &RunConfig, frames: &[KeyFrame]) -> Result<Vec<PatchToken>> {
    let tcfg = cfg.token_config()?;
    let mut tokens = Vec::new();
    for (f, frame) in frames.iter().enumerate() {
        tokens.extend(extract_tokens(&frame.map, &frame.labels, &tcfg, f as u32)?);
    }
    Ok(tokens)
}

/// Everything one training run produces.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub model: Model,
    pub tokens: Vec<PatchToken>,
    pub prediction: ClassGrid,
    pub ground_truth: GroundTruthGrid,
    /// Scored on cells with both a prediction and ground truth.
    pub score: Score,
    /// Scored on the full-feature known region; missing predictions count
    /// as wrong.
    pub reference_score: Score,
    pub baseline: Score,
}

impl RunOutcome {
    pub fn final_entropy(&self) -> f64 {
        self.metrics.last().map_or(f64::NAN, |m| m.entropy)
    }
}

/// Trains on all key frames and evaluates on the last one.
pub fn run_frames(cfg: &RunConfig, frames: &[KeyFrame]) -> Result<RunOutcome> {
    let mut tokens = build_tokens(cfg, frames)?;
    if tokens.is_empty() {
        return Err(CoreError::Invalid(
            "no tokens: every patch centre is unknown".into(),
        ));
    }
    let mut trainer = Trainer::new(cfg.train_config())?;
    let metrics = trainer.fit(&mut tokens, |m| {
        info!(
            "epoch {} l_sum {:.4} entropy {:.4}",
            m.epoch, m.sum, m.entropy
        );
    })?;
    let model = trainer.model();
    let last = frames.last().expect("non-empty");
    let tcfg = cfg.token_config()?;
    let k = cfg.tokens.classes;
    let prediction = infer_map(&model, &last.map, &tcfg)?;
    let score = match_and_score(&prediction, &last.ground_truth, k, None)?;
    let reference_score = match_and_score(
        &prediction,
        &last.ground_truth,
        k,
        Some(&last.reference_known),
    )?;
    let th = calibrate_thresholds(&last.map, &last.labels, cfg.eval.hard_factor)?;
    let baseline = match_and_score(&rule_baseline(&last.map, &th), &last.ground_truth, 3, None)?;
    Ok(RunOutcome {
        metrics,
        model,
        tokens,
        prediction,
        ground_truth: last.ground_truth.clone(),
        score,
        reference_score,
        baseline,
    })
}

pub fn run(cfg: &RunConfig, form: InputForm) -> Result<RunOutcome> {
    let drive = simulate_drive(cfg)?;
    let frames = build_keyframes(cfg, &drive, form)?;
    run_frames(cfg, &frames)
}

/// Cartesian grid of ablation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationPlan {
    pub forms: Vec<InputForm>,
    pub losses: Vec<LossMode>,
    pub classes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl AblationPlan {
    /// The single configuration described by `cfg`.
    pub fn single(cfg: &RunConfig) -> Self {
        AblationPlan {
            forms: vec![InputForm::Full],
            losses: vec![cfg.train.loss],
            classes: vec![cfg.tokens.classes],
            seeds: vec![cfg.train.seed],
        }
    }

    pub fn settings(&self) -> Vec<(InputForm, LossMode, usize, u64)> {
        let mut out = Vec::new();
        for &f in &self.forms {
            for &l in &self.losses {
                for &k in &self.classes {
                    for &s in &self.seeds {
                        out.push((f, l, k, s));
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub form: InputForm,
    pub loss: LossMode,
    pub classes: usize,
    pub seed: u64,
    pub pixel_accuracy: f64,
    pub mean_iou: f64,
    pub entropy: f64,
    pub final_epoch: EpochMetrics,
}

pub const ABLATION_CSV_HEADER: &str = "form,loss,classes,seed,pa,miou,entropy,l_cls,l_cont,l_sum";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATION_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let m = &r.final_epoch;
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.form.name(),
            r.loss.name(),
            r.classes,
            r.seed,
            r.pixel_accuracy,
            r.mean_iou,
            r.entropy,
            m.cls,
            m.cont,
            m.sum
        );
    }
    s
}

/// Runs every configuration of `plan`, at most `threads` at a time. Rows
/// come back in plan order whatever the thread count. Every form is scored
/// on the known region of the full-feature map.
pub fn ablate(cfg: &RunConfig, plan: &AblationPlan, threads: usize) -> Result<Vec<AblationRow>> {
    let drive = simulate_drive(cfg)?;
    let mut frames = Vec::new();
    for &f in &plan.forms {
        frames.push((f, build_keyframes(cfg, &drive, f)?));
    }
    let settings = plan.settings();
    let job =
        |&(form, loss, classes, seed): &(InputForm, LossMode, usize, u64)| -> Result<AblationRow> {
            let mut c = cfg.clone();
            c.train.loss = loss;
            c.tokens.classes = classes;
            c.train.seed = seed;
            c.validate()?;
            let fr = &frames
                .iter()
                .find(|(f, _)| *f == form)
                .expect("form built")
                .1;
            let out = run_frames(&c, fr)?;
            info!(
                "ablation {} {} K={} seed={}: mIoU {:.4}",
                form.name(),
                loss.name(),
                classes,
                seed,
                out.reference_score.mean_iou
            );
            Ok(AblationRow {
                form,
                loss,
                classes,
                seed,
                pixel_accuracy: out.reference_score.pixel_accuracy,
                mean_iou: out.reference_score.mean_iou,
                entropy: out.final_entropy(),
                final_epoch: out.metrics.last().cloned().expect("at least one epoch"),
            })
        };
    let threads = threads.max(1);
    let mut rows = Vec::with_capacity(settings.len());
    for chunk in settings.chunks(threads) {
        let results: Vec<Result<AblationRow>> = if threads == 1 {
            chunk.iter().map(job).collect()
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|st| s.spawn(|| job(st))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("ablation worker panicked"))
                    .collect()
            })
        };
        for r in results {
            rows.push(r?);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn form_names_parse() {
        for f in InputForm::ALL {
            assert_eq!(f.name().parse::<InputForm>().unwrap(), f);
        }
        assert!("bev".parse::<InputForm>().is_err());
    }

    #[test]
    fn plan_enumerates_the_product() {
        let plan = AblationPlan {
            forms: vec![InputForm::Full],
            losses: vec![LossMode::Cont, LossMode::Cls, LossMode::Sum],
            classes: vec![4],
            seeds: vec![1],
        };
        assert_eq!(plan.settings().len(), 3);
    }

    #[test]
    fn keyframes_start_one_period_in() {
        let cfg = RunConfig::default();
        let poses: Vec<VehiclePose> = (0..55)
            .map(|k| VehiclePose::from_yaw(k as f64 * 0.1, 0.0, 0.0, 0.0, 0.0))
            .collect();
        let stamps: Vec<f64> = keyframe_poses(&cfg, &poses)
            .iter()
            .map(|p| p.stamp)
            .collect();
        assert_eq!(stamps.len(), 2);
        assert!((stamps[0] - 2.0).abs() < 1e-9 && (stamps[1] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn map_covers_the_scene_for_a_level_pose() {
        let cfg = RunConfig::default();
        let pose = VehiclePose::from_yaw(0.0, 5.0, 20.9, 0.0, 0.0);
        let g = map_geometry(&cfg, &pose, [20.0, 20.0]);
        assert_eq!((g.width, g.height), (200, 200));
        assert!((g.origin_x + 5.0).abs() < 1e-9 && (g.origin_y + 20.9).abs() < 1e-9);
    }

    #[test]
    fn bev_forms_drop_inferred_channels() {
        let geom = GridGeometry::new(0.0, 0.0, 0.2, 10, 10);
        let mut grid = ElevationGrid::<f64>::new(geom);
        grid.fuse_points(&[[0.5, 0.5, 1.0], [0.5, 0.5, 1.2], [1.1, 1.1, 0.3]]);
        let map = feature_map(&grid, &InferenceParams::default(), InputForm::MultiScan);
        assert_eq!(map.known_count(), 2);
        let i = geom.index(2, 2);
        assert!((map.plane(Channel::ObservedMean)[i] - 1.1).abs() < 1e-6);
        for ch in [
            Channel::PredictedMean,
            Channel::PredictedVariance,
            Channel::NormalAngle,
            Channel::ConcavityAngle,
        ] {
            assert!(map.plane(ch).iter().all(|&v| v == 0.0));
        }
    }
}

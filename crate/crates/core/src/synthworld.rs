//! Seeded synthetic off-road scenes: an analytic heightfield over
//! rectangular terrain regions, simulated range-sparsified scans, a planned
//! straight drive through ground terrain, and exact per-cell ground truth.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};
use crate::eval::{GroundTruthGrid, Level};
use crate::labeling::{rasterize_polygon, transform_footprint, Footprint, VehiclePose};
use crate::terrain::GridGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerrainClass {
    Ground,
    Bush,
    Obstacle,
    Ditch,
}

impl TerrainClass {
    pub const ALL: [TerrainClass; 4] = [
        TerrainClass::Ground,
        TerrainClass::Bush,
        TerrainClass::Obstacle,
        TerrainClass::Ditch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TerrainClass::Ground => "ground",
            TerrainClass::Bush => "bush",
            TerrainClass::Obstacle => "obstacle",
            TerrainClass::Ditch => "ditch",
        }
    }

    pub fn level(self) -> Level {
        match self {
            TerrainClass::Ground => Level::Traversable,
            TerrainClass::Bush => Level::Risky,
            TerrainClass::Obstacle | TerrainClass::Ditch => Level::NonTraversable,
        }
    }
}

/// Axis-aligned rectangle `[x0, x1) x [y0, y1)` of one terrain class.
/// `height` is the bush canopy height, block height or ditch depth (m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub class: TerrainClass,
    pub height: f64,
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    fn overlaps(&self, o: &Region) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Random regions of all four classes around a ground corridor.
    Standard,
    /// Ground only.
    Flat,
    /// Exactly the regions listed in the spec.
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    /// Side of the square scene (m); the scene spans `[0, extent)^2`.
    pub extent: f64,
    /// Ground-truth cell size (m).
    pub cell_size: f64,
    pub layout: Layout,
    pub regions: Vec<Region>,
    /// Gaussian elevation noise (m).
    pub noise_sigma: f64,
    /// Candidate points per m^2 per scan before range thinning.
    pub scan_density: f64,
    /// Range (m) within which every candidate point is kept; beyond it the
    /// keep probability falls as `(range0 / range)^2`.
    pub full_density_range: f64,
    /// Amplitude of the low-frequency ground relief (m).
    pub relief: f64,
    /// Random layouts snap regions to this grid (m).
    pub snap: f64,
    /// Fraction of snap slots covered by regions in random layouts.
    pub coverage: f64,
    /// Centre line of the region-free driving corridor (m).
    pub corridor_y: f64,
    pub bush_height: (f64, f64),
    pub block_height: (f64, f64),
    pub ditch_depth: (f64, f64),
    /// Relative class weights (bush, obstacle, ditch) for random regions.
    pub class_weights: (f64, f64, f64),
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 42,
            extent: 40.0,
            cell_size: 0.2,
            layout: Layout::Standard,
            regions: Vec::new(),
            noise_sigma: 0.03,
            scan_density: 40.0,
            full_density_range: 6.0,
            relief: 0.1,
            snap: 2.2,
            coverage: 0.5,
            corridor_y: 20.9,
            bush_height: (0.25, 0.7),
            block_height: (1.2, 2.0),
            ditch_depth: (0.6, 1.0),
            class_weights: (0.45, 0.35, 0.2),
        }
    }
}

impl SceneSpec {
    /// Ground-only scene without relief or noise.
    pub fn flat(seed: u64) -> Self {
        SceneSpec {
            seed,
            layout: Layout::Flat,
            relief: 0.0,
            noise_sigma: 0.0,
            ..SceneSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0) || !(self.cell_size > 0.0) {
            return Err(CoreError::Config(
                "extent and cell_size must be positive".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0)
            || !(self.scan_density >= 0.0)
            || !(self.full_density_range > 0.0)
        {
            return Err(CoreError::Config(
                "noise_sigma and scan_density must be >= 0, full_density_range > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Generated scene: regions, relief phases and exact ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    /// World grid covering the scene.
    pub geometry: GridGeometry,
    pub regions: Vec<Region>,
    phases: [f64; 5],
    pub semantic: Vec<TerrainClass>,
    pub ground_truth: GroundTruthGrid,
}

fn draw(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.gen_range(range.0..range.1)
    } else {
        range.0
    }
}

fn random_layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<Region> {
    let slots = (spec.extent / spec.snap).floor() as usize;
    let corridor = (spec.corridor_y / spec.snap).floor() as usize;
    let mut taken = vec![false; slots * slots];
    for c in 0..slots {
        if corridor < slots {
            taken[corridor * slots + c] = true;
        }
    }
    let target = ((slots * slots) as f64 * spec.coverage).round() as usize;
    let (wb, wo, wd) = spec.class_weights;
    let total_w = wb + wo + wd;
    let mut covered = 0;
    let mut regions = Vec::new();
    for _ in 0..4000 {
        if covered >= target {
            break;
        }
        let (w, h) = (rng.gen_range(1..=4usize), rng.gen_range(1..=4usize));
        if w > slots || h > slots {
            continue;
        }
        let (c0, r0) = (rng.gen_range(0..=slots - w), rng.gen_range(0..=slots - h));
        let free = (r0..r0 + h).all(|r| (c0..c0 + w).all(|c| !taken[r * slots + c]));
        let u = rng.gen::<f64>() * total_w;
        let class = if u < wb {
            TerrainClass::Bush
        } else if u < wb + wo {
            TerrainClass::Obstacle
        } else {
            TerrainClass::Ditch
        };
        let height = match class {
            TerrainClass::Bush => draw(rng, spec.bush_height),
            TerrainClass::Obstacle => draw(rng, spec.block_height),
            _ => draw(rng, spec.ditch_depth),
        };
        if !free {
            continue;
        }
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                taken[r * slots + c] = true;
            }
        }
        covered += w * h;
        regions.push(Region {
            x0: c0 as f64 * spec.snap,
            y0: r0 as f64 * spec.snap,
            x1: (c0 + w) as f64 * spec.snap,
            y1: (r0 + h) as f64 * spec.snap,
            class,
            height,
        });
    }
    regions
}

/// Builds the scene. Explicit layouts are checked for overlaps.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phases = [0; 5].map(|_| rng.gen::<f64>() * TAU);
    let regions = match spec.layout {
        Layout::Flat => Vec::new(),
        Layout::Explicit => {
            for (i, a) in spec.regions.iter().enumerate() {
                if !(a.x1 > a.x0 && a.y1 > a.y0) {
                    return Err(invalid(format!("region {i} is empty")));
                }
                if let Some(j) = spec.regions[..i].iter().position(|b| a.overlaps(b)) {
                    return Err(invalid(format!("regions {j} and {i} overlap")));
                }
            }
            spec.regions.clone()
        }
        Layout::Standard => random_layout(spec, &mut rng),
    };
    let n = (spec.extent / spec.cell_size).round() as usize;
    let geometry = GridGeometry::new(0.0, 0.0, spec.cell_size, n, n);
    let mut scene = Scene {
        spec: spec.clone(),
        geometry,
        regions,
        phases,
        semantic: Vec::new(),
        ground_truth: GroundTruthGrid {
            geometry,
            levels: Vec::new(),
        },
    };
    let mut semantic = Vec::with_capacity(geometry.len());
    for row in 0..n {
        for col in 0..n {
            let (x, y) = geometry.cell_center(row, col);
            semantic.push(scene.class_at(x, y));
        }
    }
    scene.ground_truth.levels = semantic.iter().map(|c| Some(c.level())).collect();
    scene.semantic = semantic;
    Ok(scene)
}

impl Scene {
    pub fn region_at(&self, x: f64, y: f64) -> Option<&Region> {
        self.regions.iter().find(|r| r.contains(x, y))
    }

    pub fn class_at(&self, x: f64, y: f64) -> TerrainClass {
        self.region_at(x, y)
            .map_or(TerrainClass::Ground, |r| r.class)
    }

    /// Smooth low-frequency ground surface.
    pub fn ground_height(&self, x: f64, y: f64) -> f64 {
        let p = &self.phases;
        self.spec.relief
            * (0.6 * (TAU * x / 13.0 + p[0]).sin() * (TAU * y / 17.0 + p[1]).cos()
                + 0.4 * (TAU * (x + y) / 23.0 + p[2]).sin())
    }

    /// Analytic surface height at `(x, y)`.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        let g = self.ground_height(x, y);
        match self.region_at(x, y) {
            None => g,
            Some(r) => match r.class {
                TerrainClass::Ground => g,
                TerrainClass::Bush => {
                    let p = &self.phases;
                    let rough = (TAU * x / 0.37 + p[3]).sin() * (TAU * y / 0.29 + p[4]).sin();
                    g + r.height * (0.55 + 0.45 * rough)
                }
                TerrainClass::Obstacle => g + r.height,
                TerrainClass::Ditch => g - r.height,
            },
        }
    }

    /// Ground truth on an arbitrary grid expressed in the body frame of
    /// `pose`; cells whose world centre lies outside the scene are `None`.
    pub fn ground_truth_on(&self, geometry: &GridGeometry, pose: &VehiclePose) -> GroundTruthGrid {
        let e = self.spec.extent;
        let mut levels = Vec::with_capacity(geometry.len());
        for row in 0..geometry.height {
            for col in 0..geometry.width {
                let (x, y) = geometry.cell_center(row, col);
                let w = pose.to_world(&nalgebra::Vector3::new(x, y, 0.0));
                levels.push(
                    (w.x >= 0.0 && w.x < e && w.y >= 0.0 && w.y < e)
                        .then(|| self.class_at(w.x, w.y).level()),
                );
            }
        }
        GroundTruthGrid {
            geometry: *geometry,
            levels,
        }
    }
}

/// One simulated sweep: world-frame points and the sensor pose.
#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    pub pose: VehiclePose,
    pub points: Vec<[f64; 3]>,
}

/// Samples points uniformly over the scene for every sensor pose, keeping
/// each with probability `min(1, (range0 / range)^2)` and adding Gaussian
/// elevation noise. One batch per pose, in order.
pub fn simulate_scans(scene: &Scene, sensor_poses: &[VehiclePose]) -> Vec<Scan> {
    let spec = &scene.spec;
    let e = spec.extent;
    let count = (spec.scan_density * e * e).round() as usize;
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");
    sensor_poses
        .iter()
        .enumerate()
        .map(|(k, pose)| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(k as u64 + 1);
            let t = pose.translation();
            let mut points = Vec::new();
            for _ in 0..count {
                let (x, y) = (rng.gen::<f64>() * e, rng.gen::<f64>() * e);
                let range = ((x - t.x).powi(2) + (y - t.y).powi(2)).sqrt();
                let keep = (spec.full_density_range / range.max(1e-9)).powi(2).min(1.0);
                if rng.gen::<f64>() >= keep {
                    continue;
                }
                let dz = if spec.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                points.push([x, y, scene.height(x, y) + dz]);
            }
            Scan {
                pose: *pose,
                points,
            }
        })
        .collect()
}

/// Constant-speed straight drive along +x.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveSpec {
    /// m/s
    pub speed: f64,
    /// Poses per second.
    pub rate: f64,
    /// Free cells required around every footprint.
    pub margin_cells: usize,
}

impl Default for DriveSpec {
    fn default() -> Self {
        DriveSpec {
            speed: 2.0,
            rate: 10.0,
            margin_cells: 1,
        }
    }
}

fn footprint_clear(
    scene: &Scene,
    footprint: &Footprint,
    pose: &VehiclePose,
    margin: usize,
) -> bool {
    let g = scene.geometry;
    let origin = VehiclePose::identity(pose.stamp);
    let quad = transform_footprint(footprint, pose, &origin).map(|p| [p.x, p.y]);
    let cells = rasterize_polygon(&quad, &g);
    if cells.is_empty() {
        return false;
    }
    let m = margin as isize;
    cells.iter().all(|&i| {
        let (row, col) = ((i / g.width) as isize, (i % g.width) as isize);
        (-m..=m).all(|dr| {
            (-m..=m).all(|dc| {
                let (r, c) = (row + dr, col + dc);
                r >= 0
                    && c >= 0
                    && (r as usize) < g.height
                    && (c as usize) < g.width
                    && scene.ground_truth.levels[g.index(r as usize, c as usize)]
                        == Some(Level::Traversable)
            })
        })
    })
}

/// Plans a straight drive across the scene whose every footprint, grown by
/// `margin_cells`, lies on traversable cells. Among the valid lanes the one
/// closest to the spec's corridor line is used; `seed` breaks ties.
pub fn plan_trajectory(
    scene: &Scene,
    footprint: &Footprint,
    drive: &DriveSpec,
    seed: u64,
) -> Result<Vec<VehiclePose>> {
    if !(drive.speed > 0.0) || !(drive.rate > 0.0) {
        return Err(CoreError::Config(
            "drive speed and rate must be positive".into(),
        ));
    }
    let g = scene.geometry;
    let pts = footprint.polygon_order();
    let reach_x = pts.iter().map(|p| p.x.abs()).fold(0.0, f64::max);
    let pad = reach_x + (drive.margin_cells as f64 + 1.0) * g.cell_size;
    let (x_start, x_end) = (pad, scene.spec.extent - pad);
    if x_end <= x_start {
        return Err(invalid("scene too small for the vehicle"));
    }
    let dt = 1.0 / drive.rate;
    let steps = ((x_end - x_start) / (drive.speed * dt)).floor() as usize;
    let lane = |y: f64| -> Vec<VehiclePose> {
        (0..=steps)
            .map(|k| {
                VehiclePose::from_yaw(
                    k as f64 * dt,
                    x_start + drive.speed * dt * k as f64,
                    y,
                    0.0,
                    0.0,
                )
            })
            .collect()
    };
    let mut best: Vec<(f64, f64)> = Vec::new();
    for row in 0..g.height {
        let (_, y) = g.cell_center(row, 0);
        let d = (y - scene.spec.corridor_y).abs();
        if best.first().is_some_and(|&(bd, _)| d > bd + 1e-9) {
            continue;
        }
        let poses = lane(y);
        if poses
            .iter()
            .all(|p| footprint_clear(scene, footprint, p, drive.margin_cells))
        {
            if best.first().is_some_and(|&(bd, _)| d < bd - 1e-9) {
                best.clear();
            }
            best.push((d, y));
        }
    }
    if best.is_empty() {
        return Err(invalid("no traversable corridor for a straight drive"));
    }
    let pick = ChaCha8Rng::seed_from_u64(seed).gen_range(0..best.len());
    Ok(lane(best[pick].1))
}

const SCAN_MAGIC: &[u8; 4] = b"TSCN";
const SCAN_VERSION: u32 = 1;

/// Scan file: `TSCN`, version, scan count, then per scan the stamp, pose
/// translation (3 x f64) and quaternion `w, x, y, z` (4 x f64), the point
/// count (u32) and `x, y, z` world coordinates as f64. Little-endian.
pub fn write_scans<W: Write>(out: &mut W, scans: &[Scan]) -> Result<()> {
    out.write_all(SCAN_MAGIC)?;
    out.write_all(&SCAN_VERSION.to_le_bytes())?;
    out.write_all(&(scans.len() as u32).to_le_bytes())?;
    for s in scans {
        let t = s.pose.translation();
        let q = s.pose.quaternion();
        for v in [s.pose.stamp, t.x, t.y, t.z, q[0], q[1], q[2], q[3]] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&(s.points.len() as u32).to_le_bytes())?;
        for p in &s.points {
            for v in p {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_scans<R: Read>(input: &mut R) -> Result<Vec<Scan>> {
    let bad = |d: String| CoreError::Format {
        what: "scan file",
        detail: d,
    };
    let mut b4 = [0u8; 4];
    input
        .read_exact(&mut b4)
        .map_err(|_| bad("missing header".into()))?;
    if &b4 != SCAN_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let u32_at = |input: &mut R| -> Result<u32> {
        let mut b = [0u8; 4];
        input
            .read_exact(&mut b)
            .map_err(|e| bad(format!("truncated: {e}")))?;
        Ok(u32::from_le_bytes(b))
    };
    let version = u32_at(input)?;
    if version != SCAN_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = u32_at(input)? as usize;
    let f64_at = |input: &mut R| -> Result<f64> {
        let mut b = [0u8; 8];
        input.read_exact(&mut b).map_err(|e| CoreError::Format {
            what: "scan file",
            detail: format!("truncated: {e}"),
        })?;
        Ok(f64::from_le_bytes(b))
    };
    let mut scans = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let mut h = [0.0; 8];
        for v in h.iter_mut() {
            *v = f64_at(input)?;
        }
        let pose =
            VehiclePose::from_quaternion(h[0], [h[1], h[2], h[3]], [h[4], h[5], h[6], h[7]])?;
        let count = u32_at(input)? as usize;
        let mut points = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            points.push([f64_at(input)?, f64_at(input)?, f64_at(input)?]);
        }
        scans.push(Scan { pose, points });
    }
    Ok(scans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::ElevationGrid;

    #[test]
    fn flat_scene_is_flat_and_traversable() {
        let s = generate_scene(&SceneSpec::flat(1)).unwrap();
        assert!(s.regions.is_empty());
        assert_eq!(s.height(3.3, 17.1), 0.0);
        assert!(s
            .ground_truth
            .levels
            .iter()
            .all(|l| *l == Some(Level::Traversable)));
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(&SceneSpec::default()).unwrap();
        let b = generate_scene(&SceneSpec::default()).unwrap();
        assert_eq!(a, b);
        assert!(!a.regions.is_empty());
        let c = generate_scene(&SceneSpec {
            seed: 7,
            ..SceneSpec::default()
        })
        .unwrap();
        assert_ne!(a.regions, c.regions);
    }

    #[test]
    fn obstacles_stand_above_ground() {
        let s = generate_scene(&SceneSpec::default()).unwrap();
        let g = s.geometry;
        let (mut obs, mut gnd) = ((0.0, 0usize), (0.0, 0usize));
        for row in 0..g.height {
            for col in 0..g.width {
                let (x, y) = g.cell_center(row, col);
                match s.class_at(x, y) {
                    TerrainClass::Obstacle => obs = (obs.0 + s.height(x, y), obs.1 + 1),
                    TerrainClass::Ground => gnd = (gnd.0 + s.height(x, y), gnd.1 + 1),
                    _ => {}
                }
            }
        }
        assert!(obs.1 > 0);
        assert!(obs.0 / obs.1 as f64 - gnd.0 / gnd.1 as f64 >= s.spec.block_height.0);
    }

    #[test]
    fn overlapping_regions_are_rejected() {
        let r = |x0, class| Region {
            x0,
            y0: 0.0,
            x1: x0 + 2.0,
            y1: 2.0,
            class,
            height: 1.0,
        };
        let spec = SceneSpec {
            layout: Layout::Explicit,
            regions: vec![r(0.0, TerrainClass::Bush), r(1.0, TerrainClass::Ditch)],
            ..SceneSpec::default()
        };
        assert!(generate_scene(&spec).is_err());
    }

    #[test]
    fn noiseless_dense_scans_reproduce_surface() {
        // piecewise-constant surface aligned with the cells
        let spec = SceneSpec {
            scan_density: 200.0,
            noise_sigma: 0.0,
            relief: 0.0,
            extent: 4.0,
            layout: Layout::Explicit,
            regions: vec![
                Region {
                    x0: 0.0,
                    y0: 0.0,
                    x1: 2.0,
                    y1: 1.0,
                    class: TerrainClass::Obstacle,
                    height: 1.5,
                },
                Region {
                    x0: 2.0,
                    y0: 2.0,
                    x1: 4.0,
                    y1: 4.0,
                    class: TerrainClass::Ditch,
                    height: 0.7,
                },
            ],
            ..SceneSpec::default()
        };
        let s = generate_scene(&spec).unwrap();
        let scans = simulate_scans(&s, &[VehiclePose::from_yaw(0.0, 2.0, 2.0, 0.0, 0.0)]);
        let mut grid = ElevationGrid::<f64>::new(s.geometry);
        grid.fuse_points(&scans[0].points);
        let g = s.geometry;
        let mut observed = 0;
        for row in 0..g.height {
            for col in 0..g.width {
                let c = grid.cell(row, col);
                if c.observed() {
                    observed += 1;
                    let (x, y) = g.cell_center(row, col);
                    assert!((c.mean - s.height(x, y)).abs() < 1e-6);
                }
            }
        }
        assert!(observed > g.len() * 9 / 10);
    }

    #[test]
    fn zero_density_gives_empty_batches() {
        let s = generate_scene(&SceneSpec {
            scan_density: 0.0,
            ..SceneSpec::default()
        })
        .unwrap();
        let scans = simulate_scans(&s, &[VehiclePose::identity(0.0); 3]);
        assert_eq!(scans.len(), 3);
        assert!(scans.iter().all(|s| s.points.is_empty()));
    }

    #[test]
    fn trajectory_stays_on_traversable_cells() {
        let s = generate_scene(&SceneSpec::default()).unwrap();
        let fp = Footprint::rectangle(2.0, 1.6).unwrap();
        let poses = plan_trajectory(&s, &fp, &DriveSpec::default(), 3).unwrap();
        assert!(poses.len() > 100);
        let origin = VehiclePose::identity(0.0);
        for p in &poses {
            let quad = transform_footprint(&fp, p, &origin).map(|v| [v.x, v.y]);
            for i in rasterize_polygon(&quad, &s.geometry) {
                assert_eq!(s.ground_truth.levels[i], Some(Level::Traversable));
            }
        }
        assert_eq!(
            poses,
            plan_trajectory(&s, &fp, &DriveSpec::default(), 3).unwrap()
        );
        assert!((poses[1].stamp - 0.1).abs() < 1e-12);
    }

    #[test]
    fn blocked_scene_has_no_corridor() {
        let spec = SceneSpec {
            layout: Layout::Explicit,
            regions: vec![Region {
                x0: 19.0,
                y0: 0.0,
                x1: 21.0,
                y1: 40.0,
                class: TerrainClass::Obstacle,
                height: 1.5,
            }],
            ..SceneSpec::default()
        };
        let s = generate_scene(&spec).unwrap();
        let fp = Footprint::rectangle(2.0, 1.6).unwrap();
        assert!(plan_trajectory(&s, &fp, &DriveSpec::default(), 0).is_err());
    }

    #[test]
    fn scan_file_round_trip() {
        let scans = vec![Scan {
            pose: VehiclePose::from_yaw(1.0, 2.0, 3.0, 0.0, 0.4),
            points: vec![[1.0, 2.0, 0.5], [3.5, 1.25, -0.1]],
        }];
        let mut buf = Vec::new();
        write_scans(&mut buf, &scans).unwrap();
        let back = read_scans(&mut buf.as_slice()).unwrap();
        assert_eq!(back[0].points, scans[0].points);
        assert!(
            (back[0].pose.rotation() - scans[0].pose.rotation())
                .abs()
                .max()
                < 1e-12
        );
    }
}

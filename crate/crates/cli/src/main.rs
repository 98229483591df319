//! `travgrid`: scene generation, mapping, labeling, training, inference,
//! evaluation, rendering and ablation grids from the command line.
//!
//! Every subcommand reads and writes inside the `--out` directory, so the
//! stages chain: `synth-gen`, `build-map`, `auto-label`, `train`, `infer`,
//! `eval`, `render`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use travgrid_core::config::RunConfig;
use travgrid_core::disambiguation::{
    infer_map, metrics_csv, read_class_grid, write_class_grid, LossMode, Model, Trainer,
};
use travgrid_core::eval::{
    calibrate_thresholds, mapping_report, match_and_score, render_levels, render_prediction,
    rule_baseline,
};
use travgrid_core::labeling::io::{read_poses, read_tokens, write_poses, write_tokens};
use travgrid_core::labeling::{annotate_map, extract_tokens, PseudoLabel, VehiclePose};
use travgrid_core::pipeline::{
    ablate, ablation_csv, keyframe_map, keyframe_poses, map_geometry, simulate_drive, AblationPlan,
    InputForm,
};
use travgrid_core::synthworld::{generate_scene, read_scans, write_scans};
use travgrid_core::terrain::io::{read_map, write_map};
use travgrid_core::terrain::FeatureMap;

const SCANS: &str = "scans.bin";
const POSES: &str = "poses.txt";
const MAPS: &str = "maps";
const TOKENS: &str = "tokens.bin";
const MODEL: &str = "model.ckpt";
const METRICS: &str = "metrics.csv";
const PRED: &str = "pred";
const RENDER: &str = "render";

#[derive(Parser)]
#[command(
    name = "travgrid",
    version,
    about = "Self-supervised terrain traversability"
)]
struct Cli {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Working directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write its scans and vehicle poses.
    SynthGen,
    /// Fuse scans into one feature map per key frame.
    BuildMap {
        /// Input form: f, m-bev or s-bev.
        #[arg(long, default_value = "f")]
        form: InputForm,
    },
    /// Label the maps from the trajectory and cut them into tokens.
    AutoLabel,
    /// Train encoder and classifier on the tokens.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        /// sum, cls or cont.
        #[arg(long)]
        loss: Option<String>,
    },
    /// Classify every map with the trained model.
    Infer,
    /// Score predictions against the synthetic ground truth.
    Eval,
    /// Write ground-truth and prediction images.
    Render,
    /// Run a grid of training configurations and report one row each.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct AblateArgs {
    /// Comma-separated loss modes.
    #[arg(long, value_delimiter = ',')]
    loss: Vec<String>,
    /// Comma-separated input forms.
    #[arg(long, value_delimiter = ',')]
    forms: Vec<InputForm>,
    /// Comma-separated prototype counts.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<usize>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    let out = cli.out.as_path();
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    match cli.command {
        Command::SynthGen => synth_gen(&cfg, out),
        Command::BuildMap { form } => build_map(&cfg, out, form),
        Command::AutoLabel => auto_label(&cfg, out),
        Command::Train { epochs, loss } => {
            if let Some(e) = epochs {
                cfg.schedules.epochs = e;
            }
            if let Some(l) = loss {
                cfg.train.loss = LossMode::parse(&l)?;
            }
            cfg.validate()?;
            train(&cfg, out)
        }
        Command::Infer => infer(&cfg, out),
        Command::Eval => eval(&cfg, out),
        Command::Render => render(&cfg, out),
        Command::Ablate(args) => run_ablation(&cfg, out, args),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn open(path: &Path, hint: &str) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| {
        format!("cannot open {} (run `{hint}` first)", path.display())
    })?))
}

fn frame_name(i: usize, ext: &str) -> String {
    format!("frame_{i:03}.{ext}")
}

/// Files `frame_NNN.<ext>` in `dir`, in frame order.
fn frame_files(dir: &Path, ext: &str, hint: &str) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    while dir.join(frame_name(files.len(), ext)).is_file() {
        files.push(dir.join(frame_name(files.len(), ext)));
    }
    if files.is_empty() {
        bail!("no {ext} files in {} (run `{hint}` first)", dir.display());
    }
    Ok(files)
}

fn load_poses(out: &Path) -> Result<Vec<VehiclePose>> {
    Ok(read_poses(open(&out.join(POSES), "synth-gen")?)?)
}

fn load_maps(out: &Path) -> Result<Vec<FeatureMap<f32>>> {
    frame_files(&out.join(MAPS), "map", "build-map")?
        .iter()
        .map(|p| Ok(read_map(&mut open(p, "build-map")?)?))
        .collect()
}

fn scene_center(cfg: &RunConfig) -> [f64; 2] {
    let e = cfg.scene.extent;
    [e / 2.0, e / 2.0]
}

fn synth_gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    let drive = simulate_drive(cfg)?;
    write_scans(&mut create(&out.join(SCANS))?, &drive.scans)?;
    write_poses(create(&out.join(POSES))?, &drive.poses)?;
    let points: usize = drive.scans.iter().map(|s| s.points.len()).sum();
    println!(
        "{} poses, {} scans, {} points",
        drive.poses.len(),
        drive.scans.len(),
        points
    );
    Ok(())
}

fn build_map(cfg: &RunConfig, out: &Path, form: InputForm) -> Result<()> {
    let scans = read_scans(&mut open(&out.join(SCANS), "synth-gen")?)?;
    let poses = load_poses(out)?;
    let dir = out.join(MAPS);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    let mut frames = keyframe_poses(cfg, &poses);
    if scans.is_empty() {
        warn!("no scans to fuse; writing an empty map");
        let pose = frames
            .first()
            .or(poses.first())
            .copied()
            .unwrap_or_else(|| VehiclePose::identity(0.0));
        let geom = map_geometry(cfg, &pose, scene_center(cfg));
        write_map(
            &mut create(&dir.join(frame_name(0, "map")))?,
            &FeatureMap::empty(geom),
        )?;
        return Ok(());
    }
    if frames.is_empty() {
        bail!("trajectory too short for a single key frame");
    }
    for (i, pose) in frames.drain(..).enumerate() {
        let geom = map_geometry(cfg, &pose, scene_center(cfg));
        let map = keyframe_map(cfg, &scans, &pose, geom, form);
        info!(
            "key frame {i} at {:.1} s: {} known cells",
            pose.stamp,
            map.known_count()
        );
        write_map(&mut create(&dir.join(frame_name(i, "map")))?, &map)?;
    }
    Ok(())
}

fn auto_label(cfg: &RunConfig, out: &Path) -> Result<()> {
    let maps = load_maps(out)?;
    let poses = load_poses(out)?;
    let frames = keyframe_poses(cfg, &poses);
    let footprint = cfg.labeling.footprint()?;
    let tcfg = cfg.token_config()?;
    let mut tokens = Vec::new();
    for (i, map) in maps.iter().enumerate() {
        let Some(pose) = frames.get(i) else {
            bail!("map {i} has no key-frame pose; rebuild the maps");
        };
        let ann = annotate_map(
            &map.geometry,
            &poses,
            pose,
            &footprint,
            &cfg.labeling.window(),
        );
        tokens.extend(extract_tokens(map, &ann.labels, &tcfg, i as u32)?);
    }
    let positive = tokens
        .iter()
        .filter(|t| t.label == PseudoLabel::Positive)
        .count();
    write_tokens(create(&out.join(TOKENS))?, &tcfg, &tokens)?;
    println!("{} tokens, {} positive", tokens.len(), positive);
    Ok(())
}

fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (k, m, mut tokens) = read_tokens(open(&out.join(TOKENS), "auto-label")?)?;
    if k != cfg.tokens.classes || m != cfg.tokens.patch {
        bail!(
            "tokens were cut for K={k}, M={m} but the config has K={}, M={}; rerun auto-label",
            cfg.tokens.classes,
            cfg.tokens.patch
        );
    }
    if tokens.is_empty() {
        bail!("token file is empty");
    }
    let mut trainer = Trainer::new(cfg.train_config())?;
    let metrics = trainer.fit(&mut tokens, |m| {
        info!(
            "epoch {} l_cls {:.4} l_cont {:.4} entropy {:.4}",
            m.epoch, m.cls, m.cont, m.entropy
        );
    })?;
    trainer.model().save(&out.join(MODEL))?;
    fs::write(out.join(METRICS), metrics_csv(&metrics))?;
    if trainer.fallbacks > 0 {
        warn!("{} masked predictions fell back", trainer.fallbacks);
    }
    if let Some(m) = metrics.last() {
        println!(
            "{}\n{}",
            travgrid_core::disambiguation::EpochMetrics::CSV_HEADER,
            m.csv_row()
        );
    }
    Ok(())
}

fn load_model(cfg: &RunConfig, out: &Path) -> Result<Model> {
    let path = out.join(MODEL);
    if !path.is_file() {
        bail!("cannot open {} (run `train` first)", path.display());
    }
    Model::load(&path, cfg.encoder_config(), cfg.tokens.classes)
        .with_context(|| format!("{} does not match the configuration", path.display()))
}

fn infer(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = load_model(cfg, out)?;
    let tcfg = cfg.token_config()?;
    let dir = out.join(PRED);
    fs::create_dir_all(&dir)?;
    for (i, map) in load_maps(out)?.iter().enumerate() {
        let grid = infer_map(&model, map, &tcfg)?;
        write_class_grid(&mut create(&dir.join(frame_name(i, "cls")))?, &grid)?;
        info!("frame {i}: {} cells classified", grid.known_count());
    }
    Ok(())
}

fn eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let scene = generate_scene(&cfg.scene)?;
    let poses = load_poses(out)?;
    let frames = keyframe_poses(cfg, &poses);
    let maps = load_maps(out)?;
    let preds = frame_files(&out.join(PRED), "cls", "infer")?;
    let footprint = cfg.labeling.footprint()?;
    let mut csv = String::from("frame,pa,miou,baseline_pa,baseline_miou\n");
    let mut report = String::new();
    for (i, path) in preds.iter().enumerate() {
        let pred = read_class_grid(&mut open(path, "infer")?)?;
        let (Some(pose), Some(map)) = (frames.get(i), maps.get(i)) else {
            bail!("prediction {i} has no matching map or pose");
        };
        let gt = scene.ground_truth_on(&pred.geometry, pose);
        let score = match_and_score(&pred, &gt, cfg.tokens.classes, None)?;
        let ann = annotate_map(
            &map.geometry,
            &poses,
            pose,
            &footprint,
            &cfg.labeling.window(),
        );
        let base = calibrate_thresholds(map, &ann.labels, cfg.eval.hard_factor)
            .and_then(|th| match_and_score(&rule_baseline(map, &th), &gt, 3, None));
        let (bpa, bmiou) = match base {
            Ok(b) => (b.pixel_accuracy, b.mean_iou),
            Err(e) => {
                warn!("frame {i}: no rule baseline ({e})");
                (f64::NAN, f64::NAN)
            }
        };
        csv.push_str(&format!(
            "{i},{:.6},{:.6},{bpa:.6},{bmiou:.6}\n",
            score.pixel_accuracy, score.mean_iou
        ));
        report = format!("frame {i}\n{}", mapping_report(&score));
    }
    fs::write(out.join("eval.csv"), &csv)?;
    fs::write(out.join("mapping.txt"), &report)?;
    print!("{csv}{report}");
    Ok(())
}

fn render(cfg: &RunConfig, out: &Path) -> Result<()> {
    let scene = generate_scene(&cfg.scene)?;
    let poses = load_poses(out)?;
    let frames = keyframe_poses(cfg, &poses);
    let dir = out.join(RENDER);
    fs::create_dir_all(&dir)?;
    for (i, path) in frame_files(&out.join(PRED), "cls", "infer")?
        .iter()
        .enumerate()
    {
        let pred = read_class_grid(&mut open(path, "infer")?)?;
        let Some(pose) = frames.get(i) else {
            bail!("prediction {i} has no key-frame pose");
        };
        let gt = scene.ground_truth_on(&pred.geometry, pose);
        let score = match_and_score(&pred, &gt, cfg.tokens.classes, None)?;
        let mut f = create(&dir.join(format!("frame_{i:03}_gt.ppm")))?;
        render_levels(&mut f, &gt.geometry, &gt.levels)?;
        f.flush()?;
        let mut f = create(&dir.join(format!("frame_{i:03}_pred.ppm")))?;
        render_prediction(&mut f, &pred, &score.mapping)?;
        f.flush()?;
    }
    println!("images written to {}", dir.display());
    Ok(())
}

fn threads() -> Result<usize> {
    match std::env::var("TRAVGRID_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => bail!("TRAVGRID_THREADS must be a positive integer, got '{v}'"),
        },
        Err(_) => Ok(1),
    }
}

fn run_ablation(cfg: &RunConfig, out: &Path, args: AblateArgs) -> Result<()> {
    let mut plan = AblationPlan::single(cfg);
    if !args.loss.is_empty() {
        plan.losses = args
            .loss
            .iter()
            .map(|l| LossMode::parse(l))
            .collect::<Result<_, _>>()?;
    }
    if !args.forms.is_empty() {
        plan.forms = args.forms;
    }
    if !args.classes.is_empty() {
        plan.classes = args.classes;
    }
    if !args.seeds.is_empty() {
        plan.seeds = args.seeds;
    }
    let rows = ablate(cfg, &plan, threads()?)?;
    let csv = ablation_csv(&rows);
    fs::write(out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

//! Trains and scores on the standard synthetic scene, printing timings.

use std::time::Instant;

use travgrid_core::config::RunConfig;
use travgrid_core::eval::mapping_report;
use travgrid_core::pipeline::{
    build_keyframes, build_tokens, run_frames, simulate_drive, InputForm,
};

fn main() -> travgrid_core::Result<()> {
    let mut cfg = match std::env::args().nth(2) {
        Some(path) => RunConfig::load(path.as_ref())?,
        None => RunConfig::default(),
    };
    if let Some(e) = std::env::args().nth(1) {
        cfg.schedules.epochs = e.parse().expect("epochs");
    }
    let t0 = Instant::now();
    let drive = simulate_drive(&cfg)?;
    let frames = build_keyframes(&cfg, &drive, InputForm::Full)?;
    let tokens = build_tokens(&cfg, &frames)?;
    let pos = tokens
        .iter()
        .filter(|t| t.label == travgrid_core::labeling::PseudoLabel::Positive)
        .count();
    println!(
        "poses {} scans {} frames {} tokens {} positive {} in {:.1?}",
        drive.poses.len(),
        drive.scans.len(),
        frames.len(),
        tokens.len(),
        pos,
        t0.elapsed()
    );
    let out = run_frames(&cfg, &frames)?;
    for m in &out.metrics {
        println!("{}", m.csv_row());
    }
    println!(
        "PA {:.4} mIoU {:.4} entropy {:.4} / ln K {:.4}",
        out.score.pixel_accuracy,
        out.score.mean_iou,
        out.final_entropy(),
        (cfg.tokens.classes as f64).ln()
    );
    println!(
        "reference PA {:.4} mIoU {:.4}",
        out.reference_score.pixel_accuracy, out.reference_score.mean_iou
    );
    println!(
        "baseline PA {:.4} mIoU {:.4}",
        out.baseline.pixel_accuracy, out.baseline.mean_iou
    );
    print!("{}", mapping_report(&out.score));
    println!("iou {:?}", out.score.iou);
    println!("total {:.1?}", t0.elapsed());
    Ok(())
}

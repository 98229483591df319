use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use travgrid_core::synthworld::write_scans;

const TINY: &str = "\
[model]
blocks = 1

[schedules]
epochs = 2

[train]
queue_warmup = 64
";

fn travgrid(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_travgrid"))
        .arg("--config")
        .arg(dir.join("tiny.toml"))
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = travgrid(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("tiny.toml"), TINY).unwrap();
    d
}

#[test]
fn stages_chain_and_training_is_deterministic() {
    let d = workspace();
    let p = d.path();
    ok(p, &["synth-gen"]);
    ok(p, &["build-map"]);
    assert!(ok(p, &["auto-label"]).contains("positive"));
    ok(p, &["train"]);
    let first = fs::read(p.join("out/metrics.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 3);
    ok(p, &["infer"]);
    let eval = ok(p, &["eval"]);
    assert!(eval.starts_with("frame,pa,miou"));
    for line in eval
        .lines()
        .skip(1)
        .take_while(|l| !l.starts_with("frame "))
    {
        let pa: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&pa), "{line}");
    }
    ok(p, &["render"]);
    assert!(p.join("out/render/frame_000_pred.ppm").is_file());

    ok(p, &["train"]);
    assert_eq!(fs::read(p.join("out/metrics.csv")).unwrap(), first);
    let other = ok(p, &["--seed", "7", "train"]);
    assert!(!other.is_empty());
}

#[test]
fn build_map_on_zero_scans_writes_an_empty_map() {
    let d = workspace();
    let p = d.path();
    ok(p, &["synth-gen"]);
    let mut f = fs::File::create(p.join("out/scans.bin")).unwrap();
    write_scans(&mut f, &[]).unwrap();
    drop(f);
    let o = travgrid(p, &["build-map"]);
    assert!(o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("empty map"), "{err}");
    let mut r = fs::File::open(p.join("out/maps/frame_000.map")).unwrap();
    let map = travgrid_core::terrain::io::read_map(&mut r).unwrap();
    assert_eq!(map.known_count(), 0);
    assert_eq!(map.geometry.width, 200);
}

#[test]
fn ablate_emits_one_row_per_loss() {
    let d = workspace();
    let out = ok(d.path(), &["ablate", "--loss", "cont,cls,sum"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], travgrid_core::pipeline::ABLATION_CSV_HEADER);
    assert_eq!(lines.len(), 4);
    for (line, loss) in lines[1..].iter().zip(["cont", "cls", "sum"]) {
        assert!(line.starts_with(&format!("f,{loss},4,42,")), "{line}");
    }
}

#[test]
fn missing_inputs_fail_with_a_hint() {
    let d = workspace();
    let o = travgrid(d.path(), &["train"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("auto-label"));
    let o = travgrid(d.path(), &["infer"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("train"));
}

#[test]
fn bad_configuration_is_rejected() {
    let d = workspace();
    fs::write(d.path().join("tiny.toml"), "[tokens]\npatch = 10\n").unwrap();
    let o = travgrid(d.path(), &["synth-gen"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("odd"));
}

#[test]
fn thread_count_must_be_positive() {
    let d = workspace();
    let o = Command::new(env!("CARGO_BIN_EXE_travgrid"))
        .args(["--out"])
        .arg(d.path().join("out"))
        .args(["ablate", "--loss", "sum"])
        .env("TRAVGRID_THREADS", "none")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("TRAVGRID_THREADS"));
}

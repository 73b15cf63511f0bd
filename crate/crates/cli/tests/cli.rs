use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use planesweep::config::PipelineConfig;
use planesweep::grid::Grid;
use planesweep::io;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_planesweep"));
    cmd.env_remove("PLANESWEEP_LOG");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Config with 64x48 images and one scene per suite.
fn small_config(dir: &Path) -> PathBuf {
    let mut cfg = PipelineConfig::default();
    cfg.synth.width = 64;
    cfg.synth.height = 48;
    cfg.synth.focal = 62.5;
    cfg.synth.scenes_per_suite = 1;
    let path = dir.join("small.toml");
    cfg.save(&path).unwrap();
    path
}

fn small_dataset() -> (TempDir, PathBuf, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("data");
    ok(&["--config", s(&cfg), "synth", "--out", s(&data)]);
    (tmp, cfg, data)
}

fn parse_csv(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn pct_lt1(stdout: &str) -> f64 {
    let tail = stdout.split("<1 ").nth(1).expect("metrics line");
    tail.split('%').next().unwrap().trim().parse().unwrap()
}

#[test]
fn synth_default_config_writes_three_suites() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--out", s(&data)]);
    let manifest = fs::read_to_string(data.join("manifest.csv")).unwrap();
    let rows = parse_csv(&manifest);
    assert_eq!(rows.len(), 3 * 6 * 7);
    for suite in ["unoccluded", "single-occluder", "heavy-occlusion"] {
        assert!(data
            .join(suite)
            .join(format!("{suite}-00"))
            .join("scene.toml")
            .is_file());
        assert!(rows.iter().any(|r| r[0] == suite));
    }
    let views: Vec<usize> = rows.iter().take(7).map(|r| r[3].parse().unwrap()).collect();
    assert_eq!(views, (2..=8).collect::<Vec<_>>());
}

#[test]
fn synth_is_deterministic() {
    let (tmp, cfg, data) = small_dataset();
    let again = tmp.path().join("again");
    ok(&["--config", s(&cfg), "synth", "--out", s(&again)]);
    for rel in [
        "manifest.csv",
        "heavy-occlusion/heavy-occlusion-00/images/004.ppm",
        "single-occluder/single-occluder-00/visibility/000_002.pgm",
        "unoccluded/unoccluded-00/cams/007.txt",
    ] {
        assert_eq!(
            fs::read(data.join(rel)).unwrap(),
            fs::read(again.join(rel)).unwrap(),
            "{rel}"
        );
    }
    let other = tmp.path().join("other");
    ok(&[
        "--config",
        s(&cfg),
        "synth",
        "--out",
        s(&other),
        "--seed",
        "5",
    ]);
    let rel = "unoccluded/unoccluded-00/images/000.ppm";
    assert_ne!(
        fs::read(data.join(rel)).unwrap(),
        fs::read(other.join(rel)).unwrap()
    );
}

#[test]
fn synth_unwritable_dir_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("file");
    fs::write(&file, "x").unwrap();
    let out = run(&["synth", "--out", s(&file.join("data"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn depth_on_unoccluded_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--out", s(&data), "--scenes", "1"]);
    let out = tmp.path().join("out");
    let scene = data.join("unoccluded/unoccluded-00");
    let stdout = ok(&["depth", s(&scene), "--out", s(&out)]);
    assert!(pct_lt1(&stdout) >= 95.0, "{stdout}");
    for f in [
        "depth.pfm",
        "uncertainty.pfm",
        "valid.pgm",
        "prob_1.pfm",
        "prob_2.pfm",
        "prob_3.pfm",
    ] {
        assert!(out.join("000").join(f).is_file(), "{f}");
    }
    for k in 1..=3 {
        let stage = out.join("000").join(format!("stage{k}"));
        assert!(stage.join("uncertainty_001.pfm").is_file());
        assert!(stage.join("uncertainty_007.pfm").is_file());
        assert!(!stage.join("uncertainty_008.pfm").exists());
    }
    let depth = io::read_pfm(&out.join("000/depth.pfm")).unwrap();
    assert_eq!(depth.dims(), (256, 192));
    let prob = io::read_pfm(&out.join("000/prob_1.pfm")).unwrap();
    assert_eq!(prob.dims(), (256, 192));
    assert!(prob
        .as_slice()
        .iter()
        .all(|&p| (0.0..=1.0 + 1e-6).contains(&p)));

    // heavy occlusion: vis beats var
    let heavy = data.join("heavy-occlusion/heavy-occlusion-00");
    let vis = ok(&[
        "depth",
        s(&heavy),
        "--fusion",
        "vis",
        "--out",
        s(&tmp.path().join("vis")),
    ]);
    let var = ok(&[
        "depth",
        s(&heavy),
        "--fusion",
        "var",
        "--out",
        s(&tmp.path().join("var")),
    ]);
    assert!(pct_lt1(&vis) > pct_lt1(&var), "{vis} vs {var}");
}

#[test]
fn depth_two_view_mode() {
    let (tmp, cfg, data) = small_dataset();
    let out = tmp.path().join("out");
    ok(&[
        "--config",
        s(&cfg),
        "depth",
        s(&data.join("unoccluded/unoccluded-00")),
        "--n-views",
        "1",
        "--reference",
        "2",
        "--out",
        s(&out),
    ]);
    let stage = out.join("002/stage3");
    // depth plus a single pair uncertainty
    assert_eq!(fs::read_dir(&stage).unwrap().count(), 2);
    assert!(out.join("002/depth.pfm").is_file());
}

#[test]
fn depth_errors_are_descriptive() {
    let (tmp, cfg, data) = small_dataset();
    let scene = data.join("unoccluded/unoccluded-00");
    let out = run(&["--config", s(&cfg), "depth", s(&scene), "--reference", "12"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("12"));

    fs::remove_file(scene.join("images/003.ppm")).unwrap();
    let out = run(&[
        "--config",
        s(&cfg),
        "depth",
        s(&scene),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("003.ppm"));

    let out = run(&["depth", s(&tmp.path().join("missing"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("scene.toml"));
}

#[test]
fn reconstruct_is_deterministic_and_thresholds_apply() {
    let (tmp, cfg, data) = small_dataset();
    let scene = data.join("unoccluded/unoccluded-00");
    let a = tmp.path().join("a.ply");
    let b = tmp.path().join("b.ply");
    ok(&[
        "--config",
        s(&cfg),
        "reconstruct",
        s(&scene),
        "--out",
        s(&a),
        "--n-views",
        "4",
    ]);
    ok(&[
        "--config",
        s(&cfg),
        "--jobs",
        "2",
        "reconstruct",
        s(&scene),
        "--out",
        s(&b),
        "--n-views",
        "4",
    ]);
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    let cloud = io::read_ply(&a).unwrap();
    assert!(cloud.len() > 1000);

    let empty = tmp.path().join("e.ply");
    ok(&[
        "--config",
        s(&cfg),
        "reconstruct",
        s(&scene),
        "--out",
        s(&empty),
        "--thresholds",
        "1,1,1",
    ]);
    assert_eq!(fs::read(&empty).unwrap(), io::ply_header(0).into_bytes());

    let bad = run(&[
        "--config",
        s(&cfg),
        "reconstruct",
        s(&scene),
        "--thresholds",
        "0.5,0.5",
    ]);
    assert!(!bad.status.success());
    let strict = tmp.path().join("t.ply");
    ok(&[
        "--config",
        s(&cfg),
        "reconstruct",
        s(&scene),
        "--out",
        s(&strict),
        "--preset",
        "tanks",
    ]);
    assert!(io::read_ply(&strict).unwrap().len() <= cloud.len());
}

fn write_sample(root: &Path, name: &str, depth: &Grid<f64>) {
    let dir = root.join(name);
    fs::create_dir_all(&dir).unwrap();
    io::write_pfm(&dir.join("depth.pfm"), depth).unwrap();
}

#[test]
fn eval_perfect_and_noisy_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let gt_dir = tmp.path().join("gt");
    let outputs = tmp.path().join("outputs");
    fs::create_dir_all(&gt_dir).unwrap();
    let interval = 0.02;
    let gt = Grid::from_fn(80, 60, |x, y| 2.0 + 0.01 * x as f64 + 0.005 * y as f64);
    io::write_pfm(&gt_dir.join("000.pfm"), &gt).unwrap();
    io::write_pfm(&gt_dir.join("001.pfm"), &gt).unwrap();
    write_sample(&outputs, "000", &gt);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 2.0 * interval).unwrap();
    let noisy = gt.map(|&d| d + noise.sample(&mut rng));
    write_sample(&outputs, "001", &noisy);

    let stdout = ok(&["eval", s(&outputs), s(&gt_dir), "--interval", "0.02"]);
    let rows = parse_csv(&stdout);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], "000");
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 100.0);

    // direct count on the values as stored
    let stored = io::read_pfm(&outputs.join("001/depth.pfm")).unwrap();
    let stored_gt = io::read_pfm(&gt_dir.join("001.pfm")).unwrap();
    let direct = stored
        .as_slice()
        .iter()
        .zip(stored_gt.as_slice())
        .filter(|(d, g)| ((*d - *g) / interval).abs() < 1.0)
        .count() as f64
        / stored.len() as f64
        * 100.0;
    let reported: f64 = rows[1][1].parse().unwrap();
    assert!((reported - direct).abs() < 1e-9, "{reported} vs {direct}");
    // P(|N(0, 2)| < 1) = 2 Phi(0.5) - 1
    assert!((reported - 38.29).abs() < 2.0, "{reported}");
    assert_eq!(rows[2][0], "mean");
}

#[test]
fn eval_reports_bad_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let gt_dir = tmp.path().join("gt");
    let outputs = tmp.path().join("outputs");
    fs::create_dir_all(&gt_dir).unwrap();
    io::write_pfm(&gt_dir.join("000.pfm"), &Grid::filled(4, 4, 1.0)).unwrap();
    write_sample(&outputs, "000", &Grid::filled(4, 3, 1.0));
    write_sample(&outputs, "001", &Grid::filled(4, 4, 1.0));
    let out = run(&["eval", s(&outputs), s(&gt_dir), "--interval", "1"]);
    assert!(!out.status.success());
    let rows = parse_csv(&String::from_utf8(out.stdout).unwrap());
    assert!(rows[0].last().unwrap().contains("4x3"));
    assert!(rows[1].last().unwrap().contains("001.pfm"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2 of 2"));
}

#[test]
fn eval_against_scene_directory() {
    let (tmp, cfg, data) = small_dataset();
    let scene = data.join("unoccluded/unoccluded-00");
    let outputs = tmp.path().join("outputs");
    write_sample(
        &outputs,
        "000",
        &io::read_pfm(&scene.join("depths/000.pfm")).unwrap(),
    );
    let csv_path = tmp.path().join("m.csv");
    ok(&[
        "--config",
        s(&cfg),
        "eval",
        s(&outputs),
        s(&scene),
        "--out",
        s(&csv_path),
    ]);
    let rows = parse_csv(&fs::read_to_string(&csv_path).unwrap());
    assert_eq!(rows[0][1], "100.0");
}

#[test]
fn ablate_emits_one_row_per_strategy_and_count() {
    let (tmp, cfg, data) = small_dataset();
    let csv_path = tmp.path().join("ablation.csv");
    ok(&[
        "--config",
        s(&cfg),
        "ablate",
        s(&data.join("heavy-occlusion")),
        "--min-views",
        "2",
        "--max-views",
        "3",
        "--out",
        s(&csv_path),
    ]);
    let text = fs::read_to_string(&csv_path).unwrap();
    assert!(text.starts_with("fusion,n_views,scenes,pct_lt1,pct_lt3,mae\n"));
    let rows = parse_csv(&text);
    assert_eq!(rows.len(), 8);
    let strategies: Vec<&str> = rows.iter().step_by(2).map(|r| r[0].as_str()).collect();
    assert_eq!(strategies, ["var", "ave", "max", "vis"]);
    assert!(rows.iter().all(|r| r[2] == "1"));
}

#[test]
fn config_errors_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "n_views = 0\n").unwrap();
    let out = run(&[
        "--config",
        s(&bad),
        "synth",
        "--out",
        s(&tmp.path().join("d")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_views"));

    let unknown = tmp.path().join("unknown.toml");
    fs::write(&unknown, "speed = 3\n").unwrap();
    let out = run(&["--config", s(&unknown), "synth"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown.toml"));

    let out = run(&["depth", "x", "--fusion", "median"]);
    assert!(!out.status.success());
}

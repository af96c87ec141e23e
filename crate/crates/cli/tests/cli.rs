use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use spherecal::camera::BinaryMask;
use spherecal::sim::DatasetTruth;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spherecal"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_record(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("error record on stderr");
    serde_json::from_str(line).expect("error record is JSON")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const FAST: [&str; 2] = ["--set", "sim.frames=20"];

fn simulate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--out", s(dir)];
    args.extend_from_slice(&FAST);
    args.extend_from_slice(extra);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

/// A noise-free dataset and its calibration report, shared by the tests.
struct Clean {
    _dir: TempDir,
    data: PathBuf,
    report: PathBuf,
}

fn clean() -> &'static Clean {
    static CLEAN: OnceLock<Clean> = OnceLock::new();
    CLEAN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        simulate(&data, &["--seed", "11", "--set", "sim.sigma0=0"]);
        let report = dir.path().join("report.json");
        let out = run(&["calibrate", s(&data), "--out", s(&report)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        Clean {
            _dir: dir,
            data,
            report,
        }
    })
}

#[test]
fn default_config_simulates_ten_scenes() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &[]);
    let manifest = json(&dir.path().join("manifest.json"));
    let scenes = manifest["scenes"].as_array().unwrap();
    assert_eq!(scenes.len(), 10);
    for scene in scenes {
        for key in ["cloud", "mask", "truth"] {
            assert!(dir.path().join(scene[key].as_str().unwrap()).is_file());
        }
    }
    let truth = DatasetTruth::load(&dir.path().join(manifest["truth"].as_str().unwrap())).unwrap();
    assert_eq!(truth.scene_ids.len(), 10);
}

#[test]
fn unwritable_output_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = run(&["simulate", "--out", s(&blocker.join("sub"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"], "IoFailure");
    assert_eq!(error_record(&out)["exit_code"], 2);
}

#[test]
fn seed_flag_wins_over_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[sim]\nseed = 1\nn_scenes = 3\nframes = 2\n").unwrap();
    for (name, extra) in [("flag", vec!["--seed", "5"]), ("file5", vec!["--set", "sim.seed=5"]), ("file1", vec![])] {
        let mut args = vec!["simulate", "--config", s(&cfg), "--out"];
        let out_dir = dir.path().join(name);
        args.push(s(&out_dir));
        args.extend(extra);
        assert!(run(&args).status.success());
    }
    let seeds = |name: &str| json(&dir.path().join(name).join("manifest.json"))["scenes"].clone();
    assert_eq!(seeds("flag"), seeds("file5"));
    assert_ne!(seeds("flag"), seeds("file1"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--out", s(dir.path()), "--set", "sim.nope=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"], "ConfigError");
}

#[test]
fn too_few_scenes_for_min_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, &["--set", "sim.n_scenes=3"]);
    let report = dir.path().join("r.json");
    let out = run(&["calibrate", s(&data), "--out", s(&report), "--set", "solver.min_pairs=6"]);
    assert_eq!(out.status.code(), Some(1));
    let record = error_record(&out);
    assert_eq!(record["error"], "TooFewPairs");
    assert_eq!(record["exit_code"], 1);
    let written = json(&report);
    assert!(written["result"].is_null());
    assert_eq!(written["pairs"].as_array().unwrap().len(), 3);
}

#[test]
fn scenes_without_a_sphere_mask_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, &["--set", "sim.n_scenes=8", "--seed", "4"]);
    let manifest = json(&data.join("manifest.json"));
    let scenes = manifest["scenes"].as_array().unwrap();
    let mut broken = Vec::new();
    for scene in &scenes[..2] {
        let path = data.join(scene["mask"].as_str().unwrap());
        let rect = BinaryMask::from_fn(640, 480, |x, y| (200..300).contains(&x) && (150..260).contains(&y));
        rect.save_pgm(&path).unwrap();
        broken.push(scene["scene_id"].as_str().unwrap().to_string());
    }
    let report = dir.path().join("r.json");
    let out = run(&["calibrate", s(&data), "--out", s(&report), "--jobs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    for id in &broken {
        assert!(stderr.contains(&format!("skipped scene {id}")), "{stderr}");
    }
    let written = json(&report);
    let skipped: Vec<&str> = written["scenes"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|sc| !sc["skipped"].as_array().unwrap().is_empty())
        .map(|sc| sc["scene_id"].as_str().unwrap())
        .collect();
    assert_eq!(skipped, broken);
    assert_eq!(written["pairs"].as_array().unwrap().len(), 6);
    assert!(written["result"].is_object());
}

#[test]
fn report_is_ordered_and_independent_of_jobs() {
    let c = clean();
    let dir = tempfile::tempdir().unwrap();
    let single = dir.path().join("one.json");
    assert!(run(&["calibrate", s(&c.data), "--out", s(&single), "--jobs", "1"]).status.success());
    assert_eq!(std::fs::read(&single).unwrap(), std::fs::read(&c.report).unwrap());
    let ids: Vec<String> = json(&single)["scenes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|sc| sc["scene_id"].as_str().unwrap().to_string())
        .collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn report_carries_config_and_diagnostics() {
    let report = json(&clean().report);
    assert_eq!(report["config"]["sim"]["seed"], 0);
    assert_eq!(report["config"]["solver"]["min_pairs"], 4);
    for scene in report["scenes"].as_array().unwrap() {
        assert!(scene["camera"]["verdict"].is_string());
        assert!(scene["lidar"].is_object());
    }
    assert!(report["result"]["transform"].is_object());
    assert!(report["result"]["rms_reprojection"].as_f64().unwrap() < 0.5);
}

#[test]
fn clean_dataset_calibrates_within_a_centimeter() {
    let c = clean();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("eval.csv");
    let out = run(&["evaluate", s(&c.report), "--out", s(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("Trans (m)") && table.contains("Rot (°)") && table.contains("Proj (pix)"));
    let text = std::fs::read_to_string(&csv).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let trans: f64 = row[1].parse().unwrap();
    assert!(trans < 0.01, "trans_err {trans}");
}

#[test]
fn report_equal_to_truth_evaluates_to_zero() {
    let c = clean();
    let dir = tempfile::tempdir().unwrap();
    let manifest = json(&c.data.join("manifest.json"));
    let truth_path = c.data.join(manifest["truth"].as_str().unwrap());
    let truth = json(&truth_path);
    let mut report = json(&c.report);
    report["result"]["transform"] = truth["t_gt"].clone();
    report["result"]["rms_reprojection"] = Value::from(0.0);
    let path = dir.path().join("exact.json");
    std::fs::write(&path, serde_json::to_string(&report).unwrap()).unwrap();
    let csv = dir.path().join("eval.csv");
    let out = run(&["evaluate", s(&path), "--truth", s(&truth_path), "--out", s(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').skip(1).take(3).map(|v| v.parse().unwrap()).collect();
    assert_eq!(row, vec![0.0, 0.0, 0.0]);
}

#[test]
fn missing_truth_is_a_schema_mismatch() {
    let c = clean();
    let out = run(&["evaluate", s(&c.report), "--truth", s(&c.data.join("absent.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"], "SchemaMismatch");
}

#[test]
fn three_reports_make_three_csv_rows() {
    let c = clean();
    let dir = tempfile::tempdir().unwrap();
    let names: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| dir.path().join(format!("{n}.json"))).collect();
    for n in &names {
        std::fs::copy(&c.report, n).unwrap();
    }
    let csv = dir.path().join("eval.csv");
    let mut args = vec!["evaluate"];
    args.extend(names.iter().map(|p| s(p)));
    args.extend(["--out", s(&csv)]);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().zip(["a", "b", "c"]).all(|(r, n)| r.starts_with(&format!("{n},"))));
}

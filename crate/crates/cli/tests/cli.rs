use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_maptag"))
}

fn scenes() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenes")
}

fn run(cmd: &mut Command) -> std::process::Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth(dir: &Path, scene: Option<&str>) -> (PathBuf, PathBuf) {
    let (map, truth) = (dir.join("map.pcd"), dir.join("truth.json"));
    let mut cmd = bin();
    cmd.args(["synth", "--seed", "3", "--output"])
        .arg(&map)
        .arg("--truth")
        .arg(&truth);
    if let Some(s) = scene {
        cmd.arg("--scene").arg(scenes().join(s));
    }
    run(&mut cmd);
    (map, truth)
}

fn ids(report: &Path) -> Vec<u64> {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    v["tags"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["id"].as_u64().unwrap())
        .collect()
}

#[test]
fn occlusion_scene_pipeline_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let (map, truth) = synth(dir.path(), None);
    let report = dir.path().join("report.json");
    let debug = dir.path().join("debug");
    run(bin()
        .args(["detect", "--input"])
        .arg(&map)
        .arg("--output")
        .arg(&report)
        .arg("--debug-dir")
        .arg(&debug));
    assert_eq!(ids(&report), vec![3, 11]);
    assert!(debug.join("downsampled.pcd").is_file());
    assert!(debug.join("obb_manifest.json").is_file());
    let pgms = std::fs::read_dir(&debug)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count();
    assert!(pgms >= 2);

    let eval = dir.path().join("eval.json");
    run(bin()
        .arg("evaluate")
        .arg("--report")
        .arg(&report)
        .arg("--truth")
        .arg(&truth)
        .arg("--output")
        .arg(&eval));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&eval).unwrap()).unwrap();
    assert_eq!(v["count"], "2 / 2");

    let base = dir.path().join("baseline.json");
    run(bin()
        .args(["detect", "--baseline", "--input"])
        .arg(&map)
        .arg("--output")
        .arg(&base));
    assert_eq!(ids(&base), vec![3]);
}

#[test]
fn report_schema() {
    let dir = tempfile::tempdir().unwrap();
    let (map, _) = synth(dir.path(), Some("single_tag.toml"));
    let out = run(bin().args(["detect", "--tag-size", "0.167", "--input"]).arg(&map));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let tag = &v["tags"][0];
    assert_eq!(tag["id"], 5);
    assert!(tag["mirrored"].is_boolean());
    let vertices = tag["vertices"].as_array().unwrap();
    assert_eq!(vertices.len(), 4);
    for (k, vert) in vertices.iter().enumerate() {
        assert_eq!(vert["index"], k as u64);
        for axis in ["x", "y", "z"] {
            assert!(vert[axis].is_f64());
        }
    }
    assert_eq!(tag["pose_row_major"].as_array().unwrap().len(), 16);
    assert_eq!(tag["pose_inverse_row_major"].as_array().unwrap().len(), 16);
    assert!(tag["rms_residual"].is_number());
    assert!(v["diagnostics"].is_object());
    // nine significant digits at most
    let text = String::from_utf8(out.stdout).unwrap();
    for token in text.split(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == '-')) {
        let mantissa = token.split('e').next().unwrap();
        let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
        let significant = digits.trim_start_matches('0');
        assert!(significant.len() <= 9, "{token}");
    }
}

#[test]
fn empty_room_exits_zero_with_no_tags() {
    let dir = tempfile::tempdir().unwrap();
    let (map, _) = synth(dir.path(), Some("empty_room.toml"));
    let report = dir.path().join("report.json");
    run(bin().args(["detect", "--input"]).arg(&map).arg("--output").arg(&report));
    assert!(ids(&report).is_empty());
    run(bin()
        .args(["detect", "--baseline", "--input"])
        .arg(&map)
        .arg("--output")
        .arg(&report));
    assert!(ids(&report).is_empty());
}

#[test]
fn thread_counts_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (map, _) = synth(dir.path(), Some("single_tag.toml"));
    let mut reports = Vec::new();
    for threads in ["1", "4", "8", "4"] {
        let out = run(bin()
            .args(["detect", "--tag-size", "0.167", "--threads", threads, "--input"])
            .arg(&map));
        reports.push(out.stdout);
    }
    assert!(reports.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let (map, _) = synth(dir.path(), Some("single_tag.toml"));
    let config = dir.path().join("pipeline.toml");
    let shipped = std::fs::read_to_string(scenes().join("pipeline.toml")).unwrap();
    std::fs::write(&config, format!("input = {:?}\n{shipped}", map.display().to_string())).unwrap();
    // the shipped config says 0.2 m; the flag corrects it
    let out = run(bin().args(["detect", "--tag-size", "0.167", "--config"]).arg(&config));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["tags"].as_array().unwrap().len(), 1);
}

#[test]
fn bad_inputs_fail_without_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = bin()
        .args(["detect", "--input", "/nonexistent/map.pcd", "--output"])
        .arg(&report)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!report.exists());
    let (map, _) = synth(dir.path(), Some("single_tag.toml"));
    let out = bin()
        .args(["detect", "--thickness", "0.5", "--input"])
        .arg(&map)
        .arg("--output")
        .arg(&report)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!report.exists());
}

#[test]
fn dictionary_export_parses() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dict.txt");
    run(bin().arg("dictionary").arg("--output").arg(&path));
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("GRID 4"));
    assert_eq!(text.lines().filter(|l| l.len() == 16).count(), 50);
    // a file-backed dictionary decodes the same scene
    let (map, _) = synth(dir.path(), Some("single_tag.toml"));
    let out = run(bin()
        .args(["detect", "--tag-size", "0.167", "--dict"])
        .arg(&path)
        .arg("--input")
        .arg(&map));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["tags"][0]["id"], 5);
}

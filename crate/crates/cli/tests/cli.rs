use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_prostascan");

const SMALL: &str = r#"
seed = 4

[scan]
pixel_size_mm = 0.2
slice_count = 8

[synth]
speckle_sigma = 0.05

[augment]
base_resolution = 32
variant_count = 3
"#;

fn prostascan(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn missing_pixel_size_exits_2_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[scan]\nslice_count = 8\n");
    let out = prostascan(&["pipeline", "--config", cfg.to_str().unwrap(), "--output", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("pixel_size_mm"), "{err}");
}

#[test]
fn bad_stage_and_unknown_key_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let c = cfg.to_str().unwrap();
    assert_eq!(prostascan(&["pipeline", "--config", c, "--stages", "synth,paint"]).status.code(), Some(2));
    let out = prostascan(&["pipeline", "--config", c, "--set", "segment.sigma=3", "--stages", "synth"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failing_stage_exit_code_and_marker() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let root = dir.path().join("o");
    let out = prostascan(&["pipeline", "--config", cfg.to_str().unwrap(), "--stages", "reconstruct", "--output", root.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(15));
    assert!(fs::read_to_string(root.join("FAILED")).unwrap().contains("stage=reconstruct"));
    assert!(root.join("run_manifest.json").exists());
}

#[test]
fn pipeline_is_deterministic_and_honours_stage_selection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let roots = [dir.path().join("a"), dir.path().join("b")];
    for r in &roots {
        let out = prostascan(&["pipeline", "--config", cfg.to_str().unwrap(), "--output", r.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let files = files_under(&roots[0]);
    assert_eq!(files, files_under(&roots[1]));
    for f in files.iter().filter(|f| !f.ends_with("run_manifest.json")) {
        assert_eq!(fs::read(roots[0].join(f)).unwrap(), fs::read(roots[1].join(f)).unwrap(), "{}", f.display());
    }
    for expected in ["labels/slice_0007_labels.png", "metrics.kv", "meshes/filled.stl", "augment/variant_002.stl", "augment/diversity.kv", "eval.kv"] {
        assert!(files.contains(&PathBuf::from(expected)), "{expected}");
    }
    let manifest = fs::read_to_string(roots[0].join("run_manifest.json")).unwrap();
    assert!(manifest.contains("\"config_sha256\"") && manifest.contains("\"wall_seconds\""));

    // a later partial run touches only its own outputs
    let before = fs::read(roots[0].join("meshes/filled.stl")).unwrap();
    let stamp = fs::metadata(roots[0].join("meshes/filled.stl")).unwrap().modified().unwrap();
    let out = prostascan(&["pipeline", "--config", cfg.to_str().unwrap(), "--stages", "metrics", "--output", roots[0].to_str().unwrap(), "--set", "metrics.harmonics=4"]);
    assert!(out.status.success());
    assert_eq!(fs::metadata(roots[0].join("meshes/filled.stl")).unwrap().modified().unwrap(), stamp);
    assert_eq!(fs::read(roots[0].join("meshes/filled.stl")).unwrap(), before);
    assert!(fs::read_to_string(roots[0].join("metrics.kv")).unwrap().contains("harmonics=4"));
}

#[test]
fn capture_ingest_round_trip_and_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let c = cfg.to_str().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let out = prostascan(&["synth", "--config", c, "--out", &p("syn"), "--capture", &p("frames"), "--lead-in", "17"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("scan starts at frame 17"));

    let out = prostascan(&["ingest", "--config", c, "--frames", &p("frames"), "--out", &p("ingested")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for k in 0..8 {
        let name = format!("slice_{k:04}.png");
        assert_eq!(fs::read(dir.path().join("syn/stack").join(&name)).unwrap(), fs::read(dir.path().join("ingested").join(&name)).unwrap());
    }

    let out = prostascan(&["segment", "--stack", &p("ingested"), "--out", &p("labels")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(dir.path().join("labels/segment_log.txt")).unwrap().lines().count(), 8);

    let out = prostascan(&["eval", "--pred", &p("labels"), "--reference", &p("syn/truth"), "--out", &p("eval")]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("Central IoU"));

    let out = prostascan(&["metrics", "--labels", &p("syn/truth"), "--out", &p("m.kv"), "--series", &p("m.tsv")]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("m.tsv")).unwrap().lines().count(), 9);

    let out = prostascan(&["reconstruct", "--labels", &p("syn/truth"), "--out", &p("meshes"), "--format", "ply"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("meshes/resection.ply").exists());

    let out = prostascan(&["augment", "--config", c, "--labels", &p("syn/truth"), "--out", &p("aug"), "--variants", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = prostascan(&[
        "augment", "--config", c, "--inputs", &p("aug"), "--import", &p("aug/variant_000_resection.pvg"), &p("aug/resection.pvg"), "--out", &p("imported"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let kv = fs::read_to_string(dir.path().join("imported/diversity.kv")).unwrap();
    assert!(kv.contains("variant.001.iou_vs_original=1.000000"), "{kv}");
    assert!(kv.contains("variant.001.status=above_high"));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use p2pb::bridge::BridgeSchedule;
use p2pb::denoiser::{DenoiserConfig, DenoiserParams};
use p2pb::io::{read_cloud, save_checkpoint, write_cloud, write_ply_mesh, CheckpointHeader, TrainingMeta};
use p2pb::synth::{make_primitive, Primitive};
use p2pb::PointCloud;

fn p2pb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_p2pb")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = p2pb(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    p2pb(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_net() -> DenoiserConfig {
    DenoiserConfig { hidden_width: 8, knn_k: 4, num_blocks: 1, time_dim: 8, feature_width: 0 }
}

fn synth(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let out = dir.join(name);
    ok(&["synth", "--shape", "sphere", "--points", "300", "--noise", "0.02", "--count", "2", "--seed", seed, "--resolution", "8", "--out", s(&out)]);
    out
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("cfg.json");
    let text = format!(
        r#"{{"denoiser": {{"hidden_width": 8, "knn_k": 4, "num_blocks": 1, "time_dim": 8}}, "patch_points": 64, "batch_patches": 2, "steps": 4{extra}}}"#
    );
    std::fs::write(&p, text).unwrap();
    p
}

fn zero_checkpoint(dir: &Path, fw: usize) -> PathBuf {
    let cfg = DenoiserConfig { feature_width: fw, ..small_net() };
    let p = dir.join(format!("zero{fw}.ckpt"));
    let header = CheckpointHeader::new(cfg, BridgeSchedule::default(), TrainingMeta::default()).unwrap();
    save_checkpoint(&DenoiserParams::zeros(cfg).unwrap(), &header, &p).unwrap();
    p
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn synth_writes_a_reproducible_dataset() {
    let d = tempfile::tempdir().unwrap();
    let a = synth(d.path(), "a", "3");
    let b = synth(d.path(), "b", "3");
    let c = synth(d.path(), "c", "4");
    let files = dir_bytes(&a);
    assert_eq!(files.len(), 7);
    assert!(files.iter().any(|(n, _)| n == "manifest.json"));
    assert!(files.iter().any(|(n, _)| n == "pair_0001_noisy.ply"));
    assert_eq!(files, dir_bytes(&b));
    assert_ne!(files, dir_bytes(&c));
    assert_eq!(read_cloud(&a.join("pair_0000_clean.ply")).unwrap().len(), 300);
}

#[test]
fn synth_usage_errors() {
    assert_eq!(code(&["synth", "--shape", "sphere", "--points", "10", "--noise", "0.02"]), 2);
    assert_eq!(code(&["synth", "--shape", "cone", "--points", "10", "--noise", "0.02", "--out", "/tmp/x"]), 2);
    assert_eq!(code(&["synth", "--shape", "box", "--points", "0", "--noise", "0.02", "--out", "/tmp/x"]), 2);
    assert_eq!(code(&["synth", "--shape", "box", "--points", "5", "--noise", "-1", "--out", "/tmp/x"]), 2);
}

#[test]
fn train_writes_checkpoint_and_log() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path(), "data", "1");
    let cfg = write_config(d.path(), r#", "checkpoint_every": 2"#);
    let model = d.path().join("m.ckpt");
    let msg = ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&model), "--steps", "5", "--seed", "2"]);
    assert!(msg.contains("trained 5 steps on 2 pairs"));
    assert!(model.exists());
    assert!(d.path().join("m.step2.ckpt").exists() && d.path().join("m.step4.ckpt").exists());
    let log = std::fs::read_to_string(d.path().join("m.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "step,loss,wall_ms");
    assert_eq!(lines.len(), 6);
    assert!(lines[5].starts_with("5,"));
}

#[test]
fn train_configuration_errors() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path(), "data", "1");
    let model = d.path().join("m.ckpt");
    let cfg = write_config(d.path(), "");
    assert_eq!(code(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&model), "--steps", "0"]), 2);
    let bad = write_config(d.path(), r#", "learning_rate": 0.1"#);
    assert_eq!(code(&["train", "--data", s(&data), "--config", s(&bad), "--out", s(&model)]), 2);
    let zero = write_config(d.path(), r#", "batch_patches": 0"#);
    assert_eq!(code(&["train", "--data", s(&data), "--config", s(&zero), "--out", s(&model)]), 2);
    let cfg = write_config(d.path(), "");
    let missing = d.path().join("nope");
    assert_eq!(code(&["train", "--data", s(&missing), "--config", s(&cfg), "--out", s(&model)]), 1);
    let diverge = write_config(d.path(), r#", "lr": 1e200, "steps": 30"#);
    assert_eq!(code(&["train", "--data", s(&data), "--config", s(&diverge), "--out", s(&model)]), 1);
}

#[test]
fn zero_checkpoint_denoise_is_identity() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path(), "data", "5");
    let input = data.join("pair_0000_noisy.ply");
    let model = zero_checkpoint(d.path(), 0);
    let before = read_cloud(&input).unwrap();
    for (steps, radius, mode) in [("1", "0.3", "ode"), ("3", "0.5", "ode"), ("10", "2", "ode"), ("1", "0.4", "sde")] {
        let out = d.path().join("out.ply");
        let msg = ok(&["denoise", "--input", s(&input), "--model", s(&model), "--out", s(&out), "--steps", steps, "--radius", radius, "--mode", mode]);
        assert!(msg.contains(&format!("{steps} steps ({mode})")));
        assert_eq!(read_cloud(&out).unwrap(), before);
    }
}

#[test]
fn denoise_sde_is_seeded_and_config_file_works() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path(), "data", "5");
    let cfg = write_config(d.path(), "");
    let model = d.path().join("m.ckpt");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&model)]);
    let input = data.join("pair_0000_noisy.ply");
    let run = |name: &str, seed: &str| {
        let out = d.path().join(name);
        ok(&["denoise", "--input", s(&input), "--model", s(&model), "--out", s(&out), "--steps", "3", "--radius", "0.5", "--mode", "sde", "--seed", seed]);
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.ply", "1"), run("b.ply", "1"));
    assert_ne!(run("a.ply", "1"), run("c.ply", "2"));

    let dc = d.path().join("denoise.json");
    std::fs::write(&dc, r#"{"radius": 0.5, "steps": 3, "mode": "sde", "seed": 1}"#).unwrap();
    let out = d.path().join("f.ply");
    ok(&["denoise", "--input", s(&input), "--model", s(&model), "--out", s(&out), "--config", s(&dc)]);
    assert_eq!(std::fs::read(&out).unwrap(), run("g.ply", "1"));
    std::fs::write(&dc, r#"{"radius": 0.5, "sigma": 1}"#).unwrap();
    assert_eq!(code(&["denoise", "--input", s(&input), "--model", s(&model), "--out", s(&out), "--config", s(&dc)]), 2);
}

#[test]
fn denoise_errors() {
    let d = tempfile::tempdir().unwrap();
    let feat = PointCloud::with_features(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![0.1; 6], 2).unwrap();
    let input = d.path().join("f.ply");
    write_cloud(&feat, &input).unwrap();
    let model = zero_checkpoint(d.path(), 0);
    let out = d.path().join("o.ply");
    assert_eq!(code(&["denoise", "--input", s(&input), "--model", s(&model), "--out", s(&out), "--radius", "1"]), 1);
    assert_eq!(code(&["denoise", "--input", s(&input), "--model", s(&model), "--out", s(&out)]), 2);
    assert_eq!(code(&["denoise", "--input", s(&input), "--model", s(&model), "--out", s(&out), "--radius", "-1"]), 2);
    assert_eq!(code(&["denoise", "--input", s(&input), "--model", s(&model), "--out", s(&out), "--radius", "1", "--steps", "0"]), 2);
    let wide = zero_checkpoint(d.path(), 2);
    ok(&["denoise", "--input", s(&input), "--model", s(&wide), "--out", s(&out), "--radius", "1"]);
    std::fs::write(d.path().join("junk.ckpt"), b"junk").unwrap();
    assert_eq!(code(&["denoise", "--input", s(&input), "--model", s(&d.path().join("junk.ckpt")), "--out", s(&out), "--radius", "1"]), 1);
}

fn parse_table(text: &str) -> Vec<(String, f64)> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty() && !l.starts_with('('))
        .map(|l| {
            let (name, v) = l.trim_end().rsplit_once(' ').unwrap();
            (name.trim().to_string(), v.parse().unwrap())
        })
        .collect()
}

#[test]
fn eval_reports_and_scales() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path(), "data", "6");
    let noisy = data.join("pair_0000_noisy.ply");
    let clean = data.join("pair_0000_clean.ply");
    let same = parse_table(&ok(&["eval", "--pred", s(&clean), "--gt", s(&clean)]));
    assert_eq!(same.len(), 3);
    assert!(same.iter().all(|(_, v)| *v == 0.0));

    let j1 = d.path().join("1.json");
    let j2 = d.path().join("2.json");
    ok(&["eval", "--pred", s(&noisy), "--gt", s(&clean), "--scale", "1", "--json", s(&j1)]);
    ok(&["eval", "--pred", s(&noisy), "--gt", s(&clean), "--scale", "1000", "--json", s(&j2)]);
    let v1: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(j1).unwrap()).unwrap();
    let v2: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(j2).unwrap()).unwrap();
    let (a, b) = (v1["cd"].as_f64().unwrap(), v2["cd"].as_f64().unwrap());
    assert!(a > 0.0 && ((b - 1000.0 * a) / b).abs() < 1e-12);
    assert!(v1["p2m"].is_null());

    let mesh = d.path().join("sphere.ply");
    write_ply_mesh(&make_primitive(Primitive::Sphere { radius: 1.0 }, 8).unwrap(), &mesh, true).unwrap();
    let rows = parse_table(&ok(&["eval", "--pred", s(&noisy), "--gt", s(&clean), "--mesh", s(&mesh)]));
    let names: Vec<&str> = rows.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["CD", "CD forward", "CD backward", "P2M", "P2F", "F2P"]);
    let raw = parse_table(&ok(&["eval", "--pred", s(&noisy), "--gt", s(&clean), "--no-normalize", "--scale", "1"]));
    assert!(raw[0].1 > 0.0);

    assert_eq!(code(&["eval", "--pred", s(&d.path().join("none.ply")), "--gt", s(&clean)]), 1);
    assert_eq!(code(&["eval", "--pred", s(&noisy), "--gt", s(&clean), "--scale", "0"]), 2);
}

#[test]
fn thread_setting_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_p2pb"))
        .args(["eval", "--pred", "a.ply", "--gt", "b.ply"])
        .env("P2PB_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

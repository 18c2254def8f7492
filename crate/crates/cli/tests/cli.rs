use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use optimux::muxlayout::LayoutConfig;
use optimux::synth::{generate, SynthConfig};
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_optimux"));
    c.env_remove("RUST_LOG");
    for (k, _) in std::env::vars() {
        if k.starts_with("OPTIMUX_") {
            c.env_remove(k);
        }
    }
    c
}

fn tiny_config() -> Value {
    let synth = |videos: usize| json!({ "videos": videos, "frames": 6, "rows": 16, "cols": 16 });
    json!({
        "layout": LayoutConfig::toy(4, 4, 8),
        "encoder": { "frame_rows": 16, "frame_cols": 16, "channels": [4, 4] },
        "stack": { "layers": 1 },
        "data": { "train": synth(16), "test": synth(16), "finetune": synth(8) },
        "train": { "epochs": 1, "learning_rate": 0.003 },
        "eval": { "sampling_seeds": [0], "shuffle": true },
        "harness": {
            "noise_sigmas": [0.0, 0.1],
            "blur_sigmas": [0.0, 1.0],
            "jpeg_qualities": [50.0, 100.0],
            "lateral_offsets": [-8.0, 0.0, 8.0],
            "axial_offsets": [0.0],
            "attack": {
                "attackers": 2,
                "subset_fraction": 0.5,
                "epsilons": [0.00392156862745098, 0.03137254901960784],
                "epochs": 2,
                "surrogate": { "channels": [4, 4], "epochs": 2, "frames": 2 }
            },
            "baseline": { "channels": [4, 4], "epochs": 2, "frames": 2 },
            "histogram_bins": 10,
            "crosstalk_spacings": [12]
        }
    })
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn energy_reports_published_figures() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().arg("energy").arg("--out").arg(dir.path()).output().unwrap();
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("178.2 mJ/video"), "{text}");
    assert!(text.contains("20.7-61.7 mJ/batch"), "{text}");
    assert!(text.contains("1.38-4.11 mJ/video"), "{text}");
    let report = read_json(&dir.path().join("energy.json"));
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    let record = read_json(&dir.path().join("run_energy.json"));
    assert_eq!(record["config_hash"], report["config_hash"]);
    assert!(record["outputs"].as_array().unwrap().iter().any(|f| f == "energy.json"));
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let dir = tempfile::tempdir().unwrap();
    ok(&bin().arg("energy").arg("--out").arg(dir.path()).output().unwrap());
    let again = bin().arg("energy").arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(&bin().arg("energy").arg("--force").arg("--out").arg(dir.path()).output().unwrap());
}

#[test]
fn user_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = bin().arg("frobnicate").output().unwrap();
    assert_eq!(unknown.status.code(), Some(1));
    let mut cfg = tiny_config();
    cfg["train"]["temperature"] = json!(0.0);
    let path = write_config(dir.path(), &cfg);
    let bad = run(&["train"], &path, &dir.path().join("out"));
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("temperature"));
    let typo = dir.path().join("typo.json");
    std::fs::write(&typo, r#"{"trian": {}}"#).unwrap();
    assert_eq!(run(&["energy"], &typo, &dir.path().join("o2")).status.code(), Some(1));
    let missing = run(&["eval"], &write_config(dir.path(), &tiny_config()), &dir.path().join("o3"));
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("--checkpoint"));
    assert_eq!(bin().arg("energy").arg("--threads").arg("0").output().unwrap().status.code(), Some(1));
}

#[test]
fn env_overrides_change_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    ok(&bin().arg("energy").arg("--out").arg(dir.path().join("a")).output().unwrap());
    let o = bin()
        .env("OPTIMUX_ENERGY__VIDEOS_PER_BATCH", "18")
        .arg("energy")
        .arg("--out")
        .arg(dir.path().join("b"))
        .output()
        .unwrap();
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("1.15-3.43 mJ/video"));
    let a = read_json(&dir.path().join("a/energy.json"));
    let b = read_json(&dir.path().join("b/energy.json"));
    assert_ne!(a["config_hash"], b["config_hash"]);
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generated_data_round_trips_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config());
    ok(&run(&["gen-data", "--seed", "3"], &cfg, &dir.path().join("a")));
    ok(&run(&["gen-data", "--seed", "3"], &cfg, &dir.path().join("b")));
    assert_eq!(tree_bytes(&dir.path().join("a/data")), tree_bytes(&dir.path().join("b/data")));

    let manifest = read_json(&dir.path().join("a/data/train/manifest.json"));
    let entries = manifest["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 16);
    let run_record = read_json(&dir.path().join("a/run_gen-data.json"));
    let seed = run_record["seeds"]["train_data"].as_u64().unwrap();
    let expected = generate(&SynthConfig { videos: 16, frames: 6, rows: 16, cols: 16, seed, ..SynthConfig::default() }).unwrap();
    for (e, v) in entries.iter().zip(&expected) {
        assert_eq!(e["label"], json!(v.label));
        assert_eq!(e["frames"], json!(6));
        assert_eq!(e["source"], json!(v.source_id));
    }

    // Training from the written manifests matches training from the generator.
    let mut from_disk = tiny_config();
    from_disk["data"]["train_manifest"] = json!(dir.path().join("a/data/train/manifest.json"));
    from_disk["data"]["test_manifest"] = json!(dir.path().join("a/data/test/manifest.json"));
    let disk_cfg = dir.path().join("disk.json");
    std::fs::write(&disk_cfg, from_disk.to_string()).unwrap();
    ok(&run(&["train", "--seed", "3"], &disk_cfg, &dir.path().join("t1")));
    ok(&run(&["train", "--seed", "3"], &cfg, &dir.path().join("t2")));
    assert_eq!(
        std::fs::read(dir.path().join("t1/history.json")).ok().map(|b| read_history(&b)),
        std::fs::read(dir.path().join("t2/history.json")).ok().map(|b| read_history(&b)),
    );
}

fn read_history(bytes: &[u8]) -> Value {
    serde_json::from_slice::<Value>(bytes).unwrap()["data"].clone()
}

#[test]
fn ingest_reports_bad_frames_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config());
    ok(&run(&["gen-data"], &cfg, &dir.path().join("g")));
    let frame = dir.path().join("g/data/test/video_00003/frame_00002.pgm");
    let mut small = b"P5\n4 4\n255\n".to_vec();
    small.extend([0u8; 16]);
    std::fs::write(&frame, small).unwrap();
    let mut c = tiny_config();
    c["data"]["test_manifest"] = json!(dir.path().join("g/data/test/manifest.json"));
    let cfg2 = dir.path().join("bad.json");
    std::fs::write(&cfg2, c.to_string()).unwrap();
    ok(&run(&["train"], &cfg, &dir.path().join("m")));
    let o = run(&["eval", "--checkpoint", dir.path().join("m/model.ckpt").to_str().unwrap()], &cfg2, &dir.path().join("e"));
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("video_00003/frame_00002.pgm") && err.contains("4x4"), "{err}");
}

#[test]
fn empty_manifest_warns() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("empty.json");
    std::fs::write(&m, r#"{"format_version": 1, "root": ".", "entries": []}"#).unwrap();
    let mut c = tiny_config();
    c["data"]["train_manifest"] = json!(m);
    let cfg = write_config(dir.path(), &c);
    let o = run(&["train"], &cfg, &dir.path().join("o"));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("lists no videos"), "{err}");
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_then_eval_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config());
    let mut metrics = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        ok(&run(&["train"], &cfg, &out));
        let ckpt = out.join("model.ckpt");
        ok(&run(&["eval", "--checkpoint", ckpt.to_str().unwrap()], &cfg, &out));
        metrics.push((std::fs::read(&ckpt).unwrap(), std::fs::read(out.join("metrics.json")).unwrap()));
    }
    assert_eq!(metrics[0], metrics[1]);
    let m = read_json(&dir.path().join("a/metrics.json"));
    assert_eq!(m["data"]["model"], "hybrid_k1");
    let meta = read_json(&dir.path().join("a/scores.csv.meta.json"));
    assert_eq!(meta["config_hash"], m["config_hash"]);
}

#[test]
fn untrained_model_is_at_chance_on_the_null_set() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_config();
    c["train"]["epochs"] = json!(0);
    c["data"]["test"] = json!({ "videos": 200, "frames": 6, "rows": 16, "cols": 16, "signal": 0.0 });
    c["eval"]["sampling_seeds"] = json!([0, 1, 2, 3]);
    let cfg = write_config(dir.path(), &c);
    let out = dir.path().join("o");
    ok(&run(&["train"], &cfg, &out));
    ok(&run(&["eval", "--checkpoint", out.join("model.ckpt").to_str().unwrap()], &cfg, &out));
    let acc = read_json(&out.join("metrics.json"))["data"]["summary"]["accuracy"].as_f64().unwrap();
    let sigma = (0.25f64 / 800.0).sqrt();
    assert!((acc - 0.5).abs() <= 3.0 * sigma, "{acc}");
}

#[test]
fn harness_commands_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config());
    let out = dir.path().join("o");
    ok(&run(&["train"], &cfg, &out));
    let ckpt = out.join("model.ckpt");
    let c = ckpt.to_str().unwrap();
    for args in [
        vec!["sweep-degrade", "--checkpoint", c],
        vec!["sweep-misalign", "--checkpoint", c],
        vec!["attack", "--checkpoint", c],
        vec!["crosstalk", "--checkpoint", c],
        vec!["energy", "--checkpoint", c],
        vec!["export-figures", "--checkpoint", c],
        vec!["finetune", "--checkpoint", c],
    ] {
        ok(&run(&args, &cfg, &out));
    }
    for f in [
        "degrade_noise.csv",
        "degrade_blur.csv",
        "degrade_jpeg.csv",
        "misalign.csv",
        "attack.csv",
        "crosstalk_spacing4.csv",
        "crosstalk_spacing12.csv",
        "score_histogram.csv",
        "score_cdf.csv",
    ] {
        let text = std::fs::read_to_string(out.join(f)).unwrap();
        assert!(text.lines().count() >= 2, "{f}");
        assert!(out.join(format!("{f}.meta.json")).exists(), "{f}");
    }
    let noise = std::fs::read_to_string(out.join("degrade_noise.csv")).unwrap();
    assert!(noise.starts_with("magnitude,accuracy,"));
    let attack = std::fs::read_to_string(out.join("attack.csv")).unwrap();
    // Two victims (the checkpoint and the digital baseline), three budgets each.
    assert_eq!(attack.lines().count(), 1 + 2 * 3);
    let budgets = read_json(&out.join("perturbations.json"));
    for p in budgets["data"].as_array().unwrap() {
        assert!(p["max_abs"].as_f64().unwrap() <= p["epsilon"].as_f64().unwrap());
    }
    let xt = read_json(&out.join("crosstalk.json"));
    assert_eq!(xt["data"].as_array().unwrap().len(), 2);
    let energy = read_json(&out.join("energy.json"));
    assert!(energy["data"]["joules"]["digital_twin_decoder_per_video"].as_f64().unwrap() > 0.0);
    let tuned = read_json(&out.join("finetune.json"));
    assert!(tuned["data"]["after"]["accuracy"].is_number());
    assert!(std::fs::metadata(out.join("finetuned.ckpt")).unwrap().len() > 8);
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use egodoa_cli::config::{Overrides, RunConfig};

const SMALL: &str = r#"
seed = 3

[simulate]
scenes = 10

[simulate.scene.trajectory]
duration = 0.4

[train.model]
depth = 1
heads = 2
hidden = 16
ff = 32

[train.train]
epochs = 2
batch_size = 16
patience = 0

[train.train.optimizer]
kind = "adam"
lr = 0.001
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_egodoa"));
    c.env_remove("EGODOA_OUT").env("RUST_LOG", "warn");
    c
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Runs a subcommand with `out` as output root.
fn run(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let o = bin()
        .arg(cmd)
        .arg("--config")
        .arg(cfg)
        .args(extra)
        .env("EGODOA_OUT", out)
        .output()
        .unwrap();
    o
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        o.status,
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![rd.headers().unwrap().iter().map(str::to_string).collect()];
    for r in rd.records() {
        rows.push(r.unwrap().iter().map(str::to_string).collect());
    }
    rows
}

#[test]
fn ten_second_scene_gives_250_rows_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "[simulate]\nscenes = 1\n[simulate.scene.trajectory]\nduration = 10.0\n",
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = ok(&run("simulate", &cfg, &a, &[]));
    assert!(out.contains("in-FOV fraction"), "{out}");
    ok(&run("simulate", &cfg, &b, &[]));
    let ma = fs::read(a.join("dataset/manifest.jsonl")).unwrap();
    let mb = fs::read(b.join("dataset/manifest.jsonl")).unwrap();
    assert_eq!(ma.iter().filter(|&&c| c == b'\n').count(), 250);
    assert_eq!(ma, mb);
    assert!(a.join("dataset/effective_config.json").exists());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let bad_key = write_config(dir.path(), "bad.toml", "[simulate]\nscenes = 2\nbogus = 1\n");
    assert_eq!(run("simulate", &bad_key, &out, &[]).status.code(), Some(2));
    let nested = write_config(dir.path(), "nested.toml", "[train.model]\nwidth = 3\n");
    assert_eq!(run("simulate", &nested, &out, &[]).status.code(), Some(2));
    let bad_val = write_config(dir.path(), "val.json", r#"{"simulate": {"scenes": 0}}"#);
    assert_eq!(run("simulate", &bad_val, &out, &[]).status.code(), Some(2));
    let bad_rate = write_config(
        dir.path(),
        "rate.toml",
        "[simulate.scene.acoustics]\nsample_rate = 22050\n",
    );
    assert_eq!(run("simulate", &bad_rate, &out, &[]).status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    assert_ne!(run("simulate", &missing, &out, &[]).status.code(), Some(0));
    assert!(!out.exists(), "nothing is written after a config error");
}

#[test]
fn missing_artifacts_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("o");
    for cmd in ["featurize", "train", "evaluate", "report"] {
        let o = run(cmd, &cfg, &out, &[]);
        assert_eq!(
            o.status.code(),
            Some(3),
            "{cmd}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn flags_override_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "seed = 5\nworkers = 1\n");
    let ov = Overrides {
        seed: Some(9),
        workers: Some(3),
        ..Overrides::default()
    };
    let c = RunConfig::load(Some(&cfg), &ov).unwrap();
    assert_eq!((c.seed, c.workers), (9, 3));
    let c = RunConfig::load(Some(&cfg), &Overrides::default()).unwrap();
    assert_eq!((c.seed, c.workers), (5, 1));
    // switching the optimizer kind replaces the preset's optimizer table
    let sgd = write_config(
        dir.path(),
        "sgd.toml",
        "[train.train.optimizer]\nkind = \"sgd\"\nlr = 0.01\n",
    );
    let c = RunConfig::load(Some(&sgd), &Overrides::default()).unwrap();
    assert_eq!(
        c.train.train.optimizer,
        egodoa_model::OptimizerConfig::Sgd {
            lr: 0.01,
            momentum: 0.0
        }
    );
    let json = write_config(dir.path(), "c.json", r#"{"preset": "paper"}"#);
    let c = RunConfig::load(Some(&json), &Overrides::default()).unwrap();
    assert_eq!(c.train.train.batch_size, 512);
    assert_eq!(c.simulate.scene.acoustics.sample_rate, 48_000);
}

#[test]
fn featurize_reuses_and_invalidates_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("o");
    ok(&run("simulate", &cfg, &out, &[]));
    let first = ok(&run("featurize", &cfg, &out, &[]));
    assert!(first.contains("computed 100 reused 0"), "{first}");
    assert!(first.contains("gcc [22, 96] patches [196, 768]"), "{first}");
    let again = ok(&run("featurize", &cfg, &out, &[]));
    assert!(again.contains("computed 0 reused 100"), "{again}");
    let hop = write_config(
        dir.path(),
        "hop.toml",
        &format!("{SMALL}\n[featurize.features]\nhop = 256\n"),
    );
    let changed = ok(&run("featurize", &hop, &out, &[]));
    assert!(changed.contains("computed 100 reused 0 stale 100"), "{changed}");
    let strict = write_config(
        dir.path(),
        "strict.toml",
        &format!("{SMALL}\n[featurize]\nstrict = true\n"),
    );
    assert_eq!(run("featurize", &strict, &out, &[]).status.code(), Some(3));
}

#[test]
fn full_pipeline_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("o");
    for cmd in ["simulate", "featurize", "train", "evaluate", "report"] {
        ok(&run(cmd, &cfg, &out, &[]));
    }
    for sub in [
        "dataset",
        "features",
        "train/audio_visual",
        "train/audio_only",
        "eval",
        "report",
    ] {
        assert!(out.join(sub).join("effective_config.json").exists(), "{sub}");
    }
    for v in ["audio_visual", "audio_only"] {
        let log = read_csv(&out.join("train").join(v).join("log.csv"));
        assert_eq!(log.len() - 1, 2, "one row per epoch");
        assert!(out.join("train").join(v).join("best.ckpt").exists());
        assert!(out.join("train").join(v).join("last.ckpt").exists());
    }

    // JSON and CSV reports carry the same numbers
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("eval/report.json")).unwrap()).unwrap();
    let csv_rows = read_csv(&out.join("eval/report.csv"));
    assert_eq!(csv_rows[0], ["method", "subset", "count", "accuracy", "mean_ae"]);
    let methods = json["methods"].as_array().unwrap();
    let names: Vec<&str> = methods.iter().map(|m| m["method"].as_str().unwrap()).collect();
    assert_eq!(names, ["audio_visual", "audio_only", "srp_phat"]);
    assert_eq!(csv_rows.len() - 1, 3 * methods.len());
    for row in &csv_rows[1..] {
        let m = methods.iter().find(|m| m["method"] == row[0].as_str()).unwrap();
        let sub = &m[row[1].as_str()];
        assert_eq!(sub["count"].as_u64().unwrap().to_string(), row[2]);
        for (field, cell) in [("accuracy", &row[3]), ("mean_ae", &row[4])] {
            match sub[field].as_f64() {
                Some(v) => assert_eq!(v, cell.parse::<f64>().unwrap()),
                None => assert!(cell.is_empty()),
            }
        }
    }
    let total = methods[0]["chunks"].as_u64().unwrap();
    let inside = methods[0]["in_fov"]["count"].as_u64().unwrap();
    let outside = methods[0]["out_of_fov"]["count"].as_u64().unwrap();
    assert_eq!(inside + outside, total);

    // report CSVs
    for m in &names {
        let h = read_csv(&out.join(format!("report/histogram_{m}.csv")));
        assert_eq!(h[0], ["gt_bin_deg", "mean_ae_deg", "count"]);
        assert!(h.len() - 1 <= 360);
    }
    let post = read_csv(&out.join("report/posterior_examples.csv"));
    assert_eq!(post.len() - 1, 4);
    for row in &post[1..] {
        let s: f64 = row[6..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
        assert_eq!(row.len(), 6 + 360);
    }
    let curve = read_csv(&out.join("report/training_curve.csv"));
    assert_eq!(curve.len() - 1, 4);

    let snapshot = |d: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().to_string(), fs::read(e.path()).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    let before = snapshot(&out.join("report"));
    ok(&run("report", &cfg, &out, &[]));
    assert_eq!(before, snapshot(&out.join("report")), "report is idempotent");
}

#[test]
fn srp_baseline_needs_no_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n").replace("[train.model]", "[train]\nvariants = []\n\n[train.model]");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("o");
    for cmd in ["simulate", "featurize", "evaluate"] {
        ok(&run(cmd, &cfg, &out, &[]));
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(json["methods"].as_array().unwrap().len(), 1);
    assert_eq!(json["methods"][0]["method"], "srp_phat");
    assert_eq!(run("train", &cfg, &out, &[]).status.code(), Some(2));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let base = SMALL.replace(
        "[train.model]",
        "[train]\nvariants = [\"separate\"]\nresume = true\n\n[train.model]",
    );
    let four = write_config(dir.path(), "four.toml", &base.replace("epochs = 2", "epochs = 4"));
    let two = write_config(dir.path(), "two.toml", &base);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&run("simulate", &two, out, &[]));
        ok(&run("featurize", &two, out, &[]));
    }
    ok(&run("train", &four, &a, &[]));
    ok(&run("train", &two, &b, &[]));
    ok(&run("train", &four, &b, &[]));
    let f = |d: &Path, n: &str| fs::read(d.join("train/audio_visual").join(n)).unwrap();
    assert_eq!(f(&a, "log.csv"), f(&b, "log.csv"));
    assert_eq!(f(&a, "last.ckpt"), f(&b, "last.ckpt"));
    assert_eq!(read_csv(&a.join("train/audio_visual/log.csv")).len() - 1, 4);
}

#[test]
fn divergence_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("kind = \"adam\"\nlr = 0.001", "kind = \"sgd\"\nlr = 1e300")
        .replace("[train.model]", "[train]\nvariants = [\"audio_only\"]\n\n[train.model]");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("o");
    ok(&run("simulate", &cfg, &out, &[]));
    ok(&run("featurize", &cfg, &out, &[]));
    let o = run("train", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!(
            "[paths]\nout_dir = \"{}\"\n[simulate]\nscenes = 1\n[simulate.scene.trajectory]\nduration = 0.2\n",
            dir.path().join("from_file").display()
        ),
    );
    let o = bin().arg("simulate").arg("--config").arg(&cfg).output().unwrap();
    ok(&o);
    assert!(dir.path().join("from_file/dataset/manifest.jsonl").exists());
    let env_out = dir.path().join("from_env");
    ok(&run("simulate", &cfg, &env_out, &[]));
    assert!(env_out.join("dataset/manifest.jsonl").exists());
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_gridcast");

const SMALL: &str = r#"
seed = 3
threads = 1

[grid]
side = 11
cell_size = 0.35
horizons = [0.44, 0.96]

[synth]
samples = 120
locations = 6

[model]
kind = "d_tpm"
trajectory_layers = 2
trajectory_width = 16
map_filters = 4
fusion_convs = 1
fusion_filters = 4
smoothing = [0.5, 0.5]

[train]
max_epochs = 2
patience = 2

[calibration]
sigma_candidates = [0.5, 1.0]
"#;

struct Run {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, config).unwrap();
        Self { dir, config: path }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn cmd(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut c = Command::new(BIN);
        c.arg("--config").arg(&self.config).arg("--out").arg(self.out()).args(args);
        c.env_clear().envs(env.iter().copied());
        c.current_dir(self.dir.path()).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> Value {
        let o = self.cmd(args, &[]);
        assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_slice(&o.stdout).unwrap()
    }
}

fn error_json(o: &Output) -> Value {
    let v: Value = serde_json::from_slice(&o.stderr).unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&o.stderr)));
    assert_eq!(v["error"]["exit_code"].as_i64(), o.status.code().map(i64::from));
    v
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.clone(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn first_sample_id(out: &Path) -> String {
    let text = fs::read_to_string(out.join("dataset/samples.jsonl")).unwrap();
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    first["id"].as_str().unwrap().to_string()
}

#[test]
fn full_pipeline_writes_every_artifact_inside_out() {
    let run = Run::new(SMALL);
    let out = run.out();

    let s = run.ok(&["synth"]);
    assert_eq!(s["command"], "synth");
    let dataset = tree_bytes(&out.join("dataset"));

    run.ok(&["train"]);
    assert!(out.join("model.ckpt").is_file());
    let report: Value = serde_json::from_slice(&fs::read(out.join("train_report.json")).unwrap()).unwrap();
    assert_eq!(report["model"], "d_tpm");

    let c = run.ok(&["calibrate"]);
    assert_eq!(c["details"]["temperatures"].as_array().unwrap().len(), 2);
    assert!(out.join("calibrated.ckpt").is_file());

    let calibrated = out.join("calibrated.ckpt");
    let e = run.ok(&["eval", "--model", calibrated.to_str().unwrap()]);
    assert!(e["details"]["persistence"]["aswaee"].as_f64().unwrap() > 0.0);
    for name in ["metrics.json", "reliability/d_tpm_h0.csv", "reliability/persistence_h1.csv"] {
        assert!(out.join(name).is_file(), "{name}");
    }

    let id = first_sample_id(&out);
    let f = run.ok(&["forecast", "--sample", &id, "--model", calibrated.to_str().unwrap()]);
    assert_eq!(f["outputs"].as_array().unwrap().len(), 6);
    let csv = out.join("forecast").join(&id).join("h1.csv");
    let text = fs::read_to_string(&csv).unwrap();
    let total: f64 = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);

    let p = run.ok(&["plot", out.join("metrics.json").to_str().unwrap(), csv.to_str().unwrap()]);
    assert_eq!(p["outputs"].as_array().unwrap().len(), 3);
    assert!(fs::read_to_string(out.join("plots/h1_heatmap.svg")).unwrap().starts_with("<svg"));

    assert_eq!(tree_bytes(&out.join("dataset")), dataset, "commands must not modify the dataset");
    let outside: Vec<_> = fs::read_dir(run.dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(outside.len(), 2, "only run.toml and out may exist: {outside:?}");
}

#[test]
fn repeated_eval_is_byte_identical() {
    let run = Run::new(SMALL);
    run.ok(&["synth"]);
    run.ok(&["train"]);
    run.ok(&["eval"]);
    let first = fs::read(run.out().join("metrics.json")).unwrap();
    run.ok(&["eval"]);
    assert_eq!(fs::read(run.out().join("metrics.json")).unwrap(), first);

    let again = Run::new(SMALL);
    again.ok(&["synth"]);
    again.ok(&["train"]);
    again.ok(&["eval"]);
    assert_eq!(fs::read(again.out().join("metrics.json")).unwrap(), first);
}

#[test]
fn eval_rejects_a_model_trained_on_another_grid() {
    let small = Run::new(&SMALL.replace("side = 11", "side = 9"));
    small.ok(&["synth"]);
    small.ok(&["train"]);

    let run = Run::new(SMALL);
    run.ok(&["synth"]);
    let model = small.out().join("model.ckpt");
    let o = run.cmd(&["eval", "--model", model.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = error_json(&o);
    assert_eq!(err["error"]["kind"], "validation");
    let msg = err["error"]["message"].as_str().unwrap();
    assert!(msg.contains("schema"), "{msg}");
    assert!(msg.contains("9x9") && msg.contains("11x11"), "{msg}");
}

#[test]
fn baseline_forecast_is_a_single_bright_center_pixel() {
    let run = Run::new(SMALL);
    run.ok(&["synth"]);
    let id = first_sample_id(&run.out());
    run.ok(&["forecast", "--sample", &id, "--baseline"]);
    let pgm = fs::read(run.out().join("forecast").join(&id).join("h0.pgm")).unwrap();
    let header = b"P5\n11 11\n65535\n";
    assert_eq!(&pgm[..header.len()], header);
    let pixels: Vec<u16> = pgm[header.len()..].chunks(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect();
    assert_eq!(pixels.len(), 121);
    let bright: Vec<usize> = (0..121).filter(|&i| pixels[i] != 0).collect();
    assert_eq!(bright, vec![5 * 11 + 5]);
    assert_eq!(pixels[60], 65535);
}

#[test]
fn environment_and_flags_override_the_file() {
    let run = Run::new(SMALL);
    let o = run.cmd(&["--seed", "5", "synth"], &[("GRIDCAST_SYNTH__SAMPLES", "60"), ("GRIDCAST_SEED", "4")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["details"]["samples"], 60);
    let explicit = Run::new(&SMALL.replace("seed = 3", "seed = 5").replace("samples = 120", "samples = 60"));
    let e = explicit.ok(&["synth"]);
    assert_eq!(s["config_hash"], e["config_hash"], "flag seed must beat env and file");
}

#[test]
fn failures_report_json_and_exit_codes() {
    let run = Run::new(SMALL);

    let o = run.cmd(&["train"], &[]);
    assert_eq!(o.status.code(), Some(1), "missing dataset is a validation error");
    error_json(&o);

    let o = run.cmd(&["synth"], &[("GRIDCAST_MODEL__BOGUS", "1")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(error_json(&o)["error"]["message"].as_str().unwrap().contains("bogus"));

    let o = run.cmd(&["--no-such-flag", "synth"], &[]);
    assert_eq!(o.status.code(), Some(1));
    error_json(&o);

    run.ok(&["synth"]);
    let o = run.cmd(&["forecast", "--sample", "missing", "--baseline"], &[]);
    assert_eq!(o.status.code(), Some(1));
    error_json(&o);

    let bad = run.dir.path().join("figure.txt");
    fs::write(&bad, "x").unwrap();
    let o = run.cmd(&["plot", bad.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    error_json(&o);

    // the output path is an existing file, so writing below it fails at run time
    let blocked = Run::new(SMALL);
    fs::write(blocked.out(), "not a directory").unwrap();
    let o = blocked.cmd(&["synth"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["kind"], "runtime");

    let o = Command::new(BIN).arg("--help").output().unwrap();
    assert!(o.status.success());
}

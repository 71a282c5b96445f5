use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gtl::assignment::{ots, EmpiricalMeasure};
use gtl::experiments::make_dataset;
use gtl::io::{load_checkpoint, load_tracks, save_checkpoint, Checkpoint, RunConfig};
use gtl::network::{ArchKind, Architecture, Network, Stage};
use gtl::numerics::{Matrix, Rng};
use serde_json::{json, Value};

fn config(train: Value) -> Value {
    json!({
        "dataset": {"kind": "blobs", "n_classes": 2, "per_class": 30, "dim": 2, "noise": 0.3, "separation": 4.0},
        "architecture": {"type": "resnet", "widths": [4], "blocks_per_stage": 2},
        "train": train,
    })
}

fn small_train(epochs: usize) -> Value {
    json!({"epochs": epochs, "batch_size": 8, "lr": 0.05, "ot_subsample": 20})
}

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Sandbox { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write_config(&self, cfg: &Value) -> PathBuf {
        let p = self.path("config.json");
        std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
        p
    }

    fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_str(&self.read(rel)).unwrap()
    }
}

fn gtl(args: &[&str]) -> Output {
    gtl_env(args, &[])
}

fn gtl_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gtl"));
    cmd.args(args).env_remove("GTL_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// CSV rows without the version comment and header, split into fields.
fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn csv_header(text: &str) -> Vec<String> {
    text.lines().find(|l| !l.starts_with('#')).unwrap().split(',').map(str::to_string).collect()
}

/// Trains a model in `sb` and returns (config path, out dir, checkpoint path).
fn trained(sb: &Sandbox, epochs: usize) -> (PathBuf, PathBuf, PathBuf) {
    let cfg = sb.write_config(&config(small_train(epochs)));
    let out = sb.path("out");
    let o = gtl(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (cfg, out.clone(), out.join("model_resnet.json"))
}

#[test]
fn zero_epochs_write_checkpoint_and_empty_log() {
    let sb = Sandbox::new();
    let (_, _, ck) = trained(&sb, 0);
    assert!(load_checkpoint(&ck).is_ok());
    let log = sb.read("out/train_resnet.csv");
    assert!(csv_rows(&log).is_empty());
    assert_eq!(csv_header(&log)[0], "epoch");
}

#[test]
fn reruns_are_byte_identical() {
    let sb = Sandbox::new();
    let cfg = sb.write_config(&config(small_train(5)));
    for out in ["a", "b"] {
        let o = gtl(&["train", "--config", s(&cfg), "--out", s(&sb.path(out)), "--seed", "9"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["model_resnet.json", "train_resnet.csv", "train_resnet.json"] {
        assert_eq!(sb.read(&format!("a/{f}")), sb.read(&format!("b/{f}")), "{f}");
    }
}

#[test]
fn blobs_train_to_full_accuracy() {
    let sb = Sandbox::new();
    trained(&sb, 50);
    let log = sb.read("out/train_resnet.csv");
    let header = csv_header(&log);
    let col = header.iter().position(|h| h == "train_acc").unwrap();
    let last = csv_rows(&log).pop().unwrap();
    assert_eq!(last[col].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn out_dir_falls_back_to_config() {
    let sb = Sandbox::new();
    let mut cfg = config(small_train(1));
    cfg["out_dir"] = json!(s(&sb.path("from_cfg")));
    let p = sb.write_config(&cfg);
    let o = gtl(&["train", "--config", s(&p)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(sb.path("from_cfg/model_resnet.json").exists());
}

#[test]
fn schema_violation_exits_2_with_field_path() {
    let sb = Sandbox::new();
    let p = sb.write_config(&config(json!({"lr": -1.0})));
    let o = gtl(&["train", "--config", s(&p), "--out", s(&sb.path("out"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train.lr"), "{}", stderr(&o));

    let mut bad = config(small_train(1));
    bad["architecture"]["widths"] = json!([4, 0]);
    let p = sb.write_config(&bad);
    let o = gtl(&["train", "--config", s(&p)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("architecture.widths[1]"), "{}", stderr(&o));
}

#[test]
fn missing_config_and_bad_usage_exit_2() {
    let sb = Sandbox::new();
    assert_eq!(code(&gtl(&["train", "--config", s(&sb.path("nope.json"))])), 2);
    assert_eq!(code(&gtl(&["train"])), 2);
    assert_eq!(code(&gtl(&["frobnicate"])), 2);
}

#[test]
fn divergence_exits_3() {
    let sb = Sandbox::new();
    let p = sb.write_config(&config(json!({"epochs": 3, "batch_size": 8, "lr": 1e200})));
    let o = gtl(&["train", "--config", s(&p), "--out", s(&sb.path("out"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn config_file_is_not_modified() {
    let sb = Sandbox::new();
    let (cfg, _, _) = trained(&sb, 0);
    let before = std::fs::read(&cfg).unwrap();
    let o = gtl(&["train", "--config", s(&cfg), "--out", s(&sb.path("out2")), "--seed", "3"]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&cfg).unwrap(), before);
}

fn zero_residue_checkpoint(path: &Path) {
    let arch = Architecture {
        kind: ArchKind::Resnet,
        input_dim: 2,
        widths: vec![2],
        blocks_per_stage: 3,
        n_classes: 2,
    };
    let mut net = Network::init(&arch, &mut Rng::new(0)).unwrap();
    if let Stage::Residual(r) = &mut net.stages[0] {
        for b in &mut r.blocks {
            b.w1 = Matrix::zeros(2, 2);
            b.w2 = Matrix::zeros(2, 2);
        }
    }
    save_checkpoint(path, &Checkpoint::new(arch, 0, net).unwrap()).unwrap();
}

#[test]
fn analyze_zero_residue_model_is_identity_transport() {
    let sb = Sandbox::new();
    let cfg = sb.write_config(&config(small_train(1)));
    let ck = sb.path("zero.json");
    zero_residue_checkpoint(&ck);
    let out = sb.path("out");
    let o = gtl(&["analyze", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&out), "--ots", "--w2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = sb.json("out/metrics.json");
    let st = &m["stages"][0];
    assert_eq!(st["ots"], json!(1.0));
    assert_eq!(st["w2"], json!(0.0));
    assert!(st.get("lss").is_none());
    assert!(st.get("theorem1").is_none());
}

#[test]
fn analyze_matches_library_metrics() {
    let sb = Sandbox::new();
    let (cfg, out, ck) = trained(&sb, 10);
    let o = gtl(&["analyze", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&out), "--ot-subsample", "10"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = sb.json("out/metrics.json");
    assert_eq!(m["n_samples"], json!(10));
    let st = &m["stages"][0];
    let t1 = st["theorem1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&t1));
    assert!(st["lss"].as_f64().unwrap() >= 1.0);

    let rc = RunConfig::load(&cfg).unwrap();
    let data = make_dataset(&rc.dataset, rc.train.seed).unwrap();
    let net = load_checkpoint(&ck).unwrap().weights;
    let eval = data.test.head(10);
    let inputs: Vec<_> = eval.inputs.iter().collect();
    let trace = net.forward_batch(&net.batch_of(&inputs).unwrap()).unwrap();
    let tracks = trace.tracks(0);
    let first = EmpiricalMeasure::new(tracks.iter().map(|t| t.states()[0].clone()).collect()).unwrap();
    let last = EmpiricalMeasure::new(tracks.iter().map(|t| t.states().last().unwrap().clone()).collect()).unwrap();
    assert_eq!(st["ots"].as_f64().unwrap(), ots(&first, &last).unwrap());
    assert!(!sb.read("out/metrics.csv").is_empty());
}

#[test]
fn checkpoint_problems_exit_2() {
    let sb = Sandbox::new();
    let (cfg, out, ck) = trained(&sb, 1);
    let text = std::fs::read_to_string(&ck).unwrap();
    let mut doc: Value = serde_json::from_str(&text).unwrap();
    doc["weights_sha256"] = json!("0".repeat(64));
    let tampered = sb.path("tampered.json");
    std::fs::write(&tampered, doc.to_string()).unwrap();
    let o = gtl(&["analyze", "--config", s(&cfg), "--checkpoint", s(&tampered), "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let mut other = config(small_train(1));
    other["dataset"]["dim"] = json!(3);
    let other_cfg = sb.path("dim3.json");
    std::fs::write(&other_cfg, other.to_string()).unwrap();
    let o = gtl(&["analyze", "--config", s(&other_cfg), "--checkpoint", s(&ck), "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn single_gamma_sweep_has_one_row() {
    let sb = Sandbox::new();
    let p = sb.write_config(&config(small_train(2)));
    let o = gtl(&["sweep", "--config", s(&p), "--out", s(&sb.path("out"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = sb.read("out/sweep.csv");
    assert_eq!(csv_rows(&csv).len(), 1);
    assert!(sb.path("out/model_resnet_g0.json").exists());
    assert!(sb.path("out/plot_resnet_lss_s0.csv").exists());
}

#[test]
fn paired_sweep_reports_both_architectures() {
    let sb = Sandbox::new();
    let mut cfg = config(small_train(2));
    cfg["architecture"]["type"] = json!("both");
    cfg["gammas"] = json!([0.0, 0.01]);
    let p = sb.write_config(&cfg);
    let o = gtl(&["sweep", "--config", s(&p), "--out", s(&sb.path("out")), "--ot-subsample", "10"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = sb.read("out/sweep.csv");
    let archs: Vec<String> = csv_rows(&csv).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(archs, ["plain", "plain", "resnet", "resnet"]);
    assert_eq!(sb.json("out/sweep.json")["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn partial_sweep_failure_still_succeeds() {
    let sb = Sandbox::new();
    let mut cfg = config(small_train(2));
    cfg["gammas"] = json!([0.0, 1e200]);
    let p = sb.write_config(&cfg);
    let o = gtl(&["sweep", "--config", s(&p), "--out", s(&sb.path("out"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&sb.read("out/sweep.csv"));
    assert_eq!(rows[0][2], "ok");
    assert_eq!(rows[1][2], "failed");

    cfg["gammas"] = json!([1e200]);
    let p = sb.write_config(&cfg);
    let o = gtl(&["sweep", "--config", s(&p), "--out", s(&sb.path("out2"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn robustness_at_zero_noise_is_clean() {
    let sb = Sandbox::new();
    let (cfg, out, ck) = trained(&sb, 10);
    let o = gtl(&[
        "robustness", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&out),
        "--noise", "gaussian", "--levels", "0,0.5,1.0,2.0",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = sb.json("out/robustness_gaussian.json");
    assert_eq!(r["accuracy"][0], r["clean_accuracy"]);
    assert!(r["vr"][0].as_array().unwrap().iter().all(|v| v.as_f64() == Some(0.0)));
    assert_eq!(r["layers"][0], json!("input"));
    let input_vr: Vec<f64> = r["vr"].as_array().unwrap().iter().map(|row| row[0].as_f64().unwrap()).collect();
    assert!(input_vr.windows(2).all(|w| w[1] > w[0]), "{input_vr:?}");
    assert_eq!(csv_rows(&sb.read("out/robustness_gaussian.csv")).len(), 4);

    let o = gtl(&["robustness", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&out), "--noise", "fgsm"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(csv_rows(&sb.read("out/robustness_fgsm.csv")).len(), 10);
}

#[test]
fn tracks_export_round_trips() {
    let sb = Sandbox::new();
    let (cfg, out, ck) = trained(&sb, 3);
    let o = gtl(&["tracks", "export", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&out), "--ot-subsample", "8"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let file = load_tracks(&out.join("tracks_s0.bin")).unwrap();
    let model = load_checkpoint(&ck).unwrap();
    assert_eq!(file.model_sha256, model.weights_sha256);
    assert_eq!(file.tracks.len(), 8);
    assert_eq!(file.n_states, 3);
    assert_eq!(file.dim, 4);
    let o = gtl(&["tracks", "export", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&out), "--stage", "5"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn ablate_k_zero_is_clean_accuracy() {
    let sb = Sandbox::new();
    let (cfg, out, ck) = trained(&sb, 10);
    let o = gtl(&["ablate-units", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&out), "--k", "0,2,4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&sb.read("out/ablation.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][1], "2");
    let clean: f64 = sb.json("out/ablation.json")["rows"][0]["accuracy"].as_f64().unwrap();
    let r = gtl(&[
        "robustness", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&out), "--noise", "gaussian", "--levels", "0",
    ]);
    assert_eq!(code(&r), 0);
    assert_eq!(sb.json("out/robustness_gaussian.json")["clean_accuracy"].as_f64().unwrap(), clean);
}

#[test]
fn thread_cap_is_validated() {
    let sb = Sandbox::new();
    let p = sb.write_config(&config(small_train(1)));
    let out = sb.path("out");
    let o = gtl_env(&["train", "--config", s(&p), "--out", s(&out)], &[("GTL_THREADS", "zero")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("GTL_THREADS"));
    let o = gtl_env(&["train", "--config", s(&p), "--out", s(&out)], &[("GTL_THREADS", "0")]);
    assert_eq!(code(&o), 2);
    let one = gtl_env(&["train", "--config", s(&p), "--out", s(&sb.path("one"))], &[("GTL_THREADS", "1")]);
    assert_eq!(code(&one), 0, "{}", stderr(&one));
    let many = gtl_env(&["train", "--config", s(&p), "--out", s(&sb.path("many"))], &[("GTL_THREADS", "4")]);
    assert_eq!(code(&many), 0);
    assert_eq!(sb.read("one/model_resnet.json"), sb.read("many/model_resnet.json"));
}

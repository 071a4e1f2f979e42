use std::path::Path;
use std::process::Command as Proc;

use clap::Parser;
use serde_json::Value;
use tempfile::tempdir;
use tryon_cli::{run, Cli, CliError, Command, EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE};

fn tryon(args: &[&str]) -> i32 {
    run(std::iter::once("tryon").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

const SMALL: &str = r#"{
  "renderer_id": "lipstick",
  "dataset": {"n": 8, "input": {"region": "lips", "margin_frac": 0.5, "width": 32, "height": 32}},
  "imitator": {"epochs": 3, "batch": 4, "width": 4, "res_blocks": 1, "critic_width": 4},
  "encoder": {"epochs": 1, "batch": 4, "width": 4}
}"#;

#[test]
fn parses_the_render_example() {
    let cli = Cli::try_parse_from([
        "tryon", "render", "--renderer", "lipstick", "--scene", "s.png", "--lip-mask", "m.png", "--params", "p.json",
        "--out", "o.png",
    ])
    .unwrap();
    assert!(matches!(cli.command, Command::Render { .. }));
    assert_eq!(tryon(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(tryon(&["render", "-s", "x"]), EXIT_USAGE);
    assert_eq!(tryon(&["--help"]), 0);
}

#[test]
fn missing_seed_and_unknown_keys_are_usage_errors() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("scenes");
    assert_eq!(tryon(&["gen-scenes", "--n", "1", "--out", p(&out)]), EXIT_USAGE);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 1, "imitator": {"epochs": 1, "bogus": 2}}"#).unwrap();
    assert_eq!(tryon(&["gen-scenes", "--config", p(&cfg), "--out", p(&out)]), EXIT_USAGE);
    std::fs::write(&cfg, r#"{"seed": 1, "extra": 0}"#).unwrap();
    assert_eq!(tryon(&["gen-scenes", "--config", p(&cfg), "--out", p(&out)]), EXIT_USAGE);
    assert_eq!(tryon(&["gen-scenes", "--config", p(&dir.path().join("none.json")), "--out", p(&out)]), EXIT_DATA);
}

#[test]
fn exit_codes_by_error_class() {
    assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
    assert_eq!(CliError::Core(tryon_core::Error::data("x")).exit_code(), EXIT_DATA);
    assert_eq!(CliError::Core(tryon_core::Error::Numeric("nan".into())).exit_code(), EXIT_NUMERIC);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_tryon");
    assert_eq!(Proc::new(bin).arg("nope").output().unwrap().status.code(), Some(EXIT_USAGE));
    let dir = tempdir().unwrap();
    let status = Proc::new(bin)
        .args(["make-dataset", "--renderer", "lipstick", "--seed", "1", "--n", "1"])
        .args(["--scenes", p(&dir.path().join("missing")), "--out", p(&dir.path().join("d"))])
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(EXIT_DATA));
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_end_to_end_is_deterministic() {
    let root = tempdir().unwrap();
    let r = root.path();
    let cfg = r.join("run.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let scenes = r.join("scenes");
    assert_eq!(tryon(&["gen-scenes", "--seed", "5", "--n", "3", "--size", "96", "--out", p(&scenes)]), 0);
    assert_eq!(std::fs::read_dir(&scenes).unwrap().count(), 4);
    let params = r.join("params.json");
    assert_eq!(tryon(&["sample-params", "--renderer", "hair", "--seed", "2", "--n", "4", "--out", p(&params)]), 0);
    assert_eq!(read_json(&params).as_array().unwrap().len(), 4);
    assert!(r.join("params.json.run.json").is_file());

    let empty = r.join("empty");
    let args = ["make-dataset", "--config", p(&cfg), "--seed", "1", "--scenes", p(&scenes), "--n", "0", "--out", p(&empty)];
    assert_eq!(tryon(&args), 0);
    let manifest = read_json(&empty.join("manifest.json"));
    assert_eq!(manifest["n"], 0);
    assert!(manifest["entries"].as_array().unwrap().is_empty());

    let mut outputs = Vec::new();
    let base = r.join("run");
    for _ in 0..2 {
        let _ = std::fs::remove_dir_all(&base);
        let (data, imi, enc) = (base.join("data"), base.join("imitator"), base.join("encoder"));
        let args = ["make-dataset", "--config", p(&cfg), "--seed", "1", "--scenes", p(&scenes), "--out", p(&data)];
        assert_eq!(tryon(&args), 0);
        let args = ["train-imitator", "--config", p(&cfg), "--seed", "3", "--dataset", p(&data), "--epochs", "1", "--out", p(&imi)];
        assert_eq!(tryon(&args), 0);
        let args = ["train-encoder", "--config", p(&cfg), "--seed", "4", "--dataset", p(&data), "--imitator", p(&imi), "--out", p(&enc)];
        assert_eq!(tryon(&args), 0);
        outputs.push((dir_bytes(&data), dir_bytes(&imi), dir_bytes(&enc)));
    }
    assert_eq!(outputs[0], outputs[1]);

    let imi = base.join("imitator");
    let rec = read_json(&imi.join("run.json"));
    assert_eq!(rec["config"]["imitator"]["epochs"], 1);
    assert_eq!(rec["seed"], 3);
    assert_eq!(rec["config_hash"].as_str().unwrap().len(), 64);
    let losses = std::fs::read_to_string(imi.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 2);

    let enc = base.join("encoder");
    let scene0 = std::fs::read_dir(&scenes).unwrap().map(|e| e.unwrap().path()).filter(|d| d.is_dir()).min().unwrap();
    let (img, mask) = (scene0.join("image.png"), scene0.join("lip_mask.png"));
    let est = r.join("est.json");
    let args = ["encode", "--encoder", p(&enc), "--reference", p(&img), "--lip-mask", p(&mask), "--out", p(&est)];
    assert_eq!(tryon(&args), 0);
    let doc = read_json(&est);
    assert_eq!(doc["renderer_id"], "lipstick");
    let shown = r.join("shown.png");
    let args = ["render", "--renderer", "lipstick", "--scene", p(&img), "--lip-mask", p(&mask), "--params", p(&est), "--out", p(&shown)];
    assert_eq!(tryon(&args), 0);
    assert!(shown.is_file());
    let args = ["encode", "--encoder", p(&enc), "--reference", p(&img), "--lip-mask", p(&mask), "--lip-mask", p(&mask)];
    assert_eq!(tryon(&args), EXIT_USAGE);

    let ev = r.join("eval");
    let args = ["eval-transfer", "--seed", "7", "--encoder", p(&enc), "--scenes", p(&scenes), "--n", "3", "--out", p(&ev)];
    assert_eq!(tryon(&args), 0);
    assert_eq!(read_json(&ev.join("summary.json"))["summary"]["n"], 3);
    let ab = r.join("ablation");
    let cond = format!("graphics_only={}", p(&enc));
    let cond2 = format!("both={}", p(&enc));
    let args = ["eval-ablation", "--seed", "7", "--condition", &cond, "--condition", &cond2, "--scenes", p(&scenes), "--n", "2", "--out", p(&ab)];
    assert_eq!(tryon(&args), 0);
    let csv = std::fs::read_to_string(ab.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(ab.join("ablation.md").is_file());

    let sc = r.join("sens");
    let args = ["sens-corr", "--seed", "1", "--imitator", p(&imi), "--scenes", p(&scenes), "--probes", "10", "--out", p(&sc)];
    assert_eq!(tryon(&args), 0);
    assert_eq!(read_json(&sc.join("sens_corr.json"))["correlation"].as_array().unwrap().len(), 7);
    let args = ["sens-corr", "--seed", "1", "--imitator", p(&imi), "--scenes", p(&scenes), "--probes", "5", "--out", p(&sc)];
    assert_eq!(tryon(&args), EXIT_DATA);
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn sfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfa")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = sfa(args);
    assert!(out.status.success(), "sfa {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_data(dir: &Path) {
    ok(&["gen-data", "--out", s(dir), "--train", "4", "--test", "3", "--n", "64", "--m", "256", "--views", "1", "--seed", "3"]);
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_data_writes_450_ids() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("d");
    let out = ok(&["gen-data", "--out", s(&d), "--train", "400", "--test", "50", "--n", "256", "--m", "256", "--views", "1", "--seed", "7"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("450 shapes"));
    let manifest = json(&d.join("manifest.json"));
    let entries = manifest["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 450);
    let test = entries.iter().filter(|e| e["split"] == "test").count();
    assert_eq!(test, 50);
}

#[test]
fn gen_data_is_bitwise_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen-data", "--out", s(d), "--train", "6", "--test", "2", "--n", "64", "--m", "512", "--seed", "7", "--format", "binary"]);
    }
    let (ta, tb) = (tree(&a), tree(&b));
    let strip = |t: BTreeMap<PathBuf, Vec<u8>>| t.into_iter().filter(|(p, _)| p != Path::new("config.json")).collect::<BTreeMap<_, _>>();
    assert_eq!(strip(ta), strip(tb));
}

#[test]
fn small_point_count_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = sfa(&["gen-data", "--out", s(tmp.path()), "--n", "32"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("64"));
}

#[test]
fn config_file_fills_unset_flags() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(&cfg, r#"{"gen_data": {"n": 32, "train": 2, "test": 1, "m": 128}}"#).unwrap();
    let d = tmp.path().join("d");
    assert_eq!(sfa(&["--config", s(&cfg), "gen-data", "--out", s(&d)]).status.code(), Some(2));
    ok(&["--config", s(&cfg), "gen-data", "--out", s(&d), "--n", "64"]);
    let resolved = json(&d.join("config.json"));
    assert_eq!(resolved["synth"]["n_points"], 64);
    assert_eq!(resolved["synth"]["m_points"], 128);
}

#[test]
fn refinement_mismatch_rejected_before_work() {
    let out = sfa(&["train", "--r", "8", "--t", "2", "--u", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t*u^2 = r"));
}

#[test]
fn train_records_ratio_and_writes_artifacts() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("d");
    tiny_data(&d);
    let o = tmp.path().join("run");
    ok(&["train", "--data", s(&d), "--out", s(&o), "--ratio", "1:1", "--iters", "2", "--batch-size", "2"]);
    let cfg = json(&o.join("config.json"));
    let expansion = &cfg["train"]["network"]["expansion"];
    assert_eq!((expansion["r"].as_u64(), expansion["j"].as_u64(), expansion["k"].as_u64()), (Some(8), Some(4), Some(4)));
    assert_eq!(cfg["train"]["network"]["n_points"], 64);
    assert!(o.join("checkpoint.sfackpt").is_file());
    let log = fs::read_to_string(o.join("loss_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn training_is_deterministic_and_rfa_selectable() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("d");
    tiny_data(&d);
    let runs: Vec<PathBuf> = (0..2).map(|i| tmp.path().join(format!("r{i}"))).collect();
    for o in &runs {
        ok(&["train", "--strategy", "rfa", "--preset", "desk", "--n-points", "64", "--data", s(&d), "--out", s(o), "--iters", "3", "--batch-size", "2"]);
    }
    assert_eq!(json(&runs[0].join("config.json"))["train"]["network"]["strategy"], "rfa");
    for f in ["loss_log.csv", "checkpoint.sfackpt"] {
        assert_eq!(fs::read(runs[0].join(f)).unwrap(), fs::read(runs[1].join(f)).unwrap(), "{f} differs");
    }
}

fn trained(tmp: &Path) -> (PathBuf, PathBuf) {
    let d = tmp.join("d");
    tiny_data(&d);
    let o = tmp.join("run");
    ok(&["train", "--preset", "desk", "--n-points", "64", "--data", s(&d), "--out", s(&o), "--iters", "2", "--batch-size", "2"]);
    (d, o.join("checkpoint.sfackpt"))
}

#[test]
fn eval_oracle_and_schema() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("d");
    tiny_data(&d);
    let e = tmp.path().join("e");
    ok(&["eval", "--data", s(&d), "--out", s(&e), "--baseline", "oracle"]);
    let csv = fs::read_to_string(e.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("category,count,cd_x1e4"));
    for l in lines {
        assert_eq!(l.split(',').nth(2).unwrap().parse::<f64>().unwrap(), 0.0, "{l}");
    }
    assert!(fs::read_to_string(e.join("metrics.txt")).unwrap().contains("Average"));

    ok(&["eval", "--data", s(&d), "--out", s(&e), "--baseline", "tiled-partial", "--r", "4", "--fidelity"]);
    let csv = fs::read_to_string(e.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("category,count,cd_x1e4,fidelity\n"));
}

#[test]
fn eval_mmd_self_match_and_determinism() {
    let tmp = TempDir::new().unwrap();
    let (d, ck) = trained(tmp.path());
    let e1 = tmp.path().join("e1");
    ok(&["eval", "--checkpoint", s(&ck), "--data", s(&d), "--out", s(&e1), "--save-outputs"]);
    let e2 = tmp.path().join("e2");
    ok(&["eval", "--checkpoint", s(&ck), "--data", s(&d), "--out", s(&e2), "--save-outputs"]);
    assert_eq!(fs::read(e1.join("metrics.csv")).unwrap(), fs::read(e2.join("metrics.csv")).unwrap());

    let e3 = tmp.path().join("e3");
    let refs = e1.join("outputs");
    ok(&["eval", "--checkpoint", s(&ck), "--data", s(&d), "--out", s(&e3), "--mmd", "--reference-dir", s(&refs)]);
    let csv = fs::read_to_string(e3.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("category,count,cd_x1e4,mmd"));
    for l in lines {
        assert_eq!(l.split(',').nth(3).unwrap().parse::<f64>().unwrap(), 0.0, "{l}");
    }
}

#[test]
fn eval_missing_checkpoint_is_io_error() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("d");
    tiny_data(&d);
    let out = sfa(&["eval", "--checkpoint", s(&tmp.path().join("nope.sfackpt")), "--data", s(&d), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn complete_writes_rn_points_and_parts() {
    let tmp = TempDir::new().unwrap();
    let (d, ck) = trained(tmp.path());
    let manifest = json(&d.join("manifest.json"));
    let input = d.join(manifest["entries"][0]["partials"][0].as_str().unwrap());
    let outs: Vec<PathBuf> = (0..2).map(|i| tmp.path().join(format!("c{i}"))).collect();
    for o in &outs {
        ok(&["complete", "--checkpoint", s(&ck), "--input", s(&input), "--out", s(o), "--export-parts"]);
    }
    let completed = fs::read_to_string(outs[0].join("completed.xyz")).unwrap();
    assert_eq!(completed.lines().count(), 4 * 64);
    assert_eq!(completed, fs::read_to_string(outs[1].join("completed.xyz")).unwrap());

    let parts = fs::read_to_string(outs[0].join("parts.txt")).unwrap();
    assert_eq!(parts.lines().count(), 4 * 64);
    let mut known = 0;
    for l in parts.lines() {
        let cols: Vec<&str> = l.split_whitespace().collect();
        assert_eq!(cols.len(), 7);
        assert!(cols[6] == "known" || cols[6] == "missing");
        known += (cols[6] == "known") as usize;
    }
    assert_eq!(known, 2 * 64);
    let att = fs::read_to_string(outs[0].join("attention.txt")).unwrap();
    assert_eq!(att.lines().count(), 64);
    assert!(att.lines().all(|l| l.ends_with(" att")));
}

#[test]
fn complete_reports_parse_location() {
    let tmp = TempDir::new().unwrap();
    let (_, ck) = trained(tmp.path());
    let bad = tmp.path().join("bad.xyz");
    fs::write(&bad, "0 0 0\n1 2 oops\n").unwrap();
    let out = sfa(&["complete", "--checkpoint", s(&ck), "--input", s(&bad), "--out", s(&tmp.path().join("c"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn ablate_writes_table() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("d");
    tiny_data(&d);
    let o = tmp.path().join("ab");
    ok(&[
        "ablate", "--axis", "ratio", "--values", "4:0,2:2", "--preset", "desk", "--n-points", "64", "--data", s(&d), "--out", s(&o), "--iters", "1",
        "--batch-size", "2",
    ]);
    let csv = fs::read_to_string(o.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "ratio,j,k,mean_cd_x1e4");
    assert!(lines[1].starts_with("4:0,4,0,") && lines[2].starts_with("2:2,2,2,"));
    let bad = sfa(&["ablate", "--axis", "ratio", "--values", "3:2", "--preset", "desk", "--data", s(&d), "--out", s(&o)]);
    assert_eq!(bad.status.code(), Some(2));
}

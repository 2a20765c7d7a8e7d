use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use motrack_core::data::read_native_split;
use motrack_core::eval::{write_predictions, PredictionRecord, OpeReport};
use motrack_core::nn::checkpoint;
use motrack_core::Split;

const TINY: &str = "\
train_tracklets = 4
val_tracklets = 0
test_tracklets = 3
frames = 5
distractors = 1
point_widths = [8, 16]
head_hidden = 8
epochs = 1
batch_size = 4
points_per_frame = 32
";

fn motrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = motrack(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn fixture(extra: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.toml");
    fs::write(&config, format!("{TINY}{extra}")).unwrap();
    let data = root.join("data");
    ok(&["generate", "--config", s(&config), "--seed", "3", "--out", s(&data)]);
    Fixture {
        _dir: dir,
        root,
        config,
        data,
    }
}

fn read_tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generate_is_reproducible() {
    let f = fixture("");
    let again = f.root.join("again");
    let out = ok(&["generate", "--config", s(&f.config), "--seed", "3", "--out", s(&again)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("7 tracklets"));
    // the config snapshot records the output path, everything else must match
    let data = |root: &Path| {
        let mut t = read_tree(root);
        t.retain(|(p, _)| p != Path::new("config.toml"));
        t
    };
    assert_eq!(data(&f.data), data(&again));
    assert!(f.data.join("config.toml").exists());
    assert_eq!(read_native_split(&f.data, Split::Train).unwrap().len(), 4);
    assert_eq!(read_native_split(&f.data, Split::Test).unwrap().len(), 3);
}

#[test]
fn generate_records_distractor_tracks() {
    let f = fixture("");
    let k5 = f.root.join("k5");
    ok(&["generate", "--config", s(&f.config), "--out", s(&k5), "--seed", "1"]);
    let cfg = f.root.join("k5.toml");
    fs::write(&cfg, TINY.replace("distractors = 1", "distractors = 5")).unwrap();
    ok(&["generate", "--config", s(&cfg), "--out", s(&k5)]);
    for t in read_native_split(&k5, Split::Test).unwrap() {
        assert_eq!(t.annotations.unwrap().distractors.len(), 5);
    }
}

#[test]
fn train_resume_and_seed() {
    let f = fixture("");
    let run = f.root.join("run");
    ok(&["train", "--config", s(&f.config), "--dataset", s(&f.data), "--out", s(&run)]);
    let ckpt = run.join("model.ckpt");
    let (_, header) = checkpoint::load(&ckpt).unwrap();
    assert_eq!(header.epochs_completed, 1);
    assert!(run.join("config.toml").exists());
    let log1 = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(log1.lines().count(), 1);

    // resume to epoch 2 with the same settings
    let cfg2 = f.root.join("two.toml");
    fs::write(&cfg2, TINY.replace("epochs = 1", "epochs = 2")).unwrap();
    let resumed = f.root.join("resumed");
    fs::create_dir_all(&resumed).unwrap();
    fs::copy(&ckpt, resumed.join("start.ckpt")).unwrap();
    ok(&[
        "train", "--config", s(&cfg2), "--dataset", s(&f.data), "--out", s(&resumed), "--resume",
        s(&resumed.join("start.ckpt")),
    ]);
    let (_, header) = checkpoint::load(&resumed.join("model.ckpt")).unwrap();
    assert_eq!(header.epochs_completed, 2);
    let log = fs::read_to_string(resumed.join("metrics.jsonl")).unwrap();
    assert!(log.lines().count() == 1 && log.contains("\"epoch\":1"));

    let other = f.root.join("other");
    ok(&["train", "--config", s(&f.config), "--dataset", s(&f.data), "--out", s(&other), "--seed", "99"]);
    assert_ne!(fs::read_to_string(other.join("metrics.jsonl")).unwrap(), log1);
}

#[test]
fn track_then_eval() {
    let f = fixture("");
    let run = f.root.join("run");
    ok(&["train", "--config", s(&f.config), "--dataset", s(&f.data), "--out", s(&run)]);
    let ckpt = run.join("model.ckpt");
    let tr = f.root.join("track");
    let out = ok(&["track", "--config", s(&f.config), "--dataset", s(&f.data), "--out", s(&tr), "--checkpoint", s(&ckpt)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("ms/frame"));
    let preds = tr.join("predictions.jsonl");
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 3 * 5);

    let e1 = f.root.join("e1");
    let e2 = f.root.join("e2");
    for e in [&e1, &e2] {
        ok(&["eval", "--config", s(&f.config), "--dataset", s(&f.data), "--out", s(e), "--predictions", s(&preds)]);
    }
    assert_eq!(fs::read(e1.join("report.json")).unwrap(), fs::read(e2.join("report.json")).unwrap());
    assert!(fs::read_to_string(e1.join("report.txt")).unwrap().contains("overall"));
}

#[test]
fn ground_truth_predictions_score_perfectly() {
    let f = fixture("");
    let records: Vec<PredictionRecord> = read_native_split(&f.data, Split::Test)
        .unwrap()
        .iter()
        .flat_map(|t| {
            t.gt_boxes.iter().enumerate().map(|(i, b)| PredictionRecord {
                tracklet: t.id.clone(),
                frame: i,
                bbox: b.to_array(),
                dynamic: false,
                wall_ms: 0.0,
            })
        })
        .collect();
    let preds = f.root.join("gt.jsonl");
    write_predictions(&preds, &records).unwrap();
    let out = f.root.join("gt_eval");
    ok(&["eval", "--config", s(&f.config), "--dataset", s(&f.data), "--out", s(&out), "--predictions", s(&preds)]);
    let r: OpeReport = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!((r.success - 100.0).abs() < 1e-9 && (r.precision - 100.0).abs() < 1e-9);

    // one missing frame is a length mismatch
    write_predictions(&preds, &records[1..]).unwrap();
    let bad = motrack(&["eval", "--config", s(&f.config), "--dataset", s(&f.data), "--out", s(&out), "--predictions", s(&preds)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("\"error\""));
}

#[test]
fn baseline_sweep_has_one_row_per_k() {
    let f = fixture("");
    let out = f.root.join("sweep");
    let o = ok(&[
        "eval", "--config", s(&f.config), "--dataset", s(&f.data), "--out", s(&out), "--baseline", "zero-motion",
        "--distractor-sweep", "0,2,4", "--threads", "1",
    ]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("zero-motion"));
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&fs::read(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    let tr = f.root.join("kal");
    ok(&["track", "--config", s(&f.config), "--dataset", s(&f.data), "--out", s(&tr), "--baseline", "kalman-cv"]);
}

#[test]
fn failures_exit_non_zero() {
    let f = fixture("");
    let bad_cfg = f.root.join("bad.toml");
    fs::write(&bad_cfg, "batch_size = 0\n").unwrap();
    assert!(!motrack(&["generate", "--config", s(&bad_cfg)]).status.success());
    fs::write(&bad_cfg, "no_such_key = 1\n").unwrap();
    assert!(!motrack(&["generate", "--config", s(&bad_cfg)]).status.success());
    let missing = f.root.join("missing");
    assert!(!motrack(&["train", "--config", s(&f.config), "--dataset", s(&missing)]).status.success());
    assert!(!motrack(&["track", "--config", s(&f.config), "--dataset", s(&f.data)]).status.success());

    // checkpoint trained with other widths
    let run = f.root.join("run");
    ok(&["train", "--config", s(&f.config), "--dataset", s(&f.data), "--out", s(&run)]);
    let wide = f.root.join("wide.toml");
    fs::write(&wide, TINY.replace("[8, 16]", "[8, 32]")).unwrap();
    let o = motrack(&[
        "track", "--config", s(&wide), "--dataset", s(&f.data), "--out", s(&f.root.join("t")), "--checkpoint",
        s(&run.join("model.ckpt")),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("do not match"));
}

use radionet::dataset::Dataset;
use radionet::io::{Checkpoint, GrayImage};
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "model.variant = radionet
model.input_res = 32
model.output_res = 16
model.ch = 4
model.enc_stages = 2
model.dec_stages = 1
model.d_item = 32
model.n_heads = 2
model.d_hidden = 64
train.lr = 0.001
train.batch_size = 2
train.iterations = 4
train.eval_every = 2
oracle.n_rays = 720
";

fn radionet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radionet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    ok(radionet(
        dir.path(),
        &["--seed", "2", "--config", "tiny.cfg", "gen-dataset", "--count", "8", "--out", "d.rmap", "--scene-dir", "scenes"],
    ));
    dir
}

#[test]
fn every_command_has_help() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 5] = [
        ("gen-dataset", &["--count", "--out", "--scene-dir"]),
        ("train", &["--data", "--out", "--variant", "--curve", "--resume"]),
        ("ablate", &["--data", "--out-dir"]),
        ("predict", &["--checkpoint", "--scene", "--out", "--truth", "--error-out", "--color"]),
        ("bench", &["--checkpoint", "--data", "--scenes", "--out"]),
    ];
    for (cmd, flags) in cases {
        let text = ok(radionet(dir.path(), &[cmd, "--help"]));
        for f in flags.iter().chain(&["--seed", "--config", "--set"]) {
            assert!(text.contains(f), "{cmd} --help lacks {f}:\n{text}");
        }
    }
    let top = ok(radionet(dir.path(), &["--help"]));
    for cmd in ["gen-dataset", "train", "ablate", "predict", "bench"] {
        assert!(top.contains(cmd));
    }
}

#[test]
fn gen_dataset_header_and_determinism() {
    let dir = setup();
    let d = Dataset::read(&dir.path().join("d.rmap")).unwrap();
    assert_eq!((d.len(), d.c_in, d.h_in, d.w_in, d.h_out, d.w_out), (8, 6, 32, 32, 16, 16));
    let out = ok(radionet(dir.path(), &["--seed", "2", "--config", "tiny.cfg", "gen-dataset", "--count", "8", "--out", "e.rmap"]));
    assert!(out.contains(&d.checksum()));
    assert_eq!(std::fs::read_dir(dir.path().join("scenes")).unwrap().count(), 8);
}

#[test]
fn train_resume_and_variants() {
    let dir = setup();
    let base = ["--seed", "1", "--config", "tiny.cfg"];
    for v in ["unet", "radionet"] {
        let ck = format!("{v}.rnck");
        let args = [&base[..], &["train", "--data", "d.rmap", "--out", &ck, "--variant", v]].concat();
        let out = ok(radionet(dir.path(), &args));
        assert!(out.contains("val l1"));
        let csv = std::fs::read_to_string(dir.path().join(format!("{v}.csv"))).unwrap();
        assert!(csv.starts_with("iteration,train_l1,val_l1\n2,"));
    }
    let args = [&base[..], &["--set", "train.iterations=6", "train", "--data", "d.rmap", "--out", "r.rnck", "--resume", "radionet.rnck"]].concat();
    ok(radionet(dir.path(), &args));
    assert_eq!(Checkpoint::read(&dir.path().join("r.rnck")).unwrap().iteration, 6);
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("6,"), "{csv}");
}

#[test]
fn usage_errors() {
    let dir = setup();
    let out = radionet(dir.path(), &["--config", "tiny.cfg", "train", "--data", "d.rmap", "--out", "x.rnck", "--variant", "resnet"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("radionet_no_ge") && err.contains("transunet"), "{err}");
    let out = radionet(dir.path(), &["--set", "train.momentum=0.9", "train", "--data", "d.rmap", "--out", "x.rnck"]);
    assert_eq!(out.status.code(), Some(2));
    // Desk-resolution model against a tiny dataset.
    let out = radionet(dir.path(), &["train", "--data", "d.rmap", "--out", "x.rnck"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset is 32x32"));
}

#[test]
fn predict_writes_images() {
    let dir = setup();
    ok(radionet(dir.path(), &["--config", "tiny.cfg", "train", "--data", "d.rmap", "--out", "m.rnck"]));
    let out = ok(radionet(
        dir.path(),
        &["--config", "tiny.cfg", "predict", "--checkpoint", "m.rnck", "--scene", "scenes/scene_00003.toml", "--out", "p.pgm", "--truth", "--color"],
    ));
    assert!(out.starts_with("l1 = "));
    for name in ["p.pgm", "p_error.pgm"] {
        let img = GrayImage::from_pgm(&std::fs::read(dir.path().join(name)).unwrap()).unwrap();
        assert_eq!((img.width, img.height), (16, 16));
    }
    assert!(dir.path().join("p.ppm").exists() && dir.path().join("p_error.ppm").exists());
}

#[test]
fn bench_report_fields() {
    let dir = setup();
    ok(radionet(dir.path(), &["--config", "tiny.cfg", "train", "--data", "d.rmap", "--out", "m.rnck"]));
    ok(radionet(dir.path(), &["--seed", "3", "--config", "tiny.cfg", "bench", "--checkpoint", "m.rnck", "--data", "d.rmap", "--out", "b.txt"]));
    let report = std::fs::read_to_string(dir.path().join("b.txt")).unwrap();
    let field = |k: &str| -> f64 {
        report.lines().find_map(|l| l.strip_prefix(k)?.strip_prefix(" = ")?.parse().ok()).unwrap()
    };
    let (mm, mo, ratio, rel) = (field("mean_model_latency_s"), field("mean_oracle_latency_s"), field("ratio"), field("reliability"));
    assert!(mm > 0.0 && mo > 0.0);
    assert!((ratio - mo / mm).abs() <= 1e-3 * ratio + 1e-3);
    assert!((0.0..=1.0).contains(&rel));
    assert_eq!(report.lines().filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit())).count(), 10);
}

#[test]
fn ablate_reports_six_rows() {
    let dir = setup();
    let out = ok(radionet(dir.path(), &["--seed", "4", "--config", "tiny.cfg", "ablate", "--data", "d.rmap", "--out-dir", "abl"]));
    assert_eq!(out.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| model")).count(), 6);
    assert_eq!(std::fs::read_to_string(dir.path().join("abl/ablation.md")).unwrap(), out);
}

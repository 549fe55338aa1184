use std::path::Path;
use std::process::{Command, Output};

fn aeanet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aeanet"))
        .args(args)
        .env("AEANET_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = "\
base_channels = 4
refs = 4
batch_size = 2
steps = 3
crop = 32
val_every = 0
";

#[test]
fn check_reports_and_sets_exit_code() {
    let o = aeanet(&["check", "--op", "self-attention", "--trials", "100"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("equivariance max err"));

    let o = aeanet(&["check", "--op", "learned-query", "--expect", "invariant"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    for op in ["shared-reference", "batch-aware"] {
        assert_eq!(aeanet(&["check", "--op", op, "--trials", "20", "--norm", "softmax"]).status.code(), Some(0));
    }
    let o = aeanet(&["check", "--op", "shared-reference", "--expect", "invariant", "--trials", "5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(aeanet(&["train", "--out", p(dir.path())]).status.code(), Some(2));
    let missing = dir.path().join("nope");
    assert_eq!(aeanet(&["train", "--data", p(&missing), "--out", p(dir.path())]).status.code(), Some(2));
    assert_eq!(aeanet(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(aeanet(&["check", "--op", "conv"]).status.code(), Some(2));
    assert_eq!(aeanet(&["check", "--op", "self-attention", "--bogus"]).status.code(), Some(2));
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_aeanet"))
        .args(["check", "--op", "self-attention", "--trials", "1"])
        .env("AEANET_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));
}

#[test]
fn help_exists_for_every_subcommand() {
    for sub in ["gen-data", "train", "predict", "eval", "check", "ablate", "sweep", "heatmap"] {
        let o = aeanet(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = aeanet(&["eval", "--ckpt", p(&dir.path().join("none.aean")), "--data", p(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = (dir.path().join("data"), dir.path().join("run"));
    let conf = dir.path().join("tiny.conf");
    std::fs::write(&conf, TINY).unwrap();

    let o = aeanet(&["gen-data", "--out", p(&data), "--count", "4", "--size", "64", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(data.join("manifest.txt").exists());
    assert!(data.join("synth000").join("hr.png").exists());

    let train = |out: &Path| aeanet(&["train", "--data", p(&data), "--out", p(out), "--config", p(&conf), "--seed", "5"]);
    let o = train(&run);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = run.join("checkpoint.aean");
    let loss = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4);
    // Same seed, same bytes.
    let again = dir.path().join("again");
    train(&again);
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(again.join("checkpoint.aean")).unwrap());

    let preds = dir.path().join("pred");
    let o = aeanet(&["predict", "--ckpt", p(&ckpt), "--input", p(&data.join("synth003").join("lr.png")), "--out", p(&preds), "--patch-size", "32"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(preds.join("lr.png").exists());

    let o = aeanet(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--patch-size", "32", "--out", p(&run)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("ΔPSNR"));
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("id,psnr,ssim,delta_psnr,delta_ssim,fg_delta_psnr,bg_delta_psnr"));
    assert!(csv.lines().last().unwrap().starts_with("mean,"));

    let o = aeanet(&["sweep", "--ckpt", p(&ckpt), "--data", p(&data), "--sizes", "16,32", "--patch-size", "64"]);
    assert_eq!(o.status.code(), Some(0));
    let table = stdout(&o);
    assert!(table.contains("monotonic"));
    assert_eq!(table.lines().count(), 5);
    assert_eq!(aeanet(&["sweep", "--ckpt", p(&ckpt), "--data", p(&data), "--sizes", "10"]).status.code(), Some(2));

    let maps = dir.path().join("maps");
    let inputs = [data.join("synth000").join("lr.png"), data.join("synth001").join("lr.png")];
    let o = aeanet(&["heatmap", "--ckpt", p(&ckpt), "--input", p(&inputs[0]), p(&inputs[1]), "--out", p(&maps), "--refs", "0,3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(maps.join("lr_ref0.png").exists() && maps.join("lr_ref3.png").exists());
    assert!(maps.join("montage.png").exists());
    let o = aeanet(&["heatmap", "--ckpt", p(&ckpt), "--input", p(&inputs[0]), "--out", p(&maps), "--refs", "9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn self_strategy_writes_one_checkpoint_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = (dir.path().join("data"), dir.path().join("run"));
    let conf = dir.path().join("tiny.conf");
    std::fs::write(&conf, TINY.replace("crop = 32", "crop = 16").replace("steps = 3", "steps = 1")).unwrap();
    aeanet(&["gen-data", "--out", p(&data), "--count", "2", "--size", "64"]);
    let o = aeanet(&["train", "--data", p(&data), "--out", p(&run), "--config", p(&conf), "--strategy", "self"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for id in ["synth000", "synth001"] {
        assert!(run.join(id).join("checkpoint.aean").exists());
    }
}

#[test]
fn ablate_prints_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let conf = dir.path().join("tiny.conf");
    std::fs::write(&conf, TINY.replace("steps = 3", "steps = 1")).unwrap();
    aeanet(&["gen-data", "--out", p(&data), "--count", "4", "--size", "64"]);
    let o = aeanet(&["ablate", "--data", p(&data), "--config", p(&conf), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("ablation.txt")).unwrap();
    assert_eq!(table.lines().count(), 8);
    for label in ["SR only (64)", "BA only", "BA + SR (16)", "BA + SR (32)", "BA + SR (64)", "none", "self_only"] {
        assert!(table.contains(label), "{label}");
    }
}

mod common;

use std::path::Path;
use std::process::{Command, Output};

fn estf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_estf")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_toy(dir: &Path) {
    let o = estf(&[
        "gen",
        "--classes",
        "4",
        "--per-class",
        "10",
        "--duration",
        "1",
        "--width",
        "16",
        "--height",
        "16",
        "--seed",
        "3",
        "--out",
        s(dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains(s(&dir.join("manifest.csv"))));
}

fn toy_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("toy.cfg");
    common::toy_run(25).save(&path).unwrap();
    path
}

#[test]
fn usage_errors_exit_2() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(estf(&["gen", "--classes", "0", "--out", s(out.path())]).status.code(), Some(2));
    assert_eq!(estf(&["gen", "--classes", "13", "--out", s(out.path())]).status.code(), Some(2));
    assert_eq!(estf(&["train", "--out", s(out.path())]).status.code(), Some(2));
    assert_eq!(
        estf(&["eval", "--checkpoint", "x", "--data", "y", "--split", "dev", "--out", "z"]).status.code(),
        Some(2)
    );
    assert_eq!(estf(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(estf(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_1_with_command_name() {
    let out = tempfile::tempdir().unwrap();
    let o = estf(&["train", "--data", s(&out.path().join("nowhere")), "--out", s(out.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train:") && stderr(&o).contains("nowhere"), "{}", stderr(&o));
}

#[test]
fn gen_train_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_toy(&data);
    let cfg = toy_config(dir.path());
    let run = dir.path().join("run");
    let o = estf(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["effective.cfg", "curve.csv", "best.ckpt", "last.ckpt"] {
        assert!(stdout(&o).contains(s(&run.join(f))), "{f} not printed");
        assert!(run.join(f).exists());
    }

    let ev = dir.path().join("eval");
    let ckpt = run.join("last.ckpt");
    let o = estf(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--split", "test", "--out", s(&ev)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains(s(&ev.join("report.txt"))));
    assert!(stdout(&o).contains(s(&ev.join("confusion.csv"))));
    let csv = std::fs::read_to_string(ev.join("confusion.csv")).unwrap();
    let total: u64 = csv.lines().skip(1).flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<u64>().unwrap())).sum();
    assert_eq!(total, 12);

    let sample = data.join("dot-moving-right").join("0000.evs");
    let o = estf(&["predict", "--checkpoint", s(&ckpt), "--events", s(&sample), "--data", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let scores: Vec<f64> = stdout(&o).lines().map(|l| l.split_whitespace().last().unwrap().parse().unwrap()).collect();
    // four classes, so only four lines
    assert_eq!(scores.len(), 4);
    assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");
    assert!(scores.iter().sum::<f64>() <= 1.0 + 1e-9);
    let names = estf::dataset::Manifest::load(&data).unwrap().class_names(4);
    for line in stdout(&o).lines() {
        assert!(names.iter().any(|n| line.contains(n.as_str())), "{line}");
    }
}

#[test]
fn corrupt_event_file_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_toy(&data);
    let victim = data.join("dot-moving-left").join("0002.evs");
    let mut bytes = std::fs::read(&victim).unwrap();
    bytes.truncate(bytes.len() - 5);
    std::fs::write(&victim, bytes).unwrap();
    let cfg = toy_config(dir.path());
    let o = estf(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(s(&victim)), "{}", stderr(&o));
}

#[test]
fn effective_config_reproduces_itself() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_toy(&data);
    let cfg = dir.path().join("c.cfg");
    let mut run = common::toy_run(1);
    run.train.lr0 = 0.0137;
    run.save(&cfg).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(estf(&["train", "--data", s(&data), "--config", s(&cfg), "--seed", "4", "--out", s(&a)]).status.success());
    let eff = a.join("effective.cfg");
    assert!(estf(&["train", "--data", s(&data), "--config", s(&eff), "--out", s(&b)]).status.success());
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&eff), read(&b.join("effective.cfg")));
    assert_eq!(read(&a.join("last.ckpt")), read(&b.join("last.ckpt")));
    let parsed = estf::config::RunConfig::load(&eff).unwrap();
    assert_eq!(parsed.train.seed, 4);
    assert_eq!(parsed.train.lr0, 0.0137);
}

#[test]
fn gradcheck_sign_flip_fails_and_names_the_primitive() {
    let o = estf(&["gradcheck", "--seeds", "3", "--no-model", "--inject-sign-flip", "softmax_rows"]);
    assert_eq!(o.status.code(), Some(1));
    let fails: Vec<String> = stdout(&o).lines().filter(|l| l.starts_with("FAIL")).map(String::from).collect();
    assert_eq!(fails.len(), 1, "{}", stdout(&o));
    assert!(fails[0].contains("softmax_rows"));
    assert!(stderr(&o).contains("softmax_rows"));

    let o = estf(&["gradcheck", "--seeds", "3", "--no-model"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(estf(&["gradcheck", "--inject-sign-flip", "nonsense"]).status.code(), Some(1));
}

#[test]
fn ablate_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_toy(&data);
    let cfg = dir.path().join("c.cfg");
    common::toy_run(1).save(&cfg).unwrap();
    let out = dir.path().join("abl");
    let o = estf(&[
        "ablate",
        "--axis",
        "depth",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--seeds",
        "0,1",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = out.join("ablation_depth.csv");
    assert!(stdout(&o).contains(s(&table)));
    let text = std::fs::read_to_string(&table).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * 2);
    assert!(text.starts_with(estf::ablate::TABLE_HEADER));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cloudless(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cloudless")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = "patch = 16\nbase_channels = 4\nsteps = 3\nbatch_size = 2\n";

#[test]
fn gen_data_prints_the_bin_histogram() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("data");
    let o = cloudless(&["gen-data", "--seed", "1", "--count", "10", "--patch", "16", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("bin\ttrain\ttest\n0-20\t"), "{text}");
    assert!(text.contains("samples=10"));
    let manifest = fs::read_to_string(out.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 11);
}

#[test]
fn unknown_op_is_a_usage_error_listing_names() {
    let o = cloudless(&["gradcheck", "--op", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("conv2d") && err.contains("mmrf") && err.contains("loss_total"), "{err}");
}

#[test]
fn gradcheck_single_op_passes() {
    let o = cloudless(&["gradcheck", "--op", "scdf"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("scdf\t") && stdout(&o).contains("\tpass"));
}

#[test]
fn missing_data_dir_fails_with_a_category() {
    let d = tempfile::tempdir().unwrap();
    let o = cloudless(&["train", "--data-dir", p(&d.path().join("absent")), "--checkpoint-dir", p(d.path())]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: io: "), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn unknown_config_key_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    fs::write(&cfg, "learning_rat = 1.0\n").unwrap();
    let o = cloudless(&["train", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: config: "), "{}", stderr(&o));
}

#[test]
fn pipeline_train_eval_infer() {
    let d = tempfile::tempdir().unwrap();
    let root = d.path();
    let cfg = root.join("run.toml");
    fs::write(&cfg, TINY).unwrap();
    let data = root.join("data");
    let ckpt = root.join("ckpt");
    let report = root.join("report.tsv");
    assert!(cloudless(&["gen-data", "--count", "6", "--patch", "16", "--out", p(&data)]).status.success());

    let common = ["--config", p(&cfg), "--data-dir", p(&data), "--checkpoint-dir", p(&ckpt)];
    let o = cloudless(&[&["train"], &common[..]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let log = stdout(&o);
    assert!(log.lines().any(|l| l.starts_with("epoch=1 step=3 loss=")), "{log}");

    let o = cloudless(&[&["eval", "--report", p(&report)], &common[..]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let tsv = fs::read_to_string(&report).unwrap();
    assert!(tsv.starts_with("scope\tbin\tclass\tcount\tpsnr"));
    assert_eq!(tsv.lines().count(), 1 + 35 + 5 + 7 + 1);

    // continuing with more steps picks up where the first run stopped
    let o = cloudless(&[&["train", "--resume", "--steps", "4"], &common[..]].concat());
    assert!(stdout(&o).contains("resumed step=3"), "{}", stdout(&o));

    let sample = data.join("sample_00000");
    let pred = root.join("pred.podf");
    let o = cloudless(&[
        "infer",
        "--checkpoint",
        p(&ckpt),
        "--in",
        p(&sample.join("cloudy.podf")),
        "--sar",
        p(&sample.join("pfsar.podf")),
        "--out",
        p(&pred),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let got = cloudless::io::read_tensor(&pred).unwrap();
    let want = cloudless::io::read_tensor(sample.join("cloudy.podf")).unwrap();
    assert_eq!(got.shape(), want.shape());
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use schedgen::sample_io::load_sample;

fn schedgen(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_schedgen"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env("SCHEDGEN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn oracle_train_generate_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&schedgen(&["oracle", "-n", "300", "--seed", "4", "--out", "real.sample"], d));
    assert_eq!(load_sample(&d.join("real.sample")).unwrap().len(), 300);

    let train = [
        "train", "--config", "ContRNN-Tiny", "--data", "real.sample", "--out", "m.ckpt", "--max-epochs", "2",
        "--log", "loss.csv", "--dump-encodings", "enc.txt",
    ];
    ok(&schedgen(&train, d));
    assert_eq!(fs::read_to_string(d.join("loss.csv")).unwrap().lines().count(), 3);
    let enc = fs::read_to_string(d.join("enc.txt")).unwrap();
    assert!(enc.lines().next().unwrap().starts_with("o0;SOS:0.000000,home:"));

    ok(&schedgen(&["generate", "--ckpt", "m.ckpt", "-n", "200", "--seed", "1", "--out", "syn.sample"], d));
    ok(&schedgen(&["generate", "--ckpt", "m.ckpt", "-n", "200", "--seed", "1", "--out", "syn2.sample"], d));
    assert_eq!(fs::read(d.join("syn.sample")).unwrap(), fs::read(d.join("syn2.sample")).unwrap());
    let syn = load_sample(&d.join("syn.sample")).unwrap();
    assert_eq!(syn.len() + syn.degenerate, 200);

    ok(&schedgen(&["evaluate", "--real", "real.sample", "--syn", "syn.sample", "--out", "eval"], d));
    for f in ["report.csv", "summary.csv", "activity_frequencies.svg", "sequence_frequencies.svg"] {
        assert!(d.join("eval").join(f).is_file(), "{f}");
    }
    let report = fs::read_to_string(d.join("eval/report.csv")).unwrap();
    assert!(report.starts_with("domain,distribution,segment,description_real,description_syn,distance,unit\n"));
}

#[test]
fn ingest_cleans_diaries() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("diaries.csv"),
        "pid,day,act,start_min,end_min,trip_min\n\
         a,1,Home,0,470,10\na,1,Paid work,480,1010,10\na,1,Home,1020,1440,0\n\
         b,1,Paid work,0,600,0\nb,1,Home,600,1440,0\n\
         c,1,Home,0,500,0\nc,1,Paid work,480,1440,0\n",
    )
    .unwrap();
    fs::write(d.join("labels.csv"), "label,activity\nHome,home\nPaid work,work\n").unwrap();
    ok(&schedgen(&["ingest", "--diaries", "diaries.csv", "--labelmap", "labels.csv", "--out", "s.sample"], d));
    let s = fs::read_to_string(d.join("s.sample")).unwrap();
    assert!(s.ends_with("a_1;home:480,work:540,home:420\n"), "{s}");
    assert_eq!(s.lines().count(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(schedgen(&["frobnicate"], d).status.code(), Some(1));
    assert_eq!(schedgen(&["oracle", "--out", "x"], d).status.code(), Some(1));
    assert_eq!(schedgen(&["--help"], d).status.code(), Some(0));
    let missing = schedgen(&["evaluate", "--real", "nope", "--syn", "nope", "--out", "o"], d);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope"));
    fs::write(d.join("bad.sample"), "x;home:100\n").unwrap();
    let bad = schedgen(&["evaluate", "--real", "bad.sample", "--syn", "bad.sample", "--out", "o"], d);
    assert_eq!(bad.status.code(), Some(2));
    fs::write(d.join("e.toml"), "[experiment]\nmodel = \"NoSuchModel\"\nseed = 1\n").unwrap();
    assert_eq!(schedgen(&["experiment", "--config", "e.toml", "--out", "o"], d).status.code(), Some(1));
    assert_eq!(schedgen(&["oracle", "-n", "3", "--out", "o.sample"], d).status.code(), Some(0));
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_schedgen"))
        .args(["oracle", "-n", "3", "--out", "o.sample"])
        .current_dir(d)
        .env("SCHEDGEN_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(1));
}

#[test]
fn experiment_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&schedgen(&["oracle", "-n", "120", "--seed", "2", "--out", "real.sample"], d));
    fs::write(
        d.join("exp.toml"),
        "[experiment]\nmodel = \"DiscCNN\"\ndata = \"real.sample\"\nseed = 5\nruns = 2\n\n\
         [train]\nmax_epochs = 1\n\n[model]\nblocks = 1\nblock_size = 8\nbatch_size = 32\n",
    )
    .unwrap();
    ok(&schedgen(&["experiment", "--config", "exp.toml", "--out", "exp"], d));
    let summary = fs::read_to_string(d.join("exp/summary.csv")).unwrap();
    assert!(summary.starts_with("section,metric,unit,mean,std\ndensity,participations,rate EMD,"));
    assert!(d.join("exp/run1/report.csv").is_file());

    ok(&schedgen(&["experiment", "--config", "exp.toml", "--out", "one", "--runs", "1"], d));
    let one = fs::read_to_string(d.join("one/summary.csv")).unwrap();
    assert!(one.lines().skip(1).all(|l| l.ends_with(',')), "{one}");

    ok(&schedgen(&["sweep", "--config", "exp.toml", "--out", "sweep", "--runs", "1", "--steps", "60,120"], d));
    let ranks = fs::read_to_string(d.join("sweep/ranks.csv")).unwrap();
    let mut lines = ranks.lines();
    assert_eq!(lines.next(), Some("metric,60min,120min"));
    assert_eq!(lines.count(), 5);
    let bad = schedgen(&["sweep", "--config", "exp.toml", "--out", "s2", "--steps", "7"], d);
    assert_eq!(bad.status.code(), Some(1));
}

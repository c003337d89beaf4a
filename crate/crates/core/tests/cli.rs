use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_dtm");

fn dtm(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn spawn(args: &[&str]) -> Child {
    Command::new(BIN)
        .args(args)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small synthetic corpus under `dir` and returns its config path.
fn synthetic(dir: &Path, slices: &str) -> String {
    let out = dtm(&[
        "gen-synthetic", "--out", path(dir), "--slices", slices, "--docs-per-slice", "40", "--vocab-size", "30",
        "--topics", "3", "--seed", "4",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path(&dir.join("corpus.cfg")).to_owned()
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn train_eval_trends_pipeline() {
    let data = tempfile::tempdir().unwrap();
    let run = tempfile::tempdir().unwrap();
    let cfg = synthetic(data.path(), "3");
    for f in ["corpus.txt", "vocab.txt", "truth/slice_001.ckpt", "truth/slice_003.ckpt"] {
        assert!(data.path().join(f).exists(), "{f}");
    }

    let out = dtm(&["train", "--config", &cfg, "--out", path(run.path()), "--iterations", "6", "--seed", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stderr.is_empty(), "train wrote to stderr");
    let metrics = fs::read_to_string(run.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 6 * 3);
    assert!(run.path().join("manifest.cfg").exists());
    assert!(run.path().join("checkpoints/iter_000006/slice_002.ckpt").exists());

    let out = dtm(&["eval", "--out", path(run.path()), "--eval-steps", "10"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(run.path().join("perplexity.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "slice,n_heldout,perplexity");
    assert!(lines.iter().any(|l| l.starts_with("overall,")));
    let overall: f64 = lines.iter().find(|l| l.starts_with("overall,")).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!(overall > 1.0 && overall < 30.0, "perplexity {overall}");

    let out = dtm(&["trends", "--out", path(run.path()), "--top-words", "4", "--trend-topics", "0,2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trends = fs::read_to_string(run.path().join("trends.csv")).unwrap();
    assert_eq!(trends.lines().count(), 1 + 2 * 3 * 4);
    assert_eq!(trends.lines().next().unwrap(), "topic,slice,rank,term,probability");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    // Data error: corpus file absent.
    let out = dtm(&["train", "--corpus", path(&missing), "--out", path(dir.path()), "--topics", "3"]);
    assert_eq!(code(&out), 2);
    // Config errors: required setting missing, bad value, unknown flag.
    assert_eq!(code(&dtm(&["train", "--corpus", path(&missing)])), 1);
    assert_eq!(code(&dtm(&["train", "--out", path(dir.path()), "--eta-schedule", "1,2"])), 1);
    assert_eq!(code(&dtm(&["train", "--no-such-flag"])), 1);
    // Eval with no checkpoints is a data error.
    let cfg = synthetic(dir.path(), "2");
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(code(&dtm(&["eval", "--config", &cfg, "--out", path(empty.path())])), 2);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let data = tempfile::tempdir().unwrap();
    let run = tempfile::tempdir().unwrap();
    let cfg = synthetic(data.path(), "2");
    let extended = data.path().join("run.cfg");
    fs::write(&extended, format!("{}\niterations = 50\nthreads = 1\n", fs::read_to_string(&cfg).unwrap())).unwrap();
    let out = dtm(&["train", "--config", path(&extended), "--out", path(run.path()), "--iterations", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(run.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 2);
}

fn topology(dir: &Path, coordinator: u16, workers: &[u16]) -> String {
    let mut text = format!("coordinator 127.0.0.1:{coordinator}\n");
    for (i, p) in workers.iter().enumerate() {
        text.push_str(&format!("{i} 127.0.0.1:{p}\n"));
    }
    let p = dir.join(format!("topology_{}.txt", workers.iter().map(u16::to_string).collect::<Vec<_>>().join("_")));
    fs::write(&p, text).unwrap();
    path(&p).to_owned()
}

fn wait(child: Child) -> Output {
    child.wait_with_output().expect("process finishes")
}

#[test]
fn socket_workers_reproduce_sequential_training() {
    let data = tempfile::tempdir().unwrap();
    let cfg = synthetic(data.path(), "3");
    let cluster_out = tempfile::tempdir().unwrap();
    let seq_out = tempfile::tempdir().unwrap();
    let topo = topology(data.path(), free_port(), &[free_port(), free_port(), free_port()]);
    let common = ["--config", &cfg, "--iterations", "5", "--seed", "8", "--checkpoint-every", "2"];

    let coordinator = spawn(&[&["coordinator", "--topology", &topo, "--out", path(cluster_out.path()), "--join-timeout", "60"][..], &common[..]].concat());
    let workers: Vec<Child> = (0..3)
        .map(|w| {
            let id = w.to_string();
            spawn(&[&["worker", "--topology", &topo, "--worker-id", &id][..], &common[..]].concat())
        })
        .collect();
    for w in workers {
        let out = wait(w);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let out = wait(coordinator);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = dtm(&[&["train", "--out", path(seq_out.path())][..], &common[..]].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for iter in ["iter_000002", "iter_000004", "iter_000005"] {
        for t in 1..=3 {
            let f = format!("checkpoints/{iter}/slice_{t:03}.ckpt");
            assert_eq!(
                fs::read(cluster_out.path().join(&f)).unwrap(),
                fs::read(seq_out.path().join(&f)).unwrap(),
                "{f}"
            );
        }
    }
    // Same rows in the same order; timing columns differ.
    let strip = |p: &Path| -> Vec<String> {
        fs::read_to_string(p.join("metrics.csv"))
            .unwrap()
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                [&f[..4], &f[9..]].concat().join(",")
            })
            .collect()
    };
    assert_eq!(strip(cluster_out.path()), strip(seq_out.path()));
}

#[test]
fn topology_checksum_mismatch_is_a_peer_failure() {
    let data = tempfile::tempdir().unwrap();
    let cfg = synthetic(data.path(), "2");
    let out_dir = tempfile::tempdir().unwrap();
    let (c, w0) = (free_port(), free_port());
    let coordinator_view = topology(data.path(), c, &[w0, free_port()]);
    let worker_view = topology(data.path(), c, &[w0, free_port()]);

    let coordinator = spawn(&["coordinator", "--topology", &coordinator_view, "--out", path(out_dir.path()), "--join-timeout", "30"]);
    let worker = spawn(&["worker", "--topology", &worker_view, "--worker-id", "0", "--config", &cfg, "--iterations", "2"]);
    assert_eq!(code(&wait(worker)), 4);
    assert_eq!(code(&wait(coordinator)), 4);
}

#[test]
fn unknown_worker_id_is_rejected() {
    let data = tempfile::tempdir().unwrap();
    let cfg = synthetic(data.path(), "2");
    let topo = topology(data.path(), free_port(), &[free_port(), free_port()]);
    let out = dtm(&["worker", "--topology", &topo, "--worker-id", "5", "--config", &cfg]);
    assert_eq!(code(&out), 4);
}

use std::path::Path;
use std::process::{Command, Output};

use streamchart::io::{write_records, CsiRecord, RecordReader, SyntheticScenario};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamchart"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn tiny_args(dir: &Path) -> Vec<String> {
    [
        "--profile=quick",
        "--synthetic-samples=150",
        "--test-samples=60",
        "--subcarriers=64",
        "--capacity=25",
        "--neighbors=6",
        "--snapshots=50,100",
        "--epochs=3",
        "--batch-pairs=64",
        "--steps-per-epoch=2",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([format!("--output-dir={}", dir.display())])
    .collect()
}

fn with<'a>(base: &'a [String], extra: &[&'a str]) -> Vec<&'a str> {
    extra.iter().copied().chain(base.iter().map(String::as_str)).collect()
}

#[test]
fn config_echo_reflects_flags_and_set() {
    let out = run(&["config", "--capacity", "42", "--set", "p_update=0.25"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("capacity = 42\n"), "{text}");
    assert!(text.contains("p_update = 0.25\n"));
}

#[test]
fn config_errors_exit_with_two() {
    assert_eq!(code(&run(&["config", "--capacity", "-3"])), 2);
    assert_eq!(code(&run(&["config", "--p-update", "1.5"])), 2);
    assert_eq!(code(&run(&["config", "--set", "bogus=1"])), 2);
    assert_eq!(code(&run(&["stream", "--strategy", "all"])), 2);
}

#[test]
fn missing_and_truncated_data_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ccsf");
    let src = format!("file:{}", missing.display());
    let out_dir = dir.path().join("out");
    let out_arg = out_dir.to_str().unwrap();
    assert_eq!(code(&run(&["stream", "--source", &src, "--output-dir", out_arg])), 3);

    let recs: Vec<CsiRecord> = SyntheticScenario::default()
        .with_subcarriers(16)
        .with_num_samples(5)
        .unwrap()
        .stream()
        .unwrap()
        .collect();
    let good = dir.path().join("good.ccsf");
    write_records(&good, &recs).unwrap();
    let bytes = std::fs::read(&good).unwrap();
    let cut = dir.path().join("cut.ccsf");
    std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    let src = format!("file:{}", cut.display());
    let out = run(&["stream", "--source", &src, "--capacity", "2", "--output-dir", out_arg]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn import_keeps_record_range() {
    let dir = tempfile::tempdir().unwrap();
    let recs: Vec<CsiRecord> = SyntheticScenario::default()
        .with_subcarriers(16)
        .with_num_samples(12)
        .unwrap()
        .stream()
        .unwrap()
        .collect();
    let src = dir.path().join("src.ccsf");
    write_records(&src, &recs).unwrap();
    let dst = dir.path().join("dst.ccsf");
    let out = run(&[
        "import",
        "--format",
        "ccsf",
        "--input",
        src.to_str().unwrap(),
        "--output",
        dst.to_str().unwrap(),
        "--records",
        "4..10",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = RecordReader::open(&dst).unwrap();
    assert_eq!(r.header().count, 6);
    let first = r.into_iter().next().unwrap().unwrap();
    assert_eq!(first.csi.sample_index, 4);
}

#[test]
fn stream_train_evaluate_chain() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny_args(dir.path());
    let out = run(&with(&base, &["stream"]));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.txt", "memory_sims.cckp", "snapshot_sims_50.csv", "snapshot_sims_150.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(code(&run(&with(&base, &["train"]))), 0);
    let model = dir.path().join("model_sims.cckp");
    let out = run(&with(&base, &["evaluate", "--model", model.to_str().unwrap()]));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("metrics_sims.txt")).unwrap();
    assert!(metrics.contains("tw="), "{metrics}");
    let chart = std::fs::read_to_string(dir.path().join("chart_sims.csv")).unwrap();
    assert_eq!(chart.lines().count(), 61);

    // the echoed configuration reproduces the run
    let echoed = dir.path().join("config.txt");
    let out = run(&["config", "--config", echoed.to_str().unwrap()]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), std::fs::read_to_string(&echoed).unwrap());
}

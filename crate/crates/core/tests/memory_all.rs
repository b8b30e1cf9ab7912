// Own test binary so the peak resident size is not shared with other tests.
use streamchart::config::{Profile, RunConfig, Strategy};
use streamchart::pipeline::{cmd_train, peak_rss_bytes};

#[test]
fn full_stream_training_stays_under_one_gibibyte() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::with_profile(Profile::Quick);
    cfg.strategy = Strategy::All;
    cfg.synthetic_samples = Some(2000);
    cfg.train.epochs = 2;
    cfg.output_dir = dir.path().to_path_buf();
    let out = cmd_train(&cfg, None).unwrap();
    assert_eq!(out.samples, 2000);
    let peak = out.peak_rss_bytes.or_else(peak_rss_bytes).expect("peak resident size");
    assert!(peak < 1 << 30, "peak {} MiB", peak >> 20);
}

//! The four run commands: stream, train, evaluate and reproduce.
//!
//! Every command echoes its configuration to `config.txt` in the output
//! directory and writes plain CSV/text artifacts named after the strategy.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::chart::{feature_matrix, train, ChartModel, TrainConfig, TrainReport};
use crate::config::{RunConfig, SourceSpec, Strategy};
use crate::csi::{AntennaLayout, CsiFeature, DelayTransform, GroundTruthPosition};
use crate::curation::{
    CoreMemory, CurationAction, Curator, Randos, RandosConfig, ReplacementPmf, Sims, SimsConfig, SnapshotEntry,
    StorageMode, StoredSample,
};
use crate::dissimilarity::{geodesic_dissimilarities, DissimilarityMatrix};
use crate::error::{Error, Result};
use crate::io::{load_memory, load_model, save_memory, save_model, ModelCheckpoint, StreamSource, SyntheticScenario};
use crate::metrics::{evaluate, MetricReport};

/// The synthetic training scenario described by `cfg`.
pub fn synthetic_scenario(cfg: &RunConfig) -> Result<SyntheticScenario> {
    let mut s = SyntheticScenario::default()
        .with_subcarriers(cfg.subcarriers)
        .with_seed(cfg.seed);
    s.noise_std = cfg.noise_std;
    match cfg.synthetic_samples {
        Some(n) => s.with_num_samples(n),
        None => Ok(s),
    }
}

pub fn open_source(cfg: &RunConfig, spec: &SourceSpec) -> Result<StreamSource> {
    let src = match spec {
        SourceSpec::Synthetic => StreamSource::synthetic(&synthetic_scenario(cfg)?)?,
        SourceSpec::SyntheticTest => {
            StreamSource::synthetic(&synthetic_scenario(cfg)?.test_variant(cfg.test_samples)?)?
        }
        SourceSpec::File(path) => {
            let header = crate::io::RecordReader::open(path)?.header().antennas as usize;
            let layout = match cfg.antennas_per_ap {
                Some(per) if header % per == 0 => Some(AntennaLayout::uniform(header / per, per)),
                Some(per) => {
                    return Err(Error::Config(format!(
                        "{header} antennas cannot be split into groups of {per}"
                    )))
                }
                None => None,
            };
            StreamSource::file(path, layout)?
        }
    };
    Ok(match spec {
        SourceSpec::File(_) => {
            let end = src.len_hint().saturating_sub(cfg.drop_last);
            let end = end.min(cfg.record_end.unwrap_or(u64::MAX)).max(cfg.record_start);
            src.with_range(cfg.record_start..end)
        }
        _ => src,
    })
}

pub fn make_curator(cfg: &RunConfig, strategy: Strategy) -> Result<Box<dyn Curator>> {
    match strategy {
        Strategy::Randos => Ok(Box::new(Randos::new(
            RandosConfig {
                p_update: cfg.p_update,
                replacement: ReplacementPmf::Uniform,
                rng_seed: cfg.curation_seed(),
            },
            cfg.capacity,
        )?)),
        Strategy::Sims => Ok(Box::new(Sims::new(SimsConfig {
            p_tiebreak: cfg.p_tiebreak,
            rng_seed: cfg.curation_seed(),
        })?)),
        Strategy::All => Err(Error::Config(
            "strategy 'all' has no curation step; run train on the source directly".into(),
        )),
    }
}

fn prepare_output(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.txt"), cfg.to_kv())?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn coord(p: &Option<GroundTruthPosition>, k: usize) -> String {
    p.as_ref().map(|p| p.coords()[k].to_string()).unwrap_or_default()
}

pub fn write_snapshot(path: &Path, entries: &[SnapshotEntry]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "arrival_index,gt_x,gt_y,max_similarity")?;
    for e in entries {
        writeln!(
            w,
            "{},{},{},{}",
            e.arrival_index,
            coord(&e.position, 0),
            coord(&e.position, 1),
            e.max_similarity
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct StreamOutcome {
    pub memory: CoreMemory,
    pub offered: u64,
    pub accepted: u64,
    pub zero_norm_skipped: u64,
    pub snapshots: Vec<(u64, PathBuf)>,
    /// Largest stored pairwise similarity when the memory first became full.
    pub max_similarity_at_fill: Option<f64>,
    pub max_similarity_final: Option<f64>,
    pub checkpoint: PathBuf,
}

pub fn memory_checkpoint_path(cfg: &RunConfig, strategy: Strategy) -> PathBuf {
    cfg.output_dir.join(format!("memory_{}.cckp", strategy.name()))
}

pub fn model_checkpoint_path(cfg: &RunConfig, strategy: Strategy) -> PathBuf {
    cfg.output_dir.join(format!("model_{}.cckp", strategy.name()))
}

/// Runs the source through the configured curation strategy.
pub fn cmd_stream(cfg: &RunConfig) -> Result<StreamOutcome> {
    cfg.validate()?;
    let strategy = cfg.strategy;
    let mut curator = make_curator(cfg, strategy)?;
    prepare_output(cfg)?;
    let name = strategy.name();
    let mut mem = CoreMemory::new(cfg.capacity, cfg.taps, cfg.storage)?;
    let mut trace = create(&cfg.output_dir.join(format!("max_similarity_{name}.csv")))?;
    writeln!(trace, "offered,max_pair_similarity")?;
    let mut snapshot_at: Vec<u64> = cfg.snapshots.clone();
    snapshot_at.sort_unstable();
    snapshot_at.dedup();
    let mut snapshots = Vec::new();
    let (mut offered, mut accepted, mut skipped) = (0u64, 0u64, 0u64);
    let mut at_fill = None;
    let snapshot = |mem: &CoreMemory, n: u64, snapshots: &mut Vec<(u64, PathBuf)>| -> Result<()> {
        let path = cfg.output_dir.join(format!("snapshot_{name}_{n}.csv"));
        write_snapshot(&path, &mem.snapshot())?;
        snapshots.push((n, path));
        Ok(())
    };
    for rec in open_source(cfg, &cfg.source)? {
        let rec = rec?;
        offered += 1;
        match curator.offer(&mut mem, rec.csi, rec.position) {
            Ok(d) => {
                if d.is_accepted() {
                    accepted += 1;
                }
                if mem.is_full() && at_fill.is_none() {
                    at_fill = Some(mem.max_pair().map(|p| p.similarity));
                }
                if matches!(d.action, CurationAction::Replaced { .. }) {
                    if let Some(p) = mem.max_pair() {
                        writeln!(trace, "{offered},{}", p.similarity)?;
                    }
                }
            }
            Err(Error::ZeroNorm) => {
                skipped += 1;
                log::debug!("sample {} has an all-zero feature and was skipped", offered - 1);
            }
            Err(e) => return Err(e),
        }
        if snapshot_at.binary_search(&offered).is_ok() {
            snapshot(&mem, offered, &mut snapshots)?;
        }
    }
    trace.flush()?;
    if snapshots.last().is_none_or(|(n, _)| *n != offered) {
        snapshot(&mem, offered, &mut snapshots)?;
    }
    if skipped > 0 {
        log::warn!("{skipped} samples with zero-norm features were skipped");
    }
    let checkpoint = memory_checkpoint_path(cfg, strategy);
    save_memory(&checkpoint, &mem, name)?;
    let outcome = StreamOutcome {
        max_similarity_at_fill: at_fill.flatten(),
        max_similarity_final: mem.max_pair().map(|p| p.similarity),
        memory: mem,
        offered,
        accepted,
        zero_norm_skipped: skipped,
        snapshots,
        checkpoint,
    };
    let mut summary = format!(
        "strategy={name}\noffered={offered}\naccepted={accepted}\nzero_norm_skipped={skipped}\nstored={}\n",
        outcome.memory.len()
    );
    for (k, v) in [
        ("max_similarity_at_fill", outcome.max_similarity_at_fill),
        ("max_similarity_final", outcome.max_similarity_final),
    ] {
        summary += &format!("{k}={}\n", v.map(|v| v.to_string()).unwrap_or_else(|| "none".into()));
    }
    fs::write(cfg.output_dir.join(format!("stream_{name}.txt")), summary)?;
    Ok(outcome)
}

/// Prepared samples of the whole source, evenly thinned to `limit` (0: no limit).
pub fn collect_samples(cfg: &RunConfig, spec: &SourceSpec, limit: usize) -> Result<Vec<StoredSample>> {
    let source = open_source(cfg, spec)?;
    let total = source.len_hint() as usize;
    let keep = |k: usize| -> bool {
        if limit == 0 || total <= limit {
            return true;
        }
        // keep the first record of each of `limit` equal-width buckets
        k == 0 || k * limit / total != (k - 1) * limit / total
    };
    let mut transform: Option<DelayTransform> = None;
    let mut out = Vec::new();
    for (k, rec) in source.enumerate() {
        let rec = rec?;
        if !keep(k) {
            continue;
        }
        let w = rec.csi.subcarriers();
        if transform.as_ref().is_none_or(|t| t.subcarriers() != w) {
            transform = Some(DelayTransform::new(w, cfg.taps)?);
        }
        match StoredSample::prepare(rec.csi, rec.position, transform.as_ref().unwrap(), StorageMode::Compact) {
            Ok(s) => out.push(s),
            Err(Error::ZeroNorm) => log::warn!("record {k} has an all-zero feature and was skipped"),
            Err(e) => return Err(e),
        }
    }
    if limit > 0 && total > limit {
        log::warn!("thinned {total} samples to {} for training on the full stream", out.len());
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrainedChart {
    pub model: ChartModel,
    pub report: TrainReport,
    pub dissimilarities: DissimilarityMatrix,
    pub neighbors: usize,
    pub components: usize,
}

/// Geodesic dissimilarities over `samples` followed by siamese training.
pub fn train_on_samples(samples: &[StoredSample], neighbors: usize, train_cfg: &TrainConfig) -> Result<TrainedChart> {
    if samples.len() < 2 {
        return Err(Error::param("training needs at least two samples"));
    }
    let k = if neighbors >= samples.len() {
        log::warn!("K = {neighbors} reduced to {} for {} samples", samples.len() - 1, samples.len());
        samples.len() - 1
    } else {
        neighbors
    };
    let taps: Vec<_> = samples.iter().map(|s| s.taps.clone()).collect();
    let (graph, geo) = geodesic_dissimilarities(&taps, k)?;
    let components = graph.component_count();
    drop(taps);
    let features: Vec<CsiFeature> = samples.iter().map(|s| s.feature.clone()).collect();
    let x = feature_matrix(&features)?;
    let model = ChartModel::new(x.ncols(), train_cfg.rng_seed)?;
    let (model, report) = train(model, x.view(), &geo, train_cfg)?;
    Ok(TrainedChart {
        model,
        report,
        dissimilarities: geo,
        neighbors: k,
        components,
    })
}

/// Peak resident set size of this process, where the platform reports it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub chart: TrainedChart,
    pub samples: usize,
    pub checkpoint: PathBuf,
    pub peak_rss_bytes: Option<u64>,
}

/// Trains a chart on a curated memory checkpoint, or on the whole source for
/// the `all` strategy. `memory` defaults to the checkpoint `stream` writes.
pub fn cmd_train(cfg: &RunConfig, memory: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    prepare_output(cfg)?;
    let name = cfg.strategy.name();
    let samples = match cfg.strategy {
        Strategy::All => collect_samples(cfg, &cfg.source, cfg.all_max_samples)?,
        s => {
            let path = memory.map(Path::to_path_buf).unwrap_or_else(|| memory_checkpoint_path(cfg, s));
            let (mem, label) = load_memory(&path)?;
            if label != name {
                log::warn!("memory checkpoint was written by '{label}', training as '{name}'");
            }
            mem.into_samples()
        }
    };
    let taps = samples.first().map_or(cfg.taps, |s| s.taps.taps());
    let chart = train_on_samples(&samples, cfg.neighbors, &cfg.train)?;
    if chart.components > 1 {
        log::warn!("neighbor graph has {} components", chart.components);
    }
    let checkpoint = model_checkpoint_path(cfg, cfg.strategy);
    save_model(
        &checkpoint,
        &ModelCheckpoint {
            taps,
            model: chart.model.clone(),
        },
        name,
    )?;
    let mut w = create(&cfg.output_dir.join(format!("train_{name}.csv")))?;
    writeln!(w, "epoch,loss")?;
    for (e, l) in chart.report.epoch_losses.iter().enumerate() {
        writeln!(w, "{e},{l}")?;
    }
    w.flush()?;
    let peak = peak_rss_bytes();
    let summary = format!(
        "strategy={name}\nsamples={}\nneighbors={}\ncomponents={}\ninitial_loss={}\nfinal_loss={}\nseconds={:.3}\npeak_rss_bytes={}\n",
        samples.len(),
        chart.neighbors,
        chart.components,
        chart.report.initial_loss,
        chart.report.final_loss,
        chart.report.seconds,
        peak.map(|p| p.to_string()).unwrap_or_else(|| "unknown".into()),
    );
    fs::write(cfg.output_dir.join(format!("train_{name}.txt")), summary)?;
    Ok(TrainOutcome {
        chart,
        samples: samples.len(),
        checkpoint,
        peak_rss_bytes: peak,
    })
}

/// Chart coordinates for every usable record of a source.
#[derive(Clone, Debug)]
pub struct ChartPoints {
    pub sample_index: Vec<u64>,
    pub chart: Array2<f64>,
    /// 2-D ground truth when every record carries a position.
    pub ground_truth: Option<Array2<f64>>,
}

pub fn chart_source(model: &ModelCheckpoint, source: StreamSource) -> Result<ChartPoints> {
    let mut transform: Option<DelayTransform> = None;
    let (mut index, mut features, mut gt) = (Vec::new(), Vec::new(), Vec::new());
    let mut all_positions = true;
    for rec in source {
        let rec = rec?;
        let w = rec.csi.subcarriers();
        if transform.as_ref().is_none_or(|t| t.subcarriers() != w) {
            transform = Some(DelayTransform::new(w, model.taps)?);
        }
        let dd = transform.as_ref().unwrap().apply(&rec.csi)?;
        let f = match crate::csi::extract_feature(&dd) {
            Ok(f) => f,
            Err(Error::ZeroNorm) => {
                log::warn!("sample {} has an all-zero feature and was skipped", rec.csi.sample_index);
                continue;
            }
            Err(e) => return Err(e),
        };
        index.push(rec.csi.sample_index);
        features.push(f);
        match rec.position {
            Some(p) => gt.extend([p.x(), p.y()]),
            None => all_positions = false,
        }
    }
    let x = feature_matrix(&features)?;
    let chart = if features.is_empty() {
        Array2::zeros((0, 2))
    } else {
        model.model.forward_batch(x.view())?
    };
    let n = index.len();
    Ok(ChartPoints {
        sample_index: index,
        chart,
        ground_truth: (all_positions && n > 0).then(|| Array2::from_shape_vec((n, 2), gt).expect("two coords per sample")),
    })
}

#[derive(Clone, Debug)]
pub struct EvaluateOutcome {
    pub label: String,
    pub points: ChartPoints,
    pub metrics: Option<MetricReport>,
    pub chart_csv: PathBuf,
}

/// Maps the test source through a trained model and scores the chart.
pub fn cmd_evaluate(cfg: &RunConfig, model_path: &Path) -> Result<EvaluateOutcome> {
    cfg.validate()?;
    prepare_output(cfg)?;
    let (model, label) = load_model(model_path)?;
    let label = if label.is_empty() { "model".to_string() } else { label };
    let points = chart_source(&model, open_source(cfg, &cfg.test_source)?)?;
    let chart_csv = cfg.output_dir.join(format!("chart_{label}.csv"));
    let mut w = create(&chart_csv)?;
    writeln!(w, "sample_index,gt_x,gt_y,chart_x,chart_y")?;
    for (k, idx) in points.sample_index.iter().enumerate() {
        let (gx, gy) = match &points.ground_truth {
            Some(g) => (g[[k, 0]].to_string(), g[[k, 1]].to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(w, "{idx},{gx},{gy},{},{}", points.chart[[k, 0]], points.chart[[k, 1]])?;
    }
    w.flush()?;
    let metrics = match &points.ground_truth {
        Some(gt) => {
            let report = evaluate(gt.view(), points.chart.view(), &cfg.metrics)?;
            fs::write(cfg.output_dir.join(format!("metrics_{label}.txt")), report.to_kv())?;
            fs::write(
                cfg.output_dir.join(format!("metrics_{label}.csv")),
                format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row(&label)),
            )?;
            Some(report)
        }
        None => {
            log::warn!("test source has no ground-truth positions; metrics skipped");
            None
        }
    };
    Ok(EvaluateOutcome {
        label,
        points,
        metrics,
        chart_csv,
    })
}

#[derive(Clone, Debug)]
pub struct ReproduceOutcome {
    pub rows: Vec<(Strategy, Option<MetricReport>)>,
    pub table: PathBuf,
}

/// Streams with RandoS and SimS, trains on both memories and on the full
/// stream, and evaluates all three charts.
pub fn cmd_reproduce(cfg: &RunConfig) -> Result<ReproduceOutcome> {
    cfg.validate()?;
    prepare_output(cfg)?;
    let mut rows = Vec::new();
    for strategy in [Strategy::Randos, Strategy::Sims, Strategy::All] {
        let mut c = cfg.clone();
        c.strategy = strategy;
        if strategy != Strategy::All {
            let s = cmd_stream(&c)?;
            log::info!("{strategy}: {} of {} samples accepted", s.accepted, s.offered);
        }
        let t = cmd_train(&c, None)?;
        log::info!("{strategy}: final loss {:.6}", t.chart.report.final_loss);
        let e = cmd_evaluate(&c, &t.checkpoint)?;
        rows.push((strategy, e.metrics));
    }
    fs::write(cfg.output_dir.join("config.txt"), cfg.to_kv())?;
    let table = cfg.output_dir.join("results.csv");
    let mut text = format!("{}\n", MetricReport::CSV_HEADER);
    for (s, m) in &rows {
        if let Some(m) = m {
            text += &format!("{}\n", m.csv_row(s.name()));
        }
    }
    fs::write(&table, text)?;
    Ok(ReproduceOutcome { rows, table })
}

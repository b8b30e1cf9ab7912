//! Run configuration shared by the command-line driver and the pipeline.
//!
//! Every field can be set from a `key = value` text file or from the command
//! line using the same key names. [`RunConfig::to_kv`] writes a file that
//! [`RunConfig::from_kv_str`] reads back to an identical configuration.

use std::fmt::{self, Display, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::chart::TrainConfig;
use crate::csi::DEFAULT_TAPS;
use crate::curation::{StorageMode, DEFAULT_CAPACITY, DEFAULT_P_TIEBREAK, DEFAULT_P_UPDATE};
use crate::dissimilarity::DEFAULT_NEIGHBORS;
use crate::error::{Error, Result};
use crate::metrics::MetricParams;

#[derive(Clone, Debug, PartialEq)]
pub enum SourceSpec {
    /// The default training route of the synthetic scenario.
    Synthetic,
    /// The shifted evaluation route of the synthetic scenario.
    SyntheticTest,
    File(PathBuf),
}

impl FromStr for SourceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            "synthetic-test" => Ok(Self::SyntheticTest),
            "" => Err(Error::Config("empty source".into())),
            other => Ok(Self::File(PathBuf::from(other.strip_prefix("file:").unwrap_or(other)))),
        }
    }
}

impl Display for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Synthetic => f.write_str("synthetic"),
            Self::SyntheticTest => f.write_str("synthetic-test"),
            Self::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Randos,
    Sims,
    /// No curation: train on the complete stream.
    All,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Randos => "randos",
            Self::Sims => "sims",
            Self::All => "all",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "randos" => Ok(Self::Randos),
            "sims" => Ok(Self::Sims),
            "all" => Ok(Self::All),
            other => Err(Error::Config(format!("unknown strategy '{other}' (randos, sims or all)"))),
        }
    }
}

impl Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Preset bundles applied before individual keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// Full-size defaults (M = 1000, 200 epochs, full synthetic route).
    Default,
    /// Reduced synthetic run that finishes in minutes on one core.
    Quick,
    /// Recorded data from four 8-antenna arrays; the last 1000 records of
    /// each file, where the robot drives back, are dropped.
    Measured,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Self::Default),
            "quick" => Ok(Self::Quick),
            "measured" => Ok(Self::Measured),
            other => Err(Error::Config(format!(
                "unknown profile '{other}' (default, quick or measured)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub source: SourceSpec,
    pub test_source: SourceSpec,
    pub strategy: Strategy,
    pub capacity: usize,
    pub taps: usize,
    pub neighbors: usize,
    pub p_update: f64,
    pub p_tiebreak: f64,
    pub storage: StorageMode,
    pub train: TrainConfig,
    pub metrics: MetricParams,
    /// Seeds the synthetic noise and the curation draws.
    pub seed: u64,
    /// Sample counts after which the memory is written out; the end of the
    /// stream is always added.
    pub snapshots: Vec<u64>,
    /// Synthetic training route length in samples (`None`: natural length).
    pub synthetic_samples: Option<usize>,
    pub test_samples: usize,
    pub subcarriers: usize,
    pub noise_std: f64,
    /// Half-open record range kept from file sources.
    pub record_start: u64,
    pub record_end: Option<u64>,
    /// Records dropped from the end of each file source.
    pub drop_last: u64,
    /// Antennas per access point for file sources (`None`: one group).
    pub antennas_per_ap: Option<usize>,
    /// Evenly thins the stream used by the `all` strategy to this many samples (0: no limit).
    pub all_max_samples: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Default,
            source: SourceSpec::Synthetic,
            test_source: SourceSpec::SyntheticTest,
            strategy: Strategy::Sims,
            capacity: DEFAULT_CAPACITY,
            taps: DEFAULT_TAPS,
            neighbors: DEFAULT_NEIGHBORS,
            p_update: DEFAULT_P_UPDATE,
            p_tiebreak: DEFAULT_P_TIEBREAK,
            storage: StorageMode::Compact,
            train: TrainConfig::default(),
            metrics: MetricParams::default(),
            seed: 0,
            snapshots: vec![6000, 12000],
            synthetic_samples: None,
            test_samples: 1000,
            subcarriers: 1024,
            noise_std: 0.05,
            record_start: 0,
            record_end: None,
            drop_last: 0,
            antennas_per_ap: None,
            all_max_samples: 6000,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "profile",
    "source",
    "test_source",
    "strategy",
    "capacity",
    "taps",
    "neighbors",
    "p_update",
    "p_tiebreak",
    "storage",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "batch_pairs",
    "epochs",
    "steps_per_epoch",
    "train_seed",
    "metric_neighbors",
    "histogram_bins",
    "max_pairs",
    "metric_seed",
    "seed",
    "snapshots",
    "synthetic_samples",
    "test_samples",
    "subcarriers",
    "noise_std",
    "record_start",
    "record_end",
    "drop_last",
    "antennas_per_ap",
    "all_max_samples",
    "output_dir",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value {
        "" | "none" | "auto" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn show<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map(|v| v.to_string()).unwrap_or_else(|| "none".into())
}

impl RunConfig {
    pub fn with_profile(profile: Profile) -> Self {
        let mut cfg = Self::default();
        cfg.apply_profile(profile);
        cfg
    }

    fn apply_profile(&mut self, profile: Profile) {
        self.profile = profile;
        let base = Self::default();
        self.capacity = base.capacity;
        self.synthetic_samples = base.synthetic_samples;
        self.snapshots = base.snapshots;
        self.test_samples = base.test_samples;
        self.train.epochs = base.train.epochs;
        self.train.batch_pairs = base.train.batch_pairs;
        self.antennas_per_ap = base.antennas_per_ap;
        self.drop_last = base.drop_last;
        match profile {
            Profile::Default => {}
            Profile::Measured => {
                self.antennas_per_ap = Some(8);
                self.drop_last = 1000;
            }
            Profile::Quick => {
                self.capacity = 300;
                self.synthetic_samples = Some(3000);
                self.snapshots = vec![1000, 2000];
                self.test_samples = 600;
                self.train.epochs = 60;
                self.train.batch_pairs = 512;
            }
        }
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "profile" => self.apply_profile(parse(key, v)?),
            "source" => self.source = v.parse()?,
            "test_source" => self.test_source = v.parse()?,
            "strategy" => self.strategy = v.parse()?,
            "capacity" => self.capacity = parse(key, v)?,
            "taps" => self.taps = parse(key, v)?,
            "neighbors" => self.neighbors = parse(key, v)?,
            "p_update" => self.p_update = parse(key, v)?,
            "p_tiebreak" => self.p_tiebreak = parse(key, v)?,
            "storage" => {
                self.storage = match v {
                    "compact" => StorageMode::Compact,
                    "full" => StorageMode::Full,
                    _ => return Err(Error::Config(format!("storage must be compact or full, got '{v}'"))),
                }
            }
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "beta1" => self.train.beta1 = parse(key, v)?,
            "beta2" => self.train.beta2 = parse(key, v)?,
            "epsilon" => self.train.epsilon = parse(key, v)?,
            "batch_pairs" => self.train.batch_pairs = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "steps_per_epoch" => self.train.steps_per_epoch = parse(key, v)?,
            "train_seed" => self.train.rng_seed = parse(key, v)?,
            "metric_neighbors" => self.metrics.neighbors = optional(key, v)?,
            "histogram_bins" => self.metrics.bins = parse(key, v)?,
            "max_pairs" => self.metrics.max_pairs = parse(key, v)?,
            "metric_seed" => self.metrics.seed = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "snapshots" => {
                self.snapshots = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "synthetic_samples" => self.synthetic_samples = optional(key, v)?,
            "test_samples" => self.test_samples = parse(key, v)?,
            "subcarriers" => self.subcarriers = parse(key, v)?,
            "noise_std" => self.noise_std = parse(key, v)?,
            "record_start" => self.record_start = parse(key, v)?,
            "record_end" => self.record_end = optional(key, v)?,
            "drop_last" => self.drop_last = parse(key, v)?,
            "antennas_per_ap" => self.antennas_per_ap = optional(key, v)?,
            "all_max_samples" => self.all_max_samples = parse(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "profile" => match self.profile {
                Profile::Default => "default".into(),
                Profile::Quick => "quick".into(),
                Profile::Measured => "measured".into(),
            },
            "source" => self.source.to_string(),
            "test_source" => self.test_source.to_string(),
            "strategy" => self.strategy.to_string(),
            "capacity" => self.capacity.to_string(),
            "taps" => self.taps.to_string(),
            "neighbors" => self.neighbors.to_string(),
            "p_update" => self.p_update.to_string(),
            "p_tiebreak" => self.p_tiebreak.to_string(),
            "storage" => match self.storage {
                StorageMode::Compact => "compact".into(),
                StorageMode::Full => "full".into(),
            },
            "learning_rate" => self.train.learning_rate.to_string(),
            "beta1" => self.train.beta1.to_string(),
            "beta2" => self.train.beta2.to_string(),
            "epsilon" => self.train.epsilon.to_string(),
            "batch_pairs" => self.train.batch_pairs.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "steps_per_epoch" => self.train.steps_per_epoch.to_string(),
            "train_seed" => self.train.rng_seed.to_string(),
            "metric_neighbors" => show(&self.metrics.neighbors),
            "histogram_bins" => self.metrics.bins.to_string(),
            "max_pairs" => self.metrics.max_pairs.to_string(),
            "metric_seed" => self.metrics.seed.to_string(),
            "seed" => self.seed.to_string(),
            "snapshots" => self.snapshots.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
            "synthetic_samples" => show(&self.synthetic_samples),
            "test_samples" => self.test_samples.to_string(),
            "subcarriers" => self.subcarriers.to_string(),
            "noise_std" => self.noise_std.to_string(),
            "record_start" => self.record_start.to_string(),
            "record_end" => show(&self.record_end),
            "drop_last" => self.drop_last.to_string(),
            "antennas_per_ap" => show(&self.antennas_per_ap),
            "all_max_samples" => self.all_max_samples.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines. `#` starts a comment. A `profile` key is
    /// applied first wherever it appears.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = Self::default();
        if let Some((_, p)) = pairs.iter().rev().find(|(k, _)| k == "profile") {
            cfg.apply_profile(parse("profile", p)?);
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "profile") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn from_kv_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_kv_str(&text)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("every key has a value"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.capacity < 2 {
            return fail(format!("capacity must be at least 2, got {}", self.capacity));
        }
        if self.taps == 0 || self.taps > self.subcarriers {
            return fail(format!("taps must be in 1..={}, got {}", self.subcarriers, self.taps));
        }
        if self.neighbors == 0 {
            return fail("neighbors must be positive".into());
        }
        for (name, p) in [("p_update", self.p_update), ("p_tiebreak", self.p_tiebreak)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.metrics.bins < 2 || self.metrics.max_pairs == 0 {
            return fail("histogram_bins must be >= 2 and max_pairs positive".into());
        }
        if self.synthetic_samples.is_some_and(|n| n < 2) || self.test_samples < 2 {
            return fail("synthetic routes need at least two samples".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return fail("noise_std must be non-negative".into());
        }
        if self.record_end.is_some_and(|e| e <= self.record_start) {
            return fail("record_end must exceed record_start".into());
        }
        if self.antennas_per_ap == Some(0) {
            return fail("antennas_per_ap must be positive".into());
        }
        Ok(())
    }

    /// Seeds derived from the master seed for independent random streams.
    pub fn curation_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::with_profile(Profile::Quick);
        cfg.source = SourceSpec::File("data/x.ccsf".into());
        cfg.metrics.neighbors = Some(7);
        cfg.p_update = 0.25;
        cfg.record_end = Some(16_516);
        let back = RunConfig::from_kv_str(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::from_kv_str(&RunConfig::default().to_kv()).unwrap(), RunConfig::default());
    }

    #[test]
    fn profile_applies_before_other_keys() {
        let cfg = RunConfig::from_kv_str("capacity = 50\n# comment\nprofile = quick\n").unwrap();
        assert_eq!(cfg.capacity, 50);
        assert_eq!(cfg.train.epochs, 60);
        let mut back = RunConfig::with_profile(Profile::Quick);
        back.set("profile", "default").unwrap();
        assert_eq!(back, RunConfig::default());
        back.set("profile", "measured").unwrap();
        assert_eq!((back.antennas_per_ap, back.drop_last, back.capacity), (Some(8), 1000, 1000));
        back.set("profile", "default").unwrap();
        assert_eq!(back, RunConfig::default());
    }

    #[test]
    fn bad_input_is_a_config_error() {
        for text in ["capacity = -3", "nonsense = 1", "just a line", "strategy = greedy"] {
            let e = RunConfig::from_kv_str(text).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}: {e}");
        }
        let mut cfg = RunConfig::default();
        cfg.p_update = 1.5;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        cfg.p_update = 0.5;
        cfg.taps = 2000;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sources_parse() {
        assert_eq!("synthetic".parse::<SourceSpec>().unwrap(), SourceSpec::Synthetic);
        assert_eq!("file:a/b".parse::<SourceSpec>().unwrap(), SourceSpec::File("a/b".into()));
        assert_eq!("a/b".parse::<SourceSpec>().unwrap(), SourceSpec::File("a/b".into()));
    }
}

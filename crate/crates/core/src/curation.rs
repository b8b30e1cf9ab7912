//! Fixed-capacity core CSI memory and the streaming curation strategies.
//!
//! [`CoreMemory`] keeps every stored feature together with the full pairwise
//! cosine-similarity matrix and a per-row maximum, so the most similar stored
//! pair is available in O(M) after each replacement. Two curators fill it:
//!
//! * [`Randos`] keeps a random subset: once full, a new sample is admitted with
//!   probability `p_update` and overwrites a slot drawn from a replacement PMF.
//! * [`Sims`] minimizes the maximum similarity: a new sample is admitted only if
//!   its best match in memory is strictly less similar than the most similar
//!   stored pair, and then overwrites one member of that pair.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::csi::{
    extract_feature, l2_norm, similarity_with_norms, CsiFeature, CsiMatrix, DelayDomainCsi,
    DelayTransform, GroundTruthPosition, DEFAULT_TAPS,
};
use crate::error::{Error, Result};

pub const DEFAULT_CAPACITY: usize = 1000;
pub const DEFAULT_P_UPDATE: f64 = 0.5;
pub const DEFAULT_P_TIEBREAK: f64 = 0.5;

/// What a memory slot keeps besides the feature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StorageMode {
    /// Truncated delay-domain taps and the feature.
    #[default]
    Compact,
    /// Additionally the full frequency-domain CSI matrix.
    Full,
}

/// A curated sample: everything later stages need, computed once on arrival.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredSample {
    pub arrival_index: u64,
    pub timestamp: Option<f64>,
    pub position: Option<GroundTruthPosition>,
    pub taps: DelayDomainCsi,
    pub feature: CsiFeature,
    pub csi: Option<CsiMatrix>,
}

impl StoredSample {
    pub fn prepare(
        csi: CsiMatrix,
        position: Option<GroundTruthPosition>,
        transform: &DelayTransform,
        mode: StorageMode,
    ) -> Result<Self> {
        let taps = transform.apply(&csi)?;
        let feature = extract_feature(&taps)?;
        Ok(Self {
            arrival_index: csi.sample_index,
            timestamp: csi.timestamp,
            position,
            taps,
            feature,
            csi: match mode {
                StorageMode::Full => Some(csi),
                StorageMode::Compact => None,
            },
        })
    }
}

/// Most similar stored pair, `first < second`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaxPair {
    pub first: usize,
    pub second: usize,
    pub similarity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurationAction {
    InsertedWhileFilling { slot: usize },
    Replaced { slot: usize },
    Discarded,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurationDecision {
    pub action: CurationAction,
    /// Maximum similarity of the new sample to the memory, when it was computed.
    pub observed_max_similarity: Option<f64>,
}

impl CurationDecision {
    pub fn is_accepted(&self) -> bool {
        !matches!(self.action, CurationAction::Discarded)
    }
}

/// One row of a memory-evolution snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotEntry {
    pub arrival_index: u64,
    pub position: Option<GroundTruthPosition>,
    /// Maximum similarity to any other stored sample; 0 for a singleton memory.
    pub max_similarity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct RowMax {
    value: f64,
    col: usize,
}

#[derive(Clone)]
pub struct CoreMemory {
    capacity: usize,
    taps: usize,
    storage: StorageMode,
    transform: Option<DelayTransform>,
    slots: Vec<StoredSample>,
    norms: Vec<f64>,
    // sim[i][j] for i != j; the diagonal is unused and kept at 0.
    sim: Vec<Vec<f64>>,
    row_max: Vec<Option<RowMax>>,
    max_pair: Option<MaxPair>,
}

impl std::fmt::Debug for CoreMemory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoreMemory")
            .field("capacity", &self.capacity)
            .field("taps", &self.taps)
            .field("storage", &self.storage)
            .field("len", &self.slots.len())
            .field("max_pair", &self.max_pair)
            .finish()
    }
}

impl CoreMemory {
    pub fn new(capacity: usize, taps: usize, storage: StorageMode) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::param("memory capacity must be positive"));
        }
        if taps == 0 {
            return Err(Error::param("number of delay taps must be positive"));
        }
        Ok(Self {
            capacity,
            taps,
            storage,
            transform: None,
            slots: Vec::new(),
            norms: Vec::new(),
            sim: Vec::new(),
            row_max: Vec::new(),
            max_pair: None,
        })
    }

    /// Default capacity, tap count and compact storage.
    pub fn with_capacity(capacity: usize) -> Result<Self> {
        Self::new(capacity, DEFAULT_TAPS, StorageMode::Compact)
    }

    /// Rebuilds a memory from previously stored samples (checkpoint restore).
    pub fn from_samples(
        capacity: usize,
        taps: usize,
        storage: StorageMode,
        samples: Vec<StoredSample>,
    ) -> Result<Self> {
        if samples.len() > capacity {
            return Err(Error::param(format!(
                "{} samples exceed capacity {capacity}",
                samples.len()
            )));
        }
        let mut mem = Self::new(capacity, taps, storage)?;
        for s in samples {
            mem.check_sample(&s)?;
            let sims = mem.similarities_to(&s.feature);
            mem.push(s, sims);
        }
        Ok(mem)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn storage(&self) -> StorageMode {
        self.storage
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() == self.capacity
    }

    pub fn samples(&self) -> &[StoredSample] {
        &self.slots
    }

    pub fn into_samples(self) -> Vec<StoredSample> {
        self.slots
    }

    pub fn max_pair(&self) -> Option<MaxPair> {
        self.max_pair
    }

    /// Cached similarity between two distinct slots.
    pub fn similarity(&self, i: usize, j: usize) -> f64 {
        assert!(i != j, "similarity cache has no diagonal");
        self.sim[i][j]
    }

    /// Computes taps and feature for a raw sample using this memory's tap count.
    pub fn prepare(
        &mut self,
        csi: CsiMatrix,
        position: Option<GroundTruthPosition>,
    ) -> Result<StoredSample> {
        let stale = self
            .transform
            .as_ref()
            .is_none_or(|t| t.subcarriers() != csi.subcarriers());
        if stale {
            self.transform = Some(DelayTransform::new(csi.subcarriers(), self.taps)?);
        }
        let transform = self.transform.as_ref().expect("transform just planned");
        StoredSample::prepare(csi, position, transform, self.storage)
    }

    /// Per-sample maximum similarity to the rest of the memory.
    pub fn snapshot(&self) -> Vec<SnapshotEntry> {
        self.slots
            .iter()
            .zip(&self.row_max)
            .map(|(s, rm)| SnapshotEntry {
                arrival_index: s.arrival_index,
                position: s.position.clone(),
                max_similarity: rm.map_or(0.0, |r| r.value),
            })
            .collect()
    }

    /// Copy of this memory with the similarity cache recomputed from scratch.
    pub fn rebuilt(&self) -> CoreMemory {
        let mut m = self.clone();
        m.rebuild_cache();
        m
    }

    /// Recomputes norms, the similarity matrix, row maxima and the max pair.
    pub fn rebuild_cache(&mut self) {
        let n = self.slots.len();
        self.norms = self.slots.iter().map(|s| l2_norm(s.feature.as_slice())).collect();
        self.sim = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = similarity_with_norms(
                    self.slots[i].feature.as_slice(),
                    self.norms[i],
                    self.slots[j].feature.as_slice(),
                    self.norms[j],
                );
                self.sim[i][j] = v;
                self.sim[j][i] = v;
            }
        }
        self.row_max = (0..n).map(|i| self.scan_row(i)).collect();
        self.refresh_max_pair();
    }

    /// Entry-wise maximum difference against another memory's cache.
    pub fn cache_difference(&self, other: &CoreMemory) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, b) in self.sim.iter().zip(&other.sim) {
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
        if self.sim.len() != other.sim.len() {
            return f64::INFINITY;
        }
        worst
    }

    fn check_sample(&self, s: &StoredSample) -> Result<()> {
        if s.taps.taps() != self.taps {
            return Err(Error::dim(format!(
                "sample has {} taps, memory expects {}",
                s.taps.taps(),
                self.taps
            )));
        }
        if let Some(first) = self.slots.first() {
            if first.feature.len() != s.feature.len() || first.taps.layout() != s.taps.layout() {
                return Err(Error::dim(format!(
                    "feature length {} does not match stored length {}",
                    s.feature.len(),
                    first.feature.len()
                )));
            }
        }
        Ok(())
    }

    fn similarities_to(&self, feature: &CsiFeature) -> Vec<f64> {
        let f = feature.as_slice();
        let nf = l2_norm(f);
        self.slots
            .iter()
            .zip(&self.norms)
            .map(|(s, &ns)| similarity_with_norms(f, nf, s.feature.as_slice(), ns))
            .collect()
    }

    fn scan_row(&self, i: usize) -> Option<RowMax> {
        let mut best: Option<RowMax> = None;
        for (j, &v) in self.sim[i].iter().enumerate() {
            if j == i {
                continue;
            }
            if best.is_none_or(|b| v > b.value) {
                best = Some(RowMax { value: v, col: j });
            }
        }
        best
    }

    fn refresh_max_pair(&mut self) {
        let mut best: Option<(usize, RowMax)> = None;
        for (i, rm) in self.row_max.iter().enumerate() {
            if let Some(rm) = rm {
                if best.is_none_or(|(_, b)| rm.value > b.value) {
                    best = Some((i, *rm));
                }
            }
        }
        // The lowest row attaining the maximum pairs with its lowest column,
        // which is the lexicographically smallest maximal pair.
        self.max_pair = best.map(|(i, rm)| MaxPair {
            first: i.min(rm.col),
            second: i.max(rm.col),
            similarity: rm.value,
        });
    }

    fn push(&mut self, sample: StoredSample, mut sims: Vec<f64>) {
        let slot = self.slots.len();
        for (j, row) in self.sim.iter_mut().enumerate() {
            let v = sims[j];
            row.push(v);
            if self.row_max[j].is_none_or(|b| v > b.value) {
                self.row_max[j] = Some(RowMax { value: v, col: slot });
            }
        }
        sims.push(0.0);
        self.norms.push(l2_norm(sample.feature.as_slice()));
        self.sim.push(sims);
        self.slots.push(sample);
        self.row_max.push(self.scan_row(slot));
        self.refresh_max_pair();
    }

    fn replace(&mut self, slot: usize, sample: StoredSample, mut sims: Vec<f64>) {
        sims[slot] = 0.0;
        for j in 0..self.slots.len() {
            if j == slot {
                continue;
            }
            let v = sims[j];
            self.sim[j][slot] = v;
            let old = self.row_max[j].expect("rows of a memory with >= 2 samples have a max");
            if old.col == slot {
                if v < old.value {
                    self.row_max[j] = None;
                    self.row_max[j] = self.scan_row(j);
                } else {
                    self.row_max[j] = Some(RowMax { value: v, col: slot });
                }
            } else if v > old.value || (v == old.value && slot < old.col) {
                self.row_max[j] = Some(RowMax { value: v, col: slot });
            }
        }
        self.norms[slot] = l2_norm(sample.feature.as_slice());
        self.sim[slot] = sims;
        self.slots[slot] = sample;
        self.row_max[slot] = self.scan_row(slot);
        self.refresh_max_pair();
    }
}

/// A streaming curation strategy over a [`CoreMemory`].
pub trait Curator {
    /// Offers an already prepared sample. Fails only on shape mismatch.
    fn offer_prepared(
        &mut self,
        mem: &mut CoreMemory,
        sample: StoredSample,
    ) -> Result<CurationDecision>;

    /// Prepares and offers a raw CSI sample. A zero-feature sample is
    /// rejected with [`Error::ZeroNorm`] and leaves the memory unchanged.
    fn offer(
        &mut self,
        mem: &mut CoreMemory,
        csi: CsiMatrix,
        position: Option<GroundTruthPosition>,
    ) -> Result<CurationDecision> {
        let sample = mem.prepare(csi, position)?;
        self.offer_prepared(mem, sample)
    }

    fn name(&self) -> &'static str;
}

/// Fill phase shared by both strategies. Returns the sample back if the memory is full.
fn try_fill(mem: &mut CoreMemory, sample: StoredSample) -> Result<Result<CurationDecision, StoredSample>> {
    mem.check_sample(&sample)?;
    if mem.is_full() {
        return Ok(Err(sample));
    }
    let sims = mem.similarities_to(&sample.feature);
    let observed = sims.iter().copied().reduce(f64::max);
    let slot = mem.len();
    mem.push(sample, sims);
    Ok(Ok(CurationDecision {
        action: CurationAction::InsertedWhileFilling { slot },
        observed_max_similarity: observed,
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReplacementPmf {
    Uniform,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandosConfig {
    pub p_update: f64,
    pub replacement: ReplacementPmf,
    pub rng_seed: u64,
}

impl Default for RandosConfig {
    fn default() -> Self {
        Self {
            p_update: DEFAULT_P_UPDATE,
            replacement: ReplacementPmf::Uniform,
            rng_seed: 0,
        }
    }
}

/// Random-subset curation.
pub struct Randos {
    cfg: RandosConfig,
    rng: ChaCha8Rng,
    weights: Option<WeightedIndex<f64>>,
    capacity: usize,
}

impl Randos {
    pub fn new(cfg: RandosConfig, capacity: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.p_update) {
            return Err(Error::param(format!("p_update {} not in [0, 1]", cfg.p_update)));
        }
        let weights = match &cfg.replacement {
            ReplacementPmf::Uniform => None,
            ReplacementPmf::Explicit(p) => {
                if p.len() != capacity {
                    return Err(Error::param(format!(
                        "replacement PMF has {} entries, capacity is {capacity}",
                        p.len()
                    )));
                }
                if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    return Err(Error::param("replacement probabilities must lie in [0, 1]"));
                }
                let total: f64 = p.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::param(format!("replacement PMF sums to {total}, not 1")));
                }
                Some(WeightedIndex::new(p).map_err(|e| Error::param(e.to_string()))?)
            }
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            cfg,
            weights,
            capacity,
        })
    }

    pub fn config(&self) -> &RandosConfig {
        &self.cfg
    }
}

impl Curator for Randos {
    fn offer_prepared(
        &mut self,
        mem: &mut CoreMemory,
        sample: StoredSample,
    ) -> Result<CurationDecision> {
        if mem.capacity() != self.capacity {
            return Err(Error::param("memory capacity differs from the curator's"));
        }
        let sample = match try_fill(mem, sample)? {
            Ok(d) => return Ok(d),
            Err(s) => s,
        };
        if !self.rng.random_bool(self.cfg.p_update) {
            return Ok(CurationDecision {
                action: CurationAction::Discarded,
                observed_max_similarity: None,
            });
        }
        let slot = match &self.weights {
            Some(w) => w.sample(&mut self.rng),
            None => self.rng.random_range(0..mem.capacity()),
        };
        let sims = mem.similarities_to(&sample.feature);
        mem.replace(slot, sample, sims);
        Ok(CurationDecision {
            action: CurationAction::Replaced { slot },
            observed_max_similarity: None,
        })
    }

    fn name(&self) -> &'static str {
        "randos"
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimsConfig {
    pub p_tiebreak: f64,
    pub rng_seed: u64,
}

impl Default for SimsConfig {
    fn default() -> Self {
        Self {
            p_tiebreak: DEFAULT_P_TIEBREAK,
            rng_seed: 0,
        }
    }
}

/// Min-max-similarity curation.
pub struct Sims {
    cfg: SimsConfig,
    rng: ChaCha8Rng,
}

impl Sims {
    pub fn new(cfg: SimsConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.p_tiebreak) {
            return Err(Error::param(format!("p {} not in [0, 1]", cfg.p_tiebreak)));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            cfg,
        })
    }

    pub fn config(&self) -> &SimsConfig {
        &self.cfg
    }
}

impl Curator for Sims {
    fn offer_prepared(
        &mut self,
        mem: &mut CoreMemory,
        sample: StoredSample,
    ) -> Result<CurationDecision> {
        let sample = match try_fill(mem, sample)? {
            Ok(d) => return Ok(d),
            Err(s) => s,
        };
        let sims = mem.similarities_to(&sample.feature);
        let s = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let decision = |action| CurationDecision {
            action,
            observed_max_similarity: Some(s),
        };
        // A single-slot memory has no pair to compare against.
        let Some(pair) = mem.max_pair() else {
            return Ok(decision(CurationAction::Discarded));
        };
        if s < pair.similarity {
            let slot = if self.rng.random_bool(self.cfg.p_tiebreak) {
                pair.first
            } else {
                pair.second
            };
            mem.replace(slot, sample, sims);
            Ok(decision(CurationAction::Replaced { slot }))
        } else {
            Ok(decision(CurationAction::Discarded))
        }
    }

    fn name(&self) -> &'static str {
        "sims"
    }
}

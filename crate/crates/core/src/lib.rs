//! Streaming channel charting.
//!
//! CSI samples arrive one at a time; a bounded memory of them is curated
//! online (random or similarity-based replacement), geodesic dissimilarities
//! are computed over the curated set, and a siamese network learns a 2-D
//! chart of the radio environment. Chart quality is scored against ground
//! truth positions.

pub mod chart;
pub mod config;
pub mod csi;
pub mod curation;
pub mod dissimilarity;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pairs;
pub mod pipeline;

pub use chart::{train, ChartModel, TrainConfig, TrainReport};
pub use csi::{
    cosine_similarity, extract_feature, to_delay_domain, AntennaLayout, CsiFeature, CsiMatrix, DelayDomainCsi,
    DelayTransform, GroundTruthPosition,
};
pub use curation::{
    CoreMemory, CurationAction, CurationDecision, Curator, MaxPair, Randos, RandosConfig, ReplacementPmf, Sims,
    SimsConfig, StorageMode, StoredSample,
};
pub use dissimilarity::{geodesic_dissimilarities, DissimilarityKind, DissimilarityMatrix, KnnGraph};
pub use error::{Error, Result};
pub use metrics::{evaluate, MetricParams, MetricReport};

//! File formats, external-data import and the synthetic stream generator.

mod bytes;
pub mod checkpoint;
pub mod import;
pub mod records;
pub mod synth;

use std::fs::File;
use std::io::BufReader;
use std::ops::Range;
use std::path::Path;

pub use checkpoint::{
    load_dissimilarity, load_memory, load_model, save_dissimilarity, save_memory, save_model, ModelCheckpoint,
};
pub use import::{import_external, ImportFormat, ImportOptions, ImportSummary, NpyDataset};
pub use records::{write_records, CsiRecord, RecordHeader, RecordReader, RecordWriter};
pub use synth::{SyntheticScenario, SyntheticStream};

use crate::csi::AntennaLayout;
use crate::error::Result;

enum SourceKind {
    File(RecordReader<BufReader<File>>),
    Synthetic(SyntheticStream),
}

/// A stream of CSI records in sample-index order, optionally restricted to
/// a half-open range of record positions.
pub struct StreamSource {
    inner: SourceKind,
    total: u64,
    range: Range<u64>,
    next: u64,
}

impl StreamSource {
    pub fn file(path: impl AsRef<Path>, layout: Option<AntennaLayout>) -> Result<Self> {
        let mut reader = RecordReader::open(path)?;
        if let Some(layout) = layout {
            reader = reader.with_layout(layout)?;
        }
        let total = reader.header().count;
        Ok(Self::new(SourceKind::File(reader), total))
    }

    pub fn synthetic(scenario: &SyntheticScenario) -> Result<Self> {
        let stream = scenario.stream()?;
        let total = stream.len() as u64;
        Ok(Self::new(SourceKind::Synthetic(stream), total))
    }

    fn new(inner: SourceKind, total: u64) -> Self {
        Self {
            inner,
            total,
            range: 0..u64::MAX,
            next: 0,
        }
    }

    pub fn with_range(mut self, range: Range<u64>) -> Self {
        self.range = range;
        self
    }

    /// Number of records this source will yield if none is malformed.
    pub fn len_hint(&self) -> u64 {
        self.total.min(self.range.end).saturating_sub(self.range.start)
    }

    fn raw_next(&mut self) -> Option<Result<CsiRecord>> {
        self.next += 1;
        match &mut self.inner {
            SourceKind::File(r) => r.next(),
            SourceKind::Synthetic(s) => s.next().map(Ok),
        }
    }
}

impl Iterator for StreamSource {
    type Item = Result<CsiRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        while self.next < self.range.start {
            match self.raw_next()? {
                Ok(_) => {}
                Err(e) => return Some(Err(e)),
            }
        }
        if self.next >= self.range.end {
            return None;
        }
        self.raw_next()
    }
}

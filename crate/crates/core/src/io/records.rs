//! `CCSF1` CSI record files.
//!
//! Layout (all little-endian):
//!
//! ```text
//! header:  magic "CCSF1" | version u16 | B u32 | W u32 | N u64 | has_positions u8 | position_dim u8
//! record:  sample_index u64 | timestamp f64 | [position_dim × f64] | B·W × (re f32, im f32)
//! ```
//!
//! CSI entries are row-major (antenna, then subcarrier). A missing timestamp
//! is stored as NaN.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::csi::{AntennaLayout, CsiMatrix, GroundTruthPosition};
use crate::error::{Error, Result};
use crate::io::bytes::LeReader;

pub const RECORD_MAGIC: &[u8; 5] = b"CCSF1";
pub const RECORD_VERSION: u16 = 1;
pub const RECORD_HEADER_LEN: u64 = 25;
const COUNT_OFFSET: u64 = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecordHeader {
    pub antennas: u32,
    pub subcarriers: u32,
    pub count: u64,
    /// `Some(2 | 3)` when records carry positions.
    pub position_dim: Option<u8>,
}

impl RecordHeader {
    pub fn record_len(&self) -> u64 {
        16 + 8 * self.position_dim.unwrap_or(0) as u64
            + 8 * self.antennas as u64 * self.subcarriers as u64
    }

    pub fn file_len(&self) -> u64 {
        RECORD_HEADER_LEN + self.count * self.record_len()
    }

    fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(RECORD_HEADER_LEN as usize);
        b.extend_from_slice(RECORD_MAGIC);
        b.extend_from_slice(&RECORD_VERSION.to_le_bytes());
        b.extend_from_slice(&self.antennas.to_le_bytes());
        b.extend_from_slice(&self.subcarriers.to_le_bytes());
        b.extend_from_slice(&self.count.to_le_bytes());
        b.push(self.position_dim.is_some() as u8);
        b.push(self.position_dim.unwrap_or(0));
        b
    }

    fn decode<R: Read>(r: &mut LeReader<R>) -> Result<Self> {
        let magic: [u8; 5] = r.bytes("magic")?;
        if &magic != RECORD_MAGIC {
            return Err(Error::parse(0, format!("bad magic {magic:?}, expected CCSF1")));
        }
        let version = r.u16("version")?;
        if version != RECORD_VERSION {
            return Err(Error::parse(5, format!("unsupported version {version}")));
        }
        let antennas = r.u32("antenna count")?;
        let subcarriers = r.u32("subcarrier count")?;
        let count = r.u64("record count")?;
        let has_positions = r.u8("position flag")?;
        let dim = r.u8("position dimension")?;
        if antennas == 0 || subcarriers == 0 {
            return Err(Error::parse(7, "antenna and subcarrier counts must be positive"));
        }
        let position_dim = match (has_positions, dim) {
            (0, _) => None,
            (1, 2 | 3) => Some(dim),
            _ => {
                return Err(Error::parse(
                    23,
                    format!("invalid position flag {has_positions} / dimension {dim}"),
                ))
            }
        };
        Ok(Self {
            antennas,
            subcarriers,
            count,
            position_dim,
        })
    }
}

/// One CSI sample with its optional ground-truth position.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiRecord {
    pub csi: CsiMatrix,
    pub position: Option<GroundTruthPosition>,
}

/// Streams records into a `CCSF1` file; the record count is patched on [`finish`](Self::finish).
pub struct RecordWriter<W: Write + Seek> {
    inner: W,
    header: RecordHeader,
    last_index: Option<u64>,
}

impl RecordWriter<BufWriter<File>> {
    pub fn create(
        path: impl AsRef<Path>,
        antennas: u32,
        subcarriers: u32,
        position_dim: Option<u8>,
    ) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), antennas, subcarriers, position_dim)
    }
}

impl<W: Write + Seek> RecordWriter<W> {
    pub fn new(mut inner: W, antennas: u32, subcarriers: u32, position_dim: Option<u8>) -> Result<Self> {
        if matches!(position_dim, Some(d) if !(2..=3).contains(&d)) {
            return Err(Error::param("position dimension must be 2 or 3"));
        }
        let header = RecordHeader {
            antennas,
            subcarriers,
            count: 0,
            position_dim,
        };
        inner.write_all(&header.encode())?;
        Ok(Self {
            inner,
            header,
            last_index: None,
        })
    }

    pub fn header(&self) -> &RecordHeader {
        &self.header
    }

    pub fn write(&mut self, record: &CsiRecord) -> Result<()> {
        let h = &record.csi;
        if h.antennas() != self.header.antennas as usize || h.subcarriers() != self.header.subcarriers as usize {
            return Err(Error::dim(format!(
                "record is {}x{}, file expects {}x{}",
                h.antennas(),
                h.subcarriers(),
                self.header.antennas,
                self.header.subcarriers
            )));
        }
        if self.last_index.is_some_and(|l| h.sample_index <= l) {
            return Err(Error::param(format!(
                "sample indices must increase strictly (got {} after {})",
                h.sample_index,
                self.last_index.unwrap()
            )));
        }
        let mut buf = Vec::with_capacity(self.header.record_len() as usize);
        buf.extend_from_slice(&h.sample_index.to_le_bytes());
        buf.extend_from_slice(&h.timestamp.unwrap_or(f64::NAN).to_le_bytes());
        match (self.header.position_dim, &record.position) {
            (Some(d), Some(p)) if p.coords().len() == d as usize => {
                for c in p.coords() {
                    buf.extend_from_slice(&c.to_le_bytes());
                }
            }
            (None, _) => {}
            (Some(d), _) => {
                return Err(Error::dim(format!("record needs a {d}-D position")));
            }
        }
        for z in h.data() {
            buf.extend_from_slice(&(z.re as f32).to_le_bytes());
            buf.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
        self.inner.write_all(&buf)?;
        self.header.count += 1;
        self.last_index = Some(h.sample_index);
        Ok(())
    }

    /// Writes the final record count and flushes.
    pub fn finish(mut self) -> Result<RecordHeader> {
        self.inner.seek(SeekFrom::Start(COUNT_OFFSET))?;
        self.inner.write_all(&self.header.count.to_le_bytes())?;
        self.inner.seek(SeekFrom::End(0))?;
        self.inner.flush()?;
        Ok(self.header)
    }
}

/// Lazy sequential reader over a `CCSF1` stream.
pub struct RecordReader<R: Read> {
    inner: LeReader<R>,
    header: RecordHeader,
    next: u64,
    last_index: Option<u64>,
    layout: Option<AntennaLayout>,
    done: bool,
}

impl RecordReader<BufReader<File>> {
    /// Opens a file and checks that it is not longer than its header implies.
    /// A short file is reported when the truncated record is reached.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let actual = file.metadata()?.len();
        let reader = Self::new(BufReader::new(file))?;
        let expected = reader.header.file_len();
        if actual > expected {
            return Err(Error::parse(
                expected,
                format!("{} trailing bytes after the last record", actual - expected),
            ));
        }
        Ok(reader)
    }
}

impl<R: Read> RecordReader<R> {
    pub fn new(inner: R) -> Result<Self> {
        let mut inner = LeReader::new(inner, 0);
        let header = RecordHeader::decode(&mut inner)?;
        Ok(Self {
            inner,
            header,
            next: 0,
            last_index: None,
            layout: None,
            done: false,
        })
    }

    pub fn header(&self) -> &RecordHeader {
        &self.header
    }

    /// Antenna grouping attached to every emitted matrix.
    pub fn with_layout(mut self, layout: AntennaLayout) -> Result<Self> {
        if layout.antennas() != self.header.antennas as usize {
            return Err(Error::dim("layout does not match the file's antenna count"));
        }
        self.layout = Some(layout);
        Ok(self)
    }

    fn read_record(&mut self) -> Result<CsiRecord> {
        let start = self.inner.offset();
        let mut raw = vec![0u8; self.header.record_len() as usize];
        self.inner.fill(&mut raw, "record").map_err(|e| match e {
            Error::Parse { .. } => Error::parse(
                start,
                format!(
                    "truncated record {} of {} (header claims {} records)",
                    self.next, self.header.count, self.header.count
                ),
            ),
            other => other,
        })?;
        let f64_at = |o: usize| f64::from_le_bytes(raw[o..o + 8].try_into().unwrap());
        let sample_index = u64::from_le_bytes(raw[0..8].try_into().unwrap());
        let ts = f64_at(8);
        let mut o = 16;
        let position = match self.header.position_dim {
            Some(d) => {
                let coords: Vec<f64> = (0..d as usize).map(|k| f64_at(o + 8 * k)).collect();
                o += 8 * d as usize;
                Some(
                    GroundTruthPosition::new(coords)
                        .map_err(|e| Error::parse(start + 16, e.to_string()))?,
                )
            }
            None => None,
        };
        let data: Vec<Complex64> = raw[o..]
            .chunks_exact(8)
            .map(|c| {
                Complex64::new(
                    f32::from_le_bytes(c[0..4].try_into().unwrap()) as f64,
                    f32::from_le_bytes(c[4..8].try_into().unwrap()) as f64,
                )
            })
            .collect();
        if self.last_index.is_some_and(|l| sample_index <= l) {
            return Err(Error::parse(start, "sample indices are not strictly increasing"));
        }
        let mut csi = CsiMatrix::new(
            self.header.antennas as usize,
            self.header.subcarriers as usize,
            data,
            sample_index,
        )
        .map_err(|e| Error::parse(start + o as u64, e.to_string()))?
        .with_timestamp(Some(ts));
        if let Some(layout) = &self.layout {
            csi = csi.with_layout(layout.clone())?;
        }
        self.last_index = Some(sample_index);
        Ok(CsiRecord { csi, position })
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<CsiRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done || self.next >= self.header.count {
            return None;
        }
        let r = self.read_record();
        self.next += 1;
        if r.is_err() {
            self.done = true;
        }
        Some(r)
    }
}

/// Writes all records to `path`. Dimensions come from the first record.
pub fn write_records<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a CsiRecord>,
) -> Result<RecordHeader> {
    let mut iter = records.into_iter().peekable();
    let (b, w, dim) = match iter.peek() {
        Some(r) => (
            r.csi.antennas() as u32,
            r.csi.subcarriers() as u32,
            r.position.as_ref().map(|p| p.coords().len() as u8),
        ),
        None => (1, 1, None),
    };
    let mut writer = RecordWriter::create(path, b, w, dim)?;
    for r in iter {
        writer.write(r)?;
    }
    writer.finish()
}

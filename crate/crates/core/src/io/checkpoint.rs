//! `CCKP1` checkpoints for curated memories, trained chart models and
//! dissimilarity matrices. Floats are stored as f64 so restores are exact.
//!
//! ```text
//! magic "CCKP1" | version u16 | kind u8 | label (u32 length + UTF-8) | payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::chart::{Activation, ChartModel, DenseLayer};
use crate::csi::{AntennaLayout, CsiMatrix, DelayDomainCsi, GroundTruthPosition};
use crate::curation::{CoreMemory, StorageMode, StoredSample};
use crate::dissimilarity::{DissimilarityKind, DissimilarityMatrix};
use crate::error::{Error, Result};
use crate::io::bytes::{put_complex64s, put_f64s, LeReader};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"CCKP1";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum CheckpointKind {
    Memory = 1,
    Model = 2,
    Dissimilarity = 3,
}

/// A chart model together with the tap count its features were built with.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub taps: usize,
    pub model: ChartModel,
}

fn write_header<W: Write>(w: &mut W, kind: CheckpointKind, label: &str) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&[kind as u8])?;
    w.write_all(&(label.len() as u32).to_le_bytes())?;
    w.write_all(label.as_bytes())?;
    Ok(())
}

fn read_header<R: Read>(r: &mut LeReader<R>, kind: CheckpointKind) -> Result<String> {
    let magic: [u8; 5] = r.bytes("magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::parse(0, "not a checkpoint file (bad magic)"));
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse(5, format!("unsupported checkpoint version {version}")));
    }
    let found = r.u8("kind")?;
    if found != kind as u8 {
        return Err(Error::parse(7, format!("checkpoint holds kind {found}, expected {kind:?}")));
    }
    let len = r.u32("label length")? as usize;
    let at = r.offset();
    let mut raw = vec![0u8; len];
    r.fill(&mut raw, "label")?;
    String::from_utf8(raw).map_err(|_| Error::parse(at, "label is not UTF-8"))
}

fn expect_end<R: Read>(r: &mut LeReader<R>) -> Result<()> {
    let at = r.offset();
    let mut probe = [0u8; 1];
    match r.fill(&mut probe, "end") {
        Err(Error::Parse { .. }) => Ok(()),
        Err(e) => Err(e),
        Ok(()) => Err(Error::parse(at, "trailing bytes after checkpoint payload")),
    }
}

fn write_layout<W: Write>(w: &mut W, layout: &AntennaLayout) -> Result<()> {
    w.write_all(&(layout.antennas() as u32).to_le_bytes())?;
    w.write_all(&(layout.groups().len() as u32).to_le_bytes())?;
    for g in layout.groups() {
        w.write_all(&(g.start as u32).to_le_bytes())?;
        w.write_all(&(g.end as u32).to_le_bytes())?;
    }
    Ok(())
}

fn read_layout<R: Read>(r: &mut LeReader<R>) -> Result<AntennaLayout> {
    let at = r.offset();
    let antennas = r.u32("antenna count")? as usize;
    let count = r.u32("group count")? as usize;
    let mut groups: Vec<Range<usize>> = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let s = r.u32("group start")? as usize;
        let e = r.u32("group end")? as usize;
        groups.push(s..e);
    }
    AntennaLayout::from_groups(groups, antennas).map_err(|e| Error::parse(at, e.to_string()))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<LeReader<BufReader<File>>> {
    Ok(LeReader::new(BufReader::new(File::open(path)?), 0))
}

pub fn save_memory(path: impl AsRef<Path>, mem: &CoreMemory, label: &str) -> Result<()> {
    write_file(path.as_ref(), |w| {
        write_header(w, CheckpointKind::Memory, label)?;
        w.write_all(&(mem.capacity() as u64).to_le_bytes())?;
        w.write_all(&(mem.taps() as u32).to_le_bytes())?;
        w.write_all(&[matches!(mem.storage(), StorageMode::Full) as u8])?;
        w.write_all(&(mem.len() as u64).to_le_bytes())?;
        for s in mem.samples() {
            w.write_all(&s.arrival_index.to_le_bytes())?;
            w.write_all(&s.timestamp.unwrap_or(f64::NAN).to_le_bytes())?;
            let coords = s.position.as_ref().map(|p| p.coords()).unwrap_or(&[]);
            w.write_all(&[coords.len() as u8])?;
            put_f64s(w, coords.iter().copied())?;
            write_layout(w, s.taps.layout())?;
            put_complex64s(w, s.taps.data())?;
            match &s.csi {
                Some(h) => {
                    w.write_all(&(h.subcarriers() as u32).to_le_bytes())?;
                    put_complex64s(w, h.data())?;
                }
                None => w.write_all(&0u32.to_le_bytes())?,
            }
        }
        Ok(())
    })
}

/// Restores a memory; features are recomputed from the stored taps, which
/// reproduces them bit for bit.
pub fn load_memory(path: impl AsRef<Path>) -> Result<(CoreMemory, String)> {
    let mut r = open(path.as_ref())?;
    let label = read_header(&mut r, CheckpointKind::Memory)?;
    let capacity = r.u64("capacity")? as usize;
    let taps = r.u32("taps")? as usize;
    let storage = match r.u8("storage mode")? {
        0 => StorageMode::Compact,
        1 => StorageMode::Full,
        m => return Err(Error::parse(r.offset() - 1, format!("unknown storage mode {m}"))),
    };
    let count = r.u64("sample count")? as usize;
    let mut samples = Vec::with_capacity(count.min(capacity));
    for _ in 0..count {
        let at = r.offset();
        let bad = |e: Error| Error::parse(at, e.to_string());
        let arrival_index = r.u64("arrival index")?;
        let ts = r.f64("timestamp")?;
        let dim = r.u8("position dimension")? as usize;
        let position = match dim {
            0 => None,
            _ => Some(GroundTruthPosition::new(r.f64s(dim, "position")?).map_err(bad)?),
        };
        let layout = read_layout(&mut r)?;
        let data = r.complex64s(layout.antennas() * taps, "delay taps")?;
        let dd = DelayDomainCsi::with_layout(layout.clone(), taps, data).map_err(bad)?;
        let feature = crate::csi::extract_feature(&dd).map_err(bad)?;
        let w = r.u32("subcarrier count")? as usize;
        let csi = if w > 0 {
            let data = r.complex64s(layout.antennas() * w, "CSI matrix")?;
            Some(
                CsiMatrix::new(layout.antennas(), w, data, arrival_index)
                    .and_then(|m| m.with_layout(layout))
                    .map_err(bad)?
                    .with_timestamp(Some(ts)),
            )
        } else {
            None
        };
        samples.push(StoredSample {
            arrival_index,
            timestamp: (!ts.is_nan()).then_some(ts),
            position,
            taps: dd,
            feature,
            csi,
        });
    }
    expect_end(&mut r)?;
    Ok((CoreMemory::from_samples(capacity, taps, storage, samples)?, label))
}

pub fn save_model(path: impl AsRef<Path>, ckpt: &ModelCheckpoint, label: &str) -> Result<()> {
    write_file(path.as_ref(), |w| {
        write_header(w, CheckpointKind::Model, label)?;
        w.write_all(&(ckpt.taps as u32).to_le_bytes())?;
        let layers = ckpt.model.layers();
        w.write_all(&(layers.len() as u32).to_le_bytes())?;
        for l in layers {
            w.write_all(&(l.input_dim() as u32).to_le_bytes())?;
            w.write_all(&(l.output_dim() as u32).to_le_bytes())?;
            w.write_all(&[matches!(l.activation, Activation::Relu) as u8])?;
            put_f64s(w, l.weights.iter().copied())?;
            put_f64s(w, l.bias.iter().copied())?;
        }
        Ok(())
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelCheckpoint, String)> {
    let mut r = open(path.as_ref())?;
    let label = read_header(&mut r, CheckpointKind::Model)?;
    let taps = r.u32("taps")? as usize;
    let n = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let at = r.offset();
        let input = r.u32("layer input")? as usize;
        let output = r.u32("layer output")? as usize;
        let activation = match r.u8("activation")? {
            0 => Activation::Linear,
            1 => Activation::Relu,
            a => return Err(Error::parse(at + 8, format!("unknown activation {a}"))),
        };
        let w = r.f64s(input * output, "weights")?;
        let b = r.f64s(output, "bias")?;
        layers.push(DenseLayer {
            weights: Array2::from_shape_vec((output, input), w).map_err(|e| Error::parse(at, e.to_string()))?,
            bias: Array1::from(b),
            activation,
        });
    }
    expect_end(&mut r)?;
    let model = ChartModel::from_layers(layers)?;
    Ok((ModelCheckpoint { taps, model }, label))
}

pub fn save_dissimilarity(path: impl AsRef<Path>, d: &DissimilarityMatrix, label: &str) -> Result<()> {
    write_file(path.as_ref(), |w| {
        write_header(w, CheckpointKind::Dissimilarity, label)?;
        w.write_all(&[match d.kind() {
            DissimilarityKind::Adp => 0u8,
            DissimilarityKind::Geodesic => 1u8,
        }])?;
        w.write_all(&(d.len() as u64).to_le_bytes())?;
        put_f64s(w, d.values().iter().copied())?;
        Ok(())
    })
}

pub fn load_dissimilarity(path: impl AsRef<Path>) -> Result<(DissimilarityMatrix, String)> {
    let mut r = open(path.as_ref())?;
    let label = read_header(&mut r, CheckpointKind::Dissimilarity)?;
    let at = r.offset();
    let kind = match r.u8("kind")? {
        0 => DissimilarityKind::Adp,
        1 => DissimilarityKind::Geodesic,
        k => return Err(Error::parse(at, format!("unknown dissimilarity kind {k}"))),
    };
    let n = r.u64("size")? as usize;
    let values = r.f64s(n * n, "values")?;
    expect_end(&mut r)?;
    let d = DissimilarityMatrix::from_values(n, values, kind).map_err(|e| Error::parse(at, e.to_string()))?;
    Ok((d, label))
}

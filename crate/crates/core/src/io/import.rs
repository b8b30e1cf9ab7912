//! Conversion of external datasets into `CCSF1` record files.
//!
//! Two source layouts are understood:
//!
//! * `ccsf`: an existing record file (useful for trimming with a record range).
//! * `npy`: a directory with `csi.npy` of shape `(N, B, W)` and complex dtype
//!   (`<c8`, `<c16`), or real dtype (`<f4`, `<f8`) with a trailing axis of 2;
//!   plus optional `positions.npy` `(N, 2|3)` and `timestamps.npy` `(N,)`.
//!
//! CSI is streamed record by record; positions and timestamps are small and
//! loaded whole.

use std::fs::File;
use std::io::{BufReader, Read};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;

use crate::csi::{CsiMatrix, GroundTruthPosition};
use crate::error::{Error, Result};
use crate::io::records::{CsiRecord, RecordHeader, RecordReader, RecordWriter};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImportFormat {
    Ccsf,
    Npy,
}

impl FromStr for ImportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ccsf" => Ok(Self::Ccsf),
            "npy" => Ok(Self::Npy),
            other => Err(Error::Config(format!("unknown import format '{other}' (expected ccsf or npy)"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImportOptions {
    /// Keep only records whose position in the source falls in this range.
    pub records: Option<Range<u64>>,
}

fn import_err(record: Option<u64>, message: impl Into<String>) -> Error {
    Error::Import {
        record,
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    F32,
    F64,
    C64,
    C128,
}

impl Scalar {
    fn size(self) -> usize {
        match self {
            Scalar::F32 => 4,
            Scalar::F64 | Scalar::C64 => 8,
            Scalar::C128 => 16,
        }
    }

    fn is_complex(self) -> bool {
        matches!(self, Scalar::C64 | Scalar::C128)
    }
}

/// Header of a C-ordered little-endian `.npy` array, with the reader
/// positioned at the first data byte.
struct NpyArray {
    scalar: Scalar,
    shape: Vec<usize>,
    reader: BufReader<File>,
    name: String,
}

fn dict_value<'a>(dict: &'a str, key: &str) -> Option<&'a str> {
    let at = dict.find(&format!("'{key}'"))? + key.len() + 2;
    let rest = dict[at..].trim_start().strip_prefix(':')?.trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')')? + 1
    } else {
        rest.find([',', '}']).unwrap_or(rest.len())
    };
    Some(rest[..end].trim())
}

impl NpyArray {
    fn open(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let mut reader = BufReader::new(File::open(path)?);
        let mut pre = [0u8; 8];
        reader
            .read_exact(&mut pre)
            .map_err(|_| import_err(None, format!("{name}: too short for an npy header")))?;
        if &pre[..6] != b"\x93NUMPY" {
            return Err(import_err(None, format!("{name}: not an npy file")));
        }
        let len = match pre[6] {
            1 => {
                let mut b = [0u8; 2];
                reader.read_exact(&mut b)?;
                u16::from_le_bytes(b) as usize
            }
            2 | 3 => {
                let mut b = [0u8; 4];
                reader.read_exact(&mut b)?;
                u32::from_le_bytes(b) as usize
            }
            v => return Err(import_err(None, format!("{name}: unsupported npy version {v}"))),
        };
        let mut raw = vec![0u8; len];
        reader.read_exact(&mut raw)?;
        let dict = String::from_utf8_lossy(&raw).into_owned();
        let bad = |what: &str| import_err(None, format!("{name}: {what} in header {dict:?}"));
        let descr = dict_value(&dict, "descr").ok_or_else(|| bad("missing descr"))?;
        let scalar = match descr.trim_matches(['\'', '"']) {
            "<f4" => Scalar::F32,
            "<f8" => Scalar::F64,
            "<c8" => Scalar::C64,
            "<c16" => Scalar::C128,
            _ => return Err(bad("unsupported dtype (need little-endian f4, f8, c8 or c16)")),
        };
        if dict_value(&dict, "fortran_order") != Some("False") {
            return Err(bad("only C-ordered arrays are supported"));
        }
        let shape_text = dict_value(&dict, "shape").ok_or_else(|| bad("missing shape"))?;
        let shape = shape_text
            .trim_matches(['(', ')'])
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<usize>().map_err(|_| bad("malformed shape")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scalar,
            shape,
            reader,
            name,
        })
    }

    /// Reads `count` scalars as f64 (complex scalars yield two values each).
    fn read_values(&mut self, count: usize, record: Option<u64>) -> Result<Vec<f64>> {
        let per = if self.scalar.is_complex() { 2 } else { 1 };
        let elem = self.scalar.size() / per;
        let mut raw = vec![0u8; count * self.scalar.size()];
        self.reader.read_exact(&mut raw).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => import_err(record, format!("{}: truncated data", self.name)),
            _ => e.into(),
        })?;
        Ok(match elem {
            4 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            _ => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        })
    }
}

/// Streaming reader over an npy dataset directory.
pub struct NpyDataset {
    csi: NpyArray,
    antennas: usize,
    subcarriers: usize,
    count: u64,
    positions: Option<(usize, Vec<f64>)>,
    timestamps: Option<Vec<f64>>,
    next: u64,
    failed: bool,
}

impl NpyDataset {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let csi = NpyArray::open(&dir.join("csi.npy"))?;
        let shape = csi.shape.clone();
        let ok = match csi.scalar {
            Scalar::C64 | Scalar::C128 => shape.len() == 3,
            Scalar::F32 | Scalar::F64 => shape.len() == 4 && shape[3] == 2,
        };
        if !ok || shape[1] == 0 || shape[2] == 0 {
            return Err(import_err(
                None,
                format!("csi.npy has shape {shape:?}; expected (N, B, W) complex or (N, B, W, 2) real"),
            ));
        }
        let count = shape[0] as u64;
        let positions = load_optional(&dir.join("positions.npy"))?
            .map(|mut a| {
                let dim = a.shape.get(1).copied().unwrap_or(0);
                if a.shape.len() != 2 || a.shape[0] as u64 != count || !(2..=3).contains(&dim) || a.scalar.is_complex() {
                    return Err(import_err(
                        None,
                        format!("positions.npy has shape {:?}; expected ({count}, 2|3) real", a.shape),
                    ));
                }
                Ok((dim, a.read_values(count as usize * dim, None)?))
            })
            .transpose()?;
        let timestamps = load_optional(&dir.join("timestamps.npy"))?
            .map(|mut a| {
                if a.shape != [count as usize] || a.scalar.is_complex() {
                    return Err(import_err(
                        None,
                        format!("timestamps.npy has shape {:?}; expected ({count},) real", a.shape),
                    ));
                }
                a.read_values(count as usize, None)
            })
            .transpose()?;
        Ok(Self {
            csi,
            antennas: shape[1],
            subcarriers: shape[2],
            count,
            positions,
            timestamps,
            next: 0,
            failed: false,
        })
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn position_dim(&self) -> Option<u8> {
        self.positions.as_ref().map(|(d, _)| *d as u8)
    }

    fn read(&mut self, k: u64) -> Result<CsiRecord> {
        let n = self.antennas * self.subcarriers;
        let scalars = if self.csi.scalar.is_complex() { n } else { 2 * n };
        let v = self.csi.read_values(scalars, Some(k))?;
        let data: Vec<Complex64> = v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        let csi = CsiMatrix::new(self.antennas, self.subcarriers, data, k)
            .map_err(|e| import_err(Some(k), e.to_string()))?
            .with_timestamp(self.timestamps.as_ref().map(|t| t[k as usize]));
        let position = match &self.positions {
            Some((d, p)) => {
                let i = k as usize * d;
                Some(
                    GroundTruthPosition::new(p[i..i + d].to_vec())
                        .map_err(|e| import_err(Some(k), e.to_string()))?,
                )
            }
            None => None,
        };
        Ok(CsiRecord { csi, position })
    }
}

fn load_optional(path: &Path) -> Result<Option<NpyArray>> {
    if path.exists() {
        NpyArray::open(path).map(Some)
    } else {
        Ok(None)
    }
}

impl Iterator for NpyDataset {
    type Item = Result<CsiRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.next >= self.count {
            return None;
        }
        let k = self.next;
        self.next += 1;
        let r = self.read(k);
        self.failed = r.is_err();
        Some(r)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImportSummary {
    pub header: RecordHeader,
    pub output: PathBuf,
}

/// Converts `source` into a `CCSF1` file at `output`, keeping only the
/// selected record range.
pub fn import_external(
    source: impl AsRef<Path>,
    format: ImportFormat,
    output: impl AsRef<Path>,
    options: &ImportOptions,
) -> Result<ImportSummary> {
    let source = source.as_ref();
    let (b, w, dim, records): (usize, usize, Option<u8>, Box<dyn Iterator<Item = Result<CsiRecord>>>) =
        match format {
            ImportFormat::Ccsf => {
                let r = RecordReader::open(source)?;
                let h = *r.header();
                (h.antennas as usize, h.subcarriers as usize, h.position_dim, Box::new(r))
            }
            ImportFormat::Npy => {
                let d = NpyDataset::open(source)?;
                (d.antennas(), d.subcarriers(), d.position_dim(), Box::new(d))
            }
        };
    let mut writer = RecordWriter::create(output.as_ref(), b as u32, w as u32, dim)?;
    let range = options.records.clone().unwrap_or(0..u64::MAX);
    for (k, rec) in records.enumerate() {
        let k = k as u64;
        if k >= range.end {
            break;
        }
        let rec = rec?;
        if k >= range.start {
            writer.write(&rec).map_err(|e| import_err(Some(k), e.to_string()))?;
        }
    }
    Ok(ImportSummary {
        header: writer.finish()?,
        output: output.as_ref().to_path_buf(),
    })
}

/// Writes a little-endian C-ordered `.npy` file.
pub fn write_npy(path: impl AsRef<Path>, descr: &str, shape: &[usize], data: &[u8]) -> Result<()> {
    use std::io::Write;
    let shape_text = match shape {
        [n] => format!("({n},)"),
        _ => format!("({})", shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")),
    };
    let mut dict = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_text}, }}");
    while (10 + dict.len() + 1) % 64 != 0 {
        dict.push(' ');
    }
    dict.push('\n');
    let mut f = std::io::BufWriter::new(File::create(path)?);
    f.write_all(b"\x93NUMPY\x01\x00")?;
    f.write_all(&(dict.len() as u16).to_le_bytes())?;
    f.write_all(dict.as_bytes())?;
    f.write_all(data)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f64_bytes(v: &[f64]) -> Vec<u8> {
        v.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    fn f32_bytes(v: &[f32]) -> Vec<u8> {
        v.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    #[test]
    fn dict_parsing() {
        let d = "{'descr': '<c8', 'fortran_order': False, 'shape': (3, 2, 4), }";
        assert_eq!(dict_value(d, "descr"), Some("'<c8'"));
        assert_eq!(dict_value(d, "fortran_order"), Some("False"));
        assert_eq!(dict_value(d, "shape"), Some("(3, 2, 4)"));
    }

    #[test]
    fn npy_directory_imports_with_range() {
        let dir = tempfile::tempdir().unwrap();
        let (n, b, w) = (5usize, 2usize, 3usize);
        let csi: Vec<f32> = (0..n * b * w * 2).map(|k| k as f32 + 1.0).collect();
        write_npy(dir.path().join("csi.npy"), "<c8", &[n, b, w], &f32_bytes(&csi)).unwrap();
        let pos: Vec<f64> = (0..n * 3).map(|k| k as f64).collect();
        write_npy(dir.path().join("positions.npy"), "<f8", &[n, 3], &f64_bytes(&pos)).unwrap();
        let ts: Vec<f64> = (0..n).map(|k| k as f64 * 0.5).collect();
        write_npy(dir.path().join("timestamps.npy"), "<f8", &[n], &f64_bytes(&ts)).unwrap();

        let out = dir.path().join("out.ccsf");
        let opts = ImportOptions { records: Some(1..4) };
        let summary = import_external(dir.path(), ImportFormat::Npy, &out, &opts).unwrap();
        assert_eq!(summary.header.count, 3);
        let recs: Vec<_> = RecordReader::open(&out).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(recs[0].csi.sample_index, 1);
        assert_eq!(recs[0].csi.timestamp, Some(0.5));
        assert_eq!(recs[0].position.as_ref().unwrap().coords(), &[3.0, 4.0, 5.0]);
        let first = (b * w * 2) as f64 + 1.0;
        assert_eq!(recs[0].csi.get(0, 0), Complex64::new(first, first + 1.0));

        let again = dir.path().join("again.ccsf");
        let s2 = import_external(&out, ImportFormat::Ccsf, &again, &ImportOptions { records: Some(0..2) }).unwrap();
        assert_eq!(s2.header.count, 2);
    }

    #[test]
    fn real_pairs_layout_and_corrupt_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut csi = vec![1.0f64; 3 * 2 * 2 * 2];
        csi[2 * 2 * 2 + 1] = f64::NAN;
        write_npy(dir.path().join("csi.npy"), "<f8", &[3, 2, 2, 2], &f64_bytes(&csi)).unwrap();
        let out = dir.path().join("o.ccsf");
        match import_external(dir.path(), ImportFormat::Npy, &out, &ImportOptions::default()) {
            Err(Error::Import { record: Some(1), .. }) => {}
            other => panic!("expected import error in record 1, got {other:?}"),
        }
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_npy(dir.path().join("csi.npy"), "<c8", &[2, 3], &[0u8; 48]).unwrap();
        assert!(matches!(NpyDataset::open(dir.path()), Err(Error::Import { .. })));
        write_npy(dir.path().join("csi.npy"), "<c8", &[2, 1, 1], &[0u8; 16]).unwrap();
        write_npy(dir.path().join("positions.npy"), "<f8", &[3, 2], &[0u8; 48]).unwrap();
        assert!(matches!(NpyDataset::open(dir.path()), Err(Error::Import { .. })));
    }

    #[test]
    fn truncated_csi_reports_record() {
        let dir = tempfile::tempdir().unwrap();
        write_npy(dir.path().join("csi.npy"), "<c8", &[3, 1, 2], &[0u8; 40]).unwrap();
        let results: Vec<_> = NpyDataset::open(dir.path()).unwrap().collect();
        assert!(matches!(results.last(), Some(Err(Error::Import { record: Some(2), .. }))));
    }
}

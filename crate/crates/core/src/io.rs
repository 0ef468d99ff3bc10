//! On-disk formats.
//!
//! `UACL` dataset container (all fields little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "UACL"
//! 4       4           version: u32 = 1
//! 8       1           ndims: u8 (1..=4)
//! 9       4 * ndims   dims: u32 per axis
//! 9+4n    8           n_samples: u64
//! then n_samples records of
//!         4           task_id: u32
//!         8           expert_flat: u64
//!         4 * |A|     logits: f32, row-major
//! ```
//!
//! The file length is therefore exactly `17 + 4 n + n_samples (12 + 4 |A|)`.
//! Logits are stored as `f32` and widened to `f64` on read.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action_space::{ActionGrid, ActionIndex, MAX_AXES};
use crate::calibration::{CalibrationSample, LogitField, TemperatureModel};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"UACL";
pub const VERSION: u32 = 1;
const RECORD_PREFIX: u64 = 12;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

pub fn checksum_hex(sum: u64) -> String {
    format!("{sum:016x}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub grid: ActionGrid,
    pub n_samples: u64,
}

impl DatasetHeader {
    pub fn header_len(&self) -> u64 {
        9 + 4 * self.grid.ndim() as u64 + 8
    }

    pub fn record_len(&self) -> u64 {
        RECORD_PREFIX + 4 * self.grid.len() as u64
    }

    /// Expected file length, or `None` on overflow.
    pub fn file_len(&self) -> Option<u64> {
        self.record_len()
            .checked_mul(self.n_samples)?
            .checked_add(self.header_len())
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.grid.ndim() as u8);
        for &d in self.grid.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.n_samples.to_le_bytes());
    }

    /// Parse a header from `r`, given the total length of the underlying file.
    fn decode<R: Read>(r: &mut R, actual_len: u64) -> Result<Self> {
        let short = |expected: u64| Error::Truncated {
            expected,
            actual: actual_len,
        };
        let mut fixed = [0u8; 9];
        if actual_len < 9 {
            return Err(short(9));
        }
        r.read_exact(&mut fixed)?;
        if fixed[..4] != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {:02x?}, expected \"UACL\"", &fixed[..4]),
            });
        }
        let version = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let ndims = fixed[8] as usize;
        if !(1..=MAX_AXES).contains(&ndims) {
            return Err(Error::Format {
                offset: 8,
                message: format!("ndims must be 1 to {MAX_AXES}, got {ndims}"),
            });
        }
        let header_len = 9 + 4 * ndims as u64 + 8;
        if actual_len < header_len {
            return Err(short(header_len));
        }
        let mut rest = vec![0u8; 4 * ndims + 8];
        r.read_exact(&mut rest)?;
        let mut dims = Vec::with_capacity(ndims);
        for axis in 0..ndims {
            let d = u32::from_le_bytes(rest[4 * axis..4 * axis + 4].try_into().unwrap());
            if d == 0 {
                return Err(Error::Format {
                    offset: 9 + 4 * axis as u64,
                    message: format!("axis {axis} has zero cells"),
                });
            }
            dims.push(d as usize);
        }
        let grid = ActionGrid::new(&dims).map_err(|e| Error::Format {
            offset: 9,
            message: e.to_string(),
        })?;
        let n_samples = u64::from_le_bytes(rest[4 * ndims..].try_into().unwrap());
        let header = DatasetHeader { grid, n_samples };
        let expected = header.file_len().ok_or_else(|| Error::Format {
            offset: 9 + 4 * ndims as u64,
            message: format!("sample count {n_samples} overflows the file size"),
        })?;
        if expected != actual_len {
            return Err(Error::Truncated {
                expected,
                actual: actual_len,
            });
        }
        Ok(header)
    }
}

/// Serialize `samples` over `grid` into the container layout.
pub fn encode_dataset(grid: &ActionGrid, samples: &[CalibrationSample]) -> Result<Vec<u8>> {
    if grid.dims().iter().any(|&d| d > u32::MAX as usize) {
        return Err(Error::Validation("axis extent does not fit in u32".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.logits.grid() != grid {
            return Err(Error::Validation(format!(
                "sample {i} has grid {:?}, dataset grid is {:?}",
                s.logits.grid().dims(),
                grid.dims()
            )));
        }
    }
    let header = DatasetHeader {
        grid: grid.clone(),
        n_samples: samples.len() as u64,
    };
    let len = header
        .file_len()
        .ok_or_else(|| Error::Validation("dataset too large".into()))?;
    let mut out = Vec::with_capacity(len as usize);
    header.encode(&mut out);
    for s in samples {
        out.extend_from_slice(&s.task_id.to_le_bytes());
        out.extend_from_slice(&(s.expert.get() as u64).to_le_bytes());
        for &v in s.logits.values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Write a dataset file and return the FNV-1a checksum of its bytes.
pub fn write_dataset(
    path: impl AsRef<Path>,
    grid: &ActionGrid,
    samples: &[CalibrationSample],
) -> Result<u64> {
    let bytes = encode_dataset(grid, samples)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(fnv1a64(&bytes))
}

/// Decode a whole in-memory container.
pub fn decode_dataset(bytes: &[u8]) -> Result<(ActionGrid, Vec<CalibrationSample>)> {
    let mut reader = DatasetReader::from_reader(std::io::Cursor::new(bytes), bytes.len() as u64)?;
    let grid = reader.header().grid.clone();
    let samples = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok((grid, samples))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<CalibrationSample>> {
    DatasetReader::open(path)?.collect()
}

/// Validating record-by-record reader. Opening a file reads and checks only
/// the header and the file length.
pub struct DatasetReader<R> {
    inner: R,
    header: DatasetHeader,
    next: u64,
    buf: Vec<u8>,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        Self::from_reader(BufReader::new(file), len)
    }
}

impl<R: Read> DatasetReader<R> {
    /// `total_len` is the byte length of the whole container behind `inner`.
    pub fn from_reader(mut inner: R, total_len: u64) -> Result<Self> {
        let header = DatasetHeader::decode(&mut inner, total_len)?;
        let buf = vec![0u8; header.record_len() as usize];
        Ok(DatasetReader {
            inner,
            header,
            next: 0,
            buf,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    fn read_next(&mut self) -> Result<CalibrationSample> {
        let ordinal = self.next;
        self.next += 1;
        self.inner.read_exact(&mut self.buf)?;
        decode_record(&self.header.grid, &self.buf, ordinal)
    }
}

impl<R: Read + Seek> DatasetReader<R> {
    /// Random access to record `ordinal`.
    pub fn record(&mut self, ordinal: u64) -> Result<CalibrationSample> {
        if ordinal >= self.header.n_samples {
            return Err(Error::Bounds(format!(
                "record {ordinal} requested from a dataset of {}",
                self.header.n_samples
            )));
        }
        let offset = self.header.header_len() + ordinal * self.header.record_len();
        self.inner.seek(SeekFrom::Start(offset))?;
        self.next = ordinal;
        self.read_next()
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<CalibrationSample>;

    fn next(&mut self) -> Option<Self::Item> {
        (self.next < self.header.n_samples).then(|| self.read_next())
    }
}

fn decode_record(grid: &ActionGrid, buf: &[u8], ordinal: u64) -> Result<CalibrationSample> {
    let record_err = |message: String| Error::Record { ordinal, message };
    let task_id = u32::from_le_bytes(buf[0..4].try_into().unwrap());
    let expert = u64::from_le_bytes(buf[4..12].try_into().unwrap());
    if expert >= grid.len() as u64 {
        return Err(record_err(format!(
            "expert index {expert} outside grid of {} actions",
            grid.len()
        )));
    }
    let mut logits = Vec::with_capacity(grid.len());
    for (i, chunk) in buf[12..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(record_err(format!("non-finite logit {v} at index {i}")));
        }
        logits.push(v as f64);
    }
    let logits = LogitField::new(grid.clone(), logits).map_err(|e| record_err(e.to_string()))?;
    CalibrationSample::new(logits, ActionIndex(expert as usize), task_id)
}

/// Fitted temperature together with the dataset it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFile {
    pub temperature: f64,
    pub final_nll: f64,
    pub iterations: u32,
    pub degenerate: bool,
    /// Task filter used for the fit: a task id or `all`.
    pub task: String,
    /// FNV-1a of the dataset file bytes, lowercase hex.
    pub dataset_checksum: String,
}

impl TemperatureFile {
    pub fn new(model: &TemperatureModel, task: impl Into<String>, dataset_checksum: u64) -> Self {
        TemperatureFile {
            temperature: model.temperature,
            final_nll: model.final_nll,
            iterations: model.iterations,
            degenerate: model.degenerate,
            task: task.into(),
            dataset_checksum: checksum_hex(dataset_checksum),
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("temperature file serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: TemperatureFile = toml::from_str(text).map_err(|e| Error::Format {
            offset: e.span().map_or(0, |s| s.start as u64),
            message: e.message().to_string(),
        })?;
        if !(file.temperature.is_finite() && file.temperature > 0.0) {
            return Err(Error::Format {
                offset: 0,
                message: format!("temperature {} is not positive", file.temperature),
            });
        }
        Ok(file)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Binary PGM (P5) with 8-bit samples. Axis 0 is rows. Values are scaled so
/// the maximum maps to 255; negatives are clamped to 0.
pub fn write_pgm<W: Write>(mut out: W, grid: &ActionGrid, values: &[f64]) -> Result<()> {
    if grid.ndim() != 2 {
        return Err(Error::Unsupported(format!(
            "heatmaps need a 2-axis grid, got {} axes",
            grid.ndim()
        )));
    }
    if values.len() != grid.len() {
        return Err(Error::Validation(
            "heatmap length does not match grid".into(),
        ));
    }
    let (rows, cols) = (grid.dims()[0], grid.dims()[1]);
    let max = values.iter().copied().fold(0.0, f64::max);
    write!(out, "P5\n{cols} {rows}\n255\n")?;
    let pixels: Vec<u8> = values
        .iter()
        .map(|&v| {
            if max > 0.0 {
                (v.max(0.0) / max * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    out.write_all(&pixels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dims: &[usize]) -> ActionGrid {
        ActionGrid::new(dims).unwrap()
    }

    fn sample(g: &ActionGrid, seed: u32) -> CalibrationSample {
        let values = (0..g.len())
            .map(|i| (i as f64 * 0.37 + seed as f64).sin())
            .collect();
        let logits = LogitField::new(g.clone(), values).unwrap();
        CalibrationSample::new(logits, ActionIndex(seed as usize % g.len()), seed).unwrap()
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn empty_dataset_layout() {
        let bytes = encode_dataset(&grid(&[2]), &[]).unwrap();
        assert_eq!(bytes.len(), 21);
        assert_eq!(&bytes[..4], b"UACL");
        assert_eq!(bytes[4..8], 1u32.to_le_bytes());
        assert_eq!(bytes[8], 1);
        assert_eq!(bytes[9..13], 2u32.to_le_bytes());
        assert_eq!(bytes[13..21], 0u64.to_le_bytes());
        // Frozen regression value.
        assert_eq!(checksum_hex(fnv1a64(&bytes)), "79c74e10a4ccb79e");
        let (g, samples) = decode_dataset(&bytes).unwrap();
        assert_eq!(g, grid(&[2]));
        assert!(samples.is_empty());
    }

    #[test]
    fn record_layout() {
        let g = grid(&[2, 2]);
        let bytes = encode_dataset(&g, &[sample(&g, 3)]).unwrap();
        assert_eq!(bytes.len(), 9 + 8 + 8 + 12 + 16);
        let rec = &bytes[25..];
        assert_eq!(rec[0..4], 3u32.to_le_bytes());
        assert_eq!(rec[4..12], 3u64.to_le_bytes());
        assert_eq!(rec[12..16], (3f64.sin() as f32).to_le_bytes());
    }

    #[test]
    fn round_trip_through_file() {
        let g = grid(&[3, 4]);
        let samples: Vec<_> = (0..5).map(|i| sample(&g, i)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.uacl");
        let sum = write_dataset(&path, &g, &samples).unwrap();
        assert_eq!(sum, fnv1a64(&std::fs::read(&path).unwrap()));
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.expert, b.expert);
            assert_eq!(a.task_id, b.task_id);
            for (x, y) in a.logits.values().iter().zip(b.logits.values()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        let mut reader = DatasetReader::open(&path).unwrap();
        assert_eq!(reader.header().n_samples, 5);
        assert_eq!(reader.record(3).unwrap(), back[3]);
        assert_eq!(reader.record(0).unwrap(), back[0]);
        assert!(matches!(reader.record(5), Err(Error::Bounds(_))));
    }

    #[test]
    fn mixed_grids_rejected() {
        let a = grid(&[4]);
        let b = grid(&[2, 2]);
        let e = encode_dataset(&a, &[sample(&a, 0), sample(&b, 1)]).unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
    }

    #[test]
    fn truncation_reports_lengths() {
        let g = grid(&[3]);
        let bytes = encode_dataset(&g, &[sample(&g, 0), sample(&g, 1)]).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        match decode_dataset(cut) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(actual, cut.len() as u64);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            decode_dataset(&bytes[..5]),
            Err(Error::Truncated { expected: 9, .. })
        ));
        assert!(matches!(
            decode_dataset(&bytes[..12]),
            Err(Error::Truncated { expected: 21, .. })
        ));
    }

    #[test]
    fn header_corruption_reports_offset() {
        let g = grid(&[3]);
        let good = encode_dataset(&g, &[sample(&g, 0)]).unwrap();
        let mut bad = good.clone();
        bad[1] = b'X';
        assert!(matches!(
            decode_dataset(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(
            decode_dataset(&bad),
            Err(Error::Format { offset: 4, .. })
        ));
        let mut bad = good.clone();
        bad[8] = 0;
        assert!(matches!(
            decode_dataset(&bad),
            Err(Error::Format { offset: 8, .. })
        ));
        let mut bad = good;
        bad[9..13].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            decode_dataset(&bad),
            Err(Error::Format { offset: 9, .. })
        ));
    }

    #[test]
    fn record_errors_name_ordinal() {
        let g = grid(&[3]);
        let mut bytes = encode_dataset(&g, &[sample(&g, 0), sample(&g, 1)]).unwrap();
        let rec1 = 21 + 24;
        bytes[rec1 + 4..rec1 + 12].copy_from_slice(&3u64.to_le_bytes());
        assert!(matches!(
            decode_dataset(&bytes),
            Err(Error::Record { ordinal: 1, .. })
        ));

        let mut bytes = encode_dataset(&g, &[sample(&g, 0), sample(&g, 1)]).unwrap();
        bytes[21 + 16..21 + 20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_dataset(&bytes),
            Err(Error::Record { ordinal: 0, .. })
        ));
    }

    #[test]
    fn temperature_file_round_trip() {
        let m = TemperatureModel {
            temperature: 2.0000123,
            final_nll: 1.25,
            iterations: 29,
            degenerate: false,
        };
        let f = TemperatureFile::new(&m, "all", 0xdead_beef);
        assert_eq!(f.dataset_checksum, "00000000deadbeef");
        let text = f.to_text();
        assert!(text.contains("temperature = 2.0000123"));
        assert_eq!(TemperatureFile::parse(&text).unwrap(), f);
        assert!(TemperatureFile::parse("temperature = -1.0").is_err());
        assert!(TemperatureFile::parse("not toml at all [").is_err());
    }

    #[test]
    fn pgm_bytes() {
        let g = grid(&[2, 3]);
        let mut buf = Vec::new();
        write_pgm(&mut buf, &g, &[0.0, 0.5, 1.0, -1.0, 0.25, 0.75]).unwrap();
        let head = b"P5\n3 2\n255\n";
        assert_eq!(&buf[..head.len()], head);
        assert_eq!(&buf[head.len()..], &[0, 128, 255, 0, 64, 191]);
        assert!(write_pgm(Vec::new(), &grid(&[4]), &[0.0; 4]).is_err());
    }
}

//! Grid files, mask and pair manifests, fit reports.
//!
//! Grid file layout (all integers u32 little-endian):
//!
//! ```text
//! "RGRD" | version = 1 | dtype (0 = u8, 1 = f32 LE) | ndim (2 or 3)
//! dims[ndim] | channels | spacing[ndim] as f32 LE | payload
//! ```
//!
//! The payload is row-major over (slice, row, col) with channels fastest.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fit::FitReport;
use crate::grid::{BinaryMask, Dims, DisplacementField, GridImage};

pub const MAGIC: &[u8; 4] = b"RGRD";
pub const VERSION: u32 = 1;
pub const PAIRS_HEADER: &str = "#samreg-pairs v1";
pub const MASKS_HEADER: &str = "#samreg-masks v1";
pub const REPORT_HEADER: &str = "#samreg-fit-report v1";
/// File name of the mask manifest inside a mask directory.
pub const MASK_MANIFEST: &str = "masks.txt";

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl Payload {
    pub fn dtype(&self) -> u32 {
        match self {
            Payload::U8(_) => 0,
            Payload::F32(_) => 1,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::U8(v) => v.len(),
            Payload::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Payload::U8(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridFile {
    pub dims: Dims,
    pub channels: usize,
    pub spacing: Vec<f32>,
    pub payload: Payload,
}

impl GridFile {
    pub fn new(dims: Dims, channels: usize, spacing: Vec<f32>, payload: Payload) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Validation("channels must be >= 1".into()));
        }
        if spacing.len() != dims.ndim() {
            return Err(Error::dim("spacing length must equal axis count"));
        }
        if payload.len() != dims.len() * channels {
            return Err(Error::Size(format!(
                "payload has {} values, expected {}",
                payload.len(),
                dims.len() * channels
            )));
        }
        Ok(GridFile {
            dims,
            channels,
            spacing,
            payload,
        })
    }

    pub fn from_image(image: &GridImage) -> Self {
        GridFile {
            dims: image.dims().clone(),
            channels: 1,
            spacing: image.spacing().iter().map(|&s| s as f32).collect(),
            payload: Payload::F32(image.data().iter().map(|&v| v as f32).collect()),
        }
    }

    pub fn from_mask(mask: &BinaryMask, spacing: &[f64]) -> Result<Self> {
        GridFile::new(
            mask.dims().clone(),
            1,
            spacing.iter().map(|&s| s as f32).collect(),
            Payload::U8(mask.data().iter().map(|&b| b as u8).collect()),
        )
    }

    pub fn from_field(field: &DisplacementField, spacing: &[f64]) -> Result<Self> {
        GridFile::new(
            field.dims().clone(),
            field.ndim(),
            spacing.iter().map(|&s| s as f32).collect(),
            Payload::F32(field.vectors().iter().map(|&v| v as f32).collect()),
        )
    }

    pub fn spacing_f64(&self) -> Vec<f64> {
        self.spacing.iter().map(|&s| s as f64).collect()
    }

    fn single_channel(&self, what: &str) -> Result<()> {
        if self.channels != 1 {
            return Err(Error::Validation(format!(
                "{what} needs 1 channel, file has {}",
                self.channels
            )));
        }
        Ok(())
    }

    pub fn to_image(&self) -> Result<GridImage> {
        self.single_channel("an image")?;
        GridImage::with_spacing(self.dims.clone(), self.spacing_f64(), self.payload.to_f64())
    }

    /// Nonzero voxels are inside the mask.
    pub fn to_mask(&self) -> Result<BinaryMask> {
        self.single_channel("a mask")?;
        BinaryMask::new(self.dims.clone(), self.payload.to_f64().iter().map(|&v| v != 0.0).collect())
    }

    pub fn to_field(&self) -> Result<DisplacementField> {
        if self.channels != self.dims.ndim() {
            return Err(Error::Validation(format!(
                "a displacement field needs {} channels, file has {}",
                self.dims.ndim(),
                self.channels
            )));
        }
        DisplacementField::new(self.dims.clone(), self.payload.to_f64(), "file")
    }

    pub fn encode(&self) -> Vec<u8> {
        let n = self.dims.ndim();
        let elem = if matches!(self.payload, Payload::U8(_)) { 1 } else { 4 };
        let mut out = Vec::with_capacity(20 + 8 * n + self.payload.len() * elem);
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.payload.dtype(), n as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &d in self.dims.as_slice() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        for &s in &self.spacing {
            out.extend_from_slice(&s.to_le_bytes());
        }
        match &self.payload {
            Payload::U8(v) => out.extend_from_slice(v),
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    /// Parse an encoded grid; `path` only labels errors.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, at: 0, path };
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let dtype = r.u32()?;
        if dtype > 1 {
            return Err(Error::format(path, format!("unknown dtype code {dtype}")));
        }
        let ndim = r.u32()? as usize;
        if !(2..=3).contains(&ndim) {
            return Err(Error::format(path, format!("ndim must be 2 or 3, got {ndim}")));
        }
        let extent: Vec<usize> = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let dims = Dims::new(&extent).map_err(|e| Error::format(path, e.to_string()))?;
        let channels = r.u32()? as usize;
        if channels == 0 {
            return Err(Error::format(path, "channels must be >= 1"));
        }
        let spacing: Vec<f32> = (0..ndim).map(|_| r.u32().map(f32::from_bits)).collect::<Result<_>>()?;
        let count = dims
            .len()
            .checked_mul(channels)
            .ok_or_else(|| Error::format(path, "payload size overflows"))?;
        let elem = if dtype == 0 { 1 } else { 4 };
        let expected = count
            .checked_mul(elem)
            .ok_or_else(|| Error::format(path, "payload size overflows"))?;
        let rest = bytes.len() - r.at;
        if rest != expected {
            return Err(Error::format(
                path,
                format!("payload is {rest} bytes, expected {expected}"),
            ));
        }
        let raw = r.take(expected)?;
        let payload = if dtype == 0 {
            Payload::U8(raw.to_vec())
        } else {
            Payload::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            )
        };
        Ok(GridFile {
            dims,
            channels,
            spacing,
            payload,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(self.path, "file is truncated"));
        };
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Write `bytes` to a temporary file beside `path`, then rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<GridFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    GridFile::decode(&bytes, path)
}

pub fn write_grid(path: &Path, grid: &GridFile) -> Result<()> {
    write_atomic(path, &grid.encode())
}

/// Resolve `entry` relative to the directory holding `manifest`.
fn resolve(manifest: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    manifest.parent().unwrap_or(Path::new("")).join(p)
}

/// Conventional file name of candidate `k` of slice `slice`.
pub fn mask_file_name(slice: usize, k: usize) -> String {
    format!("m_{slice}_{k}.rgrd")
}

/// One mask of a mask directory.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskEntry {
    pub path: PathBuf,
    pub slice: usize,
    pub index: usize,
}

/// Mask manifest: header, then `path<TAB>slice<TAB>index` per mask.
pub fn format_mask_manifest(entries: &[MaskEntry]) -> String {
    let mut out = format!("{MASKS_HEADER}\n");
    for e in entries {
        let _ = writeln!(out, "{}\t{}\t{}", e.path.display(), e.slice, e.index);
    }
    out
}

/// Parse a mask manifest; entry paths are resolved against the manifest location.
pub fn read_mask_manifest(path: &Path) -> Result<Vec<MaskEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MASKS_HEADER) {
        return Err(Error::format(path, format!("missing header {MASKS_HEADER:?}")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            let [file, slice, index] = f[..] else {
                return Err(Error::format(path, format!("expected 3 fields: {line:?}")));
            };
            Ok(MaskEntry {
                path: resolve(path, file),
                slice: parse_field(path, slice, "slice")?,
                index: parse_field(path, index, "index")?,
            })
        })
        .collect()
}

fn parse_field<T: std::str::FromStr>(path: &Path, s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(path, format!("bad {what} {s:?}")))
}

/// One line of a pair manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct PairRecord {
    pub moving: PathBuf,
    pub fixed: PathBuf,
    pub moving_slice: usize,
    pub fixed_slice: usize,
    pub similarity: f64,
}

/// Pair manifest text: header, then one tab-separated record per pair with
/// the similarity at 6 decimal places.
pub fn format_pair_manifest(records: &[PairRecord]) -> String {
    let mut out = format!("{PAIRS_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.6}",
            r.moving.display(),
            r.fixed.display(),
            r.moving_slice,
            r.fixed_slice,
            r.similarity
        );
    }
    out
}

pub fn parse_pair_manifest(text: &str, path: &Path) -> Result<Vec<PairRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(PAIRS_HEADER) {
        return Err(Error::format(path, format!("missing header {PAIRS_HEADER:?}")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            let [m, fx, ms, fs, sim] = f[..] else {
                return Err(Error::format(path, format!("expected 5 fields: {line:?}")));
            };
            let similarity: f64 = parse_field(path, sim, "similarity")?;
            if !(similarity > 0.0 && similarity <= 1.0) {
                return Err(Error::format(path, format!("similarity {similarity} outside (0, 1]")));
            }
            Ok(PairRecord {
                moving: resolve(path, m),
                fixed: resolve(path, fx),
                moving_slice: parse_field(path, ms, "moving slice")?,
                fixed_slice: parse_field(path, fs, "fixed slice")?,
                similarity,
            })
        })
        .collect()
}

pub fn read_pair_manifest(path: &Path) -> Result<Vec<PairRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pair_manifest(&text, path)
}

/// Key-value fit report followed by a per-pair Dice and TRE table.
pub fn format_report(report: &FitReport) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    let _ = writeln!(out, "initial_loss\t{:.9}", report.initial_loss);
    let _ = writeln!(out, "final_loss\t{:.9}", report.final_loss);
    let _ = writeln!(out, "roi_loss\t{:.9}", report.roi_loss);
    let _ = writeln!(out, "smoothness_loss\t{:.9}", report.smoothness_loss);
    let _ = writeln!(out, "lambda\t{}", report.lambda);
    let _ = writeln!(out, "iterations\t{}", report.iterations);
    let _ = writeln!(out, "converged\t{}", report.converged);
    let _ = writeln!(out, "pairs\t{}", report.metrics.len());
    out.push_str("pair\tdice_before\ttre_before\tdice\ttre\n");
    for (k, (before, after)) in report.initial_metrics.iter().zip(&report.metrics).enumerate() {
        let _ = writeln!(
            out,
            "{k}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            before.dice, before.tre, after.dice, after.tre
        );
    }
    out
}

/// Scalar entries of a fit report, by key.
pub fn parse_report_value(text: &str, key: &str) -> Option<f64> {
    text.lines()
        .filter_map(|l| l.split_once('\t'))
        .find(|(k, _)| *k == key)
        .and_then(|(_, v)| v.parse().ok())
}

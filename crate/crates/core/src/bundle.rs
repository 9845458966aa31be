//! Binary bundle of per-image features and attention maps.
//!
//! Wire format, little-endian throughout:
//!
//! ```text
//! magic        4 bytes  "FSEL"
//! version      u32      1
//! record_count u64
//! per record:
//!   id_len u32, id bytes (UTF-8)
//!   grid_h u16, grid_w u16, feat_dim u16, reserved u16 = 0
//!   cls_feature     f32[d]
//!   cls_attention   f32[HW]
//!   patch_attention f32[HW * HW]   row-major
//!   patch_features  f32[HW * d]    row-major
//! ```
//!
//! The reader is streaming: it holds one record (plus one scratch buffer no
//! larger than that record) at a time.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub const BUNDLE_MAGIC: [u8; 4] = *b"FSEL";
pub const BUNDLE_VERSION: u32 = 1;

/// Default cap on `HW * d` (and `HW * HW`) entries per record.
pub const DEFAULT_SIZE_CAP: u64 = 1 << 26;

/// Default tolerance on attention sums.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// One image's dense patch features and last-layer attention maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub grid_h: u16,
    pub grid_w: u16,
    pub feat_dim: u16,
    /// Last-layer [CLS] token output, length `feat_dim`.
    pub cls_feature: Vec<f32>,
    /// [CLS]-to-patch attention, length `HW`, sums to 1.
    pub cls_attention: Vec<f32>,
    /// Patch-to-patch attention, `HW x HW` row-major, rows sum to 1.
    pub patch_attention: Vec<f32>,
    /// Patch token features, `HW x feat_dim` row-major.
    pub patch_features: Vec<f32>,
}

impl ImageRecord {
    pub fn num_regions(&self) -> usize {
        self.grid_h as usize * self.grid_w as usize
    }

    pub fn dim(&self) -> usize {
        self.feat_dim as usize
    }

    pub fn feature_row(&self, region: usize) -> &[f32] {
        let d = self.dim();
        &self.patch_features[region * d..(region + 1) * d]
    }

    pub fn attention_row(&self, region: usize) -> &[f32] {
        let hw = self.num_regions();
        &self.patch_attention[region * hw..(region + 1) * hw]
    }

    /// Bytes this record occupies on the wire.
    pub fn encoded_len(&self) -> usize {
        4 + self.image_id.len()
            + 8
            + 4 * (self.cls_feature.len()
                + self.cls_attention.len()
                + self.patch_attention.len()
                + self.patch_features.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    ImageId,
    Grid,
    Cls,
    ClsAttention,
    PatchAttention,
    PatchFeatures,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Field::ImageId => "image_id",
            Field::Grid => "grid",
            Field::Cls => "cls_feature",
            Field::ClsAttention => "cls_attention",
            Field::PatchAttention => "patch_attention",
            Field::PatchFeatures => "patch_features",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    Empty,
    LengthMismatch { expected: usize },
    NonFinite,
    Negative,
    /// The index is the row for `patch_attention`, 0 for `cls_attention`.
    SumOutOfTolerance,
}

/// A single invariant breach: which field, where, and what was observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: Field,
    pub index: usize,
    pub observed: f64,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::Empty => write!(f, "{}: empty", self.field),
            ViolationKind::LengthMismatch { expected } => write!(
                f,
                "{}: length {} but expected {}",
                self.field, self.observed, expected
            ),
            ViolationKind::NonFinite => {
                write!(f, "{}[{}]: non-finite value {}", self.field, self.index, self.observed)
            }
            ViolationKind::Negative => {
                write!(f, "{}[{}]: negative value {}", self.field, self.index, self.observed)
            }
            ViolationKind::SumOutOfTolerance => write!(
                f,
                "{} row {}: sums to {} (expected 1)",
                self.field, self.index, self.observed
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn summary(&self) -> String {
        let mut s = String::new();
        for (i, v) in self.violations.iter().take(3).enumerate() {
            if i > 0 {
                s.push_str("; ");
            }
            s.push_str(&v.to_string());
        }
        if self.violations.len() > 3 {
            s.push_str(&format!("; and {} more", self.violations.len() - 3));
        }
        s
    }
}

fn check_len(report: &mut ValidationReport, field: Field, len: usize, expected: usize) -> bool {
    if len != expected {
        report.violations.push(Violation {
            field,
            index: 0,
            observed: len as f64,
            kind: ViolationKind::LengthMismatch { expected },
        });
        false
    } else {
        true
    }
}

fn check_values(report: &mut ValidationReport, field: Field, values: &[f32], nonneg: bool) {
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            report.violations.push(Violation {
                field,
                index: i,
                observed: v as f64,
                kind: ViolationKind::NonFinite,
            });
        } else if nonneg && v < 0.0 {
            report.violations.push(Violation {
                field,
                index: i,
                observed: v as f64,
                kind: ViolationKind::Negative,
            });
        }
    }
}

fn check_sum(report: &mut ValidationReport, field: Field, row: usize, values: &[f32], tol: f64) {
    let sum: f64 = values.iter().map(|&v| v as f64).sum();
    // a NaN sum is already reported entry-wise
    if sum.is_finite() && (sum - 1.0).abs() > tol {
        report.violations.push(Violation {
            field,
            index: row,
            observed: sum,
            kind: ViolationKind::SumOutOfTolerance,
        });
    }
}

/// Reports every invariant violation of `record`. Never fails.
pub fn validate_record(record: &ImageRecord, tolerance: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    if record.image_id.is_empty() {
        report.violations.push(Violation {
            field: Field::ImageId,
            index: 0,
            observed: 0.0,
            kind: ViolationKind::Empty,
        });
    }
    if record.grid_h == 0 || record.grid_w == 0 || record.feat_dim == 0 {
        report.violations.push(Violation {
            field: Field::Grid,
            index: 0,
            observed: 0.0,
            kind: ViolationKind::Empty,
        });
        return report;
    }
    let hw = record.num_regions();
    let d = record.dim();

    if check_len(&mut report, Field::Cls, record.cls_feature.len(), d) {
        check_values(&mut report, Field::Cls, &record.cls_feature, false);
    }
    if check_len(&mut report, Field::ClsAttention, record.cls_attention.len(), hw) {
        check_values(&mut report, Field::ClsAttention, &record.cls_attention, true);
        check_sum(&mut report, Field::ClsAttention, 0, &record.cls_attention, tolerance);
    }
    if check_len(&mut report, Field::PatchAttention, record.patch_attention.len(), hw * hw) {
        check_values(&mut report, Field::PatchAttention, &record.patch_attention, true);
        for (row, values) in record.patch_attention.chunks_exact(hw).enumerate() {
            check_sum(&mut report, Field::PatchAttention, row, values, tolerance);
        }
    }
    if check_len(&mut report, Field::PatchFeatures, record.patch_features.len(), hw * d) {
        check_values(&mut report, Field::PatchFeatures, &record.patch_features, false);
    }
    report
}

/// Streaming bundle writer. The record count is fixed up front because it
/// lives in the header.
pub struct BundleWriter<W: Write> {
    sink: W,
    declared: u64,
    written: u64,
    seen: HashSet<String>,
    tolerance: f64,
    scratch: Vec<u8>,
}

impl<W: Write> BundleWriter<W> {
    pub fn new(mut sink: W, record_count: u64) -> Result<Self> {
        sink.write_all(&BUNDLE_MAGIC)?;
        sink.write_all(&BUNDLE_VERSION.to_le_bytes())?;
        sink.write_all(&record_count.to_le_bytes())?;
        Ok(BundleWriter {
            sink,
            declared: record_count,
            written: 0,
            seen: HashSet::new(),
            tolerance: DEFAULT_TOLERANCE,
            scratch: Vec::new(),
        })
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn write_record(&mut self, record: &ImageRecord) -> Result<()> {
        if self.written >= self.declared {
            return Err(Error::CountMismatch {
                declared: self.declared,
                written: self.written + 1,
            });
        }
        let report = validate_record(record, self.tolerance);
        if !report.is_valid() {
            return Err(Error::InvalidRecord {
                image_id: record.image_id.clone(),
                summary: report.summary(),
            });
        }
        if !self.seen.insert(record.image_id.clone()) {
            return Err(Error::DuplicateId(record.image_id.clone()));
        }
        let id = record.image_id.as_bytes();
        let id_len = u32::try_from(id.len())
            .map_err(|_| Error::Malformed("image id longer than u32::MAX bytes".into()))?;
        self.sink.write_all(&id_len.to_le_bytes())?;
        self.sink.write_all(id)?;
        self.sink.write_all(&record.grid_h.to_le_bytes())?;
        self.sink.write_all(&record.grid_w.to_le_bytes())?;
        self.sink.write_all(&record.feat_dim.to_le_bytes())?;
        self.sink.write_all(&0u16.to_le_bytes())?;
        for values in [
            &record.cls_feature,
            &record.cls_attention,
            &record.patch_attention,
            &record.patch_features,
        ] {
            write_f32s(&mut self.sink, values, &mut self.scratch)?;
        }
        self.written += 1;
        Ok(())
    }

    /// Flushes and returns the sink; fails if fewer records were written than declared.
    pub fn finish(mut self) -> Result<W> {
        if self.written != self.declared {
            return Err(Error::CountMismatch {
                declared: self.declared,
                written: self.written,
            });
        }
        self.sink.flush()?;
        Ok(self.sink)
    }
}

pub(crate) fn write_f32s<W: Write>(sink: &mut W, values: &[f32], scratch: &mut Vec<u8>) -> io::Result<()> {
    scratch.clear();
    scratch.reserve(values.len() * 4);
    for v in values {
        scratch.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(scratch)
}

/// Writes a whole bundle in one call.
pub fn write_bundle<W: Write>(records: &[ImageRecord], sink: W) -> Result<W> {
    let mut writer = BundleWriter::new(sink, records.len() as u64)?;
    for record in records {
        writer.write_record(record)?;
    }
    writer.finish()
}

/// Reads exactly `buf.len()` bytes. A clean EOF before the first byte returns
/// `Ok(false)`, a partial read is `Truncated`.
pub(crate) fn read_exact_or_eof<R: Read>(source: &mut R, buf: &mut [u8], context: &str) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => {
                if filled == 0 {
                    return Ok(false);
                }
                return Err(Error::Truncated {
                    context: context.to_string(),
                });
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

pub(crate) fn read_exact<R: Read>(source: &mut R, buf: &mut [u8], context: &str) -> Result<()> {
    if buf.is_empty() || read_exact_or_eof(source, buf, context)? {
        Ok(())
    } else {
        Err(Error::Truncated {
            context: context.to_string(),
        })
    }
}

pub(crate) fn read_u16<R: Read>(source: &mut R, context: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(source, &mut b, context)?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32<R: Read>(source: &mut R, context: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(source, &mut b, context)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32s<R: Read>(
    source: &mut R,
    n: usize,
    scratch: &mut Vec<u8>,
    context: &str,
) -> Result<Vec<f32>> {
    scratch.clear();
    scratch.resize(n * 4, 0);
    read_exact(source, scratch, context)?;
    Ok(scratch
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn read_id<R: Read>(source: &mut R, len: usize, context: &str) -> Result<String> {
    let mut bytes = vec![0u8; len];
    read_exact(source, &mut bytes, context)?;
    String::from_utf8(bytes).map_err(|_| Error::Malformed(format!("{context}: image id is not UTF-8")))
}

pub(crate) fn check_magic<R: Read>(source: &mut R, expected: [u8; 4], version: u32) -> Result<()> {
    let mut magic = [0u8; 4];
    read_exact(source, &mut magic, "header magic")?;
    if magic != expected {
        return Err(Error::BadMagic { expected, found: magic });
    }
    let found = read_u32(source, "header version")?;
    if found != version {
        return Err(Error::UnsupportedVersion(found));
    }
    Ok(())
}

/// Streaming bundle reader; an iterator over `Result<ImageRecord>`.
///
/// After the first error the iterator is fused and yields `None`.
pub struct BundleReader<R: Read> {
    source: R,
    record_count: u64,
    read: u64,
    size_cap: u64,
    tolerance: Option<f64>,
    scratch: Vec<u8>,
    failed: bool,
}

impl<R: Read> BundleReader<R> {
    pub fn new(mut source: R) -> Result<Self> {
        check_magic(&mut source, BUNDLE_MAGIC, BUNDLE_VERSION)?;
        let mut count = [0u8; 8];
        read_exact(&mut source, &mut count, "header record count")?;
        Ok(BundleReader {
            source,
            record_count: u64::from_le_bytes(count),
            read: 0,
            size_cap: DEFAULT_SIZE_CAP,
            tolerance: None,
            scratch: Vec::new(),
            failed: false,
        })
    }

    pub fn with_size_cap(mut self, cap: u64) -> Self {
        self.size_cap = cap;
        self
    }

    /// Makes every yielded record pass [`validate_record`] at `tolerance`;
    /// an invalid record becomes an `InvalidRecord` error.
    pub fn validated(mut self, tolerance: f64) -> Self {
        self.tolerance = Some(tolerance);
        self
    }

    pub fn record_count(&self) -> u64 {
        self.record_count
    }

    fn read_record(&mut self) -> Result<ImageRecord> {
        let ctx = format!("record {}", self.read);
        let id_len = read_u32(&mut self.source, &ctx)? as usize;
        if id_len as u64 > self.size_cap {
            return Err(Error::DimensionOverflow {
                entries: id_len as u64,
                cap: self.size_cap,
            });
        }
        let image_id = read_id(&mut self.source, id_len, &ctx)?;
        let grid_h = read_u16(&mut self.source, &ctx)?;
        let grid_w = read_u16(&mut self.source, &ctx)?;
        let feat_dim = read_u16(&mut self.source, &ctx)?;
        let reserved = read_u16(&mut self.source, &ctx)?;
        if reserved != 0 {
            return Err(Error::Malformed(format!("{ctx}: reserved field is {reserved}")));
        }
        if grid_h == 0 || grid_w == 0 || feat_dim == 0 {
            return Err(Error::Malformed(format!(
                "{ctx}: zero dimension ({grid_h}x{grid_w}, d={feat_dim})"
            )));
        }
        let hw = grid_h as u64 * grid_w as u64;
        let d = feat_dim as u64;
        for entries in [hw * d, hw * hw] {
            if entries > self.size_cap {
                return Err(Error::DimensionOverflow {
                    entries,
                    cap: self.size_cap,
                });
            }
        }
        let (hw, d) = (hw as usize, d as usize);
        let cls_feature = read_f32s(&mut self.source, d, &mut self.scratch, &ctx)?;
        let cls_attention = read_f32s(&mut self.source, hw, &mut self.scratch, &ctx)?;
        let patch_attention = read_f32s(&mut self.source, hw * hw, &mut self.scratch, &ctx)?;
        let patch_features = read_f32s(&mut self.source, hw * d, &mut self.scratch, &ctx)?;
        let record = ImageRecord {
            image_id,
            grid_h,
            grid_w,
            feat_dim,
            cls_feature,
            cls_attention,
            patch_attention,
            patch_features,
        };
        if let Some(tol) = self.tolerance {
            let report = validate_record(&record, tol);
            if !report.is_valid() {
                return Err(Error::InvalidRecord {
                    image_id: record.image_id,
                    summary: report.summary(),
                });
            }
        }
        Ok(record)
    }
}

impl<R: Read> Iterator for BundleReader<R> {
    type Item = Result<ImageRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.read >= self.record_count {
            return None;
        }
        let result = self.read_record();
        match result {
            Ok(_) => self.read += 1,
            Err(_) => self.failed = true,
        }
        Some(result)
    }
}

/// Opens a streaming reader over `source` that rejects records failing
/// [`validate_record`] at [`DEFAULT_TOLERANCE`]. Use [`BundleReader::new`]
/// to see invalid records as data.
pub fn read_bundle_stream<R: Read>(source: R) -> Result<BundleReader<R>> {
    Ok(BundleReader::new(source)?.validated(DEFAULT_TOLERANCE))
}

//! On-disk formats.
//!
//! * RDM: `"RDM1"`, `u32 rows`, `u32 cols` (little endian), then
//!   `rows·cols` interleaved `(re, im)` `f64` values, row-major over range.
//! * Weights: `"INDTW1"`, `u32 count`, then per array `u32` name length,
//!   UTF-8 name, `u32` rank, `u32` dims, little-endian `f64` values.
//! * CSV text for truth, detections, tracks and metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::detection::Detection;
use crate::error::{Error, FormatError, Result};
use crate::rd_pipeline::{GroundTruthFrame, RDMatrix};

pub const RDM_MAGIC: &[u8; 4] = b"RDM1";
pub const WEIGHT_MAGIC: &[u8; 6] = b"INDTW1";

pub const TRUTH_HEADER: &str = "frame_index,range_bin,doppler_bin";
pub const DETECTION_HEADER: &str = "frame,range_bin,doppler_bin,confidence,energy";
pub const TRACK_HEADER: &str = "frame,track_id,status,range,velocity,p00,p01,p11";
pub const METRIC_HEADER: &str = "frame,pd,pfa,ospa";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(
            FormatError::Truncated {
                expected: self.pos as u64 + n as u64,
                found: self.buf.len() as u64,
            },
        )?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn encode_rdm(rd: &RDMatrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(rd.rows)
        .map_err(|_| FormatError::DimensionOverflow(format!("{} rows", rd.rows)))?;
    let cols = u32::try_from(rd.cols)
        .map_err(|_| FormatError::DimensionOverflow(format!("{} cols", rd.cols)))?;
    let mut out = Vec::with_capacity(12 + rd.data.len() * 16);
    out.extend_from_slice(RDM_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for z in &rd.data {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_rdm(bytes: &[u8]) -> Result<RDMatrix, FormatError> {
    let mut r = Reader::new(bytes);
    if bytes.len() < 4 || &bytes[..4] != RDM_MAGIC {
        return Err(FormatError::BadMagic);
    }
    r.take(4)?;
    let rows = r.u32()? as u64;
    let cols = r.u32()? as u64;
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(16))
        .filter(|&n| usize::try_from(n).is_ok())
        .ok_or_else(|| FormatError::DimensionOverflow(format!("{rows}×{cols}")))?;
    if (r.remaining() as u64) < payload {
        return Err(FormatError::Truncated {
            expected: 12 + payload,
            found: bytes.len() as u64,
        });
    }
    let n = (rows * cols) as usize;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let re = r.f64()?;
        let im = r.f64()?;
        data.push(Complex64::new(re, im));
    }
    Ok(RDMatrix {
        rows: rows as usize,
        cols: cols as usize,
        data,
    })
}

pub fn write_rdm(rd: &RDMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_rdm(rd)?)?;
    Ok(())
}

pub fn read_rdm(path: impl AsRef<Path>) -> Result<RDMatrix> {
    Ok(decode_rdm(&fs::read(path)?)?)
}

/// A named, shaped parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Self {
        let a = Self {
            name: name.into(),
            dims,
            data,
        };
        debug_assert_eq!(a.dims.iter().product::<usize>(), a.data.len());
        a
    }
}

fn dim_u32(v: usize, what: &str) -> Result<u32, FormatError> {
    u32::try_from(v).map_err(|_| FormatError::DimensionOverflow(format!("{what} {v}")))
}

pub fn encode_weights(arrays: &[NamedArray]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&dim_u32(arrays.len(), "array count")?.to_le_bytes());
    for a in arrays {
        if a.dims.iter().product::<usize>() != a.data.len() {
            return Err(Error::Shape(format!("array {} dims disagree with data", a.name)));
        }
        let name = a.name.as_bytes();
        out.extend_from_slice(&dim_u32(name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&dim_u32(a.dims.len(), "rank")?.to_le_bytes());
        for &d in &a.dims {
            out.extend_from_slice(&dim_u32(d, "dimension")?.to_le_bytes());
        }
        for v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<NamedArray>, FormatError> {
    if bytes.len() < WEIGHT_MAGIC.len() || &bytes[..WEIGHT_MAGIC.len()] != WEIGHT_MAGIC {
        return Err(FormatError::BadMagic);
    }
    let mut r = Reader::new(bytes);
    r.take(WEIGHT_MAGIC.len())?;
    let count = r.u32()?;
    let mut arrays = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| FormatError::Utf8)?
            .to_owned();
        let rank = r.u32()? as usize;
        if rank * 4 > r.remaining() {
            return Err(FormatError::Truncated {
                expected: (r.pos + rank * 4) as u64,
                found: bytes.len() as u64,
            });
        }
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|n| n.checked_mul(8).is_some())
            .ok_or_else(|| FormatError::DimensionOverflow(format!("{name}: {dims:?}")))?;
        if n * 8 > r.remaining() {
            return Err(FormatError::Truncated {
                expected: (r.pos + n * 8) as u64,
                found: bytes.len() as u64,
            });
        }
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        arrays.push(NamedArray { name, dims, data });
    }
    Ok(arrays)
}

pub fn write_weights(arrays: &[NamedArray], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_weights(arrays)?)?;
    Ok(())
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<Vec<NamedArray>> {
    Ok(decode_weights(&fs::read(path)?)?)
}

fn record_err(line: usize, msg: impl Into<String>) -> Error {
    FormatError::Record {
        line,
        msg: msg.into(),
    }
    .into()
}

/// Parse comma-separated rows, skipping blanks and one optional header.
fn csv_rows<'a>(
    text: &'a str,
    header: &'a str,
    width: usize,
) -> impl Iterator<Item = Result<(usize, Vec<&'a str>)>> + 'a {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(move |(_, l)| !l.is_empty() && *l != header)
        .map(move |(line, l)| {
            let fields: Vec<&str> = l.split(',').map(str::trim).collect();
            if fields.len() != width {
                return Err(record_err(line, format!("expected {width} fields, got {}", fields.len())));
            }
            Ok((line, fields))
        })
}

fn num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| record_err(line, format!("cannot parse '{s}'")))
}

pub fn format_truth(frames: &[GroundTruthFrame]) -> String {
    let mut s = String::from(TRUTH_HEADER);
    s.push('\n');
    for f in frames {
        for (r, d) in &f.entries {
            let _ = writeln!(s, "{},{},{}", f.frame, r, d);
        }
    }
    s
}

/// Truth frames keyed by index; frames without entries are absent.
pub fn parse_truth(text: &str) -> Result<Vec<GroundTruthFrame>> {
    let mut frames: Vec<GroundTruthFrame> = Vec::new();
    for row in csv_rows(text, TRUTH_HEADER, 3) {
        let (line, f) = row?;
        let frame: usize = num(f[0], line)?;
        let entry = (num(f[1], line)?, num(f[2], line)?);
        match frames.iter_mut().find(|g| g.frame == frame) {
            Some(g) => g.entries.push(entry),
            None => frames.push(GroundTruthFrame {
                frame,
                entries: vec![entry],
            }),
        }
    }
    frames.sort_by_key(|f| f.frame);
    Ok(frames)
}

pub fn format_detections(rows: &[(usize, Detection)]) -> String {
    let mut s = String::from(DETECTION_HEADER);
    s.push('\n');
    for (frame, d) in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            frame, d.range_bin, d.doppler_bin, d.confidence, d.energy
        );
    }
    s
}

pub fn parse_detections(text: &str) -> Result<Vec<(usize, Detection)>> {
    csv_rows(text, DETECTION_HEADER, 5)
        .map(|row| {
            let (line, f) = row?;
            Ok((
                num(f[0], line)?,
                Detection::new(num(f[1], line)?, num(f[2], line)?, num(f[3], line)?, num(f[4], line)?),
            ))
        })
        .collect()
}

/// One row of the track output.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRow {
    pub frame: usize,
    pub track_id: u64,
    pub status: String,
    pub range: f64,
    pub velocity: f64,
    pub p00: f64,
    pub p01: f64,
    pub p11: f64,
}

pub fn format_tracks(rows: &[TrackRow]) -> String {
    let mut s = String::from(TRACK_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.frame, r.track_id, r.status, r.range, r.velocity, r.p00, r.p01, r.p11
        );
    }
    s
}

pub fn parse_tracks(text: &str) -> Result<Vec<TrackRow>> {
    csv_rows(text, TRACK_HEADER, 8)
        .map(|row| {
            let (line, f) = row?;
            Ok(TrackRow {
                frame: num(f[0], line)?,
                track_id: num(f[1], line)?,
                status: f[2].to_owned(),
                range: num(f[3], line)?,
                velocity: num(f[4], line)?,
                p00: num(f[5], line)?,
                p01: num(f[6], line)?,
                p11: num(f[7], line)?,
            })
        })
        .collect()
}

/// One row of the metric output; metrics that do not apply are `None`
/// and written as empty fields.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub frame: usize,
    pub pd: Option<f64>,
    pub pfa: Option<f64>,
    pub ospa: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_metrics(rows: &[MetricRow]) -> String {
    let mut s = String::from(METRIC_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.frame, opt(r.pd), opt(r.pfa), opt(r.ospa));
    }
    s
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricRow>> {
    let field = |s: &str, line: usize| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s, line).map(Some)
        }
    };
    csv_rows(text, METRIC_HEADER, 4)
        .map(|row| {
            let (line, f) = row?;
            Ok(MetricRow {
                frame: num(f[0], line)?,
                pd: field(f[1], line)?,
                pfa: field(f[2], line)?,
                ospa: field(f[3], line)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RDMatrix {
        RDMatrix::from_fn(3, 5, |r, c| Complex64::new(r as f64 * 0.5 - 1.0, c as f64 / 3.0))
    }

    #[test]
    fn rdm_layout_is_little_endian_row_major() {
        let bytes = encode_rdm(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"RDM1");
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &5u32.to_le_bytes());
        assert_eq!(bytes.len(), 12 + 15 * 16);
        let re = f64::from_le_bytes(bytes[12 + 16..12 + 24].try_into().unwrap());
        let im = f64::from_le_bytes(bytes[12 + 24..12 + 32].try_into().unwrap());
        assert_eq!((re, im), (-1.0, 1.0 / 3.0));
    }

    #[test]
    fn rdm_errors_are_distinct() {
        let mut bytes = encode_rdm(&sample()).unwrap();
        assert_eq!(decode_rdm(&bytes[..bytes.len() - 1]).unwrap_err(), FormatError::Truncated {
            expected: 12 + 240,
            found: 251
        });
        bytes[0] = b'X';
        assert_eq!(decode_rdm(&bytes).unwrap_err(), FormatError::BadMagic);
        let mut huge = b"RDM1".to_vec();
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        // 2^64 · 16 bytes does not fit in u64.
        assert!(matches!(decode_rdm(&huge), Err(FormatError::DimensionOverflow(_))));
        let mut big = b"RDM1".to_vec();
        big.extend_from_slice(&1000u32.to_le_bytes());
        big.extend_from_slice(&1000u32.to_le_bytes());
        assert!(matches!(decode_rdm(&big), Err(FormatError::Truncated { .. })));
        assert_eq!(decode_rdm(b"RD").unwrap_err(), FormatError::BadMagic);
    }

    #[test]
    fn weight_errors() {
        let arrays = vec![NamedArray::new("a.b", vec![2, 2], vec![1.0, -2.0, 3.5, 0.0])];
        let bytes = encode_weights(&arrays).unwrap();
        assert_eq!(decode_weights(&bytes).unwrap(), arrays);
        assert!(matches!(decode_weights(&bytes[..bytes.len() - 3]), Err(FormatError::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode_weights(&bad).unwrap_err(), FormatError::BadMagic);
    }

    #[test]
    fn csv_formats_parse_back() {
        let truth = vec![
            GroundTruthFrame { frame: 0, entries: vec![(1.5, 2.25)] },
            GroundTruthFrame { frame: 2, entries: vec![(3.0, 4.0), (5.0, 6.0)] },
        ];
        assert_eq!(parse_truth(&format_truth(&truth)).unwrap(), truth);

        let dets = vec![(1, Detection::new(1.0, 2.0, 0.5, 9.75))];
        let text = format_detections(&dets);
        assert!(text.starts_with(DETECTION_HEADER));
        assert_eq!(parse_detections(&text).unwrap(), dets);

        let metrics = vec![MetricRow { frame: 0, pd: Some(1.0), pfa: None, ospa: Some(0.25) }];
        assert_eq!(parse_metrics(&format_metrics(&metrics)).unwrap(), metrics);

        let err = parse_detections("frame,range_bin,doppler_bin,confidence,energy\n1,2,x,4,5\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}

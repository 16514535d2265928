//! PCD v0.7 reader and writer.
//!
//! Only the `x`, `y`, `z` and `intensity` fields are read; any other fields
//! are skipped. Scalars may be stored as `F` (4 or 8 bytes), `I` or `U`
//! (1, 2, 4 or 8 bytes). `DATA ascii` and `DATA binary` (little-endian) are
//! supported; `binary_compressed` is rejected as a malformed header.
//!
//! The writer always emits four single-precision float fields. Binary output
//! therefore round-trips bit-exactly for clouds whose values are representable
//! in `f32`; ASCII output uses the shortest decimal that round-trips the `f64`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::cloud::{CloudError, IntensityCloud, Point3I};

#[derive(Debug, Error)]
pub enum PcdError {
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed PCD header at line {line}: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("PCD file has no `{field}` field")]
    MissingField { field: &'static str },
    #[error("PCD data truncated at point {point}: {reason}")]
    TruncatedData { point: usize, reason: String },
    #[error("PCD point {index} is not finite or has negative intensity")]
    InvalidPoint { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcdEncoding {
    Ascii,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarKind {
    Float,
    Signed,
    Unsigned,
}

#[derive(Debug, Clone)]
struct FieldLayout {
    name: String,
    size: usize,
    kind: ScalarKind,
    count: usize,
}

#[derive(Debug)]
struct Header {
    fields: Vec<FieldLayout>,
    points: usize,
    binary: bool,
    data_offset: usize,
}

impl Header {
    fn field_position(&self, name: &'static str) -> Result<usize, PcdError> {
        self.fields
            .iter()
            .position(|f| f.name == name)
            .ok_or(PcdError::MissingField { field: name })
    }
}

fn malformed(line: usize, reason: impl Into<String>) -> PcdError {
    PcdError::MalformedHeader {
        line,
        reason: reason.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header, PcdError> {
    let mut offset = 0usize;
    let mut line_no = 0usize;

    let mut names: Option<Vec<String>> = None;
    let mut sizes: Option<Vec<usize>> = None;
    let mut kinds: Option<Vec<ScalarKind>> = None;
    let mut counts: Option<Vec<usize>> = None;
    let mut width: Option<usize> = None;
    let mut height: Option<usize> = None;
    let mut points: Option<usize> = None;

    loop {
        if offset >= bytes.len() {
            return Err(malformed(line_no + 1, "missing DATA line"));
        }
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| offset + p + 1)
            .unwrap_or(bytes.len());
        line_no += 1;
        let raw = std::str::from_utf8(&bytes[offset..end])
            .map_err(|_| malformed(line_no, "header line is not valid UTF-8"))?;
        offset = end;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let key = tokens.next().unwrap_or_default().to_ascii_uppercase();
        let values: Vec<&str> = tokens.collect();
        let parse_usizes = |vals: &[&str]| -> Result<Vec<usize>, PcdError> {
            vals.iter()
                .map(|v| {
                    v.parse::<usize>()
                        .map_err(|_| malformed(line_no, format!("expected integer, got `{v}`")))
                })
                .collect()
        };
        match key.as_str() {
            "VERSION" | "VIEWPOINT" => {}
            "FIELDS" => names = Some(values.iter().map(|s| s.to_string()).collect()),
            "SIZE" => sizes = Some(parse_usizes(&values)?),
            "COUNT" => counts = Some(parse_usizes(&values)?),
            "TYPE" => {
                kinds = Some(
                    values
                        .iter()
                        .map(|v| match *v {
                            "F" => Ok(ScalarKind::Float),
                            "I" => Ok(ScalarKind::Signed),
                            "U" => Ok(ScalarKind::Unsigned),
                            other => Err(malformed(line_no, format!("unknown TYPE `{other}`"))),
                        })
                        .collect::<Result<_, _>>()?,
                )
            }
            "WIDTH" => width = parse_usizes(&values)?.first().copied(),
            "HEIGHT" => height = parse_usizes(&values)?.first().copied(),
            "POINTS" => points = parse_usizes(&values)?.first().copied(),
            "DATA" => {
                let binary = match values.first().copied() {
                    Some("ascii") => false,
                    Some("binary") => true,
                    Some(other) => return Err(malformed(line_no, format!("unsupported DATA `{other}`"))),
                    None => return Err(malformed(line_no, "DATA without encoding")),
                };
                let names = names.ok_or_else(|| malformed(line_no, "missing FIELDS"))?;
                let n = names.len();
                let sizes = sizes.unwrap_or_else(|| vec![4; n]);
                let kinds = kinds.unwrap_or_else(|| vec![ScalarKind::Float; n]);
                let counts = counts.unwrap_or_else(|| vec![1; n]);
                if sizes.len() != n || kinds.len() != n || counts.len() != n {
                    return Err(malformed(
                        line_no,
                        "FIELDS, SIZE, TYPE and COUNT have different lengths",
                    ));
                }
                let mut fields = Vec::with_capacity(n);
                for i in 0..n {
                    let valid_size = match kinds[i] {
                        ScalarKind::Float => matches!(sizes[i], 4 | 8),
                        _ => matches!(sizes[i], 1 | 2 | 4 | 8),
                    };
                    if !valid_size {
                        return Err(malformed(
                            line_no,
                            format!("field `{}` has unsupported size {}", names[i], sizes[i]),
                        ));
                    }
                    fields.push(FieldLayout {
                        name: names[i].clone(),
                        size: sizes[i],
                        kind: kinds[i],
                        count: counts[i],
                    });
                }
                let points = match (points, width, height) {
                    (Some(p), _, _) => p,
                    (None, Some(w), Some(h)) => w * h,
                    _ => return Err(malformed(line_no, "missing POINTS")),
                };
                return Ok(Header {
                    fields,
                    points,
                    binary,
                    data_offset: offset,
                });
            }
            other => return Err(malformed(line_no, format!("unknown header key `{other}`"))),
        }
    }
}

fn read_scalar(bytes: &[u8], kind: ScalarKind) -> f64 {
    let mut buf = [0u8; 8];
    buf[..bytes.len()].copy_from_slice(bytes);
    match (kind, bytes.len()) {
        (ScalarKind::Float, 4) => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
        (ScalarKind::Float, _) => f64::from_le_bytes(buf),
        (ScalarKind::Signed, 1) => bytes[0] as i8 as f64,
        (ScalarKind::Signed, 2) => i16::from_le_bytes(buf[..2].try_into().unwrap()) as f64,
        (ScalarKind::Signed, 4) => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
        (ScalarKind::Signed, _) => i64::from_le_bytes(buf) as f64,
        (ScalarKind::Unsigned, 1) => bytes[0] as f64,
        (ScalarKind::Unsigned, 2) => u16::from_le_bytes(buf[..2].try_into().unwrap()) as f64,
        (ScalarKind::Unsigned, 4) => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
        (ScalarKind::Unsigned, _) => u64::from_le_bytes(buf) as f64,
    }
}

/// Parses an in-memory PCD file.
pub fn parse_pcd(bytes: &[u8]) -> Result<IntensityCloud, PcdError> {
    let header = parse_header(bytes)?;
    let wanted = [
        header.field_position("x")?,
        header.field_position("y")?,
        header.field_position("z")?,
        header.field_position("intensity")?,
    ];
    let data = &bytes[header.data_offset..];
    let mut points = Vec::with_capacity(header.points);

    if header.binary {
        let mut offsets = Vec::with_capacity(header.fields.len());
        let mut stride = 0usize;
        for f in &header.fields {
            offsets.push(stride);
            stride += f.size * f.count;
        }
        for i in 0..header.points {
            let base = i * stride;
            if base + stride > data.len() {
                return Err(PcdError::TruncatedData {
                    point: i,
                    reason: format!(
                        "expected {} bytes of binary data, found {}",
                        header.points * stride,
                        data.len()
                    ),
                });
            }
            let mut v = [0.0f64; 4];
            for (slot, &fi) in v.iter_mut().zip(&wanted) {
                let f = &header.fields[fi];
                let start = base + offsets[fi];
                *slot = read_scalar(&data[start..start + f.size], f.kind);
            }
            points.push(Point3I::new(v[0], v[1], v[2], v[3]));
        }
    } else {
        let text = std::str::from_utf8(data).map_err(|_| PcdError::TruncatedData {
            point: 0,
            reason: "ASCII data is not valid UTF-8".into(),
        })?;
        let mut token_offsets = Vec::with_capacity(header.fields.len());
        let mut tokens_per_point = 0usize;
        for f in &header.fields {
            token_offsets.push(tokens_per_point);
            tokens_per_point += f.count;
        }
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        for i in 0..header.points {
            let line = lines.next().ok_or_else(|| PcdError::TruncatedData {
                point: i,
                reason: format!("expected {} points, found {i}", header.points),
            })?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() < tokens_per_point {
                return Err(PcdError::TruncatedData {
                    point: i,
                    reason: format!("line has {} values, expected {tokens_per_point}", tokens.len()),
                });
            }
            let mut v = [0.0f64; 4];
            for (slot, &fi) in v.iter_mut().zip(&wanted) {
                let tok = tokens[token_offsets[fi]];
                *slot = tok.parse::<f64>().map_err(|_| PcdError::TruncatedData {
                    point: i,
                    reason: format!("cannot parse `{tok}` as a number"),
                })?;
            }
            points.push(Point3I::new(v[0], v[1], v[2], v[3]));
        }
    }

    IntensityCloud::from_points(points).map_err(|e| match e {
        CloudError::InvalidPoint { index } => PcdError::InvalidPoint { index },
        CloudError::EmptyCloud => unreachable!(),
    })
}

/// Loads a PCD file from disk.
pub fn load_pcd(path: impl AsRef<Path>) -> Result<IntensityCloud, PcdError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| PcdError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pcd(&bytes)
}

/// Serializes a cloud to PCD bytes.
pub fn encode_pcd(cloud: &IntensityCloud, encoding: PcdEncoding) -> Vec<u8> {
    let n = cloud.len();
    let mut header = String::new();
    header.push_str("# .PCD v0.7 - Point Cloud Data file format\n");
    header.push_str("VERSION 0.7\n");
    header.push_str("FIELDS x y z intensity\n");
    header.push_str("SIZE 4 4 4 4\n");
    header.push_str("TYPE F F F F\n");
    header.push_str("COUNT 1 1 1 1\n");
    let _ = writeln!(header, "WIDTH {n}");
    header.push_str("HEIGHT 1\n");
    header.push_str("VIEWPOINT 0 0 0 1 0 0 0\n");
    let _ = writeln!(header, "POINTS {n}");
    match encoding {
        PcdEncoding::Ascii => {
            header.push_str("DATA ascii\n");
            for p in cloud.iter() {
                let _ = writeln!(header, "{} {} {} {}", p.x, p.y, p.z, p.intensity);
            }
            header.into_bytes()
        }
        PcdEncoding::Binary => {
            header.push_str("DATA binary\n");
            let mut out = header.into_bytes();
            out.reserve(n * 16);
            for p in cloud.iter() {
                for v in [p.x, p.y, p.z, p.intensity] {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            out
        }
    }
}

/// Writes a cloud to disk as PCD.
pub fn save_pcd(cloud: &IntensityCloud, path: impl AsRef<Path>, encoding: PcdEncoding) -> Result<(), PcdError> {
    let path = path.as_ref();
    let io_err = |source| PcdError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&encode_pcd(cloud, encoding)).map_err(io_err)?;
    Ok(())
}

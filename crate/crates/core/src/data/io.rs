//! Point files: ASCII `x y z` lines or the binary `PCBF` container.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Result, SfaError};
use crate::geometry::{Point3, PointCloud};

pub const BINARY_MAGIC: &[u8; 4] = b"PCBF";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointFormat {
    Ascii,
    Binary,
}

impl PointFormat {
    pub fn extension(self) -> &'static str {
        match self {
            PointFormat::Ascii => "xyz",
            PointFormat::Binary => "pcbf",
        }
    }
}

impl std::str::FromStr for PointFormat {
    type Err = SfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascii" | "xyz" => Ok(PointFormat::Ascii),
            "binary" | "pcbf" => Ok(PointFormat::Binary),
            other => Err(SfaError::Config(format!("unknown point format {other:?} (expected ascii or binary)"))),
        }
    }
}

/// Extensions recognised when scanning directories.
pub const POINT_EXTENSIONS: [&str; 4] = ["xyz", "txt", "pts", "pcbf"];

fn parse_err(path: &Path, offset: usize, line: Option<usize>, msg: impl Into<String>) -> SfaError {
    SfaError::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        line,
        msg: msg.into(),
    }
}

pub fn parse_points(path: &Path, bytes: &[u8]) -> Result<Vec<Point3>> {
    if bytes.starts_with(BINARY_MAGIC) {
        parse_binary(path, bytes)
    } else {
        parse_ascii(path, bytes)
    }
}

fn parse_binary(path: &Path, bytes: &[u8]) -> Result<Vec<Point3>> {
    let Some(count) = bytes.get(4..8) else {
        return Err(parse_err(path, 4, None, "truncated header: missing point count"));
    };
    let count = u32::from_le_bytes(count.try_into().unwrap()) as usize;
    let body = &bytes[8..];
    let need = count * 12;
    if body.len() != need {
        return Err(parse_err(
            path,
            8 + body.len().min(need),
            None,
            format!("header declares {count} points ({need} bytes) but {} bytes follow", body.len()),
        ));
    }
    Ok(body
        .chunks_exact(12)
        .map(|c| [0, 1, 2].map(|d| f32::from_le_bytes(c[4 * d..4 * d + 4].try_into().unwrap()) as f64))
        .collect())
}

fn parse_ascii(path: &Path, bytes: &[u8]) -> Result<Vec<Point3>> {
    let text = std::str::from_utf8(bytes).map_err(|e| parse_err(path, e.valid_up_to(), None, "file is not valid UTF-8 text"))?;
    let mut points = Vec::new();
    let mut offset = 0;
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if !line.is_empty() && !line.starts_with('#') {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(parse_err(path, offset, Some(line_no), format!("expected 3 fields, found {}", fields.len())));
            }
            let mut p = [0.0; 3];
            for (d, f) in fields.iter().enumerate() {
                p[d] = f
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, offset, Some(line_no), format!("invalid coordinate {f:?}")))?;
            }
            points.push(p);
        }
        offset += raw.len();
    }
    Ok(points)
}

pub fn read_points(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| SfaError::io(path, e))?;
    let points = parse_points(path, &bytes)?;
    if points.is_empty() {
        return Err(parse_err(path, bytes.len(), None, "file holds no points"));
    }
    PointCloud::new(points)
}

pub fn encode_points(cloud: &PointCloud, format: PointFormat) -> Vec<u8> {
    match format {
        PointFormat::Ascii => {
            let mut out = String::with_capacity(cloud.len() * 48);
            for p in cloud.points() {
                out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
            }
            out.into_bytes()
        }
        PointFormat::Binary => {
            let mut out = Vec::with_capacity(8 + 12 * cloud.len());
            out.extend_from_slice(BINARY_MAGIC);
            out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
            for p in cloud.points() {
                for c in p {
                    out.extend_from_slice(&(*c as f32).to_le_bytes());
                }
            }
            out
        }
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| SfaError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| SfaError::io(path, e))?;
    f.write_all(bytes).map_err(|e| SfaError::io(path, e))
}

pub fn write_points(path: &Path, cloud: &PointCloud, format: PointFormat) -> Result<()> {
    write_bytes(path, &encode_points(cloud, format))
}

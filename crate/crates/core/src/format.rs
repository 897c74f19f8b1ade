//! On-disk raster formats.
//!
//! Every grid file is a short text header followed by a binary payload:
//!
//! ```text
//! SAFESITE-GRID 1
//! kind dem|probability|uncertainty|safety
//! width <usize>
//! height <usize>
//! pitch_m <f64>
//! digest <hex>        (optional provenance)
//! end
//! <payload>
//! ```
//!
//! Float kinds carry `width * height` little-endian `f32` values in row-major
//! order; `safety` carries one byte per pixel (0 = Unsafe, 1 = Safe,
//! 2 = Invalid).

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, ParseError, Result};
use crate::grid::Dem;
use crate::maps::{Label, SafetyMap};

const MAGIC: &str = "SAFESITE-GRID";
const VERSION: &str = "1";
const MAX_HEADER_BYTES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Dem,
    Probability,
    Uncertainty,
    Safety,
}

impl GridKind {
    fn as_str(self) -> &'static str {
        match self {
            GridKind::Dem => "dem",
            GridKind::Probability => "probability",
            GridKind::Uncertainty => "uncertainty",
            GridKind::Safety => "safety",
        }
    }

    fn bytes_per_pixel(self) -> usize {
        match self {
            GridKind::Safety => 1,
            _ => 4,
        }
    }
}

impl fmt::Display for GridKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GridKind {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, ParseError> {
        match s {
            "dem" => Ok(GridKind::Dem),
            "probability" => Ok(GridKind::Probability),
            "uncertainty" => Ok(GridKind::Uncertainty),
            "safety" => Ok(GridKind::Safety),
            other => Err(ParseError::MalformedHeader(format!("unknown kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridHeader {
    pub kind: GridKind,
    pub width: usize,
    pub height: usize,
    pub pitch_m: f64,
    pub digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Float(Vec<f32>),
    Labels(Vec<Label>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub header: GridHeader,
    pub payload: Payload,
}

impl GridFile {
    pub fn from_dem(dem: &Dem) -> Self {
        Self {
            header: GridHeader {
                kind: GridKind::Dem,
                width: dem.width(),
                height: dem.height(),
                pitch_m: dem.pitch_m(),
                digest: None,
            },
            payload: Payload::Float(dem.heights().to_vec()),
        }
    }

    /// A float grid of `kind`; values are narrowed to `f32`.
    pub fn from_values(kind: GridKind, width: usize, height: usize, pitch_m: f64, values: &[f64]) -> Self {
        debug_assert_ne!(kind, GridKind::Safety);
        Self {
            header: GridHeader {
                kind,
                width,
                height,
                pitch_m,
                digest: None,
            },
            payload: Payload::Float(values.iter().map(|&v| v as f32).collect()),
        }
    }

    pub fn from_safety_map(map: &SafetyMap, pitch_m: f64) -> Self {
        Self {
            header: GridHeader {
                kind: GridKind::Safety,
                width: map.width,
                height: map.height,
                pitch_m,
                digest: None,
            },
            payload: Payload::Labels(map.labels.clone()),
        }
    }

    pub fn with_digest(mut self, digest: impl Into<String>) -> Self {
        self.header.digest = Some(digest.into());
        self
    }

    pub fn values(&self) -> Option<Vec<f64>> {
        match &self.payload {
            Payload::Float(v) => Some(v.iter().map(|&x| f64::from(x)).collect()),
            Payload::Labels(_) => None,
        }
    }

    pub fn into_dem(self) -> Result<Dem> {
        match (self.header.kind, self.payload) {
            (GridKind::Dem, Payload::Float(heights)) => {
                Dem::new(self.header.width, self.header.height, self.header.pitch_m, heights)
            }
            (kind, _) => Err(Error::invalid(format!("expected a dem grid, found `{kind}`"))),
        }
    }

    pub fn into_safety_map(self) -> Result<SafetyMap> {
        match self.payload {
            Payload::Labels(labels) => SafetyMap::new(self.header.width, self.header.height, labels),
            Payload::Float(_) => Err(Error::invalid(format!(
                "expected a safety grid, found `{}`",
                self.header.kind
            ))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = format!(
            "{MAGIC} {VERSION}\nkind {}\nwidth {}\nheight {}\npitch_m {}\n",
            h.kind, h.width, h.height, h.pitch_m
        );
        if let Some(d) = &h.digest {
            out.push_str(&format!("digest {d}\n"));
        }
        out.push_str("end\n");
        let mut bytes = out.into_bytes();
        match &self.payload {
            Payload::Float(values) => {
                bytes.reserve(values.len() * 4);
                for v in values {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            Payload::Labels(labels) => bytes.extend(labels.iter().map(|l| l.to_byte())),
        }
        bytes
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ParseError> {
        let search = &bytes[..bytes.len().min(MAX_HEADER_BYTES)];
        let end = find_subslice(search, b"\nend\n")
            .ok_or_else(|| ParseError::MalformedHeader("missing `end` line".into()))?;
        let text = std::str::from_utf8(&bytes[..end])
            .map_err(|_| ParseError::MalformedHeader("header is not UTF-8".into()))?;
        let header = parse_header(text)?;
        let body = &bytes[end + 5..];

        let pixels = header
            .width
            .checked_mul(header.height)
            .ok_or_else(|| ParseError::MalformedHeader("dimensions overflow".into()))?;
        let expected = pixels * header.kind.bytes_per_pixel();
        if body.len() < expected {
            return Err(ParseError::Truncated {
                expected,
                found: body.len(),
            });
        }
        if body.len() > expected {
            return Err(ParseError::TrailingData {
                extra: body.len() - expected,
            });
        }

        let payload = if header.kind == GridKind::Safety {
            let labels = body
                .iter()
                .enumerate()
                .map(|(index, &value)| Label::from_byte(value).ok_or(ParseError::InvalidLabel { index, value }))
                .collect::<Result<Vec<_>, _>>()?;
            Payload::Labels(labels)
        } else {
            let mut values = Vec::with_capacity(pixels);
            for (index, chunk) in body.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                if !v.is_finite() {
                    return Err(ParseError::NonFinite { index });
                }
                values.push(v);
            }
            Payload::Float(values)
        };
        Ok(Self { header, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::decode(&bytes).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn parse_header(text: &str) -> Result<GridHeader, ParseError> {
    let malformed = |m: String| ParseError::MalformedHeader(m);
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    let mut magic = first.split_whitespace();
    if magic.next() != Some(MAGIC) {
        return Err(malformed(format!("bad magic line `{first}`")));
    }
    match magic.next() {
        Some(VERSION) => {}
        Some(v) => return Err(ParseError::UnsupportedVersion(v.to_string())),
        None => return Err(malformed("missing version".into())),
    }

    let (mut kind, mut width, mut height, mut pitch, mut digest) = (None, None, None, None, None);
    for line in lines {
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| malformed(format!("bad header line `{line}`")))?;
        let num_err = |_| malformed(format!("bad value for `{key}`: `{value}`"));
        match key {
            "kind" => kind = Some(value.parse::<GridKind>()?),
            "width" => width = Some(value.parse::<usize>().map_err(num_err)?),
            "height" => height = Some(value.parse::<usize>().map_err(num_err)?),
            "pitch_m" => pitch = Some(value.parse::<f64>().map_err(|_| malformed(format!("bad pitch `{value}`")))?),
            "digest" => digest = Some(value.to_string()),
            other => return Err(malformed(format!("unknown key `{other}`"))),
        }
    }
    let header = GridHeader {
        kind: kind.ok_or_else(|| malformed("missing kind".into()))?,
        width: width.ok_or_else(|| malformed("missing width".into()))?,
        height: height.ok_or_else(|| malformed("missing height".into()))?,
        pitch_m: pitch.ok_or_else(|| malformed("missing pitch_m".into()))?,
        digest,
    };
    if header.width == 0 || header.height == 0 {
        return Err(malformed("dimensions must be positive".into()));
    }
    if !(header.pitch_m.is_finite() && header.pitch_m > 0.0) {
        return Err(malformed("pitch_m must be positive".into()));
    }
    Ok(header)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = PathBuf::from(path);
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    tmp.set_file_name(name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_dem(dem: &Dem, path: &Path) -> Result<()> {
    GridFile::from_dem(dem).write(path)
}

pub fn read_dem(path: &Path) -> Result<Dem> {
    GridFile::read(path)?.into_dem()
}

pub fn write_safety_map(map: &SafetyMap, path: &Path) -> Result<()> {
    GridFile::from_safety_map(map, 1.0).write(path)
}

pub fn read_safety_map(path: &Path) -> Result<SafetyMap> {
    GridFile::read(path)?.into_safety_map()
}

/// Debug export: one row per line, space-separated decimals.
pub fn to_ascii_grid(values: &[f64], width: usize) -> String {
    let mut out = String::new();
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_claiming_more_values_is_truncated() {
        let dem = Dem::flat(10, 10, 1.0, 1.5).unwrap();
        let mut bytes = GridFile::from_dem(&dem).encode();
        bytes.truncate(bytes.len() - 4);
        assert_eq!(
            GridFile::decode(&bytes),
            Err(ParseError::Truncated {
                expected: 400,
                found: 396
            })
        );
    }

    #[test]
    fn minimal_dem_round_trips() {
        let dem = Dem::flat(1, 1, 1.0, 0.0).unwrap();
        let back = GridFile::decode(&GridFile::from_dem(&dem).encode()).unwrap().into_dem().unwrap();
        assert_eq!(back, dem);
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(
            GridFile::decode(b"NOTAGRID 1\nend\n"),
            Err(ParseError::MalformedHeader(_))
        ));
        assert!(matches!(
            GridFile::decode(b"SAFESITE-GRID 1\nkind dem\nwidth x\nheight 1\npitch_m 1\nend\n"),
            Err(ParseError::MalformedHeader(_))
        ));
        assert!(matches!(
            GridFile::decode(b"SAFESITE-GRID 7\nkind dem\nend\n"),
            Err(ParseError::UnsupportedVersion(_))
        ));

        let mut bytes = b"SAFESITE-GRID 1\nkind dem\nwidth 1\nheight 1\npitch_m 1\nend\n".to_vec();
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(GridFile::decode(&bytes), Err(ParseError::NonFinite { index: 0 }));
        bytes.truncate(bytes.len() - 4);
        bytes.extend_from_slice(&1f32.to_le_bytes());
        bytes.push(0);
        assert_eq!(GridFile::decode(&bytes), Err(ParseError::TrailingData { extra: 1 }));

        let mut sfm = b"SAFESITE-GRID 1\nkind safety\nwidth 2\nheight 1\npitch_m 1\nend\n".to_vec();
        sfm.extend_from_slice(&[1, 9]);
        assert_eq!(
            GridFile::decode(&sfm),
            Err(ParseError::InvalidLabel { index: 1, value: 9 })
        );
    }

    #[test]
    fn safety_map_and_digest_round_trip() {
        let map = SafetyMap::new(3, 1, vec![Label::Unsafe, Label::Safe, Label::Invalid]).unwrap();
        let file = GridFile::from_safety_map(&map, 1.0).with_digest("abc123");
        let back = GridFile::decode(&file.encode()).unwrap();
        assert_eq!(back.header.digest.as_deref(), Some("abc123"));
        assert_eq!(back.into_safety_map().unwrap(), map);
    }

    #[test]
    fn files_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/terrain.dem");
        let dem = Dem::new(3, 2, 0.25, vec![0.1, -2.5, 3.0e-7, 1e9, 0.0, -0.0]).unwrap();
        write_dem(&dem, &path).unwrap();
        assert_eq!(read_dem(&path).unwrap(), dem);
        assert!(!path.with_file_name("terrain.dem.tmp").exists());
    }

    #[test]
    fn ascii_export_has_one_line_per_row() {
        let text = to_ascii_grid(&[1.0, 2.0, 3.5, 4.0], 2);
        assert_eq!(text, "1 2\n3.5 4\n");
    }
}

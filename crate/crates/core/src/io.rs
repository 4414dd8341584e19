//! Point-cloud and disparity file formats.
//!
//! Point clouds: PLY (binary little-endian or ASCII) with float32 `x y z` and
//! an optional uchar `tag`, or plain-text XYZ. Disparity: grayscale PFM for
//! the values, with the foreground mask in a sibling binary PGM whose name is
//! the disparity path plus `.mask.pgm`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{DisparityMap, PointCloud, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyBinary,
    PlyAscii,
    Xyz,
}

impl CloudFormat {
    /// Guesses from the file extension; `.ply` means binary.
    pub fn from_path(path: &Path) -> CloudFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("xyz") || e.eq_ignore_ascii_case("txt") => {
                CloudFormat::Xyz
            }
            _ => CloudFormat::PlyBinary,
        }
    }
}

impl CloudFormat {
    pub fn extension(self) -> &'static str {
        match self {
            CloudFormat::PlyBinary | CloudFormat::PlyAscii => "ply",
            CloudFormat::Xyz => "xyz",
        }
    }
}

impl std::str::FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ply-binary" | "ply" => Ok(CloudFormat::PlyBinary),
            "ply-ascii" => Ok(CloudFormat::PlyAscii),
            "xyz" => Ok(CloudFormat::Xyz),
            other => Err(Error::InvalidInput(format!(
                "unknown point-cloud format `{other}`"
            ))),
        }
    }
}

fn malformed(offset: usize, message: impl Into<String>) -> Error {
    Error::MalformedFile {
        offset: offset as u64,
        message: message.into(),
    }
}

// ---------------------------------------------------------------- PLY

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, Scalar)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

struct PlyHeader {
    encoding: PlyEncoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_ply_header(bytes: &[u8]) -> Result<PlyHeader> {
    let mut offset = 0;
    let next_line = |offset: &mut usize| -> Option<(usize, String)> {
        if *offset >= bytes.len() {
            return None;
        }
        let start = *offset;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |p| start + p);
        *offset = (end + 1).min(bytes.len());
        Some((
            start,
            String::from_utf8_lossy(&bytes[start..end])
                .trim_end_matches('\r')
                .to_string(),
        ))
    };

    match next_line(&mut offset) {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(malformed(0, "missing `ply` magic line")),
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let Some((at, line)) = next_line(&mut offset) else {
            return Err(malformed(offset, "header ended before `end_header`"));
        };
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    other => {
                        return Err(malformed(at, format!("unsupported PLY format `{other}`")))
                    }
                })
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| malformed(at, format!("bad element count `{count}`")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", ..] => {
                let el = elements
                    .last()
                    .ok_or_else(|| malformed(at, "property before any element"))?;
                if el.name == "vertex" {
                    return Err(malformed(
                        at,
                        "list properties on vertices are not supported",
                    ));
                }
                // list-valued elements are only tolerated after the vertices
                elements
                    .last_mut()
                    .unwrap()
                    .properties
                    .push(("<list>".into(), Scalar::U8));
            }
            ["property", ty, name] => {
                let scalar = Scalar::parse(ty)
                    .ok_or_else(|| malformed(at, format!("unknown property type `{ty}`")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| malformed(at, "property before any element"))?
                    .properties
                    .push((name.to_string(), scalar));
            }
            _ => return Err(malformed(at, format!("unrecognized header line `{line}`"))),
        }
    }
    let encoding =
        encoding.ok_or_else(|| malformed(offset, "header is missing the `format` line"))?;
    Ok(PlyHeader {
        encoding,
        elements,
        body_offset: offset,
    })
}

/// Reads a point cloud, returning warnings about ignored vertex properties.
pub fn read_pointcloud_with_warnings(path: &Path) -> Result<(PointCloud, Vec<String>)> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"ply") {
        read_ply(&bytes)
    } else {
        Ok((read_xyz(&bytes)?, Vec::new()))
    }
}

pub fn read_pointcloud(path: &Path) -> Result<PointCloud> {
    Ok(read_pointcloud_with_warnings(path)?.0)
}

fn read_ply(bytes: &[u8]) -> Result<(PointCloud, Vec<String>)> {
    let header = parse_ply_header(bytes)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| malformed(header.body_offset, "header is missing `element vertex`"))?;
    for skipped in &header.elements[..vertex_pos] {
        if skipped.properties.iter().any(|(n, _)| n == "<list>") && skipped.count > 0 {
            return Err(malformed(
                header.body_offset,
                format!("list-valued element `{}` before the vertices", skipped.name),
            ));
        }
    }
    let vertex = &header.elements[vertex_pos];
    let find = |name: &str| vertex.properties.iter().position(|(n, _)| n == name);
    let mut columns = [0usize; 3];
    for (c, axis) in ["x", "y", "z"].iter().enumerate() {
        columns[c] = find(axis).ok_or_else(|| {
            malformed(
                header.body_offset,
                format!("vertex element lacks property `{axis}`"),
            )
        })?;
    }
    let tag_col = find("tag");
    let warnings: Vec<String> = vertex
        .properties
        .iter()
        .filter(|(n, _)| !["x", "y", "z", "tag"].contains(&n.as_str()))
        .map(|(n, _)| format!("ignoring unsupported vertex property `{n}`"))
        .collect();

    let n = vertex.count;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut row_offsets = Vec::with_capacity(n);
    match header.encoding {
        PlyEncoding::BinaryLittleEndian => {
            let mut offset = header.body_offset;
            for el in &header.elements[..vertex_pos] {
                offset += el.count * el.properties.iter().map(|(_, s)| s.size()).sum::<usize>();
            }
            let stride: usize = vertex.properties.iter().map(|(_, s)| s.size()).sum();
            for k in 0..n {
                let start = offset + k * stride;
                if start + stride > bytes.len() {
                    return Err(malformed(
                        bytes.len(),
                        format!("vertex data truncated after {k} of {n} vertices"),
                    ));
                }
                let mut at = start;
                let row = vertex
                    .properties
                    .iter()
                    .map(|(_, s)| {
                        let v = s.read_le(&bytes[at..]);
                        at += s.size();
                        v
                    })
                    .collect();
                rows.push(row);
                row_offsets.push(start);
            }
        }
        PlyEncoding::Ascii => {
            let body = &bytes[header.body_offset..];
            let mut lines = Vec::new();
            let mut pos = 0;
            for line in body.split(|&b| b == b'\n') {
                let text = String::from_utf8_lossy(line);
                if !text.trim().is_empty() {
                    lines.push((header.body_offset + pos, text.trim().to_string()));
                }
                pos += line.len() + 1;
            }
            let skip: usize = header.elements[..vertex_pos].iter().map(|e| e.count).sum();
            for k in 0..n {
                let (at, line) = lines.get(skip + k).ok_or_else(|| {
                    malformed(
                        bytes.len(),
                        format!("vertex data truncated after {k} of {n} vertices"),
                    )
                })?;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|w| {
                        w.parse::<f64>()
                            .map_err(|_| malformed(*at, format!("bad number `{w}`")))
                    })
                    .collect::<Result<_>>()?;
                if row.len() < vertex.properties.len() {
                    return Err(malformed(
                        *at,
                        format!(
                            "vertex {k} has {} of {} values",
                            row.len(),
                            vertex.properties.len()
                        ),
                    ));
                }
                rows.push(row);
                row_offsets.push(*at);
            }
        }
    }

    let points = rows
        .iter()
        .map(|r| Point3::new(r[columns[0]], r[columns[1]], r[columns[2]]))
        .collect();
    let cloud = match tag_col {
        Some(col) => {
            let tags = rows
                .iter()
                .zip(&row_offsets)
                .map(|(r, &at)| {
                    let v = r[col];
                    (v.fract() == 0.0 && (0.0..=255.0).contains(&v))
                        .then(|| Tag::from_code(v as u8))
                        .flatten()
                        .ok_or_else(|| malformed(at, format!("invalid tag value {v}")))
                })
                .collect::<Result<Vec<_>>>()?;
            PointCloud::with_tags(points, tags)?
        }
        None => PointCloud::new(points)?,
    };
    Ok((cloud, warnings))
}

fn ply_header(cloud: &PointCloud, encoding: &str) -> String {
    let mut h = format!(
        "ply\nformat {encoding} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    if cloud.tags().is_some() {
        h.push_str("property uchar tag\n");
    }
    h.push_str("end_header\n");
    h
}

/// Rounds to float32, then prints the widened value so that parsing the text
/// as f64 recovers it exactly.
fn format_xyz(p: &Point3<f64>) -> String {
    let w = |v: f64| (v as f32) as f64;
    format!("{} {} {}", w(p.x), w(p.y), w(p.z))
}

/// Serializes with float32 coordinates.
pub fn encode_pointcloud(cloud: &PointCloud, format: CloudFormat) -> Vec<u8> {
    let mut out = Vec::new();
    let tags = cloud.tags();
    match format {
        CloudFormat::PlyBinary => {
            out.extend_from_slice(ply_header(cloud, "binary_little_endian").as_bytes());
            for (k, p) in cloud.points().iter().enumerate() {
                for c in 0..3 {
                    out.extend_from_slice(&(p[c] as f32).to_le_bytes());
                }
                if let Some(tags) = tags {
                    out.push(tags[k].code());
                }
            }
        }
        CloudFormat::PlyAscii => {
            out.extend_from_slice(ply_header(cloud, "ascii").as_bytes());
            for (k, p) in cloud.points().iter().enumerate() {
                let mut line = format_xyz(p);
                if let Some(tags) = tags {
                    line.push_str(&format!(" {}", tags[k].code()));
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
        }
        CloudFormat::Xyz => {
            for p in cloud.points() {
                out.extend_from_slice(format!("{}\n", format_xyz(p)).as_bytes());
            }
        }
    }
    out
}

pub fn write_pointcloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    fs::write(path, encode_pointcloud(cloud, format))?;
    Ok(())
}

fn read_xyz(bytes: &[u8]) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut pos = 0;
    for line in bytes.split(|&b| b == b'\n') {
        let at = pos;
        pos += line.len() + 1;
        let text = String::from_utf8_lossy(line);
        let text = text.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let values: Vec<f64> = text
            .split_whitespace()
            .take(3)
            .map(|w| {
                w.parse::<f64>()
                    .map_err(|_| malformed(at, format!("bad number `{w}`")))
            })
            .collect::<Result<_>>()?;
        if values.len() < 3 {
            return Err(malformed(at, "XYZ line needs three coordinates"));
        }
        points.push(Point3::new(values[0], values[1], values[2]));
    }
    PointCloud::new(points)
}

// ---------------------------------------------------------------- PFM / PGM

/// Sibling mask path: `dir/name.pfm` becomes `dir/name.pfm.mask.pgm`.
pub fn mask_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".mask.pgm");
    PathBuf::from(name)
}

/// Splits off whitespace-separated header tokens, returning them and the
/// offset just past the single whitespace byte after the last one.
fn header_tokens(bytes: &[u8], count: usize, comments: bool) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut pos = 0;
    while tokens.len() < count {
        while pos < bytes.len()
            && (bytes[pos].is_ascii_whitespace() || (comments && bytes[pos] == b'#'))
        {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        if pos >= bytes.len() {
            return Err(malformed(
                pos,
                format!("header has {} of {count} fields", tokens.len()),
            ));
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if pos >= bytes.len() {
        return Err(malformed(pos, "header is not terminated"));
    }
    Ok((tokens, pos + 1))
}

fn parse_dims(tokens: &[String], at: usize) -> Result<(usize, usize)> {
    let w: usize = tokens[1]
        .parse()
        .map_err(|_| malformed(at, format!("bad width `{}`", tokens[1])))?;
    let h: usize = tokens[2]
        .parse()
        .map_err(|_| malformed(at, format!("bad height `{}`", tokens[2])))?;
    if w == 0 || h == 0 {
        return Err(malformed(at, "image dimensions must be positive"));
    }
    Ok((w, h))
}

/// Grayscale PFM, rows stored bottom to top. Returns `(width, height, values)`
/// in top-to-bottom row-major order.
pub fn decode_pfm(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let (tokens, body) = header_tokens(bytes, 4, false)?;
    match tokens[0].as_str() {
        "Pf" => {}
        "PF" => {
            return Err(malformed(
                0,
                "color PFM is not supported; expected grayscale `Pf`",
            ))
        }
        other => return Err(malformed(0, format!("bad PFM magic `{other}`"))),
    }
    let (w, h) = parse_dims(&tokens, 0)?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| malformed(0, format!("bad PFM scale `{}`", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(malformed(0, "PFM scale must be non-zero"));
    }
    let little = scale < 0.0;
    let need = w * h * 4;
    if bytes.len() < body + need {
        return Err(malformed(
            bytes.len(),
            format!("PFM payload has {} of {need} bytes", bytes.len() - body),
        ));
    }
    let mut values = vec![0f32; w * h];
    for row in 0..h {
        for col in 0..w {
            let at = body + (row * w + col) * 4;
            let raw: [u8; 4] = bytes[at..at + 4].try_into().unwrap();
            let v = if little {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            values[(h - 1 - row) * w + col] = v;
        }
    }
    Ok((w, h, values))
}

pub fn encode_pfm(width: usize, height: usize, values: &[f32]) -> Vec<u8> {
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for row in (0..height).rev() {
        for v in &values[row * width..(row + 1) * width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Binary PGM (P5, maxval below 256). Returns `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, u8, Vec<u8>)> {
    let (tokens, body) = header_tokens(bytes, 4, true)?;
    if tokens[0] != "P5" {
        return Err(malformed(
            0,
            format!("bad PGM magic `{}`, expected P5", tokens[0]),
        ));
    }
    let (w, h) = parse_dims(&tokens, 0)?;
    let maxval: u16 = tokens[3]
        .parse()
        .map_err(|_| malformed(0, format!("bad PGM maxval `{}`", tokens[3])))?;
    if maxval == 0 || maxval > 255 {
        return Err(malformed(0, format!("unsupported PGM maxval {maxval}")));
    }
    if bytes.len() < body + w * h {
        return Err(malformed(
            bytes.len(),
            format!("PGM payload has {} of {} bytes", bytes.len() - body, w * h),
        ));
    }
    Ok((w, h, maxval as u8, bytes[body..body + w * h].to_vec()))
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Reads values from a PFM and the mask from its sibling PGM; without a mask
/// file the foreground is every positive value.
pub fn read_disparity(path: &Path) -> Result<DisparityMap> {
    let (w, h, values) = decode_pfm(&fs::read(path)?)?;
    let values: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    let mpath = mask_path(path);
    let mask = if mpath.exists() {
        let (mw, mh, maxval, pixels) = decode_pgm(&fs::read(&mpath)?)?;
        if (mw, mh) != (w, h) {
            return Err(Error::DimensionMismatch(format!(
                "disparity is {w}x{h} but mask {} is {mw}x{mh}",
                mpath.display()
            )));
        }
        pixels
            .iter()
            .map(|&p| p as u16 * 2 > maxval as u16)
            .collect()
    } else {
        values.iter().map(|&v| v > 0.0).collect()
    };
    DisparityMap::new(w, h, values, mask)
}

/// Writes values as float32 PFM and the mask as a 0/255 PGM.
pub fn write_disparity(map: &DisparityMap, path: &Path) -> Result<()> {
    let values: Vec<f32> = map.values().iter().map(|&v| v as f32).collect();
    fs::write(path, encode_pfm(map.width(), map.height(), &values))?;
    let mask: Vec<u8> = map
        .mask()
        .iter()
        .map(|&m| if m { 255 } else { 0 })
        .collect();
    fs::write(
        mask_path(path),
        encode_pgm(map.width(), map.height(), &mask),
    )?;
    Ok(())
}

// ---------------------------------------------------------------- JSON

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
        offset: byte_offset(&text, e.line(), e.column()),
        message: format!("{}: {e}", path.display()),
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let before: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (before + column.saturating_sub(1)) as u64
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tagged() -> PointCloud {
        PointCloud::with_tags(
            vec![
                Point3::new(0.5, -1.25, 3.0),
                Point3::new(0.125, 2.0, -0.75),
                Point3::new(0.0, 0.0, 1.0),
            ],
            vec![Tag::InitialVisible, Tag::InitialOccluded, Tag::Projected],
        )
        .unwrap()
    }

    fn roundtrip(cloud: &PointCloud, format: CloudFormat) -> PointCloud {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.out");
        write_pointcloud(cloud, &path, format).unwrap();
        read_pointcloud(&path).unwrap()
    }

    #[test]
    fn binary_ply_roundtrip() {
        let c = tagged();
        assert_eq!(roundtrip(&c, CloudFormat::PlyBinary), c);
        assert_eq!(roundtrip(&c, CloudFormat::PlyAscii), c);
    }

    #[test]
    fn xyz_line() {
        let c = read_xyz(b"0 0 1\n").unwrap();
        assert_eq!(c.points(), &[Point3::new(0.0, 0.0, 1.0)]);
        assert!(c.tags().is_none());
        assert!(matches!(
            read_xyz(b"0 1\n"),
            Err(Error::MalformedFile { offset: 0, .. })
        ));
    }

    #[test]
    fn truncated_header_names_what_is_missing() {
        let err =
            read_ply(b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\n").unwrap_err();
        assert!(err.to_string().contains("end_header"), "{err}");
        let err = read_ply(b"ply\nformat ascii 1.0\nend_header\n").unwrap_err();
        assert!(err.to_string().contains("element vertex"), "{err}");
        let err =
            read_ply(b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n")
                .unwrap_err();
        assert!(err.to_string().contains("`y`"), "{err}");
    }

    #[test]
    fn truncated_binary_payload() {
        let bytes = encode_pointcloud(&tagged(), CloudFormat::PlyBinary);
        let err = read_ply(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::MalformedFile { .. }));
        assert!(err.to_string().contains("2 of 3"), "{err}");
    }

    #[test]
    fn extra_properties_warn_and_are_ignored() {
        let text = b"ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty double x\nproperty double y\n\
property double z\nproperty uchar red\nend_header\n1 2 3 255\n4 5 6 0\n";
        let (cloud, warnings) = read_ply(text).unwrap();
        assert_eq!(cloud.points()[1], Point3::new(4.0, 5.0, 6.0));
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("red"));
    }

    #[test]
    fn faces_after_vertices_are_ignored() {
        let text = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\n\
element face 1\nproperty list uchar int vertex_indices\nend_header\n1 2 3\n3 0 0 0\n";
        let (cloud, _) = read_ply(text).unwrap();
        assert_eq!(cloud.len(), 1);
    }

    #[test]
    fn bad_tags_are_rejected() {
        let text = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\n\
property uchar tag\nend_header\n1 2 3 7\n";
        assert!(matches!(read_ply(text), Err(Error::MalformedFile { .. })));
    }

    #[test]
    fn pfm_roundtrip_and_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let map = DisparityMap::new(
            2,
            2,
            vec![0.25, 0.5, 0.0, 1.0],
            vec![true, true, false, true],
        )
        .unwrap();
        write_disparity(&map, &path).unwrap();
        assert_eq!(read_disparity(&path).unwrap(), map);
        // first stored row is the bottom image row
        let bytes = fs::read(&path).unwrap();
        let (_, body) = header_tokens(&bytes, 4, false).unwrap();
        assert_eq!(
            f32::from_le_bytes(bytes[body..body + 4].try_into().unwrap()),
            0.0
        );
        assert!(dir.path().join("d.pfm.mask.pgm").exists());
    }

    #[test]
    fn missing_mask_falls_back_to_positive_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        fs::write(&path, encode_pfm(2, 1, &[0.0, 0.5])).unwrap();
        assert_eq!(read_disparity(&path).unwrap().mask(), &[false, true]);
    }

    #[test]
    fn mask_size_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        fs::write(&path, encode_pfm(2, 2, &[0.0; 4])).unwrap();
        fs::write(mask_path(&path), encode_pgm(3, 3, &[255; 9])).unwrap();
        assert!(matches!(
            read_disparity(&path),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn big_endian_pfm_and_pgm_comments() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&0.75f32.to_be_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap().2, vec![0.75]);
        let pgm = b"P5\n# comment\n2 1\n255\n\xff\x00";
        assert_eq!(decode_pgm(pgm).unwrap().3, vec![255, 0]);
        assert!(decode_pfm(b"PF\n1 1\n-1.0\n0000").is_err());
        assert!(decode_pfm(b"Pf\n2 2\n-1.0\n0000").is_err());
    }

    proptest! {
        #[test]
        fn clouds_roundtrip_bit_exact(
            raw in prop::collection::vec((any::<f32>(), any::<f32>(), any::<f32>(), 0u8..3), 1..40),
            fmt in 0usize..3,
        ) {
            let raw: Vec<_> = raw.into_iter().filter(|(x, y, z, _)| x.is_finite() && y.is_finite() && z.is_finite()).collect();
            prop_assume!(!raw.is_empty());
            let points = raw.iter().map(|&(x, y, z, _)| Point3::new(x as f64, y as f64, z as f64)).collect();
            let tags = raw.iter().map(|r| Tag::from_code(r.3).unwrap()).collect();
            let cloud = PointCloud::with_tags(points, tags).unwrap();
            let format = [CloudFormat::PlyBinary, CloudFormat::PlyAscii, CloudFormat::Xyz][fmt];
            let back = roundtrip(&cloud, format);
            let expected = if format == CloudFormat::Xyz { cloud.untagged() } else { cloud };
            for (a, b) in back.points().iter().zip(expected.points()) {
                for c in 0..3 {
                    prop_assert_eq!(a[c].to_bits(), b[c].to_bits());
                }
            }
            prop_assert_eq!(back, expected);
        }
    }
}

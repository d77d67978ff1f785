//! PLY point-cloud reader and writer.
//!
//! Reads ASCII and binary little-endian files, extracting x/y/z (float or
//! double) and an optional uchar red/green/blue triple. Any other property,
//! scalar or list, is skipped by its declared size. Count mismatches between
//! header and payload are hard errors carrying a line or byte offset.

use std::fs;
use std::path::Path;

use crate::geometry::{FrameTag, SceneCloud, Vec3};

use super::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

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
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
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
            Scalar::I32 | Scalar::U32 => 4,
            Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_f64(self, bytes: &[u8]) -> f64 {
        match self {
            Scalar::I8 => bytes[0] as i8 as f64,
            Scalar::U8 => bytes[0] as f64,
            Scalar::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }

    fn read_usize(self, bytes: &[u8]) -> usize {
        self.read_f64(bytes) as usize
    }
}

#[derive(Debug, Clone)]
enum PropKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    /// Byte offset of the first payload byte.
    payload_start: usize,
    /// 1-based line number of the first payload line (ASCII payloads).
    payload_line: usize,
}

fn malformed(line: usize, msg: impl Into<String>) -> IoError {
    IoError::PlyHeader { line, msg: msg.into() }
}

fn parse_header(data: &[u8]) -> Result<Header, IoError> {
    let mut offset = 0usize;
    let mut line_no = 0usize;
    let mut lines = Vec::new();
    while offset < data.len() {
        let end = data[offset..].iter().position(|&b| b == b'\n').map(|p| offset + p);
        let line_end = end.unwrap_or(data.len());
        let raw = &data[offset..line_end];
        let text = std::str::from_utf8(raw)
            .map_err(|_| malformed(line_no + 1, "non-UTF-8 header line"))?
            .trim_end_matches('\r');
        line_no += 1;
        lines.push((line_no, text.to_string()));
        offset = line_end + 1;
        if text.trim() == "end_header" {
            let mut header = Header {
                format: PlyFormat::Ascii,
                elements: Vec::new(),
                payload_start: offset,
                payload_line: line_no + 1,
            };
            build_header(&lines, &mut header)?;
            return Ok(header);
        }
    }
    Err(malformed(line_no, "missing end_header"))
}

fn build_header(lines: &[(usize, String)], header: &mut Header) -> Result<(), IoError> {
    let mut iter = lines.iter();
    let (l, first) = iter.next().ok_or_else(|| malformed(1, "empty file"))?;
    if first.trim() != "ply" {
        return Err(malformed(*l, "file does not start with 'ply'"));
    }
    let mut format_seen = false;
    for (line, text) in iter {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        match tokens.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] | ["end_header"] => {}
            ["format", fmt, "1.0"] => {
                header.format = match *fmt {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(malformed(*line, format!("unsupported format '{other}'"))),
                };
                format_seen = true;
            }
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| malformed(*line, format!("bad element count '{count}'")))?;
                header.elements.push(Element { name: (*name).into(), count, props: Vec::new() });
            }
            ["property", "list", count_ty, item_ty, name] => {
                let count = Scalar::parse(count_ty)
                    .ok_or_else(|| malformed(*line, format!("unknown type '{count_ty}'")))?;
                let item = Scalar::parse(item_ty)
                    .ok_or_else(|| malformed(*line, format!("unknown type '{item_ty}'")))?;
                header
                    .elements
                    .last_mut()
                    .ok_or_else(|| malformed(*line, "property before any element"))?
                    .props
                    .push(Property { name: (*name).into(), kind: PropKind::List { count, item } });
            }
            ["property", ty, name] => {
                let scalar = Scalar::parse(ty)
                    .ok_or_else(|| malformed(*line, format!("unknown type '{ty}'")))?;
                header
                    .elements
                    .last_mut()
                    .ok_or_else(|| malformed(*line, "property before any element"))?
                    .props
                    .push(Property { name: (*name).into(), kind: PropKind::Scalar(scalar) });
            }
            _ => return Err(malformed(*line, format!("unrecognized header line '{text}'"))),
        }
    }
    if !format_seen {
        return Err(malformed(1, "missing format line"));
    }
    Ok(())
}

struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
}

fn vertex_layout(elem: &Element) -> Result<VertexLayout, IoError> {
    let mut xyz = [usize::MAX; 3];
    let mut rgb = [usize::MAX; 3];
    for (i, p) in elem.props.iter().enumerate() {
        let slot = match p.name.as_str() {
            "x" => Some((&mut xyz, 0)),
            "y" => Some((&mut xyz, 1)),
            "z" => Some((&mut xyz, 2)),
            "red" => Some((&mut rgb, 0)),
            "green" => Some((&mut rgb, 1)),
            "blue" => Some((&mut rgb, 2)),
            _ => None,
        };
        if let Some((arr, k)) = slot {
            match p.kind {
                PropKind::Scalar(_) => arr[k] = i,
                PropKind::List { .. } => {
                    return Err(IoError::PlyHeader {
                        line: 0,
                        msg: format!("vertex property '{}' must be scalar", p.name),
                    })
                }
            }
        }
    }
    for (axis, idx) in ["x", "y", "z"].iter().zip(xyz) {
        if idx == usize::MAX {
            return Err(IoError::PlyMissingProperty { name: (*axis).into() });
        }
    }
    let rgb = if rgb.iter().all(|&i| i != usize::MAX) { Some(rgb) } else { None };
    Ok(VertexLayout { xyz, rgb })
}

/// Loads a point cloud, tagging it with the caller's frame of reference.
pub fn load_point_cloud(path: &Path, tag: FrameTag) -> Result<SceneCloud, IoError> {
    let data = fs::read(path).map_err(|e| IoError::file(path, e))?;
    let header = parse_header(&data)?;
    match header.format {
        PlyFormat::Ascii => read_ascii(&data, &header),
        PlyFormat::BinaryLittleEndian => read_binary(&data, &header),
    }
    .map(|(points, colors)| SceneCloud::new(points, colors, tag))
}

type PointsColors = (Vec<Vec3>, Option<Vec<[u8; 3]>>);

fn read_ascii(data: &[u8], header: &Header) -> Result<PointsColors, IoError> {
    let text = std::str::from_utf8(&data[header.payload_start..])
        .map_err(|_| IoError::PlyPayload { at: format!("line {}", header.payload_line), msg: "non-UTF-8 payload".into() })?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (header.payload_line + i, l));
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut layout = None;
    for elem in &header.elements {
        let is_vertex = elem.name == "vertex";
        if is_vertex {
            layout = Some(vertex_layout(elem)?);
            points.reserve(elem.count);
        }
        for row in 0..elem.count {
            let (line_no, line) = loop {
                match lines.next() {
                    Some((n, l)) if l.trim().is_empty() => {
                        let _ = (n, l);
                    }
                    Some(pair) => break pair,
                    None => {
                        return Err(IoError::PlyCount {
                            at: format!("line {}", header.payload_line),
                            msg: format!(
                                "element '{}' declares {} rows but payload ends at row {row}",
                                elem.name, elem.count
                            ),
                        })
                    }
                }
            };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let mut cursor = 0usize;
            let mut values = vec![0.0f64; elem.props.len()];
            for (pi, prop) in elem.props.iter().enumerate() {
                match prop.kind {
                    PropKind::Scalar(_) => {
                        let tok = tokens.get(cursor).ok_or_else(|| IoError::PlyPayload {
                            at: format!("line {line_no}"),
                            msg: format!("missing value for property '{}'", prop.name),
                        })?;
                        values[pi] = tok.parse().map_err(|_| IoError::PlyPayload {
                            at: format!("line {line_no}"),
                            msg: format!("bad numeric value '{tok}'"),
                        })?;
                        cursor += 1;
                    }
                    PropKind::List { .. } => {
                        let tok = tokens.get(cursor).ok_or_else(|| IoError::PlyPayload {
                            at: format!("line {line_no}"),
                            msg: "missing list count".into(),
                        })?;
                        let n: usize = tok.parse().map_err(|_| IoError::PlyPayload {
                            at: format!("line {line_no}"),
                            msg: format!("bad list count '{tok}'"),
                        })?;
                        cursor += 1 + n;
                        if cursor > tokens.len() {
                            return Err(IoError::PlyPayload {
                                at: format!("line {line_no}"),
                                msg: "list shorter than its count".into(),
                            });
                        }
                    }
                }
            }
            if is_vertex {
                let l = layout.as_ref().unwrap();
                points.push(Vec3::new(values[l.xyz[0]], values[l.xyz[1]], values[l.xyz[2]]));
                if let Some(rgb) = l.rgb {
                    colors.push([values[rgb[0]] as u8, values[rgb[1]] as u8, values[rgb[2]] as u8]);
                }
            }
        }
    }
    for (line_no, line) in lines {
        if !line.trim().is_empty() {
            return Err(IoError::PlyCount {
                at: format!("line {line_no}"),
                msg: "payload has more rows than the header declares".into(),
            });
        }
    }
    let colors = if colors.len() == points.len() && !points.is_empty() { Some(colors) } else { None };
    Ok((points, colors))
}

fn read_binary(data: &[u8], header: &Header) -> Result<PointsColors, IoError> {
    let mut offset = header.payload_start;
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for elem in &header.elements {
        let is_vertex = elem.name == "vertex";
        let layout = if is_vertex { Some(vertex_layout(elem)?) } else { None };
        if is_vertex {
            points.reserve(elem.count);
        }
        for _ in 0..elem.count {
            let mut prop_offsets = vec![0usize; elem.props.len()];
            for (pi, prop) in elem.props.iter().enumerate() {
                prop_offsets[pi] = offset;
                let need = match prop.kind {
                    PropKind::Scalar(s) => s.size(),
                    PropKind::List { count, item } => {
                        ensure_bytes(data, offset, count.size(), elem)?;
                        let n = count.read_usize(&data[offset..]);
                        count.size() + n * item.size()
                    }
                };
                ensure_bytes(data, offset, need, elem)?;
                offset += need;
            }
            if let Some(l) = &layout {
                let mut coords = [0.0f64; 3];
                for (k, &pi) in l.xyz.iter().enumerate() {
                    if let PropKind::Scalar(s) = elem.props[pi].kind {
                        coords[k] = s.read_f64(&data[prop_offsets[pi]..]);
                    }
                }
                points.push(Vec3::new(coords[0], coords[1], coords[2]));
                if let Some(rgb) = l.rgb {
                    let mut c = [0u8; 3];
                    for (k, &pi) in rgb.iter().enumerate() {
                        c[k] = data[prop_offsets[pi]];
                    }
                    colors.push(c);
                }
            }
        }
    }
    if offset != data.len() {
        return Err(IoError::PlyCount {
            at: format!("byte {offset}"),
            msg: format!("{} trailing bytes beyond declared elements", data.len() - offset),
        });
    }
    let colors = if colors.len() == points.len() && !points.is_empty() { Some(colors) } else { None };
    Ok((points, colors))
}

fn ensure_bytes(data: &[u8], offset: usize, need: usize, elem: &Element) -> Result<(), IoError> {
    if offset + need > data.len() {
        return Err(IoError::PlyCount {
            at: format!("byte {offset}"),
            msg: format!("payload truncated inside element '{}'", elem.name),
        });
    }
    Ok(())
}

/// Writes a point cloud; coordinates are stored as doubles so binary output
/// round-trips bit for bit.
pub fn save_point_cloud(path: &Path, cloud: &SceneCloud, format: PlyFormat) -> Result<(), IoError> {
    let mut header = String::from("ply\n");
    header.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    header.push_str(&format!("element vertex {}\n", cloud.points.len()));
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");

    let mut out: Vec<u8> = header.into_bytes();
    match format {
        PlyFormat::Ascii => {
            for (i, p) in cloud.points.iter().enumerate() {
                let mut line = format!("{:?} {:?} {:?}", p.x, p.y, p.z);
                if let Some(colors) = &cloud.colors {
                    let c = colors[i];
                    line.push_str(&format!(" {} {} {}", c[0], c[1], c[2]));
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for (i, p) in cloud.points.iter().enumerate() {
                for v in [p.x, p.y, p.z] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(colors) = &cloud.colors {
                    out.extend_from_slice(&colors[i]);
                }
            }
        }
    }
    fs::write(path, out).map_err(|e| IoError::file(path, e))
}

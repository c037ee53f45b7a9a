//! PLY point clouds: ASCII and binary little-endian.
//!
//! Only the `vertex` element is interpreted (`x`, `y`, `z` and optionally
//! `red`, `green`, `blue`); every other element and property is skipped.

use std::path::Path;

use radmap_core::{PointCloud, Vec3};

use crate::error::{self, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlyError {
    #[error("PLY header line {line}: {msg}")]
    Header { line: usize, msg: String },
    #[error("unsupported PLY: {0}")]
    Unsupported(String),
    #[error("PLY body: {0}")]
    Body(String),
}

impl From<PlyError> for Error {
    fn from(e: PlyError) -> Self {
        Error::Format(e.to_string())
    }
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
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
    line: usize,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let err = |line: usize, msg: &str| PlyError::Header { line, msg: msg.to_string() };
    let mut offset = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line_no += 1;
        let Some(end) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            return Err(err(line_no, "missing end_header"));
        };
        let raw = &bytes[offset..offset + end];
        offset += end + 1;
        let line = std::str::from_utf8(raw).map_err(|_| err(line_no, "header is not text"))?.trim_end_matches('\r');
        let words: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if line != "ply" {
                return Err(err(1, "missing 'ply' magic"));
            }
            continue;
        }
        match words.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                format = Some(match words.get(1).copied() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some("binary_big_endian") => {
                        return Err(PlyError::Unsupported("big-endian payloads are not supported".into()))
                    }
                    _ => return Err(err(line_no, "unknown format")),
                });
                if words.get(2) != Some(&"1.0") {
                    return Err(err(line_no, "unsupported format version"));
                }
            }
            Some("element") => {
                let (Some(name), Some(count), None) = (words.get(1), words.get(2), words.get(3)) else {
                    return Err(err(line_no, "expected 'element <name> <count>'"));
                };
                let count = count.parse().map_err(|_| err(line_no, "invalid element count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                    line: line_no,
                });
            }
            Some("property") => {
                let Some(el) = elements.last_mut() else {
                    return Err(err(line_no, "property before any element"));
                };
                let prop = match words.get(1).copied() {
                    Some("list") => {
                        let (Some(c), Some(i), Some(_), None) = (words.get(2), words.get(3), words.get(4), words.get(5))
                        else {
                            return Err(err(line_no, "expected 'property list <count type> <item type> <name>'"));
                        };
                        let count = Scalar::parse(c).ok_or_else(|| err(line_no, "unknown type"))?;
                        if matches!(count, Scalar::F32 | Scalar::F64) {
                            return Err(err(line_no, "list count must be an integer type"));
                        }
                        let item = Scalar::parse(i).ok_or_else(|| err(line_no, "unknown type"))?;
                        Property::List { count, item }
                    }
                    Some(t) => {
                        let (Some(name), None) = (words.get(2), words.get(3)) else {
                            return Err(err(line_no, "expected 'property <type> <name>'"));
                        };
                        let ty = Scalar::parse(t).ok_or_else(|| err(line_no, "unknown type"))?;
                        Property::Scalar {
                            name: name.to_string(),
                            ty,
                        }
                    }
                    None => return Err(err(line_no, "empty property")),
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(err(line_no, &format!("unexpected keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| err(line_no, "no format line before end_header"))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset,
    })
}

/// Column indices of the vertex properties we read.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<([usize; 3], Scalar)>,
}

fn vertex_layout(el: &Element) -> Result<VertexLayout, PlyError> {
    let find = |n: &str| {
        el.props.iter().position(|p| matches!(p, Property::Scalar { name, .. } if name == n))
    };
    let mut xyz = [0; 3];
    for (k, n) in ["x", "y", "z"].into_iter().enumerate() {
        xyz[k] = find(n).ok_or_else(|| PlyError::Header {
            line: el.line,
            msg: format!("vertex element has no '{n}' property"),
        })?;
    }
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => {
            let ty = |i: usize| match el.props[i] {
                Property::Scalar { ty, .. } => ty,
                Property::List { .. } => unreachable!(),
            };
            if ty(r) != ty(g) || ty(r) != ty(b) {
                return Err(PlyError::Unsupported("colour channels of different types".into()));
            }
            if !matches!(ty(r), Scalar::U8 | Scalar::F32 | Scalar::F64) {
                return Err(PlyError::Unsupported("colours must be uchar, float or double".into()));
            }
            Some(([r, g, b], ty(r)))
        }
        (None, None, None) => None,
        _ => {
            return Err(PlyError::Header {
                line: el.line,
                msg: "vertex colour needs all of red, green and blue".into(),
            })
        }
    };
    Ok(VertexLayout { xyz, rgb })
}

/// Reads element instances one value at a time from either encoding.
trait ValueSource {
    fn next(&mut self, ty: Scalar) -> Result<f64, PlyError>;
}

struct AsciiSource<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl ValueSource for AsciiSource<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64, PlyError> {
        let tok = self.tokens.next().ok_or_else(|| PlyError::Body("unexpected end of data".into()))?;
        let bad = |_| PlyError::Body(format!("invalid number '{tok}'"));
        match ty {
            Scalar::F32 => tok.parse::<f32>().map(f64::from).map_err(bad),
            _ => tok.parse::<f64>().map_err(bad),
        }
    }
}

struct BinarySource<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ValueSource for BinarySource<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64, PlyError> {
        let n = ty.size();
        if self.pos + n > self.bytes.len() {
            return Err(PlyError::Body("unexpected end of data".into()));
        }
        let v = ty.read_le(&self.bytes[self.pos..]);
        self.pos += n;
        Ok(v)
    }
}

fn read_elements(header: &Header, src: &mut dyn ValueSource) -> Result<PointCloud, PlyError> {
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut has_colors = false;
    let mut seen_vertex = false;
    for el in &header.elements {
        let layout = if el.name == "vertex" && !seen_vertex {
            seen_vertex = true;
            let l = vertex_layout(el)?;
            has_colors = l.rgb.is_some();
            positions.reserve(el.count);
            Some(l)
        } else {
            None
        };
        let mut row = vec![0.0; el.props.len()];
        for _ in 0..el.count {
            for (k, p) in el.props.iter().enumerate() {
                match *p {
                    Property::Scalar { ty, .. } => row[k] = src.next(ty)?,
                    Property::List { count, item } => {
                        let n = src.next(count)?;
                        if n < 0.0 {
                            return Err(PlyError::Body("negative list length".into()));
                        }
                        for _ in 0..n as usize {
                            src.next(item)?;
                        }
                    }
                }
            }
            if let Some(l) = &layout {
                positions.push(Vec3::new(row[l.xyz[0]], row[l.xyz[1]], row[l.xyz[2]]));
                if let Some((rgb, ty)) = l.rgb {
                    let s = if ty == Scalar::U8 { 255.0 } else { 1.0 };
                    colors.push(rgb.map(|i| row[i] / s));
                }
            }
        }
    }
    if !seen_vertex {
        return Err(PlyError::Header {
            line: header.elements.last().map_or(1, |e| e.line),
            msg: "no vertex element".into(),
        });
    }
    PointCloud::new(positions, has_colors.then_some(colors)).map_err(|e| PlyError::Body(e.to_string()))
}

pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud, PlyError> {
    let header = parse_header(bytes)?;
    let body = &bytes[header.body_offset..];
    match header.format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| PlyError::Body("ASCII body is not text".into()))?;
            read_elements(
                &header,
                &mut AsciiSource {
                    tokens: text.split_ascii_whitespace(),
                },
            )
        }
        PlyFormat::BinaryLittleEndian => read_elements(&header, &mut BinarySource { bytes: body, pos: 0 }),
    }
}

/// Positions are stored as `float`, colours as `uchar`.
pub fn encode_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let colors = cloud.colors();
    let mut out = String::from("ply\n");
    out += match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    };
    out += &format!("element vertex {}\n", cloud.len());
    out += "property float x\nproperty float y\nproperty float z\n";
    if colors.is_some() {
        out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    out += "end_header\n";
    let mut bytes = out.into_bytes();
    let byte = |c: f64| (c.clamp(0.0, 1.0) * 255.0).round() as u8;
    for (i, p) in cloud.positions().iter().enumerate() {
        let xyz = p.to_array().map(|v| v as f32);
        let rgb = colors.map(|c| c[i].map(byte));
        match format {
            PlyFormat::Ascii => {
                let mut line = format!("{} {} {}", xyz[0], xyz[1], xyz[2]);
                if let Some(c) = rgb {
                    line += &format!(" {} {} {}", c[0], c[1], c[2]);
                }
                line.push('\n');
                bytes.extend_from_slice(line.as_bytes());
            }
            PlyFormat::BinaryLittleEndian => {
                xyz.iter().for_each(|v| bytes.extend_from_slice(&v.to_le_bytes()));
                if let Some(c) = rgb {
                    bytes.extend_from_slice(&c);
                }
            }
        }
    }
    bytes
}

pub fn load_ply(path: &Path) -> Result<PointCloud> {
    let bytes = error::read(path)?;
    parse_ply(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn save_ply(cloud: &PointCloud, path: &Path, format: PlyFormat) -> Result<()> {
    error::write(path, &encode_ply(cloud, format))
}

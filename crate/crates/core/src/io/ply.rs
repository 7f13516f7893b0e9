//! PLY point clouds and meshes.
//!
//! Reads `ascii` and `binary_little_endian` files with a `vertex` element
//! carrying `x y z` and optionally `nx ny nz` and `red green blue`, plus an
//! optional `face` element whose polygons are fan-triangulated. Unknown
//! elements and properties are skipped. Colors stored as `uchar` are rescaled
//! to [0, 1].

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::PointCloud;

const CTX: &str = "PLY";

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
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::parse(CTX, format!("unknown property type {other:?}"))),
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
    body_offset: usize,
}

fn parse_header(buf: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &buf[pos..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(Error::parse(CTX, "header not terminated by end_header"));
        };
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::parse(CTX, "header is not utf-8"))?
            .trim_end_matches('\r')
            .to_string();
        pos += nl + 1;
        if line.trim() == "end_header" {
            break;
        }
        lines.push(line);
    }
    let mut it = lines.iter();
    if it.next().map(|l| l.trim()) != Some("ply") {
        return Err(Error::parse(CTX, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in it {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "binary_big_endian" => {
                        return Err(Error::Unsupported("big-endian PLY is not supported".into()))
                    }
                    other => return Err(Error::parse(CTX, format!("unknown format {other:?}"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::parse(CTX, format!("bad element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(CTX, "property before element"))?;
                el.props.push(Property {
                    name: name.to_string(),
                    kind: PropKind::List {
                        count: Scalar::parse(count)?,
                        item: Scalar::parse(item)?,
                    },
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(CTX, "property before element"))?;
                el.props.push(Property {
                    name: name.to_string(),
                    kind: PropKind::Scalar(Scalar::parse(ty)?),
                });
            }
            _ => return Err(Error::parse(CTX, format!("malformed header line {line:?}"))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| Error::parse(CTX, "missing format line"))?,
        elements,
        body_offset: pos,
    })
}

/// Source of scalar values, independent of encoding.
trait ValueSource {
    fn next(&mut self, ty: Scalar) -> Result<f64>;
}

struct AsciiSource<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl ValueSource for AsciiSource<'_> {
    fn next(&mut self, _ty: Scalar) -> Result<f64> {
        let tok = self
            .tokens
            .next()
            .ok_or_else(|| Error::parse(CTX, "truncated payload"))?;
        tok.parse()
            .map_err(|_| Error::parse(CTX, format!("bad number {tok:?}")))
    }
}

struct BinarySource<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl ValueSource for BinarySource<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64> {
        let n = ty.size();
        if self.buf.len() - self.pos < n {
            return Err(Error::parse(CTX, "truncated payload"));
        }
        let b = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(match ty {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        })
    }
}

fn read_body(header: &Header, src: &mut dyn ValueSource) -> Result<PointCloud> {
    let mut cloud = PointCloud::default();
    let mut saw_vertex = false;
    for el in &header.elements {
        let find = |name: &str| el.props.iter().position(|p| p.name == name);
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let (xyz, nxyz, rgb) = if is_vertex {
            saw_vertex = true;
            let xyz = [find("x"), find("y"), find("z")];
            if xyz.iter().any(|p| p.is_none()) {
                return Err(Error::parse(CTX, "vertex element lacks x/y/z"));
            }
            let nxyz = [find("nx"), find("ny"), find("nz")];
            let rgb = [find("red"), find("green"), find("blue")];
            (
                xyz.map(|p| p.unwrap()),
                nxyz.iter().all(|p| p.is_some()).then(|| nxyz.map(|p| p.unwrap())),
                rgb.iter().all(|p| p.is_some()).then(|| rgb.map(|p| p.unwrap())),
            )
        } else {
            ([0; 3], None, None)
        };
        let face_prop = if is_face {
            find("vertex_indices").or_else(|| find("vertex_index"))
        } else {
            None
        };
        if is_vertex {
            cloud.positions.reserve(el.count.min(1 << 20));
            if nxyz.is_some() {
                cloud.normals = Some(Vec::with_capacity(el.count.min(1 << 20)));
            }
            if rgb.is_some() {
                cloud.colors = Some(Vec::with_capacity(el.count.min(1 << 20)));
            }
        }
        let mut row = vec![0f64; el.props.len()];
        let mut list: Vec<f64> = Vec::new();
        for _ in 0..el.count {
            for (pi, prop) in el.props.iter().enumerate() {
                match prop.kind {
                    PropKind::Scalar(ty) => row[pi] = src.next(ty)?,
                    PropKind::List { count, item } => {
                        let n = src.next(count)?;
                        if n < 0.0 {
                            return Err(Error::parse(CTX, "negative list length"));
                        }
                        list.clear();
                        for _ in 0..n as usize {
                            list.push(src.next(item)?);
                        }
                        if Some(pi) == face_prop {
                            for k in 1..list.len().saturating_sub(1) {
                                cloud.faces.push([list[0] as u32, list[k] as u32, list[k + 1] as u32]);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                cloud
                    .positions
                    .push(xyz.map(|i| row[i] as f32));
                if let (Some(idx), Some(normals)) = (nxyz, cloud.normals.as_mut()) {
                    normals.push(idx.map(|i| row[i] as f32));
                }
                if let (Some(idx), Some(colors)) = (rgb, cloud.colors.as_mut()) {
                    let scale = match el.props[idx[0]].kind {
                        PropKind::Scalar(Scalar::U8) => 1.0 / 255.0,
                        PropKind::Scalar(Scalar::U16) => 1.0 / 65535.0,
                        _ => 1.0,
                    };
                    colors.push(idx.map(|i| (row[i] * scale) as f32));
                }
            }
        }
    }
    if !saw_vertex {
        return Err(Error::parse(CTX, "no vertex element"));
    }
    normalize_loaded_normals(&mut cloud);
    cloud.validate()?;
    Ok(cloud)
}

fn normalize_loaded_normals(cloud: &mut PointCloud) {
    let Some(normals) = cloud.normals.as_mut() else {
        return;
    };
    let mut degenerate = false;
    for n in normals.iter_mut() {
        let len = n.iter().map(|c| (*c as f64).powi(2)).sum::<f64>().sqrt();
        if !(len > 1e-9) || !len.is_finite() {
            degenerate = true;
            break;
        }
        if (len - 1.0).abs() > 1e-6 {
            *n = n.map(|c| (c as f64 / len) as f32);
        }
    }
    if degenerate {
        log::warn!("PLY contains zero-length normals; they will be re-estimated");
        cloud.normals = None;
    }
}

pub fn parse_ply(buf: &[u8]) -> Result<PointCloud> {
    let header = parse_header(buf)?;
    let body = &buf[header.body_offset..];
    match header.format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| Error::parse(CTX, "ascii body is not utf-8"))?;
            read_body(
                &header,
                &mut AsciiSource {
                    tokens: text.split_ascii_whitespace(),
                },
            )
        }
        PlyFormat::BinaryLittleEndian => read_body(&header, &mut BinarySource { buf: body, pos: 0 }),
    }
}

pub fn load_point_cloud(path: &Path) -> Result<PointCloud> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&buf).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
        other => other,
    })
}

fn to_u8(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-vertex colors as bytes, overriding `cloud.colors` when given.
pub fn ply_bytes(cloud: &PointCloud, format: PlyFormat, colors_u8: Option<&[[u8; 3]]>) -> Vec<u8> {
    let n = cloud.len();
    let owned_colors: Option<Vec<[u8; 3]>> = match (colors_u8, &cloud.colors) {
        (Some(_), _) => None,
        (None, Some(c)) => Some(c.iter().map(|c| c.map(to_u8)).collect()),
        (None, None) => None,
    };
    let colors = colors_u8.or(owned_colors.as_deref());

    let mut header = String::new();
    header.push_str("ply\n");
    header.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    let _ = writeln!(header, "element vertex {n}");
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.normals.is_some() {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if !cloud.faces.is_empty() {
        let _ = writeln!(header, "element face {}", cloud.faces.len());
        header.push_str("property list uchar int vertex_indices\n");
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    match format {
        PlyFormat::Ascii => {
            let mut s = String::new();
            for i in 0..n {
                let p = cloud.positions[i];
                let _ = write!(s, "{} {} {}", p[0], p[1], p[2]);
                if let Some(normals) = &cloud.normals {
                    let v = normals[i];
                    let _ = write!(s, " {} {} {}", v[0], v[1], v[2]);
                }
                if let Some(c) = colors {
                    let _ = write!(s, " {} {} {}", c[i][0], c[i][1], c[i][2]);
                }
                s.push('\n');
            }
            for f in &cloud.faces {
                let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
            }
            out.extend_from_slice(s.as_bytes());
        }
        PlyFormat::BinaryLittleEndian => {
            for i in 0..n {
                for c in cloud.positions[i] {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                if let Some(normals) = &cloud.normals {
                    for c in normals[i] {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                }
                if let Some(c) = colors {
                    out.extend_from_slice(&c[i]);
                }
            }
            for f in &cloud.faces {
                out.push(3);
                for v in f {
                    out.extend_from_slice(&(*v as i32).to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn write_point_cloud(cloud: &PointCloud, path: &Path, format: PlyFormat) -> Result<()> {
    std::fs::write(path, ply_bytes(cloud, format, None)).map_err(|e| Error::io(path, e))
}

use std::fmt::Write as _;
use std::path::Path;

use crate::cloud::{PointCloud, TriangleMesh};
use crate::error::{Error, Result};

/// Contents of a PLY file: a mesh when it carries faces, a point cloud
/// otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum PlyData {
    Cloud(PointCloud),
    Mesh(TriangleMesh),
}

impl PlyData {
    /// The point set: the cloud itself, or the mesh vertices.
    pub fn into_cloud(self) -> Result<PointCloud> {
        match self {
            PlyData::Cloud(c) => Ok(c),
            PlyData::Mesh(m) => PointCloud::new(m.vertices().to_vec()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PlyWriteOptions {
    pub binary: bool,
    /// Write a 3-wide feature block as `red green blue` bytes.
    pub color: bool,
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
    fn parse(s: &str) -> Option<Self> {
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

    /// Largest value of an integer type, used to map color channels to [0, 1].
    fn int_max(self) -> Option<f64> {
        match self {
            Scalar::I8 => Some(i8::MAX as f64),
            Scalar::U8 => Some(u8::MAX as f64),
            Scalar::I16 => Some(i16::MAX as f64),
            Scalar::U16 => Some(u16::MAX as f64),
            Scalar::I32 => Some(i32::MAX as f64),
            Scalar::U32 => Some(u32::MAX as f64),
            Scalar::F32 | Scalar::F64 => None,
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
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_start: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let err = |m: String| Error::parse(path, m);
    let mut pos = 0;
    let mut next_line = || -> Option<String> {
        if pos >= bytes.len() {
            return None;
        }
        let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| pos + i);
        let line = String::from_utf8_lossy(&bytes[pos..end]).trim_end_matches('\r').to_string();
        pos = (end + 1).min(bytes.len());
        Some(line)
    };
    if next_line().as_deref().map(str::trim) != Some("ply") {
        return Err(err("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = next_line().ok_or_else(|| err("header ended without end_header".into()))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    "binary_big_endian" => return Err(err("big-endian PLY is not supported".into())),
                    other => return Err(err(format!("unknown PLY format '{other}'"))),
                })
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| err(format!("bad element count '{count}'")))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| err("property before any element".into()))?;
                let count = Scalar::parse(ct).ok_or_else(|| err(format!("unknown type '{ct}'")))?;
                let item = Scalar::parse(it).ok_or_else(|| err(format!("unknown type '{it}'")))?;
                el.props.push(Property::List { name: name.to_string(), count, item });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| err("property before any element".into()))?;
                let ty = Scalar::parse(ty).ok_or_else(|| err(format!("unknown type '{ty}'")))?;
                el.props.push(Property::Scalar { name: name.to_string(), ty });
            }
            ["end_header"] => break,
            _ => return Err(err(format!("malformed header line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| err("header has no format line".into()))?;
    Ok(Header { format, elements, body_start: pos })
}

/// Sequential reader over the body, ASCII tokens or little-endian binary.
struct Body<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
    format: Format,
}

impl Body<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        match self.format {
            Format::BinaryLe => {
                let n = ty.size();
                if self.pos + n > self.bytes.len() {
                    return Err(Error::parse(self.path, "binary body truncated"));
                }
                let v = ty.read_le(&self.bytes[self.pos..self.pos + n]);
                self.pos += n;
                Ok(v)
            }
            Format::Ascii => {
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                    self.pos += 1;
                }
                let start = self.pos;
                while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
                    self.pos += 1;
                }
                if start == self.pos {
                    return Err(Error::parse(self.path, "ASCII body truncated"));
                }
                let tok = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("?");
                tok.parse::<f64>().map_err(|_| Error::parse(self.path, format!("bad number '{tok}'")))
            }
        }
    }
}

/// Reads ASCII or binary little-endian PLY. `x y z` are required on the
/// vertex element; `red green blue` become features scaled to [0, 1] and
/// `f_0 … f_{F−1}` are appended after them. A face element yields a mesh.
pub fn read_ply(path: &Path) -> Result<PlyData> {
    let bytes = super::read_bytes(path)?;
    let header = parse_header(path, &bytes)?;
    let mut body = Body { path, bytes: &bytes, pos: header.body_start, format: header.format };

    let mut coords = Vec::new();
    let mut features = Vec::new();
    let mut feature_width = 0;
    let mut faces = Vec::new();
    let mut saw_faces = false;
    let mut saw_vertices = false;

    for el in &header.elements {
        let mut row = vec![0.0; el.props.len()];
        let mut lists: Vec<Vec<f64>> = vec![Vec::new(); el.props.len()];
        match el.name.as_str() {
            "vertex" => {
                saw_vertices = true;
                let find = |n: &str| el.props.iter().position(|p| p.name() == n);
                let (Some(xi), Some(yi), Some(zi)) = (find("x"), find("y"), find("z")) else {
                    return Err(Error::parse(path, "vertex element lacks x, y or z"));
                };
                let mut feat_cols: Vec<(usize, Option<f64>)> = Vec::new();
                if let (Some(r), Some(g), Some(b)) = (find("red"), find("green"), find("blue")) {
                    for c in [r, g, b] {
                        let Property::Scalar { ty, .. } = el.props[c] else {
                            return Err(Error::parse(path, "color channel must be a scalar"));
                        };
                        feat_cols.push((c, ty.int_max()));
                    }
                }
                let mut f = 0;
                while let Some(c) = find(&format!("f_{f}")) {
                    feat_cols.push((c, None));
                    f += 1;
                }
                feature_width = feat_cols.len();
                for _ in 0..el.count {
                    read_row(&mut body, el, &mut row, &mut lists)?;
                    coords.push([row[xi], row[yi], row[zi]]);
                    for &(c, max) in &feat_cols {
                        features.push(max.map_or(row[c], |m| row[c] / m));
                    }
                }
            }
            "face" => {
                saw_faces = el.count > 0;
                let li = el
                    .props
                    .iter()
                    .position(|p| matches!(p, Property::List { name, .. } if name == "vertex_indices" || name == "vertex_index"))
                    .ok_or_else(|| Error::parse(path, "face element lacks vertex_indices"))?;
                for _ in 0..el.count {
                    read_row(&mut body, el, &mut row, &mut lists)?;
                    let poly = &lists[li];
                    if poly.len() < 3 {
                        return Err(Error::parse(path, format!("face with {} vertices", poly.len())));
                    }
                    if poly.iter().any(|v| *v < 0.0) {
                        return Err(Error::parse(path, "negative face index"));
                    }
                    for k in 1..poly.len() - 1 {
                        faces.push([poly[0] as usize, poly[k] as usize, poly[k + 1] as usize]);
                    }
                }
            }
            _ => {
                for _ in 0..el.count {
                    read_row(&mut body, el, &mut row, &mut lists)?;
                }
            }
        }
    }
    if !saw_vertices {
        return Err(Error::parse(path, "no vertex element"));
    }
    if saw_faces {
        TriangleMesh::new(coords, faces).map(PlyData::Mesh).map_err(|e| Error::parse(path, e.to_string()))
    } else {
        PointCloud::with_features(coords, features, feature_width)
            .map(PlyData::Cloud)
            .map_err(|e| Error::parse(path, e.to_string()))
    }
}

fn read_row(body: &mut Body, el: &Element, row: &mut [f64], lists: &mut [Vec<f64>]) -> Result<()> {
    for (k, p) in el.props.iter().enumerate() {
        match p {
            Property::Scalar { ty, .. } => row[k] = body.scalar(*ty)?,
            Property::List { count, item, .. } => {
                let n = body.scalar(*count)?;
                if !(n >= 0.0) {
                    return Err(Error::parse(body.path, "negative list length"));
                }
                lists[k].clear();
                for _ in 0..n as usize {
                    let v = body.scalar(*item)?;
                    lists[k].push(v);
                }
            }
        }
    }
    Ok(())
}

fn header_text(format: &str, vertex_count: usize, props: &[(&str, String)], faces: Option<usize>) -> String {
    let mut h = format!("ply\nformat {format} 1.0\nelement vertex {vertex_count}\n");
    for (ty, name) in props {
        writeln!(h, "property {ty} {name}").unwrap();
    }
    if let Some(k) = faces {
        writeln!(h, "element face {k}\nproperty list uchar int vertex_indices").unwrap();
    }
    h.push_str("end_header\n");
    h
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Coordinates are written as doubles so binary round-trips are exact.
pub fn write_ply_cloud(cloud: &PointCloud, path: &Path, opts: PlyWriteOptions) -> Result<()> {
    let f = cloud.feature_width();
    let as_color = opts.color && f == 3;
    let mut props: Vec<(&str, String)> = ["x", "y", "z"].iter().map(|n| ("double", n.to_string())).collect();
    if as_color {
        props.extend(["red", "green", "blue"].iter().map(|n| ("uchar", n.to_string())));
    } else {
        props.extend((0..f).map(|i| ("double", format!("f_{i}"))));
    }
    let format = if opts.binary { "binary_little_endian" } else { "ascii" };
    let mut out = header_text(format, cloud.len(), &props, None).into_bytes();
    for (i, p) in cloud.coords().iter().enumerate() {
        let row = cloud.feature_row(i);
        if opts.binary {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for &v in row {
                if as_color {
                    out.push(to_byte(v));
                } else {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        } else {
            let mut line = format!("{} {} {}", p[0], p[1], p[2]);
            for &v in row {
                if as_color {
                    write!(line, " {}", to_byte(v)).unwrap();
                } else {
                    write!(line, " {v}").unwrap();
                }
            }
            line.push('\n');
            out.extend_from_slice(line.as_bytes());
        }
    }
    super::write_bytes(path, &out)
}

pub fn write_ply_mesh(mesh: &TriangleMesh, path: &Path, binary: bool) -> Result<()> {
    let props: Vec<(&str, String)> = ["x", "y", "z"].iter().map(|n| ("double", n.to_string())).collect();
    let format = if binary { "binary_little_endian" } else { "ascii" };
    let mut out = header_text(format, mesh.vertices().len(), &props, Some(mesh.faces().len())).into_bytes();
    if binary {
        for p in mesh.vertices() {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for f in mesh.faces() {
            out.push(3);
            for &i in f {
                let i = i32::try_from(i).map_err(|_| Error::invalid("vertex index exceeds PLY int range"))?;
                out.extend_from_slice(&i.to_le_bytes());
            }
        }
    } else {
        let mut s = String::new();
        for p in mesh.vertices() {
            writeln!(s, "{} {} {}", p[0], p[1], p[2]).unwrap();
        }
        for f in mesh.faces() {
            writeln!(s, "3 {} {} {}", f[0], f[1], f[2]).unwrap();
        }
        out.extend_from_slice(s.as_bytes());
    }
    super::write_bytes(path, &out)
}

pub fn write_ply(data: &PlyData, path: &Path, opts: PlyWriteOptions) -> Result<()> {
    match data {
        PlyData::Cloud(c) => write_ply_cloud(c, path, opts),
        PlyData::Mesh(m) => write_ply_mesh(m, path, opts.binary),
    }
}

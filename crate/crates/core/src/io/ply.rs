//! PLY point clouds: ascii and binary little-endian, float32 `x y z` with
//! optional uchar `red green blue`. Other vertex properties and other
//! elements are skipped.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::scene::PointCloud;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),
    #[error("truncated PLY payload: {0}")]
    TruncatedPayload(String),
    #[error("malformed PLY body: {0}")]
    MalformedBody(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    /// Reads an unsigned count, for list lengths.
    fn read_count(self, b: &[u8]) -> Option<u64> {
        Some(match self {
            Self::U8 => b[0] as u64,
            Self::I8 => u64::try_from(b[0] as i8).ok()?,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as u64,
            Self::I16 => u64::try_from(i16::from_le_bytes([b[0], b[1]])).ok()?,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as u64,
            Self::I32 => u64::try_from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])).ok()?,
            Self::F32 | Self::F64 => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
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

#[derive(Debug, Clone, PartialEq)]
struct Element {
    name: String,
    count: u64,
    properties: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let bad = |m: String| PlyError::MalformedHeader(m);
    let mut offset = 0usize;
    let mut next_line = || -> Result<String, PlyError> {
        let rest = &bytes[offset.min(bytes.len())..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header is not terminated by end_header".into()))?;
        offset += end + 1;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not valid UTF-8".into()))?;
        Ok(line.trim_end_matches('\r').to_owned())
    };

    if next_line()?.trim() != "ply" {
        return Err(bad("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = next_line()?;
        let mut words = line.split_whitespace();
        match words.next() {
            None | Some("comment") | Some("obj_info") => continue,
            Some("end_header") => break,
            Some("format") => {
                format = Some(match (words.next(), words.next()) {
                    (Some("ascii"), Some("1.0")) => PlyFormat::Ascii,
                    (Some("binary_little_endian"), Some("1.0")) => PlyFormat::BinaryLittleEndian,
                    (Some(other), _) => return Err(bad(format!("unsupported format '{other}'"))),
                    _ => return Err(bad(format!("bad format line '{line}'"))),
                });
            }
            Some("element") => {
                let (Some(name), Some(count), None) = (words.next(), words.next(), words.next()) else {
                    return Err(bad(format!("bad element line '{line}'")));
                };
                let count = count.parse().map_err(|_| bad(format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_owned(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| bad("property before any element".into()))?;
                let parts: Vec<&str> = words.collect();
                let scalar = |s: &str| Scalar::parse(s).ok_or_else(|| bad(format!("unknown property type '{s}'")));
                let prop = match parts.as_slice() {
                    ["list", count, item, name] => Property::List {
                        name: (*name).to_owned(),
                        count: scalar(count)?,
                        item: scalar(item)?,
                    },
                    [ty, name] => Property::Scalar {
                        name: (*name).to_owned(),
                        ty: scalar(ty)?,
                    },
                    _ => return Err(bad(format!("bad property line '{line}'"))),
                };
                if matches!(&prop, Property::List { count: Scalar::F32 | Scalar::F64, .. }) {
                    return Err(bad(format!("list count must be an integer type in '{line}'")));
                }
                element.properties.push(prop);
            }
            Some(other) => return Err(bad(format!("unexpected header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| bad("missing format line".into()))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset,
    })
}

/// Where each needed vertex field lives in a record.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
}

fn vertex_layout(element: &Element, warnings: &mut Vec<String>) -> Result<VertexLayout, PlyError> {
    let find = |name: &str| element.properties.iter().position(|p| p.name() == name);
    let mut xyz = [0usize; 3];
    for (slot, axis) in ["x", "y", "z"].iter().enumerate() {
        let idx = find(axis).ok_or_else(|| PlyError::MalformedHeader(format!("vertex has no '{axis}' property")))?;
        if element.properties[idx] != (Property::Scalar { name: (*axis).into(), ty: Scalar::F32 }) {
            return Err(PlyError::MalformedHeader(format!("vertex '{axis}' must be a float32 scalar")));
        }
        xyz[slot] = idx;
    }
    let rgb_idx: Vec<Option<usize>> = ["red", "green", "blue"].iter().map(|c| find(c)).collect();
    let rgb = match rgb_idx.as_slice() {
        [Some(r), Some(g), Some(b)] => {
            let all_u8 = [*r, *g, *b]
                .iter()
                .all(|&i| matches!(element.properties[i], Property::Scalar { ty: Scalar::U8, .. }));
            if all_u8 {
                Some([*r, *g, *b])
            } else {
                warnings.push("color properties are not uchar; colors skipped".into());
                None
            }
        }
        [None, None, None] => None,
        _ => {
            warnings.push("incomplete red/green/blue properties; colors skipped".into());
            None
        }
    };
    let used: Vec<usize> = xyz.iter().copied().chain(rgb.into_iter().flatten()).collect();
    for (i, p) in element.properties.iter().enumerate() {
        if !used.contains(&i) && !(rgb.is_none() && ["red", "green", "blue"].contains(&p.name())) {
            warnings.push(format!("unsupported vertex property '{}' skipped", p.name()));
        }
    }
    Ok(VertexLayout { xyz, rgb })
}

/// Parsed cloud plus non-fatal warnings about skipped content.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyRead {
    pub cloud: PointCloud,
    pub warnings: Vec<String>,
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PlyRead, PlyError> {
    let bytes = fs::read(path)?;
    parse_ply(&bytes)
}

pub fn parse_ply(bytes: &[u8]) -> Result<PlyRead, PlyError> {
    let header = parse_header(bytes)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| PlyError::MalformedHeader("no vertex element".into()))?;
    let mut warnings = Vec::new();
    for e in &header.elements {
        if e.name != "vertex" {
            warnings.push(format!("element '{}' skipped", e.name));
        }
    }
    let layout = vertex_layout(&header.elements[vertex_pos], &mut warnings)?;
    let body = &bytes[header.body_offset..];
    let cloud = match header.format {
        PlyFormat::BinaryLittleEndian => read_binary(body, &header.elements[..=vertex_pos], &layout)?,
        PlyFormat::Ascii => read_ascii(body, &header.elements[..=vertex_pos], &layout)?,
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(PlyRead { cloud, warnings })
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PlyError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| {
            PlyError::TruncatedPayload(format!("needed {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

fn skip_binary_record(cur: &mut Cursor, props: &[Property]) -> Result<(), PlyError> {
    for p in props {
        match p {
            Property::Scalar { ty, .. } => {
                cur.take(ty.size())?;
            }
            Property::List { count, item, .. } => {
                let n = count
                    .read_count(cur.take(count.size())?)
                    .ok_or_else(|| PlyError::MalformedBody("negative list length".into()))?;
                let bytes = usize::try_from(n)
                    .ok()
                    .and_then(|n| n.checked_mul(item.size()))
                    .ok_or_else(|| PlyError::TruncatedPayload("list too long".into()))?;
                cur.take(bytes)?;
            }
        }
    }
    Ok(())
}

fn read_binary(body: &[u8], elements: &[Element], layout: &VertexLayout) -> Result<PointCloud, PlyError> {
    let mut cur = Cursor { data: body, pos: 0 };
    let (vertex, before) = elements.split_last().expect("vertex element present");
    for e in before {
        for _ in 0..e.count {
            skip_binary_record(&mut cur, &e.properties)?;
        }
    }
    // All vertex properties are scalars in the common case; use fixed offsets.
    let scalar_sizes: Option<Vec<usize>> = vertex
        .properties
        .iter()
        .map(|p| match p {
            Property::Scalar { ty, .. } => Some(ty.size()),
            Property::List { .. } => None,
        })
        .collect();
    let remaining = (body.len() - cur.pos) as u64;
    if let Some(sizes) = &scalar_sizes {
        let stride: usize = sizes.iter().sum();
        if (stride as u64).saturating_mul(vertex.count) > remaining {
            return Err(PlyError::TruncatedPayload(format!(
                "{} vertices of {stride} bytes need more than {remaining} bytes",
                vertex.count
            )));
        }
    }
    let n = usize::try_from(vertex.count.min(remaining)).unwrap_or(usize::MAX);
    let mut points = Vec::with_capacity(n);
    let mut colors = layout.rgb.map(|_| Vec::with_capacity(n));
    let offsets: Vec<usize> = scalar_sizes
        .as_ref()
        .map(|s| s.iter().scan(0, |acc, sz| {
            let o = *acc;
            *acc += sz;
            Some(o)
        }).collect())
        .unwrap_or_default();
    let f32_at = |rec: &[u8], o: usize| f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]);
    for _ in 0..vertex.count {
        if let Some(sizes) = &scalar_sizes {
            let rec = cur.take(sizes.iter().sum())?;
            points.push(layout.xyz.map(|i| f32_at(rec, offsets[i])));
            if let (Some(rgb), Some(c)) = (layout.rgb, colors.as_mut()) {
                c.push(rgb.map(|i| rec[offsets[i]]));
            }
        } else {
            let mut xyz = [0f32; 3];
            let mut rgb = [0u8; 3];
            for (i, p) in vertex.properties.iter().enumerate() {
                match p {
                    Property::Scalar { ty, .. } => {
                        let raw = cur.take(ty.size())?;
                        if let Some(slot) = layout.xyz.iter().position(|&x| x == i) {
                            xyz[slot] = f32_at(raw, 0);
                        }
                        if let Some(slot) = layout.rgb.and_then(|c| c.iter().position(|&x| x == i)) {
                            rgb[slot] = raw[0];
                        }
                    }
                    list => skip_binary_record(&mut cur, std::slice::from_ref(list))?,
                }
            }
            points.push(xyz);
            if let Some(c) = colors.as_mut() {
                c.push(rgb);
            }
        }
    }
    Ok(PointCloud { points, colors })
}

fn read_ascii(body: &[u8], elements: &[Element], layout: &VertexLayout) -> Result<PointCloud, PlyError> {
    let text = std::str::from_utf8(body).map_err(|_| PlyError::MalformedBody("ascii body is not UTF-8".into()))?;
    let mut tokens = text.split_ascii_whitespace();
    let mut next = || tokens.next().ok_or_else(|| PlyError::TruncatedPayload("ascii body ended early".into()));
    let (vertex, before) = elements.split_last().expect("vertex element present");
    for e in before {
        for _ in 0..e.count {
            for p in &e.properties {
                match p {
                    Property::Scalar { .. } => {
                        next()?;
                    }
                    Property::List { .. } => {
                        let tok = next()?;
                        let n: u64 = tok.parse().map_err(|_| PlyError::MalformedBody(format!("bad list length '{tok}'")))?;
                        for _ in 0..n {
                            next()?;
                        }
                    }
                }
            }
        }
    }
    let cap = usize::try_from(vertex.count.min(body.len() as u64 / 2)).unwrap_or(0);
    let mut points = Vec::with_capacity(cap);
    let mut colors = layout.rgb.map(|_| Vec::with_capacity(cap));
    for _ in 0..vertex.count {
        let mut xyz = [0f32; 3];
        let mut rgb = [0u8; 3];
        for (i, p) in vertex.properties.iter().enumerate() {
            match p {
                Property::Scalar { .. } => {
                    let tok = next()?;
                    if let Some(slot) = layout.xyz.iter().position(|&x| x == i) {
                        xyz[slot] = tok.parse().map_err(|_| PlyError::MalformedBody(format!("bad float '{tok}'")))?;
                    }
                    if let Some(slot) = layout.rgb.and_then(|c| c.iter().position(|&x| x == i)) {
                        rgb[slot] = tok.parse().map_err(|_| PlyError::MalformedBody(format!("bad color '{tok}'")))?;
                    }
                }
                Property::List { .. } => {
                    let tok = next()?;
                    let n: u64 = tok.parse().map_err(|_| PlyError::MalformedBody(format!("bad list length '{tok}'")))?;
                    for _ in 0..n {
                        next()?;
                    }
                }
            }
        }
        points.push(xyz);
        if let Some(c) = colors.as_mut() {
            c.push(rgb);
        }
    }
    Ok(PointCloud { points, colors })
}

pub fn encode_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let mut out = Vec::with_capacity(128 + cloud.len() * 15);
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut header = format!(
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    if cloud.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());
    for (i, p) in cloud.points.iter().enumerate() {
        let color = cloud.colors.as_ref().map(|c| c[i]);
        match format {
            PlyFormat::BinaryLittleEndian => {
                for v in p {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(c) = color {
                    out.extend_from_slice(&c);
                }
            }
            PlyFormat::Ascii => {
                // `{}` on f32 prints the shortest string that parses back exactly.
                let mut line = format!("{} {} {}", p[0], p[1], p[2]);
                if let Some(c) = color {
                    line.push_str(&format!(" {} {} {}", c[0], c[1], c[2]));
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
        }
    }
    out
}

pub fn write_ply(cloud: &PointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<(), PlyError> {
    fs::write(path, encode_ply(cloud, format))?;
    Ok(())
}

//! Binary grid files and a CSV voxel listing.
//!
//! Label grid (`SSCG`):
//!
//! ```text
//! "SSCG" | version u16 | X u32 | Y u32 | Z u32 | label width u8 (1 or 2)
//!        | X·Y·Z labels, x-major then y then z | CRC32(payload) u32
//! ```
//!
//! Logit grid (`SSCL`):
//!
//! ```text
//! "SSCL" | version u16 | X u32 | Y u32 | Z u32 | P u32
//!        | X·Y·Z·P f32, class fastest | CRC32(payload) u32
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::voxel::{LabeledGrid, LogitGrid};

pub const GRID_MAGIC: &[u8; 4] = b"SSCG";
pub const LOGIT_MAGIC: &[u8; 4] = b"SSCL";
pub const VERSION: u16 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated file at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn header(r: &mut Reader, magic: &[u8; 4]) -> Result<()> {
    let m = r.take(4)?;
    if m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(m),
            String::from_utf8_lossy(magic)
        )));
    }
    let v = r.u16()?;
    if v != VERSION {
        return Err(Error::Format(format!("unsupported version {v}")));
    }
    Ok(())
}

fn payload<'a>(r: &mut Reader<'a>, len: usize) -> Result<&'a [u8]> {
    let p = r.take(len)?;
    let crc = r.u32()?;
    let actual = crc32fast::hash(p);
    if crc != actual {
        return Err(Error::Format(format!("CRC mismatch: stored {crc:08x}, computed {actual:08x}")));
    }
    if r.pos != r.buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", r.buf.len() - r.pos)));
    }
    Ok(p)
}

fn dims3(r: &mut Reader) -> Result<[usize; 3]> {
    Ok([r.u32()? as usize, r.u32()? as usize, r.u32()? as usize])
}

fn voxel_count(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("dims {dims:?} overflow")))
}

/// Encodes a label grid. Labels up to 255 use one byte per voxel.
pub fn encode_grid(g: &LabeledGrid) -> Vec<u8> {
    let width: u8 = if g.labels().iter().all(|&l| l <= u8::MAX as u16) { 1 } else { 2 };
    let mut out = Vec::with_capacity(19 + g.labels().len() * width as usize + 4);
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in g.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(width);
    let start = out.len();
    for &l in g.labels() {
        if width == 1 {
            out.push(l as u8);
        } else {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<LabeledGrid> {
    let mut r = Reader { buf: bytes, pos: 0 };
    header(&mut r, GRID_MAGIC)?;
    let dims = dims3(&mut r)?;
    let width = r.take(1)?[0];
    if width != 1 && width != 2 {
        return Err(Error::Format(format!("label width {width} not in {{1, 2}}")));
    }
    let n = voxel_count(&dims)?;
    let p = payload(&mut r, n * width as usize)?;
    let labels = if width == 1 {
        p.iter().map(|&b| b as u16).collect()
    } else {
        p.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
    };
    LabeledGrid::new(dims, labels)
}

/// Encodes logits as `f32`. Values are rounded to single precision.
pub fn encode_logits(g: &LogitGrid) -> Vec<u8> {
    let t = g.tensor();
    let mut out = Vec::with_capacity(22 + t.numel() * 4 + 4);
    out.extend_from_slice(LOGIT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let start = out.len();
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_logits(bytes: &[u8]) -> Result<LogitGrid> {
    let mut r = Reader { buf: bytes, pos: 0 };
    header(&mut r, LOGIT_MAGIC)?;
    let [x, y, z] = dims3(&mut r)?;
    let p = r.u32()? as usize;
    let n = voxel_count(&[x, y, z, p])?;
    let data: Vec<f64> = payload(&mut r, n * 4)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format(format!("non-finite logit at element {i}")));
    }
    LogitGrid::new(Tensor::new(vec![x, y, z, p], data)?)
}

pub fn write_grid(path: &Path, g: &LabeledGrid) -> Result<()> {
    Ok(fs::write(path, encode_grid(g))?)
}

pub fn read_grid(path: &Path) -> Result<LabeledGrid> {
    decode_grid(&fs::read(path)?)
}

pub fn write_logits(path: &Path, g: &LogitGrid) -> Result<()> {
    Ok(fs::write(path, encode_logits(g))?)
}

pub fn read_logits(path: &Path) -> Result<LogitGrid> {
    decode_logits(&fs::read(path)?)
}

/// CSV listing: a `# dims X,Y,Z` line, the header `x,y,z,label`, then one row
/// per voxel in file order.
pub fn grid_to_csv(g: &LabeledGrid) -> String {
    let [dx, dy, dz] = g.dims();
    let mut s = format!("# dims {dx},{dy},{dz}\nx,y,z,label\n");
    for x in 0..dx {
        for y in 0..dy {
            for z in 0..dz {
                s.push_str(&format!("{x},{y},{z},{}\n", g.get(x, y, z)));
            }
        }
    }
    s
}

/// Parses a CSV listing. Rows may come in any order but must cover every
/// voxel exactly once.
pub fn grid_from_csv(text: &str) -> Result<LabeledGrid> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let dims_line = lines.next().ok_or_else(|| Error::Format("empty CSV".into()))?.1;
    let dims: Vec<usize> = dims_line
        .strip_prefix("# dims ")
        .ok_or_else(|| Error::Format("CSV must start with '# dims X,Y,Z'".into()))?
        .split(',')
        .map(|v| v.trim().parse().map_err(|_| Error::Format(format!("bad dims line {dims_line:?}"))))
        .collect::<Result<_>>()?;
    let dims: [usize; 3] = dims
        .try_into()
        .map_err(|_| Error::Format(format!("bad dims line {dims_line:?}")))?;
    match lines.next() {
        Some((_, h)) if h.trim() == "x,y,z,label" => {}
        _ => return Err(Error::Format("missing header 'x,y,z,label'".into())),
    }
    let mut g = LabeledGrid::filled(dims, 0);
    let mut seen = vec![false; voxel_count(&dims)?];
    for (no, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Format(format!("line {}: malformed row {line:?}", no + 1));
        if f.len() != 4 {
            return Err(bad());
        }
        let c: Vec<usize> = f[..3].iter().map(|v| v.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let label: u16 = f[3].parse().map_err(|_| bad())?;
        if c[0] >= dims[0] || c[1] >= dims[1] || c[2] >= dims[2] {
            return Err(Error::Format(format!("line {}: voxel out of bounds", no + 1)));
        }
        let i = g.index(c[0], c[1], c[2]);
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Format(format!("line {}: duplicate voxel", no + 1)));
        }
        g.set(c[0], c[1], c[2], label);
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Format(format!("voxel {i} missing from CSV")));
    }
    Ok(g)
}

/// Writes a whole file in one call after creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

//! Little-endian binary formats and atomic file output.
//!
//! | magic  | payload                                                     |
//! |--------|-------------------------------------------------------------|
//! | `UOPC` | u32 version, u64 count, count x (3 f32, u8 label, u8 dynamic, 2 zero bytes) |
//! | `UOPS` | u32 version, 12 f64: row-major rotation then translation    |
//! | `UOOG` | grid header, ceil(D*H*W / 8) bytes, LSB-first bits          |
//! | `UOSG` | grid header, D*H*W class-id bytes                           |
//! | `UOCK` | u32 version, u32 count, tensors, u32 + UTF-8 provenance     |
//! | `UOIR` | u32 version, u32 channels, h, w, f32 channel-major data     |
//!
//! The grid header is u32 version, u32 D, H, W, 3 f32 origin (x, y, z),
//! 3 f32 voxel size (z, y, x).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Frame, SE3Pose, Vec3};
use crate::labels::{LidarPoint, OccupancyGrid, PointCloud, SemanticClass, SemanticGrid, VoxelGridSpec, NUM_CLASSES};
use crate::net::ModelParams;
use crate::scene::ImageRaster;
use crate::tensor::Tensor;
use crate::train::checkpoint::Checkpoint;

pub const VERSION: u32 = 1;

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid("path", format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::file(path, e)
    })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::file(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

/// Bounds-checked little-endian reader that reports byte offsets.
struct Reader<'a> {
    format: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(format: &'static str, bytes: &'a [u8]) -> Self {
        Self { format, bytes, pos: 0 }
    }

    fn fail<T>(&self, at: usize, expected: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            format: self.format,
            offset: at as u64,
            expected: expected.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(self.pos, format!("{n} bytes of {what}, file ends"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4, "magic")? != magic {
            return self.fail(0, format!("magic {:?}", String::from_utf8_lossy(magic)));
        }
        let at = self.pos;
        let v = self.u32("version")?;
        if v != VERSION {
            return self.fail(at, format!("version {VERSION}, found {v}"));
        }
        Ok(())
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let at = self.pos;
        let v = f32::from_le_bytes(self.take(4, what)?.try_into().unwrap());
        if !v.is_finite() {
            return self.fail(at, format!("finite {what}"));
        }
        Ok(v)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let at = self.pos;
        let v = f64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        if !v.is_finite() {
            return self.fail(at, format!("finite {what}"));
        }
        Ok(v)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return self.fail(self.pos, "end of file");
        }
        Ok(())
    }

    /// Element count `n * size` that must still fit in the input.
    fn counted(&self, n: u64, size: usize, what: &str) -> Result<usize> {
        let left = (self.bytes.len() - self.pos) as u64;
        match n.checked_mul(size as u64) {
            Some(total) if total <= left => Ok(n as usize),
            _ => self.fail(self.pos, format!("{n} {what}, file too short")),
        }
    }
}

fn header(magic: &[u8; 4], out: &mut Vec<u8>) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

pub fn encode_point_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + cloud.len() * 16);
    header(b"UOPC", &mut out);
    out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    for p in &cloud.points {
        for i in 0..3 {
            put_f32(&mut out, p.position[i]);
        }
        out.extend_from_slice(&[p.label.id(), u8::from(p.dynamic), 0, 0]);
    }
    out
}

/// The format carries no frame tag, so the caller supplies it.
pub fn decode_point_cloud(bytes: &[u8], frame: Frame) -> Result<PointCloud> {
    let mut r = Reader::new("point cloud", bytes);
    r.magic(b"UOPC")?;
    let n = r.u64("point count")?;
    let n = r.counted(n, 16, "points")?;
    let mut cloud = PointCloud::new(frame);
    cloud.points.reserve(n);
    for _ in 0..n {
        let x = r.f32("x")?;
        let y = r.f32("y")?;
        let z = r.f32("z")?;
        let at = r.pos;
        let label = SemanticClass::from_id(r.u8("label")?)
            .filter(|c| *c != SemanticClass::Free)
            .map_or_else(|| r.fail(at, "label in 1..=3"), Ok)?;
        let dynamic = match r.u8("dynamic flag")? {
            0 => false,
            1 => true,
            _ => return r.fail(at + 1, "dynamic flag 0 or 1"),
        };
        if r.take(2, "padding")? != [0, 0] {
            return r.fail(at + 2, "zero padding");
        }
        cloud.points.push(LidarPoint {
            position: Vec3::new(f64::from(x), f64::from(y), f64::from(z)),
            label,
            dynamic,
        });
    }
    r.finish()?;
    Ok(cloud)
}

pub fn encode_pose(pose: &SE3Pose) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 96);
    header(b"UOPS", &mut out);
    for v in pose.to_array() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_pose(bytes: &[u8]) -> Result<SE3Pose> {
    let mut r = Reader::new("pose", bytes);
    r.magic(b"UOPS")?;
    let mut values = [0.0; 12];
    for v in &mut values {
        *v = r.f64("pose entry")?;
    }
    r.finish()?;
    let pose = SE3Pose::from_array(&values);
    if pose.validate().is_err() {
        return r.fail(8, "orthonormal rotation with det 1");
    }
    Ok(pose)
}

fn grid_header(magic: &[u8; 4], spec: &VoxelGridSpec, out: &mut Vec<u8>) {
    header(magic, out);
    for d in spec.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for i in 0..3 {
        put_f32(out, spec.origin[i]);
    }
    for v in spec.voxel_size {
        put_f32(out, v);
    }
}

fn read_grid_header(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<VoxelGridSpec> {
    r.magic(magic)?;
    let at = r.pos;
    let dims = [r.u32("D")? as usize, r.u32("H")? as usize, r.u32("W")? as usize];
    let mut origin = [0.0; 3];
    for o in &mut origin {
        *o = f64::from(r.f32("origin")?);
    }
    let mut size = [0.0; 3];
    for s in &mut size {
        *s = f64::from(r.f32("voxel size")?);
    }
    VoxelGridSpec::new(Vec3::from(origin), size, dims).or_else(|e| r.fail(at, format!("valid grid spec ({e})")))
}

pub fn encode_occupancy(grid: &OccupancyGrid) -> Vec<u8> {
    let n = grid.spec.cell_count();
    let mut out = Vec::with_capacity(44 + n.div_ceil(8));
    grid_header(b"UOOG", &grid.spec, &mut out);
    let mut bits = vec![0u8; n.div_ceil(8)];
    for (i, &v) in grid.data.iter().enumerate() {
        if v != 0 {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bits);
    out
}

pub fn decode_occupancy(bytes: &[u8]) -> Result<OccupancyGrid> {
    let mut r = Reader::new("occupancy grid", bytes);
    let spec = read_grid_header(&mut r, b"UOOG")?;
    let n = spec.cell_count();
    let nbytes = r.counted(n.div_ceil(8) as u64, 1, "bitmap bytes")?;
    let start = r.pos;
    let bits = r.take(nbytes, "bitmap")?;
    let data: Vec<u8> = (0..n).map(|i| (bits[i / 8] >> (i % 8)) & 1).collect();
    if n % 8 != 0 && bits[nbytes - 1] >> (n % 8) != 0 {
        return r.fail(start + nbytes - 1, "zero trailing bits");
    }
    r.finish()?;
    Ok(OccupancyGrid { spec, data })
}

pub fn encode_semantic(grid: &SemanticGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(44 + grid.data.len());
    grid_header(b"UOSG", &grid.spec, &mut out);
    out.extend_from_slice(&grid.data);
    out
}

pub fn decode_semantic(bytes: &[u8]) -> Result<SemanticGrid> {
    let mut r = Reader::new("semantic grid", bytes);
    let spec = read_grid_header(&mut r, b"UOSG")?;
    let n = r.counted(spec.cell_count() as u64, 1, "cells")?;
    let start = r.pos;
    let data = r.take(n, "cells")?.to_vec();
    if let Some(i) = data.iter().position(|&c| c as usize >= NUM_CLASSES) {
        return r.fail(start + i, format!("class id below {NUM_CLASSES}"));
    }
    r.finish()?;
    Ok(SemanticGrid { spec, data })
}

pub fn encode_image(img: &ImageRaster) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + img.data.len() * 4);
    header(b"UOIR", &mut out);
    for d in [img.channels, img.height, img.width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_image(bytes: &[u8]) -> Result<ImageRaster> {
    let mut r = Reader::new("image raster", bytes);
    r.magic(b"UOIR")?;
    let (c, h, w) = (
        r.u32("channels")? as u64,
        r.u32("height")? as u64,
        r.u32("width")? as u64,
    );
    let n = r.counted(c * h * w, 4, "pixels")?;
    let data = (0..n).map(|_| r.f32("pixel")).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(ImageRaster {
        channels: c as usize,
        height: h as usize,
        width: w as usize,
        data,
    })
}

/// Tensor section only; the content digest covers exactly these bytes.
pub fn encode_tensors(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    header(b"UOCK", &mut out);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in &params.tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.ndim() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            put_f32(&mut out, v);
        }
    }
    out
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = encode_tensors(&ck.params);
    out.extend_from_slice(&(ck.provenance.len() as u32).to_le_bytes());
    out.extend_from_slice(ck.provenance.as_bytes());
    out
}

/// Tensor names must be strictly ascending so a re-save is byte-identical.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new("checkpoint", bytes);
    r.magic(b"UOCK")?;
    let count = r.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    let mut last: Option<String> = None;
    for _ in 0..count {
        let at = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .or_else(|_| r.fail(at + 2, "UTF-8 tensor name"))?
            .to_owned();
        if last.as_ref().is_some_and(|l| *l >= name) {
            return r.fail(at, format!("tensor names in ascending order, `{name}` out of place"));
        }
        let ndim = r.u8("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("dimension")? as u64);
        }
        let n = shape
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .unwrap_or(u64::MAX);
        let n = r.counted(n, 4, "tensor values")?;
        let data = (0..n)
            .map(|_| r.f32("tensor value").map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        let shape = shape.into_iter().map(|d| d as usize).collect();
        tensors.insert(name.clone(), Tensor::new(shape, data)?);
        last = Some(name);
    }
    let at = r.pos;
    let len = r.u32("provenance length")? as usize;
    let provenance = std::str::from_utf8(r.take(len, "provenance")?)
        .or_else(|_| r.fail(at + 4, "UTF-8 provenance"))?
        .to_owned();
    r.finish()?;
    Ok(Checkpoint {
        params: ModelParams { tensors },
        provenance,
    })
}

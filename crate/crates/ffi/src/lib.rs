//! C ABI over the occpretrain library.
//!
//! Every function returns an [`OccpStatus`]. On failure the thread's last
//! error message is set and can be read with [`occp_last_error`]. Objects
//! are opaque handles created by `*_new`, `*_decode` or `*_load` and
//! released with the matching `*_free`. Variable-length outputs follow the
//! size-query convention: pass a null buffer to learn the length.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;
use std::sync::Arc;

use occpretrain::geometry::{Frame, SE3Pose, Vec3};
use occpretrain::io;
use occpretrain::labels::{voxelize_occupancy, OccupancyGrid, PointCloud, SemanticClass, VoxelGridSpec};
use occpretrain::net::{FocalLossParams, Graph};
use occpretrain::train::Checkpoint;
use occpretrain::view::{project, unproject, CameraIntrinsics};
use occpretrain::{Error, Tensor};

/// Bytes needed for a hex digest plus its terminating NUL.
pub const OCCP_DIGEST_LEN: usize = 65;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Format = 4,
    Io = 5,
    Contract = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Voxel occupancy grid.
pub struct OccpGrid(OccupancyGrid);

/// Pinhole camera with its camera-to-ego extrinsic.
pub struct OccpCamera {
    intrinsics: CameraIntrinsics,
    extrinsic: SE3Pose,
}

/// Model checkpoint with provenance.
pub struct OccpCheckpoint(Checkpoint);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

enum Fail {
    Null(&'static str),
    Small { need: usize, have: usize },
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn status_of(e: &Error) -> OccpStatus {
    match e {
        Error::Shape { .. }
        | Error::InvalidArgument { .. }
        | Error::Config { .. }
        | Error::Placement(_)
        | Error::EmptyDataset(_) => OccpStatus::InvalidArgument,
        Error::Domain(_) | Error::NonFinite { .. } | Error::Diverged { .. } => OccpStatus::Domain,
        Error::Format { .. } => OccpStatus::Format,
        Error::File { .. } | Error::Io(_) => OccpStatus::Io,
        Error::Contract(_) => OccpStatus::Contract,
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OccpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OccpStatus::Ok,
        Ok(Err(Fail::Null(arg))) => {
            set_error(format!("`{arg}` is null"));
            OccpStatus::NullPointer
        }
        Ok(Err(Fail::Small { need, have })) => {
            set_error(format!("buffer holds {have} bytes, need {need}"));
            OccpStatus::BufferTooSmall
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            OccpStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(name))
}

unsafe fn get_slice<'a, T>(p: *const T, len: usize, name: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut T, value: T, name: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(name));
    }
    out.write(value);
    Ok(())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    let s = get(p, "path").map(|p| CStr::from_ptr(p))?;
    let s = s.to_str().map_err(|_| Error::InvalidArgument {
        arg: "path",
        reason: "not UTF-8".into(),
    })?;
    Ok(PathBuf::from(s))
}

/// Copies `bytes` into `buf` under the size-query convention.
unsafe fn write_bytes(bytes: &[u8], buf: *mut u8, cap: usize, len: *mut usize) -> Result<(), Fail> {
    put(len, bytes.len(), "len")?;
    if buf.is_null() {
        return Ok(());
    }
    if cap < bytes.len() {
        return Err(Fail::Small {
            need: bytes.len(),
            have: cap,
        });
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn occp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread; empty if none. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn occp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Voxelizes `count` ego-frame points (`xyz`, 3 doubles each). `labels`
/// holds one class id per point (1 ground, 2 static, 3 dynamic) or is null
/// for all-static. `dims` is (D, H, W) along (z, y, x).
#[no_mangle]
pub unsafe extern "C" fn occp_voxelize(
    xyz: *const f64,
    labels: *const u8,
    count: usize,
    origin: *const f64,
    voxel_size: *const f64,
    dims: *const usize,
    out: *mut *mut OccpGrid,
) -> OccpStatus {
    guard(|| {
        let n = count.checked_mul(3).ok_or_else(|| Error::InvalidArgument {
            arg: "count",
            reason: format!("{count} points overflow the coordinate buffer"),
        })?;
        let pts = get_slice(xyz, n, "xyz")?;
        let ids = if labels.is_null() {
            None
        } else {
            Some(get_slice(labels, count, "labels")?)
        };
        let o = get_slice(origin, 3, "origin")?;
        let v = get_slice(voxel_size, 3, "voxel_size")?;
        let d = get_slice(dims, 3, "dims")?;
        let spec = VoxelGridSpec::new(Vec3::new(o[0], o[1], o[2]), [v[0], v[1], v[2]], [d[0], d[1], d[2]])?;
        let mut cloud = PointCloud::new(Frame::Ego(0.0));
        for (i, p) in pts.chunks_exact(3).enumerate() {
            let label = match ids {
                None => SemanticClass::StaticStructure,
                Some(ids) => SemanticClass::from_id(ids[i])
                    .filter(|c| SemanticClass::OCCUPIED.contains(c))
                    .ok_or_else(|| Error::InvalidArgument {
                        arg: "labels",
                        reason: format!("point {i} has class id {}", ids[i]),
                    })?,
            };
            cloud.push(
                Vec3::new(p[0], p[1], p[2]),
                label,
                label == SemanticClass::DynamicObject,
            );
        }
        put(out, boxed(OccpGrid(voxelize_occupancy(&cloud, &spec))), "out")
    })
}

/// Writes (D, H, W) to `dims`.
#[no_mangle]
pub unsafe extern "C" fn occp_grid_dims(grid: *const OccpGrid, dims: *mut usize) -> OccpStatus {
    guard(|| {
        let g = get(grid, "grid")?;
        if dims.is_null() {
            return Err(Fail::Null("dims"));
        }
        slice::from_raw_parts_mut(dims, 3).copy_from_slice(&g.0.spec.dims);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn occp_grid_occupied_count(grid: *const OccpGrid, out: *mut usize) -> OccpStatus {
    guard(|| put(out, get(grid, "grid")?.0.occupied_count(), "out"))
}

#[no_mangle]
pub unsafe extern "C" fn occp_grid_get(
    grid: *const OccpGrid,
    d: usize,
    h: usize,
    w: usize,
    out: *mut bool,
) -> OccpStatus {
    guard(|| {
        let g = &get(grid, "grid")?.0;
        let [dd, hh, ww] = g.spec.dims;
        if d >= dd || h >= hh || w >= ww {
            return Err(Error::InvalidArgument {
                arg: "index",
                reason: format!("({d}, {h}, {w}) outside ({dd}, {hh}, {ww})"),
            }
            .into());
        }
        put(out, g.get(d, h, w), "out")
    })
}

/// Serializes to the UOOG format.
#[no_mangle]
pub unsafe extern "C" fn occp_grid_encode(
    grid: *const OccpGrid,
    buf: *mut u8,
    cap: usize,
    len: *mut usize,
) -> OccpStatus {
    guard(|| write_bytes(&io::encode_occupancy(&get(grid, "grid")?.0), buf, cap, len))
}

#[no_mangle]
pub unsafe extern "C" fn occp_grid_decode(bytes: *const u8, len: usize, out: *mut *mut OccpGrid) -> OccpStatus {
    guard(|| {
        let g = io::decode_occupancy(get_slice(bytes, len, "bytes")?)?;
        put(out, boxed(OccpGrid(g)), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn occp_grid_free(grid: *mut OccpGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Mean focal loss of `count` probabilities against binary targets.
#[no_mangle]
pub unsafe extern "C" fn occp_focal_loss(
    targets: *const u8,
    probs: *const f64,
    count: usize,
    alpha_pos: f64,
    alpha_neg: f64,
    gamma: f64,
    out: *mut f64,
) -> OccpStatus {
    guard(|| {
        let t = get_slice(targets, count, "targets")?;
        let p = get_slice(probs, count, "probs")?;
        let params = FocalLossParams {
            alpha_pos,
            alpha_neg,
            gamma,
        };
        params.validate()?;
        let mut g = Graph::new();
        let pv = g.constant(Tensor::new(vec![count], p.to_vec())?)?;
        let loss = g.focal_loss(pv, Arc::from(t), params)?;
        put(out, g.value(loss).item(), "out")
    })
}

/// `rotation` is row-major 3x3 and, with `translation`, maps camera
/// coordinates to the ego frame.
#[no_mangle]
pub unsafe extern "C" fn occp_camera_new(
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    rotation: *const f64,
    translation: *const f64,
    out: *mut *mut OccpCamera,
) -> OccpStatus {
    guard(|| {
        let r = get_slice(rotation, 9, "rotation")?;
        let t = get_slice(translation, 3, "translation")?;
        let mut values = [0.0; 12];
        values[..9].copy_from_slice(r);
        values[9..].copy_from_slice(t);
        let pose = SE3Pose::from_array(&values);
        pose.validate()?;
        let cam = OccpCamera {
            intrinsics: CameraIntrinsics::new(fx, fy, cx, cy, width, height)?,
            extrinsic: pose,
        };
        put(out, boxed(cam), "out")
    })
}

/// Projects an ego-frame point to pixel `(u, v)` and camera z-depth.
#[no_mangle]
pub unsafe extern "C" fn occp_project(camera: *const OccpCamera, point: *const f64, uvd: *mut f64) -> OccpStatus {
    guard(|| {
        let c = get(camera, "camera")?;
        let p = get_slice(point, 3, "point")?;
        if uvd.is_null() {
            return Err(Fail::Null("uvd"));
        }
        let local = c.extrinsic.inverse().apply(&Vec3::new(p[0], p[1], p[2]));
        let (u, v, d) = project(&local, &c.intrinsics)?;
        slice::from_raw_parts_mut(uvd, 3).copy_from_slice(&[u, v, d]);
        Ok(())
    })
}

/// Ego-frame point seen at pixel `(u, v)` and camera z-depth `depth`.
#[no_mangle]
pub unsafe extern "C" fn occp_unproject(
    camera: *const OccpCamera,
    u: f64,
    v: f64,
    depth: f64,
    point: *mut f64,
) -> OccpStatus {
    guard(|| {
        let c = get(camera, "camera")?;
        if point.is_null() {
            return Err(Fail::Null("point"));
        }
        let p = unproject(u, v, depth, &c.intrinsics, &c.extrinsic)?;
        slice::from_raw_parts_mut(point, 3).copy_from_slice(&[p.x, p.y, p.z]);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn occp_camera_free(camera: *mut OccpCamera) {
    if !camera.is_null() {
        drop(Box::from_raw(camera));
    }
}

#[no_mangle]
pub unsafe extern "C" fn occp_checkpoint_load(path: *const c_char, out: *mut *mut OccpCheckpoint) -> OccpStatus {
    guard(|| {
        let ck = Checkpoint::load(&path_arg(path)?)?;
        put(out, boxed(OccpCheckpoint(ck)), "out")
    })
}

/// Writes atomically to `path`.
#[no_mangle]
pub unsafe extern "C" fn occp_checkpoint_save(ck: *const OccpCheckpoint, path: *const c_char) -> OccpStatus {
    guard(|| Ok(get(ck, "checkpoint")?.0.save(&path_arg(path)?)?))
}

#[no_mangle]
pub unsafe extern "C" fn occp_checkpoint_decode(
    bytes: *const u8,
    len: usize,
    out: *mut *mut OccpCheckpoint,
) -> OccpStatus {
    guard(|| {
        let ck = io::decode_checkpoint(get_slice(bytes, len, "bytes")?)?;
        put(out, boxed(OccpCheckpoint(ck)), "out")
    })
}

/// Serializes to the UOCK format.
#[no_mangle]
pub unsafe extern "C" fn occp_checkpoint_encode(
    ck: *const OccpCheckpoint,
    buf: *mut u8,
    cap: usize,
    len: *mut usize,
) -> OccpStatus {
    guard(|| write_bytes(&io::encode_checkpoint(&get(ck, "checkpoint")?.0), buf, cap, len))
}

#[no_mangle]
pub unsafe extern "C" fn occp_checkpoint_tensor_count(ck: *const OccpCheckpoint, out: *mut usize) -> OccpStatus {
    guard(|| put(out, get(ck, "checkpoint")?.0.params.len(), "out"))
}

/// SHA-256 of the tensor section as NUL-terminated hex; `buf` must hold
/// [`OCCP_DIGEST_LEN`] bytes.
#[no_mangle]
pub unsafe extern "C" fn occp_checkpoint_digest(ck: *const OccpCheckpoint, buf: *mut c_char, cap: usize) -> OccpStatus {
    guard(|| {
        let digest = get(ck, "checkpoint")?.0.digest();
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        if cap < OCCP_DIGEST_LEN {
            return Err(Fail::Small {
                need: OCCP_DIGEST_LEN,
                have: cap,
            });
        }
        let out = slice::from_raw_parts_mut(buf.cast::<u8>(), OCCP_DIGEST_LEN);
        out[..64].copy_from_slice(digest.as_bytes());
        out[64] = 0;
        Ok(())
    })
}

/// New checkpoint without the occupancy decoder and semantic head, its
/// lineage extended with the parent's digest.
#[no_mangle]
pub unsafe extern "C" fn occp_checkpoint_strip_decoder(
    ck: *const OccpCheckpoint,
    out: *mut *mut OccpCheckpoint,
) -> OccpStatus {
    guard(|| {
        let stripped = get(ck, "checkpoint")?.0.strip_decoder()?;
        put(out, boxed(OccpCheckpoint(stripped)), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn occp_checkpoint_free(ck: *mut OccpCheckpoint) {
    if !ck.is_null() {
        drop(Box::from_raw(ck));
    }
}

//! Point clouds, voxel grids, keyframe fusion and voxelization.
//!
//! Voxel cells are half-open: cell `i` along an axis covers
//! `[origin + i * size, origin + (i + 1) * size)`. Points outside the grid
//! extent are dropped, never clamped.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{Frame, SE3Pose, Vec3};

/// Number of entries in the class table, free space included.
pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum SemanticClass {
    Free = 0,
    Ground = 1,
    StaticStructure = 2,
    DynamicObject = 3,
}

impl SemanticClass {
    pub const OCCUPIED: [SemanticClass; 3] = [
        SemanticClass::Ground,
        SemanticClass::StaticStructure,
        SemanticClass::DynamicObject,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(SemanticClass::Free),
            1 => Some(SemanticClass::Ground),
            2 => Some(SemanticClass::StaticStructure),
            3 => Some(SemanticClass::DynamicObject),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SemanticClass::Free => "free",
            SemanticClass::Ground => "ground",
            SemanticClass::StaticStructure => "static",
            SemanticClass::DynamicObject => "dynamic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub position: Vec3,
    pub label: SemanticClass,
    pub dynamic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(frame: Frame) -> Self {
        Self {
            points: Vec::new(),
            frame,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, position: Vec3, label: SemanticClass, dynamic: bool) {
        debug_assert!(label != SemanticClass::Free, "points cannot carry the free label");
        self.points.push(LidarPoint {
            position,
            label,
            dynamic,
        });
    }
}

/// Maps `cloud` from frame `from` to frame `to` through `pose`.
pub fn transform_points(cloud: &PointCloud, pose: &SE3Pose, from: Frame, to: Frame) -> Result<PointCloud> {
    if cloud.frame != from {
        return Err(Error::Contract(format!(
            "cloud is in frame {:?}, transform expects {:?}",
            cloud.frame, from
        )));
    }
    let points = cloud
        .points
        .iter()
        .map(|p| LidarPoint {
            position: pose.apply(&p.position),
            ..*p
        })
        .collect();
    Ok(PointCloud { points, frame: to })
}

/// How points of moving objects from non-target frames enter a fused cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DynamicMode {
    #[default]
    KeepAll,
    DropDynamic,
    Compensate,
}

impl DynamicMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DynamicMode::KeepAll => "keep_all",
            DynamicMode::DropDynamic => "drop_dynamic",
            DynamicMode::Compensate => "compensate",
        }
    }
}

impl fmt::Display for DynamicMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DynamicMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keep_all" => Ok(DynamicMode::KeepAll),
            "drop_dynamic" => Ok(DynamicMode::DropDynamic),
            "compensate" => Ok(DynamicMode::Compensate),
            other => Err(Error::invalid(
                "dynamic_mode",
                format!("`{other}` is not one of keep_all, drop_dynamic, compensate"),
            )),
        }
    }
}

/// Known rigid motion of the objects a point may belong to.
pub trait ObjectMotion {
    /// Displacement of the moving object whose surface contains `world_point`
    /// at time `from_t`, accumulated until `to_t`. `None` when no moving
    /// object owns the point.
    fn displacement(&self, world_point: &Vec3, from_t: f64, to_t: f64) -> Option<Vec3>;
}

/// One keyframe's LiDAR sweep with its ego-to-world pose.
#[derive(Debug, Clone, Copy)]
pub struct KeyframeCloud<'a> {
    pub cloud: &'a PointCloud,
    pub pose: &'a SE3Pose,
    pub timestamp: f64,
}

/// Indices of the fusion window centered on `target`, clipped at both ends.
pub fn fusion_window(len: usize, target: usize, num_frames: usize) -> std::ops::RangeInclusive<usize> {
    let half = num_frames / 2;
    let lo = target.saturating_sub(half);
    let hi = (target + half).min(len.saturating_sub(1));
    lo..=hi
}

/// Fuses a window of keyframe sweeps into the ego frame of `target`.
///
/// The target sweep is copied verbatim. Other sweeps go ego(t_k) -> world ->
/// ego(t_target); `mode` decides what happens to their dynamic points.
/// `Compensate` requires `motion`.
pub fn fuse_frames(
    frames: &[KeyframeCloud<'_>],
    target: usize,
    num_frames: usize,
    mode: DynamicMode,
    motion: Option<&dyn ObjectMotion>,
) -> Result<PointCloud> {
    if num_frames < 1 {
        return Err(Error::invalid("num_frames", "must be at least 1"));
    }
    if num_frames.is_multiple_of(2) {
        return Err(Error::invalid(
            "num_frames",
            format!("{num_frames} is even; windows are centered"),
        ));
    }
    if num_frames > frames.len() {
        return Err(Error::invalid(
            "num_frames",
            format!("{num_frames} exceeds the {} available keyframes", frames.len()),
        ));
    }
    if target >= frames.len() {
        return Err(Error::invalid("target_index", format!("{target} out of range")));
    }
    if mode == DynamicMode::Compensate && motion.is_none() {
        return Err(Error::invalid("dynamic_mode", "compensate needs object motion"));
    }
    for f in frames {
        if f.cloud.frame != Frame::Ego(f.timestamp) {
            return Err(Error::Contract(format!(
                "keyframe cloud tagged {:?} but stamped {}",
                f.cloud.frame, f.timestamp
            )));
        }
    }

    let tgt = &frames[target];
    let world_to_target = tgt.pose.inverse();
    let mut fused = PointCloud::new(Frame::Ego(tgt.timestamp));

    for k in fusion_window(frames.len(), target, num_frames) {
        let src = &frames[k];
        if k == target {
            fused.points.extend_from_slice(&src.cloud.points);
            continue;
        }
        let to_target = world_to_target.compose(src.pose);
        for p in &src.cloud.points {
            if !p.dynamic {
                fused.points.push(LidarPoint {
                    position: to_target.apply(&p.position),
                    ..*p
                });
                continue;
            }
            match mode {
                DynamicMode::KeepAll => fused.points.push(LidarPoint {
                    position: to_target.apply(&p.position),
                    ..*p
                }),
                DynamicMode::DropDynamic => {}
                DynamicMode::Compensate => {
                    let world = src.pose.apply(&p.position);
                    // Points whose owner cannot be recovered are dropped
                    // rather than fused at a stale location.
                    if let Some(shift) = motion.and_then(|m| m.displacement(&world, src.timestamp, tgt.timestamp)) {
                        fused.points.push(LidarPoint {
                            position: world_to_target.apply(&(world + shift)),
                            ..*p
                        });
                    }
                }
            }
        }
    }
    Ok(fused)
}

/// Discretization contract: `dims` are (D, H, W) along (Z, Y, X) and
/// `voxel_size` is (v_Z, v_H, v_W) to match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGridSpec {
    /// Minimum corner, (x, y, z) in meters.
    pub origin: Vec3,
    pub voxel_size: [f64; 3],
    pub dims: [usize; 3],
}

impl VoxelGridSpec {
    pub fn new(origin: Vec3, voxel_size: [f64; 3], dims: [usize; 3]) -> Result<Self> {
        let spec = Self {
            origin,
            voxel_size,
            dims,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.voxel_size.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::invalid("voxel_size", "must be finite and positive"));
        }
        if self.dims.contains(&0) {
            return Err(Error::invalid("dims", "every dimension must be >= 1"));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("origin", "must be finite"));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.dims[0]
    }

    pub fn height(&self) -> usize {
        self.dims[1]
    }

    pub fn width(&self) -> usize {
        self.dims[2]
    }

    pub fn cell_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Extent along (Z, Y, X).
    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.voxel_size[0],
            self.dims[1] as f64 * self.voxel_size[1],
            self.dims[2] as f64 * self.voxel_size[2],
        ]
    }

    #[inline]
    pub fn flat_index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.dims[1] + h) * self.dims[2] + w
    }

    pub fn unflatten(&self, index: usize) -> (usize, usize, usize) {
        let w = index % self.dims[2];
        let h = (index / self.dims[2]) % self.dims[1];
        let d = index / (self.dims[2] * self.dims[1]);
        (d, h, w)
    }

    #[inline]
    fn axis_index(value: f64, origin: f64, size: f64, n: usize) -> Option<usize> {
        let i = ((value - origin) / size).floor();
        if i >= 0.0 && i < n as f64 {
            Some(i as usize)
        } else {
            None
        }
    }

    /// Cell (d, h, w) containing `p`, if inside the grid.
    #[inline]
    pub fn locate(&self, p: &Vec3) -> Option<(usize, usize, usize)> {
        let d = Self::axis_index(p.z, self.origin.z, self.voxel_size[0], self.dims[0])?;
        let h = Self::axis_index(p.y, self.origin.y, self.voxel_size[1], self.dims[1])?;
        let w = Self::axis_index(p.x, self.origin.x, self.voxel_size[2], self.dims[2])?;
        Some((d, h, w))
    }

    /// BEV cell (h, w) containing the xy part of `p`; z is ignored.
    #[inline]
    pub fn locate_xy(&self, p: &Vec3) -> Option<(usize, usize)> {
        let h = Self::axis_index(p.y, self.origin.y, self.voxel_size[1], self.dims[1])?;
        let w = Self::axis_index(p.x, self.origin.x, self.voxel_size[2], self.dims[2])?;
        Some((h, w))
    }

    pub fn cell_center(&self, d: usize, h: usize, w: usize) -> Vec3 {
        Vec3::new(
            self.origin.x + (w as f64 + 0.5) * self.voxel_size[2],
            self.origin.y + (h as f64 + 0.5) * self.voxel_size[1],
            self.origin.z + (d as f64 + 0.5) * self.voxel_size[0],
        )
    }
}

/// Binary occupancy target, one byte (0 or 1) per cell in (d, h, w) order.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub spec: VoxelGridSpec,
    pub data: Vec<u8>,
}

impl OccupancyGrid {
    pub fn empty(spec: VoxelGridSpec) -> Self {
        Self {
            spec,
            data: vec![0; spec.cell_count()],
        }
    }

    pub fn get(&self, d: usize, h: usize, w: usize) -> bool {
        self.data[self.spec.flat_index(d, h, w)] != 0
    }

    pub fn occupied_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn occupied_cells(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| self.spec.unflatten(i))
    }
}

/// Semantic target, one class id per cell; 0 is free.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGrid {
    pub spec: VoxelGridSpec,
    pub data: Vec<u8>,
}

impl SemanticGrid {
    pub fn empty(spec: VoxelGridSpec) -> Self {
        Self {
            spec,
            data: vec![0; spec.cell_count()],
        }
    }

    pub fn get(&self, d: usize, h: usize, w: usize) -> u8 {
        self.data[self.spec.flat_index(d, h, w)]
    }

    /// Occupancy mask implied by the nonzero classes.
    pub fn to_occupancy(&self) -> OccupancyGrid {
        OccupancyGrid {
            spec: self.spec,
            data: self.data.iter().map(|&c| u8::from(c != 0)).collect(),
        }
    }
}

pub fn voxelize_occupancy(cloud: &PointCloud, spec: &VoxelGridSpec) -> OccupancyGrid {
    let mut grid = OccupancyGrid::empty(*spec);
    for p in &cloud.points {
        if let Some((d, h, w)) = spec.locate(&p.position) {
            grid.data[spec.flat_index(d, h, w)] = 1;
        }
    }
    grid
}

/// Majority label per occupied cell; ties go to the smaller class id.
pub fn voxelize_semantic(cloud: &PointCloud, spec: &VoxelGridSpec) -> SemanticGrid {
    let mut counts = vec![[0u32; NUM_CLASSES]; spec.cell_count()];
    for p in &cloud.points {
        if let Some((d, h, w)) = spec.locate(&p.position) {
            counts[spec.flat_index(d, h, w)][p.label as usize] += 1;
        }
    }
    let data = counts
        .iter()
        .map(|c| {
            let mut best = 0u8;
            let mut best_count = 0u32;
            for (class, &n) in c.iter().enumerate().skip(1) {
                if n > best_count {
                    best = class as u8;
                    best_count = n;
                }
            }
            best
        })
        .collect();
    SemanticGrid { spec: *spec, data }
}

//! Procedural driving-like worlds and the simulated sensors that observe them.
//!
//! A scene is a ground plane plus axis-aligned boxes. Dynamic boxes translate
//! with constant velocity and never rotate. LiDAR and cameras share one ray
//! caster: slab-method box intersection, nearest hit wins, exact ties go to
//! the lower primitive index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Frame, SE3Pose, Vec3};
use crate::labels::{ObjectMotion, PointCloud, SemanticClass};
use crate::view::CameraRig;

/// Raster channels: inverse range, then one-hot planes for ground, static
/// structure and dynamic objects.
pub const IMAGE_CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Horizontal plane `z = height` with unbounded xy extent.
    GroundPlane {
        height: f64,
    },
    Box {
        center: Vec3,
        half_extents: Vec3,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenePrimitive {
    pub shape: Shape,
    pub velocity: Vec3,
    pub label: SemanticClass,
}

impl ScenePrimitive {
    pub fn ground(height: f64) -> Self {
        Self {
            shape: Shape::GroundPlane { height },
            velocity: Vec3::zeros(),
            label: SemanticClass::Ground,
        }
    }

    pub fn static_box(center: Vec3, half_extents: Vec3) -> Self {
        Self {
            shape: Shape::Box { center, half_extents },
            velocity: Vec3::zeros(),
            label: SemanticClass::StaticStructure,
        }
    }

    pub fn moving_box(center: Vec3, half_extents: Vec3, velocity: Vec3) -> Self {
        Self {
            shape: Shape::Box { center, half_extents },
            velocity,
            label: SemanticClass::DynamicObject,
        }
    }

    pub fn is_dynamic(&self) -> bool {
        self.velocity != Vec3::zeros()
    }

    /// Axis-aligned bounds `(min, max)` at time `t`; `None` for the plane.
    pub fn bounds_at(&self, t: f64) -> Option<(Vec3, Vec3)> {
        match self.shape {
            Shape::GroundPlane { .. } => None,
            Shape::Box { center, half_extents } => {
                let c = center + self.velocity * t;
                Some((c - half_extents, c + half_extents))
            }
        }
    }

    /// Ray parameter of the first intersection with `origin + s * dir`,
    /// `s > 0`, at time `t`.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3, t: f64) -> Option<f64> {
        match self.shape {
            Shape::GroundPlane { height } => {
                if dir.z == 0.0 {
                    return None;
                }
                let s = (height - origin.z) / dir.z;
                (s > 0.0).then_some(s)
            }
            Shape::Box { .. } => {
                let (lo, hi) = self.bounds_at(t)?;
                slab_intersect(origin, dir, &lo, &hi)
            }
        }
    }

    /// Distance from `p` to the primitive's surface at time `t`.
    pub fn surface_distance(&self, p: &Vec3, t: f64) -> f64 {
        match self.shape {
            Shape::GroundPlane { height } => (p.z - height).abs(),
            Shape::Box { center, half_extents } => {
                let q = (p - (center + self.velocity * t)).abs() - half_extents;
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside.abs()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let Shape::Box { half_extents, .. } = self.shape {
            if !half_extents.iter().all(|v| *v > 0.0) {
                return Err(Error::invalid("half_extents", "must be positive"));
            }
        }
        if self.label == SemanticClass::DynamicObject && !self.is_dynamic() {
            return Err(Error::invalid("velocity", "dynamic objects must move"));
        }
        Ok(())
    }
}

/// Slab-method ray/AABB test. Returns the entry parameter, or the exit
/// parameter when the origin is inside.
pub fn slab_intersect(origin: &Vec3, dir: &Vec3, lo: &Vec3, hi: &Vec3) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let t1 = (lo[a] - origin[a]) / dir[a];
        let t2 = (hi[a] - origin[a]) / dir[a];
        let (t1, t2) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        t_near = t_near.max(t1);
        t_far = t_far.min(t2);
    }
    if t_far < t_near || t_far <= 0.0 {
        return None;
    }
    Some(if t_near > 0.0 { t_near } else { t_far })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub range: f64,
    pub primitive: usize,
    pub label: SemanticClass,
    pub dynamic: bool,
}

/// Generation parameters for [`build_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub static_boxes: usize,
    pub dynamic_boxes: usize,
    pub max_objects: usize,
    pub ground_height: f64,
    /// Objects are placed with xy center radius in `[min, max]`.
    pub placement_radius: (f64, f64),
    /// Boxes stay clear of `|y| < corridor_half_width` (the ego lane).
    pub corridor_half_width: f64,
    pub half_extent_xy: (f64, f64),
    pub half_extent_z: (f64, f64),
    pub speed: (f64, f64),
    pub max_retries: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            static_boxes: 5,
            dynamic_boxes: 2,
            max_objects: 16,
            ground_height: 0.0,
            placement_radius: (2.5, 7.5),
            corridor_half_width: 1.2,
            half_extent_xy: (0.4, 1.2),
            half_extent_z: (0.4, 1.0),
            speed: (1.0, 2.5),
            max_retries: 200,
        }
    }
}

/// Immutable world description. Primitive 0 is always the ground plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<ScenePrimitive>,
}

const PLACEMENT_MARGIN: f64 = 0.2;

fn aabb_overlap(a: &(Vec3, Vec3), b: &(Vec3, Vec3), margin: f64) -> bool {
    (0..3).all(|i| a.0[i] < b.1[i] + margin && b.0[i] < a.1[i] + margin)
}

pub fn build_scene(seed: u64, config: &SceneConfig) -> Result<Scene> {
    let total = config.static_boxes + config.dynamic_boxes;
    if total > config.max_objects {
        return Err(Error::invalid(
            "scene",
            format!("{total} boxes exceed the maximum of {}", config.max_objects),
        ));
    }
    let (r_min, r_max) = config.placement_radius;
    if !(r_min >= 0.0 && r_min < r_max) {
        return Err(Error::invalid("placement_radius", "need 0 <= min < max"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut primitives = vec![ScenePrimitive::ground(config.ground_height)];
    let mut placed: Vec<(Vec3, Vec3)> = Vec::new();

    for i in 0..total {
        let dynamic = i >= config.static_boxes;
        let mut accepted = None;
        for _ in 0..config.max_retries {
            let half = Vec3::new(
                rng.gen_range(config.half_extent_xy.0..=config.half_extent_xy.1),
                rng.gen_range(config.half_extent_xy.0..=config.half_extent_xy.1),
                rng.gen_range(config.half_extent_z.0..=config.half_extent_z.1),
            );
            let x = rng.gen_range(-r_max..=r_max);
            let y = rng.gen_range(-r_max..=r_max);
            let r = x.hypot(y);
            if r < r_min || r > r_max || y.abs() - half.y < config.corridor_half_width {
                continue;
            }
            let center = Vec3::new(x, y, config.ground_height + half.z);
            let bounds = (center - half, center + half);
            if placed.iter().any(|b| aabb_overlap(b, &bounds, PLACEMENT_MARGIN)) {
                continue;
            }
            accepted = Some((center, half));
            break;
        }
        let Some((center, half)) = accepted else {
            return Err(Error::Placement(format!(
                "object {i} could not be placed after {} attempts",
                config.max_retries
            )));
        };
        placed.push((center - half, center + half));
        primitives.push(if dynamic {
            let speed = rng.gen_range(config.speed.0..=config.speed.1);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            ScenePrimitive::moving_box(center, half, Vec3::new(sign * speed, 0.0, 0.0))
        } else {
            ScenePrimitive::static_box(center, half)
        });
    }
    Ok(Scene { primitives })
}

impl Scene {
    pub fn new(primitives: Vec<ScenePrimitive>) -> Result<Self> {
        let grounds = primitives
            .iter()
            .filter(|p| matches!(p.shape, Shape::GroundPlane { .. }))
            .count();
        if grounds != 1 {
            return Err(Error::invalid(
                "scene",
                format!("needs exactly one ground plane, got {grounds}"),
            ));
        }
        for p in &primitives {
            p.validate()?;
        }
        Ok(Self { primitives })
    }

    /// Nearest hit of a unit-direction ray within `max_range` at time `t`.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3, t: f64, max_range: f64) -> Option<RayHit> {
        let mut best: Option<(f64, usize)> = None;
        for (i, prim) in self.primitives.iter().enumerate() {
            if let Some(s) = prim.intersect(origin, dir, t) {
                if best.is_none_or(|(b, _)| s < b) {
                    best = Some((s, i));
                }
            }
        }
        let (range, i) = best?;
        (range <= max_range).then(|| RayHit {
            range,
            primitive: i,
            label: self.primitives[i].label,
            dynamic: self.primitives[i].is_dynamic(),
        })
    }

    /// Index and surface distance of the closest dynamic primitive to `p`.
    pub fn nearest_dynamic(&self, p: &Vec3, t: f64) -> Option<(usize, f64)> {
        self.primitives
            .iter()
            .enumerate()
            .filter(|(_, prim)| prim.is_dynamic())
            .map(|(i, prim)| (i, prim.surface_distance(p, t)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Tolerance for attributing a stored (possibly `f32`-rounded) point to a
/// dynamic object's surface.
const OWNERSHIP_TOL: f64 = 1e-3;

impl ObjectMotion for Scene {
    fn displacement(&self, world_point: &Vec3, from_t: f64, to_t: f64) -> Option<Vec3> {
        let (i, dist) = self.nearest_dynamic(world_point, from_t)?;
        (dist <= OWNERSHIP_TOL).then(|| self.primitives[i].velocity * (to_t - from_t))
    }
}

/// Timestamped ego poses (ego-to-world).
#[derive(Debug, Clone, PartialEq)]
pub struct EgoTrajectory {
    pub poses: Vec<(f64, SE3Pose)>,
}

impl EgoTrajectory {
    pub fn new(poses: Vec<(f64, SE3Pose)>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::invalid("trajectory", "needs at least one pose"));
        }
        if poses.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::invalid("trajectory", "timestamps must strictly increase"));
        }
        for (_, p) in &poses {
            p.validate()?;
        }
        Ok(Self { poses })
    }

    /// Constant-velocity drive along +x at `height`, centered on the origin
    /// at the middle frame.
    pub fn straight(frames: usize, dt: f64, speed: f64, height: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        let mid = (frames.saturating_sub(1)) as f64 / 2.0;
        let poses = (0..frames)
            .map(|k| {
                let t = k as f64 * dt;
                let x = (k as f64 - mid) * dt * speed;
                (t, SE3Pose::from_translation(Vec3::new(x, 0.0, height)))
            })
            .collect();
        Self::new(poses)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarSpec {
    pub elevation_channels: usize,
    pub azimuth_steps: usize,
    pub max_range: f64,
    /// Lowest and highest beam elevation in radians.
    pub elevation_range: (f64, f64),
}

impl LidarSpec {
    pub fn validate(&self) -> Result<()> {
        if self.elevation_channels < 1 {
            return Err(Error::invalid("lidar.channels", "need at least one channel"));
        }
        if self.azimuth_steps < 4 {
            return Err(Error::invalid("lidar.azimuth_steps", "need at least 4 steps"));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::invalid("lidar.max_range", "must be positive"));
        }
        Ok(())
    }

    pub fn elevation(&self, channel: usize) -> f64 {
        let (lo, hi) = self.elevation_range;
        if self.elevation_channels == 1 {
            lo
        } else {
            lo + (hi - lo) * channel as f64 / (self.elevation_channels - 1) as f64
        }
    }

    /// Unit beam direction in the ego frame.
    pub fn direction(&self, channel: usize, step: usize) -> Vec3 {
        let el = self.elevation(channel);
        let az = std::f64::consts::TAU * step as f64 / self.azimuth_steps as f64;
        Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }
}

/// One LiDAR sweep at time `t`, expressed in the ego frame at `t`.
pub fn simulate_lidar(scene: &Scene, ego_pose: &SE3Pose, t: f64, spec: &LidarSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut cloud = PointCloud::new(Frame::Ego(t));
    for ch in 0..spec.elevation_channels {
        for step in 0..spec.azimuth_steps {
            let dir = spec.direction(ch, step);
            let world_dir = ego_pose.rotate(&dir);
            if let Some(hit) = scene.cast(&ego_pose.translation, &world_dir, t, spec.max_range) {
                cloud.push(dir * hit.range, hit.label, hit.dynamic);
            }
        }
    }
    Ok(cloud)
}

/// Channel-major `f32` raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRaster {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageRaster {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn at(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    #[inline]
    fn set(&mut self, channel: usize, row: usize, col: usize, value: f32) {
        self.data[(channel * self.height + row) * self.width + col] = value;
    }
}

/// Renders inverse-range and semantic rasters for every camera of `rig`.
pub fn render_views(
    scene: &Scene,
    ego_pose: &SE3Pose,
    t: f64,
    rig: &CameraRig,
    max_range: f64,
) -> Result<Vec<ImageRaster>> {
    rig.validate()?;
    let mut out = Vec::with_capacity(rig.len());
    for cam in &rig.cameras {
        let intr = &cam.intrinsics;
        let cam_to_world = ego_pose.compose(&cam.extrinsic);
        let mut img = ImageRaster::zeros(IMAGE_CHANNELS, intr.height, intr.width);
        for r in 0..intr.height {
            for c in 0..intr.width {
                let dir = cam_to_world.rotate(&intr.ray(c as f64, r as f64).normalize());
                if let Some(hit) = scene.cast(&cam_to_world.translation, &dir, t, max_range) {
                    img.set(0, r, c, (1.0 / hit.range) as f32);
                    img.set(hit.label as usize, r, c, 1.0);
                }
            }
        }
        out.push(img);
    }
    Ok(out)
}

/// All sensor data captured at one trajectory entry.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCameraFrame {
    pub images: Vec<ImageRaster>,
    pub rig: CameraRig,
    pub ego_pose: SE3Pose,
    pub timestamp: f64,
    /// LiDAR sweep in the ego frame.
    pub point_cloud: PointCloud,
    pub is_keyframe: bool,
}

pub fn generate_sequence(
    scene: &Scene,
    trajectory: &EgoTrajectory,
    rig: &CameraRig,
    lidar: &LidarSpec,
    keyframe_stride: usize,
    camera_range: f64,
) -> Result<Vec<MultiCameraFrame>> {
    if keyframe_stride < 1 {
        return Err(Error::invalid("keyframe_stride", "must be at least 1"));
    }
    trajectory
        .poses
        .iter()
        .enumerate()
        .map(|(k, (t, pose))| {
            Ok(MultiCameraFrame {
                images: render_views(scene, pose, *t, rig, camera_range)?,
                rig: rig.clone(),
                ego_pose: *pose,
                timestamp: *t,
                point_cloud: simulate_lidar(scene, pose, *t, lidar)?,
                is_keyframe: k % keyframe_stride == 0,
            })
        })
        .collect()
}

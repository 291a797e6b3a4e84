//! Pinhole camera geometry, frustum lifting and BEV splatting.
//!
//! Camera frame: x right, y down, z forward. Ego frame: x forward, y left,
//! z up. Pixel (row r, col c) is sampled at image coordinates (u, v) = (c, r).

use crate::error::{Error, Result};
use crate::geometry::{SE3Pose, Vec3};
use crate::labels::VoxelGridSpec;
use crate::tensor::Tensor;
use nalgebra::Matrix3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Intrinsics from full fields of view (radians), principal point at
    /// `(width / 2, height / 2)`.
    pub fn from_fov(width: usize, height: usize, hfov: f64, vfov: f64) -> Result<Self> {
        let fx = (width as f64 / 2.0) / (hfov / 2.0).tan();
        let fy = (height as f64 / 2.0) / (vfov / 2.0).tan();
        Self::new(fx, fy, (width / 2) as f64, (height / 2) as f64, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::invalid("intrinsics", "focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) || !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid("intrinsics", "principal point outside the image"));
        }
        Ok(())
    }

    /// Unnormalized camera-frame direction through pixel (u, v), z = 1.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    /// Camera-to-ego transform.
    pub extrinsic: SE3Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
}

/// Rotation taking camera axes (right, down, forward) to an ego-frame camera
/// looking along yaw `yaw` with zero pitch.
pub fn camera_rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    let right = Vec3::new(s, -c, 0.0);
    let down = Vec3::new(0.0, 0.0, -1.0);
    let forward = Vec3::new(c, s, 0.0);
    Matrix3::from_columns(&[right, down, forward])
}

impl CameraRig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self> {
        let rig = Self { cameras };
        rig.validate()?;
        Ok(rig)
    }

    /// `count` identical cameras at the ego origin, yawed at multiples of
    /// 360° / count starting from the forward axis.
    pub fn surround(count: usize, intrinsics: CameraIntrinsics) -> Result<Self> {
        let cameras = (0..count)
            .map(|i| {
                let yaw = i as f64 * std::f64::consts::TAU / count as f64;
                Camera {
                    intrinsics,
                    extrinsic: SE3Pose {
                        rotation: camera_rotation(yaw),
                        translation: Vec3::zeros(),
                    },
                }
            })
            .collect();
        Self::new(cameras)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::invalid("rig", "needs at least one camera"));
        }
        for cam in &self.cameras {
            cam.intrinsics.validate()?;
            cam.extrinsic.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// Shared image size, or an error when views differ.
    pub fn image_size(&self) -> Result<(usize, usize)> {
        let first = &self.cameras[0].intrinsics;
        if self
            .cameras
            .iter()
            .any(|c| c.intrinsics.width != first.width || c.intrinsics.height != first.height)
        {
            return Err(Error::invalid("rig", "all views must share the image size"));
        }
        Ok((first.height, first.width))
    }
}

/// Uniform depth discretization of each pixel ray, sampled at bin centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrustumSpec {
    pub depth_bins: usize,
    pub depth_min: f64,
    pub depth_max: f64,
}

impl FrustumSpec {
    pub fn new(depth_bins: usize, depth_min: f64, depth_max: f64) -> Result<Self> {
        let f = Self {
            depth_bins,
            depth_min,
            depth_max,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth_bins < 2 {
            return Err(Error::invalid("depth_bins", "need at least 2 bins"));
        }
        if !(self.depth_min > 0.0 && self.depth_min < self.depth_max) {
            return Err(Error::invalid("depth range", "need 0 < depth_min < depth_max"));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.depth_max - self.depth_min) / self.depth_bins as f64
    }

    pub fn bin_center(&self, bin: usize) -> f64 {
        self.depth_min + (bin as f64 + 0.5) * self.bin_width()
    }
}

/// Pinhole projection of a camera-frame point to (u, v, depth).
pub fn project(point: &Vec3, intr: &CameraIntrinsics) -> Result<(f64, f64, f64)> {
    if !(point.z > 0.0) {
        return Err(Error::Domain(format!("cannot project point with z = {}", point.z)));
    }
    Ok((
        intr.fx * point.x / point.z + intr.cx,
        intr.fy * point.y / point.z + intr.cy,
        point.z,
    ))
}

/// Back-projects pixel (u, v) at z-depth `depth` and maps it to the ego frame.
pub fn unproject(u: f64, v: f64, depth: f64, intr: &CameraIntrinsics, ext: &SE3Pose) -> Result<Vec3> {
    if !(depth > 0.0) {
        return Err(Error::Domain(format!("cannot unproject at depth {depth}")));
    }
    let cam = Vec3::new((u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth);
    Ok(ext.apply(&cam))
}

/// Precomputed BEV cell for every (view, depth bin, pixel) frustum point.
///
/// The geometry is independent of feature values, so one plan serves every
/// sample sharing a rig, frustum and grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatPlan {
    pub views: usize,
    pub bins: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    /// Flat BEV cell `h * W + w`, laid out like a `(views, bins, h, w)`
    /// tensor; `None` for points outside the grid.
    cells: Vec<Option<u32>>,
}

impl SplatPlan {
    pub fn new(rig: &CameraRig, frustum: &FrustumSpec, spec: &VoxelGridSpec) -> Result<Self> {
        rig.validate()?;
        frustum.validate()?;
        spec.validate()?;
        let (ih, iw) = rig.image_size()?;
        let mut cells = Vec::with_capacity(rig.len() * frustum.depth_bins * ih * iw);
        for cam in &rig.cameras {
            for b in 0..frustum.depth_bins {
                let depth = frustum.bin_center(b);
                for r in 0..ih {
                    for c in 0..iw {
                        let p = unproject(c as f64, r as f64, depth, &cam.intrinsics, &cam.extrinsic)?;
                        cells.push(spec.locate_xy(&p).map(|(h, w)| (h * spec.width() + w) as u32));
                    }
                }
            }
        }
        Ok(Self {
            views: rig.len(),
            bins: frustum.depth_bins,
            image_height: ih,
            image_width: iw,
            grid_height: spec.height(),
            grid_width: spec.width(),
            cells,
        })
    }

    pub fn pixels(&self) -> usize {
        self.image_height * self.image_width
    }

    pub fn cell(&self, view: usize, bin: usize, pixel: usize) -> Option<usize> {
        self.cells[(view * self.bins + bin) * self.pixels() + pixel].map(|c| c as usize)
    }

    /// Whether every frustum point lands inside the grid.
    pub fn fully_inside(&self) -> bool {
        self.cells.iter().all(Option::is_some)
    }

    fn check_inputs(&self, features: &Tensor, depth: &Tensor) -> Result<usize> {
        let fs = features.shape();
        let ds = depth.shape();
        let (n, px_h, px_w) = (self.views, self.image_height, self.image_width);
        if fs.len() != 4 || fs[0] != n || fs[2] != px_h || fs[3] != px_w {
            return Err(Error::shape(
                "lift_splat",
                format!("features {fs:?}, expected ({n}, C, {px_h}, {px_w})"),
            ));
        }
        if ds != [n, self.bins, px_h, px_w] {
            return Err(Error::shape(
                "lift_splat",
                format!("depth {ds:?}, expected ({n}, {}, {px_h}, {px_w})", self.bins),
            ));
        }
        Ok(fs[1])
    }

    /// Sum-pools depth-weighted features into a `(C, H, W)` BEV tensor.
    pub fn forward(&self, features: &Tensor, depth: &Tensor) -> Result<Tensor> {
        let channels = self.check_inputs(features, depth)?;
        let px = self.pixels();
        let cells = self.grid_height * self.grid_width;
        let mut out = vec![0.0; channels * cells];
        let f = features.data();
        let dd = depth.data();
        for v in 0..self.views {
            for b in 0..self.bins {
                let row = (v * self.bins + b) * px;
                for p in 0..px {
                    let Some(cell) = self.cells[row + p] else { continue };
                    let weight = dd[row + p];
                    let cell = cell as usize;
                    for c in 0..channels {
                        out[c * cells + cell] += weight * f[(v * channels + c) * px + p];
                    }
                }
            }
        }
        Tensor::new(vec![channels, self.grid_height, self.grid_width], out)
    }

    /// Gradients of the splat with respect to features and depth weights,
    /// given the upstream gradient of the `(C, H, W)` output.
    pub fn backward(&self, features: &Tensor, depth: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
        let channels = self.check_inputs(features, depth)?;
        let px = self.pixels();
        let cells = self.grid_height * self.grid_width;
        if grad_out.len() != channels * cells {
            return Err(Error::shape("lift_splat backward", "upstream gradient size"));
        }
        let f = features.data();
        let dd = depth.data();
        let g = grad_out.data();
        let mut gf = vec![0.0; f.len()];
        let mut gd = vec![0.0; dd.len()];
        for v in 0..self.views {
            for b in 0..self.bins {
                let row = (v * self.bins + b) * px;
                for p in 0..px {
                    let Some(cell) = self.cells[row + p] else { continue };
                    let cell = cell as usize;
                    let weight = dd[row + p];
                    let mut acc = 0.0;
                    for c in 0..channels {
                        let go = g[c * cells + cell];
                        let fi = (v * channels + c) * px + p;
                        gf[fi] += weight * go;
                        acc += f[fi] * go;
                    }
                    gd[row + p] = acc;
                }
            }
        }
        Ok((
            Tensor::new(features.shape().to_vec(), gf)?,
            Tensor::new(depth.shape().to_vec(), gd)?,
        ))
    }
}

/// BEV features `(C, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BevFeature {
    pub data: Tensor,
}

/// Voxel features `(C', D, H, W)` with `C = C' * D`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelFeature {
    pub data: Tensor,
}

/// Lifts per-view features with their depth distributions and splats them
/// into the BEV grid of `spec`.
pub fn lift_splat(
    features: &Tensor,
    depth_dist: &Tensor,
    rig: &CameraRig,
    frustum: &FrustumSpec,
    spec: &VoxelGridSpec,
) -> Result<BevFeature> {
    let plan = SplatPlan::new(rig, frustum, spec)?;
    Ok(BevFeature {
        data: plan.forward(features, depth_dist)?,
    })
}

/// Reshapes `(C, H, W)` into `(C / d, d, H, W)`: channel `c` becomes
/// `(c / d, c % d)`.
pub fn bev_to_voxel(bev: &BevFeature, d: usize) -> Result<VoxelFeature> {
    let s = bev.data.shape();
    if s.len() != 3 {
        return Err(Error::shape("bev_to_voxel", format!("expected (C, H, W), got {s:?}")));
    }
    if d == 0 || !s[0].is_multiple_of(d) {
        return Err(Error::shape(
            "bev_to_voxel",
            format!("{} channels are not divisible by {d} height bins", s[0]),
        ));
    }
    let shape = [s[0] / d, d, s[1], s[2]];
    Ok(VoxelFeature {
        data: bev.data.clone().reshape(&shape)?,
    })
}

pub fn voxel_to_bev(voxel: &VoxelFeature) -> Result<BevFeature> {
    let s = voxel.data.shape();
    if s.len() != 4 {
        return Err(Error::shape(
            "voxel_to_bev",
            format!("expected (C', D, H, W), got {s:?}"),
        ));
    }
    let shape = [s[0] * s[1], s[2], s[3]];
    Ok(BevFeature {
        data: voxel.data.clone().reshape(&shape)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 80.0, 32.0, 24.0, 64, 48).unwrap()
    }

    #[test]
    fn principal_point_projection() {
        let (u, v, d) = project(&Vec3::new(0.0, 0.0, 5.0), &intr()).unwrap();
        assert_eq!((u, v, d), (32.0, 24.0, 5.0));
    }

    #[test]
    fn offset_projection() {
        // 100 * 1 / 5 + 32
        let (u, _, _) = project(&Vec3::new(1.0, 0.0, 5.0), &intr()).unwrap();
        assert_eq!(u, 52.0);
    }

    #[test]
    fn projection_domain_errors() {
        assert!(project(&Vec3::new(0.0, 0.0, 0.0), &intr()).is_err());
        assert!(project(&Vec3::new(0.0, 0.0, -1.0), &intr()).is_err());
        assert!(unproject(1.0, 1.0, 0.0, &intr(), &SE3Pose::identity()).is_err());
    }

    #[test]
    fn axis_ray_unprojects_to_optical_axis() {
        let p = unproject(32.0, 24.0, 7.0, &intr(), &SE3Pose::identity()).unwrap();
        assert_eq!(p, Vec3::new(0.0, 0.0, 7.0));
    }

    #[test]
    fn yawed_camera_forward_ray_is_lateral() {
        let ext = SE3Pose {
            rotation: camera_rotation(std::f64::consts::FRAC_PI_2),
            translation: Vec3::zeros(),
        };
        let p = unproject(32.0, 24.0, 3.0, &intr(), &ext).unwrap();
        // Forward axis (cos 90°, sin 90°, 0) scaled by depth 3.
        assert!((p - Vec3::new(0.0, 3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
        assert!(FrustumSpec::new(1, 1.0, 2.0).is_err());
        assert!(FrustumSpec::new(4, 2.0, 2.0).is_err());
    }

    #[test]
    fn bev_voxel_reshape() {
        let data: Vec<f64> = (0..64 * 3 * 2).map(|i| i as f64).collect();
        let bev = BevFeature {
            data: Tensor::new(vec![64, 3, 2], data).unwrap(),
        };
        let vox = bev_to_voxel(&bev, 8).unwrap();
        assert_eq!(vox.data.shape(), &[8, 8, 3, 2]);
        // channel 13 -> (1, 5)
        let idx = ((8 + 5) * 3 + 1) * 2 + 1;
        assert_eq!(vox.data.data()[idx], ((13 * 3 + 1) * 2 + 1) as f64);
        assert_eq!(voxel_to_bev(&vox).unwrap(), bev);
        assert_eq!(bev_to_voxel(&bev, 1).unwrap().data.shape(), &[64, 1, 3, 2]);
        assert!(bev_to_voxel(&bev, 7).is_err());
    }
}

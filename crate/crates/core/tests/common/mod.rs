//! Random instances, brute-force oracles and suite runners shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use occpretrain::config::RunConfig;
use occpretrain::geometry::{Frame, SE3Pose, Vec3};
use occpretrain::io;
use occpretrain::labels::{
    voxelize_occupancy, voxelize_semantic, PointCloud, SemanticClass, VoxelGridSpec, NUM_CLASSES,
};
use occpretrain::net::model::Bound;
use occpretrain::net::{grad_check, Coverage, FocalLossParams, Graph, Model, ModelConfig, ModelParams, Var};
use occpretrain::scene::ImageRaster;
use occpretrain::train::{Checkpoint, Provenance, Stage};
use occpretrain::view::{project, unproject, Camera, CameraIntrinsics, CameraRig, FrustumSpec, SplatPlan};
use occpretrain::{Result, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
pub fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.gen_range(0.05..1.5);
            if r.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn coeffs(r: &mut ChaCha8Rng, n: usize) -> Arc<[f64]> {
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect::<Vec<_>>().into()
}

// ---------------------------------------------------------------- gradients

pub const GRAD_TOL: f64 = 1e-5;

pub struct OpResult {
    pub op: &'static str,
    pub instances: usize,
    pub worst: f64,
}

/// Random rig with 1..=3 cameras at random yaws and small offsets.
pub fn random_rig(r: &mut ChaCha8Rng, views: usize, w: usize, h: usize) -> CameraRig {
    let cams = (0..views)
        .map(|_| {
            let intr = CameraIntrinsics::from_fov(w, h, r.gen_range(0.6..1.6), r.gen_range(0.5..1.4)).unwrap();
            let yaw = r.gen_range(-PI..PI);
            let t = Vec3::new(r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5), r.gen_range(0.0..0.5));
            Camera {
                intrinsics: intr,
                extrinsic: SE3Pose {
                    rotation: occpretrain::view::camera_rotation(yaw),
                    translation: t,
                },
            }
        })
        .collect();
    CameraRig::new(cams).unwrap()
}

fn splat_instance(r: &mut ChaCha8Rng) -> (CameraRig, FrustumSpec, VoxelGridSpec) {
    let views = r.gen_range(1..=3);
    let (w, h) = (r.gen_range(2..=5), r.gen_range(2..=4));
    let rig = random_rig(r, views, w, h);
    let frustum = FrustumSpec::new(r.gen_range(2..=6), r.gen_range(0.5..2.0), r.gen_range(4.0..9.0)).unwrap();
    let spec = VoxelGridSpec::new(
        Vec3::new(-6.0, -6.0, -2.0),
        [1.0, r.gen_range(0.8..2.0), r.gen_range(0.8..2.0)],
        [2, r.gen_range(3..=8), r.gen_range(3..=8)],
    )
    .unwrap();
    (rig, frustum, spec)
}

fn tiny_model(r: &mut ChaCha8Rng) -> Model {
    let (rig, frustum, spec) = splat_instance(r);
    let cfg = ModelConfig {
        encoder_width: 3,
        voxel_channels: 2,
        grid_depth: spec.depth(),
        depth_bins: frustum.depth_bins,
        decoder_width: 3,
        ..ModelConfig::default()
    };
    Model::new(cfg, &rig, &frustum, &spec).unwrap()
}

pub type GradFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// One random instance of `op`: the scalar function and its inputs.
pub fn grad_instance(op: &str, r: &mut ChaCha8Rng) -> (GradFn, Vec<(String, Tensor)>, Coverage) {
    let all = Coverage::All;
    match op {
        "conv2d" => {
            let (n, ci, co, h, w) = (
                r.gen_range(1..=2),
                r.gen_range(1..=3),
                r.gen_range(1..=3),
                r.gen_range(3..=5),
                r.gen_range(3..=5),
            );
            let k = if r.gen_bool(0.5) { 3 } else { 1 };
            let c = coeffs(r, n * co * h * w);
            let inputs = vec![
                ("x".into(), random_tensor(r, &[n, ci, h, w], -1.0, 1.0)),
                ("w".into(), random_tensor(r, &[co, ci, k, k], -1.0, 1.0)),
                ("b".into(), random_tensor(r, &[co], -1.0, 1.0)),
            ];
            (
                Box::new(move |g, v| {
                    let y = g.conv2d(v[0], v[1], v[2])?;
                    g.project(y, c.clone())
                }),
                inputs,
                all,
            )
        }
        "conv3d" => {
            let (ci, co, d, h, w) = (
                r.gen_range(1..=2),
                r.gen_range(1..=2),
                r.gen_range(3..=5),
                r.gen_range(3..=5),
                r.gen_range(3..=5),
            );
            let k = if r.gen_bool(0.7) { 3 } else { 1 };
            let c = coeffs(r, co * d * h * w);
            let inputs = vec![
                ("x".into(), random_tensor(r, &[ci, d, h, w], -1.0, 1.0)),
                ("w".into(), random_tensor(r, &[co, ci, k, k, k], -1.0, 1.0)),
                ("b".into(), random_tensor(r, &[co], -1.0, 1.0)),
            ];
            (
                Box::new(move |g, v| {
                    let y = g.conv3d(v[0], v[1], v[2])?;
                    g.project(y, c.clone())
                }),
                inputs,
                all,
            )
        }
        "relu" | "sigmoid" | "reshape" | "scale" | "project" => {
            let shape = [r.gen_range(3..=5), r.gen_range(3..=5), r.gen_range(3..=5)];
            let n: usize = shape.iter().product();
            let c = coeffs(r, n);
            let factor = r.gen_range(-2.0..2.0);
            let x = if op == "relu" {
                away_from_zero(r, &shape)
            } else {
                random_tensor(r, &shape, -3.0, 3.0)
            };
            let op = op.to_string();
            (
                Box::new(move |g, v| {
                    let y = match op.as_str() {
                        "relu" => g.relu(v[0])?,
                        "sigmoid" => g.sigmoid(v[0])?,
                        "reshape" => g.reshape(v[0], &[n])?,
                        "scale" => g.scale(v[0], factor)?,
                        _ => v[0],
                    };
                    g.project(y, c.clone())
                }),
                vec![("x".into(), x)],
                all,
            )
        }
        "softmax" => {
            let shape = [r.gen_range(3..=5), r.gen_range(3..=5), r.gen_range(3..=5)];
            let axis = r.gen_range(0..3);
            let c = coeffs(r, shape.iter().product());
            (
                Box::new(move |g, v| {
                    let y = g.softmax(v[0], axis)?;
                    g.project(y, c.clone())
                }),
                vec![("x".into(), random_tensor(r, &shape, -3.0, 3.0))],
                all,
            )
        }
        "add" => {
            let shape = [r.gen_range(3..=5), r.gen_range(3..=5)];
            let c = coeffs(r, shape.iter().product());
            (
                Box::new(move |g, v| {
                    let y = g.add(v[0], v[1])?;
                    // Reusing an input exercises gradient accumulation.
                    let y = g.add(y, v[0])?;
                    g.project(y, c.clone())
                }),
                vec![
                    ("a".into(), random_tensor(r, &shape, -1.0, 1.0)),
                    ("b".into(), random_tensor(r, &shape, -1.0, 1.0)),
                ],
                all,
            )
        }
        "lift_splat" => {
            let (rig, frustum, spec) = splat_instance(r);
            let plan = Arc::new(SplatPlan::new(&rig, &frustum, &spec).unwrap());
            let (h, w) = rig.image_size().unwrap();
            let ch = r.gen_range(1..=3);
            let c = coeffs(r, ch * spec.height() * spec.width());
            let inputs = vec![
                ("features".into(), random_tensor(r, &[rig.len(), ch, h, w], -1.0, 1.0)),
                (
                    "depth".into(),
                    random_tensor(r, &[rig.len(), frustum.depth_bins, h, w], 0.0, 1.0),
                ),
            ];
            (
                Box::new(move |g, v| {
                    let y = g.lift_splat(v[0], v[1], plan.clone())?;
                    g.project(y, c.clone())
                }),
                inputs,
                all,
            )
        }
        "focal_loss" => {
            let n = r.gen_range(27..=125);
            let targets: Arc<[u8]> = (0..n).map(|_| u8::from(r.gen_bool(0.3))).collect::<Vec<_>>().into();
            let params = FocalLossParams {
                alpha_pos: r.gen_range(0.25..3.0),
                alpha_neg: r.gen_range(0.25..3.0),
                gamma: r.gen_range(0.0..3.0),
            };
            (
                Box::new(move |g, v| g.focal_loss(v[0], targets.clone(), params)),
                vec![("probs".into(), random_tensor(r, &[n], 0.05, 0.95))],
                all,
            )
        }
        "cross_entropy" => {
            let batched = r.gen_bool(0.5);
            let k = r.gen_range(2..=4);
            let (b, n) = (if batched { r.gen_range(1..=2) } else { 1 }, r.gen_range(3..=25));
            let shape = if batched { vec![b, k, n] } else { vec![k, n] };
            let labels: Arc<[u8]> = (0..b * n).map(|_| r.gen_range(0..k) as u8).collect::<Vec<_>>().into();
            let weights = coeffs(r, k).iter().map(|c| c.abs() + 0.1).collect::<Vec<_>>().into();
            (
                Box::new(move |g, v| g.cross_entropy(v[0], labels.clone(), Arc::clone(&weights), batched)),
                vec![("logits".into(), random_tensor(r, &shape, -3.0, 3.0))],
                all,
            )
        }
        "end_to_end" => {
            let model = tiny_model(r);
            // Random values everywhere: zero-initialized biases put empty
            // voxels exactly on the ReLU kink. The semantic head is unused.
            let params = ModelParams {
                tensors: model
                    .init(0)
                    .unwrap()
                    .tensors
                    .into_iter()
                    .filter(|(k, _)| !k.starts_with("sem_head."))
                    .map(|(k, t)| {
                        let t = random_tensor(r, t.shape(), -0.5, 0.5);
                        (k, t)
                    })
                    .collect(),
            };
            let (h, w) = (model.plan().image_height, model.plan().image_width);
            let x = random_tensor(r, &[model.plan().views, model.config.input_channels, h, w], 0.0, 1.0);
            let targets: Arc<[u8]> = (0..model.spec.cell_count())
                .map(|_| u8::from(r.gen_bool(0.3)))
                .collect::<Vec<_>>()
                .into();
            let names: Vec<String> = params.tensors.keys().cloned().collect();
            let mut inputs: Vec<(String, Tensor)> = params.tensors.into_iter().collect();
            inputs.push(("input".into(), x));
            let seed = r.gen();
            (
                Box::new(move |g, v| {
                    let bound = Bound {
                        vars: names.iter().cloned().zip(v.iter().copied()).collect::<BTreeMap<_, _>>(),
                    };
                    let probs = model.forward_occupancy(g, &bound, v[names.len()])?;
                    g.focal_loss(probs, targets.clone(), FocalLossParams::default())
                }),
                inputs,
                Coverage::Sample { count: 48, seed },
            )
        }
        _ => unreachable!("unknown op {op}"),
    }
}

pub const GRAD_OPS: &[&str] = &[
    "conv2d",
    "conv3d",
    "relu",
    "sigmoid",
    "softmax",
    "reshape",
    "add",
    "scale",
    "project",
    "lift_splat",
    "focal_loss",
    "cross_entropy",
    "end_to_end",
];

pub fn grad_suite(op: &'static str, instances: usize, seed: u64) -> OpResult {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut r = rng(seed.wrapping_mul(1000).wrapping_add(i as u64));
        let (f, inputs, coverage) = grad_instance(op, &mut r);
        let refs: Vec<(&str, Tensor)> = inputs.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
        let report = grad_check(f, &refs, coverage).unwrap_or_else(|e| panic!("{op} instance {i}: {e}"));
        if std::env::var("GRAD_DEBUG").is_ok() {
            eprintln!("{op} #{i}: {:?}", report.blocks);
        }
        worst = worst.max(report.max_rel_error());
    }
    OpResult { op, instances, worst }
}

// ----------------------------------------------------------------- geometry

/// Grid with dyadic origin and voxel sizes, so cell boundaries are exact.
pub fn dyadic_spec(r: &mut ChaCha8Rng) -> VoxelGridSpec {
    let sizes = [0.25, 0.5, 1.0, 2.0];
    let mut pick = || sizes[r.gen_range(0..sizes.len())];
    let voxel = [pick(), pick(), pick()];
    let origin = Vec3::new(
        r.gen_range(-16..0) as f64 * 0.5,
        r.gen_range(-16..0) as f64 * 0.5,
        r.gen_range(-8..0) as f64 * 0.25,
    );
    VoxelGridSpec::new(
        origin,
        voxel,
        [r.gen_range(1..=6), r.gen_range(1..=10), r.gen_range(1..=10)],
    )
    .unwrap()
}

/// Cloud around `spec`, a fifth of it snapped onto cell boundaries.
pub fn random_cloud(r: &mut ChaCha8Rng, spec: &VoxelGridSpec, n: usize) -> PointCloud {
    let ext = spec.extent();
    let lo = [spec.origin.z, spec.origin.y, spec.origin.x];
    let mut cloud = PointCloud::new(Frame::Ego(0.0));
    for _ in 0..n {
        let mut c = [0.0; 3];
        for a in 0..3 {
            c[a] = if r.gen_bool(0.2) {
                let k = r.gen_range(-1..=(spec.dims[a] as i64 + 1));
                lo[a] + k as f64 * spec.voxel_size[a]
            } else {
                lo[a] + r.gen_range(-0.2..1.2) * ext[a]
            };
        }
        let label = SemanticClass::from_id(r.gen_range(1..NUM_CLASSES as u8)).unwrap();
        cloud.push(Vec3::new(c[2], c[1], c[0]), label, r.gen_bool(0.2));
    }
    cloud
}

/// Brute force: test every point against every cell's half-open box.
pub fn voxel_oracle(cloud: &PointCloud, spec: &VoxelGridSpec) -> (Vec<u8>, Vec<u8>) {
    let [nd, nh, nw] = spec.dims;
    let mut counts = vec![[0u32; NUM_CLASSES]; spec.cell_count()];
    for p in &cloud.points {
        let q = p.position;
        for d in 0..nd {
            let z0 = spec.origin.z + d as f64 * spec.voxel_size[0];
            if !(q.z >= z0 && q.z < z0 + spec.voxel_size[0]) {
                continue;
            }
            for h in 0..nh {
                let y0 = spec.origin.y + h as f64 * spec.voxel_size[1];
                if !(q.y >= y0 && q.y < y0 + spec.voxel_size[1]) {
                    continue;
                }
                for w in 0..nw {
                    let x0 = spec.origin.x + w as f64 * spec.voxel_size[2];
                    if q.x >= x0 && q.x < x0 + spec.voxel_size[2] {
                        counts[(d * nh + h) * nw + w][p.label.id() as usize] += 1;
                    }
                }
            }
        }
    }
    let occ = counts.iter().map(|c| u8::from(c.iter().any(|&n| n > 0))).collect();
    let sem = counts
        .iter()
        .map(|c| {
            let max = *c.iter().max().unwrap();
            if max == 0 {
                0
            } else {
                c.iter().position(|&n| n == max).unwrap() as u8
            }
        })
        .collect();
    (occ, sem)
}

/// Triple loop over (view, bin, pixel) with its own unprojection and cell
/// search.
pub fn splat_oracle(
    rig: &CameraRig,
    frustum: &FrustumSpec,
    spec: &VoxelGridSpec,
    features: &Tensor,
    depth: &Tensor,
) -> Vec<f64> {
    let (ih, iw) = rig.image_size().unwrap();
    let ch = features.shape()[1];
    let (gh, gw) = (spec.height(), spec.width());
    let mut out = vec![0.0; ch * gh * gw];
    let step = (frustum.depth_max - frustum.depth_min) / frustum.depth_bins as f64;
    for (v, cam) in rig.cameras.iter().enumerate() {
        let k = &cam.intrinsics;
        for b in 0..frustum.depth_bins {
            let z = frustum.depth_min + step * (b as f64 + 0.5);
            for row in 0..ih {
                for col in 0..iw {
                    let pc = Vec3::new((col as f64 - k.cx) / k.fx * z, (row as f64 - k.cy) / k.fy * z, z);
                    let p = cam.extrinsic.rotation * pc + cam.extrinsic.translation;
                    let mut cell = None;
                    for h in 0..gh {
                        for w in 0..gw {
                            let x0 = spec.origin.x + w as f64 * spec.voxel_size[2];
                            let y0 = spec.origin.y + h as f64 * spec.voxel_size[1];
                            if p.x >= x0 && p.x < x0 + spec.voxel_size[2] && p.y >= y0 && p.y < y0 + spec.voxel_size[1]
                            {
                                cell = Some(h * gw + w);
                            }
                        }
                    }
                    let Some(cell) = cell else { continue };
                    let wgt = depth.data()[((v * frustum.depth_bins + b) * ih + row) * iw + col];
                    for c in 0..ch {
                        out[c * gh * gw + cell] += wgt * features.data()[((v * ch + c) * ih + row) * iw + col];
                    }
                }
            }
        }
    }
    out
}

/// Random splat instance whose grid covers most of the frustum.
pub fn splat_case(r: &mut ChaCha8Rng) -> (CameraRig, FrustumSpec, VoxelGridSpec, Tensor, Tensor) {
    let (rig, frustum, spec) = splat_instance(r);
    let (h, w) = rig.image_size().unwrap();
    let ch = r.gen_range(1..=4);
    let f = random_tensor(r, &[rig.len(), ch, h, w], -1.0, 1.0);
    let d = random_tensor(r, &[rig.len(), frustum.depth_bins, h, w], 0.0, 1.0);
    (rig, frustum, spec, f, d)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub struct SuiteLine {
    pub passed: bool,
    pub detail: String,
}

pub fn voxel_suite(clouds: usize, seed: u64) -> SuiteLine {
    let mut r = rng(seed);
    let mut mismatches = 0;
    let mut points = 0;
    for _ in 0..clouds {
        let spec = dyadic_spec(&mut r);
        let n = r.gen_range(0..=10_000);
        let cloud = random_cloud(&mut r, &spec, n);
        points += n;
        let (occ, sem) = voxel_oracle(&cloud, &spec);
        if voxelize_occupancy(&cloud, &spec).data != occ || voxelize_semantic(&cloud, &spec).data != sem {
            mismatches += 1;
        }
    }
    SuiteLine {
        passed: mismatches == 0,
        detail: format!("{clouds} clouds, {points} points, {mismatches} mismatching grids"),
    }
}

pub fn splat_suite(instances: usize, seed: u64) -> SuiteLine {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (rig, frustum, spec, f, d) = splat_case(&mut r);
        let plan = SplatPlan::new(&rig, &frustum, &spec).unwrap();
        let got = plan.forward(&f, &d).unwrap();
        let want = splat_oracle(&rig, &frustum, &spec, &f, &d);
        for (a, b) in got.data().iter().zip(&want) {
            worst = worst.max(rel_diff(*a, *b));
        }
    }
    SuiteLine {
        passed: worst <= 1e-6,
        detail: format!("{instances} instances, max rel diff {worst:.2e}"),
    }
}

pub fn projection_suite(cases: usize, seed: u64) -> SuiteLine {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let w = r.gen_range(4..64);
        let h = r.gen_range(4..64);
        let intr = CameraIntrinsics::from_fov(w, h, r.gen_range(0.3..2.5), r.gen_range(0.3..2.0)).unwrap();
        let ext = SE3Pose::from_euler(
            r.gen_range(-PI..PI),
            r.gen_range(-1.5..1.5),
            r.gen_range(-PI..PI),
            Vec3::new(r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0)),
        );
        // A point in front of the camera, expressed in the ego frame.
        let cam = Vec3::new(
            r.gen_range(-20.0..20.0),
            r.gen_range(-20.0..20.0),
            r.gen_range(0.1..60.0),
        );
        let ego = ext.apply(&cam);
        let (u, v, z) = project(&ext.inverse().apply(&ego), &intr).unwrap();
        let back = unproject(u, v, z, &intr, &ext).unwrap();
        worst = worst.max((back - ego).norm());
    }
    SuiteLine {
        passed: worst <= 1e-9,
        detail: format!("{cases} round trips, max error {worst:.2e} m"),
    }
}

// ------------------------------------------------------------------ losses

/// `(targets, probs, params, value)` evaluated by hand.
pub fn focal_references() -> Vec<(Vec<u8>, Vec<f64>, FocalLossParams, f64)> {
    let default = FocalLossParams::default();
    vec![
        (vec![1], vec![0.9], default, 0.118_497_143_996),
        (vec![0], vec![0.2], default, 0.149_225_086_559),
        (
            vec![1],
            vec![0.6],
            FocalLossParams {
                alpha_pos: 0.25,
                alpha_neg: 0.75,
                gamma: 2.0,
            },
            0.020_433_024_951,
        ),
        (vec![1, 0, 1, 0], vec![0.9, 0.2, 0.3, 0.05], default, 0.623_626_009_138),
    ]
}

pub fn focal_value(targets: &[u8], probs: &[f64], params: FocalLossParams) -> f64 {
    let mut g = Graph::new();
    let p = g
        .constant(Tensor::new(vec![probs.len()], probs.to_vec()).unwrap())
        .unwrap();
    let l = g.focal_loss(p, targets.to_vec().into(), params).unwrap();
    g.value(l).item()
}

// ------------------------------------------------------------------ formats

pub fn random_pose(r: &mut ChaCha8Rng) -> SE3Pose {
    SE3Pose::from_euler(
        r.gen_range(-PI..PI),
        r.gen_range(-1.5..1.5),
        r.gen_range(-PI..PI),
        Vec3::new(
            r.gen_range(-50.0..50.0),
            r.gen_range(-50.0..50.0),
            r.gen_range(-5.0..5.0),
        ),
    )
}

pub fn random_image(r: &mut ChaCha8Rng) -> ImageRaster {
    let (c, h, w) = (r.gen_range(1..=5), r.gen_range(1..=9), r.gen_range(1..=9));
    let mut img = ImageRaster::zeros(c, h, w);
    img.data.iter_mut().for_each(|v| *v = r.gen_range(-2.0..2.0));
    img
}

pub fn random_checkpoint(r: &mut ChaCha8Rng) -> Checkpoint {
    let cfg = ModelConfig {
        encoder_width: r.gen_range(1..=6),
        voxel_channels: r.gen_range(1..=3),
        decoder_width: r.gen_range(1..=6),
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&cfg, r.gen(), &["encoder.", "depth_head.", "occ_decoder.", "sem_head."]).unwrap();
    let mut run = RunConfig::default();
    run.train.seed = r.gen();
    let stage = [Stage::Pretrained, Stage::Finetuned, Stage::Scratch][r.gen_range(0..3)];
    let lineage = (0..r.gen_range(0..3)).map(|i| format!("{:064x}", i + 1)).collect();
    Checkpoint::new(&params, &Provenance::new(stage, r.gen_range(1..30), &run, lineage))
}

/// write -> read -> write for every binary format; returns the failures.
pub fn format_suite(instances: usize, seed: u64) -> (usize, Vec<String>) {
    let mut r = rng(seed);
    let mut failures = Vec::new();
    let mut check = |name: &str, a: &[u8], b: Result<Vec<u8>>| match b {
        Ok(b) if b == a => {}
        Ok(_) => failures.push(format!("{name}: bytes differ")),
        Err(e) => failures.push(format!("{name}: {e}")),
    };
    for _ in 0..instances {
        let spec = dyadic_spec(&mut r);
        let n = r.gen_range(0..200);
        let t = r.gen_range(0.0..100.0);
        let mut cloud = random_cloud(&mut r, &spec, n);
        cloud.frame = Frame::Ego(t);
        // Positions go through f32 on disk; start from representable ones.
        cloud
            .points
            .iter_mut()
            .for_each(|p| p.position = p.position.map(|v| f64::from(v as f32)));
        let bytes = io::encode_point_cloud(&cloud);
        check(
            "point cloud",
            &bytes,
            io::decode_point_cloud(&bytes, Frame::Ego(t)).map(|c| io::encode_point_cloud(&c)),
        );

        let bytes = io::encode_pose(&random_pose(&mut r));
        check("pose", &bytes, io::decode_pose(&bytes).map(|p| io::encode_pose(&p)));

        let occ = voxelize_occupancy(&cloud, &spec);
        let bytes = io::encode_occupancy(&occ);
        check(
            "occupancy",
            &bytes,
            io::decode_occupancy(&bytes).map(|g| io::encode_occupancy(&g)),
        );

        let sem = voxelize_semantic(&cloud, &spec);
        let bytes = io::encode_semantic(&sem);
        check(
            "semantic",
            &bytes,
            io::decode_semantic(&bytes).map(|g| io::encode_semantic(&g)),
        );

        let bytes = io::encode_image(&random_image(&mut r));
        check("image", &bytes, io::decode_image(&bytes).map(|i| io::encode_image(&i)));

        let bytes = io::encode_checkpoint(&random_checkpoint(&mut r));
        check(
            "checkpoint",
            &bytes,
            io::decode_checkpoint(&bytes).map(|c| io::encode_checkpoint(&c)),
        );
    }
    (instances * 6, failures)
}

// ----------------------------------------------------------------- pipeline

/// Small benchmark for smoke tests; runs in seconds.
pub fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.bench.sequences = 6;
    cfg.bench.frames = 3;
    cfg.labels.pretext_frames = 3;
    cfg.labels.finetune_frames = 3;
    cfg.labels.eval_frames = 3;
    cfg.train.pretrain_epochs = 3;
    cfg.train.finetune_epochs = 2;
    cfg
}

pub fn cli() -> std::process::Command {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_occpretrain"));
    cmd.env_remove(occpretrain::config::SEED_ENV);
    cmd
}

/// Runs the binary in `dir`, panicking unless it exits with `code`.
pub fn run_cli(dir: &std::path::Path, args: &[&str], code: i32) -> std::process::Output {
    let out = cli().current_dir(dir).args(args).output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(code),
        "{args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// synth, gen-labels, pretrain, finetune and eval through the binary under `dir` with
/// `UNISCENE_SEED=seed`. Returns every output file by name.
pub fn cli_pipeline(dir: &std::path::Path, cfg: &RunConfig, seed: u64) -> Vec<(String, Vec<u8>)> {
    std::fs::write(dir.join("run.cfg"), cfg.canonical()).unwrap();
    let seed = seed.to_string();
    let steps: [&[&str]; 5] = [
        &["synth", "--out", "data"],
        &["gen-labels", "--data", "data", "--frames", "3", "--out", "labels"],
        &["pretrain", "--data", "data", "--out", "pre.uock", "--curve", "pre.csv"],
        &[
            "finetune", "--data", "data", "--init", "pre.uock", "--out", "ft.uock", "--report", "ft.csv",
        ],
        &[
            "eval",
            "--checkpoint",
            "ft.uock",
            "--data",
            "data",
            "--report",
            "eval.csv",
        ],
    ];
    for args in steps {
        let out = cli()
            .current_dir(dir)
            .env(occpretrain::config::SEED_ENV, &seed)
            .args(args)
            .args(["--config", "run.cfg"])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let mut files: Vec<String> = ["pre.uock", "pre.csv", "ft.uock", "ft.csv", "eval.csv"]
        .map(String::from)
        .into();
    for i in 0..cfg.bench.sequences {
        files.push(format!("labels/seq_{i:04}.uoog"));
        files.push(format!("labels/seq_{i:04}.uosg"));
    }
    files
        .into_iter()
        .map(|f| {
            let bytes = std::fs::read(dir.join(&f)).unwrap();
            (f, bytes)
        })
        .collect()
}

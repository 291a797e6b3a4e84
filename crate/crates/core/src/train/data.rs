//! The synthetic benchmark: sequences, splits, inputs and fused labels.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::labels::{
    fuse_frames, voxelize_occupancy, voxelize_semantic, DynamicMode, KeyframeCloud, ObjectMotion, OccupancyGrid,
    SemanticGrid, VoxelGridSpec,
};
use crate::net::model::frame_input;
use crate::scene::{build_scene, generate_sequence, EgoTrajectory, MultiCameraFrame, Scene};
use crate::tensor::Tensor;
use crate::view::CameraRig;

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub scene: Scene,
    pub frames: Vec<MultiCameraFrame>,
}

impl Sequence {
    pub fn keyframes(&self) -> Vec<&MultiCameraFrame> {
        self.frames.iter().filter(|f| f.is_keyframe).collect()
    }

    /// Position of the sample keyframe within [`Sequence::keyframes`].
    pub fn target(&self) -> usize {
        self.keyframes().len() / 2
    }

    /// The keyframe a sample is built around.
    pub fn target_frame(&self) -> Result<&MultiCameraFrame> {
        let t = self.target();
        self.keyframes()
            .get(t)
            .copied()
            .ok_or_else(|| Error::EmptyDataset("sequence has no keyframes".into()))
    }

    /// Fused, voxelized labels around the target keyframe.
    pub fn labels(&self, spec: &VoxelGridSpec, frames: usize, mode: DynamicMode) -> Result<SampleLabels> {
        let keys = self.keyframes();
        let clouds: Vec<KeyframeCloud<'_>> = keys
            .iter()
            .map(|f| KeyframeCloud {
                cloud: &f.point_cloud,
                pose: &f.ego_pose,
                timestamp: f.timestamp,
            })
            .collect();
        let fused = fuse_frames(
            &clouds,
            self.target(),
            frames,
            mode,
            Some(&self.scene as &dyn ObjectMotion),
        )?;
        Ok(SampleLabels {
            occupancy: voxelize_occupancy(&fused, spec),
            semantic: voxelize_semantic(&fused, spec),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleLabels {
    pub occupancy: OccupancyGrid,
    pub semantic: SemanticGrid,
}

/// One sample per sequence, built around its center keyframe. The last
/// `held_out` fraction of sequences is the evaluation split.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub rig: CameraRig,
    pub sequences: Vec<Sequence>,
    pub held_out: usize,
}

/// Per-sequence scene seed derived from the benchmark seed.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

impl Benchmark {
    pub fn synthesize(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let b = &cfg.bench;
        let rig = cfg.rig.build()?;
        let lidar = cfg.lidar.spec();
        let traj = EgoTrajectory::straight(b.frames, b.dt, b.ego_speed, b.scene.ground_height + b.sensor_height)?;
        let sequences = (0..b.sequences)
            .map(|i| {
                let scene = build_scene(scene_seed(b.seed, i), &b.scene)?;
                let mut frames = generate_sequence(&scene, &traj, &rig, &lidar, b.keyframe_stride, cfg.rig.max_range)?;
                // Clouds are stored as f32; rounding here keeps a benchmark
                // identical to its on-disk copy.
                for f in &mut frames {
                    for p in &mut f.point_cloud.points {
                        p.position = p.position.map(|v| f64::from(v as f32));
                    }
                }
                Ok(Sequence { scene, frames })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rig, sequences, b.held_out)
    }

    pub fn new(rig: CameraRig, sequences: Vec<Sequence>, held_out_fraction: f64) -> Result<Self> {
        if sequences.len() < 2 {
            return Err(Error::EmptyDataset(format!(
                "{} sequences; need one for training and one held out",
                sequences.len()
            )));
        }
        let held_out = ((sequences.len() as f64 * held_out_fraction).round() as usize).clamp(1, sequences.len() - 1);
        Ok(Self {
            rig,
            sequences,
            held_out,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.len() - self.held_out).collect()
    }

    pub fn held_out_indices(&self) -> Vec<usize> {
        (self.len() - self.held_out..self.len()).collect()
    }

    /// Encoder input of every sample.
    pub fn inputs(&self) -> Result<Vec<Tensor>> {
        self.sequences
            .iter()
            .map(|s| frame_input(&s.target_frame()?.images, &self.rig))
            .collect()
    }

    pub fn labels(&self, spec: &VoxelGridSpec, frames: usize, mode: DynamicMode) -> Result<Vec<SampleLabels>> {
        self.sequences.iter().map(|s| s.labels(spec, frames, mode)).collect()
    }
}

/// Seeded subset of `train` holding `ceil(fraction * n)` samples (at least
/// one). Subsets for the same seed are prefixes of one permutation, so a
/// smaller fraction is always contained in a larger one.
pub fn label_subset(train: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(
            "label_fraction",
            format!("{fraction} is outside (0, 1]"),
        ));
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset("no training samples".into()));
    }
    let mut order = train.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5EB5);
    order.shuffle(&mut rng);
    let take = ((fraction * train.len() as f64).ceil() as usize).clamp(1, train.len());
    let mut subset = order[..take].to_vec();
    subset.sort_unstable();
    Ok(subset)
}

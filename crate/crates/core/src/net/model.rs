//! Multi-view encoder, depth head, lift-splat and the two 3D heads.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::labels::{VoxelGridSpec, NUM_CLASSES};
use crate::scene::{ImageRaster, IMAGE_CHANNELS};
use crate::tensor::Tensor;
use crate::view::{CameraRig, FrustumSpec, SplatPlan};

/// Raster channels plus the per-pixel ray elevation channel.
pub const INPUT_CHANNELS: usize = IMAGE_CHANNELS + 1;

pub const ENCODER_PREFIX: &str = "encoder.";
pub const DEPTH_HEAD_PREFIX: &str = "depth_head.";
pub const OCC_DECODER_PREFIX: &str = "occ_decoder.";
pub const SEM_HEAD_PREFIX: &str = "sem_head.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub encoder_width: usize,
    /// C' in `C = C' * D`.
    pub voxel_channels: usize,
    /// Height bins D of the voxel grid.
    pub grid_depth: usize,
    pub depth_bins: usize,
    pub decoder_width: usize,
    pub num_classes: usize,
    pub kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: INPUT_CHANNELS,
            encoder_width: 16,
            voxel_channels: 4,
            grid_depth: 4,
            depth_bins: 16,
            decoder_width: 16,
            num_classes: NUM_CLASSES,
            kernel: 3,
        }
    }
}

impl ModelConfig {
    pub fn bev_channels(&self) -> usize {
        self.voxel_channels * self.grid_depth
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("input_channels", self.input_channels),
            ("encoder_width", self.encoder_width),
            ("voxel_channels", self.voxel_channels),
            ("grid_depth", self.grid_depth),
            ("decoder_width", self.decoder_width),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid("model", format!("{name} must be positive")));
            }
        }
        if self.depth_bins < 2 || self.num_classes < 2 {
            return Err(Error::invalid("model", "need at least 2 depth bins and 2 classes"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::invalid("model.kernel", "must be odd"));
        }
        Ok(())
    }

    /// `(name, shape)` of every parameter, in initialization order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let k = self.kernel;
        let conv2 = |co: usize, ci: usize, k: usize| vec![co, ci, k, k];
        let conv3 = |co: usize, ci: usize| vec![co, ci, k, k, k];
        let mut out = Vec::new();
        let mut layer = |prefix: &str, w: Vec<usize>| {
            let c_out = w[0];
            out.push((format!("{prefix}weight"), w));
            out.push((format!("{prefix}bias"), vec![c_out]));
        };
        let (e, c) = (self.encoder_width, self.bev_channels());
        layer("encoder.conv1.", conv2(e, self.input_channels, k));
        layer("encoder.conv2.", conv2(c, e, k));
        layer("depth_head.", conv2(self.depth_bins, c, 1));
        let (cv, dw) = (self.voxel_channels, self.decoder_width);
        layer("occ_decoder.conv1.", conv3(dw, cv));
        layer("occ_decoder.conv2.", conv3(1, dw));
        layer("sem_head.conv1.", conv3(dw, cv));
        layer("sem_head.conv2.", conv3(self.num_classes, dw));
        out
    }
}

/// Named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases. Every layer draws from its
    /// own stream of `seed`, so one block's init does not depend on which
    /// other blocks were requested.
    pub fn init(config: &ModelConfig, seed: u64, prefixes: &[&str]) -> Result<Self> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        for (layer, (name, shape)) in config.layout().into_iter().enumerate() {
            if !prefixes.iter().any(|p| name.starts_with(p)) {
                continue;
            }
            let t = if name.ends_with("bias") {
                Tensor::zeros(&shape)
            } else {
                let receptive: usize = shape[2..].iter().product();
                let fan_in = shape[1] * receptive;
                let fan_out = shape[0] * receptive;
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(layer as u64);
                let n = shape.iter().product();
                Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..bound)).collect())?
            };
            tensors.insert(name, t);
        }
        Ok(Self { tensors })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Keeps only the encoder and depth head.
    pub fn strip_decoder(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| is_encoder_param(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Adds every parameter of `other` whose name is absent here.
    pub fn fill_missing(&mut self, other: ModelParams) {
        for (k, v) in other.tensors {
            self.tensors.entry(k).or_insert(v);
        }
    }

    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let layout: BTreeMap<_, _> = config.layout().into_iter().collect();
        for (name, t) in &self.tensors {
            match layout.get(name) {
                None => return Err(Error::Contract(format!("unknown parameter `{name}`"))),
                Some(s) if s.as_slice() != t.shape() => {
                    return Err(Error::Contract(format!(
                        "parameter `{name}` has shape {:?}, model expects {s:?}",
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with(ENCODER_PREFIX) || name.starts_with(DEPTH_HEAD_PREFIX)
}

/// Parameters placed on a graph.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    pub vars: BTreeMap<String, Var>,
}

impl Bound {
    fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    fn layer(&self, prefix: &str) -> Result<(Var, Var)> {
        Ok((
            self.get(&format!("{prefix}weight"))?,
            self.get(&format!("{prefix}bias"))?,
        ))
    }
}

/// Stacks per-view rasters into the `(N, C_in, h, w)` encoder input. The
/// extra channel holds each pixel's ray slope `(cy - v) / fy`, which the
/// encoder needs to tell heights apart once depth is known.
pub fn frame_input(images: &[ImageRaster], rig: &CameraRig) -> Result<Tensor> {
    let (h, w) = rig.image_size()?;
    if images.len() != rig.len() {
        return Err(Error::shape(
            "frame_input",
            format!("{} images for {} cameras", images.len(), rig.len()),
        ));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(images.len() * INPUT_CHANNELS * plane);
    for (img, cam) in images.iter().zip(&rig.cameras) {
        if img.channels != IMAGE_CHANNELS || img.height != h || img.width != w {
            return Err(Error::shape(
                "frame_input",
                format!(
                    "raster {}x{}x{}, expected {IMAGE_CHANNELS}x{h}x{w}",
                    img.channels, img.height, img.width
                ),
            ));
        }
        data.extend(img.data.iter().map(|&v| f64::from(v)));
        let intr = &cam.intrinsics;
        for r in 0..h {
            let slope = (intr.cy - r as f64) / intr.fy;
            data.extend(std::iter::repeat_n(slope, w));
        }
    }
    Tensor::new(vec![images.len(), INPUT_CHANNELS, h, w], data)
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub spec: VoxelGridSpec,
    plan: Arc<SplatPlan>,
}

impl Model {
    pub fn new(config: ModelConfig, rig: &CameraRig, frustum: &FrustumSpec, spec: &VoxelGridSpec) -> Result<Self> {
        config.validate()?;
        if spec.depth() != config.grid_depth {
            return Err(Error::invalid(
                "model",
                format!(
                    "grid has {} height bins, model expects {}",
                    spec.depth(),
                    config.grid_depth
                ),
            ));
        }
        if frustum.depth_bins != config.depth_bins {
            return Err(Error::invalid(
                "model",
                format!(
                    "frustum has {} depth bins, model expects {}",
                    frustum.depth_bins, config.depth_bins
                ),
            ));
        }
        Ok(Self {
            config,
            spec: *spec,
            plan: Arc::new(SplatPlan::new(rig, frustum, spec)?),
        })
    }

    pub fn plan(&self) -> &SplatPlan {
        &self.plan
    }

    pub fn init(&self, seed: u64) -> Result<ModelParams> {
        ModelParams::init(
            &self.config,
            seed,
            &[ENCODER_PREFIX, DEPTH_HEAD_PREFIX, OCC_DECODER_PREFIX, SEM_HEAD_PREFIX],
        )
    }

    /// Places `params` on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, params: &ModelParams, trainable: bool) -> Result<Bound> {
        params.check_shapes(&self.config)?;
        let mut vars = BTreeMap::new();
        for (name, t) in &params.tensors {
            let v = if trainable {
                g.param(t.clone())?
            } else {
                g.constant(t.clone())?
            };
            vars.insert(name.clone(), v);
        }
        Ok(Bound { vars })
    }

    /// Images to voxel features `(C', D, H, W)`.
    pub fn encode(&self, g: &mut Graph, p: &Bound, input: Var) -> Result<Var> {
        let (w1, b1) = p.layer("encoder.conv1.")?;
        let (w2, b2) = p.layer("encoder.conv2.")?;
        let (wd, bd) = p.layer("depth_head.")?;
        let h = g.conv2d(input, w1, b1)?;
        let h = g.relu(h)?;
        let f = g.conv2d(h, w2, b2)?;
        let f = g.relu(f)?;
        let logits = g.conv2d(f, wd, bd)?;
        let depth = g.softmax(logits, 1)?;
        let bev = g.lift_splat(f, depth, self.plan.clone())?;
        let [d, hh, ww] = self.spec.dims;
        g.reshape(bev, &[self.config.voxel_channels, d, hh, ww])
    }

    fn head(&self, g: &mut Graph, p: &Bound, voxel: Var, prefix: &str) -> Result<Var> {
        let (w1, b1) = p.layer(&format!("{prefix}conv1."))?;
        let (w2, b2) = p.layer(&format!("{prefix}conv2."))?;
        let h = g.conv3d(voxel, w1, b1)?;
        let h = g.relu(h)?;
        g.conv3d(h, w2, b2)
    }

    /// Occupancy probabilities `(D, H, W)`.
    pub fn forward_occupancy(&self, g: &mut Graph, p: &Bound, input: Var) -> Result<Var> {
        let voxel = self.encode(g, p, input)?;
        let logits = self.head(g, p, voxel, "occ_decoder.")?;
        let logits = g.reshape(logits, &self.spec.dims)?;
        g.sigmoid(logits)
    }

    /// Class logits `(K, D, H, W)`.
    pub fn forward_semantic(&self, g: &mut Graph, p: &Bound, input: Var) -> Result<Var> {
        let voxel = self.encode(g, p, input)?;
        self.head(g, p, voxel, "sem_head.")
    }

    pub fn predict_occupancy(&self, params: &ModelParams, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, params, false)?;
        let x = g.constant(input.clone())?;
        let out = self.forward_occupancy(&mut g, &p, x)?;
        Ok(g.value(out).clone())
    }

    /// Argmax class per voxel, lowest id on ties.
    pub fn predict_semantic(&self, params: &ModelParams, input: &Tensor) -> Result<Vec<u8>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, params, false)?;
        let x = g.constant(input.clone())?;
        let out = self.forward_semantic(&mut g, &p, x)?;
        let logits = g.value(out).data();
        let k = self.config.num_classes;
        let n = logits.len() / k;
        Ok((0..n)
            .map(|j| {
                let mut best = 0;
                for c in 1..k {
                    if logits[c * n + j] > logits[best * n + j] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect())
    }
}

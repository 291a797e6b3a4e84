//! Pre-training, fine-tuning and evaluation over a [`Benchmark`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, Provenance, Stage};
use super::data::{label_subset, Benchmark, SampleLabels};
use super::metrics::{Confusion, EvalReport};
use super::optim::{optimizer_step, OptimState, Optimizer};
use crate::config::{OptimizerKind, RunConfig};
use crate::error::{Error, Result};
use crate::labels::DynamicMode;
use crate::net::model::{
    Bound, Model, ModelParams, DEPTH_HEAD_PREFIX, ENCODER_PREFIX, OCC_DECODER_PREFIX, SEM_HEAD_PREFIX,
};
use crate::net::{Graph, Var};
use crate::tensor::Tensor;

const PRETRAIN_STREAM: u64 = 1;
const FINETUNE_STREAM: u64 = 2;

pub fn optimizer(cfg: &RunConfig) -> Optimizer {
    let t = &cfg.train;
    match t.optimizer {
        OptimizerKind::Sgd => Optimizer::Sgd { lr: t.learning_rate },
        OptimizerKind::Adam => Optimizer::Adam {
            lr: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
        },
    }
}

type LabelKey = (usize, &'static str);

/// Benchmark inputs plus lazily built labels, shared across runs that use
/// the same geometry.
pub struct Pipeline<'a> {
    pub bench: &'a Benchmark,
    pub model: Model,
    pub base: RunConfig,
    inputs: Vec<Tensor>,
    labels: RefCell<BTreeMap<LabelKey, Rc<Vec<SampleLabels>>>>,
}

impl<'a> Pipeline<'a> {
    pub fn new(bench: &'a Benchmark, cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let frustum = cfg.frustum;
        let model = Model::new(cfg.model_config(), &bench.rig, &frustum, &cfg.grid)?;
        Ok(Self {
            bench,
            model,
            base: cfg.clone(),
            inputs: bench.inputs()?,
            labels: RefCell::new(BTreeMap::new()),
        })
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    pub fn labels(&self, frames: usize, mode: DynamicMode) -> Result<Rc<Vec<SampleLabels>>> {
        let key = (frames, mode.as_str());
        if let Some(l) = self.labels.borrow().get(&key) {
            return Ok(l.clone());
        }
        let l = Rc::new(self.bench.labels(&self.base.grid, frames, mode)?);
        self.labels.borrow_mut().insert(key, l.clone());
        Ok(l)
    }

    fn check_geometry(&self, cfg: &RunConfig) -> Result<()> {
        if cfg.grid != self.base.grid || cfg.frustum != self.base.frustum || cfg.model_config() != self.model.config {
            return Err(Error::Contract(
                "run config geometry differs from the pipeline's".into(),
            ));
        }
        Ok(())
    }

    /// Binary-occupancy pre-training on every training sample.
    pub fn pretrain(&self, cfg: &RunConfig) -> Result<(Checkpoint, Vec<f64>)> {
        self.check_geometry(cfg)?;
        let labels = self.labels(cfg.labels.pretext_frames, cfg.labels.pretext_mode)?;
        let targets: Vec<Arc<[u8]>> = labels.iter().map(|l| Arc::from(l.occupancy.data.as_slice())).collect();
        let mut params = ModelParams::init(
            &self.model.config,
            cfg.train.seed,
            &[ENCODER_PREFIX, DEPTH_HEAD_PREFIX, OCC_DECODER_PREFIX],
        )?;
        let focal = cfg.train.focal;
        let curve = self.train_loop(
            &mut params,
            &self.bench.train_indices(),
            cfg,
            cfg.train.pretrain_epochs,
            PRETRAIN_STREAM,
            |g, p, x, i| {
                let probs = self.model.forward_occupancy(g, p, x)?;
                g.focal_loss(probs, targets[i].clone(), focal)
            },
        )?;
        let prov = Provenance::new(Stage::Pretrained, cfg.train.pretrain_epochs, cfg, Vec::new());
        Ok((Checkpoint::new(&params, &prov), curve))
    }

    /// Semantic fine-tuning on the seeded `label_fraction` subset, then
    /// evaluation on the held-out split. `init` supplies the encoder and
    /// depth head; everything else starts from the seed. Nothing is frozen.
    pub fn finetune(&self, init: Option<&Checkpoint>, cfg: &RunConfig) -> Result<(Checkpoint, EvalReport)> {
        self.check_geometry(cfg)?;
        let labels = self.labels(cfg.labels.finetune_frames, cfg.labels.finetune_mode)?;
        let targets: Vec<Arc<[u8]>> = labels.iter().map(|l| Arc::from(l.semantic.data.as_slice())).collect();
        let weights: Arc<[f64]> = cfg.train.class_weights.clone().into();
        let seed = cfg.train.seed;
        let (mut params, stage, lineage) = match init {
            Some(ck) => {
                let mut p = ck.params.strip_decoder();
                if p.is_empty() {
                    return Err(Error::Contract("initial checkpoint has no encoder parameters".into()));
                }
                p.fill_missing(ModelParams::init(&self.model.config, seed, &[SEM_HEAD_PREFIX])?);
                let mut lineage = vec![ck.digest()];
                lineage.extend(ck.provenance()?.lineage);
                (p, Stage::Finetuned, lineage)
            }
            None => (
                ModelParams::init(
                    &self.model.config,
                    seed,
                    &[ENCODER_PREFIX, DEPTH_HEAD_PREFIX, SEM_HEAD_PREFIX],
                )?,
                Stage::Scratch,
                Vec::new(),
            ),
        };
        let subset = label_subset(&self.bench.train_indices(), cfg.train.label_fraction, seed)?;
        let curve = self.train_loop(
            &mut params,
            &subset,
            cfg,
            cfg.train.finetune_epochs,
            FINETUNE_STREAM,
            |g, p, x, i| {
                let logits = self.model.forward_semantic(g, p, x)?;
                g.cross_entropy(logits, targets[i].clone(), weights.clone(), false)
            },
        )?;
        let prov = Provenance::new(stage, cfg.train.finetune_epochs, cfg, lineage);
        let ck = Checkpoint::new(&params, &prov);
        let mut report = self.evaluate(&ck, cfg)?;
        report.train_loss = curve;
        Ok((ck, report))
    }

    /// Held-out metrics. Checkpoints with a semantic head are scored on
    /// argmax classes, pre-trained ones on thresholded occupancy.
    pub fn evaluate(&self, ck: &Checkpoint, cfg: &RunConfig) -> Result<EvalReport> {
        self.check_geometry(cfg)?;
        let labels = self.labels(cfg.labels.eval_frames, cfg.labels.eval_mode)?;
        let held = self.bench.held_out_indices();
        if held.is_empty() {
            return Err(Error::EmptyDataset("no held-out samples".into()));
        }
        let semantic = ck.params.tensors.keys().any(|k| k.starts_with(SEM_HEAD_PREFIX));
        let mut conf = Confusion::new(self.model.config.num_classes);
        for &i in &held {
            if semantic {
                let pred = self.model.predict_semantic(&ck.params, &self.inputs[i])?;
                conf.add_semantic(&pred, &labels[i].semantic.data)?;
            } else {
                let probs = self.model.predict_occupancy(&ck.params, &self.inputs[i])?;
                conf.add_binary(probs.data(), &labels[i].occupancy.data)?;
            }
        }
        Ok(EvalReport::from_confusion(&conf, semantic, Vec::new()))
    }

    /// Mini-batch training with per-sample graphs. Gradients are summed in
    /// batch order, so the result is bit-reproducible. Returns the mean
    /// training loss of every epoch.
    fn train_loop<F>(
        &self,
        params: &mut ModelParams,
        samples: &[usize],
        cfg: &RunConfig,
        epochs: usize,
        stream: u64,
        loss_fn: F,
    ) -> Result<Vec<f64>>
    where
        F: Fn(&mut Graph, &Bound, Var, usize) -> Result<Var>,
    {
        if samples.is_empty() {
            return Err(Error::EmptyDataset("no training samples".into()));
        }
        let opt = optimizer(cfg);
        let mut state = OptimState::default();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        rng.set_stream(stream);
        let mut order = samples.to_vec();
        let mut curve = Vec::with_capacity(epochs);
        for epoch in 1..=epochs {
            order.shuffle(&mut rng);
            let diverged = |e: Error| match e {
                Error::NonFinite { op } => Error::Diverged {
                    epoch,
                    detail: format!("non-finite value in {op}"),
                },
                other => other,
            };
            let mut total = 0.0;
            for batch in order.chunks(cfg.train.batch) {
                let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let mut g = Graph::new();
                    let bound = self.model.bind(&mut g, params, true)?;
                    let x = g.constant(self.inputs[i].clone())?;
                    let loss = loss_fn(&mut g, &bound, x, i).map_err(diverged)?;
                    let scaled = g.scale(loss, scale).map_err(diverged)?;
                    g.backward(scaled)?;
                    total += g.value(loss).item();
                    for (name, v) in &bound.vars {
                        let Some(gr) = g.grad(*v) else { continue };
                        match grads.get_mut(name) {
                            Some(acc) => acc.data_mut().iter_mut().zip(gr.data()).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(name.clone(), gr);
                            }
                        }
                    }
                }
                optimizer_step(params, &grads, &mut state, &opt).map_err(diverged)?;
            }
            let mean = total / order.len() as f64;
            if !mean.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("mean loss {mean}"),
                });
            }
            curve.push(mean);
        }
        Ok(curve)
    }
}

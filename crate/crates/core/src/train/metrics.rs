//! Voxel IoU metrics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::labels::SemanticClass;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    /// `TP / (TP + FP + FN)`; `None` when the class appears in neither
    /// prediction nor truth.
    pub fn iou(&self) -> Option<f64> {
        let union = self.tp + self.fp + self.fn_;
        (union > 0).then(|| self.tp as f64 / union as f64)
    }

    fn add(&mut self, pred: bool, truth: bool) {
        match (pred, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => {}
        }
    }
}

/// Confusion counts accumulated over a whole evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct Confusion {
    pub binary: Counts,
    /// Index `c - 1` for class id `c`; the free class is excluded.
    pub classes: Vec<Counts>,
}

impl Confusion {
    pub fn new(num_classes: usize) -> Self {
        Self {
            binary: Counts::default(),
            classes: vec![Counts::default(); num_classes - 1],
        }
    }

    /// Adds one sample of per-voxel class ids (0 = free).
    pub fn add_semantic(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::shape(
                "evaluate",
                format!("{} predictions, {} labels", pred.len(), truth.len()),
            ));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            self.binary.add(p != 0, t != 0);
            for (i, c) in self.classes.iter_mut().enumerate() {
                let id = i as u8 + 1;
                c.add(p == id, t == id);
            }
        }
        Ok(())
    }

    /// Adds one sample of occupancy probabilities, thresholded at 0.5.
    pub fn add_binary(&mut self, probs: &[f64], truth: &[u8]) -> Result<()> {
        if probs.len() != truth.len() {
            return Err(Error::shape(
                "evaluate",
                format!("{} predictions, {} labels", probs.len(), truth.len()),
            ));
        }
        for (&p, &t) in probs.iter().zip(truth) {
            self.binary.add(p >= 0.5, t != 0);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub binary_iou: f64,
    /// Per non-free class; `None` when the class never occurs.
    pub class_iou: Vec<Option<f64>>,
    /// Mean of the defined class IoUs.
    pub miou: Option<f64>,
    pub train_loss: Vec<f64>,
}

impl EvalReport {
    /// Binary IoU over an empty union counts as perfect.
    pub fn from_confusion(c: &Confusion, semantic: bool, train_loss: Vec<f64>) -> Self {
        let class_iou: Vec<Option<f64>> = if semantic {
            c.classes.iter().map(Counts::iou).collect()
        } else {
            Vec::new()
        };
        let defined: Vec<f64> = class_iou.iter().flatten().copied().collect();
        let miou = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        Self {
            binary_iou: c.binary.iou().unwrap_or(1.0),
            class_iou,
            miou,
            train_loss,
        }
    }

    pub fn miou_or_zero(&self) -> f64 {
        self.miou.unwrap_or(0.0)
    }

    /// `metric,value` CSV; undefined values are left empty.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "binary_iou,{}", self.binary_iou);
        let _ = writeln!(s, "miou,{}", opt(self.miou));
        for (i, v) in self.class_iou.iter().enumerate() {
            let name = SemanticClass::from_id(i as u8 + 1).map_or("class", SemanticClass::name);
            let _ = writeln!(s, "iou_{name},{}", opt(*v));
        }
        for (e, l) in self.train_loss.iter().enumerate() {
            let _ = writeln!(s, "train_loss_epoch_{},{l}", e + 1);
        }
        s
    }
}

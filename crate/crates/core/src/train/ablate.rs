//! Ablation grids over the full pretrain, strip, finetune, evaluate
//! pipeline.

use std::fmt::Write as _;
use std::str::FromStr;

use super::metrics::EvalReport;
use super::pipeline::Pipeline;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::labels::DynamicMode;
use crate::net::FocalLossParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationGrid {
    /// Pretext label fusion over 1, 3 and 5 keyframes.
    Frames,
    /// Fine-tuning label fraction 0.25 to 1.0.
    Fraction,
    /// Focal-loss weightings.
    Loss,
    /// Fine-tuning labels with or without dynamic-object segmentation.
    Supervision,
}

impl FromStr for AblationGrid {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frames" => Ok(Self::Frames),
            "fraction" => Ok(Self::Fraction),
            "loss" => Ok(Self::Loss),
            "supervision" => Ok(Self::Supervision),
            _ => Err(Error::invalid(
                "grid",
                format!("unknown grid `{s}` (frames | fraction | loss | supervision)"),
            )),
        }
    }
}

impl AblationGrid {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Frames => "frames",
            Self::Fraction => "fraction",
            Self::Loss => "loss",
            Self::Supervision => "supervision",
        }
    }

    /// `(point label, config)` for every grid point.
    pub fn points(self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        let with = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            Self::Frames => [1, 3, 5]
                .iter()
                .map(|&n| (n.to_string(), with(&|c| c.labels.pretext_frames = n)))
                .collect(),
            Self::Fraction => [0.25, 0.5, 0.75, 1.0]
                .iter()
                .map(|&r| (format!("{r:.2}"), with(&|c| c.train.label_fraction = r)))
                .collect(),
            Self::Loss => [
                (
                    "bce",
                    FocalLossParams {
                        alpha_pos: 1.0,
                        alpha_neg: 1.0,
                        gamma: 0.0,
                    },
                ),
                ("focal", FocalLossParams::default()),
                (
                    "standard",
                    FocalLossParams {
                        alpha_pos: 0.25,
                        alpha_neg: 0.75,
                        gamma: 2.0,
                    },
                ),
            ]
            .iter()
            .map(|&(name, p)| (name.to_string(), with(&|c| c.train.focal = p)))
            .collect(),
            Self::Supervision => [
                ("pretext_only", DynamicMode::KeepAll),
                ("supervised", DynamicMode::DropDynamic),
            ]
            .iter()
            .map(|&(name, m)| (name.to_string(), with(&|c| c.labels.finetune_mode = m)))
            .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub grid: &'static str,
    pub point: String,
    /// `None` marks the mean over seeds.
    pub seed: Option<u64>,
    pub binary_iou: f64,
    pub miou: f64,
    pub class_iou: Vec<Option<f64>>,
    pub final_loss: f64,
}

impl AblationRow {
    fn from_report(grid: &'static str, point: &str, seed: u64, r: &EvalReport) -> Self {
        Self {
            grid,
            point: point.to_owned(),
            seed: Some(seed),
            binary_iou: r.binary_iou,
            miou: r.miou_or_zero(),
            class_iou: r.class_iou.clone(),
            final_loss: r.train_loss.last().copied().unwrap_or(f64::NAN),
        }
    }
}

/// Runs every grid point for every seed, then appends one mean row per
/// point. Rows are sorted by point, then seed, with the mean last.
pub fn ablate(pipe: &Pipeline<'_>, grid: AblationGrid, base: &RunConfig, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "need at least one seed"));
    }
    let mut rows = Vec::new();
    for (point, cfg) in grid.points(base) {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut c = cfg.clone();
            c.train.seed = seed;
            let (pre, _) = pipe.pretrain(&c)?;
            let (_, report) = pipe.finetune(Some(&pre.strip_decoder()?), &c)?;
            per_seed.push(AblationRow::from_report(grid.as_str(), &point, seed, &report));
        }
        let n = per_seed.len() as f64;
        let k = per_seed[0].class_iou.len();
        let mean_class = (0..k)
            .map(|j| {
                let vals: Vec<f64> = per_seed.iter().filter_map(|r| r.class_iou[j]).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect();
        let mean = AblationRow {
            grid: grid.as_str(),
            point: point.clone(),
            seed: None,
            binary_iou: per_seed.iter().map(|r| r.binary_iou).sum::<f64>() / n,
            miou: per_seed.iter().map(|r| r.miou).sum::<f64>() / n,
            class_iou: mean_class,
            final_loss: per_seed.iter().map(|r| r.final_loss).sum::<f64>() / n,
        };
        rows.extend(per_seed);
        rows.push(mean);
    }
    rows.sort_by(|a, b| {
        a.point
            .cmp(&b.point)
            .then_with(|| a.seed.unwrap_or(u64::MAX).cmp(&b.seed.unwrap_or(u64::MAX)))
            .then_with(|| a.seed.is_none().cmp(&b.seed.is_none()))
    });
    Ok(rows)
}

pub const CSV_HEADER: &str = "grid,point,seed,binary_iou,miou,iou_ground,iou_static,iou_dynamic,final_loss";

pub fn to_csv(rows: &[AblationRow]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let seed = r.seed.map_or("mean".to_owned(), |v| v.to_string());
        let classes: Vec<String> = (0..3).map(|j| opt(r.class_iou.get(j).copied().flatten())).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.grid,
            r.point,
            seed,
            r.binary_iou,
            r.miou,
            classes.join(","),
            r.final_loss
        );
    }
    s
}

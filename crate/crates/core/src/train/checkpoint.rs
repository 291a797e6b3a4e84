//! Named parameters plus a provenance record.
//!
//! The provenance block is plain text: `provenance.*` lines followed by the
//! canonical run config. It is kept verbatim so a load/save cycle is
//! byte-identical.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::net::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrained,
    Finetuned,
    /// Fine-tuned from random initialization.
    Scratch,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrained => "pretrained",
            Stage::Finetuned => "finetuned",
            Stage::Scratch => "scratch",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" => Ok(Stage::Pretrained),
            "finetuned" => Ok(Stage::Finetuned),
            "scratch" => Ok(Stage::Scratch),
            _ => Err(Error::invalid("stage", format!("unknown stage `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub stage: Stage,
    pub epoch: usize,
    pub config_hash: String,
    /// Content digests of ancestor checkpoints, nearest first.
    pub lineage: Vec<String>,
    /// Canonical run config.
    pub config: String,
}

impl Provenance {
    pub fn new(stage: Stage, epoch: usize, config: &RunConfig, lineage: Vec<String>) -> Self {
        Self {
            stage,
            epoch,
            config_hash: config.hash(),
            lineage,
            config: config.canonical(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "provenance.stage = {}", self.stage.as_str());
        let _ = writeln!(s, "provenance.epoch = {}", self.epoch);
        let _ = writeln!(s, "provenance.config_hash = {}", self.config_hash);
        let _ = writeln!(s, "provenance.lineage = {}", self.lineage.join(","));
        s.push_str(&self.config);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut stage = None;
        let mut epoch = None;
        let mut hash = None;
        let mut lineage = None;
        let mut config = String::new();
        for (i, line) in text.lines().enumerate() {
            let Some(rest) = line.strip_prefix("provenance.") else {
                config.push_str(line);
                config.push('\n');
                continue;
            };
            let err = |reason: String| Error::Config { line: i + 1, reason };
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| err(format!("malformed provenance line `{line}`")))?;
            let v = v.trim();
            match k.trim() {
                "stage" => stage = Some(v.parse::<Stage>().map_err(|e| err(e.to_string()))?),
                "epoch" => epoch = Some(v.parse::<usize>().map_err(|e| err(e.to_string()))?),
                "config_hash" => hash = Some(v.to_owned()),
                "lineage" => {
                    lineage = Some(if v.is_empty() {
                        Vec::new()
                    } else {
                        v.split(',').map(str::to_owned).collect()
                    })
                }
                other => return Err(err(format!("unknown provenance key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Config {
            line: 0,
            reason: format!("provenance lacks `{k}`"),
        };
        Ok(Self {
            stage: stage.ok_or_else(|| missing("stage"))?,
            epoch: epoch.ok_or_else(|| missing("epoch"))?,
            config_hash: hash.ok_or_else(|| missing("config_hash"))?,
            lineage: lineage.ok_or_else(|| missing("lineage"))?,
            config,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub provenance: String,
}

impl Checkpoint {
    /// Rounds every parameter to the `f32` storage precision.
    pub fn new(params: &ModelParams, provenance: &Provenance) -> Self {
        Self {
            params: ModelParams {
                tensors: params
                    .tensors
                    .iter()
                    .map(|(k, v)| (k.clone(), v.round_to_f32()))
                    .collect(),
            },
            provenance: provenance.render(),
        }
    }

    pub fn provenance(&self) -> Result<Provenance> {
        Provenance::parse(&self.provenance)
    }

    /// Run config recorded at save time.
    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.provenance()?.config)
    }

    /// SHA-256 of the tensor section, hex encoded.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(io::encode_tensors(&self.params)))
    }

    /// Drops the occupancy decoder and semantic head. The parent's digest
    /// is prepended to the lineage; stripping an already stripped
    /// checkpoint returns it unchanged.
    pub fn strip_decoder(&self) -> Result<Self> {
        let params = self.params.strip_decoder();
        if params.len() == self.params.len() {
            return Ok(self.clone());
        }
        let mut prov = self.provenance()?;
        prov.lineage.insert(0, self.digest());
        Ok(Self {
            params,
            provenance: prov.render(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &io::encode_checkpoint(self))
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::decode_checkpoint(&io::read_file(path)?)
    }
}

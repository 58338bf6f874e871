use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vwerc::corpus::SynthConfig;
use vwerc::training_eval::{default_grid, AblationCell, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub grid: Vec<AblationCell>,
    pub seeds: Vec<u64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Data directory with `train.jsonl`, `dev.jsonl`, `test.jsonl`, `labels.json`.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Everything a run needs, in one JSON document. Absent keys take defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub ablation: AblationSection,
    pub paths: Paths,
    pub eval_threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            ablation: AblationSection::default(),
            paths: Paths::default(),
            eval_threads: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// `gen` accepts either a full run config or a bare synthetic config.
pub fn load_synth(path: Option<&Path>) -> Result<SynthConfig> {
    let Some(path) = path else {
        return Ok(SynthConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let is_run = value
        .as_object()
        .is_some_and(|o| ["synth", "train", "ablation", "paths", "eval_threads"].iter().any(|k| o.contains_key(*k)));
    if is_run {
        let run: RunConfig = serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
        Ok(run.synth)
    } else {
        serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))
    }
}

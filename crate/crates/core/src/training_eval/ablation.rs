use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::evaluate::evaluate;
use super::trainer::train;
use crate::corpus::{Conversation, LabelMap, Vocabulary};
use crate::error::{Error, Result};
use crate::speaker_units::SpeakerUnitVariant;
use crate::window_gate::GateMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationCell {
    pub variant: SpeakerUnitVariant,
    pub mode: GateMode,
}

/// All gate modes with speaker-aware units, plus both unit ablations under
/// the default gate.
pub fn default_grid() -> Vec<AblationCell> {
    let mut grid: Vec<AblationCell> = GateMode::ALL
        .into_iter()
        .map(|mode| AblationCell {
            variant: SpeakerUnitVariant::SpeakerAware,
            mode,
        })
        .collect();
    for variant in [SpeakerUnitVariant::NUnit, SpeakerUnitVariant::SUnit] {
        grid.push(AblationCell {
            variant,
            mode: GateMode::TopkSoft,
        });
    }
    grid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: SpeakerUnitVariant,
    pub mode: GateMode,
    pub seed: u64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub window_selection_accuracy: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub variant: SpeakerUnitVariant,
    pub mode: GateMode,
    pub seeds: usize,
    pub macro_f1_mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub macro_f1_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub cells: Vec<CellSummary>,
}

impl AblationReport {
    pub fn cell(&self, variant: SpeakerUnitVariant, mode: GateMode) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.variant == variant && c.mode == mode)
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains every grid cell once per seed and scores it on `test`.
#[allow(clippy::too_many_arguments)]
pub fn ablation_run(
    grid: &[AblationCell],
    seeds: &[u64],
    train_set: &[Conversation],
    dev_set: &[Conversation],
    test_set: &[Conversation],
    vocab: &Vocabulary,
    labels: &LabelMap,
    base: &TrainConfig,
    eval_threads: usize,
) -> Result<AblationReport> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one cell and one seed".into()));
    }
    let mut rows = Vec::with_capacity(grid.len() * seeds.len());
    let mut cells = Vec::with_capacity(grid.len());
    for cell in grid {
        let mut scores = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.model.unit_variant = cell.variant;
            cfg.model.gate_mode = cell.mode;
            log::info!("ablation {:?}/{} seed {seed}", cell.variant, cell.mode);
            let out = train(train_set, dev_set, vocab, labels, &cfg, eval_threads)?;
            let report = evaluate(&out.model, test_set, vocab, labels, None, eval_threads)?;
            scores.push(report.macro_f1);
            rows.push(AblationRow {
                variant: cell.variant,
                mode: cell.mode,
                seed,
                macro_f1: report.macro_f1,
                micro_f1: report.micro_f1,
                window_selection_accuracy: report.window_selection_accuracy,
                best_epoch: out.best_epoch,
                epochs_run: out.log.len() - 1,
            });
        }
        let (macro_f1_mean, macro_f1_sd) = mean_sd(&scores);
        cells.push(CellSummary {
            variant: cell.variant,
            mode: cell.mode,
            seeds: seeds.len(),
            macro_f1_mean,
            macro_f1_sd,
        });
    }
    Ok(AblationReport { rows, cells })
}

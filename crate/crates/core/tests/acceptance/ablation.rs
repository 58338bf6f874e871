use vwerc::corpus::{build_vocab, generate_synthetic, SynthConfig};
use vwerc::speaker_units::SpeakerUnitVariant;
use vwerc::training_eval::{ablation_run, AblationCell, TrainConfig};
use vwerc::window_gate::GateMode;

use crate::common::benchmark_config;
use crate::Outcome;

const SEEDS: [u64; 3] = [1, 2, 3];
const TOLERANCE: f64 = 0.01;

// Reduced benchmark so twelve training runs fit alongside criterion 4.
const N_TRAIN: usize = 400;
const N_DEV: usize = 100;
const N_TEST: usize = 300;
const EPOCHS: usize = 6;

pub fn run() -> Outcome {
    let synth = SynthConfig {
        n_train: N_TRAIN,
        n_dev: N_DEV,
        n_test: N_TEST,
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic(&synth, synth.seed).unwrap();
    let vocab = build_vocab(&corpus.train, 1);
    let base = TrainConfig {
        max_epochs: EPOCHS,
        ..benchmark_config()
    };
    let aware = SpeakerUnitVariant::SpeakerAware;
    let grid = [
        AblationCell { variant: aware, mode: GateMode::TopkSoft },
        AblationCell { variant: aware, mode: GateMode::TopkHard },
        AblationCell { variant: aware, mode: GateMode::AllHard },
        AblationCell { variant: SpeakerUnitVariant::NUnit, mode: GateMode::TopkSoft },
    ];
    let report = ablation_run(&grid, &SEEDS, &corpus.train, &corpus.dev, &corpus.test, &vocab, &corpus.labels, &base, 1).unwrap();
    let mean = |variant, mode| report.cell(variant, mode).unwrap().macro_f1_mean;
    let topk_soft = mean(aware, GateMode::TopkSoft);
    let topk_hard = mean(aware, GateMode::TopkHard);
    let all_hard = mean(aware, GateMode::AllHard);
    let n_unit = mean(SpeakerUnitVariant::NUnit, GateMode::TopkSoft);

    let checks = [
        ("TopkSoft >= TopkHard - tol", topk_soft >= topk_hard - TOLERANCE),
        ("TopkHard >= AllHard - tol", topk_hard >= all_hard - TOLERANCE),
        ("SpeakerAware >= NUnit - tol", topk_soft >= n_unit - TOLERANCE),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail = format!(
        "mean test macro-F1 over seeds {SEEDS:?} ({N_TRAIN}/{N_DEV}/{N_TEST} conversations, {EPOCHS} epochs): \
         TopkSoft {topk_soft:.4}, TopkHard {topk_hard:.4}, AllHard {all_hard:.4}, N-Unit {n_unit:.4}; tol {TOLERANCE}{}",
        if failed.is_empty() { String::new() } else { format!("; violated: {}", failed.join(", ")) }
    );
    Outcome::new(failed.is_empty(), detail)
}

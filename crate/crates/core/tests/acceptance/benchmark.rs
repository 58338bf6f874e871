use std::time::Instant;

use vwerc::corpus::{build_vocab, generate_synthetic, SynthConfig};
use vwerc::training_eval::{evaluate, train, TrainConfig};

use crate::common::benchmark_config;
use crate::Outcome;

const MIN_MICRO_F1: f64 = 0.85;
const MIN_SELECTION: f64 = 0.70;
const MAX_BASELINE_F1: f64 = 0.60;
const MIN_GAP: f64 = 0.20;
const MAX_EPOCHS: usize = 10;
const BUDGET_SECS: f64 = 30.0 * 60.0;

pub fn run() -> Outcome {
    let start = Instant::now();
    let synth = SynthConfig::default();
    let corpus = generate_synthetic(&synth, synth.seed).unwrap();
    let vocab = build_vocab(&corpus.train, 1);

    let cfg = TrainConfig {
        max_epochs: MAX_EPOCHS,
        ..benchmark_config()
    };
    assert_eq!(cfg.model.encoder.d, 32);
    assert_eq!((cfg.model.max_window, cfg.model.top_k), (synth.max_window, 2));

    let out = train(&corpus.train, &corpus.dev, &vocab, &corpus.labels, &cfg, 1).unwrap();
    let report = evaluate(&out.model, &corpus.test, &vocab, &corpus.labels, None, 1).unwrap();
    let model_secs = start.elapsed().as_secs_f64();

    let mut base_cfg = cfg.clone();
    base_cfg.model.fixed_window = Some(0);
    let base = train(&corpus.train, &corpus.dev, &vocab, &corpus.labels, &base_cfg, 1).unwrap();
    let base_report = evaluate(&base.model, &corpus.test, &vocab, &corpus.labels, None, 1).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let selection = report.window_selection_accuracy.unwrap_or(0.0);
    let gap = report.micro_f1 - base_report.micro_f1;
    let pass = report.micro_f1 >= MIN_MICRO_F1
        && selection >= MIN_SELECTION
        && base_report.micro_f1 <= MAX_BASELINE_F1
        && gap >= MIN_GAP
        && elapsed < BUDGET_SECS;
    let detail = format!(
        "TopkSoft micro-F1 {:.4} (>= {MIN_MICRO_F1}), selection {selection:.4} (>= {MIN_SELECTION}), best epoch {} of {}; \
         fixed-window-0 micro-F1 {:.4} (<= {MAX_BASELINE_F1}); gap {gap:.4} (>= {MIN_GAP}); \
         {model_secs:.0}s model + {:.0}s baseline of {BUDGET_SECS}s",
        report.micro_f1,
        out.best_epoch,
        out.log.len() - 1,
        base_report.micro_f1,
        elapsed - model_secs,
    );
    Outcome::new(pass, detail)
}

use vwerc::corpus::{generate_synthetic, SynthConfig};
use vwerc::training_eval::{evaluate, train, Checkpoint, TrainConfig};

use crate::common::{small_corpus, tiny_model_config};
use crate::Outcome;

/// One training run rendered to bytes: the epoch log as JSON plus the checkpoint.
fn run_bytes(cfg: &TrainConfig) -> (Vec<u8>, Vec<u8>, Checkpoint) {
    let (corpus, vocab) = small_corpus(24, 3, 5);
    let out = train(&corpus.train, &corpus.dev, &vocab, &corpus.labels, cfg, 1).unwrap();
    let log = serde_json::to_vec(&out.log).unwrap();
    let ck = Checkpoint {
        config: cfg.clone(),
        vocab,
        labels: corpus.labels,
        model: out.model,
    };
    (log, ck.to_bytes().unwrap(), ck)
}

pub fn run() -> Outcome {
    let cfg = TrainConfig {
        model: tiny_model_config(3),
        max_epochs: 3,
        batch_size: 4,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let mut problems = Vec::new();

    let (log_a, ck_a, checkpoint) = run_bytes(&cfg);
    let (log_b, ck_b, _) = run_bytes(&cfg);
    if log_a != log_b {
        problems.push("training logs differ between identical runs".to_string());
    }
    if ck_a != ck_b {
        problems.push("checkpoints differ between identical runs".to_string());
    }

    let synth = SynthConfig {
        n_train: 30,
        n_dev: 5,
        n_test: 5,
        ..SynthConfig::default()
    };
    if generate_synthetic(&synth, 3).unwrap() != generate_synthetic(&synth, 3).unwrap() {
        problems.push("generator is not deterministic".to_string());
    }

    let (corpus, _) = small_corpus(24, 3, 5);
    let before = evaluate(&checkpoint.model, &corpus.test, &checkpoint.vocab, &checkpoint.labels, None, 1).unwrap();
    let restored = Checkpoint::from_bytes(&ck_a).unwrap();
    let after = evaluate(&restored.model, &corpus.test, &restored.vocab, &restored.labels, None, 1).unwrap();
    if before != after {
        problems.push("checkpoint round trip changed evaluation metrics".to_string());
    }
    if restored.to_bytes().unwrap() != ck_a {
        problems.push("re-serialised checkpoint differs".to_string());
    }
    let threaded = evaluate(&restored.model, &corpus.test, &restored.vocab, &restored.labels, None, 3).unwrap();
    if threaded != after {
        problems.push("evaluation depends on thread count".to_string());
    }

    let detail = if problems.is_empty() {
        format!(
            "two runs byte-identical (log {} B, checkpoint {} B); round trip restores metrics exactly (test micro-F1 {:.4}); 1 vs 3 eval threads identical; generator deterministic",
            log_a.len(),
            ck_a.len(),
            after.micro_f1
        )
    } else {
        problems.join("; ")
    };
    Outcome::new(problems.is_empty(), detail)
}

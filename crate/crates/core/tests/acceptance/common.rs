use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vwerc::autodiff::{Tape, Var};
use vwerc::context_fields::ModelConfig;
use vwerc::corpus::{build_vocab, generate_synthetic, Conversation, SynthConfig, SynthCorpus, Vocabulary};
use vwerc::encoder::EncoderConfig;
use vwerc::tensor::Tensor;
use vwerc::training_eval::TrainConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), random_vec(rng, n, 1.0)).unwrap()
}

/// `Σ v ⊙ R` for a fixed random `R`, so every output coordinate matters.
pub fn project(tape: &mut Tape<'_>, v: Var, seed: u64) -> vwerc::Result<Var> {
    let shape = tape.shape(v).to_vec();
    let r = random_tensor(&mut rng(seed ^ 0x9e37), &shape);
    let r = tape.constant(r);
    let m = tape.mul(v, r)?;
    Ok(tape.sum(m))
}

/// Tiny model used wherever a real forward pass is needed quickly.
pub fn tiny_model_config(max_window: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            d: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            max_tokens: 48,
            dropout: 0.1,
        },
        max_window,
        top_k: 2,
        context_tokens: 48,
        ..ModelConfig::default()
    }
}

pub fn small_corpus(n_train: usize, max_window: usize, seed: u64) -> (SynthCorpus, Vocabulary) {
    let cfg = SynthConfig {
        n_train,
        n_dev: n_train.div_ceil(4),
        n_test: n_train.div_ceil(4),
        max_window,
        conv_len_min: 4,
        conv_len_max: 8,
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic(&cfg, seed).unwrap();
    let vocab = build_vocab(&corpus.train, 1);
    (corpus, vocab)
}

pub fn conversation(turns: &[(&str, &str, usize)]) -> Conversation {
    Conversation {
        id: "handmade".into(),
        utterances: turns
            .iter()
            .map(|&(speaker, text, label)| vwerc::corpus::Utterance {
                speaker: speaker.into(),
                text: text.into(),
                label,
                planted_window: None,
            })
            .collect(),
    }
}

/// Training setup of the planted-window benchmark: library defaults, with the
/// main encoder reading only the last M+1 five-token utterances. Mirrors
/// `configs/benchmark.json`.
pub fn benchmark_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.context_tokens = 5 * (cfg.model.max_window + 1);
    cfg
}

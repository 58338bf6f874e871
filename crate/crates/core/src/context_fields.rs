//! Per-window context fields and the end-to-end model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{concat_window, encode_input_sequence, speaker_token, Conversation, Vocabulary, CLS};
use crate::encoder::{encode, linear, read_utterance_reprs, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::params::{filled, glorot, ParamId, ParamStore};
use crate::speaker_units::{distill, SpeakerUnitParams, SpeakerUnitVariant};
use crate::tensor::Tensor;
use crate::window_gate::{feasible_windows, gate_distribution, score_windows, GateMode, GateParams, WindowDistribution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Largest context window `M`.
    pub max_window: usize,
    /// Number of windows kept by the top-K modes; clamped to `M + 1`.
    pub top_k: usize,
    /// Gate hidden width; `encoder.d` when absent.
    pub gate_hidden: Option<usize>,
    pub gate_mode: GateMode,
    pub unit_variant: SpeakerUnitVariant,
    pub share_field_encoders: bool,
    /// Token budget of the main encoder input.
    pub context_tokens: usize,
    /// One-hot slots for the S-Unit variant.
    pub max_speakers: usize,
    /// Bypass the gate and always use window `min(w, t)`.
    pub fixed_window: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            max_window: 4,
            top_k: 2,
            gate_hidden: None,
            gate_mode: GateMode::TopkSoft,
            unit_variant: SpeakerUnitVariant::SpeakerAware,
            share_field_encoders: false,
            context_tokens: 256,
            max_speakers: 8,
            fixed_window: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.context_tokens == 0 || self.context_tokens > self.encoder.max_tokens {
            return Err(Error::Config(format!(
                "context_tokens must lie in 1..={}",
                self.encoder.max_tokens
            )));
        }
        if self.gate_hidden == Some(0) || self.max_speakers == 0 {
            return Err(Error::Config("gate_hidden and max_speakers must be positive".into()));
        }
        if matches!(self.fixed_window, Some(w) if w > self.max_window) {
            return Err(Error::Config("fixed_window exceeds max_window".into()));
        }
        Ok(())
    }

    pub fn effective_k(&self) -> usize {
        self.top_k.min(self.max_window + 1)
    }

    pub fn gate_width(&self) -> usize {
        self.gate_hidden.unwrap_or(self.encoder.d)
    }
}

#[derive(Clone, Debug)]
pub struct FieldParams {
    pub encoder: EncoderParams,
    pub w7: ParamId,
    pub b7: ParamId,
}

/// Parameter handles of every component; values live in the [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Layout {
    pub main: EncoderParams,
    pub units: SpeakerUnitParams,
    pub gate: GateParams,
    pub fields: Vec<FieldParams>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub num_labels: usize,
    pub vocab_size: usize,
    pub layout: Layout,
    pub store: ParamStore,
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, vocab_size: usize, num_labels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_labels < 2 {
            return Err(Error::Config("need at least two labels".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = &config.encoder;
        let main = EncoderParams::new(&mut store, "main", enc, vocab_size, &mut rng);
        let units = SpeakerUnitParams::new(&mut store, enc.d, config.unit_variant, config.max_speakers, &mut rng);
        let gate = GateParams::new(&mut store, enc.d, config.gate_width(), config.max_window, &mut rng);
        let shared = config
            .share_field_encoders
            .then(|| EncoderParams::new(&mut store, "field.shared", enc, vocab_size, &mut rng));
        let fields = (0..=config.max_window)
            .map(|i| {
                let encoder = match &shared {
                    Some(e) => e.clone(),
                    None => EncoderParams::new(&mut store, &format!("field.{i}"), enc, vocab_size, &mut rng),
                };
                FieldParams {
                    encoder,
                    w7: store.add(format!("field.{i}.w7"), glorot(&mut rng, enc.d, num_labels)),
                    b7: store.add(format!("field.{i}.b7"), filled(&[num_labels], 0.0)),
                }
            })
            .collect();
        Ok(Self {
            config,
            num_labels,
            vocab_size,
            layout: Layout {
                main,
                units,
                gate,
                fields,
            },
            store,
        })
    }

    /// Full forward pass for utterance `t`. Dropout runs only when
    /// `train_rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        conv: &Conversation,
        t: usize,
        vocab: &Vocabulary,
        mut train_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ModelOutput> {
        if t >= conv.len() {
            return Err(Error::Index {
                index: t,
                len: conv.len(),
            });
        }
        let cfg = &self.config;
        let m = cfg.max_window;
        let (q, dist, scores) = match cfg.fixed_window {
            Some(w) => {
                let dist = WindowDistribution::one_hot(m + 1, w.min(t));
                let q = tape.constant(Tensor::vector(dist.q.clone()));
                (q, dist, vec![0.0; m + 1])
            }
            None => {
                let input = encode_input_sequence(conv, t, vocab, cfg.context_tokens)?;
                let hidden = encode(tape, &self.layout.main, &cfg.encoder, &input.tokens, train_rng.as_deref_mut())?;
                let reprs = read_utterance_reprs(tape, hidden, &input.offsets, m)?;
                let k = tape.value(reprs).rows();
                let first = input.first_utterance + input.offsets.len() - k;
                let speakers: Vec<String> = conv.utterances[first..=t]
                    .iter()
                    .map(|u| speaker_token(&u.speaker))
                    .collect();
                let z = distill(tape, reprs, &speakers, &self.layout.units, cfg.unit_variant, cfg.encoder.n_heads)?;
                let s = score_windows(tape, z, &self.layout.gate)?;
                let scores = tape.value(s).data().to_vec();
                let (q, dist) = gate_distribution(tape, s, cfg.gate_mode, cfg.effective_k(), &feasible_windows(t, m))?;
                (q, dist, scores)
            }
        };
        let mut per_field = Vec::with_capacity(dist.active.len());
        for &i in &dist.active {
            let tokens = build_field_input(conv, t, i, vocab, cfg.encoder.max_tokens)?;
            let p = field_predict(tape, &self.layout.fields[i], &cfg.encoder, &tokens, train_rng.as_deref_mut())?;
            per_field.push((i, p));
        }
        let p_hat = combine(tape, q, &dist, &per_field)?;
        Ok(ModelOutput {
            p_hat,
            q,
            dist,
            scores,
            field_calls: per_field.len(),
            per_field,
        })
    }

    /// Eval-mode forward pass reduced to plain values.
    pub fn predict(&self, conv: &Conversation, t: usize, vocab: &Vocabulary) -> Result<Prediction> {
        let mut tape = Tape::with_params(&self.store);
        let out = self.forward(&mut tape, conv, t, vocab, None)?;
        let probs = tape.value(out.p_hat).data().to_vec();
        let label = argmax(&probs);
        Ok(Prediction {
            label,
            selected: out.dist.argmax(&out.scores),
            per_field: out
                .per_field
                .iter()
                .map(|&(i, p)| (i, tape.value(p).data().to_vec()))
                .collect(),
            probs,
            scores: out.scores,
            dist: out.dist,
        })
    }
}

/// Tape handles produced by [`Model::forward`].
pub struct ModelOutput {
    pub p_hat: Var,
    pub q: Var,
    pub dist: WindowDistribution,
    pub scores: Vec<f64>,
    pub per_field: Vec<(usize, Var)>,
    /// Field encoder passes made for this prediction.
    pub field_calls: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    pub probs: Vec<f64>,
    pub dist: WindowDistribution,
    pub scores: Vec<f64>,
    /// Window the gate weights most.
    pub selected: usize,
    pub per_field: Vec<(usize, Vec<f64>)>,
}

/// First index of the largest value.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `[CLS] u_{t-i} … u_t`, oldest utterances dropped first when over budget.
pub fn build_field_input(conv: &Conversation, t: usize, i: usize, vocab: &Vocabulary, max_tokens: usize) -> Result<Vec<usize>> {
    if i > t {
        return Err(Error::InfeasibleWindow { window: i, position: t });
    }
    Ok(concat_window(conv, t - i, t, vocab, max_tokens, &[CLS])?.tokens)
}

/// Field encoding, `[CLS]` row, linear classifier and softmax.
pub fn field_predict(
    tape: &mut Tape<'_>,
    params: &FieldParams,
    cfg: &EncoderConfig,
    tokens: &[usize],
    train_rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    if tokens.first() != Some(&CLS) {
        return Err(Error::Internal("field input must start with [CLS]".into()));
    }
    let hidden = encode(tape, &params.encoder, cfg, tokens, train_rng)?;
    let cls = tape.rows(hidden, &[0])?;
    let logits = linear(tape, cls, params.w7, params.b7)?;
    let n = tape.value(logits).len();
    let logits = tape.reshape(logits, &[n])?;
    tape.softmax(logits)
}

fn check_coverage(dist: &WindowDistribution, windows: impl Iterator<Item = usize>) -> Result<()> {
    let got: Vec<usize> = windows.collect();
    if got != dist.active {
        return Err(Error::Internal(format!(
            "fields {got:?} do not match active windows {:?}",
            dist.active
        )));
    }
    Ok(())
}

/// `p̂ = Σ_{i ∈ active} q[i] · p^i` on the tape.
pub fn combine(tape: &mut Tape<'_>, q: Var, dist: &WindowDistribution, per_field: &[(usize, Var)]) -> Result<Var> {
    check_coverage(dist, per_field.iter().map(|f| f.0))?;
    let idx: Vec<usize> = per_field.iter().map(|f| f.0).collect();
    let fields: Vec<Var> = per_field.iter().map(|f| f.1).collect();
    let p = tape.concat_rows(&fields)?;
    let w = tape.select(q, &idx)?;
    let w = tape.reshape(w, &[1, idx.len()])?;
    let mixed = tape.matmul(w, p)?;
    let n = tape.value(mixed).len();
    tape.reshape(mixed, &[n])
}

/// Value-level [`combine`].
pub fn combine_values(dist: &WindowDistribution, per_field: &[(usize, Vec<f64>)]) -> Result<Vec<f64>> {
    check_coverage(dist, per_field.iter().map(|f| f.0))?;
    let c = per_field.first().map_or(0, |f| f.1.len());
    let mut out = vec![0.0; c];
    for (i, p) in per_field {
        for (o, x) in out.iter_mut().zip(p) {
            *o += dist.q[*i] * x;
        }
    }
    Ok(out)
}

//! Synthetic conversations with a planted context window per utterance.
//!
//! Each utterance carries cue tokens `cue_<emotion>_<speaker>`. The gold
//! emotion of utterance `t` is the emotion of the most recent cue naming the
//! speaker of `t`, and that cue sits in utterance `t - w_t` where `w_t` is the
//! planted window. So:
//!
//! * a window shorter than `w_t` never contains the evidence,
//! * a longer window may also contain stale cues for the same speaker with a
//!   different emotion,
//! * every utterance carries a distractor cue naming another speaker with an
//!   emotion different from the current gold one.
//!
//! Cues are only ever written into the utterance being generated, so earlier
//! gold labels stay valid. Windows are drawn towards the configured target
//! distribution (uniform by default) among those reachable given which
//! speakers were mentioned how long ago.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Conversation, LabelMap, Utterance};
use crate::error::{Error, Result};

const EMOTIONS: [&str; 7] = [
    "neutral", "joy", "sadness", "anger", "fear", "surprise", "disgust",
];
const SPEAKERS: [&str; 8] = ["ann", "ben", "cat", "dan", "eve", "fay", "gus", "hal"];

pub fn emotion_name(k: usize) -> String {
    EMOTIONS
        .get(k)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("emotion{k}"))
}

pub fn speaker_name(k: usize) -> String {
    SPEAKERS
        .get(k)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("spk{k}"))
}

pub fn cue_token(emotion: &str, speaker: &str) -> String {
    format!("cue_{emotion}_{speaker}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_labels: usize,
    pub num_speakers: usize,
    pub max_window: usize,
    pub conv_len_min: usize,
    pub conv_len_max: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub filler_vocab_size: usize,
    pub seed: u64,
    /// Tokens after `speaker [SEP]` in every utterance (cues plus filler).
    pub content_tokens: usize,
    /// Relative target frequency of each window; uniform when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_weights: Option<Vec<f64>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_labels: 4,
            num_speakers: 3,
            max_window: 4,
            conv_len_min: 12,
            conv_len_max: 20,
            n_train: 2000,
            n_dev: 200,
            n_test: 500,
            filler_vocab_size: 20,
            seed: 7,
            content_tokens: 3,
            window_weights: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_labels < 2 {
            return fail("num_labels must be at least 2");
        }
        if self.num_speakers < 2 {
            return fail("num_speakers must be at least 2");
        }
        if self.conv_len_min == 0 || self.conv_len_min > self.conv_len_max {
            return fail("need 1 <= conv_len_min <= conv_len_max");
        }
        if self.content_tokens < 2 {
            return fail("content_tokens must leave room for two cues");
        }
        if self.content_tokens > 2 && self.filler_vocab_size == 0 {
            return fail("filler_vocab_size must be positive");
        }
        if let Some(w) = &self.window_weights {
            if w.len() != self.max_window + 1 {
                return fail("window_weights needs max_window + 1 entries");
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w[0] <= 0.0 {
                return fail("window_weights must be non-negative with a positive first entry");
            }
        }
        Ok(())
    }

    /// Consistency with the model's largest window.
    pub fn check_against_model(&self, model_max_window: usize) -> Result<()> {
        if self.max_window > model_max_window {
            return Err(Error::Config(format!(
                "planted max_window {} exceeds model max_window {}",
                self.max_window, model_max_window
            )));
        }
        Ok(())
    }

    pub fn label_map(&self) -> LabelMap {
        LabelMap::new((0..self.num_labels).map(emotion_name).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<Conversation>,
    pub dev: Vec<Conversation>,
    pub test: Vec<Conversation>,
    pub labels: LabelMap,
}

struct SplitState {
    expected: Vec<f64>,
    realized: Vec<f64>,
}

struct Mention {
    position: usize,
    label: usize,
}

fn pick_label<R: Rng>(rng: &mut R, c: usize, avoid: &[Option<usize>]) -> usize {
    let strict: Vec<usize> = (0..c).filter(|l| !avoid.contains(&Some(*l))).collect();
    if !strict.is_empty() {
        return *strict.choose(rng).expect("nonempty");
    }
    // Only possible with two labels: honour the first constraint alone.
    let loose: Vec<usize> = (0..c).filter(|l| Some(*l) != avoid[0]).collect();
    *loose.choose(rng).expect("at least two labels")
}

fn generate_conversation<R: Rng>(
    cfg: &SynthConfig,
    weights: &[f64],
    state: &mut SplitState,
    rng: &mut R,
    id: String,
) -> Conversation {
    let (c, s, m) = (cfg.num_labels, cfg.num_speakers, cfg.max_window);
    let speakers: Vec<String> = (0..s).map(speaker_name).collect();
    let emotions: Vec<String> = (0..c).map(emotion_name).collect();
    let len = rng.gen_range(cfg.conv_len_min..=cfg.conv_len_max);
    let mut last: Vec<Option<Mention>> = (0..s).map(|_| None).collect();
    let mut utterances = Vec::with_capacity(len);

    for t in 0..len {
        let reach = t.min(m);
        let total: f64 = weights[..=reach].iter().sum();
        for w in 0..=reach {
            state.expected[w] += weights[w] / total;
        }
        let mut feasible = vec![0usize];
        for mention in last.iter().flatten() {
            let age = t - mention.position;
            if age >= 1 && age <= m && weights[age] > 0.0 && !feasible.contains(&age) {
                feasible.push(age);
            }
        }
        feasible.sort_unstable();
        let pull: Vec<f64> = feasible
            .iter()
            .map(|&w| (state.expected[w] - state.realized[w]).max(0.0) + 0.05 * weights[w])
            .collect();
        let mut u = rng.gen::<f64>() * pull.iter().sum::<f64>();
        let mut window = *feasible.last().expect("window 0 is always feasible");
        for (&w, &p) in feasible.iter().zip(&pull) {
            if u < p {
                window = w;
                break;
            }
            u -= p;
        }
        state.realized[window] += 1.0;

        let mut cues = Vec::with_capacity(2);
        let (speaker, label) = if window == 0 {
            let x = rng.gen_range(0..s);
            let prev = last[x].as_ref().map(|mm| mm.label);
            let y = pick_label(rng, c, &[prev]);
            last[x] = Some(Mention { position: t, label: y });
            cues.push(cue_token(&emotions[y], &speakers[x]));
            (x, y)
        } else {
            let candidates: Vec<usize> = (0..s)
                .filter(|&x| matches!(&last[x], Some(mm) if t - mm.position == window))
                .collect();
            let x = *candidates.choose(rng).expect("window came from a live mention");
            (x, last[x].as_ref().expect("live").label)
        };

        // Distractor: another speaker, an emotion other than the gold one.
        // Usually re-mention whoever is least useful as future evidence so
        // longer windows stay reachable.
        let others: Vec<usize> = (0..s).filter(|&y| y != speaker).collect();
        let distractor = if rng.gen_bool(0.8) {
            *others
                .iter()
                .min_by_key(|&&y| match &last[y] {
                    None => (0, 0),
                    Some(mm) if t - mm.position > m => (0, 0),
                    Some(mm) => (1, t - mm.position),
                })
                .expect("at least two speakers")
        } else {
            *others.choose(rng).expect("at least two speakers")
        };
        let prev = last[distractor].as_ref().map(|mm| mm.label);
        let dl = pick_label(rng, c, &[Some(label), prev]);
        last[distractor] = Some(Mention {
            position: t,
            label: dl,
        });
        cues.push(cue_token(&emotions[dl], &speakers[distractor]));

        let mut content = cues;
        while content.len() < cfg.content_tokens {
            content.push(format!("w{}", rng.gen_range(0..cfg.filler_vocab_size)));
        }
        content.shuffle(rng);
        utterances.push(Utterance {
            speaker: speakers[speaker].clone(),
            text: content.join(" "),
            label,
            planted_window: Some(window),
        });
    }
    Conversation { id, utterances }
}

/// Deterministic train/dev/test corpora for a fixed seed.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    cfg.validate()?;
    let weights = cfg
        .window_weights
        .clone()
        .unwrap_or_else(|| vec![1.0; cfg.max_window + 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = |name: &str, n: usize, rng: &mut ChaCha8Rng| {
        let mut state = SplitState {
            expected: vec![0.0; cfg.max_window + 1],
            realized: vec![0.0; cfg.max_window + 1],
        };
        (0..n)
            .map(|i| generate_conversation(cfg, &weights, &mut state, rng, format!("{name}-{i:05}")))
            .collect::<Vec<_>>()
    };
    let train = split("train", cfg.n_train, &mut rng);
    let dev = split("dev", cfg.n_dev, &mut rng);
    let test = split("test", cfg.n_test, &mut rng);
    Ok(SynthCorpus {
        train,
        dev,
        test,
        labels: cfg.label_map(),
    })
}

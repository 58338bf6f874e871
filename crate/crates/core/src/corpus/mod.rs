//! Conversation data model, tokenizer, vocabulary, JSONL storage and the
//! synthetic planted-window generator.

mod io;
mod synth;
mod tokenizer;
mod vocab;

use serde::{Deserialize, Serialize};

pub use io::{load_corpus, load_labels, save_corpus, save_labels};
pub use synth::{
    cue_token, emotion_name, generate_synthetic, speaker_name, SynthConfig, SynthCorpus,
};
pub use tokenizer::tokenize;
pub(crate) use vocab::concat_window;
pub use vocab::{
    build_vocab, encode_input_sequence, speaker_token, EncodedInput, Vocabulary, CLS, PAD, SEP,
    UNK,
};

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
    pub label: usize,
    /// Gold context window, present on synthetic data.
    pub planted_window: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

/// Ordered label names; a label's index is its position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelMap {
    pub labels: Vec<String>,
}

impl LabelMap {
    pub fn new(labels: Vec<String>) -> Self {
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.labels[index]
    }
}

/// Counts reported after generating or loading a corpus.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusStats {
    pub conversations: usize,
    pub utterances: usize,
    pub label_counts: Vec<usize>,
    /// Planted-window counts indexed by window; empty when no metadata exists.
    pub window_histogram: Vec<usize>,
}

pub fn corpus_stats(convs: &[Conversation], num_labels: usize) -> CorpusStats {
    let mut label_counts = vec![0; num_labels];
    let mut window_histogram: Vec<usize> = Vec::new();
    let mut utterances = 0;
    for u in convs.iter().flat_map(|c| &c.utterances) {
        utterances += 1;
        if let Some(c) = label_counts.get_mut(u.label) {
            *c += 1;
        }
        if let Some(w) = u.planted_window {
            if window_histogram.len() <= w {
                window_histogram.resize(w + 1, 0);
            }
            window_histogram[w] += 1;
        }
    }
    CorpusStats {
        conversations: convs.len(),
        utterances,
        label_counts,
        window_histogram,
    }
}

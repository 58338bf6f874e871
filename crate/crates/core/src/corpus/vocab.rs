use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{tokenize, Conversation, Utterance};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"];

/// Speaker names are single tokens: trimmed and lowercased, never split.
pub fn speaker_token(name: &str) -> String {
    name.trim().to_lowercase()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..4] != RESERVED {
            return Err(Error::Integrity("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or `UNK`.
    pub fn encode(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `speaker ⊕ [SEP] ⊕ tokens(text)`.
    pub fn utterance_ids(&self, u: &Utterance) -> Vec<usize> {
        let mut ids = vec![self.encode(&speaker_token(&u.speaker)), SEP];
        ids.extend(tokenize(&u.text).iter().map(|t| self.encode(t)));
        ids
    }
}

/// Tokens with frequency ≥ `min_count`, every speaker, and the reserved
/// tokens. Indices follow (frequency desc, token asc).
pub fn build_vocab(corpus: &[Conversation], min_count: usize) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut speakers = Vec::new();
    for u in corpus.iter().flat_map(|c| &c.utterances) {
        let s = speaker_token(&u.speaker);
        *counts.entry(s.clone()).or_default() += 1;
        speakers.push(s);
        for t in tokenize(&u.text) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| (*c >= min_count || speakers.contains(t)) && !RESERVED.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens: Vec<String> = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t))
        .collect();
    Vocabulary::try_from(tokens).expect("reserved prefix and unique tokens")
}

/// Token ids of a concatenated input together with the offset of each
/// utterance's first token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedInput {
    pub tokens: Vec<usize>,
    pub offsets: Vec<usize>,
    /// Conversation index of the utterance at `offsets[0]`.
    pub first_utterance: usize,
}

/// Concatenates utterances `first..=t` after an optional prefix, dropping
/// whole oldest utterances until at most `max_tokens` remain. The current
/// utterance is always kept; if it alone overflows, its tail is cut.
pub(crate) fn concat_window(
    conv: &Conversation,
    first: usize,
    t: usize,
    vocab: &Vocabulary,
    max_tokens: usize,
    prefix: &[usize],
) -> Result<EncodedInput> {
    if t >= conv.len() {
        return Err(Error::Index {
            index: t,
            len: conv.len(),
        });
    }
    let budget = max_tokens.saturating_sub(prefix.len());
    let mut current = vocab.utterance_ids(&conv.utterances[t]);
    current.truncate(budget.max(1));
    let mut parts = vec![current];
    let mut used = parts[0].len();
    let mut start = t;
    while start > first {
        let ids = vocab.utterance_ids(&conv.utterances[start - 1]);
        if used + ids.len() > budget {
            break;
        }
        used += ids.len();
        parts.push(ids);
        start -= 1;
    }
    parts.reverse();
    let mut tokens = prefix.to_vec();
    let mut offsets = Vec::with_capacity(parts.len());
    for p in parts {
        offsets.push(tokens.len());
        tokens.extend(p);
    }
    Ok(EncodedInput {
        tokens,
        offsets,
        first_utterance: start,
    })
}

/// `u_1 ⊕ … ⊕ u_t` (inclusive of the current utterance) with utterance offsets.
pub fn encode_input_sequence(
    conv: &Conversation,
    t: usize,
    vocab: &Vocabulary,
    max_tokens: usize,
) -> Result<EncodedInput> {
    concat_window(conv, 0, t, vocab, max_tokens, &[])
}

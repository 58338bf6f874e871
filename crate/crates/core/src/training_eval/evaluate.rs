use std::borrow::Cow;
use std::thread;

use super::metrics::{Counts, MetricsReport};
use crate::context_fields::{Model, Prediction};
use crate::corpus::{Conversation, LabelMap, Vocabulary};
use crate::error::{Error, Result};
use crate::window_gate::GateMode;

/// Eval-mode predictions for every utterance of a conversation.
pub fn predict_conversation(model: &Model, conv: &Conversation, vocab: &Vocabulary) -> Result<Vec<Prediction>> {
    (0..conv.len()).map(|t| model.predict(conv, t, vocab)).collect()
}

fn count(model: &Model, convs: &[Conversation], vocab: &Vocabulary) -> Result<Counts> {
    let mut counts = Counts::new(model.num_labels, model.config.max_window + 1);
    for conv in convs {
        for (t, u) in conv.utterances.iter().enumerate() {
            if u.label >= model.num_labels {
                return Err(Error::LabelMismatch(format!(
                    "label index {} in {} exceeds the model's {} classes",
                    u.label, conv.id, model.num_labels
                )));
            }
            let p = model.predict(conv, t, vocab)?;
            counts.record(u.label, p.label, p.selected, &p.dist.active, u.planted_window);
        }
    }
    Ok(counts)
}

/// Greedy-decoding metrics over every utterance of `corpus`. `threads > 1`
/// splits the conversations into contiguous chunks evaluated in parallel;
/// the result does not depend on the thread count.
pub fn evaluate(
    model: &Model,
    corpus: &[Conversation],
    vocab: &Vocabulary,
    labels: &LabelMap,
    mode: Option<GateMode>,
    threads: usize,
) -> Result<MetricsReport> {
    if labels.len() != model.num_labels {
        return Err(Error::LabelMismatch(format!(
            "label map has {} labels, model has {}",
            labels.len(),
            model.num_labels
        )));
    }
    let model = match mode {
        Some(m) if m != model.config.gate_mode => {
            let mut owned = model.clone();
            owned.config.gate_mode = m;
            Cow::Owned(owned)
        }
        _ => Cow::Borrowed(model),
    };
    let model = model.as_ref();
    let threads = threads.max(1).min(corpus.len().max(1));
    let counts = if threads == 1 {
        count(model, corpus, vocab)?
    } else {
        let chunk = corpus.len().div_ceil(threads);
        let parts: Vec<Result<Counts>> = thread::scope(|s| {
            let handles: Vec<_> = corpus
                .chunks(chunk)
                .map(|part| s.spawn(move || count(model, part, vocab)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Internal("evaluation thread panicked".into()))))
                .collect()
        });
        let mut total = Counts::new(model.num_labels, model.config.max_window + 1);
        for part in parts {
            total.merge(&part?);
        }
        total
    };
    Ok(MetricsReport::from_counts(&counts, labels))
}

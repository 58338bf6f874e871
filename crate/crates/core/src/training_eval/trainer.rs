use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::evaluate::evaluate;
use super::metrics::MetricsReport;
use super::optim::Adam;
use crate::autodiff::Tape;
use crate::context_fields::Model;
use crate::corpus::{Conversation, LabelMap, Vocabulary};
use crate::error::{Error, Result};
use crate::params::GradStore;

/// Summed cross-entropy of every utterance of `conv` in eval mode.
pub fn conversation_loss(model: &Model, conv: &Conversation, vocab: &Vocabulary) -> Result<f64> {
    let mut total = 0.0;
    for (t, u) in conv.utterances.iter().enumerate() {
        let mut tape = Tape::with_params(&model.store);
        let out = model.forward(&mut tape, conv, t, vocab, None)?;
        let loss = tape.cross_entropy(out.p_hat, u.label)?;
        total += tape.value(loss).item();
    }
    Ok(total)
}

/// Summed eval-mode loss over a batch of conversations.
pub fn batch_loss(model: &Model, batch: &[Conversation], vocab: &Vocabulary) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Internal("empty batch".into()));
    }
    batch.iter().map(|c| conversation_loss(model, c, vocab)).sum()
}

/// Adds the gradient of the summed batch loss into `grads` and returns the
/// loss. Dropout is active when `train_rng` is given.
pub fn batch_grad<'a>(
    model: &Model,
    batch: impl IntoIterator<Item = &'a Conversation>,
    vocab: &Vocabulary,
    mut train_rng: Option<&mut ChaCha8Rng>,
    grads: &mut GradStore,
) -> Result<f64> {
    let mut total = 0.0;
    for conv in batch {
        for (t, u) in conv.utterances.iter().enumerate() {
            let mut tape = Tape::with_params(&model.store);
            let out = model.forward(&mut tape, conv, t, vocab, train_rng.as_deref_mut())?;
            let loss = tape.cross_entropy(out.p_hat, u.label)?;
            let value = tape.value(loss).item();
            total += value;
            if value.is_finite() {
                tape.backward(loss, Some(grads))?;
            }
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-utterance training loss; epoch 0 is the untrained model in
    /// eval mode.
    pub train_loss: f64,
    pub train_loss_sum: f64,
    pub dev_macro_f1: f64,
    pub dev_micro_f1: f64,
    pub improved: bool,
}

pub struct TrainOutcome {
    /// Parameters of the best dev epoch.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev: MetricsReport,
}

fn utterances(convs: &[Conversation]) -> usize {
    convs.iter().map(Conversation::len).sum()
}

/// Adam training with dev macro-F1 early stopping.
pub fn train(
    train_set: &[Conversation],
    dev_set: &[Conversation],
    vocab: &Vocabulary,
    labels: &LabelMap,
    cfg: &TrainConfig,
    eval_threads: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::Config("training and dev corpora must be nonempty".into()));
    }
    let mut model = Model::new(cfg.model.clone(), vocab.len(), labels.len(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let n = utterances(train_set) as f64;

    let initial = batch_loss(&model, train_set, vocab)?;
    let dev = evaluate(&model, dev_set, vocab, labels, None, eval_threads)?;
    log::info!("epoch 0: loss {:.4} dev macro-F1 {:.4}", initial / n, dev.macro_f1);
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss: initial / n,
        train_loss_sum: initial,
        dev_macro_f1: dev.macro_f1,
        dev_micro_f1: dev.micro_f1,
        improved: true,
    }];
    let mut best = (0, dev, model.store.clone());
    let mut stale = 0;

    let mut adam = Adam::new(&model.store, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut grads = GradStore::new(&model.store);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            grads.zero();
            let batch = idx.iter().map(|&i| &train_set[i]);
            let loss = batch_grad(&model, batch, vocab, Some(&mut rng), &mut grads)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    first_id: train_set[idx[0]].id.clone(),
                    loss,
                });
            }
            let norm = grads.global_norm();
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            adam.step(&mut model.store, &grads);
            total += loss;
        }
        let dev = evaluate(&model, dev_set, vocab, labels, None, eval_threads)?;
        let improved = dev.macro_f1 > best.1.macro_f1;
        log::info!(
            "epoch {epoch}: loss {:.4} dev macro-F1 {:.4}{}",
            total / n,
            dev.macro_f1,
            if improved { " *" } else { "" }
        );
        log.push(EpochLog {
            epoch,
            train_loss: total / n,
            train_loss_sum: total,
            dev_macro_f1: dev.macro_f1,
            dev_micro_f1: dev.micro_f1,
            improved,
        });
        if improved {
            best = (epoch, dev, model.store.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    let (best_epoch, best_dev, store) = best;
    model.store = store;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_dev,
    })
}

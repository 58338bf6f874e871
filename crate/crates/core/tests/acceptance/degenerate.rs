use vwerc::context_fields::Model;
use vwerc::corpus::{build_vocab, Conversation};
use vwerc::speaker_units::{partition, SpeakerUnitVariant};
use vwerc::training_eval::{batch_loss, predict_conversation};
use vwerc::window_gate::GateMode;

use crate::common::{conversation, tiny_model_config};
use crate::Outcome;

const M: usize = 3;

fn check(model: &Model, conv: &Conversation, vocab: &vwerc::corpus::Vocabulary, tag: &str, problems: &mut Vec<String>) {
    let preds = match predict_conversation(model, conv, vocab) {
        Ok(p) => p,
        Err(e) => {
            problems.push(format!("{tag}: {e}"));
            return;
        }
    };
    for (t, p) in preds.iter().enumerate() {
        let sum: f64 = p.probs.iter().sum();
        if !p.probs.iter().all(|x| x.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            problems.push(format!("{tag} t={t}: p_hat is not a distribution"));
        }
        if t == 0 {
            let mut one_hot = vec![0.0; M + 1];
            one_hot[0] = 1.0;
            if p.dist.q != one_hot || p.dist.active != [0] || p.selected != 0 {
                problems.push(format!("{tag} t=0: q={:?} active={:?}", p.dist.q, p.dist.active));
            }
        }
    }
    match batch_loss(model, std::slice::from_ref(conv), vocab) {
        Ok(l) if l.is_finite() => {}
        other => problems.push(format!("{tag}: loss {other:?}")),
    }
}

pub fn run() -> Outcome {
    // A then B: B's first turn has no own history.
    let newcomer = conversation(&[
        ("A", "hello there", 0),
        ("A", "still here", 1),
        ("B", "first words", 2),
        ("A", "ok then", 1),
        ("C", "late arrival", 0),
    ]);
    let solo = conversation(&[
        ("A", "talking alone", 0),
        ("A", "more of it", 1),
        ("A", "and more", 2),
        ("A", "the end", 3),
    ]);
    let single = conversation(&[("B", "only one line", 2)]);
    let convs = vec![newcomer.clone(), solo.clone(), single.clone()];
    let vocab = build_vocab(&convs, 1);

    let mut problems = Vec::new();
    let speakers = |c: &Conversation, t: usize| c.utterances[..=t].iter().map(|u| u.speaker.clone()).collect::<Vec<_>>();
    let inner_empty = [2, 4].iter().all(|&t| partition(&speakers(&newcomer, t), &newcomer.utterances[t].speaker).inner.is_empty());
    let inter_empty = (0..solo.len()).all(|t| partition(&speakers(&solo, t), &"A".to_string()).inter.is_empty());
    if !inner_empty || !inter_empty {
        problems.push("test conversations do not produce the empty partitions".to_string());
    }

    let mut cells = 0;
    for variant in [SpeakerUnitVariant::SpeakerAware, SpeakerUnitVariant::NUnit, SpeakerUnitVariant::SUnit] {
        for mode in GateMode::ALL {
            let mut cfg = tiny_model_config(M);
            cfg.unit_variant = variant;
            cfg.gate_mode = mode;
            let model = Model::new(cfg, vocab.len(), 4, 17).unwrap();
            for (conv, name) in convs.iter().zip(["first-time speakers", "single party", "single utterance"]) {
                check(&model, conv, &vocab, &format!("{variant:?}/{mode} {name}"), &mut problems);
            }
            cells += 1;
        }
    }
    let detail = if problems.is_empty() {
        format!("{cells} variant x mode cells: t=0 gives q=[1,0,0,0] on window 0; empty G_inner and empty G_inter run without error with finite loss")
    } else {
        format!("{} problems, first: {}", problems.len(), problems[0])
    };
    Outcome::new(problems.is_empty(), detail)
}

use std::time::Instant;

use vwerc::autodiff::{Tape, Var};
use vwerc::encoder::{encode, multi_head_attention, AttentionParams, EncoderConfig, EncoderParams};
use vwerc::gradcheck::{grad_check, grad_check_params};
use vwerc::params::{ParamId, ParamStore};
use vwerc::speaker_units::{speaker_unit_forward, UnitParams};
use vwerc::tensor::Tensor;
use vwerc::window_gate::{gate_distribution, GateMode};
use vwerc::Result;

use crate::common::{project, random_tensor, rng, small_corpus, tiny_model_config};
use crate::Outcome;

const TOL: f64 = 1e-3;
const BUDGET_SECS: f64 = 120.0;
const SEEDS: [u64; 5] = [11, 22, 33, 44, 55];
const H: f64 = 1e-5;

type Unary = Box<dyn Fn(&mut Tape<'_>, Var, u64) -> Result<Var>>;

/// One-input functions; the other operand, if any, is a seeded constant.
fn primitives() -> Vec<(&'static str, Vec<usize>, Unary)> {
    fn c(t: &mut Tape<'_>, shape: &[usize], seed: u64) -> Var {
        t.constant(random_tensor(&mut rng(seed ^ 0x51), shape))
    }
    vec![
        ("matmul (left)", vec![3, 4], Box::new(|t, x, s| {
            let b = c(t, &[4, 2], s);
            let y = t.matmul(x, b)?;
            project(t, y, s)
        })),
        ("matmul (right)", vec![4, 2], Box::new(|t, x, s| {
            let a = c(t, &[3, 4], s);
            let y = t.matmul(a, x)?;
            project(t, y, s)
        })),
        ("transpose", vec![2, 3], Box::new(|t, x, s| {
            let y = t.transpose(x)?;
            project(t, y, s)
        })),
        ("add", vec![2, 3], Box::new(|t, x, s| {
            let b = c(t, &[2, 3], s);
            let y = t.add(x, b)?;
            let y = t.mul(y, y)?;
            project(t, y, s)
        })),
        ("add_n", vec![2, 3], Box::new(|t, x, s| {
            let b = c(t, &[2, 3], s);
            let y = t.add_n(&[x, b, x])?;
            let y = t.mul(y, y)?;
            project(t, y, s)
        })),
        ("add_row (bias)", vec![3], Box::new(|t, x, s| {
            let a = c(t, &[4, 3], s);
            let y = t.add_row(a, x)?;
            let y = t.mul(y, y)?;
            project(t, y, s)
        })),
        ("mul", vec![2, 3], Box::new(|t, x, s| {
            let b = c(t, &[2, 3], s);
            let y = t.mul(x, b)?;
            let y = t.mul(y, x)?;
            project(t, y, s)
        })),
        ("scale", vec![4], Box::new(|t, x, s| {
            let y = t.scale(x, -1.7);
            let y = t.mul(y, x)?;
            project(t, y, s)
        })),
        ("relu", vec![3, 3], Box::new(|t, x, s| {
            let y = t.relu(x);
            project(t, y, s)
        })),
        ("gelu", vec![3, 3], Box::new(|t, x, s| {
            let y = t.gelu(x);
            project(t, y, s)
        })),
        ("softmax", vec![2, 4], Box::new(|t, x, s| {
            let y = t.softmax(x)?;
            project(t, y, s)
        })),
        ("masked softmax", vec![5], Box::new(|t, x, s| {
            let m = t.constant(Tensor::vector(vec![0.0, f64::NEG_INFINITY, 0.0, 0.0, f64::NEG_INFINITY]));
            let y = t.add(x, m)?;
            let y = t.softmax(y)?;
            project(t, y, s)
        })),
        ("layer_norm (input)", vec![2, 5], Box::new(|t, x, s| {
            let g = c(t, &[5], s);
            let b = c(t, &[5], s + 1);
            let y = t.layer_norm(x, g, b)?;
            project(t, y, s)
        })),
        ("layer_norm (gain)", vec![5], Box::new(|t, g, s| {
            let x = c(t, &[3, 5], s);
            let b = c(t, &[5], s + 1);
            let y = t.layer_norm(x, g, b)?;
            project(t, y, s)
        })),
        ("concat", vec![2, 2], Box::new(|t, x, s| {
            let b = c(t, &[2, 3], s);
            let y = t.concat(&[b, x, x])?;
            let y = t.mul(y, y)?;
            project(t, y, s)
        })),
        ("concat_rows", vec![2, 3], Box::new(|t, x, s| {
            let b = c(t, &[1, 3], s);
            let y = t.concat_rows(&[x, b, x])?;
            let y = t.mul(y, y)?;
            project(t, y, s)
        })),
        ("rows", vec![4, 2], Box::new(|t, x, s| {
            let y = t.rows(x, &[3, 0, 3])?;
            let y = t.mul(y, y)?;
            project(t, y, s)
        })),
        ("select", vec![5], Box::new(|t, x, s| {
            let y = t.select(x, &[4, 1, 1])?;
            let y = t.mul(y, y)?;
            project(t, y, s)
        })),
        ("slice_cols", vec![2, 5], Box::new(|t, x, s| {
            let y = t.slice_cols(x, 1, 3)?;
            let y = t.mul(y, y)?;
            project(t, y, s)
        })),
        ("reshape", vec![2, 3], Box::new(|t, x, s| {
            let y = t.reshape(x, &[3, 2])?;
            let y = t.mul(y, y)?;
            project(t, y, s)
        })),
        ("sum", vec![6], Box::new(|t, x, _| {
            let y = t.mul(x, x)?;
            Ok(t.sum(y))
        })),
        ("cross_entropy", vec![4], Box::new(|t, x, s| {
            let p = t.softmax(x)?;
            t.cross_entropy(p, (s % 4) as usize)
        })),
        ("gate normalize, TopkSoft (mask fixed)", vec![4], Box::new(|t, x, s| {
            let (q, _) = gate_distribution(t, x, GateMode::TopkSoft, 2, &[0, 1, 2, 3])?;
            project(t, q, s)
        })),
        ("gate normalize, AllSoft (infeasible masked)", vec![4], Box::new(|t, x, s| {
            let (q, _) = gate_distribution(t, x, GateMode::AllSoft, 2, &[0, 1, 2])?;
            project(t, q, s)
        })),
    ]
}

/// Gate selections are piecewise constant in `s`; the check is only valid
/// away from a top-K boundary.
fn topk_margin_ok(x: &Tensor<f64>) -> bool {
    let mut v = x.data().to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.len() < 3 || (v[1] - v[2]).abs() > 1e-3
}

fn check_params(store: &mut ParamStore, f: impl Fn(&mut Tape<'_>) -> Result<Var>) -> f64 {
    let ids: Vec<ParamId> = store.ids().collect();
    grad_check_params(store, &ids, f, H).unwrap()
}

pub fn run() -> Outcome {
    let start = Instant::now();
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut note = |name: &str, err: f64| match worst.iter_mut().find(|w| w.0 == name) {
        Some(w) => w.1 = w.1.max(err),
        None => worst.push((name.to_string(), err)),
    };

    for (name, shape, f) in primitives() {
        for seed in SEEDS {
            let x = random_tensor(&mut rng(seed), &shape);
            if name.starts_with("gate") && !topk_margin_ok(&x) {
                continue;
            }
            let err = grad_check(|t, v| f(t, v, seed), &x, H).unwrap();
            note(name, err);
        }
    }

    for seed in SEEDS {
        // embedding lookup, parameters only
        let mut store = ParamStore::new();
        let table = store.add("emb", random_tensor(&mut rng(seed), &[6, 3]).to_f32());
        note(
            "embedding",
            check_params(&mut store, |t| {
                let e = t.embedding(table, &[1, 4, 1, 0])?;
                let e = t.mul(e, e)?;
                project(t, e, seed)
            }),
        );

        // attention block and speaker unit
        let mut store = ParamStore::new();
        let mut r = rng(seed);
        let attn = AttentionParams::new(&mut store, "attn", 8, &mut r);
        let unit = UnitParams::new(&mut store, "unit", 8, &mut r);
        let q = random_tensor(&mut r, &[1, 8]);
        let kv = random_tensor(&mut r, &[3, 8]);
        note(
            "multi-head attention",
            check_params(&mut store, |t| {
                let qv = t.constant(q.clone());
                let kvv = t.constant(kv.clone());
                let out = multi_head_attention(t, qv, kvv, &attn, 2)?.output;
                project(t, out, seed)
            }),
        );
        note(
            "speaker unit",
            check_params(&mut store, |t| {
                let qv = t.constant(q.clone());
                let kvv = t.constant(kv.clone());
                let o = speaker_unit_forward(t, qv, Some(kvv), &unit, 2)?;
                project(t, o, seed)
            }),
        );

        // two-layer d=8 encoder
        let cfg = EncoderConfig {
            d: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            max_tokens: 8,
            dropout: 0.0,
        };
        let mut store = ParamStore::new();
        let enc = EncoderParams::new(&mut store, "enc", &cfg, 7, &mut rng(seed));
        note(
            "encoder (2 layers, d=8)",
            check_params(&mut store, |t| {
                let h = encode(t, &enc, &cfg, &[1, 5, 2, 6, 3], None)?;
                project(t, h, seed)
            }),
        );
    }

    // full model, summed loss over one conversation
    let mut composite_coords = 0;
    for seed in SEEDS {
        let (corpus, vocab) = small_corpus(4, 2, seed);
        // shortest conversation that still reaches every window
        let conv = corpus.train.iter().filter(|c| c.len() > 2).min_by_key(|c| c.len()).unwrap().clone();
        let mut model = vwerc::context_fields::Model::new(tiny_model_config(2), vocab.len(), 4, seed).unwrap();
        let mut store = std::mem::take(&mut model.store);
        composite_coords += store.numel();
        let err = check_params(&mut store, |t| {
            let mut losses = Vec::with_capacity(conv.len());
            for (i, u) in conv.utterances.iter().enumerate() {
                let out = model.forward(t, &conv, i, &vocab, None)?;
                losses.push(t.cross_entropy(out.p_hat, u.label)?);
            }
            t.add_n(&losses)
        });
        model.store = store;
        let reference = vwerc::training_eval::batch_loss(&model, std::slice::from_ref(&conv), &vocab).unwrap();
        let mut tape = Tape::with_params(&model.store);
        let mut again = 0.0;
        for (i, u) in conv.utterances.iter().enumerate() {
            let out = model.forward(&mut tape, &conv, i, &vocab, None).unwrap();
            let l = tape.cross_entropy(out.p_hat, u.label).unwrap();
            again += tape.value(l).item();
        }
        assert!((reference - again).abs() < 1e-9, "composite is not the batch loss");
        note("model_forward -> batch_loss composite", err);
    }

    let elapsed = start.elapsed().as_secs_f64();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let failing: Vec<String> = worst
        .iter()
        .filter(|w| !(w.1 < TOL))
        .map(|w| format!("{}={:.2e}", w.0, w.1))
        .collect();
    let composite = worst.iter().find(|w| w.0.starts_with("model_forward")).map_or(f64::NAN, |w| w.1);
    let pass = failing.is_empty() && elapsed < BUDGET_SECS;
    let detail = format!(
        "{} checks x 5 seeds, max rel err {max:.2e} (composite {composite:.2e} over {composite_coords} coords), limit {TOL:e}, {elapsed:.0}s of {BUDGET_SECS}s{}",
        worst.len(),
        if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
    );
    Outcome::new(pass, detail)
}

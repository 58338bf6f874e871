//! Small post-norm transformer encoder used for utterance and field inputs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{filled, glorot, uniform, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Positional table size; the longest accepted input.
    pub max_tokens: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 32,
            n_layers: 2,
            n_heads: 4,
            d_ff: 64,
            max_tokens: 256,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_layers == 0 || self.n_heads == 0 || self.d_ff == 0 || self.max_tokens == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.d % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d={} is not divisible by n_heads={}",
                self.d, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Query/key/value projections and the output projection of one
/// multi-head attention block.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub bq: ParamId,
    /// Keys carry no bias: it would shift every score of a query equally.
    pub wk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl AttentionParams {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut w = |name: &str, rng: &mut ChaCha8Rng| store.add(format!("{prefix}.{name}"), glorot(rng, d, d));
        let wq = w("wq", rng);
        let wk = w("wk", rng);
        let wv = w("wv", rng);
        let wo = w("wo", rng);
        let b = |name: &str, store: &mut ParamStore| store.add(format!("{prefix}.{name}"), filled(&[d], 0.0));
        Self {
            wq,
            bq: b("bq", store),
            wk,
            wv,
            bv: b("bv", store),
            wo,
            bo: b("bo", store),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        Self {
            gamma: store.add(format!("{prefix}.gamma"), filled(&[d], 1.0)),
            beta: store.add(format!("{prefix}.beta"), filled(&[d], 0.0)),
        }
    }

    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln2: LayerNormParams,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub emb_ln: LayerNormParams,
    pub layers: Vec<EncoderLayer>,
}

impl EncoderParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        vocab_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = cfg.d;
        let tok_emb = store.add(format!("{prefix}.tok_emb"), uniform(rng, &[vocab_size, d], 0.1));
        let pos_emb = store.add(format!("{prefix}.pos_emb"), uniform(rng, &[cfg.max_tokens, d], 0.1));
        let emb_ln = LayerNormParams::new(store, &format!("{prefix}.emb_ln"), d);
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("{prefix}.layers.{l}");
                let attn = AttentionParams::new(store, &format!("{p}.attn"), d, rng);
                let ln1 = LayerNormParams::new(store, &format!("{p}.ln1"), d);
                let w1 = store.add(format!("{p}.ff.w1"), glorot(rng, d, cfg.d_ff));
                let b1 = store.add(format!("{p}.ff.b1"), filled(&[cfg.d_ff], 0.0));
                let w2 = store.add(format!("{p}.ff.w2"), glorot(rng, cfg.d_ff, d));
                let b2 = store.add(format!("{p}.ff.b2"), filled(&[d], 0.0));
                let ln2 = LayerNormParams::new(store, &format!("{p}.ln2"), d);
                EncoderLayer {
                    attn,
                    ln1,
                    w1,
                    b1,
                    w2,
                    b2,
                    ln2,
                }
            })
            .collect();
        Self {
            tok_emb,
            pos_emb,
            emb_ln,
            layers,
        }
    }
}

/// `x · W + b` for a `[n × in]` input.
pub fn linear(tape: &mut Tape<'_>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let wv = tape.param(w);
    let bv = tape.param(b);
    let y = tape.matmul(x, wv)?;
    tape.add_row(y, bv)
}

/// Output of [`multi_head_attention`]: the projected result and each head's
/// `[q × n]` attention weights.
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention of `query` (`[q × d]`) over `keys_values`
/// (`[n × d]`), split into `n_heads` heads, concatenated and projected by the
/// output matrix.
pub fn multi_head_attention(
    tape: &mut Tape<'_>,
    query: Var,
    keys_values: Var,
    params: &AttentionParams,
    n_heads: usize,
) -> Result<AttentionOutput> {
    let d = tape.value(query).cols();
    if tape.value(keys_values).cols() != d || d % n_heads != 0 {
        return Err(Error::Shape {
            op: "attention",
            left: tape.shape(query).to_vec(),
            right: tape.shape(keys_values).to_vec(),
        });
    }
    let dh = d / n_heads;
    let q = linear(tape, query, params.wq, params.bq)?;
    let wk = tape.param(params.wk);
    let k = tape.matmul(keys_values, wk)?;
    let v = linear(tape, keys_values, params.wv, params.bv)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dh, dh)?,
                tape.slice_cols(k, h * dh, dh)?,
                tape.slice_cols(v, h * dh, dh)?,
            )
        };
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax(scores)?;
        heads.push(tape.matmul(attn, vh)?);
        weights.push(attn);
    }
    let cat = if n_heads == 1 { heads[0] } else { tape.concat(&heads)? };
    let output = linear(tape, cat, params.wo, params.bo)?;
    Ok(AttentionOutput { output, weights })
}

fn dropout(tape: &mut Tape<'_>, x: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let shape = tape.shape(x).to_vec();
            let mask = (0..tape.value(x).len())
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                .collect();
            let m = tape.constant(Tensor::new(shape, mask)?);
            tape.mul(x, m)
        }
        _ => Ok(x),
    }
}

/// Contextual representations `[len × d]` of a token sequence. Dropout is
/// applied only when `train_rng` is given.
pub fn encode(
    tape: &mut Tape<'_>,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    tokens: &[usize],
    mut train_rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    if tokens.len() > cfg.max_tokens {
        return Err(Error::TooLong {
            len: tokens.len(),
            max: cfg.max_tokens,
        });
    }
    if tokens.is_empty() {
        return Err(Error::Index { index: 0, len: 0 });
    }
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let tok = tape.embedding(params.tok_emb, tokens)?;
    let pos = tape.embedding(params.pos_emb, &positions)?;
    let x = tape.add(tok, pos)?;
    let x = params.emb_ln.apply(tape, x)?;
    let mut x = dropout(tape, x, cfg.dropout, train_rng.as_deref_mut())?;
    for layer in &params.layers {
        let attn = multi_head_attention(tape, x, x, &layer.attn, cfg.n_heads)?.output;
        let attn = dropout(tape, attn, cfg.dropout, train_rng.as_deref_mut())?;
        let res = tape.add(x, attn)?;
        x = layer.ln1.apply(tape, res)?;
        let h = linear(tape, x, layer.w1, layer.b1)?;
        let h = tape.gelu(h);
        let ff = linear(tape, h, layer.w2, layer.b2)?;
        let ff = dropout(tape, ff, cfg.dropout, train_rng.as_deref_mut())?;
        let res = tape.add(x, ff)?;
        x = layer.ln2.apply(tape, res)?;
    }
    Ok(x)
}

/// Rows of `hidden` at the first token of each of the last `min(t, M) + 1`
/// utterances, oldest first, as a `[k × d]` matrix.
pub fn read_utterance_reprs(
    tape: &mut Tape<'_>,
    hidden: Var,
    offsets: &[usize],
    max_window: usize,
) -> Result<Var> {
    let rows = tape.value(hidden).rows();
    if offsets.is_empty() {
        return Err(Error::Index { index: 0, len: 0 });
    }
    if offsets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Internal("utterance offsets must increase".into()));
    }
    let keep = offsets.len().min(max_window + 1);
    let chosen = &offsets[offsets.len() - keep..];
    if let Some(&bad) = chosen.iter().find(|&&o| o >= rows) {
        return Err(Error::Index { index: bad, len: rows });
    }
    tape.rows(hidden, chosen)
}

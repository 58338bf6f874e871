//! Inner- and inter-speaker attention units.
//!
//! Vectors travel through these functions as `[1 × d]` row matrices so they
//! can feed the matmul-based attention directly.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::encoder::{linear, multi_head_attention, AttentionParams, LayerNormParams};
use crate::error::{Error, Result};
use crate::params::{filled, glorot, ParamId, ParamStore};
use crate::tensor::Tensor;

/// History positions split by whether they share the current speaker.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpeakerPartition {
    pub inner: Vec<usize>,
    pub inter: Vec<usize>,
}

/// Splits the history `0..speakers.len()-1` (the last entry is the current
/// utterance) by speaker identity.
pub fn partition<S: PartialEq>(speakers: &[S], current: &S) -> SpeakerPartition {
    let history = speakers.len().saturating_sub(1);
    let mut out = SpeakerPartition::default();
    for (i, s) in speakers[..history].iter().enumerate() {
        if s == current {
            out.inner.push(i);
        } else {
            out.inter.push(i);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpeakerUnitVariant {
    /// Inner unit over same-speaker history, inter unit over the rest.
    #[default]
    SpeakerAware,
    /// Both units see the whole history.
    NUnit,
    /// Like `NUnit`, with a one-hot speaker slot appended to every
    /// representation and projected back to `d`.
    SUnit,
}

/// One attention unit: query/key/value/output projections and a layer norm.
#[derive(Clone, Debug)]
pub struct UnitParams {
    pub attn: AttentionParams,
    pub ln: LayerNormParams,
}

impl UnitParams {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            attn: AttentionParams::new(store, &format!("{prefix}.attn"), d, rng),
            ln: LayerNormParams::new(store, &format!("{prefix}.ln"), d),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpeakerProjection {
    pub w: ParamId,
    pub b: ParamId,
    pub slots: usize,
}

#[derive(Clone, Debug)]
pub struct SpeakerUnitParams {
    pub inner: UnitParams,
    pub inter: UnitParams,
    pub projection: Option<SpeakerProjection>,
}

impl SpeakerUnitParams {
    pub fn new(
        store: &mut ParamStore,
        d: usize,
        variant: SpeakerUnitVariant,
        max_speakers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let inner = UnitParams::new(store, "units.inner", d, rng);
        let inter = UnitParams::new(store, "units.inter", d, rng);
        let projection = (variant == SpeakerUnitVariant::SUnit).then(|| SpeakerProjection {
            w: store.add("units.speaker_proj.w", glorot(rng, d + max_speakers, d)),
            b: store.add("units.speaker_proj.b", filled(&[d], 0.0)),
            slots: max_speakers,
        });
        Self {
            inner,
            inter,
            projection,
        }
    }
}

/// `LayerNorm(c + g_t)` where `c` attends from `g_t` over the rows of
/// `context`. An absent or empty context gives `c = 0`.
pub fn speaker_unit_forward(
    tape: &mut Tape<'_>,
    g_t: Var,
    context: Option<Var>,
    params: &UnitParams,
    n_heads: usize,
) -> Result<Var> {
    if tape.shape(g_t).len() != 2 || tape.value(g_t).rows() != 1 {
        return Err(Error::Shape {
            op: "speaker_unit",
            left: tape.shape(g_t).to_vec(),
            right: vec![1, tape.value(g_t).cols()],
        });
    }
    let pre = match context {
        Some(ctx) => {
            let c = multi_head_attention(tape, g_t, ctx, &params.attn, n_heads)?.output;
            tape.add(c, g_t)?
        }
        None => g_t,
    };
    params.ln.apply(tape, pre)
}

/// `[o_inter ; o_inner]`.
pub fn fuse(tape: &mut Tape<'_>, o_inner: Var, o_inter: Var) -> Result<Var> {
    tape.concat(&[o_inter, o_inner])
}

/// Slot of each speaker by order of first appearance, capped at `slots - 1`.
pub fn speaker_slots<S: PartialEq>(speakers: &[S], slots: usize) -> Vec<usize> {
    let mut seen: Vec<&S> = Vec::new();
    speakers
        .iter()
        .map(|s| {
            let k = match seen.iter().position(|x| *x == s) {
                Some(k) => k,
                None => {
                    seen.push(s);
                    seen.len() - 1
                }
            };
            k.min(slots.saturating_sub(1))
        })
        .collect()
}

/// Runs both units over the window representations `reprs` (`[k × d]`, the
/// current utterance last) and returns `z` as `[1 × 2d]`.
pub fn distill<S: PartialEq>(
    tape: &mut Tape<'_>,
    reprs: Var,
    speakers: &[S],
    params: &SpeakerUnitParams,
    variant: SpeakerUnitVariant,
    n_heads: usize,
) -> Result<Var> {
    let k = tape.value(reprs).rows();
    if speakers.len() != k || k == 0 {
        return Err(Error::Internal(format!(
            "{} speakers for {k} representations",
            speakers.len()
        )));
    }
    let reprs = match (&params.projection, variant) {
        (Some(proj), SpeakerUnitVariant::SUnit) => {
            let slots = speaker_slots(speakers, proj.slots);
            let mut onehot = vec![0.0; k * proj.slots];
            for (r, &s) in slots.iter().enumerate() {
                onehot[r * proj.slots + s] = 1.0;
            }
            let oh = tape.constant(Tensor::matrix(k, proj.slots, onehot)?);
            let cat = tape.concat(&[reprs, oh])?;
            linear(tape, cat, proj.w, proj.b)?
        }
        (None, SpeakerUnitVariant::SUnit) => {
            return Err(Error::Config("S-Unit variant needs a speaker projection".into()))
        }
        _ => reprs,
    };
    let g_t = tape.rows(reprs, &[k - 1])?;
    let (inner_idx, inter_idx) = match variant {
        SpeakerUnitVariant::SpeakerAware => {
            let p = partition(speakers, &speakers[k - 1]);
            (p.inner, p.inter)
        }
        _ => ((0..k - 1).collect(), (0..k - 1).collect()),
    };
    let gather = |tape: &mut Tape<'_>, idx: &[usize]| -> Result<Option<Var>> {
        if idx.is_empty() {
            Ok(None)
        } else {
            tape.rows(reprs, idx).map(Some)
        }
    };
    let inner_ctx = gather(tape, &inner_idx)?;
    let inter_ctx = gather(tape, &inter_idx)?;
    let o_inner = speaker_unit_forward(tape, g_t, inner_ctx, &params.inner, n_heads)?;
    let o_inter = speaker_unit_forward(tape, g_t, inter_ctx, &params.inter, n_heads)?;
    fuse(tape, o_inner, o_inter)
}

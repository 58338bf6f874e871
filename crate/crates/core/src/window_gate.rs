//! Context-window scoring and the sparse window distribution `q`.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_vec, Tape, Var};
use crate::encoder::linear;
use crate::error::{Error, Result};
use crate::params::{filled, glorot, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateMode {
    #[default]
    TopkSoft,
    AllSoft,
    TopkHard,
    AllHard,
}

impl GateMode {
    pub const ALL: [GateMode; 4] = [Self::TopkSoft, Self::AllSoft, Self::TopkHard, Self::AllHard];

    pub fn is_soft(self) -> bool {
        matches!(self, Self::TopkSoft | Self::AllSoft)
    }
}

impl fmt::Display for GateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::TopkSoft => "TopkSoft",
            Self::AllSoft => "AllSoft",
            Self::TopkHard => "TopkHard",
            Self::AllHard => "AllHard",
        };
        f.write_str(s)
    }
}

impl FromStr for GateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown gate mode {s:?}")))
    }
}

/// Two-layer perceptron from `z` (`2d`) to `M + 1` window scores.
#[derive(Clone, Debug)]
pub struct GateParams {
    pub w5: ParamId,
    pub b5: ParamId,
    pub w6: ParamId,
    pub b6: ParamId,
}

impl GateParams {
    pub fn new(store: &mut ParamStore, d: usize, hidden: usize, max_window: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w5: store.add("gate.w5", glorot(rng, 2 * d, hidden)),
            b5: store.add("gate.b5", filled(&[hidden], 0.0)),
            w6: store.add("gate.w6", glorot(rng, hidden, max_window + 1)),
            b6: store.add("gate.b6", filled(&[max_window + 1], 0.0)),
        }
    }
}

/// `s = W6 · relu(W5 · z + b5) + b6` for `z` given as `[1 × 2d]`; returns a
/// vector of length `M + 1`.
pub fn score_windows(tape: &mut Tape<'_>, z: Var, params: &GateParams) -> Result<Var> {
    let h = linear(tape, z, params.w5, params.b5)?;
    let h = tape.relu(h);
    let s = linear(tape, h, params.w6, params.b6)?;
    let n = tape.value(s).len();
    tape.reshape(s, &[n])
}

/// Windows `0..=min(t, M)`.
pub fn feasible_windows(t: usize, max_window: usize) -> Vec<usize> {
    (0..=t.min(max_window)).collect()
}

fn check_feasible(len: usize, feasible: &[usize]) -> Result<()> {
    if feasible.is_empty() {
        return Err(Error::Gate("no feasible window".into()));
    }
    if let Some(&i) = feasible.iter().find(|&&i| i >= len) {
        return Err(Error::Gate(format!("feasible window {i} outside {len} scores")));
    }
    Ok(())
}

/// Feasible windows ordered by descending score, smaller index first on ties.
fn ranked(s: &[f64], feasible: &[usize]) -> Vec<usize> {
    let mut order = feasible.to_vec();
    order.sort_unstable();
    order.dedup();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    order
}

/// The `min(K, |feasible|)` best feasible windows, in index order.
pub fn topk_set(s: &[f64], k: usize, feasible: &[usize]) -> Result<Vec<usize>> {
    check_feasible(s.len(), feasible)?;
    if k == 0 {
        return Err(Error::Gate("K must be at least 1".into()));
    }
    let mut set: Vec<usize> = ranked(s, feasible).into_iter().take(k).collect();
    set.sort_unstable();
    Ok(set)
}

/// 0 on the selected top-K feasible windows, −∞ elsewhere.
pub fn topk_mask(s: &[f64], k: usize, feasible: &[usize]) -> Result<Vec<f64>> {
    let set = topk_set(s, k, feasible)?;
    let mut m = vec![f64::NEG_INFINITY; s.len()];
    for i in set {
        m[i] = 0.0;
    }
    Ok(m)
}

/// Window weights together with the windows whose fields must run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowDistribution {
    pub q: Vec<f64>,
    pub active: Vec<usize>,
}

impl WindowDistribution {
    /// Most heavily weighted active window; ties go to the higher score and
    /// then the smaller index.
    pub fn argmax(&self, s: &[f64]) -> usize {
        let mut best = self.active[0];
        for &i in &self.active[1..] {
            let better = self.q[i] > self.q[best] || (self.q[i] == self.q[best] && s[i] > s[best]);
            if better {
                best = i;
            }
        }
        best
    }

    pub fn one_hot(len: usize, window: usize) -> Self {
        let mut q = vec![0.0; len];
        q[window] = 1.0;
        Self {
            q,
            active: vec![window],
        }
    }
}

fn support_mask(len: usize, set: &[usize]) -> Vec<f64> {
    let mut m = vec![f64::NEG_INFINITY; len];
    for &i in set {
        m[i] = 0.0;
    }
    m
}

fn active_set(mode: GateMode, s: &[f64], k: usize, feasible: &[usize]) -> Result<Vec<usize>> {
    match mode {
        GateMode::TopkSoft | GateMode::TopkHard => topk_set(s, k, feasible),
        GateMode::AllSoft | GateMode::AllHard => {
            check_feasible(s.len(), feasible)?;
            let mut all = feasible.to_vec();
            all.sort_unstable();
            all.dedup();
            Ok(all)
        }
    }
}

/// Turns scores into a window distribution. For `TopkSoft` the supplied mask
/// `m` is used as is; the other modes derive their support from `feasible`.
pub fn normalize(s: &[f64], m: &[f64], mode: GateMode, k: usize, feasible: &[usize]) -> Result<WindowDistribution> {
    if m.len() != s.len() {
        return Err(Error::Shape {
            op: "normalize",
            left: vec![s.len()],
            right: vec![m.len()],
        });
    }
    let active = active_set(mode, s, k, feasible)?;
    let q = match mode {
        GateMode::TopkSoft => {
            let shifted: Vec<f64> = s.iter().zip(m).map(|(a, b)| a + b).collect();
            softmax_vec(&shifted)?
        }
        GateMode::AllSoft => {
            let mask = support_mask(s.len(), &active);
            let shifted: Vec<f64> = s.iter().zip(&mask).map(|(a, b)| a + b).collect();
            softmax_vec(&shifted)?
        }
        GateMode::TopkHard | GateMode::AllHard => {
            let w = 1.0 / active.len() as f64;
            let mut q = vec![0.0; s.len()];
            for &i in &active {
                q[i] = w;
            }
            q
        }
    };
    let active = active.into_iter().filter(|&i| q[i] != 0.0).collect();
    Ok(WindowDistribution { q, active })
}

/// Tape version of [`normalize`] on a score vector `s`. Soft modes keep the
/// gradient through the softmax over the selected scores; hard modes emit
/// constant weights.
pub fn gate_distribution(
    tape: &mut Tape<'_>,
    s: Var,
    mode: GateMode,
    k: usize,
    feasible: &[usize],
) -> Result<(Var, WindowDistribution)> {
    let sv = tape.value(s).data().to_vec();
    let active = active_set(mode, &sv, k, feasible)?;
    let mask = support_mask(sv.len(), &active);
    let dist = normalize(&sv, &mask, mode, k, feasible)?;
    let q = if mode.is_soft() {
        let m = tape.constant(Tensor::vector(mask));
        let shifted = tape.add(s, m)?;
        tape.softmax(shifted)?
    } else {
        tape.constant(Tensor::vector(dist.q.clone()))
    };
    Ok((q, dist))
}

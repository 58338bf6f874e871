use rand::seq::SliceRandom;
use rand::Rng;
use vwerc::autodiff::Tape;
use vwerc::context_fields::{combine, combine_values};
use vwerc::params::ParamStore;
use vwerc::speaker_units::{partition, speaker_unit_forward, UnitParams};
use vwerc::tensor::Tensor;
use vwerc::window_gate::WindowDistribution;

use crate::common::{random_vec, rng};
use crate::Outcome;

const COMBINE_TOL: f64 = 1e-9;
const UNIT_TOL: f64 = 1e-6;
const PARTITION_CASES: usize = 10_000;

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

fn combine_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let windows = r.gen_range(1..=6);
    let c = r.gen_range(2..=7);
    let mut active: Vec<usize> = (0..windows).collect();
    active.shuffle(&mut r);
    active.truncate(r.gen_range(1..=windows));
    active.sort_unstable();
    let mut q = vec![0.0; windows];
    let w = softmax(&random_vec(&mut r, active.len(), 3.0));
    for (&i, &x) in active.iter().zip(&w) {
        q[i] = x;
    }
    let fields: Vec<(usize, Vec<f64>)> = active.iter().map(|&i| (i, softmax(&random_vec(&mut r, c, 3.0)))).collect();
    // brute force: explicit double loop over classes and fields
    let mut want = vec![0.0; c];
    for (class, slot) in want.iter_mut().enumerate() {
        for (i, p) in &fields {
            *slot += q[*i] * p[class];
        }
    }
    let dist = WindowDistribution { q: q.clone(), active };
    let values = combine_values(&dist, &fields).unwrap();
    let mut tape = Tape::new();
    let qv = tape.constant(Tensor::vector(q));
    let fv: Vec<_> = fields.iter().map(|(i, p)| (*i, tape.constant(Tensor::vector(p.clone())))).collect();
    let out = combine(&mut tape, qv, &dist, &fv).unwrap();
    want.iter()
        .zip(&values)
        .zip(tape.value(out).data())
        .map(|((a, b), c)| (a - b).abs().max((a - c).abs()))
        .fold(0.0, f64::max)
}

fn vecmat(x: &[f64], w: &Tensor<f32>, b: &Tensor<f32>) -> Vec<f64> {
    let (rows, cols) = (w.rows(), w.cols());
    (0..cols)
        .map(|j| {
            let mut acc = b.data()[j] as f64;
            for i in 0..rows {
                acc += x[i] * w.data()[i * cols + j] as f64;
            }
            acc
        })
        .collect()
}

/// Scaled dot-product attention written out by hand.
fn unit_oracle(store: &ParamStore, p: &UnitParams, g: &[f64], ctx: &[Vec<f64>], heads: usize) -> Vec<f64> {
    let d = g.len();
    let dh = d / heads;
    let a = &p.attn;
    let mut pre = g.to_vec();
    if !ctx.is_empty() {
        let q = vecmat(g, store.get(a.wq), store.get(a.bq));
        let ks: Vec<Vec<f64>> = ctx.iter().map(|row| vecmat(row, store.get(a.wk), &Tensor::zeros(&[d]))).collect();
        let vs: Vec<Vec<f64>> = ctx.iter().map(|row| vecmat(row, store.get(a.wv), store.get(a.bv))).collect();
        let mut heads_out = vec![0.0; d];
        for h in 0..heads {
            let lo = h * dh;
            let mut scores = Vec::new();
            for k in &ks {
                let mut dot = 0.0;
                for j in lo..lo + dh {
                    dot += q[j] * k[j];
                }
                scores.push(dot / (dh as f64).sqrt());
            }
            let w = softmax(&scores);
            for (wi, v) in w.iter().zip(&vs) {
                for j in lo..lo + dh {
                    heads_out[j] += wi * v[j];
                }
            }
        }
        let c = vecmat(&heads_out, store.get(a.wo), store.get(a.bo));
        for j in 0..d {
            pre[j] += c[j];
        }
    }
    let mean = pre.iter().sum::<f64>() / d as f64;
    let var = pre.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
    let (gamma, beta) = (store.get(p.ln.gamma).data(), store.get(p.ln.beta).data());
    (0..d)
        .map(|j| (pre[j] - mean) / (var + 1e-5).sqrt() * gamma[j] as f64 + beta[j] as f64)
        .collect()
}

fn unit_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d = [2, 4, 6, 8][r.gen_range(0..4)];
    let heads = *[1, 2].choose(&mut r).unwrap();
    let n = r.gen_range(0..=3);
    let mut store = ParamStore::new();
    let p = UnitParams::new(&mut store, "u", d, &mut r);
    for id in store.ids().collect::<Vec<_>>() {
        let shift = random_vec(&mut r, store.get(id).len(), 0.2);
        store.update(id, |v| v.iter_mut().zip(&shift).for_each(|(x, s)| *x += *s as f32));
    }
    let g = random_vec(&mut r, d, 1.0);
    let ctx: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d, 1.0)).collect();
    let want = unit_oracle(&store, &p, &g, &ctx, heads);
    let mut tape = Tape::with_params(&store);
    let gv = tape.constant(Tensor::matrix(1, d, g).unwrap());
    let cv = (n > 0).then(|| tape.constant(Tensor::matrix(n, d, ctx.concat()).unwrap()));
    let o = speaker_unit_forward(&mut tape, gv, cv, &p, heads).unwrap();
    want.iter().zip(tape.value(o).data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn partition_mismatches() -> usize {
    let mut r = rng(99);
    let mut bad = 0;
    for _ in 0..PARTITION_CASES {
        let len = r.gen_range(1..=12);
        let speakers: Vec<u8> = (0..len).map(|_| r.gen_range(0..4)).collect();
        let current = speakers[len - 1];
        let p = partition(&speakers, &current);
        let (mut inner, mut inter) = (Vec::new(), Vec::new());
        for i in 0..len - 1 {
            let mut same = false;
            for j in 0..len {
                if j == len - 1 && speakers[i] == speakers[j] {
                    same = true;
                }
            }
            if same {
                inner.push(i);
            } else {
                inter.push(i);
            }
        }
        if p.inner != inner || p.inter != inter {
            bad += 1;
        }
    }
    bad
}

pub fn run() -> Outcome {
    let combine_err = (0..500).map(combine_case).fold(0.0, f64::max);
    let unit_err = (0..300).map(|s| unit_case(1000 + s)).fold(0.0, f64::max);
    let bad = partition_mismatches();
    let pass = combine_err < COMBINE_TOL && unit_err < UNIT_TOL && bad == 0;
    Outcome::new(
        pass,
        format!(
            "combine max err {combine_err:.1e} (tol {COMBINE_TOL:e}, 500 cases); speaker unit max err {unit_err:.1e} (tol {UNIT_TOL:e}, 300 cases, n<=3, d<=8); partition {bad}/{PARTITION_CASES} mismatches"
        ),
    )
}

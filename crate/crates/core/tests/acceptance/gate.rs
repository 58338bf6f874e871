use rand::Rng;
use vwerc::window_gate::{feasible_windows, normalize, topk_mask, topk_set, GateMode};

use crate::common::{random_vec, rng};
use crate::Outcome;

const VECTORS: usize = 1000;
const SIMPLEX_TOL: f64 = 1e-6;

pub fn run() -> Outcome {
    let mut r = rng(2024);
    let mut problems = Vec::new();
    let mut worst_sum = 0.0f64;
    for n in 0..VECTORS {
        let m = r.gen_range(1..=6);
        let scale = r.gen_range(0.1..20.0);
        let s = random_vec(&mut r, m + 1, scale);
        let k = r.gen_range(1..=m + 1);
        let t = r.gen_range(0..=m + 2);
        let feasible = feasible_windows(t, m);
        let mask = topk_mask(&s, k, &feasible).unwrap();

        for mode in GateMode::ALL {
            let d = normalize(&s, &mask, mode, k, &feasible).unwrap();
            let sum: f64 = d.q.iter().sum();
            worst_sum = worst_sum.max((sum - 1.0).abs());
            if (sum - 1.0).abs() > SIMPLEX_TOL || d.q.iter().any(|&x| x < 0.0) {
                problems.push(format!("vector {n} {mode}: not in simplex"));
            }
            if d.q.iter().enumerate().any(|(i, &x)| x > 0.0 && !feasible.contains(&i)) {
                problems.push(format!("vector {n} {mode}: weight on infeasible window"));
            }
            if matches!(mode, GateMode::TopkSoft | GateMode::TopkHard) && d.active.len() > k {
                problems.push(format!("vector {n} {mode}: support {} > K={k}", d.active.len()));
            }
        }

        let c = r.gen_range(1e-3..1e3);
        let scaled: Vec<f64> = s.iter().map(|x| x * c).collect();
        if topk_set(&s, k, &feasible).unwrap() != topk_set(&scaled, k, &feasible).unwrap() {
            problems.push(format!("vector {n}: top-K set changed under scaling by {c}"));
        }
        let smask = topk_mask(&scaled, k, &feasible).unwrap();
        let a = normalize(&s, &mask, GateMode::TopkSoft, k, &feasible).unwrap();
        let b = normalize(&scaled, &smask, GateMode::TopkSoft, k, &feasible).unwrap();
        if a.argmax(&s) != b.argmax(&scaled) {
            problems.push(format!("vector {n}: argmax of q changed under scaling"));
        }

        let full = topk_mask(&s, m + 1, &feasible).unwrap();
        let topk_all = normalize(&s, &full, GateMode::TopkSoft, m + 1, &feasible).unwrap();
        let all_soft = normalize(&s, &mask, GateMode::AllSoft, k, &feasible).unwrap();
        if topk_all.q != all_soft.q {
            problems.push(format!("vector {n}: AllSoft differs from TopkSoft at K=M+1"));
        }
    }
    let detail = format!(
        "{VECTORS} vectors x 4 modes, max |sum q - 1| = {worst_sum:.1e} (tol {SIMPLEX_TOL:e}), {} violations{}",
        problems.len(),
        problems.first().map(|p| format!(", first: {p}")).unwrap_or_default()
    );
    Outcome::new(problems.is_empty(), detail)
}

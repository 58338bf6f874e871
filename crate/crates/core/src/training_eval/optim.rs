use crate::params::{GradStore, ParamStore};

/// Adam with bias correction. Moments are kept in f64; parameters are
/// written back as f32.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are left alone.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradStore) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            store.update(id, |p| {
                for j in 0..p.len() {
                    m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                    v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                    let delta = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    if delta != 0.0 {
                        p[j] = (p[j] as f64 - delta) as f32;
                    }
                }
            });
        }
    }
}

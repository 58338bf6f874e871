//! Central finite-difference verification of reverse-mode gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{GradStore, ParamId, ParamStore};
use crate::tensor::Tensor;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn scalar_of(tape: &Tape<'_>, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(Error::Shape {
            op: "grad_check",
            left: t.shape().to_vec(),
            right: vec![1],
        });
    }
    Ok(t.item())
}

/// Compares the tape gradient of a scalar function at `x` with central
/// differences of step `h`; returns the largest relative error
/// `|a-n| / max(|a|, |n|, 1e-8)` over coordinates.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let y = f(&mut tape, xv)?;
    scalar_of(&tape, y)?;
    let grads = tape.backward(y, None)?;
    let analytic = grads
        .wrt(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |point: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(point, false);
        let y = f(&mut tape, v)?;
        scalar_of(&tape, y)
    };
    let mut worst = 0.0f64;
    for (j, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[j] += h;
        let mut minus = x.clone();
        minus.data_mut()[j] -= h;
        let n = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(rel_err(a, n));
    }
    Ok(worst)
}

/// Finite-difference check of parameter gradients.
///
/// `f` builds a scalar on a tape bound to `store`. Perturbations are applied
/// to the double-precision mirror only, so stored single-precision values
/// are untouched when the call returns.
pub fn grad_check_params<F>(store: &mut ParamStore, ids: &[ParamId], f: F, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let mut grads = GradStore::new(store);
    {
        let mut tape = Tape::with_params(store);
        let y = f(&mut tape)?;
        scalar_of(&tape, y)?;
        tape.backward(y, Some(&mut grads))?;
    }
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::with_params(store);
        let y = f(&mut tape)?;
        scalar_of(&tape, y)
    };
    let mut worst = 0.0f64;
    for &id in ids {
        let len = store.get(id).len();
        let analytic = grads.get(id).map(<[f64]>::to_vec).unwrap_or(vec![0.0; len]);
        for (j, &a) in analytic.iter().enumerate() {
            let orig = store.get_f64(id).data()[j];
            store.mirror_mut(id).data_mut()[j] = orig + h;
            let fp = eval(store);
            store.mirror_mut(id).data_mut()[j] = orig - h;
            let fm = eval(store);
            store.mirror_mut(id).data_mut()[j] = orig;
            let n = (fp? - fm?) / (2.0 * h);
            worst = worst.max(rel_err(a, n));
        }
    }
    Ok(worst)
}

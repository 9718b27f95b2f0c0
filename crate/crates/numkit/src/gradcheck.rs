//! Central finite-difference gradient checks.
//!
//! The relative error of one coordinate is `|a - n| / max(|a|, |n|, floor)`
//! with `floor = REL_ERR_FLOOR`, so coordinates whose true gradient is ~0
//! are compared on an absolute scale instead of blowing up.

use crate::error::Result;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn scalar_of(tape: &Tape<'_>, v: Var) -> f64 {
    tape.value(v).item()
}

/// Max relative error between the tape gradient of scalar `f` at `x` and
/// central differences `(f(x + eps) - f(x - eps)) / 2eps`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let y = f(&mut tape, xv)?;
    let grads = tape.backward(y)?;
    let analytic = grads
        .grad(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |p: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(p.clone(), false);
        let y = f(&mut t, v)?;
        Ok(scalar_of(&t, y))
    };
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Same check against every scalar of every parameter in `store`.
///
/// `f` builds the scalar loss on a tape bound to the (possibly perturbed) store.
pub fn grad_check_params<F>(store: &mut ParamStore, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::with_params(store);
        let y = f(&mut tape)?;
        let grads = tape.backward(y)?;
        let mut per = vec![Vec::new(); store.len()];
        for (id, g) in grads.param_grads() {
            per[id.index()] = g.to_vec();
        }
        per
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::inference(s);
        let y = f(&mut t)?;
        Ok(scalar_of(&t, y))
    };
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig - eps;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[id.index()].get(i).copied().unwrap_or(0.0);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

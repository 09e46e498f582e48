//! Central-difference verification of reverse-mode gradients.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Error between an analytic and a numeric derivative, relative to the
/// larger of the two magnitudes and 1.
pub fn relative_error(analytic: f32, numeric: f32) -> f32 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn scalar_value(g: &Graph, y: Var) -> Result<f32> {
    let t = g.value(y);
    if t.len() != 1 {
        return Err(Error::dim("finite_difference_check", t.shape(), &[1]));
    }
    let v = t.data()[0];
    if !v.is_finite() {
        return Err(Error::Numerical("objective is not finite".into()));
    }
    Ok(v)
}

/// Compare the reverse-mode gradient of the scalar map `f` at `x` against
/// `(f(x+h) - f(x-h)) / 2h` elementwise and return the worst relative error.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f32) -> Result<f32>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = f(&mut g, xv)?;
    scalar_value(&g, y)?;
    let grads = g.backward(y);
    let zeros = vec![0.0; x.len()];
    let analytic = grads.get(xv).unwrap_or(&zeros).to_vec();

    let eval = |t: Tensor| -> Result<f32> {
        let mut g = Graph::inference();
        let v = g.constant(t);
        let y = f(&mut g, v)?;
        scalar_value(&g, y)
    };
    let mut worst = 0.0f32;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        if !a.is_finite() {
            return Err(Error::Numerical(format!("non-finite gradient at {i}")));
        }
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

/// Same comparison with respect to stored parameters. `f` builds the scalar
/// objective from the store; at most `max_per_param` entries of each
/// parameter are probed (evenly strided).
pub fn finite_difference_check_params<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    f: F,
    h: f32,
    max_per_param: usize,
) -> Result<f32>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let y = f(&mut g, store)?;
    scalar_value(&g, y)?;
    let grads = g.backward(y);
    g.accumulate_into(&grads, store);

    let eval = |s: &ParamStore| -> Result<f32> {
        let mut g = Graph::inference();
        let y = f(&mut g, s)?;
        scalar_value(&g, y)
    };
    let mut worst = 0.0f32;
    for &id in ids {
        let n = store.value(id).len();
        let analytic = match &store.get(id).grad {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; n],
        };
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + h;
            let fp = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - h;
            let fm = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
    }
    store.zero_grads();
    Ok(worst)
}

//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{BoundParams, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::Input(format!(
            "finite-difference step {eps} outside [1e-6, 1e-4]"
        )));
    }
    Ok(())
}

fn eval_scalar<'t>(v: Var<'t>) -> Result<f64> {
    let val = v.value();
    if val.len() != 1 {
        return Err(Error::shape("grad_check", val.shape(), &[1]));
    }
    let s = val.data()[0];
    if !s.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {s}")));
    }
    Ok(s)
}

/// Maximum relative error between the tape gradient of `f` at `x` and a
/// central difference with step `eps`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let errs = grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps)?;
    Ok(errs[0])
}

/// Like [`grad_check`] for several inputs; returns one error per input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    check_eps(eps)?;
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&tape, &vars)?;
        eval_scalar(out)?;
        let grads = tape.backward(out)?;
        vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    };

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        eval_scalar(f(&tape, &vars)?)
    };

    let mut work = inputs.to_vec();
    let mut errors = Vec::with_capacity(inputs.len());
    for (i, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..work[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
        errors.push(worst);
    }
    Ok(errors)
}

/// Checks every tensor in `store`; returns `(name, max_rel_error)` pairs.
pub fn grad_check_params<F>(store: &ParamStore, f: F, eps: f64) -> Result<Vec<(String, f64)>>
where
    F: for<'t> Fn(&'t Tape, &BoundParams<'t>) -> Result<Var<'t>>,
{
    check_eps(eps)?;
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let p = store.bind(&tape, true);
        let out = f(&tape, &p)?;
        eval_scalar(out)?;
        let grads = tape.backward(out)?;
        p.vars().iter().map(|&v| grads.get_or_zeros(v)).collect()
    };

    let eval = |s: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let p = s.bind(&tape, false);
        eval_scalar(f(&tape, &p)?)
    };

    let mut work = store.clone();
    let ids: Vec<_> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for (id, grad) in ids.into_iter().zip(&analytic) {
        let mut worst: f64 = 0.0;
        for j in 0..grad.len() {
            let orig = work.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;
            worst = worst.max(relative_error(grad.data()[j], (up - down) / (2.0 * eps)));
        }
        out.push((store.name(id).to_string(), worst));
    }
    Ok(out)
}

/// Directional variant of [`grad_check_params`].
///
/// For each tensor, draws `directions` random sign vectors `v` and compares
/// `grad · v` against the five-point difference
/// `(8 (f(x + h) - f(x - h)) - (f(x + 2h) - f(x - 2h))) / 12 eps`, `h = eps v`.
/// The fourth-order stencil tolerates a larger `eps`, which keeps rounding
/// noise in `f` small next to directional slopes that are tiny relative to
/// the objective.
pub fn grad_check_params_directional<F>(
    store: &ParamStore,
    f: F,
    eps: f64,
    directions: usize,
    seed: u64,
) -> Result<Vec<(String, f64)>>
where
    F: for<'t> Fn(&'t Tape, &BoundParams<'t>) -> Result<Var<'t>>,
{
    check_eps(eps)?;
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let p = store.bind(&tape, true);
        let out = f(&tape, &p)?;
        eval_scalar(out)?;
        let grads = tape.backward(out)?;
        p.vars().iter().map(|&v| grads.get_or_zeros(v)).collect()
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let p = s.bind(&tape, false);
        eval_scalar(f(&tape, &p)?)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let ids: Vec<_> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for (id, grad) in ids.into_iter().zip(&analytic) {
        let orig = store.get(id).clone();
        let mut worst: f64 = 0.0;
        for _ in 0..directions.max(1) {
            let v: Vec<f64> = (0..orig.len())
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let along = super::tensor::dot(grad.data(), &v);
            let mut shift = |steps: f64| -> Result<f64> {
                let t = work.get_mut(id);
                for ((w, o), d) in t.data_mut().iter_mut().zip(orig.data()).zip(&v) {
                    *w = o + steps * eps * d;
                }
                eval(&work)
            };
            let (p1, m1) = (shift(1.0)?, shift(-1.0)?);
            let (p2, m2) = (shift(2.0)?, shift(-2.0)?);
            // Differencing first keeps a flat objective at exactly zero.
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
            worst = worst.max(relative_error(along, numeric));
        }
        *work.get_mut(id) = orig;
        out.push((store.name(id).to_string(), worst));
    }
    Ok(out)
}

//! Scaled dot-product attention, the guided alignment penalty and the
//! incremental forcing rule used at synthesis time.

use crate::autodiff::{concat, BoundParams, Linear, Tensor, Var};
use crate::error::{Error, Result};

/// Attention weights as an `[N chars × T steps]` matrix.
pub type AlignmentMatrix = Tensor;

/// Half-width of the diagonal band used by [`diagonal_mass`].
pub const DIAGONAL_BAND: f64 = 0.1;

/// `Q = W [dh_prev, ah] + b` for every batch row.
pub fn compute_query<'t>(
    p: &BoundParams<'t>,
    proj: &Linear,
    dh_prev: Var<'t>,
    ah: Var<'t>,
) -> Result<Var<'t>> {
    proj.forward(p, concat(&[dh_prev, ah], 1)?)
}

/// Returns `(context [B × d], weights [B × N])`.
///
/// `keys` and `values` are `[B × N × d]`; `mask` flags real keys.
pub fn attend<'t>(
    query: Var<'t>,
    keys: Var<'t>,
    values: Var<'t>,
    mask: Option<&[bool]>,
) -> Result<(Var<'t>, Var<'t>)> {
    let d = *keys.shape().last().unwrap();
    let weights = keys
        .scores(query)?
        .masked_softmax_rows((d as f64).sqrt(), mask)?;
    Ok((weights.mix(values)?, weights))
}

/// Penalty at normalized offset `x = n/N - t/T`.
pub fn guided_weight(x: f64, g: f64) -> f64 {
    -(-(x * x) / (2.0 * g * g)).exp_m1()
}

/// `W[n, t] = 1 - exp(-(n/N - t/T)^2 / (2 g^2))` with zero-based `n`, `t`.
pub fn guided_mask(n: usize, t: usize, g: f64) -> Tensor {
    let mut w = Tensor::zeros(&[n.max(1), t.max(1)]);
    let (nf, tf) = (n.max(1) as f64, t.max(1) as f64);
    for i in 0..n.max(1) {
        for j in 0..t.max(1) {
            w.set2(i, j, guided_weight(i as f64 / nf - j as f64 / tf, g));
        }
    }
    w
}

/// Batched guided mask laid out as stacked attention rows `[B × T_max × N_max]`.
///
/// Item `b` uses its own `N = chars[b]` and `T = steps[b]`; cells outside
/// that region are zero. Also returns the number of real cells.
pub fn guided_mask_batch(
    chars: &[usize],
    steps: &[usize],
    n_max: usize,
    t_max: usize,
    g: f64,
) -> (Tensor, usize) {
    let bsz = chars.len();
    let mut out = Tensor::zeros(&[bsz, t_max, n_max]);
    let mut count = 0;
    for b in 0..bsz {
        let w = guided_mask(chars[b], steps[b], g);
        for t in 0..steps[b] {
            for n in 0..chars[b] {
                out.data_mut()[(b * t_max + t) * n_max + n] = w.get2(n, t);
            }
        }
        count += chars[b] * steps[b];
    }
    (out, count)
}

/// Mean of `A ⊙ W` over all cells.
pub fn guided_attention_loss(a: &AlignmentMatrix, w: &Tensor) -> Result<f64> {
    if a.shape() != w.shape() {
        return Err(Error::shape("guided_attention_loss", a.shape(), w.shape()));
    }
    let s: f64 = a.data().iter().zip(w.data()).map(|(x, y)| x * y).sum();
    Ok(s / a.len() as f64)
}

/// Outcome of [`force_incremental`].
#[derive(Clone, Debug, PartialEq)]
pub struct Forced {
    pub weights: Vec<f64>,
    pub position: usize,
    pub forced: bool,
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(w: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in w.iter().enumerate() {
        if v > w[best] {
            best = i;
        }
    }
    best
}

/// Keeps the attention column when its peak advances by `0..=3` positions
/// (`1..=3` with `strict_band`); otherwise replaces it with a one-hot at the
/// character after `n_prev`.
pub fn force_incremental(weights: &[f64], n_prev: usize, strict_band: bool) -> Forced {
    let n = weights.len();
    let raw = argmax(weights);
    let lo = if strict_band { 1 } else { 0 };
    let step = raw as i64 - n_prev as i64;
    if (lo..=3).contains(&step) {
        return Forced {
            weights: weights.to_vec(),
            position: raw,
            forced: false,
        };
    }
    let pos = (n_prev + 1).min(n - 1);
    let mut one_hot = vec![0.0; n];
    one_hot[pos] = 1.0;
    Forced {
        weights: one_hot,
        position: pos,
        forced: true,
    }
}

/// Fraction of attention mass with `|n/N - t/T| <= DIAGONAL_BAND`.
pub fn diagonal_mass(a: &AlignmentMatrix) -> f64 {
    let (n, t) = (a.shape()[0], a.shape()[1]);
    let (mut inside, mut total) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..t {
            let v = a.get2(i, j);
            total += v;
            if (i as f64 / n as f64 - j as f64 / t as f64).abs() <= DIAGONAL_BAND + 1e-12 {
                inside += v;
            }
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}

/// Splits stacked attention rows `[B × T_max × N_max]` into per-item
/// `[N × T]` alignments trimmed to real characters and steps.
pub fn unstack_alignments(
    stacked: &Tensor,
    chars: &[usize],
    steps: &[usize],
) -> Vec<AlignmentMatrix> {
    let (t_max, n_max) = (stacked.shape()[1], stacked.shape()[2]);
    chars
        .iter()
        .zip(steps)
        .enumerate()
        .map(|(b, (&n, &t))| {
            let mut a = Tensor::zeros(&[n, t]);
            for j in 0..t {
                for i in 0..n {
                    a.set2(i, j, stacked.data()[(b * t_max + j) * n_max + i]);
                }
            }
            a
        })
        .collect()
}

use rand::Rng;

use super::params::{BoundParams, ParamId, ParamStore};
use super::tape::Var;
use crate::error::Result;

/// Dense layer `y = W x + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), &[out_dim, in_dim], in_dim, rng);
        let bias = store.add_zeros(format!("{name}.bias"), &[out_dim]);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'t>(&self, p: &BoundParams<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.affine(p.var(self.weight), p.var(self.bias))
    }
}

/// Gated recurrent unit.
///
/// Gates are packed `[reset | update | candidate]` along the output axis:
///
/// ```text
/// r  = σ(Wx_r x + bx_r + Wh_r h + bh_r)
/// z  = σ(Wx_z x + bx_z + Wh_z h + bh_z)
/// h~ = tanh(Wx_n x + bx_n + r ⊙ (Wh_n h + bh_n))
/// h' = (1 - z) ⊙ h + z ⊙ h~
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub b_input: ParamId,
    pub b_hidden: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w_input = store.add_uniform(
            format!("{name}.w_input"),
            &[3 * hidden, in_dim],
            in_dim,
            rng,
        );
        let w_hidden = store.add_uniform(
            format!("{name}.w_hidden"),
            &[3 * hidden, hidden],
            hidden,
            rng,
        );
        let b_input = store.add_zeros(format!("{name}.b_input"), &[3 * hidden]);
        let b_hidden = store.add_zeros(format!("{name}.b_hidden"), &[3 * hidden]);
        Self {
            w_input,
            w_hidden,
            b_input,
            b_hidden,
            in_dim,
            hidden,
        }
    }

    /// One step: `x` is `[B × in]`, `h` is `[B × hidden]`.
    pub fn forward<'t>(&self, p: &BoundParams<'t>, x: Var<'t>, h: Var<'t>) -> Result<Var<'t>> {
        let d = self.hidden;
        let gx = x.affine(p.var(self.w_input), p.var(self.b_input))?;
        let gh = h.affine(p.var(self.w_hidden), p.var(self.b_hidden))?;
        let r = gx.slice(1, 0, d)?.add(gh.slice(1, 0, d)?)?.sigmoid();
        let z = gx.slice(1, d, d)?.add(gh.slice(1, d, d)?)?.sigmoid();
        let cand = gx
            .slice(1, 2 * d, d)?
            .add(r.mul(gh.slice(1, 2 * d, d)?)?)?
            .tanh();
        // h + z ⊙ (h~ - h)
        h.add(z.mul(cand.sub(h)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gru_halves_previous_state() {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "g", 3, 4, &mut ChaCha8Rng::seed_from_u64(0));
        for t in store.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = tape.constant(Tensor::row(&[1.0, -2.0, 0.5]));
        let h = tape.constant(Tensor::row(&[0.2, -0.4, 1.0, 3.0]));
        let out = cell.forward(&p, x, h).unwrap().value();
        assert_eq!(out.data(), &[0.1, -0.2, 0.5, 1.5]);
    }

    #[test]
    fn saturated_update_gate_gives_candidate() {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "g", 2, 2, &mut ChaCha8Rng::seed_from_u64(3));
        // Push the update-gate bias far positive so z == 1 in floating point.
        let b = store.get_mut(cell.b_input);
        b.data_mut()[2] = 60.0;
        b.data_mut()[3] = 60.0;
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = tape.constant(Tensor::row(&[0.7, -0.3]));
        let h0 = tape.constant(Tensor::zeros(&[1, 2]));
        let h = cell.forward(&p, x, h0).unwrap().value();

        // Candidate with h = 0: tanh(Wx_n x + bx_n + r ⊙ bh_n), bh_n = 0.
        let w = store.get(cell.w_input);
        let expect: Vec<f64> = (4..6)
            .map(|row| (w.get2(row, 0) * 0.7 + w.get2(row, 1) * -0.3).tanh())
            .collect();
        assert!((h.data()[0] - expect[0]).abs() < 1e-15);
        assert!((h.data()[1] - expect[1]).abs() < 1e-15);
    }
}

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Number of applied updates.
    pub t: u64,
}

/// What [`Adam::step`] did with a gradient set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    /// Update applied; carries the pre-clipping global norm.
    Applied { grad_norm: f64 },
    /// A gradient entry was NaN or infinite; nothing changed.
    Skipped,
}

/// Global L2 norm over every gradient tensor.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Clips `grads` to global norm `clip`, then applies one update.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &[Tensor],
        clip: f64,
    ) -> Result<StepOutcome> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::shape("adam", &[self.m.len()], &[grads.len()]));
        }
        for (g, m) in grads.iter().zip(&self.m) {
            if g.shape() != m.shape() {
                return Err(Error::shape("adam", m.shape(), g.shape()));
            }
        }
        let norm = global_norm(grads);
        if !norm.is_finite() {
            return Ok(StepOutcome::Skipped);
        }
        let scale = if norm > clip { clip / norm } else { 1.0 };
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let p = &mut params.tensors_mut()[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((pj, mj), vj), &gj) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                let gj = gj * scale;
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let m_hat = *mj / c1;
                let v_hat = *vj / c2;
                *pj -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(StepOutcome::Applied { grad_norm: norm })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::row(v));
        s
    }

    #[test]
    fn zero_gradient_keeps_momentum() {
        let mut p = one(&[1.0, -2.0]);
        let mut opt = Adam::new(&p, 0.1);
        opt.step(&mut p, &[Tensor::row(&[0.5, 0.5])], 10.0).unwrap();
        let (m1, v1, before) = (opt.m[0].clone(), opt.v[0].clone(), p.tensors()[0].clone());
        opt.step(&mut p, &[Tensor::row(&[0.0, 0.0])], 10.0).unwrap();
        for j in 0..2 {
            let m = 0.9 * m1.data()[j];
            let v = 0.999 * v1.data()[j];
            assert!((opt.m[0].data()[j] - m).abs() < 1e-15);
            let m_hat = m / (1.0 - 0.9f64.powi(2));
            let v_hat = v / (1.0 - 0.999f64.powi(2));
            let want = before.data()[j] - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
            assert!((p.tensors()[0].data()[j] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = one(&[0.0, 0.0, 0.0]);
        let mut opt = Adam::new(&p, 1e-3);
        opt.step(&mut p, &[Tensor::row(&[0.3, -0.02, 0.0])], 10.0)
            .unwrap();
        let d = p.tensors()[0].data();
        // |update| = lr * |g| / (|g| + eps)
        assert!((d[0] + 1e-3 * 0.3 / (0.3 + 1e-8)).abs() < 1e-15);
        assert!((d[1] - 1e-3 * 0.02 / (0.02 + 1e-8)).abs() < 1e-15);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn constant_gradient_converges_to_lr_sign() {
        let mut p = one(&[0.0]);
        let mut opt = Adam::new(&p, 0.01);
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p.tensors()[0].data()[0];
            opt.step(&mut p, &[Tensor::row(&[-0.7])], 10.0).unwrap();
            last = p.tensors()[0].data()[0] - before;
        }
        assert!((last - 0.01).abs() < 1e-8, "{last}");
    }

    #[test]
    fn clipping_and_non_finite() {
        let mut p = one(&[0.0, 0.0]);
        let mut opt = Adam::new(&p, 0.1);
        assert_eq!(
            opt.step(&mut p, &[Tensor::row(&[3.0, 4.0])], 1.0).unwrap(),
            StepOutcome::Applied { grad_norm: 5.0 }
        );
        // clipped first moment: 0.1 * (0.6, 0.8)
        assert!((opt.m[0].data()[0] - 0.06).abs() < 1e-15);
        let before = (p.clone(), opt.clone());
        assert_eq!(
            opt.step(&mut p, &[Tensor::row(&[f64::NAN, 1.0])], 1.0)
                .unwrap(),
            StepOutcome::Skipped
        );
        assert_eq!((p, opt), before);
    }
}

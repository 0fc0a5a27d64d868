//! Per-peer optimizers: plain SGD, Adam and AdamW (decoupled weight decay).

use alloc::vec::Vec;

use crate::config::OptimizerKind;
use crate::error::{Error, Result};
use crate::model::{Gradients, Model};
use crate::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const ADAMW_WEIGHT_DECAY: f64 = 0.01;

/// `θ ← θ − η·g`, elementwise.
pub fn sgd_step<S: Scalar>(params: &mut [S], grads: &[S], lr: S) {
    assert_eq!(params.len(), grads.len(), "sgd_step: shape mismatch");
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<S> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// First and second moments, shaped like the parameters; empty for SGD.
    pub first_moment: Vec<Vec<S>>,
    pub second_moment: Vec<Vec<S>>,
    pub step_count: u64,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, model: &Model<S>) -> Self {
        let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        let zeros = || -> Vec<Vec<S>> {
            match kind {
                OptimizerKind::Sgd => Vec::new(),
                _ => shapes.iter().map(|&n| alloc::vec![S::zero(); n]).collect(),
            }
        };
        Self {
            kind,
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            weight_decay: if kind == OptimizerKind::Adamw { ADAMW_WEIGHT_DECAY } else { 0.0 },
            first_moment: zeros(),
            second_moment: zeros(),
            step_count: 0,
        }
    }

    /// Applies one update to `model` and increments the step counter.
    pub fn step(&mut self, model: &mut Model<S>, grads: &Gradients<S>) -> Result<()> {
        let mut params = model.params_mut();
        if params.len() != grads.tensors.len()
            || params.iter().zip(&grads.tensors).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::Shape("gradients do not match parameters".into()));
        }
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = S::from_f64(self.learning_rate);
                for (p, g) in params.iter_mut().zip(&grads.tensors) {
                    sgd_step(p, g, lr);
                }
            }
            OptimizerKind::Adam | OptimizerKind::Adamw => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
                let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
                let (b1, b2) = (S::from_f64(self.beta1), S::from_f64(self.beta2));
                let (one_b1, one_b2) = (S::from_f64(1.0 - self.beta1), S::from_f64(1.0 - self.beta2));
                let step_size = S::from_f64(self.learning_rate / bc1);
                let inv_sqrt_bc2 = S::from_f64(1.0 / libm::sqrt(bc2));
                let eps = S::from_f64(self.eps);
                let decay = S::one() - S::from_f64(self.learning_rate * self.weight_decay);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(&grads.tensors)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        if self.weight_decay != 0.0 {
                            *p *= decay;
                        }
                        *m = b1 * *m + one_b1 * g;
                        *v = b2 * *v + one_b2 * g * g;
                        *p -= step_size * *m / ((*v).sqrt() * inv_sqrt_bc2 + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ArchId;
    use alloc::vec;

    #[test]
    fn sgd_arithmetic() {
        let mut p = [1.0f64];
        sgd_step(&mut p, &[0.5], 0.1);
        assert!((p[0] - 0.95).abs() < 1e-15);
        let mut q = [1.0f64, -2.0];
        sgd_step(&mut q, &[3.0, 4.0], 0.0);
        assert_eq!(q, [1.0, -2.0]);
    }

    fn grads_like(m: &Model<f64>, v: f64) -> Gradients<f64> {
        Gradients { tensors: m.params().iter().map(|p| vec![v; p.len()]).collect() }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut m = Model::<f64>::init(ArchId::SimpleCnn, 1);
        let before = m.params()[0][0];
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 1e-3, &m);
        let g = grads_like(&m, 0.5);
        opt.step(&mut m, &g).unwrap();
        // m̂ = g, v̂ = g², so the step is lr · g/(|g| + ε).
        let expected = before - 1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((m.params()[0][0] - expected).abs() < 1e-15);
        assert_eq!(opt.step_count, 1);
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        for kind in OptimizerKind::ALL {
            let mut m = Model::<f64>::init(ArchId::SimpleCnn, 2);
            let before = m.clone();
            let mut opt = OptimizerState::new(*kind, 0.0, &m);
            let g = grads_like(&m, 0.3);
        opt.step(&mut m, &g).unwrap();
            assert_eq!(m, before, "{kind}");
            if *kind != OptimizerKind::Sgd {
                assert!(opt.first_moment[0].iter().all(|&x| x != 0.0));
            }
        }
    }

    #[test]
    fn adamw_decays_weights() {
        let mut m = Model::<f64>::init(ArchId::SimpleCnn, 1);
        let w0 = m.params()[0][0];
        let mut opt = OptimizerState::new(OptimizerKind::Adamw, 1e-2, &m);
        let g = grads_like(&m, 0.0);
        opt.step(&mut m, &g).unwrap();
        assert!((m.params()[0][0] - w0 * (1.0 - 1e-4)).abs() < 1e-15);
    }
}

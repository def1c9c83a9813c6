//! Adam with bias correction, over an explicit parameter list.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Optimizer hyperparameters. The learning-rate default matches the
/// training configuration used throughout the pipeline.
#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { learning_rate: 0.01, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment buffers plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    hyper: AdamParams,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    /// Creates zeroed moment buffers matching the given parameter shapes.
    pub fn new(hyper: AdamParams, params: &[&Tensor]) -> Self {
        let first = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        let second = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        AdamState { hyper, first, second, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, i: usize) -> (&Tensor, &Tensor) {
        (&self.first[i], &self.second[i])
    }

    /// One bias-corrected update. Deterministic given parameters, gradients
    /// and state.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::contract(format!(
                "adam_step over {} parameters, state holds {}",
                params.len(),
                self.first.len()
            )));
        }
        for ((p, g), (m, v)) in params
            .iter()
            .zip(grads)
            .zip(self.first.iter().zip(&self.second))
        {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            debug_assert_eq!(p.shape(), m.shape());
            debug_assert_eq!(p.shape(), v.shape());
        }

        self.step += 1;
        let AdamParams { learning_rate, beta1, beta2, epsilon } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);

        for i in 0..params.len() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let g = grads[i].data();
            let p = params[i].data_mut();
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::from_vec(2, 2, vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        let orig = p.clone();
        let mut state = AdamState::new(AdamParams::default(), &[&p]);
        let g = Tensor::zeros(2, 2);
        state.step(&mut [&mut p], &[g]).unwrap();
        assert_eq!(p, orig);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_roughly_the_learning_rate() {
        // Hand evaluation of step 1 with g = 1: m_hat = 1, v_hat = 1,
        // update = lr / (1 + eps).
        let mut p = Tensor::from_vec(1, 1, vec![0.5]).unwrap();
        let mut state = AdamState::new(AdamParams::default(), &[&p]);
        let g = Tensor::from_vec(1, 1, vec![1.0]).unwrap();
        state.step(&mut [&mut p], &[g]).unwrap();
        let moved = 0.5 - p.data()[0];
        assert!((moved - 0.01).abs() < 1e-9, "step was {moved}");
    }

    #[test]
    fn two_steps_with_constant_gradient_match_closed_form_ema() {
        // m_t = c (1 - beta1^t), v_t = c^2 (1 - beta2^t) for constant gradient c.
        let c = -0.3;
        let mut p = Tensor::from_vec(1, 1, vec![1.0]).unwrap();
        let hyper = AdamParams::default();
        let mut state = AdamState::new(hyper, &[&p]);
        let g = Tensor::from_vec(1, 1, vec![c]).unwrap();
        state.step(&mut [&mut p], &[g.clone()]).unwrap();
        state.step(&mut [&mut p], &[g]).unwrap();
        assert_eq!(state.step_count(), 2);
        let (m, v) = state.moments(0);
        let m_expect = c * (1.0 - hyper.beta1.powi(2));
        let v_expect = c * c * (1.0 - hyper.beta2.powi(2));
        assert!((m.data()[0] - m_expect).abs() < 1e-15);
        assert!((v.data()[0] - v_expect).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::zeros(2, 2);
        let mut state = AdamState::new(AdamParams::default(), &[&p]);
        let g = Tensor::zeros(2, 3);
        assert!(state.step(&mut [&mut p], &[g]).is_err());
    }
}

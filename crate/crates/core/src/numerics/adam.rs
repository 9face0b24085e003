use super::params::ParamSet;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Adam hyperparameters. Defaults follow the training setup used throughout:
/// beta1 = 0.9, beta2 = 0.98, epsilon = 1e-9.
#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
            learning_rate: 1e-3,
        }
    }
}

/// Per-parameter Adam state.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub m: Tensor<S>,
    pub v: Tensor<S>,
    pub step_count: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn zeros_like(t: &Tensor<S>) -> Self {
        AdamState {
            m: Tensor::zeros(t.shape()),
            v: Tensor::zeros(t.shape()),
            step_count: 0,
        }
    }
}

/// Adam optimizer over a subset of parameter slots (the stage's trainable
/// set). Parameters outside the set are never touched.
#[derive(Clone, Debug)]
pub struct AdamOptimizer<S> {
    pub hyper: AdamHyper,
    /// (slot, state) pairs in slot order.
    pub states: Vec<(usize, AdamState<S>)>,
}

impl<S: Scalar> AdamOptimizer<S> {
    pub fn new(hyper: AdamHyper, params: &ParamSet<S>, slots: &[usize]) -> Self {
        let states = slots
            .iter()
            .map(|&s| (s, AdamState::zeros_like(&params.by_slot(s).value)))
            .collect();
        AdamOptimizer { hyper, states }
    }

    /// One Adam update with bias correction. Gradients are read, not zeroed;
    /// the caller owns grad lifecycle. `lr` overrides the stored rate so
    /// warmup schedules can vary it per step.
    pub fn step(&mut self, params: &mut ParamSet<S>, lr: f64) -> Result<()> {
        let b1 = S::from_f64(self.hyper.beta1);
        let b2 = S::from_f64(self.hyper.beta2);
        let eps = S::from_f64(self.hyper.epsilon);
        let one = S::one();
        for (slot, state) in self.states.iter_mut() {
            let p = params.by_slot_mut(*slot);
            if !p.value.same_shape(&state.m) {
                return Err(Error::State(format!(
                    "adam state shape drift for {}: param {:?} vs state {:?}",
                    p.name,
                    p.value.shape(),
                    state.m.shape()
                )));
            }
            state.step_count += 1;
            let t = state.step_count as i32;
            let bc1 = S::from_f64(1.0 - self.hyper.beta1.powi(t));
            let bc2 = S::from_f64(1.0 - self.hyper.beta2.powi(t));
            let lr_s = S::from_f64(lr);
            let md = state.m.data_mut();
            let vd = state.v.data_mut();
            let gd = p.grad.data();
            let xd = p.value.data_mut();
            for i in 0..gd.len() {
                let g = gd[i];
                md[i] = b1 * md[i] + (one - b1) * g;
                vd[i] = b2 * vd[i] + (one - b2) * g * g;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                xd[i] = xd[i] - lr_s * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(values: &[f64], grads: &[f64]) -> (ParamSet<f64>, AdamOptimizer<f64>) {
        let mut ps = ParamSet::new();
        let slot = ps
            .register("w", Tensor::new(vec![1, values.len()], values.to_vec()).unwrap())
            .unwrap();
        ps.by_slot_mut(slot)
            .grad
            .data_mut()
            .copy_from_slice(grads);
        let opt = AdamOptimizer::new(AdamHyper::default(), &ps, &[slot]);
        (ps, opt)
    }

    #[test]
    fn zero_grad_from_fresh_state_is_noop() {
        let (mut ps, mut opt) = setup(&[1.5, -2.0], &[0.0, 0.0]);
        opt.step(&mut ps, 1e-3).unwrap();
        assert_eq!(ps.get("w").unwrap().value.data(), &[1.5, -2.0]);
        assert_eq!(opt.states[0].1.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // After bias correction at t=1, |Δ| ≈ lr regardless of |g|.
        for &g in &[1e-4, 1.0, 250.0] {
            let (mut ps, mut opt) = setup(&[0.0], &[g]);
            opt.step(&mut ps, 1e-3).unwrap();
            let delta = ps.get("w").unwrap().value.item();
            assert!(delta < 0.0, "moves against the gradient");
            assert!((delta.abs() - 1e-3).abs() < 1e-5, "got {delta}");
        }
    }

    #[test]
    fn identical_grads_identical_updates() {
        let (mut ps, mut opt) = setup(&[0.3, 0.3], &[0.7, 0.7]);
        opt.step(&mut ps, 1e-3).unwrap();
        let w = ps.get("w").unwrap().value.clone();
        assert_eq!(w.data()[0], w.data()[1]);
    }

    #[test]
    fn grads_left_untouched_by_step() {
        let (mut ps, mut opt) = setup(&[0.0], &[0.7]);
        opt.step(&mut ps, 1e-3).unwrap();
        assert_eq!(ps.get("w").unwrap().grad.item(), 0.7);
    }
}

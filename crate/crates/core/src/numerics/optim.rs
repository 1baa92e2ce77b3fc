//! Adam with bias correction, plus plateau/early-stopping control.

use std::collections::BTreeMap;

use super::{ParamKind, Parameterized, Tensor};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment estimates for a single parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    name: &str,
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{name}: params {} grads {} state {}",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient of {name}[{i}] at optimizer step {} is {}",
            state.t + 1,
            grads[i]
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *p -= lr * mh / (vh.sqrt() + state.eps);
    }
    Ok(())
}

/// Adam over every trainable tensor of a model, keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    states: BTreeMap<String, AdamState>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            states: BTreeMap::new(),
        }
    }

    /// Applies accumulated gradients, then clears them.
    pub fn step(&mut self, model: &mut dyn ParamsDyn) -> Result<()> {
        let lr = self.lr;
        for p in model.params_dyn() {
            if p.kind != ParamKind::Trainable {
                continue;
            }
            let tensor: &mut Tensor = p.tensor;
            let n = tensor.len();
            let state = self
                .states
                .entry(p.name.clone())
                .or_insert_with(|| AdamState::new(n));
            let grad = match tensor.grad() {
                Some(g) => g.to_vec(),
                None => continue,
            };
            adam_step(&p.name, tensor.data_mut(), &grad, state, lr)?;
            tensor.zero_grad();
        }
        Ok(())
    }
}

/// Object-safe view of [`Parameterized`] for the optimizer.
pub trait ParamsDyn {
    fn params_dyn(&mut self) -> Vec<super::ParamMut<'_>>;
}

impl<T: Parameterized> ParamsDyn for T {
    fn params_dyn(&mut self) -> Vec<super::ParamMut<'_>> {
        self.named_params_mut()
    }
}

pub const PLATEAU_FACTOR: f64 = 0.5;
pub const PLATEAU_PATIENCE: usize = 5;
pub const EARLY_STOP_PATIENCE: usize = 10;
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-4;

/// Learning-rate reduction on plateau and early stopping, driven by the
/// same improvement signal but counted independently.
#[derive(Debug, Clone)]
pub struct SchedulerState {
    pub lr: f64,
    pub best: f64,
    pub plateau_wait: usize,
    pub stop_wait: usize,
    pub factor: f64,
    pub plateau_patience: usize,
    pub stop_patience: usize,
    pub min_lr: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerDecision {
    pub lr: f64,
    pub stop: bool,
    pub improved: bool,
}

impl SchedulerState {
    pub fn new(lr: f64) -> Self {
        SchedulerState {
            lr,
            best: f64::INFINITY,
            plateau_wait: 0,
            stop_wait: 0,
            factor: PLATEAU_FACTOR,
            plateau_patience: PLATEAU_PATIENCE,
            stop_patience: EARLY_STOP_PATIENCE,
            min_lr: 1e-7,
            threshold: IMPROVEMENT_THRESHOLD,
        }
    }

    pub fn step(&mut self, val_loss: f64) -> SchedulerDecision {
        let improved = val_loss < self.best - self.threshold;
        if improved {
            self.best = val_loss;
            self.plateau_wait = 0;
            self.stop_wait = 0;
        } else {
            self.plateau_wait += 1;
            self.stop_wait += 1;
            if self.plateau_wait >= self.plateau_patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.plateau_wait = 0;
            }
        }
        SchedulerDecision {
            lr: self.lr,
            stop: self.stop_wait >= self.stop_patience,
            improved,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = [0.0];
        let mut s = AdamState::new(1);
        adam_step("w", &mut p, &[1.0], &mut s, 1e-4).unwrap();
        assert!((p[0].abs() - 1e-4 / (1.0 + 1e-8)).abs() < 1e-18);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = [0.3, -1.2, 4.0];
        let before = p;
        let mut s = AdamState::new(3);
        for _ in 0..5 {
            adam_step("w", &mut p, &[0.0; 3], &mut s, 1e-3).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn three_steps_match_scalar_recurrence() {
        let grads = [0.5, -1.5, 2.0];
        let lr = 1e-2;
        let mut p = [1.0];
        let mut s = AdamState::new(1);
        let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (k, g) in grads.iter().enumerate() {
            adam_step("w", &mut p, &[*g], &mut s, lr).unwrap();
            let t = (k + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            theta -= lr * mh / (vh.sqrt() + 1e-8);
            assert!((p[0] - theta).abs() < 1e-14);
        }
        assert!(s.v.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn non_finite_gradient_names_parameter_and_step() {
        let mut p = [0.0];
        let mut s = AdamState::new(1);
        let err = adam_step("enc.w", &mut p, &[f64::NAN], &mut s, 1e-3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("enc.w") && msg.contains("step 1"), "{msg}");
    }

    #[test]
    fn plateau_halves_after_five_and_stops_after_ten() {
        let mut s = SchedulerState::new(1e-4);
        assert!(s.step(1.0).improved);
        for k in 1..=5 {
            let d = s.step(1.0);
            if k < 5 {
                assert_eq!(d.lr, 1e-4);
            } else {
                assert_eq!(d.lr, 5e-5);
            }
            assert!(!d.stop);
        }
        for k in 6..=10 {
            let d = s.step(1.0);
            assert_eq!(d.stop, k == 10);
        }
    }

    #[test]
    fn steady_improvement_never_reduces_or_stops() {
        let mut s = SchedulerState::new(1e-4);
        for e in 0..100 {
            let d = s.step(10.0 - 0.01 * e as f64);
            assert_eq!(d.lr, 1e-4);
            assert!(!d.stop);
        }
    }

    #[test]
    fn improvement_must_exceed_threshold() {
        let mut s = SchedulerState::new(1e-4);
        s.step(1.0);
        assert!(!s.step(1.0 - 5e-5).improved);
        assert!(s.step(1.0 - 2e-4).improved);
    }
}

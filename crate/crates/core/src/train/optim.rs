//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

pub const DEFAULT_WEIGHT_DECAY: f64 = 0.01;

impl OptimizerHyper {
    pub fn new(learning_rate: f64) -> Self {
        OptimizerHyper {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: DEFAULT_WEIGHT_DECAY,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        Ok(())
    }
}

/// Step count and moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState<T> {
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

/// A parameter tensor handed to the optimizer.
pub struct ParamSlot<'a, T> {
    pub name: String,
    pub value: &'a mut [T],
    /// Whether decoupled weight decay applies (false for biases and norms).
    pub decay: bool,
}

/// One AdamW update:
///
/// ```text
/// m ← β1·m + (1−β1)·g
/// v ← β2·v + (1−β2)·g²
/// θ ← θ·(1 − lr·λ) − lr · m̂ / (√v̂ + ε)      m̂ = m/(1−β1ᵗ), v̂ = v/(1−β2ᵗ)
/// ```
///
/// Decay multiplies θ directly and never enters the moments. State buffers are
/// allocated on the first step. Gradients are checked for finiteness before
/// anything is modified.
pub fn adamw_step<T: Real>(
    params: &mut [ParamSlot<'_, T>],
    grads: &[&[T]],
    state: &mut OptimizerState<T>,
    hyper: &OptimizerHyper,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameter tensors but {} gradient tensors",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.len() != g.len() {
            return Err(Error::ShapeMismatch {
                tensor: p.name.clone(),
                expected: vec![p.value.len()],
                found: vec![g.len()],
            });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value.len()) {
        return Err(Error::InvalidArgument("optimizer state does not match the parameter set".into()));
    }

    state.t += 1;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let (b1, b2) = (T::of(hyper.beta1), T::of(hyper.beta2));
    let one = T::one();
    let lr = T::of(hyper.learning_rate);
    let eps = T::of(hyper.epsilon);
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let decay = if p.decay { one - lr * T::of(hyper.weight_decay) } else { one };
        for i in 0..g.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.value[i] = p.value[i] * decay - lr * (m_hat / (v_hat.sqrt() + eps));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(theta: &mut [f64], g: &[f64], decay: bool, hyper: &OptimizerHyper, st: &mut OptimizerState<f64>) -> Result<()> {
        let mut slots = [ParamSlot {
            name: "w".into(),
            value: theta,
            decay,
        }];
        adamw_step(&mut slots, &[g], st, hyper)
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut theta = vec![0.3, -1.7, 2.5];
        let before = theta.clone();
        let h = OptimizerHyper::new(0.1).with_weight_decay(0.0);
        step(&mut theta, &[0.0; 3], true, &h, &mut OptimizerState::default()).unwrap();
        assert_eq!(theta, before);
    }

    #[test]
    fn zero_gradient_pure_decay() {
        let mut theta = vec![0.3, -1.7, 2.5];
        let before = theta.clone();
        let h = OptimizerHyper::new(0.1).with_weight_decay(0.01);
        step(&mut theta, &[0.0; 3], true, &h, &mut OptimizerState::default()).unwrap();
        for (a, b) in theta.iter().zip(before) {
            assert_eq!(*a, b * (1.0 - 0.1 * 0.01));
        }
    }

    #[test]
    fn bias_slots_skip_decay() {
        let mut theta = vec![2.0];
        let h = OptimizerHyper::new(0.1).with_weight_decay(0.5);
        step(&mut theta, &[0.0], false, &h, &mut OptimizerState::default()).unwrap();
        assert_eq!(theta, vec![2.0]);
    }

    #[test]
    fn scalar_first_step() {
        let mut theta = vec![1.0];
        let mut st = OptimizerState::default();
        let h = OptimizerHyper::new(0.1).with_weight_decay(0.0);
        step(&mut theta, &[1.0], true, &h, &mut st).unwrap();
        assert!((st.m[0][0] - 0.1).abs() < 1e-15);
        assert!((st.v[0][0] - 0.001).abs() < 1e-15);
        assert!((theta[0] - (1.0 - 0.1 * (1.0 / (1.0 + 1e-8)))).abs() < 1e-12);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn non_finite_gradient_named_and_nothing_changes() {
        let mut theta = vec![1.0, 2.0];
        let mut st = OptimizerState::default();
        let err = step(&mut theta, &[0.5, f64::NAN], true, &OptimizerHyper::new(0.1), &mut st).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(theta, vec![1.0, 2.0]);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn hyper_validation() {
        assert!(OptimizerHyper::new(0.0).validate().is_err());
        assert!(OptimizerHyper::new(1e-3).with_weight_decay(-1.0).validate().is_err());
        assert!(OptimizerHyper::new(5e-5).validate().is_ok());
    }
}

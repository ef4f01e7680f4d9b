use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::graph::GradMap;
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Adam moments and hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    /// Number of updates applied (bias-correction exponent).
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments for every trainable parameter of `store`.
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        Self::with_betas(store, lr, 0.9, 0.999, 1e-8).expect("default betas are valid")
    }

    pub fn with_betas(store: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(0.0 < beta1 && beta1 < 1.0 && 0.0 < beta2 && beta2 < 1.0) {
            return Err(Error::InvalidArgument(format!("Adam betas ({beta1}, {beta2}) must lie in (0, 1)")));
        }
        let zeros: BTreeMap<String, Tensor<T>> = store
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
            .collect();
        Ok(Self { m: zeros.clone(), v: zeros, beta1, beta2, eps, lr, t: 0 })
    }
}

/// One bias-corrected Adam update of every trainable parameter.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, grads: &GradMap<T>, state: &mut AdamState<T>) -> Result<()> {
    for (name, p) in store.iter() {
        if !p.requires_grad() {
            continue;
        }
        let g = grads.get(name).ok_or_else(|| Error::MissingGradient(name.clone()))?;
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!("gradient for `{name}` has shape {:?}", g.shape())));
        }
    }
    state.t += 1;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let bc1 = T::lit(1.0 - state.beta1.powi(state.t as i32));
    let bc2 = T::lit(1.0 - state.beta2.powi(state.t as i32));
    let lr = T::lit(state.lr);
    let eps = T::lit(state.eps);
    for (name, p) in store.iter_mut() {
        if !p.requires_grad() {
            continue;
        }
        let g = &grads[name];
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    store.bump_step();
    Ok(())
}

/// Step decay: `base_lr` times 0.1 for each completed third of training.
pub fn step_lr(step: u64, total_steps: u64, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidArgument("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::OutOfRange(format!("step {step} beyond total {total_steps}")));
    }
    let segment = (3 * step / total_steps).min(2);
    Ok(base_lr * 0.1f64.powi(segment as i32))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(values: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(values).with_requires_grad(true)).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = one_param(vec![1.0, -2.0, 0.5]);
        let mut state = AdamState::new(&store, 1e-3);
        let mut grads = GradMap::new();
        grads.insert("w".into(), Tensor::from_vec(vec![0.3, -7.0, 2.0]));
        adam_step(&mut store, &grads, &mut state).unwrap();
        let w = store.get("w").unwrap().data();
        // m̂/√v̂ = sign(g) on step one, up to ε.
        for (after, (before, g)) in w.iter().zip([(1.0, 0.3), (-2.0, -7.0), (0.5, 2.0)]) {
            let expected = before - 1e-3 * f64::signum(g);
            assert!((after - expected).abs() < 1e-9, "{after} vs {expected}");
        }
        assert_eq!(store.step(), 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut store = one_param(vec![1.0, 2.0]);
        let before = store.clone();
        let mut state = AdamState::new(&store, 1e-3);
        let mut grads = GradMap::new();
        grads.insert("w".into(), Tensor::zeros(vec![2]));
        adam_step(&mut store, &grads, &mut state).unwrap();
        assert_eq!(store.get("w"), before.get("w"));
        assert!(state.m["w"].data().iter().all(|&v| v == 0.0));
        assert!(state.v["w"].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = one_param(vec![1.0]);
        let mut state = AdamState::new(&store, 1e-3);
        assert!(matches!(
            adam_step(&mut store, &GradMap::new(), &mut state),
            Err(Error::MissingGradient(_))
        ));
    }

    #[test]
    fn invalid_betas_rejected() {
        let store = one_param(vec![1.0]);
        assert!(AdamState::with_betas(&store, 1e-3, 1.0, 0.999, 1e-8).is_err());
        assert!(AdamState::with_betas(&store, 1e-3, 0.9, 0.0, 1e-8).is_err());
    }

    #[test]
    fn learning_rate_thirds() {
        assert_eq!(step_lr(0, 900, 1e-3).unwrap(), 1e-3);
        assert!((step_lr(300, 900, 1e-3).unwrap() - 1e-4).abs() < 1e-18);
        assert!((step_lr(600, 900, 1e-3).unwrap() - 1e-5).abs() < 1e-18);
        assert!((step_lr(900, 900, 1e-3).unwrap() - 1e-5).abs() < 1e-18);
        assert!((step_lr(299, 900, 1e-3).unwrap() - 1e-3).abs() < 1e-18);
        assert!(step_lr(0, 0, 1e-3).is_err());
        assert!(step_lr(901, 900, 1e-3).is_err());
    }
}

use std::collections::HashMap;

use crate::error::{NumError, Result};
use crate::tape::Gradients;
use crate::tensor::Tensor;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Tensor,
    grad: Option<Vec<f64>>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameter tensors with gradient slots and Adam moments.
///
/// Parameters keep insertion order, which is also the checkpoint order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NumError::DuplicateParam(name));
        }
        let n = value.len();
        let idx = self.params.len();
        self.by_name.insert(name.clone(), idx);
        self.params.push(Param {
            name,
            value,
            grad: None,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        Ok(ParamId(idx))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| NumError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.params[id.0].grad.as_deref()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_grad(&mut self, id: ParamId, grad: Vec<f64>) -> Result<()> {
        let p = &mut self.params[id.0];
        if grad.len() != p.value.len() {
            return Err(crate::error::shape_err(
                "set_grad",
                format!(
                    "{}: expected {} values, got {}",
                    p.name,
                    p.value.len(),
                    grad.len()
                ),
            ));
        }
        p.grad = Some(grad);
        Ok(())
    }

    /// Adds the parameter gradients recorded by a backward pass.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.param_grads() {
            let p = &mut self.params[id.0];
            match &mut p.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => p.grad = Some(g.to_vec()),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// One bias-corrected Adam update over every parameter, then clears gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.grad.is_none()) {
            return Err(NumError::MissingGradient(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            let g = p.grad.take().expect("checked above");
            let w = p.value.data_mut();
            for i in 0..w.len() {
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g[i];
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                w[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Overwrites values from another store with identical names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other.get(other.id(&p.name)?);
            if src.shape() != p.value.shape() {
                return Err(crate::error::shape_err(
                    "copy_values_from",
                    format!("{}: {:?} vs {:?}", p.name, p.value.shape(), src.shape()),
                ));
            }
            p.value = src.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(w)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_params_and_bumps_step() {
        let (mut s, id) = scalar_store(0.7);
        s.set_grad(id, vec![0.0]).unwrap();
        s.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(s.get(id).item(), 0.7);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let (mut s, _) = scalar_store(1.0);
        assert!(matches!(
            s.adam_step(&AdamConfig::default()),
            Err(NumError::MissingGradient(n)) if n == "w"
        ));
    }

    #[test]
    fn gradients_are_cleared_after_step() {
        let (mut s, id) = scalar_store(1.0);
        s.set_grad(id, vec![1.0]).unwrap();
        s.adam_step(&AdamConfig::default()).unwrap();
        assert!(s.grad(id).is_none());
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        for g in [2.5, -0.3] {
            let (mut s, id) = scalar_store(0.0);
            let mut prev = 0.0;
            for _ in 0..100 {
                s.set_grad(id, vec![g]).unwrap();
                s.adam_step(&AdamConfig::default()).unwrap();
                let w = s.get(id).item();
                if g > 0.0 {
                    assert!(w < prev);
                } else {
                    assert!(w > prev);
                }
                prev = w;
            }
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let (mut s, id) = scalar_store(1.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut reached = None;
        for step in 1..=200 {
            let w = s.get(id).item();
            s.set_grad(id, vec![2.0 * w]).unwrap();
            s.adam_step(&cfg).unwrap();
            if reached.is_none() && s.get(id).item().abs() < 0.1 {
                reached = Some(step);
            }
        }
        assert!(reached.is_some());
        assert!(s.get(id).item().abs() < 0.1);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (mut s, id) = scalar_store(0.25);
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        for g in [1.0, -4.0, 1e3] {
            s.set_grad(id, vec![g]).unwrap();
            s.adam_step(&cfg).unwrap();
            assert_eq!(s.get(id).item(), 0.25);
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let (mut s, _) = scalar_store(1.0);
        assert!(matches!(
            s.add("w", Tensor::scalar(0.0)),
            Err(NumError::DuplicateParam(_))
        ));
    }
}

//! Named parameters, their gradients and Adam state.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
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

/// Insertion-ordered parameter map with a shared Adam step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore<T> {
    params: IndexMap<String, Param<T>>,
    step: u64,
}

impl<T: Element> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter name `{name}`")));
        }
        let shape = value.shape().to_vec();
        let (index, _) = self.params.insert_full(
            name,
            Param {
                value,
                grad: None,
                m: Tensor::zeros(shape.clone()),
                v: Tensor::zeros(shape),
            },
        );
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn by_index(&self, index: usize) -> &Param<T> {
        &self.params[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Records parameter `index` as a trainable leaf on `tape`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>, name: &str) -> Result<crate::autograd::Var> {
        let index = self
            .index_of(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter `{name}`")))?;
        Ok(tape.param(&self.params[index].value, index))
    }

    /// Clears every gradient to zeros.
    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad = Some(Tensor::zeros(p.value.shape().to_vec()));
        }
    }

    /// Adds gradients collected on `tape` into the stored gradients.
    pub fn accumulate_grads(&mut self, grads: Vec<(usize, Tensor<T>)>) {
        for (index, g) in grads {
            let p = &mut self.params[index];
            match &mut p.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &v)| *a += v),
                None => p.grad = Some(g),
            }
        }
    }

    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for p in self.params.values_mut() {
            p.m.data_mut().iter_mut().for_each(|v| *v = T::zero());
            p.v.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// One bias-corrected Adam update. Gradients are left in place.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some((name, _)) = self.params.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::MissingGrad(name.clone()));
        }
        self.step += 1;
        let t = self.step as f64;
        let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
        let bc1 = T::from_f64(1.0 - cfg.beta1.powf(t));
        let bc2 = T::from_f64(1.0 - cfg.beta2.powf(t));
        let (lr, eps) = (T::from_f64(cfg.lr), T::from_f64(cfg.eps));
        for p in self.params.values_mut() {
            let g = p.grad.as_ref().expect("checked above").data();
            let (value, m, v) = (p.value.data_mut(), p.m.data_mut(), p.v.data_mut());
            for i in 0..value.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Seeded initialiser: uniform `±sqrt(6 / fan_in)` weights.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform<T: Element>(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let count = shape.iter().product();
        let data = (0..count)
            .map(|_| T::from_f64(self.rng.random_range(-bound..bound)))
            .collect();
        Tensor::new(shape, data).expect("shape/data consistent")
    }
}

/// Collects parameter gradients off a tape so it can be dropped before
/// the store is mutated.
pub fn take_param_grads<T: Element>(tape: &Tape<'_, T>) -> Vec<(usize, Tensor<T>)> {
    tape.param_grads().map(|(i, g)| (i, g.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(theta: f64) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        s.insert("theta", Tensor::scalar(theta)).unwrap();
        s
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut s = scalar_store(1.5);
        s.zero_grad();
        s.adam_step(&AdamConfig::default()).unwrap();
        let p = s.get("theta").unwrap();
        assert_eq!(p.value.data(), &[1.5]);
        assert_eq!(p.m.data(), &[0.0]);
        assert_eq!(p.v.data(), &[0.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let mut s = scalar_store(0.0);
        s.get_mut("theta").unwrap().grad = Some(Tensor::scalar(0.5));
        s.adam_step(&AdamConfig::with_lr(1e-3)).unwrap();
        let got = s.get("theta").unwrap().value.data()[0];
        let expect = -1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
        assert!((got - -9.99999980e-4).abs() < 1e-12);
        // grads untouched
        assert_eq!(s.get("theta").unwrap().grad.as_ref().unwrap().data(), &[0.5]);
    }

    #[test]
    fn quadratic_descent() {
        // independent scalar recurrence
        let (mut th, mut m, mut v) = (1.0f64, 0.0, 0.0);
        for t in 1..=100 {
            let g = 2.0 * th;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            th -= 0.05 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        let mut s = scalar_store(1.0);
        for _ in 0..100 {
            let x = s.get("theta").unwrap().value.data()[0];
            s.get_mut("theta").unwrap().grad = Some(Tensor::scalar(2.0 * x));
            s.adam_step(&AdamConfig::with_lr(0.05)).unwrap();
        }
        let got = s.get("theta").unwrap().value.data()[0];
        assert!(got.abs() < 0.1);
        assert!((got - th).abs() < 1e-12);
    }

    #[test]
    fn missing_grad_is_error() {
        let mut s = scalar_store(0.0);
        assert!(matches!(s.adam_step(&AdamConfig::default()), Err(Error::MissingGrad(_))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = scalar_store(0.0);
        assert!(s.insert("theta", Tensor::scalar(1.0)).is_err());
    }
}

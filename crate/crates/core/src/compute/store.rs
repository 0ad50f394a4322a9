use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::Gradients;
use super::tensor::Tensor;
use crate::{Error, Result};

/// Rounds to the nearest f32. Stored parameter values always sit on this grid
/// so that checkpoints written as f32 reload bit-exactly.
#[inline]
pub(crate) fn to_storage(v: f64) -> f64 {
    v as f32 as f64
}

/// Parameter initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)), fans taken from a 2-D shape.
    GlorotUniform,
    Normal {
        std: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Named parameter tensors with paired gradient buffers. Iteration is sorted by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
    pub rng_seed: u64,
}

impl ParameterStore {
    pub fn new(rng_seed: u64) -> Self {
        Self { params: BTreeMap::new(), rng_seed }
    }

    /// Registers a new trainable parameter initialised with `init`.
    pub fn add<R: Rng>(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut R) -> Result<()> {
        let mut value = Tensor::zeros(shape);
        match init {
            Init::Zeros => {}
            Init::Ones => value.data_mut().fill(1.0),
            Init::GlorotUniform => {
                let (fan_in, fan_out) = match shape {
                    [n] => (*n, *n),
                    [a, b] => (*a, *b),
                    _ => return Err(Error::ShapeMismatch(format!("glorot init needs rank 1 or 2, got {shape:?}"))),
                };
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in value.data_mut() {
                    *v = rng.gen_range(-s..s);
                }
            }
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                for v in value.data_mut() {
                    *v = dist.sample(rng);
                }
            }
        }
        self.insert(name, value, true)
    }

    /// Inserts an explicit value (rounded to storage precision).
    pub fn insert(&mut self, name: &str, mut value: Tensor, trainable: bool) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        for v in value.data_mut() {
            *v = to_storage(*v);
        }
        let grad = Tensor::zeros(value.shape());
        self.params.insert(name.to_string(), Parameter { value, grad, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.params.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        self.params.get_mut(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    /// Overwrites a parameter value; the shape must match.
    pub fn set_value(&mut self, name: &str, mut value: Tensor) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch(format!(
                "`{name}` has shape {:?}, new value {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        for v in value.data_mut() {
            *v = to_storage(*v);
        }
        p.value = value;
        Ok(())
    }

    /// Sets one coordinate without rounding. Used by finite-difference probes only.
    pub(crate) fn poke(&mut self, name: &str, index: usize, v: f64) -> Result<f64> {
        let p = self.get_mut(name)?;
        let old = p.value.data()[index];
        p.value.data_mut()[index] = v;
        Ok(old)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.get_mut(name)?.trainable = trainable;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Adds tape gradients into the gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = self.get_mut(name)?;
            if p.grad.shape() != g.shape() {
                return Err(Error::ShapeMismatch(format!("gradient for `{name}`")));
            }
            p.grad.add_assign(g);
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.values().filter(|p| p.trainable).flat_map(|p| p.grad.data()).map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Names of parameters whose gradient buffer holds at least one nonzero entry.
    pub fn nonzero_grad_names(&self) -> Vec<String> {
        self.params.iter().filter(|(_, p)| p.grad.data().iter().any(|&g| g != 0.0)).map(|(k, _)| k.clone()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|p| p.value.is_finite())
    }
}

/// Plain SGD: `value -= lr * grad` on trainable tensors, then zero every gradient.
pub fn sgd_step(store: &mut ParameterStore, lr: f64) -> Result<()> {
    for (name, p) in store.params.iter_mut() {
        if p.trainable {
            if !p.grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
            for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                *v = to_storage(*v - lr * g);
            }
        }
        p.grad.data_mut().fill(0.0);
    }
    Ok(())
}

/// Rescales all trainable gradients so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParameterStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm && norm.is_finite() {
        let c = max_norm / norm;
        for p in store.params.values_mut().filter(|p| p.trainable) {
            p.grad.scale(c);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_store(w: f64, g: f64) -> ParameterStore {
        let mut s = ParameterStore::new(0);
        s.insert("w", Tensor::scalar(w), true).unwrap();
        s.get_mut("w").unwrap().grad = Tensor::scalar(g);
        s
    }

    #[test]
    fn sgd_zero_lr_is_noop() {
        let mut s = scalar_store(1.0, 2.0);
        sgd_step(&mut s, 0.0).unwrap();
        assert_eq!(s.value("w").unwrap().data(), &[1.0]);
        assert_eq!(s.get("w").unwrap().grad.data(), &[0.0]);
    }

    #[test]
    fn sgd_scalar_update() {
        let mut s = scalar_store(1.0, 2.0);
        sgd_step(&mut s, 0.1).unwrap();
        assert_eq!(s.value("w").unwrap().data(), &[to_storage(0.8)]);
    }

    #[test]
    fn frozen_parameter_not_updated() {
        let mut s = scalar_store(1.0, 2.0);
        s.set_trainable("w", false).unwrap();
        sgd_step(&mut s, 0.1).unwrap();
        assert_eq!(s.value("w").unwrap().data(), &[1.0]);
    }

    #[test]
    fn identical_seeds_identical_steps() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut s = ParameterStore::new(5);
            s.add("a", &[3, 4], Init::GlorotUniform, &mut rng).unwrap();
            s.add("b", &[4], Init::Normal { std: 0.1 }, &mut rng).unwrap();
            for p in s.params.values_mut() {
                let n = p.grad.len();
                p.grad = Tensor::new(p.grad.shape().to_vec(), (0..n).map(|i| i as f64 * 0.3).collect()).unwrap();
            }
            sgd_step(&mut s, 0.01).unwrap();
            s
        };
        let (a, b) = (build(), build());
        for ((_, x), (_, y)) in a.iter().zip(b.iter()) {
            let xb: Vec<u64> = x.value.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn glorot_bounds_and_f32_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParameterStore::new(1);
        s.add("w", &[10, 20], Init::GlorotUniform, &mut rng).unwrap();
        let bound = (6.0f64 / 30.0).sqrt();
        for &v in s.value("w").unwrap().data() {
            assert!(v.abs() <= bound);
            assert_eq!(v, to_storage(v));
        }
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut s = ParameterStore::new(0);
        s.insert("w", Tensor::scalar(1.0), true).unwrap();
        assert!(s.insert("w", Tensor::scalar(1.0), true).is_err());
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut s = ParameterStore::new(0);
        s.insert("a", Tensor::row(vec![0.0, 0.0]), true).unwrap();
        s.get_mut("a").unwrap().grad = Tensor::row(vec![30.0, 40.0]);
        let before = clip_grad_norm(&mut s, 5.0);
        assert!((before - 50.0).abs() < 1e-12);
        assert!((s.grad_norm() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sgd_rejects_non_finite_gradients() {
        let mut s = scalar_store(1.0, f64::NAN);
        assert!(matches!(sgd_step(&mut s, 0.1), Err(Error::NonFinite(_))));
    }
}

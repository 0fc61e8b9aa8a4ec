//! Parameter storage, initialisation, affine layers and the Adam optimizer.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Named trainable tensors. Iteration order is lexicographic by name, which
/// keeps optimizer updates and checkpoints deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Every parameter whose name starts with `prefix`.
    pub fn with_prefix<'a>(
        &'a self,
        prefix: &'a str,
    ) -> impl Iterator<Item = (&'a str, &'a Tensor<T>)> {
        self.iter().filter(move |(k, _)| k.starts_with(prefix))
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Glorot-uniform `fan_in × fan_out` matrix.
    pub fn init_matrix(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.init_uniform(name, &[fan_in, fan_out], bound, rng);
    }

    pub fn init_uniform(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut impl Rng) {
        let t = Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..=bound)));
        self.insert(name, t);
    }

    pub fn init_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut impl Rng) {
        let t = Tensor::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        });
        self.insert(name, t);
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], value: f64) {
        self.insert(name, Tensor::full(shape, T::of(value)));
    }

    /// Registers `{prefix}.weight` (`d_in × d_out`) and, optionally,
    /// `{prefix}.bias`.
    pub fn init_linear(
        &mut self,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) {
        self.init_matrix(&alloc::format!("{prefix}.weight"), d_in, d_out, rng);
        if bias {
            self.init_const(&alloc::format!("{prefix}.bias"), &[d_out], 0.0);
        }
    }

    pub fn init_layer_norm(&mut self, prefix: &str, dim: usize) {
        self.init_const(&alloc::format!("{prefix}.gamma"), &[dim], 1.0);
        self.init_const(&alloc::format!("{prefix}.beta"), &[dim], 0.0);
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

/// Applies `{prefix}.weight` (and `{prefix}.bias` when present) to `x`.
pub fn linear<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let w = tape.param(store, &alloc::format!("{prefix}.weight"))?;
    let y = tape.matmul(x, w)?;
    let bias = alloc::format!("{prefix}.bias");
    if store.contains(&bias) {
        let b = tape.param(store, &bias)?;
        tape.add_row(y, b)
    } else {
        Ok(y)
    }
}

pub fn layer_norm<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let g = tape.param(store, &alloc::format!("{prefix}.gamma"))?;
    let b = tape.param(store, &alloc::format!("{prefix}.beta"))?;
    tape.layer_norm(x, g, b, LAYER_NORM_EPS)
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub first_moment: ParamStore<T>,
    pub second_moment: ParamStore<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            steps: 0,
            first_moment: ParamStore::new(),
            second_moment: ParamStore::new(),
        }
    }

    /// One update of every parameter that has a gradient in `grads`.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &BTreeMap<String, Tensor<T>>,
    ) -> Result<()> {
        self.steps += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = 1.0 - libm_powi(self.beta1, self.steps);
        let c2 = 1.0 - libm_powi(self.beta2, self.steps);
        let step_size = T::of(self.lr / c1);
        let c2 = T::of(c2);
        let eps = T::of(self.eps);
        for (name, grad) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            if !self.first_moment.contains(name) {
                self.first_moment
                    .insert(name.to_string(), Tensor::zeros(p.shape()));
                self.second_moment
                    .insert(name.to_string(), Tensor::zeros(p.shape()));
            }
            let m = self.first_moment.get_mut(name).expect("inserted above");
            let v = self.second_moment.get_mut(name).expect("inserted above");
            for (((pv, &g), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * g;
                *vv = b2 * *vv + (T::one() - b2) * g * g;
                *pv -= step_size * *mv / ((*vv / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

fn libm_powi(base: f64, exp: u64) -> f64 {
    num_traits::Float::powf(base, exp as f64)
}

/// Squared L2 norm of all gradient tensors.
pub fn grad_norm_sq<T: Scalar>(grads: &BTreeMap<String, Tensor<T>>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data().iter().map(|v| v.f64() * v.f64()))
        .sum()
}

/// Names of the parameters in `store` under `prefix`, in update order.
pub fn names_with_prefix<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Vec<String> {
    store
        .with_prefix(prefix)
        .map(|(k, _)| k.to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_minimises_quadratic() {
        let mut store = ParamStore::<f64>::new();
        store.insert("x", Tensor::from_f64(&[2], &[3.0, -2.0]).unwrap());
        let mut adam = Adam::new(0.1, 0.9, 0.999);
        for _ in 0..500 {
            let mut tape = Tape::new();
            let x = tape.param(&store, "x").unwrap();
            let sq = tape.mul(x, x).unwrap();
            let loss = tape.sum(sq);
            let grads = tape.backward(loss).params(&tape);
            adam.step(&mut store, &grads).unwrap();
        }
        assert!(store
            .get("x")
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new();
        store.insert("x", Tensor::from_f64(&[1], &[1.0]).unwrap());
        let mut grads = BTreeMap::new();
        grads.insert("x".to_string(), Tensor::from_f64(&[1], &[5.0]).unwrap());
        let mut adam = Adam::new(1e-3, 0.5, 0.999);
        adam.step(&mut store, &grads).unwrap();
        assert!((store.get("x").unwrap().item() - (1.0 - 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn glorot_init_is_seeded() {
        let mut a = ParamStore::<f32>::new();
        let mut b = ParamStore::<f32>::new();
        a.init_linear("l", 4, 3, true, &mut ChaCha8Rng::seed_from_u64(3));
        b.init_linear("l", 4, 3, true, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!(a.numel(), 15);
    }
}

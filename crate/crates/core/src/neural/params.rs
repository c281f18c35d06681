use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<S>,
    pub grad: Vec<S>,
}

/// Named tensors with a gradient slot of identical shape for each.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn push(&mut self, name: String, shape: Vec<usize>, value: Vec<S>) -> ParamId {
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = vec![S::zero(); value.len()];
        self.params.push(Param {
            name,
            shape,
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        let n = shape.iter().product();
        self.push(name.into(), shape.to_vec(), vec![S::zero(); n])
    }

    /// Uniform in `±bound`, drawn from the store's seeded stream.
    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let value = (0..n)
            .map(|_| S::lit(self.rng.random_range(-bound..=bound)))
            .collect();
        self.push(name.into(), shape.to_vec(), value)
    }

    pub fn value(&self, id: ParamId) -> &[S] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [S] {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[S] {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [S] {
        &mut self.params[id.0].grad
    }

    /// Value and gradient slices of the same tensor at once.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&[S], &mut [S]) {
        let p = &mut self.params[id.0];
        (&p.value, &mut p.grad)
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.params[id.0].shape
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = S::zero());
        }
    }

    pub fn scale_grad(&mut self, k: S) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= k);
        }
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn grad_norm(&self) -> S {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|&g| g * g)
            .sum::<S>()
            .sqrt()
    }

    /// Copy values from another store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<S>) {
        assert_eq!(self.params.len(), other.params.len(), "layout mismatch");
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            assert_eq!(a.shape, b.shape, "shape mismatch for {}", a.name);
            a.value.copy_from_slice(&b.value);
        }
    }

    /// Convert every tensor to another scalar type.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: p.value.iter().map(|v| T::lit(v.as_f64())).collect(),
                    grad: vec![T::zero(); p.grad.len()],
                })
                .collect(),
            seed: self.seed,
            rng: self.rng.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grads_match_shapes_and_seed_is_deterministic() {
        let mut a = ParamStore::<f64>::new(3);
        let w = a.uniform("w", &[3, 4], 0.5);
        let b = a.zeros("b", &[3]);
        assert_eq!(a.grad(w).len(), 12);
        assert_eq!(a.grad(b).len(), 3);
        let mut c = ParamStore::<f64>::new(3);
        c.uniform("w", &[3, 4], 0.5);
        assert_eq!(a.value(w), c.value(w));
        assert!(a.value(w).iter().all(|v| v.abs() <= 0.5));
    }
}

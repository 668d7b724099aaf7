use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

/// A trainable tensor with its gradient and Adam moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub first_moment: Tensor<T>,
    pub second_moment: Tensor<T>,
}

impl<T: Scalar> ParamEntry<T> {
    fn new(value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            grad: None,
            first_moment: Tensor::zeros(&shape),
            second_moment: Tensor::zeros(&shape),
        }
    }
}

/// Named parameter collection, e.g. `scale2/fwd_enc/conv1/kernel`.
///
/// Iteration order is lexicographic by name, which keeps serialization stable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, ParamEntry<T>>,
    step_count: u64,
}

/// Half-width of the Glorot uniform range for a weight of the given shape.
pub fn glorot_bound(shape: &[usize]) -> f64 {
    let receptive: usize = shape.iter().skip(2).product();
    let fan_out = shape.first().copied().unwrap_or(1) * receptive;
    let fan_in = shape.get(1).copied().unwrap_or(1) * receptive;
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Half-width of the He uniform range, which preserves activation variance through ReLU.
pub fn he_bound(shape: &[usize]) -> f64 {
    let receptive: usize = shape.iter().skip(2).product();
    let fan_in = shape.get(1).copied().unwrap_or(1) * receptive;
    (6.0 / fan_in as f64).sqrt()
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, mixed with the run seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.rotate_left(17)
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter `{name}`"
            )));
        }
        self.entries
            .insert(name.to_string(), ParamEntry::new(value));
        Ok(())
    }

    /// Glorot-uniform weight; each name draws from its own seeded stream.
    pub fn insert_glorot(&mut self, name: &str, shape: &[usize], seed: u64) -> Result<()> {
        self.insert_uniform(name, shape, glorot_bound(shape), seed)
    }

    /// Weight drawn uniformly from `[-bound, bound]` with a per-name seeded stream.
    pub fn insert_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        seed: u64,
    ) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
        let value = Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..=bound)));
        self.insert(name, value)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.into()))
    }

    pub fn entry_mut(&mut self, name: &str) -> Result<&mut ParamEntry<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.into()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.entry(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).and_then(|e| e.grad.as_ref())
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn set_step_count(&mut self, steps: u64) {
        self.step_count = steps;
    }

    pub(crate) fn entries_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad = None;
        }
    }

    pub fn has_any_grad(&self) -> bool {
        self.entries.values().any(|e| e.grad.is_some())
    }

    /// Adds the gradients of every parameter `graph` loaded from this store.
    ///
    /// Parameters the graph loaded but never reached get a zero gradient;
    /// names the store does not know are ignored so one graph may feed several stores.
    pub fn absorb_grads(&mut self, graph: &Graph<T>) {
        for (name, var) in graph.params() {
            let Some(entry) = self.entries.get_mut(name) else {
                continue;
            };
            let grad = graph
                .grad(var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(entry.value.shape()));
            match &mut entry.grad {
                Some(acc) => acc.add_assign(&grad),
                slot @ None => *slot = Some(grad),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_init_is_bounded_and_seeded() {
        let mut a = ParamStore::<f64>::new();
        a.insert_glorot("w", &[8, 4, 3, 3], 7).unwrap();
        let bound = glorot_bound(&[8, 4, 3, 3]);
        assert!((bound - (6.0f64 / (36.0 + 72.0)).sqrt()).abs() < 1e-15);
        assert!(a
            .value("w")
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() <= bound));

        let mut b = ParamStore::<f64>::new();
        b.insert_glorot("w", &[8, 4, 3, 3], 7).unwrap();
        assert_eq!(a, b);
        let mut c = ParamStore::<f64>::new();
        c.insert_glorot("w", &[8, 4, 3, 3], 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.insert_zeros("b", &[3]).unwrap();
        assert!(s.insert_zeros("b", &[3]).is_err());
        assert!(s.value("missing").is_err());
    }

    #[test]
    fn absorb_grads_from_graph() {
        let mut s = ParamStore::<f64>::new();
        s.insert("x", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap())
            .unwrap();
        s.insert_zeros("unused", &[1]).unwrap();
        let mut g = Graph::new();
        let x = g.param(&s, "x").unwrap();
        let again = g.param(&s, "x").unwrap();
        assert_eq!(x, again);
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq);
        g.backward(l).unwrap();
        s.absorb_grads(&g);
        assert_eq!(s.grad("x").unwrap().data(), &[2.0, 4.0]);
        assert!(s.grad("unused").is_none());
    }
}

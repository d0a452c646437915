use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tensor, TensorError};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors, addressable by dotted path
/// (`encoder.layer0.attn.wq`). Insertion order is preserved.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor) -> Result<ParamId, TensorError> {
        let path = path.into();
        if self.index.contains_key(&path) {
            return Err(TensorError::DuplicateParam { path });
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(path.clone(), id);
        self.names.push(path);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, path: &str) -> Option<ParamId> {
        self.index.get(path).copied()
    }

    pub fn by_name(&self, path: &str) -> Option<&Tensor> {
        self.id(path).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Deterministic per-path parameter initialization.
///
/// Each tensor draws from its own stream keyed by `(seed, path)`, so adding or
/// removing one parameter never shifts the values of any other.
#[derive(Clone, Copy, Debug)]
pub struct Initializer {
    seed: u64,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn rng_for(&self, path: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(path.as_bytes()))
    }

    /// Uniform in `±bound`.
    pub fn uniform(&self, path: &str, rows: usize, cols: usize, bound: f64) -> Tensor {
        let mut rng = self.rng_for(path);
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        Tensor::matrix(rows, cols, data)
            .expect("positive dims")
            .with_requires_grad(true)
    }

    /// Weight matrix `[fan_in, fan_out]`, uniform in `±1/√fan_in`.
    pub fn weight(&self, path: &str, fan_in: usize, fan_out: usize) -> Tensor {
        self.uniform(path, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Tensor {
        Tensor::matrix(rows, cols, vec![0.0; rows * cols])
            .expect("positive dims")
            .with_requires_grad(true)
    }

    pub fn ones(&self, rows: usize, cols: usize) -> Tensor {
        Tensor::matrix(rows, cols, vec![1.0; rows * cols])
            .expect("positive dims")
            .with_requires_grad(true)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_paths_rejected() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(
            store.insert("a", Tensor::scalar(2.0)),
            Err(TensorError::DuplicateParam { .. })
        ));
    }

    #[test]
    fn init_is_keyed_by_path() {
        let init = Initializer::new(7);
        let a = init.weight("x.w", 3, 4);
        let b = init.weight("x.w", 3, 4);
        let c = init.weight("y.w", 3, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = 1.0 / 3f64.sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
    }
}

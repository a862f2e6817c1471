//! A linear chain stand-in for modular networks: each module is a d×d
//! matrix, a task applies its modules in order, and the loss is
//! `½‖h_w − y‖²`.

use std::collections::BTreeMap;
use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimError;
use crate::model::ModuleKey;
use crate::scalar::Scalar;

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![T::zero(); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self, SimError> {
        let dim = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(SimError::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(Self {
            dim,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        self.data
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn transpose_mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        for (row, &xi) in self.data.chunks_exact(self.dim).zip(x) {
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * xi;
            }
        }
        out
    }

    /// `self += scale · u vᵀ`
    pub fn add_outer(&mut self, scale: T, u: &[T], v: &[T]) {
        for (row, &ui) in self.data.chunks_exact_mut(self.dim).zip(u) {
            for (a, &vj) in row.iter_mut().zip(v) {
                *a += scale * ui * vj;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, scale: T, other: &Self) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn div_scalar(&mut self, d: T) {
        for a in &mut self.data {
            *a /= d;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|&a| a * a).sum::<T>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|a| a.is_zero())
    }

    /// `‖self − other‖ / max(‖self‖, ‖other‖)`, or 0 when both are zero.
    pub fn relative_diff(&self, other: &Self) -> T {
        let diff = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            .sqrt();
        let scale = self.norm().max(other.norm());
        if scale.is_zero() {
            diff
        } else {
            diff / scale
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.dim + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.dim + j]
    }
}

/// Parameters for every module, plus the shared regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel<T> {
    dim: usize,
    params: BTreeMap<ModuleKey, Matrix<T>>,
    target: Vec<T>,
}

impl<T: Scalar> ToyModel<T> {
    pub fn new(dim: usize, target: Vec<T>) -> Result<Self, SimError> {
        if dim == 0 {
            return Err(SimError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if target.len() != dim {
            return Err(SimError::DimensionMismatch {
                expected: dim,
                got: target.len(),
            });
        }
        Ok(Self {
            dim,
            params: BTreeMap::new(),
            target,
        })
    }

    /// Near-identity random parameters for each module, drawn in key order.
    pub fn random<'a>(
        modules: impl IntoIterator<Item = &'a ModuleKey>,
        dim: usize,
        seed: u64,
    ) -> Result<Self, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keys: Vec<&ModuleKey> = modules.into_iter().collect();
        keys.sort();
        keys.dedup();
        let target = (0..dim)
            .map(|_| T::of(rng.random_range(-1.0..1.0)))
            .collect();
        let mut model = Self::new(dim, target)?;
        for key in keys {
            let mut w = Matrix::identity(dim);
            for v in &mut w.data {
                *v += T::of(rng.random_range(-0.25..0.25));
            }
            model.params.insert(key.clone(), w);
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn target(&self) -> &[T] {
        &self.target
    }

    pub fn insert(&mut self, key: ModuleKey, w: Matrix<T>) -> Result<(), SimError> {
        if w.dim != self.dim {
            return Err(SimError::DimensionMismatch {
                expected: self.dim,
                got: w.dim,
            });
        }
        self.params.insert(key, w);
        Ok(())
    }

    pub fn get(&self, key: &ModuleKey) -> Option<&Matrix<T>> {
        self.params.get(key)
    }

    pub fn get_mut(&mut self, key: &ModuleKey) -> Option<&mut Matrix<T>> {
        self.params.get_mut(key)
    }

    pub fn modules(&self) -> impl Iterator<Item = &ModuleKey> {
        self.params.keys()
    }

    fn weight(&self, key: &ModuleKey) -> Result<&Matrix<T>, SimError> {
        self.params
            .get(key)
            .ok_or_else(|| SimError::MissingModule(key.clone()))
    }

    fn check_vec(&self, v: &[T]) -> Result<(), SimError> {
        if v.len() == self.dim {
            Ok(())
        } else {
            Err(SimError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            })
        }
    }
}

/// Hidden states `h_0 = x, h_i = W_i h_{i−1}` of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub hidden: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn output(&self) -> &[T] {
        self.hidden.last().expect("trace holds at least the input")
    }

    pub fn loss(&self, y: &[T]) -> T {
        let half = T::of(0.5);
        half * self
            .output()
            .iter()
            .zip(y)
            .map(|(&h, &t)| (h - t) * (h - t))
            .sum::<T>()
    }
}

pub fn forward<T: Scalar>(
    model: &ToyModel<T>,
    chain: &[ModuleKey],
    x: &[T],
) -> Result<ForwardTrace<T>, SimError> {
    if chain.is_empty() {
        return Err(SimError::EmptyChain);
    }
    model.check_vec(x)?;
    let mut hidden = Vec::with_capacity(chain.len() + 1);
    hidden.push(x.to_vec());
    for key in chain {
        let h = model
            .weight(key)?
            .mul_vec(hidden.last().expect("non-empty"));
        hidden.push(h);
    }
    Ok(ForwardTrace { hidden })
}

/// Negated loss gradient for each module of the chain:
/// `−∂L/∂W_i = −δ_i h_{i−1}ᵀ` with `δ_w = h_w − y` and
/// `δ_{i−1} = W_iᵀ δ_i`.
pub fn local_backward<T: Scalar>(
    model: &ToyModel<T>,
    chain: &[ModuleKey],
    trace: &ForwardTrace<T>,
    y: &[T],
) -> Result<BTreeMap<ModuleKey, Matrix<T>>, SimError> {
    model.check_vec(y)?;
    if trace.hidden.len() != chain.len() + 1 {
        return Err(SimError::DimensionMismatch {
            expected: chain.len() + 1,
            got: trace.hidden.len(),
        });
    }
    let mut delta: Vec<T> = trace.output().iter().zip(y).map(|(&h, &t)| h - t).collect();
    let mut grads: BTreeMap<ModuleKey, Matrix<T>> = BTreeMap::new();
    for (i, key) in chain.iter().enumerate().rev() {
        let w = model.weight(key)?;
        grads
            .entry(key.clone())
            .or_insert_with(|| Matrix::zeros(model.dim))
            .add_outer(-T::one(), &delta, &trace.hidden[i]);
        delta = w.transpose_mul_vec(&delta);
    }
    Ok(grads)
}

/// Loss of one datapoint, for finite-difference checks.
pub fn loss<T: Scalar>(
    model: &ToyModel<T>,
    chain: &[ModuleKey],
    x: &[T],
    y: &[T],
) -> Result<T, SimError> {
    Ok(forward(model, chain, x)?.loss(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Side;

    fn key(i: usize) -> ModuleKey {
        ModuleKey::new(Side::Encoder, i, "m")
    }

    #[test]
    fn identity_chain_is_lossless() {
        let mut m = ToyModel::new(3, vec![1.0, 2.0, 3.0]).unwrap();
        m.insert(key(0), Matrix::identity(3)).unwrap();
        m.insert(key(1), Matrix::identity(3)).unwrap();
        let chain = [key(0), key(1)];
        let x = [1.0, 2.0, 3.0];
        let tr = forward(&m, &chain, &x).unwrap();
        assert_eq!(tr.output(), &x);
        assert_eq!(tr.loss(&x), 0.0);
        let g = local_backward(&m, &chain, &tr, &x).unwrap();
        assert!(g.values().all(Matrix::is_zero));
    }

    #[test]
    fn scalar_chain() {
        let mut m = ToyModel::new(1, vec![0.0]).unwrap();
        m.insert(key(0), Matrix::from_rows(vec![vec![2.0]]).unwrap())
            .unwrap();
        let tr = forward(&m, &[key(0)], &[1.0]).unwrap();
        assert_eq!(tr.output(), &[2.0]);
        assert_eq!(tr.loss(&[0.0]), 2.0);
        let g = local_backward(&m, &[key(0)], &tr, &[0.0]).unwrap();
        assert_eq!(g[&key(0)][(0, 0)], -2.0);
    }

    #[test]
    fn forward_errors() {
        let mut m = ToyModel::<f64>::new(2, vec![0.0, 0.0]).unwrap();
        assert_eq!(forward(&m, &[], &[1.0, 1.0]), Err(SimError::EmptyChain));
        assert!(matches!(
            forward(&m, &[key(0)], &[1.0, 1.0]),
            Err(SimError::MissingModule(_))
        ));
        m.insert(key(0), Matrix::identity(2)).unwrap();
        assert!(matches!(
            forward(&m, &[key(0)], &[1.0]),
            Err(SimError::DimensionMismatch { .. })
        ));
        assert!(m.insert(key(1), Matrix::identity(3)).is_err());
        assert!(ToyModel::<f32>::new(0, vec![]).is_err());
    }

    #[test]
    fn random_model_is_seeded() {
        let keys = [key(0), key(1)];
        let a = ToyModel::<f64>::random(&keys, 4, 9).unwrap();
        let b = ToyModel::<f64>::random(keys.iter().rev(), 4, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ToyModel::<f64>::random(&keys, 4, 10).unwrap());
    }
}

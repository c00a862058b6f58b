//! Dense vector math shared by embeddings, clustering, and retrieval.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed-length embedding, kept at unit Euclidean norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding<T = f64>(pub Vec<T>);

impl<T: Float> Embedding<T> {
    /// Wraps a raw vector, normalizing it to unit length.
    pub fn from_raw(values: Vec<T>) -> Result<Self> {
        let mut values = values;
        normalize(&mut values)?;
        Ok(Embedding(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &Embedding<T>) -> Result<T> {
        cosine(&self.0, &other.0)
    }

    /// Checks the unit-norm invariant within `tol`.
    pub fn is_unit_norm(&self, tol: T) -> bool {
        (norm(&self.0) - T::one()).abs() <= tol
    }
}

pub fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm<T: Float>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Cosine similarity. Errors on dimension mismatch or a zero vector.
pub fn cosine<T: Float>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "cosine: dimension mismatch ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == T::zero() || nb == T::zero() {
        return Err(Error::InvalidArgument(
            "cosine: zero-norm vector".to_string(),
        ));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Scales `v` to unit norm in place. Errors on the zero vector.
pub fn normalize<T: Float>(v: &mut [T]) -> Result<()> {
    let n = norm(v);
    if n == T::zero() {
        return Err(Error::InvalidArgument(
            "normalize: zero-norm vector".to_string(),
        ));
    }
    for x in v.iter_mut() {
        *x = *x / n;
    }
    Ok(())
}

/// Renormalized arithmetic mean of a set of vectors (the cluster centroid).
pub fn renormalized_mean<T: Float>(vectors: &[&[T]]) -> Result<Vec<T>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::InvalidArgument("centroid of empty set".to_string()))?;
    let dim = first.len();
    let mut acc = vec![T::zero(); dim];
    for v in vectors {
        if v.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "centroid: dimension mismatch ({} vs {dim})",
                v.len()
            )));
        }
        for (a, &x) in acc.iter_mut().zip(v.iter()) {
            *a = *a + x;
        }
    }
    let n = T::from(vectors.len()).unwrap();
    for a in acc.iter_mut() {
        *a = *a / n;
    }
    normalize(&mut acc)?;
    Ok(acc)
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat vector of every model weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Cosine similarity, or `None` when either vector has zero norm.
    pub fn cosine(&self, other: &ParamVector) -> Option<f64> {
        let (a, b) = (self.norm(), other.norm());
        if a == 0.0 || b == 0.0 {
            return None;
        }
        Some((self.dot(other) / (a * b)).clamp(-1.0, 1.0))
    }

    /// `self += scale · other`.
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bits_eq(&self, other: &ParamVector) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn check_len(&self, other: &ParamVector, what: &str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Internal(format!(
                "{what}: length mismatch {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }
}

/// Returns `params − lr · grad`.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector> {
    params.check_len(grad, "sgd step")?;
    Ok(ParamVector(
        params.0.iter().zip(&grad.0).map(|(p, g)| p - lr * g).collect(),
    ))
}

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results are reproducible bit for bit.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

//! Dense `f64` parameter vectors.
//!
//! Every public operation checks dimensions and rejects non-finite results,
//! naming the operation that produced them. Reductions run in ascending index
//! order so results are reproducible bit for bit.

use std::ops::Index;

use crate::error::{Error, Result};

/// A dense model-sized vector. Entries are always finite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

fn check_dims(op: &'static str, a: &ParamVector, b: &ParamVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            op,
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

fn finite_vec(op: &'static str, v: Vec<f64>) -> Result<ParamVector> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(ParamVector(v))
    } else {
        Err(Error::NonFinite { op })
    }
}

fn finite_scalar(op: &'static str, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite { op })
    }
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        finite_vec("new", values)
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        check_dims("add", self, other)?;
        finite_vec(
            "add",
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        )
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_dims("sub", self, other)?;
        finite_vec(
            "sub",
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        )
    }

    pub fn scale(&self, scalar: f64) -> Result<ParamVector> {
        finite_scalar("scale", scalar)?;
        finite_vec("scale", self.0.iter().map(|a| a * scalar).collect())
    }

    /// `self + scalar * other`
    pub fn axpy(&self, scalar: f64, other: &ParamVector) -> Result<ParamVector> {
        check_dims("axpy", self, other)?;
        finite_scalar("axpy", scalar)?;
        finite_vec(
            "axpy",
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + scalar * b)
                .collect(),
        )
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        check_dims("dot", self, other)?;
        let mut acc = 0.0;
        for (a, b) in self.0.iter().zip(&other.0) {
            acc += a * b;
        }
        finite_scalar("dot", acc)
    }

    pub fn sq_norm(&self) -> f64 {
        // Finite entries can still overflow when squared; saturate rather than
        // fail since norms are only ever compared or reported.
        let mut acc = 0.0;
        for a in &self.0 {
            acc += a * a;
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    pub fn inf_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    /// Number of entries that are exactly nonzero.
    pub fn nnz(&self) -> usize {
        self.0.iter().filter(|a| **a != 0.0).count()
    }

    /// Elementwise map; the result must stay finite.
    pub fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<ParamVector> {
        finite_vec(op, self.0.iter().map(|a| f(*a)).collect())
    }

    /// Sum of a slice of vectors, accumulated in ascending index order.
    pub fn sum(vectors: &[ParamVector]) -> Result<ParamVector> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::invalid("sum of zero vectors"))?;
        let mut acc = first.0.clone();
        for v in &vectors[1..] {
            check_dims("sum", first, v)?;
            for (a, b) in acc.iter_mut().zip(&v.0) {
                *a += b;
            }
        }
        finite_vec("sum", acc)
    }

    /// Uniform mean, summed in ascending index order then divided.
    pub fn mean(vectors: &[ParamVector]) -> Result<ParamVector> {
        let n = vectors.len() as f64;
        let s = Self::sum(vectors)?;
        finite_vec("mean", s.0.into_iter().map(|a| a / n).collect())
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ParamVector::new(v)
    }
}

impl<'a> IntoIterator for &'a ParamVector {
    type Item = &'a f64;
    type IntoIter = std::slice::Iter<'a, f64>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

//! Dense parameter vectors, deterministic reductions and reproducible random streams.
//!
//! Every algorithm in the crate evolves a [`ParamVector`]. Arithmetic never
//! mutates its inputs and rejects non-finite results, so a NaN can never leak
//! silently from one round into the next.

use std::fmt;
use std::ops::Index;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A point in parameter space with a fixed dimension and finite entries.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("ParamVector").field(&self.0).finish()
    }
}

fn check_finite(data: &[f64], context: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context.to_string()))
    }
}

impl ParamVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        check_finite(&data, "ParamVector::new")?;
        Ok(ParamVector(data))
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn from_slice(data: &[f64]) -> Result<Self> {
        Self::new(data.to_vec())
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

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    fn same_len(&self, other: &ParamVector) -> Result<()> {
        if self.len() == other.len() {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.len(),
                got: other.len(),
            })
        }
    }

    /// `self + a * x`.
    pub fn plus_scaled(&self, a: f64, x: &ParamVector) -> Result<ParamVector> {
        axpy(a, x, self)
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a + b, "add")
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a - b, "sub")
    }

    pub fn scale(&self, a: f64) -> Result<ParamVector> {
        let data: Vec<f64> = self.0.iter().map(|v| a * v).collect();
        check_finite(&data, "scale")?;
        Ok(ParamVector(data))
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.same_len(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖self − other‖`.
    pub fn dist(&self, other: &ParamVector) -> Result<f64> {
        Ok(self.sub(other)?.norm())
    }

    /// True when both vectors have identical bit patterns in every entry.
    pub fn bit_eq(&self, other: &ParamVector) -> bool {
        self.len() == other.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn zip_with(
        &self,
        other: &ParamVector,
        op: impl Fn(f64, f64) -> f64,
        context: &str,
    ) -> Result<ParamVector> {
        self.same_len(other)?;
        let data: Vec<f64> = self.0.iter().zip(&other.0).map(|(&a, &b)| op(a, b)).collect();
        check_finite(&data, context)?;
        Ok(ParamVector(data))
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

/// Returns `a·x + y`.
pub fn axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    if !a.is_finite() {
        return Err(Error::NonFinite("axpy scale".into()));
    }
    y.zip_with(x, |yv, xv| a * xv + yv, "axpy")
}

/// Arithmetic mean accumulated in ascending index order.
///
/// The mean is formed as `v₀ + (Σᵢ (vᵢ − v₀)) / n`, so a list of identical
/// vectors reduces to that vector bit-for-bit.
pub fn mean_reduce(vs: &[ParamVector]) -> Result<ParamVector> {
    let first = vs
        .first()
        .ok_or_else(|| Error::usage("mean_reduce of an empty list"))?;
    let n = vs.len() as f64;
    let mut acc = vec![0.0; first.len()];
    for v in &vs[1..] {
        first.same_len(v)?;
        for ((a, &x), &x0) in acc.iter_mut().zip(&v.0).zip(&first.0) {
            *a += x - x0;
        }
    }
    let data: Vec<f64> = first
        .0
        .iter()
        .zip(&acc)
        .map(|(&x0, &a)| x0 + a / n)
        .collect();
    check_finite(&data, "mean_reduce")?;
    Ok(ParamVector(data))
}

/// Small dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        check_finite(&data, "DenseMatrix::new")?;
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Dimension {
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Rows selected by `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DenseMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols.min(self.rows) {
                worst = worst.max((self.get(r, c) - self.get(c, r)).abs());
            }
        }
        worst
    }
}

/// A reproducible source of randomness identified by a seed and derivation path.
///
/// Streams are values: deriving a child never consumes state from the parent,
/// and the generator handed out by [`SeededStream::rng`] depends only on
/// `(master_seed, lineage)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeededStream {
    master_seed: u64,
    lineage: Vec<(String, u64)>,
}

impl SeededStream {
    pub fn new(master_seed: u64) -> Self {
        SeededStream {
            master_seed,
            lineage: Vec::new(),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn lineage(&self) -> &[(String, u64)] {
        &self.lineage
    }

    pub fn derive(&self, label: &str, index: u64) -> SeededStream {
        let mut lineage = self.lineage.clone();
        lineage.push((label.to_string(), index));
        SeededStream {
            master_seed: self.master_seed,
            lineage,
        }
    }

    fn key(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.master_seed.to_le_bytes());
        for (label, index) in &self.lineage {
            h.update((label.len() as u64).to_le_bytes());
            h.update(label.as_bytes());
            h.update(index.to_le_bytes());
        }
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        key
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key())
    }
}

/// Free-function form of [`SeededStream::derive`].
pub fn derive_stream(parent: &SeededStream, label: &str, index: u64) -> SeededStream {
    parent.derive(label, index)
}

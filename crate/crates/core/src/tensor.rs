//! Dense row-major matrices and seeded random streams.
//!
//! Matrix products accumulate every output element serially in increasing
//! inner-index order, so results do not depend on blocking or on how many
//! output rows are computed together.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
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

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Standard product `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(m, n);
        const BLOCK: usize = 4;
        for i0 in (0..m).step_by(BLOCK) {
            let i1 = (i0 + BLOCK).min(m);
            let c_block = &mut out.data[i0 * n..i1 * n];
            for kk in 0..k {
                let b_row = &other.data[kk * n..(kk + 1) * n];
                for (bi, c_row) in c_block.chunks_exact_mut(n).enumerate() {
                    let a = self.data[(i0 + bi) * k + kk];
                    // A zero term leaves the running sum unchanged.
                    if a == 0.0 {
                        continue;
                    }
                    for (c, &b) in c_row.iter_mut().zip(b_row) {
                        *c += a * b;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose of `self` twice.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        self.transpose().matmul(other)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        self.matmul(&other.transpose())
    }

    /// Sub-matrix made of the rows in `keep`, in the given order.
    pub fn row_slice(&self, keep: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(keep.len() * self.cols);
        for &r in keep {
            if r >= self.rows {
                return Err(Error::Index {
                    index: r,
                    len: self.rows,
                });
            }
            data.extend_from_slice(self.row(r));
        }
        Ok(Matrix {
            rows: keep.len(),
            cols: self.cols,
            data,
        })
    }

    /// Sub-matrix made of the columns in `keep`, in the given order.
    pub fn col_slice(&self, keep: &[usize]) -> Result<Matrix> {
        if let Some(&bad) = keep.iter().find(|&&c| c >= self.cols) {
            return Err(Error::Index {
                index: bad,
                len: self.cols,
            });
        }
        let mut data = Vec::with_capacity(keep.len() * self.rows);
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(keep.iter().map(|&c| row[c]));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: keep.len(),
            data,
        })
    }

    /// Adds `v` to every row.
    pub fn add_row_vector(&mut self, v: &[f64]) {
        debug_assert_eq!(v.len(), self.cols);
        for row in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (x, &b) in row.iter_mut().zip(v) {
                *x += b;
            }
        }
    }

    /// Column sums, each accumulated over rows in order.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols.max(1)) {
            for (s, &x) in sums.iter_mut().zip(row) {
                *s += x;
            }
        }
        sums
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Deterministic random stream keyed by a 64-bit seed.
///
/// Child streams are derived from `(seed, tag)` alone, so forking order does
/// not matter and each consumer (initialization, batching, masks, splits) gets
/// an independent sequence.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a tag into a new seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fork(&self, tag: u64) -> RngStream {
        RngStream::new(derive_seed(self.seed, tag))
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }
}

/// `n` draws from Normal(mean, std²).
pub fn normal_draws(rng: &mut RngStream, n: usize, mean: f64, std: f64) -> Result<Vec<f64>> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::Parameter(format!(
            "standard deviation must be finite and >= 0, got {std}"
        )));
    }
    Ok((0..n).map(|_| mean + std * rng.standard_normal()).collect())
}

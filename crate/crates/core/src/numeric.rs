//! Minimal deterministic numeric kernel: dense vectors and matrices,
//! reductions, summary statistics, and a seeded counter-based RNG.
//!
//! Everything is 64-bit; gradient checks downstream need the headroom.
//! All types are plain values, and [`RngState`] is the only stateful one:
//! the same seed yields the same draw sequence on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense vector of finite 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    /// Builds a vector, rejecting NaN and infinities.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("vector element"));
        }
        Ok(Self { data })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    /// Unit basis vector e_i.
    pub fn basis(len: usize, i: usize) -> Result<Self> {
        if i >= len {
            return Err(Error::IndexOutOfRange {
                context: "basis vector",
                index: i,
                size: len,
            });
        }
        let mut v = Self::zeros(len);
        v.data[i] = 1.0;
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    /// Elementwise sum of two equal-length vectors.
    pub fn add(&self, other: &Vector) -> Result<Vector> {
        check_len("vector add", self.len(), other.len())?;
        Ok(Vector {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        check_len("vector sub", self.len(), other.len())?;
        Ok(Vector {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Vector {
        Vector {
            data: self.data.iter().map(|a| a * c).collect(),
        }
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

impl From<Vec<f64>> for Vector {
    /// Infallible construction for literals; debug builds still catch
    /// non-finite values.
    fn from(data: Vec<f64>) -> Self {
        debug_assert!(data.iter().all(|x| x.is_finite()));
        Self { data }
    }
}

/// Dense row-major matrix of finite 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "matrix data length",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix element"));
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row `r` as a slice, without copying.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_vector(&self, r: usize) -> Result<Vector> {
        if r >= self.rows {
            return Err(Error::IndexOutOfRange {
                context: "matrix row",
                index: r,
                size: self.rows,
            });
        }
        Ok(Vector {
            data: self.row(r).to_vec(),
        })
    }
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Inner product of two equal-length vectors.
pub fn dot(a: &Vector, b: &Vector) -> Result<f64> {
    check_len("dot", a.len(), b.len())?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

/// Euclidean norm.
pub fn l2_norm(a: &Vector) -> f64 {
    a.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Matrix-vector product.
pub fn matvec(m: &Matrix, v: &Vector) -> Result<Vector> {
    check_len("matvec", m.cols, v.len())?;
    let data = (0..m.rows)
        .map(|r| {
            m.row(r)
                .iter()
                .zip(&v.data)
                .map(|(x, y)| x * y)
                .sum::<f64>()
        })
        .collect();
    Ok(Vector { data })
}

/// Mean and population standard deviation (divide by n), via Welford's
/// single-pass recurrence.
pub fn mean_std(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("mean_std"));
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    Ok((mean, (m2 / xs.len() as f64).sqrt()))
}

/// Seeded deterministic random stream (ChaCha8, counter-based).
///
/// Not shared: each consumer owns its state. Derive independent child
/// streams with [`RngState::child`] so parallel stages stay reproducible.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this state's seed and a tag.
    /// Children depend only on (seed, tag), not on draws already made.
    pub fn child(&self, tag: u64) -> RngState {
        RngState::new(splitmix64(self.seed ^ splitmix64(tag)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }

    /// Uniform draw in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        self.rng.random()
    }

    /// Standard normal draw.
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }

    /// Uniform integer in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        xs.shuffle(&mut self.rng);
    }
}

/// SplitMix64 finalizer; used only for deriving child seeds.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// `n` i.i.d. standard-normal draws.
pub fn gaussian_sample(rng: &mut RngState, n: usize) -> Result<Vector> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "gaussian_sample needs n >= 1".into(),
        ));
    }
    Ok(Vector {
        data: (0..n).map(|_| rng.standard_normal()).collect(),
    })
}

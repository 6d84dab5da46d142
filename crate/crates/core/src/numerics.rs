//! Dense row-major matrices, stable elementwise nonlinearities and the seeded
//! random source shared by every other module.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Default probability clamp applied before every logarithm.
pub const DEFAULT_EPS: f64 = 1e-7;

/// Row-major dense matrix of finite `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::new", (rows, cols), (data.len(), 1)));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Matrix::new"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(value.is_finite(), "Matrix::filled: non-finite fill value");
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from `f(row, col)`.
    ///
    /// # Panics
    /// If `f` returns a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = f(i, j);
                assert!(
                    v.is_finite(),
                    "Matrix::from_fn: non-finite value at ({i}, {j})"
                );
                data.push(v);
            }
        }
        Matrix { rows, cols, data }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Mutable access for in-crate numerical kernels. Callers are responsible
    /// for re-establishing finiteness (see [`Matrix::all_finite`]).
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        assert!(
            data.iter().all(|v| v.is_finite()),
            "Matrix::map produced a non-finite value"
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Adds `bias[j]` to every element of column `j`.
    pub fn add_row_vector(&self, bias: &[f64]) -> Result<Matrix> {
        if bias.len() != self.cols {
            return Err(Error::shape(
                "add_row_vector",
                self.shape(),
                (1, bias.len()),
            ));
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.cols) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Column sums, accumulated in row order.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols.max(1)) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul_with(a, b, Exec::default())
}

/// [`matmul`] with an explicit execution policy. Rows of the output are
/// independent, and within a row every entry accumulates over the inner
/// dimension in ascending order, so the result does not depend on `exec`.
pub fn matmul_with(a: &Matrix, b: &Matrix, exec: Exec) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    if m > 0 {
        exec.for_work(n * k * m)
            .for_each_chunk(&mut out, m, |i, row| {
                let a_row = &a.data[i * k..(i + 1) * k];
                for (p, &aip) in a_row.iter().enumerate() {
                    let b_row = &b.data[p * m..(p + 1) * m];
                    for (o, &bpj) in row.iter_mut().zip(b_row) {
                        *o += aip * bpj;
                    }
                }
            });
    }
    let out = Matrix {
        rows: n,
        cols: m,
        data: out,
    };
    if !out.all_finite() {
        return Err(Error::NonFinite("matmul"));
    }
    Ok(out)
}

/// Logistic function evaluated in the sign-branched form, so that `exp` is
/// only ever called on non-positive arguments. The result is kept inside the
/// open interval (0, 1) of representable doubles.
pub fn sigmoid_scalar(z: f64) -> f64 {
    const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

pub fn sigmoid(z: &Matrix) -> Matrix {
    z.map(sigmoid_scalar)
}

/// `log(max(1 - x, eps))`.
pub fn stable_log1m(x: f64, eps: f64) -> f64 {
    (1.0 - x).max(eps).ln()
}

/// Seeded random source.
///
/// The generator is ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
/// `seed_from_u64`, which is portable across platforms. Independent consumers
/// obtain child streams with [`RngState::child`]; the child seed is a
/// SplitMix64 finalization of the parent seed mixed with an FNV-1a hash of the
/// consumer label, so adding a new consumer never shifts another's draws.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream for a named consumer.
    pub fn child(&self, label: &str) -> RngState {
        RngState::new(splitmix64(self.seed ^ fnv1a(label.as_bytes())))
    }

    /// Independent child stream for an indexed consumer (epochs, cells).
    pub fn child_index(&self, index: u64) -> RngState {
        RngState::new(splitmix64(
            splitmix64(self.seed).wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        ))
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

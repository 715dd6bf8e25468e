//! Dense row-major matrices and the handful of primitives the network needs.
//!
//! Every primitive here has a backward companion that takes the upstream
//! gradient and returns gradients for its inputs. Reductions sum strictly in
//! row order so results are reproducible bit-for-bit.

use std::fmt::{self, Debug};

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Scalar type the forward pass can run in. Training uses `f64`; the
/// benchmark harness may run in `f32`.
pub trait Real: Float + FromPrimitive + Debug + Default + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub(crate) fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 is representable in every Real")
}

#[derive(Clone, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Debug> Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix[{}x{}]", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()
    }
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Config(format!(
                "matrix data length {} does not match shape {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from nested rows; all rows must share a length.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Config(format!(
                    "row {i} has {} columns, expected {cols}",
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> {
        // chunks() panics on zero, and a 0-column matrix has no data anyway
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// New matrix whose row `i` is row `order[i]` of `self`.
    pub fn select_rows(&self, order: &[usize]) -> Self {
        let mut out = Self::zeros(order.len(), self.cols);
        for (dst, &src) in order.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|&x| U::from(x).expect("finite float casts"))
                .collect(),
        }
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a = *a * s;
        }
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

fn ensure_finite<T: Real>(what: &str, data: &[T]) -> Result<()> {
    match data.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(at) => Err(Error::NonFinite(format!(
            "{what} produced a non-finite value at flat index {at}"
        ))),
    }
}

/// `out = x · w (+ b)`.
pub fn affine<T: Real>(x: &Matrix<T>, w: &Matrix<T>, b: Option<&[T]>) -> Result<Matrix<T>> {
    if x.cols != w.rows {
        return Err(Error::Config(format!(
            "affine: inner dimensions disagree, x is {}x{} and w is {}x{}",
            x.rows, x.cols, w.rows, w.cols
        )));
    }
    if let Some(b) = b {
        if b.len() != w.cols {
            return Err(Error::Config(format!(
                "affine: bias has length {} but w is {}x{}",
                b.len(),
                w.rows,
                w.cols
            )));
        }
    }
    let mut out = Matrix::zeros(x.rows, w.cols);
    matmul_into(x, w, &mut out);
    if let Some(b) = b {
        for row in out.data.chunks_mut(w.cols.max(1)) {
            for (o, &bj) in row.iter_mut().zip(b) {
                *o = *o + bj;
            }
        }
    }
    ensure_finite("affine", &out.data)?;
    Ok(out)
}

/// i-k-j loop; the inner loop streams one row of `w` into one row of `out`.
fn matmul_into<T: Real>(x: &Matrix<T>, w: &Matrix<T>, out: &mut Matrix<T>) {
    let q = w.cols;
    if q == 0 {
        return;
    }
    for (xi, oi) in x.row_iter().zip(out.data.chunks_mut(q)) {
        for (k, &xik) in xi.iter().enumerate() {
            if xik == T::zero() {
                continue;
            }
            let wk = &w.data[k * q..(k + 1) * q];
            for (o, &wkj) in oi.iter_mut().zip(wk) {
                *o = *o + xik * wkj;
            }
        }
    }
}

/// Gradients of [`affine`] with respect to its inputs.
pub struct AffineGrads {
    pub dx: Matrix,
    pub dw: Matrix,
    pub db: Vec<f64>,
}

pub fn affine_backward(x: &Matrix, w: &Matrix, dout: &Matrix) -> Result<AffineGrads> {
    if dout.rows != x.rows || dout.cols != w.cols || x.cols != w.rows {
        return Err(Error::Config(format!(
            "affine_backward: x {}x{}, w {}x{}, dout {}x{} are inconsistent",
            x.rows, x.cols, w.rows, w.cols, dout.rows, dout.cols
        )));
    }
    // dx = dout · wᵀ
    let mut dx = Matrix::zeros(x.rows, x.cols);
    for (di, dxi) in dout.row_iter().zip(dx.data.chunks_mut(x.cols.max(1))) {
        for (k, dxik) in dxi.iter_mut().enumerate() {
            *dxik = dot(di, w.row(k));
        }
    }
    let dw = outer_accumulate(x, dout);
    let db = column_sums(dout);
    Ok(AffineGrads { dx, dw, db })
}

/// `xᵀ · d`, accumulated row by row.
pub fn outer_accumulate(x: &Matrix, d: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.cols, d.cols);
    for (xi, di) in x.row_iter().zip(d.row_iter()) {
        for (k, &xik) in xi.iter().enumerate() {
            if xik == 0.0 {
                continue;
            }
            for (o, &dij) in out.row_mut(k).iter_mut().zip(di) {
                *o += xik * dij;
            }
        }
    }
    out
}

pub fn column_sums(x: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; x.cols];
    for row in x.row_iter() {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Row vector times matrix: `v · w (+ b)`.
pub fn vec_affine<T: Real>(v: &[T], w: &Matrix<T>, b: Option<&[T]>) -> Vec<T> {
    debug_assert_eq!(v.len(), w.rows);
    let mut out = match b {
        Some(b) => b.to_vec(),
        None => vec![T::zero(); w.cols],
    };
    for (k, &vk) in v.iter().enumerate() {
        for (o, &wkj) in out.iter_mut().zip(w.row(k)) {
            *o = *o + vk * wkj;
        }
    }
    out
}

/// `w · d`, the input gradient of [`vec_affine`].
pub fn vec_affine_input_grad(w: &Matrix, d: &[f64]) -> Vec<f64> {
    w.row_iter().map(|wk| dot(wk, d)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Relu,
    Logistic,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Elu => {
                if x > T::zero() {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Relu => x.max(T::zero()),
            Activation::Logistic => logistic(x),
        }
    }

    /// Derivative evaluated from the pre-activation input `x` and the cached
    /// output `y = apply(x)`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Logistic => y * (1.0 - y),
        }
    }

    pub fn forward<T: Real>(self, x: &Matrix<T>) -> Matrix<T> {
        x.map(|v| self.apply(v))
    }

    pub fn forward_vec<T: Real>(self, x: &[T]) -> Vec<T> {
        x.iter().map(|&v| self.apply(v)).collect()
    }

    /// `dx = dout ⊙ f'(x)` given cached input and output.
    pub fn backward(self, x: &[f64], y: &[f64], dout: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(y)
            .zip(dout)
            .map(|((&x, &y), &d)| d * self.derivative(x, y))
            .collect()
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Mean,
    Sum,
}

/// Column-wise mean or sum over rows.
pub fn row_reduce<T: Real>(x: &Matrix<T>, kind: Reduce) -> Result<Vec<T>> {
    if x.rows == 0 {
        return Err(Error::EmptySet("row_reduce over a matrix with zero rows".into()));
    }
    let mut out = vec![T::zero(); x.cols];
    for row in x.row_iter() {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    if kind == Reduce::Mean {
        let n: T = cast(x.rows as f64);
        for o in &mut out {
            *o = *o / n;
        }
    }
    ensure_finite("row_reduce", &out)?;
    Ok(out)
}

/// Broadcasts `dout` (scaled by 1/n for the mean) back to every one of `n` rows.
pub fn row_reduce_backward(dout: &[f64], n: usize, kind: Reduce) -> Matrix {
    let scale = match kind {
        Reduce::Mean => 1.0 / n as f64,
        Reduce::Sum => 1.0,
    };
    let mut out = Matrix::zeros(n, dout.len());
    for i in 0..n {
        for (o, &d) in out.row_mut(i).iter_mut().zip(dout) {
            *o = d * scale;
        }
    }
    out
}

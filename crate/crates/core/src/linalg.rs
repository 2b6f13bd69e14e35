//! Small dense complex linear algebra.
//!
//! MIMO dimensions are tiny (a handful of antennas), so matrices are plain
//! row-major buffers and the factorizations are written out directly. The
//! two entry points the detectors rely on are [`householder_qr`], which
//! fixes the phase so the diagonal of `R` is real and nonnegative, and
//! [`cholesky_solve`] for Hermitian positive definite systems.

use num_complex::Complex;
use thiserror::Error;

use crate::real::Real;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    /// Cholesky pivot was not strictly positive; the matrix is not
    /// Hermitian positive definite to working precision.
    #[error("matrix is not positive definite (pivot {pivot} at column {col})")]
    NotPositiveDefinite { col: usize, pivot: f64 },
}

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> CMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex::new(T::zero(), T::zero()); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::new(T::one(), T::zero());
        }
        m
    }

    /// Builds a matrix by evaluating `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn col(&self, j: usize) -> Vec<Complex<T>> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Conjugate transpose.
    pub fn hermitian(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matrix product dimension mismatch");
        Self::from_fn(self.rows, other.cols, |i, j| {
            let mut acc = Complex::new(T::zero(), T::zero());
            for k in 0..self.cols {
                acc += self[(i, k)] * other[(k, j)];
            }
            acc
        })
    }

    pub fn mul_vec(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(self.cols, v.len(), "matrix-vector dimension mismatch");
        (0..self.rows)
            .map(|i| {
                let mut acc = Complex::new(T::zero(), T::zero());
                for k in 0..self.cols {
                    acc += self[(i, k)] * v[k];
                }
                acc
            })
            .collect()
    }

    /// Gram matrix `A^H A`.
    pub fn gram(&self) -> Self {
        Self::from_fn(self.cols, self.cols, |i, j| {
            let mut acc = Complex::new(T::zero(), T::zero());
            for k in 0..self.rows {
                acc += self[(k, i)].conj() * self[(k, j)];
            }
            acc
        })
    }

    /// Largest absolute difference to `other`, over real and imaginary parts.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = a - b;
                d.re.abs().max(d.im.abs())
            })
            .fold(T::zero(), T::max)
    }
}

impl<T> std::ops::Index<(usize, usize)> for CMat<T> {
    type Output = Complex<T>;
    fn index(&self, (i, j): (usize, usize)) -> &Complex<T> {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for CMat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[i * self.cols + j]
    }
}

/// Thin QR factorization of a tall matrix.
#[derive(Debug, Clone)]
pub struct QrFactors<T> {
    /// `rows x cols` matrix with orthonormal columns.
    pub q: CMat<T>,
    /// `cols x cols` upper triangular factor; diagonal real and nonnegative.
    pub r: CMat<T>,
}

impl<T: Real> QrFactors<T> {
    /// Diagonal entry of `R` as a real scalar.
    pub fn r_diag(&self, j: usize) -> T {
        self.r[(j, j)].re
    }

    /// A structurally rank-deficient column leaves a zero pivot behind, and
    /// the corresponding layer carries no statistic (erasure).
    pub fn is_erasure(&self, j: usize) -> bool {
        self.r_diag(j) == T::zero()
    }
}

/// Householder QR of an `m x n` matrix with `m >= n`.
///
/// The reflector phases are chosen so every diagonal entry of `R` comes out
/// real and nonnegative, which is what lets the per-layer statistic split
/// into independent I/Q components downstream. A column that is exactly
/// zero (after earlier reflections) yields a zero pivot instead of an
/// error; `Q` keeps orthonormal columns either way.
pub fn householder_qr<T: Real>(a: &CMat<T>) -> QrFactors<T> {
    let (m, n) = (a.rows(), a.cols());
    assert!(m >= n, "QR expects a tall matrix, got {m}x{n}");

    let zero = Complex::new(T::zero(), T::zero());
    let mut work = a.clone();
    // Reflector k is (v, ||v||^2); None when the column was already zero.
    let mut reflectors: Vec<Option<(Vec<Complex<T>>, T)>> = Vec::with_capacity(n);

    for k in 0..n {
        let x: Vec<Complex<T>> = (k..m).map(|i| work[(i, k)]).collect();
        let beta = x.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt();
        if beta == T::zero() {
            reflectors.push(None);
            continue;
        }
        let x0_abs = x[0].norm();
        let phi = if x0_abs == T::zero() {
            Complex::new(T::one(), T::zero())
        } else {
            x[0] / x0_abs
        };
        // v = x + phi*beta*e1 avoids cancellation; the reflector maps x to
        // -phi*beta*e1.
        let mut v = x;
        v[0] += phi * beta;
        let vnorm2 = v.iter().map(|c| c.norm_sqr()).sum::<T>();
        apply_reflector(&mut work, k, &v, vnorm2, k);
        work[(k, k)] = -phi * beta;
        for i in (k + 1)..m {
            work[(i, k)] = zero;
        }
        reflectors.push(Some((v, vnorm2)));
    }

    let mut r = CMat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            r[(i, j)] = work[(i, j)];
        }
    }

    // Q = P_0 P_1 ... P_{n-1} [I; 0], accumulated by applying the
    // reflectors to the identity block in reverse order.
    let mut q = CMat::zeros(m, n);
    for j in 0..n {
        q[(j, j)] = Complex::new(T::one(), T::zero());
    }
    for k in (0..n).rev() {
        if let Some((v, vnorm2)) = &reflectors[k] {
            apply_reflector(&mut q, k, v, *vnorm2, 0);
        }
    }

    // Absorb the remaining diagonal phases into Q so that R has a real
    // nonnegative diagonal: R <- D^H R, Q <- Q D with unitary diagonal D.
    for k in 0..n {
        let d = r[(k, k)];
        let mag = d.norm();
        if mag == T::zero() {
            continue;
        }
        let u = d / mag;
        let u_conj = u.conj();
        for j in k..n {
            r[(k, j)] *= u_conj;
        }
        r[(k, k)] = Complex::new(mag, T::zero());
        for i in 0..m {
            q[(i, k)] *= u;
        }
    }

    QrFactors { q, r }
}

/// Applies `I - 2 v v^H / ||v||^2` to rows `row0..` of columns `col0..`.
fn apply_reflector<T: Real>(
    mat: &mut CMat<T>,
    row0: usize,
    v: &[Complex<T>],
    vnorm2: T,
    col0: usize,
) {
    let m = mat.rows();
    let two = T::of(2.0);
    for j in col0..mat.cols() {
        let mut dot = Complex::new(T::zero(), T::zero());
        for (idx, i) in (row0..m).enumerate() {
            dot += v[idx].conj() * mat[(i, j)];
        }
        let scale = dot * (two / vnorm2);
        for (idx, i) in (row0..m).enumerate() {
            let delta = v[idx] * scale;
            mat[(i, j)] -= delta;
        }
    }
}

/// Solves `A X = B` for Hermitian positive definite `A` via `L L^H`.
pub fn cholesky_solve<T: Real>(a: &CMat<T>, b: &CMat<T>) -> Result<CMat<T>, LinalgError> {
    let n = a.rows();
    assert_eq!(a.cols(), n, "Cholesky expects a square matrix");
    assert_eq!(b.rows(), n, "right-hand side has {} rows, expected {n}", b.rows());

    let mut l = CMat::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)].re;
        for k in 0..j {
            diag -= l[(j, k)].norm_sqr();
        }
        if diag <= T::zero() {
            return Err(LinalgError::NotPositiveDefinite {
                col: j,
                pivot: diag.to_f64(),
            });
        }
        let pivot = diag.sqrt();
        l[(j, j)] = Complex::new(pivot, T::zero());
        for i in (j + 1)..n {
            let mut acc = a[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = acc / pivot;
        }
    }

    // Forward substitution L Y = B, then backward L^H X = Y.
    let mut x = b.clone();
    for col in 0..x.cols() {
        for i in 0..n {
            let mut acc = x[(i, col)];
            for k in 0..i {
                acc -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = acc / l[(i, i)].re;
        }
        for i in (0..n).rev() {
            let mut acc = x[(i, col)];
            for k in (i + 1)..n {
                acc -= l[(k, i)].conj() * x[(k, col)];
            }
            x[(i, col)] = acc / l[(i, i)].re;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn qr_of_real_column_matches_hand_result() {
        // (3, 4)^T factors as Q = (0.6, 0.8)^T, R = (5).
        let mut h = CMat::zeros(2, 1);
        h[(0, 0)] = c(3.0, 0.0);
        h[(1, 0)] = c(4.0, 0.0);
        let f = householder_qr(&h);
        assert!((f.q[(0, 0)] - c(0.6, 0.0)).norm() < 1e-12);
        assert!((f.q[(1, 0)] - c(0.8, 0.0)).norm() < 1e-12);
        assert!((f.r[(0, 0)] - c(5.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn qr_reconstructs_and_is_orthonormal() {
        let h = CMat::from_fn(4, 3, |i, j| {
            c(
                ((i * 7 + j * 3) % 5) as f64 - 2.0,
                ((i * 3 + j * 11) % 7) as f64 - 3.0,
            )
        });
        let f = householder_qr(&h);
        let qh_q = f.q.gram();
        assert!(
            qh_q.max_abs_diff(&CMat::identity(3)) < 1e-12,
            "Q columns must be orthonormal"
        );
        let qr = f.q.mul(&f.r);
        assert!(qr.max_abs_diff(&h) < 1e-12, "QR must reconstruct H");
        for j in 0..3 {
            assert!(f.r[(j, j)].im == 0.0 && f.r[(j, j)].re >= 0.0);
            for i in (j + 1)..3 {
                assert_eq!(f.r[(i, j)], c(0.0, 0.0), "R must be upper triangular");
            }
        }
    }

    #[test]
    fn qr_zero_column_flags_erasure() {
        let mut h = CMat::zeros(3, 2);
        h[(0, 1)] = c(1.0, -2.0);
        h[(1, 1)] = c(0.5, 0.0);
        h[(2, 1)] = c(0.0, 1.0);
        let f = householder_qr(&h);
        assert!(f.is_erasure(0));
        assert!(!f.is_erasure(1));
        let qh_q = f.q.gram();
        assert!(qh_q.max_abs_diff(&CMat::identity(2)) < 1e-12);
        assert!(f.q.mul(&f.r).max_abs_diff(&h) < 1e-12);
    }

    #[test]
    fn cholesky_solves_hermitian_system() {
        // A = M^H M + I is Hermitian positive definite by construction.
        let m = CMat::from_fn(3, 3, |i, j| c((i + 2 * j) as f64, (i as f64) - (j as f64)));
        let mut a = m.gram();
        for i in 0..3 {
            a[(i, i)] += c(1.0, 0.0);
        }
        let b = CMat::from_fn(3, 2, |i, j| c(1.0 + i as f64, j as f64));
        let x = cholesky_solve(&a, &b).unwrap();
        assert!(a.mul(&x).max_abs_diff(&b) < 1e-10);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = CMat::identity(2);
        a[(1, 1)] = c(-1.0, 0.0);
        let b = CMat::identity(2);
        assert!(matches!(
            cholesky_solve(&a, &b),
            Err(LinalgError::NotPositiveDefinite { col: 1, .. })
        ));
    }
}

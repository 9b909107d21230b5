//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, Dyn, Matrix2, Matrix3, Vector2, Vector3};

use crate::{Error, Result};

/// Smallest relative jitter tried when a kernel matrix is not numerically
/// positive definite.
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter before giving up.
pub const JITTER_MAX: f64 = 1e-2;

/// Cholesky of `a + jitter * scale * I`, escalating the jitter by 10x from
/// `start` up to [`JITTER_MAX`]. Returns the factor and the jitter actually used.
pub fn cholesky_jittered(
    a: &DMatrix<f64>,
    scale: f64,
    start: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = start;
    loop {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter * scale;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
        if jitter >= JITTER_MAX {
            return Err(Error::Numerical(format!(
                "matrix of size {} not positive definite with jitter {jitter:e}",
                a.nrows()
            )));
        }
        jitter *= 10.0;
        if jitter > JITTER_MAX {
            jitter = JITTER_MAX;
        }
    }
}

pub fn symmetrize3(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// Square-root factor of a 3x3 PSD matrix: Cholesky when possible, otherwise an
/// eigen-decomposition with negative eigenvalues clipped to zero.
pub fn psd_sqrt3(m: &Matrix3<f64>) -> Matrix3<f64> {
    if let Some(c) = m.cholesky() {
        return c.l();
    }
    let eig = symmetrize3(m).symmetric_eigen();
    let d = Vector3::from_iterator(eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()));
    eig.eigenvectors * Matrix3::from_diagonal(&d)
}

/// Lower square-root factor of a symmetric 2x2 covariance. Falls back to the
/// element-wise square root of the diagonal when the Cholesky factorization
/// does not exist (e.g. a zero matrix).
pub fn sqrt2_or_diag(m: &Matrix2<f64>) -> Matrix2<f64> {
    let a = m[(0, 0)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let c = m[(1, 1)];
    if a > 0.0 {
        let l00 = a.sqrt();
        let l10 = b / l00;
        let rest = c - l10 * l10;
        if rest > 0.0 {
            return Matrix2::new(l00, 0.0, l10, rest.sqrt());
        }
    }
    Matrix2::from_diagonal(&Vector2::new(a.max(0.0).sqrt(), c.max(0.0).sqrt()))
}

/// True when the symmetric matrix admits a Cholesky factor after a tiny ridge.
pub fn is_psd3(m: &Matrix3<f64>, ridge: f64) -> bool {
    (m + Matrix3::identity() * ridge).cholesky().is_some()
}

pub fn is_psd2(m: &Matrix2<f64>, ridge: f64) -> bool {
    (m + Matrix2::identity() * ridge).cholesky().is_some()
}

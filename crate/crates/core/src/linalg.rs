//! Small dense helpers shared by the solvers.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::model::CMat;

/// `aᴴ b` for columns `i` of `a` and `j` of `b`.
#[inline]
pub fn col_dot(a: &CMat, i: usize, b: &CMat, j: usize) -> Complex64 {
    a.column(i)
        .iter()
        .zip(b.column(j).iter())
        .fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y)
}

/// Cross-gain matrix `G[m][j] = |h_mᴴ w_j|²` (rows: receiving user).
pub fn cross_gains(h: &CMat, w: &CMat) -> DMatrix<f64> {
    let m_users = h.ncols();
    DMatrix::from_fn(m_users, w.ncols(), |m, j| col_dot(h, m, w, j).norm_sqr())
}

/// Divides column `m` of `h` by `sqrt(noise[m])`, giving unit-noise channels.
pub fn whiten(h: &CMat, noise: &[f64]) -> CMat {
    let mut out = h.clone();
    for (m, mut col) in out.column_iter_mut().enumerate() {
        col.scale_mut(1.0 / noise[m].sqrt());
    }
    out
}

/// Row-wise squared norms.
pub fn row_powers(w: &CMat) -> Vec<f64> {
    (0..w.nrows()).map(|n| w.row(n).iter().map(|x| x.norm_sqr()).sum()).collect()
}

pub fn frob_sq(w: &CMat) -> f64 {
    w.iter().map(|x| x.norm_sqr()).sum()
}

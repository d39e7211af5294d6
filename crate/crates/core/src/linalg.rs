//! Shared numeric aliases and small helpers.

use nalgebra::{Complex, DMatrix, DVector, Matrix3};

pub type C64 = Complex<f64>;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

/// `a^H b`.
pub fn inner(a: &CVector, b: &CVector) -> C64 {
    a.dotc(b)
}

/// Total transmit power `Σ_k ‖w_k‖²` of a precoder.
pub fn frobenius_power(w: &CMatrix) -> f64 {
    w.iter().map(|z| z.norm_sqr()).sum()
}

pub fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

pub fn all_finite<'a>(it: impl IntoIterator<Item = &'a f64>) -> bool {
    it.into_iter().all(|x| x.is_finite())
}

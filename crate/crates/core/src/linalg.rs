//! Complex vector helpers shared by the solver, channel and waveform code.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const J: C64 = C64 { re: 0.0, im: 1.0 };

/// `h^H b`.
pub fn dotc(h: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(h.len(), b.len());
    h.iter().zip(b).fold(C64::new(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y)
}

pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

pub fn norm(v: &[C64]) -> f64 {
    norm_sqr(v).sqrt()
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Relative Frobenius error `‖a − b‖ / ‖b‖`.
pub fn rel_error(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den = norm_sqr(b);
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Dense `W x`.
pub fn matvec(w: &CMatrix, x: &[C64]) -> Vec<C64> {
    assert_eq!(w.ncols(), x.len());
    let mut y = vec![C64::new(0.0, 0.0); w.nrows()];
    for (j, xj) in x.iter().enumerate() {
        for (yi, wij) in y.iter_mut().zip(w.column(j).iter()) {
            *yi += wij * xj;
        }
    }
    y
}

/// Complex vector `b` packed as `[Re b; Im b]`.
pub fn to_real(b: &[C64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(2 * b.len());
    x.extend(b.iter().map(|z| z.re));
    x.extend(b.iter().map(|z| z.im));
    x
}

pub fn from_real(x: &[f64]) -> Vec<C64> {
    let n = x.len() / 2;
    (0..n).map(|i| C64::new(x[i], x[n + i])).collect()
}

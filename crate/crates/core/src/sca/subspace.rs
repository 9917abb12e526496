use crate::error::{Error, Result};
use crate::linalg::{frobenius, CMatrix, C64};

/// Orthonormal basis of the channel column space and the channels
/// expressed in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    /// `N_t × r`.
    pub u: CMatrix,
    /// `r × K`, column `k` is `U^H h_k`.
    pub h_tilde: CMatrix,
    pub rank: usize,
}

impl Subspace {
    pub fn lift(&self, b: &[C64]) -> Vec<C64> {
        let mut f = vec![C64::new(0.0, 0.0); self.u.nrows()];
        for (j, bj) in b.iter().enumerate() {
            for (fi, uij) in f.iter_mut().zip(self.u.column(j).iter()) {
                *fi += uij * bj;
            }
        }
        f
    }
}

/// Modified Gram–Schmidt with one reorthogonalisation pass. Columns whose
/// residual falls below `1e-10 ‖H‖_F` are dropped, so repeated channels
/// collapse the rank.
pub fn subspace_reduce(h: &CMatrix) -> Result<Subspace> {
    let (n_t, k) = (h.nrows(), h.ncols());
    let scale = frobenius(h);
    if k == 0 || scale == 0.0 || !scale.is_finite() {
        return Err(Error::InvalidArgument("channel matrix must be nonzero and finite".into()));
    }
    let tol = 1e-10 * scale;
    let mut basis: Vec<Vec<C64>> = Vec::new();
    for j in 0..k {
        let mut v: Vec<C64> = h.column(j).iter().copied().collect();
        for _ in 0..2 {
            for q in &basis {
                let c: C64 = q.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= c * qi;
                }
            }
        }
        let nrm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nrm > tol {
            for vi in &mut v {
                *vi /= nrm;
            }
            basis.push(v);
        }
    }
    let r = basis.len();
    let u = CMatrix::from_fn(n_t, r, |i, j| basis[j][i]);
    let h_tilde = u.adjoint() * h;
    Ok(Subspace { u, h_tilde, rank: r })
}

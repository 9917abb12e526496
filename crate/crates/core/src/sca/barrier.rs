//! Log-barrier interior-point solver for one convexified subproblem.
//!
//! Works on the real vector `y = [Re b; Im b] / sqrt(P)` with channels
//! scaled by `sqrt(P) / a_max`, so the power cap reads `‖y‖ ≤ 1` and the
//! small-signal cap reads `|α_k| ≤ 1` with `α_k = a_k / a_max`. The
//! objective is divided by its value at the expansion point.
//!
//! The barrier Hessian is `d I + V Vᵀ` with `V` holding two columns per
//! client plus one for `y`; it is never formed explicitly.

use nalgebra::{DMatrix, DVector};

use super::nnls::nnls;
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierOptions {
    pub mu_start: f64,
    pub mu_end: f64,
    pub mu_factor: f64,
    pub newton_tol: f64,
    pub max_inner: usize,
    pub tol_kkt: f64,
    /// Slack below which a constraint counts as active in the KKT check.
    pub active_tol: f64,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            mu_start: 1.0,
            mu_end: 1e-8,
            mu_factor: 10.0,
            newton_tol: 1e-11,
            max_inner: 200,
            tol_kkt: 1e-6,
            active_tol: 1e-9,
        }
    }
}

/// Real-form channels: `Re a_k = p_kᵀ x`, `Im a_k = q_kᵀ x`.
#[derive(Debug, Clone)]
pub(crate) struct RealChannels {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl RealChannels {
    pub fn new(h: &CMatrix, scale: f64) -> Self {
        let (n, k) = (h.nrows(), h.ncols());
        let mut p = DMatrix::zeros(2 * n, k);
        let mut q = DMatrix::zeros(2 * n, k);
        for j in 0..k {
            for i in 0..n {
                let v = h[(i, j)] * scale;
                p[(i, j)] = v.re;
                p[(n + i, j)] = v.im;
                q[(i, j)] = -v.im;
                q[(n + i, j)] = v.re;
            }
        }
        Self { p, q }
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn gains(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (self.p.tr_mul(y), self.q.tr_mul(y))
    }
}

/// Normalised subproblem data.
#[derive(Debug, Clone)]
pub(crate) struct Scaled<'a> {
    pub ch: &'a RealChannels,
    pub alpha: Vec<C64>,
    pub t: Vec<f64>,
    pub chi: Vec<f64>,
    pub lam: f64,
}

struct Point {
    ubar: Vec<f64>,
    s0: f64,
    sk: Vec<f64>,
    pg: DVector<f64>,
    qg: DVector<f64>,
    ysq: f64,
}

impl Scaled<'_> {
    fn point(&self, y: &DVector<f64>) -> Point {
        let (pg, qg) = self.ch.gains(y);
        let ubar = self
            .alpha
            .iter()
            .enumerate()
            .map(|(k, a)| 2.0 * (a.re * pg[k] + a.im * qg[k]) - a.norm_sqr())
            .collect();
        let sk = (0..self.alpha.len()).map(|k| 1.0 - pg[k] * pg[k] - qg[k] * qg[k]).collect();
        let ysq = y.norm_squared();
        Point { ubar, s0: 1.0 - ysq, sk, pg, qg, ysq }
    }

    fn strictly_feasible(&self, pt: &Point) -> bool {
        pt.s0 > 0.0
            && pt.sk.iter().all(|s| *s > 0.0)
            && pt.ubar.iter().zip(&self.t).all(|(u, t)| u - t > 0.0 && *u > 0.0)
    }

    fn objective_at(&self, pt: &Point) -> f64 {
        self.lam * pt.ysq + pt.ubar.iter().zip(&self.chi).map(|(u, c)| c / u).sum::<f64>()
    }

    pub fn objective(&self, y: &DVector<f64>) -> f64 {
        self.objective_at(&self.point(y))
    }

    fn phi(&self, pt: &Point, mu: f64) -> f64 {
        let mut v = self.objective_at(pt) / mu - pt.s0.ln();
        for k in 0..self.alpha.len() {
            v -= (pt.ubar[k] - self.t[k]).ln() + pt.sk[k].ln();
        }
        v
    }

    /// Gradient of the barrier function and the Hessian in `d I + V Vᵀ`
    /// form.
    fn derivatives(&self, y: &DVector<f64>, pt: &Point, mu: f64) -> (DVector<f64>, f64, DMatrix<f64>) {
        let k = self.alpha.len();
        let d = 2.0 * self.lam / mu + 2.0 / pt.s0;
        let mut cp = DVector::zeros(k);
        let mut cq = DVector::zeros(k);
        let mut v = DMatrix::zeros(self.ch.dim(), 2 * k + 1);
        v.set_column(0, &(y * (2.0 / pt.s0)));
        for j in 0..k {
            let (a, u, s) = (self.alpha[j], pt.ubar[j], pt.sk[j]);
            let slack = u - self.t[j];
            let cg = -self.chi[j] / (mu * u * u) - 1.0 / slack;
            let (gr, gi) = (2.0 * a.re, 2.0 * a.im);
            let (pr, pi) = (pt.pg[j], pt.qg[j]);
            cp[j] = cg * gr + 2.0 / s * pr;
            cq[j] = cg * gi + 2.0 / s * pi;
            let wg = 2.0 * self.chi[j] / (mu * u * u * u) + 1.0 / (slack * slack);
            let wv = 4.0 / (s * s);
            let m00 = wg * gr * gr + wv * pr * pr + 2.0 / s;
            let m01 = wg * gr * gi + wv * pr * pi;
            let m11 = wg * gi * gi + wv * pi * pi + 2.0 / s;
            let l00 = m00.sqrt();
            let l10 = m01 / l00;
            let l11 = (m11 - l10 * l10).max(0.0).sqrt();
            let pcol = self.ch.p.column(j);
            let qcol = self.ch.q.column(j);
            v.set_column(1 + 2 * j, &(pcol * l00 + qcol * l10));
            v.set_column(2 + 2 * j, &(qcol * l11));
        }
        let grad = y * d + &self.ch.p * cp + &self.ch.q * cq;
        (grad, d, v)
    }
}

/// Solves `(d I + V Vᵀ) x = rhs` for `rhs` in the range of `V`.
///
/// With `V = Q R` the system restricted to `range(Q)` is `d I + R Rᵀ`,
/// the normal matrix of `[Rᵀ; sqrt(d) I]`, which is factored by a second
/// QR. Neither step squares the stiff barrier columns, and the cost is
/// linear in the dimension.
fn solve_hessian(d: f64, v: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = v.clone().qr();
    let (q, r1) = (qr.q(), qr.r());
    let (k, m) = r1.shape();
    // Stiff rows first, otherwise Householder smears their rounding error
    // over the soft ones.
    let mut order: Vec<usize> = (0..m).collect();
    let norms: Vec<f64> = (0..m).map(|j| r1.column(j).norm()).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut a = DMatrix::zeros(m + k, k);
    for (row, &j) in order.iter().enumerate() {
        a.row_mut(row).copy_from(&r1.column(j).transpose());
    }
    a.view_mut((m, 0), (k, k)).fill_diagonal(d.sqrt());
    let r2 = a.qr().r();
    let fail = || Error::SubproblemInfeasible("singular barrier Hessian".into());
    let z = r2.tr_solve_upper_triangular(&q.tr_mul(rhs)).ok_or_else(fail)?;
    let z = r2.solve_upper_triangular(&z).ok_or_else(fail)?;
    Ok(q * z)
}

/// Damped Newton on the barrier function for each `μ` of the schedule.
pub(crate) fn barrier_solve(
    sc: &Scaled,
    y0: DVector<f64>,
    opts: &BarrierOptions,
) -> Result<DVector<f64>> {
    let mut y = y0;
    let mut pt = sc.point(&y);
    if !sc.strictly_feasible(&pt) {
        return Err(Error::SubproblemInfeasible("start point is not strictly feasible".into()));
    }
    let mut mu = opts.mu_start;
    loop {
        let mut phi = sc.phi(&pt, mu);
        let mut converged = false;
        for _ in 0..opts.max_inner {
            let (grad, d, v) = sc.derivatives(&y, &pt, mu);
            let step = -solve_hessian(d, &v, &grad)?;
            // As a quadratic form: −gᵀΔ loses its sign once the gradient is
            // stiff.
            let dec = d * step.norm_squared() + v.tr_mul(&step).norm_squared();
            if !(dec.is_finite()) {
                return Err(Error::SubproblemInfeasible("non-finite Newton decrement".into()));
            }
            if dec * 0.5 <= opts.newton_tol {
                converged = true;
                break;
            }
            // Below the rounding level of φ the decrement carries no signal.
            if dec * 0.5 <= f64::EPSILON * 16.0 * phi.abs().max(1.0) {
                converged = true;
                break;
            }
            let mut s = 1.0;
            let mut moved = false;
            for _ in 0..80 {
                let cand = &y + &step * s;
                let cpt = sc.point(&cand);
                if sc.strictly_feasible(&cpt) {
                    let cphi = sc.phi(&cpt, mu);
                    if cphi <= phi - 0.25 * s * dec {
                        y = cand;
                        pt = cpt;
                        phi = cphi;
                        moved = true;
                        break;
                    }
                }
                s *= 0.5;
            }
            if !moved {
                // No descent left at working precision.
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::MaxInnerIterations(opts.max_inner));
        }
        if mu <= opts.mu_end * (1.0 + 1e-12) {
            return Ok(y);
        }
        mu = (mu / opts.mu_factor).max(opts.mu_end);
    }
}

/// Relative stationarity residual at `y`, with multipliers fitted by NNLS
/// over constraints whose slack is at most `active_tol`.
pub(crate) fn kkt_residual(sc: &Scaled, y: &DVector<f64>, active_tol: f64) -> f64 {
    let pt = sc.point(y);
    let k = sc.alpha.len();
    let gvec = |j: usize| -> DVector<f64> {
        sc.ch.p.column(j) * (2.0 * sc.alpha[j].re) + sc.ch.q.column(j) * (2.0 * sc.alpha[j].im)
    };
    let mut grad = y * (2.0 * sc.lam);
    for j in 0..k {
        grad -= gvec(j) * (sc.chi[j] / (pt.ubar[j] * pt.ubar[j]));
    }
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for j in 0..k {
        if pt.ubar[j] - sc.t[j] <= active_tol {
            cols.push(-gvec(j));
        }
        if pt.sk[j] <= active_tol {
            cols.push((sc.ch.p.column(j) * pt.pg[j] + sc.ch.q.column(j) * pt.qg[j]) * 2.0);
        }
    }
    if pt.s0 <= active_tol {
        cols.push(y * 2.0);
    }
    let scale = grad.norm().max(1.0);
    if cols.is_empty() {
        return grad.norm() / scale;
    }
    let a = DMatrix::from_columns(&cols);
    let lam = nnls(&a, &(-&grad));
    (grad + a * lam).norm() / scale
}

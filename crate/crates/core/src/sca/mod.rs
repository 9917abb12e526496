//! Per-layer joint beamforming / client scaling design.
//!
//! The client scalings have a closed form for a fixed beamformer
//! ([`optimal_beta`]), which leaves a beamforming-only problem with
//! reciprocal-gain terms. That problem is convexified around the current
//! iterate with tangent lower bounds on `|h_k^H f|²` and re-solved until
//! the objective stops decreasing. All work happens in the column space of
//! the channel matrix ([`subspace_reduce`]); [`solve_layer_full`] runs the
//! same iteration on the full antenna dimension for comparison.

mod barrier;
mod nnls;
mod subspace;

pub use barrier::BarrierOptions;
pub use nnls::nnls;
pub use subspace::{subspace_reduce, Subspace};

use nalgebra::DVector;

use barrier::{barrier_solve, kkt_residual, RealChannels, Scaled};
use crate::error::{Error, Result};
use crate::linalg::{dotc, from_real, norm, norm_sqr, to_real, CMatrix, C64};
use crate::metrics::{bs_energy_coefficient, client_coefficient, compute_kappa, required_gain, OperatingPoint};
use crate::params::{LayerSpec, SystemParams};

/// Energy-minimising client scaling for a fixed gain `a`: `β = u / a`.
pub fn optimal_beta(a: C64, u: f64, beta_max: f64) -> Result<C64> {
    if !(u > 0.0 && beta_max > 0.0) {
        return Err(Error::Domain(format!("optimal_beta needs u > 0 and beta_max > 0, got {u}, {beta_max}")));
    }
    let required = u / beta_max;
    if !(a.norm() >= required) {
        return Err(Error::InfeasibleClient { gain: a.norm(), required });
    }
    Ok(u / a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerProblem {
    /// `N_t × K`.
    pub h: CMatrix,
    pub u: Vec<f64>,
    pub chi: Vec<f64>,
    pub lambda: f64,
    /// `λ T_w P_w0 / η_BS`, the weight on `‖f‖²`.
    pub bs_energy_coeff: f64,
    pub a_max: f64,
    pub beta_max: f64,
    pub power_ratio: f64,
}

impl LayerProblem {
    pub fn new(h: CMatrix, eps: &[f64], layer: &LayerSpec, sp: &SystemParams, lambda: f64) -> Result<Self> {
        if eps.len() != h.ncols() {
            return Err(Error::LengthMismatch { left: eps.len(), right: h.ncols() });
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!("lambda must lie in [0,1], got {lambda}")));
        }
        let kappa = compute_kappa(sp);
        let c = client_coefficient(layer, sp);
        let u = eps.iter().map(|e| required_gain(*e, kappa)).collect::<Result<Vec<_>>>()?;
        let chi = u.iter().map(|u| c * u * u).collect();
        Ok(Self {
            h,
            u,
            chi,
            lambda,
            bs_energy_coeff: lambda * bs_energy_coefficient(layer, sp)?,
            a_max: sp.a_max(),
            beta_max: sp.beta_max(),
            power_ratio: sp.power_ratio(),
        })
    }

    pub fn k(&self) -> usize {
        self.h.ncols()
    }

    /// Lower bound on `|a_k|²` implied by the client power cap.
    pub fn gain_floor_sq(&self, k: usize) -> f64 {
        let t = self.u[k] / self.beta_max;
        t * t
    }

    /// Clients failing `u_k <= a_max β_max`.
    pub fn precheck(&self) -> Result<()> {
        let bad: Vec<usize> =
            (0..self.k()).filter(|&k| !(self.u[k] <= self.a_max * self.beta_max)).collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::LayerInfeasible { reason: "u_k exceeds a_max * beta_max".into(), clients: bad })
        }
    }

    /// Beamforming objective for gains `a` and `‖f‖²`.
    pub fn objective(&self, gains: &[C64], f_norm_sqr: f64) -> f64 {
        self.bs_energy_coeff * f_norm_sqr
            + (1.0 - self.lambda) * gains.iter().zip(&self.chi).map(|(a, c)| c / a.norm_sqr()).sum::<f64>()
    }
}

fn gains_of(h: &CMatrix, b: &[C64]) -> Vec<C64> {
    (0..h.ncols())
        .map(|k| h.column(k).iter().zip(b).map(|(hi, bi)| hi.conj() * bi).sum())
        .collect()
}

/// MRT direction at full power, scaled once more if it overdrives a mixer.
pub fn mrt_init(h_tilde: &CMatrix, sp: &SystemParams) -> Vec<C64> {
    mrt_with(h_tilde, sp.power_ratio(), sp.a_max())
}

fn mrt_with(h_tilde: &CMatrix, power_ratio: f64, a_max: f64) -> Vec<C64> {
    let r = h_tilde.nrows();
    let mut dir: Vec<C64> = (0..r).map(|i| h_tilde.row(i).iter().sum()).collect();
    let longest = (0..h_tilde.ncols()).map(|k| h_tilde.column(k).norm()).fold(0.0, f64::max);
    if norm(&dir) < 1e-12 * longest {
        dir = h_tilde.column(0).iter().copied().collect();
    }
    let scale = power_ratio.sqrt() / norm(&dir);
    let mut b: Vec<C64> = dir.iter().map(|v| v * scale).collect();
    let peak = gains_of(h_tilde, &b).iter().map(|a| a.norm()).fold(0.0, f64::max);
    if peak > a_max {
        let s = a_max / peak;
        for v in &mut b {
            *v *= s;
        }
    }
    b
}

/// Least-norm beamformer giving every client the gain
/// `sqrt(a_floor · a_max)`, used when the MRT start misses a floor.
fn balanced_init(h_tilde: &CMatrix, prob: &LayerProblem) -> Option<Vec<C64>> {
    let k = h_tilde.ncols();
    let target: Vec<C64> =
        (0..k).map(|j| C64::new((prob.gain_floor_sq(j).sqrt() * prob.a_max).sqrt(), 0.0)).collect();
    let ht = h_tilde.adjoint();
    let pinv = ht.clone().pseudo_inverse(1e-12).ok()?;
    let b = pinv * CMatrix::from_column_slice(k, 1, &target);
    Some(b.iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    GainFloor,
    Power,
    Saturation,
}

/// Constraint check of a beamformer with an absolute slack.
pub fn violations(prob: &LayerProblem, gains: &[C64], f_norm_sqr: f64, tol: f64) -> Vec<(usize, Violation)> {
    let mut out = Vec::new();
    for (k, a) in gains.iter().enumerate() {
        if a.norm() < prob.u[k] / prob.beta_max - tol {
            out.push((k, Violation::GainFloor));
        }
        if a.norm() > prob.a_max + tol {
            out.push((k, Violation::Saturation));
        }
    }
    if f_norm_sqr > prob.power_ratio * (1.0 + tol) {
        out.push((usize::MAX, Violation::Power));
    }
    out
}

/// Tangent lower bounds `ū_k(b) = 2 Re{a_k* h_k^H b} − |a_k|²` at `b_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub point: Vec<C64>,
    pub gains: Vec<C64>,
}

impl Surrogate {
    pub fn eval(&self, h: &CMatrix, b: &[C64]) -> Vec<f64> {
        gains_of(h, b).iter().zip(&self.gains).map(|(g, a)| 2.0 * (a.conj() * g).re - a.norm_sqr()).collect()
    }
}

pub fn build_surrogate(b_i: &[C64], h: &CMatrix) -> Surrogate {
    Surrogate { point: b_i.to_vec(), gains: gains_of(h, b_i) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubproblemStatus {
    /// The expansion point already satisfied the KKT conditions.
    Stationary,
    Solved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemOutcome {
    pub b: Vec<C64>,
    pub status: SubproblemStatus,
    pub surrogate_before: f64,
    pub surrogate_after: f64,
}

/// Solves the convexified problem around `surr.point`, with `h` the
/// channels in the same coordinates as the point.
pub fn solve_subproblem(
    surr: &Surrogate,
    h: &CMatrix,
    prob: &LayerProblem,
    opts: &BarrierOptions,
) -> Result<SubproblemOutcome> {
    let k = prob.k();
    if h.ncols() != k || surr.point.len() != h.nrows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} x {k} channels for a point of length {}", surr.point.len(), k),
            found: format!("{} x {}", h.nrows(), h.ncols()),
        });
    }
    let rp = prob.power_ratio.sqrt();
    let f0 = prob.objective(&surr.gains, norm_sqr(&surr.point));
    if !(f0 > 0.0 && f0.is_finite()) {
        return Err(Error::SubproblemInfeasible("objective undefined at the expansion point".into()));
    }
    let a2 = prob.a_max * prob.a_max;
    let ch = RealChannels::new(h, rp / prob.a_max);
    let sc = Scaled {
        ch: &ch,
        alpha: surr.gains.iter().map(|a| a / prob.a_max).collect(),
        t: (0..k).map(|j| prob.gain_floor_sq(j) / a2).collect(),
        chi: prob.chi.iter().map(|c| (1.0 - prob.lambda) * c / a2 / f0).collect(),
        lam: prob.bs_energy_coeff * prob.power_ratio / f0,
    };
    let y_i = DVector::from_vec(to_real(&surr.point)) / rp;
    let q_i = sc.objective(&y_i);

    let bad = violations(prob, &surr.gains, norm_sqr(&surr.point), 1e-9);
    if !bad.is_empty() {
        return Err(Error::SubproblemInfeasible(format!("expansion point violates {bad:?}")));
    }
    if kkt_residual(&sc, &y_i, opts.active_tol) <= opts.tol_kkt {
        return Ok(SubproblemOutcome {
            b: surr.point.clone(),
            status: SubproblemStatus::Stationary,
            surrogate_before: q_i * f0,
            surrogate_after: q_i * f0,
        });
    }
    // Move off any tight constraint: shrinking relaxes the power and
    // saturation caps, growing relaxes a tight tangent floor. Slacks at
    // rounding level would leave the barrier numerically flat; the floor
    // slack is measured relative to the floor itself.
    const MARGIN: f64 = 1e-10;
    let mut start = None;
    for c in [1.0, 1.0 - 1e-9, 1.0 + 1e-9, 1.0 - 1e-7, 1.0 + 1e-7, 1.0 - 1e-5, 1.0 + 1e-5, 1.0 - 1e-3, 1.0 + 1e-3] {
        let y = &y_i * c;
        let ok = {
            let (pg, qg) = ch.gains(&y);
            1.0 - y.norm_squared() > MARGIN
                && (0..k).all(|j| {
                    let a = sc.alpha[j];
                    let ub = 2.0 * (a.re * pg[j] + a.im * qg[j]) - a.norm_sqr();
                    1.0 - pg[j] * pg[j] - qg[j] * qg[j] > MARGIN && ub - sc.t[j] > MARGIN * sc.t[j]
                })
        };
        if ok {
            start = Some(y);
            break;
        }
    }
    let Some(y0) = start else {
        return Err(Error::SubproblemInfeasible("no strictly feasible start near the expansion point".into()));
    };
    let y = barrier_solve(&sc, y0, opts)?;
    let q_new = sc.objective(&y);
    Ok(SubproblemOutcome {
        b: from_real((y * rp).as_slice()),
        status: SubproblemStatus::Solved,
        surrogate_before: q_i * f0,
        surrogate_after: q_new * f0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaOptions {
    pub i_max: usize,
    /// Stop once the relative objective decrease falls below this.
    pub rel_tol: f64,
    pub barrier: BarrierOptions,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self { i_max: 30, rel_tol: 1e-6, barrier: BarrierOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhyDesign {
    pub f: Vec<C64>,
    pub beta: Vec<C64>,
    /// Subspace coordinates (empty for the full-dimensional solve).
    pub b: Vec<C64>,
    pub gains: Vec<C64>,
    pub initial_objective: f64,
    /// Objective after each SCA iteration.
    pub objective_trace: Vec<f64>,
    pub feasible: bool,
    pub iterations: usize,
}

impl PhyDesign {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(self.initial_objective)
    }

    pub fn operating_point(&self) -> OperatingPoint {
        OperatingPoint { beta: self.beta.clone(), f_norm_sqr: norm_sqr(&self.f) }
    }
}

struct ScaRun {
    x: Vec<C64>,
    initial: f64,
    trace: Vec<f64>,
}

fn run_sca(h: &CMatrix, x0: Vec<C64>, prob: &LayerProblem, opts: &ScaOptions) -> Result<ScaRun> {
    let mut x = x0;
    let mut f = prob.objective(&gains_of(h, &x), norm_sqr(&x));
    let initial = f;
    let mut trace = Vec::with_capacity(opts.i_max);
    for _ in 0..opts.i_max {
        let surr = build_surrogate(&x, h);
        let out = solve_subproblem(&surr, h, prob, &opts.barrier).map_err(|e| match e {
            Error::SubproblemInfeasible(msg) => {
                Error::LayerInfeasible { reason: format!("SCA subproblem: {msg}"), clients: Vec::new() }
            }
            other => other,
        })?;
        let f_new = prob.objective(&gains_of(h, &out.b), norm_sqr(&out.b));
        if out.status == SubproblemStatus::Stationary || !(f_new <= f) {
            trace.push(f);
            break;
        }
        let rel = (f - f_new) / f;
        x = out.b;
        f = f_new;
        trace.push(f);
        if rel < opts.rel_tol {
            break;
        }
    }
    Ok(ScaRun { x, initial, trace })
}

/// Feasible reduced start: MRT, or the balanced least-norm point when MRT
/// leaves a client below its floor.
pub fn initial_point(sub: &Subspace, prob: &LayerProblem) -> Result<Vec<C64>> {
    let mrt = mrt_with(&sub.h_tilde, prob.power_ratio, prob.a_max);
    let ok = |b: &[C64]| violations(prob, &gains_of(&sub.h_tilde, b), norm_sqr(b), 0.0).is_empty();
    if ok(&mrt) {
        return Ok(mrt);
    }
    if let Some(b) = balanced_init(&sub.h_tilde, prob) {
        if ok(&b) {
            return Ok(b);
        }
    }
    let gains = gains_of(&sub.h_tilde, &mrt);
    let clients: Vec<usize> = violations(prob, &gains, norm_sqr(&mrt), 0.0)
        .into_iter()
        .filter(|(_, v)| *v == Violation::GainFloor)
        .map(|(k, _)| k)
        .collect();
    Err(Error::LayerInfeasible { reason: "no feasible initial beamformer".into(), clients })
}

fn finish(prob: &LayerProblem, f: Vec<C64>, b: Vec<C64>, run: &ScaRun) -> Result<PhyDesign> {
    let gains: Vec<C64> = (0..prob.k())
        .map(|k| dotc(&prob.h.column(k).iter().copied().collect::<Vec<_>>(), &f))
        .collect();
    let mut beta = Vec::with_capacity(prob.k());
    let mut bad = Vec::new();
    for (k, a) in gains.iter().enumerate() {
        match optimal_beta(*a, prob.u[k], prob.beta_max) {
            Ok(v) => beta.push(v),
            Err(_) => {
                bad.push(k);
                beta.push(C64::new(0.0, 0.0));
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::LayerInfeasible { reason: "final gain below the client floor".into(), clients: bad });
    }
    Ok(PhyDesign {
        f,
        beta,
        b,
        gains,
        initial_objective: run.initial,
        objective_trace: run.trace.clone(),
        feasible: true,
        iterations: run.trace.len(),
    })
}

/// Reduced-dimensional design of one layer.
pub fn solve_layer(prob: &LayerProblem, opts: &ScaOptions) -> Result<PhyDesign> {
    prob.precheck()?;
    let sub = subspace_reduce(&prob.h)?;
    let b0 = initial_point(&sub, prob)?;
    let run = run_sca(&sub.h_tilde, b0, prob, opts)?;
    let f = sub.lift(&run.x);
    finish(prob, f, run.x.clone(), &run)
}

/// The same iteration over all `N_t` antennas, started from the lifted
/// reduced initial point.
pub fn solve_layer_full(prob: &LayerProblem, opts: &ScaOptions) -> Result<PhyDesign> {
    prob.precheck()?;
    let sub = subspace_reduce(&prob.h)?;
    let f0 = sub.lift(&initial_point(&sub, prob)?);
    let run = run_sca(&prob.h, f0, prob, opts)?;
    finish(prob, run.x.clone(), Vec::new(), &run)
}

/// `Σ_k χ_k / a_max²`: the λ = 0 optimum when every client can be driven
/// to the saturation boundary at once.
pub fn lambda0_bound(prob: &LayerProblem) -> f64 {
    prob.chi.iter().sum::<f64>() / (prob.a_max * prob.a_max)
}

/// Pads the shorter trace with its last value and returns the largest
/// per-iteration relative difference.
pub fn trace_gap(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    let at = |t: &[f64], i: usize| t.get(i).or(t.last()).copied().unwrap_or(f64::NAN);
    (0..n)
        .map(|i| {
            let (x, y) = (at(a, i), at(b, i));
            (x - y).abs() / x.abs().max(y.abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests;

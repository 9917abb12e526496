//! Per-layer accuracy targets: uniform profiles, the λ = 0 client energy in
//! closed form, and the budget-constrained mixed-precision optimizer.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::metrics::{client_coefficient, compute_kappa, required_gain};
use crate::nn::{backward, cross_entropy, evaluate, forward_tape, CalibrationStats, CnnModel, Dataset, EvalNoise, NoiseLevels, NUM_LAYERS};
use crate::params::{LayerSpec, SystemParams};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileMode {
    Uniform,
    Mixed,
}

impl ProfileMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProfileMode::Uniform => "uniform",
            ProfileMode::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionProfile {
    pub eps: Vec<f64>,
    /// `1/ε²`.
    pub gamma: Vec<f64>,
    pub mode: ProfileMode,
}

impl PrecisionProfile {
    pub fn uniform(eps: f64, layers: usize) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("root-NMSE target must be positive, got {eps}")));
        }
        Ok(Self { eps: vec![eps; layers], gamma: vec![1.0 / (eps * eps); layers], mode: ProfileMode::Uniform })
    }

    pub fn from_gamma(gamma: Vec<f64>, mode: ProfileMode) -> Result<Self> {
        if gamma.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::Domain("precision values must be positive and finite".into()));
        }
        Ok(Self { eps: gamma.iter().map(|g| 1.0 / g.sqrt()).collect(), gamma, mode })
    }

    /// `Σ ω_ℓ γ_ℓ`.
    pub fn budget_used(&self, omega: &[f64]) -> f64 {
        self.gamma.iter().zip(omega).map(|(g, w)| g * w).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSpec {
    pub gamma0: f64,
    pub omega: Vec<f64>,
    pub gamma_min: f64,
}

impl BudgetSpec {
    pub fn new(gamma0: f64, omega: Vec<f64>, gamma_min: f64) -> Result<Self> {
        if omega.is_empty() || omega.iter().any(|w| !(*w > 0.0)) || !(gamma_min >= 0.0) {
            return Err(Error::InvalidArgument("budget needs positive layer weights and gamma_min >= 0".into()));
        }
        let b = Self { gamma0, omega, gamma_min };
        let reserve = b.reserve();
        if !(gamma0 > reserve) {
            return Err(Error::BudgetExhausted { gamma0, reserve });
        }
        Ok(b)
    }

    /// `Σ ω_ℓ γ_min`.
    pub fn reserve(&self) -> f64 {
        self.omega.iter().sum::<f64>() * self.gamma_min
    }
}

/// `ω_ℓ = Σ_k c_k^(ℓ) / (a_max² κ)` with `clients` identical clients per layer.
pub fn omega_weights(layers: &[LayerSpec], clients: usize, sp: &SystemParams) -> Vec<f64> {
    let denom = sp.a_max().powi(2) * compute_kappa(sp);
    layers.iter().map(|l| clients as f64 * client_coefficient(l, sp) / denom).collect()
}

/// `E0* = Σ_k c_k / ε_k² / (a_max² κ)`, the λ = 0 optimum when every client
/// can sit at the saturation boundary.
pub fn closed_form_energy_lambda0(eps: &[f64], c: &[f64], a_max: f64, beta_max: f64, kappa: f64) -> Result<f64> {
    if eps.len() != c.len() {
        return Err(Error::LengthMismatch { left: eps.len(), right: c.len() });
    }
    let mut bad = Vec::new();
    for (k, e) in eps.iter().enumerate() {
        if !(required_gain(*e, kappa)? <= a_max * beta_max) {
            bad.push(k);
        }
    }
    if !bad.is_empty() {
        return Err(Error::LayerInfeasible { reason: "u_k exceeds a_max * beta_max".into(), clients: bad });
    }
    Ok(eps.iter().zip(c).map(|(e, c)| c / (e * e)).sum::<f64>() / (a_max * a_max * kappa))
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// `ω_ℓ γ_ℓ = ω_ℓ γ_min + (Γ₀ − Σ ω_j γ_min) π_ℓ` with `π = softmax(z)`.
pub fn shares_to_targets(z: &[f64], budget: &BudgetSpec) -> Result<PrecisionProfile> {
    if z.len() != budget.omega.len() {
        return Err(Error::LengthMismatch { left: z.len(), right: budget.omega.len() });
    }
    let reserve = budget.reserve();
    if !(budget.gamma0 > reserve) {
        return Err(Error::BudgetExhausted { gamma0: budget.gamma0, reserve });
    }
    let residual = budget.gamma0 - reserve;
    let gamma = softmax(z).iter().zip(&budget.omega).map(|(p, w)| budget.gamma_min + residual * p / w).collect();
    PrecisionProfile::from_gamma(gamma, ProfileMode::Mixed)
}

/// Logits reproducing a given profile under `budget` (up to a constant).
pub fn targets_to_shares(profile: &PrecisionProfile, budget: &BudgetSpec) -> Vec<f64> {
    let residual = budget.gamma0 - budget.reserve();
    profile
        .gamma
        .iter()
        .zip(&budget.omega)
        .map(|(g, w)| (w * (g - budget.gamma_min) / residual).max(1e-300).ln())
        .collect()
}

/// `Γ₀ = Σ_ℓ ω_ℓ / ε_sh²`.
pub fn budget_from_uniform(eps_shared: f64, omega: &[f64]) -> f64 {
    omega.iter().sum::<f64>() / (eps_shared * eps_shared)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub batch: usize,
    /// Fraction of the calibration set held out for best-seen selection.
    pub holdout: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { eta: 0.05, beta1: 0.9, beta2: 0.999, eps: 1e-8, steps: 200, batch: 128, holdout: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub z: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: usize,
}

impl AdamState {
    pub fn new(z: Vec<f64>) -> Self {
        let n = z.len();
        Self { z, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, grad: &[f64], cfg: &AdamConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..self.z.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            self.z[i] -= cfg.eta * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.eps);
        }
    }
}

/// Noisy mini-batch loss and its pathwise derivative with respect to each
/// layer's root-NMSE target, for fixed unit noise draws.
pub fn loss_and_eps_grad(
    model: &CnnModel,
    images: &DMatrix<f64>,
    labels: &[u8],
    eps: &[f64],
    stats: &CalibrationStats,
    seeds: &SeedStream,
) -> Result<(f64, Vec<f64>)> {
    let b = images.ncols();
    let lv = NoiseLevels::uniform(eps, stats, b);
    let tape = forward_tape(model, images, Some((&lv, &mut seeds.substream("noise", 0))))?;
    let (loss, dl) = cross_entropy(tape.logits(), labels);
    let deltas = backward(model, &tape, dl);
    let grad = (0..NUM_LAYERS)
        .map(|l| match &tape.draws[l] {
            Some(g) => deltas[l].dot(g) * stats.s_ref[l].sqrt(),
            None => 0.0,
        })
        .collect();
    Ok((loss, grad))
}

/// `dL/dz` from `dL/dε` through `ε = γ^{-1/2}` and the softmax shares.
pub fn chain_to_logits(z: &[f64], dl_deps: &[f64], budget: &BudgetSpec) -> Result<Vec<f64>> {
    let prof = shares_to_targets(z, budget)?;
    let pi = softmax(z);
    let residual = budget.gamma0 - budget.reserve();
    // dL/dπ_ℓ
    let dpi: Vec<f64> = (0..z.len())
        .map(|l| dl_deps[l] * (-0.5 * prof.gamma[l].powf(-1.5)) * residual / budget.omega[l])
        .collect();
    let mean: f64 = dpi.iter().zip(&pi).map(|(d, p)| d * p).sum();
    Ok(pi.iter().zip(&dpi).map(|(p, d)| p * (d - mean)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// `None` for the starting profile.
    pub train_loss: Option<f64>,
    pub holdout_ce: f64,
    pub budget_used: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedResult {
    pub profile: PrecisionProfile,
    pub trace: Vec<StepRecord>,
    pub best_step: usize,
}

/// Adam over the softmax logits, started from the uniform profile that
/// spends the same budget. Returns the profile with the lowest held-out
/// cross entropy seen (the start included). Weights are never modified.
pub fn optimize_mixed_precision(
    model: &CnnModel,
    calib: &Dataset,
    stats: &CalibrationStats,
    budget: &BudgetSpec,
    cfg: &AdamConfig,
    seeds: &SeedStream,
) -> Result<MixedResult> {
    let n_hold = ((calib.len() as f64) * cfg.holdout).round() as usize;
    if n_hold == 0 || n_hold >= calib.len() {
        return Err(Error::InvalidArgument("calibration set too small for the held-out split".into()));
    }
    let mut order: Vec<usize> = (0..calib.len()).collect();
    order.shuffle(&mut seeds.substream("holdout", 0));
    let hold = calib.subset(&order[..n_hold]);
    let train: Vec<usize> = order[n_hold..].to_vec();
    // Common noise for every held-out evaluation.
    let hold_seeds = seeds.child("holdout-noise", 0);
    let score = |p: &PrecisionProfile| -> Result<f64> {
        Ok(evaluate(model, &hold, &EvalNoise::Uniform(p.eps.clone()), stats, 1, &hold_seeds)?.cross_entropy)
    };

    let omega_sum: f64 = budget.omega.iter().sum();
    let start = PrecisionProfile::uniform((omega_sum / budget.gamma0).sqrt(), budget.omega.len())?;
    let mut adam = AdamState::new(targets_to_shares(&start, budget));
    let mut prof = shares_to_targets(&adam.z, budget)?;
    let mut best = (score(&prof)?, prof.clone(), 0);
    let mut trace = vec![StepRecord { step: 0, train_loss: None, holdout_ce: best.0, budget_used: prof.budget_used(&budget.omega) }];
    let mut pick = seeds.substream("batches", 0);
    let mut pool = train.clone();
    let mut cursor = pool.len();
    for step in 1..=cfg.steps {
        if cursor + cfg.batch > pool.len() {
            pool.shuffle(&mut pick);
            cursor = 0;
        }
        let idx = &pool[cursor..(cursor + cfg.batch).min(pool.len())];
        cursor += cfg.batch;
        let (x, y) = calib.batch_of(idx);
        let (loss, dl_deps) = loss_and_eps_grad(model, &x, &y, &prof.eps, stats, &seeds.child("step", step as u64))?;
        let grad = chain_to_logits(&adam.z, &dl_deps, budget)?;
        adam.step(&grad, cfg);
        prof = shares_to_targets(&adam.z, budget)?;
        let ce = score(&prof)?;
        trace.push(StepRecord { step, train_loss: Some(loss), holdout_ce: ce, budget_used: prof.budget_used(&budget.omega) });
        if ce < best.0 {
            best = (ce, prof.clone(), step);
        }
    }
    Ok(MixedResult { profile: best.1, trace, best_step: best.2 })
}

/// Writes `layer,eps,gamma,omega,budget_share` rows.
pub fn write_profile_csv<W: Write>(p: &PrecisionProfile, budget: &BudgetSpec, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "eps", "gamma", "omega", "budget_share"])?;
    for l in 0..p.eps.len() {
        let share = budget.omega[l] * p.gamma[l] / budget.gamma0;
        w.write_record([
            (l + 1).to_string(),
            format!("{:.9e}", p.eps[l]),
            format!("{:.9e}", p.gamma[l]),
            format!("{:.9e}", budget.omega[l]),
            format!("{:.9e}", share),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `step,train_loss,holdout_ce,budget_used,budget_target` rows.
pub fn write_trace_csv<W: Write>(trace: &[StepRecord], budget: &BudgetSpec, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "train_loss", "holdout_ce", "budget_used", "budget_target"])?;
    for r in trace {
        w.write_record([
            r.step.to_string(),
            r.train_loss.map(|v| format!("{v:.9e}")).unwrap_or_default(),
            format!("{:.9e}", r.holdout_ce),
            format!("{:.12e}", r.budget_used),
            format!("{:.12e}", budget.gamma0),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_trivial_and_linear() {
        let sp = SystemParams::reference();
        let layers = LayerSpec::lenet5();
        let one = omega_weights(&layers, 1, &sp);
        let two = omega_weights(&layers, 2, &sp);
        for (a, b) in one.iter().zip(&two) {
            assert!((b / a - 2.0).abs() < 1e-14);
        }
        let c = [1.0];
        assert!((closed_form_energy_lambda0(&[1.0], &c, 1.0, 10.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn omega_matches_closed_form_per_layer() {
        let sp = SystemParams::reference();
        let layer = &LayerSpec::lenet5()[0];
        let w = omega_weights(std::slice::from_ref(layer), 6, &sp)[0];
        let c = vec![client_coefficient(layer, &sp); 6];
        let e = closed_form_energy_lambda0(&[0.1; 6], &c, sp.a_max(), sp.beta_max(), compute_kappa(&sp)).unwrap();
        assert!((w / 0.01 - e).abs() <= 1e-12 * e);
    }

    #[test]
    fn closed_form_inverse_square() {
        let a = closed_form_energy_lambda0(&[0.2, 0.4], &[1.0, 3.0], 0.7, 14.0, 6.34e8).unwrap();
        let b = closed_form_energy_lambda0(&[0.1, 0.2], &[1.0, 3.0], 0.7, 14.0, 6.34e8).unwrap();
        assert!((b / a - 4.0).abs() < 1e-12);
        assert!(closed_form_energy_lambda0(&[1e-7], &[1.0], 0.7, 14.0, 6.34e8).is_err());
    }

    #[test]
    fn shares_hand_example() {
        let b = BudgetSpec::new(10.0, vec![1.0, 1.0], 0.25).unwrap();
        let p = shares_to_targets(&[0.0, 0.0], &b).unwrap();
        for (g, e) in p.gamma.iter().zip(&p.eps) {
            assert!((g - 5.0).abs() < 1e-12);
            assert!((e - 0.447_213_6).abs() < 1e-7);
        }
    }

    #[test]
    fn shares_saturate() {
        let b = BudgetSpec::new(10.0, vec![1.0, 2.0, 3.0], 0.25).unwrap();
        let p = shares_to_targets(&[50.0, 0.0, 0.0], &b).unwrap();
        let residual = 10.0 - 6.0 * 0.25;
        assert!((p.gamma[0] - (0.25 + residual)).abs() < 1e-9);
        assert!((p.gamma[1] - 0.25).abs() < 1e-9 && (p.gamma[2] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn budget_exhaustion_is_an_error() {
        assert!(matches!(BudgetSpec::new(1.0, vec![2.0, 2.0], 0.25), Err(Error::BudgetExhausted { .. })));
    }

    #[test]
    fn uniform_budget_examples() {
        assert!((budget_from_uniform(1.0, &[1.0, 2.0, 3.0]) - 6.0).abs() < 1e-15);
        assert!((budget_from_uniform(0.1, &[1.0, 2.0, 3.0]) / 6.0 - 100.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_budget_equals_summed_closed_forms() {
        let sp = SystemParams::reference();
        let layers = LayerSpec::lenet5();
        let omega = omega_weights(&layers, 6, &sp);
        let g0 = budget_from_uniform(0.3, &omega);
        let kappa = compute_kappa(&sp);
        let sum: f64 = layers
            .iter()
            .map(|l| {
                let c = vec![client_coefficient(l, &sp); 6];
                closed_form_energy_lambda0(&[0.3; 6], &c, sp.a_max(), sp.beta_max(), kappa).unwrap()
            })
            .sum();
        assert!((g0 - sum).abs() <= 1e-12 * sum);
    }

    #[test]
    fn shares_round_trip_uniform() {
        let omega = vec![1.0, 5.0, 0.3, 2.0, 0.01];
        let g0 = budget_from_uniform(0.2, &omega);
        let b = BudgetSpec::new(g0, omega.clone(), 0.25).unwrap();
        let u = PrecisionProfile::uniform(0.2, 5).unwrap();
        let p = shares_to_targets(&targets_to_shares(&u, &b), &b).unwrap();
        for e in &p.eps {
            assert!((e - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_rule_matches_finite_differences() {
        let b = BudgetSpec::new(40.0, vec![1.0, 2.0, 0.5], 0.25).unwrap();
        let z = [0.3, -0.2, 0.1];
        let w = [0.7, -1.3, 2.0];
        // L(ε) = Σ w_ℓ ε_ℓ, so dL/dε = w.
        let f = |z: &[f64]| shares_to_targets(z, &b).unwrap().eps.iter().zip(&w).map(|(e, w)| e * w).sum::<f64>();
        let g = chain_to_logits(&z, &w, &b).unwrap();
        for i in 0..3 {
            let (mut up, mut dn) = (z, z);
            up[i] += 1e-6;
            dn[i] -= 1e-6;
            let fd = (f(&up) - f(&dn)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8, "{fd} vs {}", g[i]);
        }
    }

    fn toy() -> (CnnModel, Dataset, CalibrationStats) {
        use rand::Rng;
        let mut r = SeedStream::new(3).substream("toy", 0);
        let model = CnnModel::init(&mut r);
        let n = 200;
        let d = Dataset {
            images: (0..n * 1024).map(|_| r.random_range(0.0..1.0)).collect(),
            labels: (0..n).map(|_| r.random_range(0..10u8)).collect(),
        };
        let stats = crate::nn::calibrate_sref(&model, &d).unwrap();
        (model, d, stats)
    }

    #[test]
    fn pathwise_gradient_matches_finite_differences() {
        let (model, d, stats) = toy();
        let (x, y) = d.batch_of(&(0..16).collect::<Vec<_>>());
        let eps = [0.3, 0.2, 0.4, 0.25, 0.5];
        let seeds = SeedStream::new(9);
        let (_, g) = loss_and_eps_grad(&model, &x, &y, &eps, &stats, &seeds).unwrap();
        for l in 0..5 {
            let (mut up, mut dn) = (eps, eps);
            up[l] += 1e-6;
            dn[l] -= 1e-6;
            let fu = loss_and_eps_grad(&model, &x, &y, &up, &stats, &seeds).unwrap().0;
            let fd = loss_and_eps_grad(&model, &x, &y, &dn, &stats, &seeds).unwrap().0;
            let num = (fu - fd) / 2e-6;
            assert!((num - g[l]).abs() <= 1e-5 * num.abs().max(1e-3), "layer {l}: {num} vs {}", g[l]);
        }
    }

    #[test]
    fn optimizer_spends_exactly_the_budget() {
        let (model, d, stats) = toy();
        let omega = vec![1.0, 3.0, 0.5, 0.2, 0.05];
        let b = BudgetSpec::new(budget_from_uniform(0.3, &omega), omega.clone(), 0.25).unwrap();
        let cfg = AdamConfig { steps: 5, batch: 32, ..AdamConfig::default() };
        let r = optimize_mixed_precision(&model, &d, &stats, &b, &cfg, &SeedStream::new(1)).unwrap();
        assert_eq!(r.trace.len(), 6);
        for s in &r.trace {
            assert!((s.budget_used - b.gamma0).abs() <= 1e-12 * b.gamma0);
        }
        assert!((r.trace[0].budget_used - b.gamma0).abs() <= 1e-12 * b.gamma0);
        let best = r.trace.iter().map(|s| s.holdout_ce).fold(f64::INFINITY, f64::min);
        assert_eq!(best, r.trace[r.best_step].holdout_ce);
        let again = optimize_mixed_precision(&model, &d, &stats, &b, &cfg, &SeedStream::new(1)).unwrap();
        assert_eq!(r, again);
    }

    proptest::proptest! {
        #[test]
        fn budget_conserved_for_any_logits(z in proptest::collection::vec(-30.0f64..30.0, 5), g0 in 2.0f64..1e6) {
            let omega = vec![0.3, 1.0, 2.5, 0.01, 7.0];
            let b = BudgetSpec::new(g0 * omega.iter().sum::<f64>(), omega.clone(), 0.25).unwrap();
            let p = shares_to_targets(&z, &b).unwrap();
            proptest::prop_assert!((p.budget_used(&omega) - b.gamma0).abs() <= 1e-12 * b.gamma0);
            proptest::prop_assert!(p.gamma.iter().all(|g| *g >= 0.25));
            let pi = softmax(&z);
            proptest::prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

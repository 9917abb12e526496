//! Experiment configuration. Files are TOML with one table per concern;
//! every key is optional and falls back to the defaults below.
//!
//! ```toml
//! [system]
//! p_wmax_dbm = 48.0
//!
//! [run]
//! seed = 7
//! replicates = 10
//!
//! [tradeoff]
//! distances_m = [10.0, 100.0]
//! ```

use std::path::{Path, PathBuf};

use arfc_core::channel::{GeometryParams, LosFading};
use arfc_core::params::{dbm_to_w, SystemParams, PICO};
use arfc_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Convergence,
    Runtime,
    EnergyAccuracy,
    Tradeoff,
    MixedPrecision,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Convergence,
        ExperimentKind::Runtime,
        ExperimentKind::EnergyAccuracy,
        ExperimentKind::Tradeoff,
        ExperimentKind::MixedPrecision,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Runtime => "runtime",
            ExperimentKind::EnergyAccuracy => "energy_accuracy",
            ExperimentKind::Tradeoff => "tradeoff",
            ExperimentKind::MixedPrecision => "mixed_precision",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown experiment kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub bandwidth_hz: f64,
    pub carrier_ghz: f64,
    pub p_w0_dbm: f64,
    pub p_x0_dbm: f64,
    pub p_wmax_dbm: f64,
    pub p_xmax_dbm: f64,
    pub p_lo_th_dbm: f64,
    pub rho_mixer: f64,
    pub rho_nf: f64,
    pub rho_radio: f64,
    pub eta_bs: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub e_adc_pj: f64,
    pub e_dig_pj: f64,
    pub e_digital_pj: f64,
    pub lfft: usize,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            bandwidth_hz: 25e6,
            carrier_ghz: 2.5,
            p_w0_dbm: 0.0,
            p_x0_dbm: 0.0,
            p_wmax_dbm: 48.0,
            p_xmax_dbm: 23.0,
            p_lo_th_dbm: -3.0,
            rho_mixer: 0.2512,
            rho_nf: 0.2512,
            rho_radio: 0.30,
            eta_bs: 0.30,
            noise_psd_dbm_per_hz: -174.0,
            e_adc_pj: 1.0,
            e_dig_pj: 1.0,
            e_digital_pj: 3.0,
            lfft: 4096,
        }
    }
}

impl SystemSection {
    pub fn params(&self) -> Result<SystemParams> {
        let sp = SystemParams {
            bandwidth_hz: self.bandwidth_hz,
            carrier_ghz: self.carrier_ghz,
            p_w0_w: dbm_to_w(self.p_w0_dbm),
            p_x0_w: dbm_to_w(self.p_x0_dbm),
            p_wmax_w: dbm_to_w(self.p_wmax_dbm),
            p_xmax_w: dbm_to_w(self.p_xmax_dbm),
            p_lo_th_w: dbm_to_w(self.p_lo_th_dbm),
            rho_mixer: self.rho_mixer,
            rho_nf: self.rho_nf,
            rho_radio: self.rho_radio,
            eta_bs: self.eta_bs,
            noise_psd_w_per_hz: dbm_to_w(self.noise_psd_dbm_per_hz),
            e_adc_j: self.e_adc_pj * PICO,
            e_dig_j: self.e_dig_pj * PICO,
            e_digital_j: self.e_digital_pj * PICO,
            lfft: self.lfft,
            lambda: 0.0,
        };
        sp.validate()?;
        Ok(sp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub d2d_min_m: f64,
    pub d2d_max_m: f64,
    pub h_bs_m: f64,
    pub h_client_m: f64,
    pub g_bs_dbi: f64,
    pub g_client_dbi: f64,
    pub k_infsh_m: f64,
    /// `None` means pure LoS.
    pub rician_k_db: Option<f64>,
    pub sf_sigma_los_db: f64,
    pub sf_sigma_nlos_db: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        let g = GeometryParams::inf_sh();
        let k = match g.los_fading {
            LosFading::Rician { k_db } => Some(k_db),
            LosFading::PureLos => None,
        };
        Self {
            d2d_min_m: g.d2d_min_m,
            d2d_max_m: g.d2d_max_m,
            h_bs_m: g.h_bs_m,
            h_client_m: g.h_client_m,
            g_bs_dbi: g.g_bs_dbi,
            g_client_dbi: g.g_client_dbi,
            k_infsh_m: g.k_infsh_m,
            rician_k_db: k,
            sf_sigma_los_db: g.sf_sigma_los_db,
            sf_sigma_nlos_db: g.sf_sigma_nlos_db,
        }
    }
}

impl GeometrySection {
    pub fn params(&self, carrier_ghz: f64) -> Result<GeometryParams> {
        let g = GeometryParams {
            d2d_min_m: self.d2d_min_m,
            d2d_max_m: self.d2d_max_m,
            h_bs_m: self.h_bs_m,
            h_client_m: self.h_client_m,
            g_bs_dbi: self.g_bs_dbi,
            g_client_dbi: self.g_client_dbi,
            f_ghz: carrier_ghz,
            k_infsh_m: self.k_infsh_m,
            los_fading: match self.rician_k_db {
                Some(k_db) => LosFading::Rician { k_db },
                None => LosFading::PureLos,
            },
            sf_sigma_los_db: self.sf_sigma_los_db,
            sf_sigma_nlos_db: self.sf_sigma_nlos_db,
        };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Master seed; replicate `r` draws from child `("replicate", r)`.
    pub seed: u64,
    pub replicates: usize,
    pub i_max: usize,
    /// 1-based layer index for single-layer experiments.
    pub layer: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 1, replicates: 10, i_max: 30, layer: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub mnist_dir: PathBuf,
    pub model_path: PathBuf,
    pub n_eval: usize,
    pub n_calib: usize,
    /// Seed of the evaluation/calibration split, independent of the run seed.
    pub split_seed: u64,
    /// Noise trials per evaluation.
    pub trials: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            mnist_dir: PathBuf::from("data/mnist"),
            model_path: PathBuf::from("data/lenet5.arfw"),
            n_eval: 3000,
            n_calib: 1000,
            split_seed: 20_240_501,
            trials: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSection {
    pub ks: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub eps: f64,
    pub n_t: usize,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        Self { ks: vec![4, 6, 8, 10], lambdas: vec![0.0, 0.5], eps: 0.1, n_t: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeSection {
    pub n_t: Vec<usize>,
    pub k: usize,
    pub lambda: f64,
    pub eps: f64,
    pub repetitions: usize,
}

impl Default for RuntimeSection {
    fn default() -> Self {
        Self { n_t: vec![64, 128, 256, 512, 1024], k: 10, lambda: 0.5, eps: 0.1, repetitions: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyAccuracySection {
    pub eps: Vec<f64>,
    pub n_t: usize,
    pub k: usize,
}

impl Default for EnergyAccuracySection {
    fn default() -> Self {
        Self { eps: log_grid(0.05, 2.0, 12), n_t: 256, k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradeoffSection {
    pub distances_m: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub eps: f64,
    pub n_t: usize,
    pub k: usize,
}

impl Default for TradeoffSection {
    fn default() -> Self {
        // BS energy per MAC is ~1e5 times the client energy, so the
        // interesting weights are tiny.
        let mut lambdas = vec![0.0];
        lambdas.extend(log_grid(1e-14, 1e-1, 27));
        lambdas.extend([0.5, 0.9, 0.99, 1.0]);
        Self { distances_m: vec![10.0, 100.0], lambdas, eps: 0.12, n_t: 256, k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixedSection {
    pub eps_min: f64,
    pub eps_max: f64,
    pub points: usize,
    /// Subset of budget indices to run (0 = largest ε, i.e. the smallest
    /// budget). Empty runs all points.
    pub only: Vec<usize>,
    pub n_t: usize,
    pub k: usize,
    pub gamma_min: f64,
    pub steps: usize,
    pub batch: usize,
    pub eta: f64,
}

impl Default for MixedSection {
    fn default() -> Self {
        Self {
            eps_min: 0.06,
            eps_max: 0.95,
            points: 18,
            only: Vec::new(),
            n_t: 256,
            k: 6,
            gamma_min: 0.25,
            steps: 200,
            batch: 128,
            eta: 0.05,
        }
    }
}

impl MixedSection {
    /// Shared targets from the smallest budget (largest ε) upwards.
    pub fn eps_grid(&self) -> Vec<f64> {
        let mut g = log_grid(self.eps_min, self.eps_max, self.points);
        g.reverse();
        g
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    pub geometry: GeometrySection,
    pub run: RunSection,
    pub data: DataSection,
    pub convergence: ConvergenceSection,
    pub runtime: RuntimeSection,
    pub energy_accuracy: EnergyAccuracySection,
    pub tradeoff: TradeoffSection,
    pub mixed_precision: MixedSection,
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn scaled(n: usize, scale: f64, min: usize) -> usize {
    ((n as f64 * scale).round() as usize).max(min)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 12 hex digits of SHA-256 over the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))[..12].to_string()
    }

    /// Shrinks replicate counts and evaluation sets. Runtime repetitions
    /// never drop below 5.
    pub fn apply_scale(&mut self, scale: f64) -> Result<()> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::InvalidArgument(format!("scale must lie in (0, 1], got {scale}")));
        }
        self.run.replicates = scaled(self.run.replicates, scale, 1);
        self.data.n_eval = scaled(self.data.n_eval, scale, 100);
        self.runtime.repetitions = scaled(self.runtime.repetitions, scale, 5);
        self.mixed_precision.steps = scaled(self.mixed_precision.steps, scale, 10);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        self.system.params()?;
        self.geometry.params(self.system.carrier_ghz)?;
        if self.run.replicates == 0 || self.run.i_max == 0 {
            return bad("replicates and i_max must be >= 1");
        }
        if !(1..=5).contains(&self.run.layer) {
            return bad("layer must be 1..=5");
        }
        let c = &self.convergence;
        if c.ks.is_empty() || c.lambdas.is_empty() || c.ks.contains(&0) {
            return bad("convergence needs nonempty ks and lambdas");
        }
        if self.runtime.n_t.is_empty() || self.runtime.repetitions == 0 {
            return bad("runtime needs a nonempty N_t grid and repetitions >= 1");
        }
        if self.energy_accuracy.eps.is_empty() {
            return bad("energy_accuracy eps grid is empty");
        }
        let t = &self.tradeoff;
        if t.distances_m.is_empty() || t.lambdas.is_empty() {
            return bad("tradeoff needs distances and lambdas");
        }
        let lams = c.lambdas.iter().chain(&t.lambdas).chain(std::iter::once(&self.runtime.lambda));
        for l in lams {
            if !(0.0..=1.0).contains(l) {
                return bad("lambda values must lie in [0, 1]");
            }
        }
        let m = &self.mixed_precision;
        if m.points == 0 || !(m.eps_min > 0.0 && m.eps_max >= m.eps_min) || m.only.iter().any(|i| *i >= m.points) {
            return bad("mixed_precision grid is malformed");
        }
        if self.data.trials == 0 || self.data.n_eval == 0 || self.data.n_calib < 10 {
            return bad("data sizes must be positive (n_calib >= 10)");
        }
        Ok(())
    }
}

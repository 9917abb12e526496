//! System constants and per-layer MVM shapes.
//!
//! Everything is stored in SI units (watts, joules, hertz). dBm and pJ
//! figures are converted at construction time only.

use crate::error::{Error, Result};

/// Power against which the LO and RF reference drives are expressed when
/// forming the reference SNR constant. Mixer conversion figures are quoted
/// per milliwatt of drive, so the product `P_w0 * P_x0` is read in mW².
pub const REFERENCE_DRIVE_W: f64 = 1e-3;

pub fn dbm_to_w(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

pub fn w_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub const PICO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    pub bandwidth_hz: f64,
    pub carrier_ghz: f64,
    /// BS-side reference power level `P_w0`.
    pub p_w0_w: f64,
    /// Client-side reference power level `P_x0`.
    pub p_x0_w: f64,
    pub p_wmax_w: f64,
    pub p_xmax_w: f64,
    /// LO-port saturation threshold.
    pub p_lo_th_w: f64,
    pub rho_mixer: f64,
    pub rho_nf: f64,
    pub rho_radio: f64,
    pub eta_bs: f64,
    /// Thermal noise density `k_B T_0`.
    pub noise_psd_w_per_hz: f64,
    pub e_adc_j: f64,
    pub e_dig_j: f64,
    /// Digital-computing reference energy per MAC (baseline only).
    pub e_digital_j: f64,
    pub lfft: usize,
    /// BS/client energy weighting in `[0, 1]`.
    pub lambda: f64,
}

impl SystemParams {
    /// The default simulation constants (25 MHz at 2.5 GHz, 48/23 dBm caps,
    /// -3 dBm LO threshold, 4096-point FFT).
    pub fn reference() -> Self {
        Self {
            bandwidth_hz: 25e6,
            carrier_ghz: 2.5,
            p_w0_w: dbm_to_w(0.0),
            p_x0_w: dbm_to_w(0.0),
            p_wmax_w: dbm_to_w(48.0),
            p_xmax_w: dbm_to_w(23.0),
            p_lo_th_w: dbm_to_w(-3.0),
            rho_mixer: 0.2512,
            rho_nf: 0.2512,
            rho_radio: 0.30,
            eta_bs: 0.30,
            noise_psd_w_per_hz: dbm_to_w(-174.0),
            e_adc_j: 1.0 * PICO,
            e_dig_j: 1.0 * PICO,
            e_digital_j: 3.0 * PICO,
            lfft: 4096,
            lambda: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("carrier_ghz", self.carrier_ghz),
            ("p_w0", self.p_w0_w),
            ("p_x0", self.p_x0_w),
            ("p_wmax", self.p_wmax_w),
            ("p_xmax", self.p_xmax_w),
            ("p_lo_th", self.p_lo_th_w),
            ("rho_mixer", self.rho_mixer),
            ("rho_nf", self.rho_nf),
            ("rho_radio", self.rho_radio),
            ("noise_psd", self.noise_psd_w_per_hz),
            ("e_adc", self.e_adc_j),
            ("e_dig", self.e_dig_j),
            ("e_digital", self.e_digital_j),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.eta_bs > 0.0 && self.eta_bs <= 1.0) {
            return Err(Error::InvalidArgument(format!("eta_bs must lie in (0,1], got {}", self.eta_bs)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda must lie in [0,1], got {}", self.lambda)));
        }
        if self.lfft < 2 {
            return Err(Error::InvalidArgument("lfft must be at least 2".into()));
        }
        Ok(())
    }

    /// Beamforming-gain cap keeping the mixer in its small-signal region.
    pub fn a_max(&self) -> f64 {
        (self.p_lo_th_w / self.p_w0_w).sqrt()
    }

    pub fn beta_max(&self) -> f64 {
        (self.p_xmax_w / self.p_x0_w).sqrt()
    }

    /// `P_wmax / P_w0`, the cap on `‖f‖²`.
    pub fn power_ratio(&self) -> f64 {
        self.p_wmax_w / self.p_w0_w
    }

    /// Useful OFDM symbol duration `Lfft / B`.
    pub fn symbol_duration_s(&self) -> f64 {
        self.lfft as f64 / self.bandwidth_hz
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::reference()
    }
}

/// Shape of one linear layer viewed as a matrix-vector product, plus the
/// waveform parameters used to carry it.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    /// Output rows `M`.
    pub m: usize,
    /// Input length `N`.
    pub n: usize,
    /// Input vectors per inference (`P`, the im2col window count).
    pub p: usize,
    /// Row-block size `M'`.
    pub m_block: usize,
    /// Guard factor `ϑ`.
    pub guard: f64,
    /// CP overhead `ϖ`.
    pub cp_overhead: f64,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, m: usize, n: usize, p: usize) -> Self {
        Self { name: name.into(), m, n, p, m_block: 6, guard: 0.33, cp_overhead: 0.125 }
    }

    /// The five linear layers of the LeNet-5 style classifier.
    pub fn lenet5() -> Vec<LayerSpec> {
        vec![
            LayerSpec::new("conv1", 6, 25, 784),
            LayerSpec::new("conv2", 16, 150, 100),
            LayerSpec::new("fc1", 120, 400, 1),
            LayerSpec::new("fc2", 84, 120, 1),
            LayerSpec::new("fc3", 10, 84, 1),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.p == 0 || self.m_block == 0 {
            return Err(Error::InvalidArgument(format!("layer {}: dimensions must be >= 1", self.name)));
        }
        if !(self.guard >= 0.0 && self.cp_overhead >= 0.0) {
            return Err(Error::InvalidArgument(format!("layer {}: guard and CP must be >= 0", self.name)));
        }
        Ok(())
    }

    /// Number of row blocks `Q = ceil(M / M')`.
    pub fn row_blocks(&self) -> usize {
        self.m.div_ceil(self.m_block)
    }

    pub fn macs(&self) -> usize {
        self.m * self.n * self.p
    }

    /// Unrounded padded band width `(1 + ϑ) M'`.
    pub fn band_width(&self) -> f64 {
        (1.0 + self.guard) * self.m_block as f64
    }
}

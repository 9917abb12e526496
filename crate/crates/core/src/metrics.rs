//! Accuracy and energy models: reference SNR, required gains, per-MAC
//! client energies, the weight-waveform airtime and per-layer totals.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::params::{LayerSpec, SystemParams, PICO, REFERENCE_DRIVE_W};

/// Reference SNR `ρ_mixer ρ_nf P_w0 P_x0 / (k T0 B)`, with the drive powers
/// read per milliwatt.
pub fn compute_kappa(sp: &SystemParams) -> f64 {
    let drive = (sp.p_w0_w / REFERENCE_DRIVE_W) * (sp.p_x0_w / REFERENCE_DRIVE_W) * REFERENCE_DRIVE_W;
    sp.rho_mixer * sp.rho_nf * drive / (sp.noise_psd_w_per_hz * sp.bandwidth_hz)
}

pub fn required_gain(eps: f64, kappa: f64) -> Result<f64> {
    if !(eps > 0.0 && kappa > 0.0) {
        return Err(Error::Domain(format!("required gain needs eps > 0 and kappa > 0, got {eps}, {kappa}")));
    }
    Ok((1.0 / (kappa * eps * eps)).sqrt())
}

/// Caps `|g|` at `a_max`, keeping the phase.
pub fn clip_gain(g: C64, a_max: f64) -> C64 {
    let m = g.norm();
    if m <= a_max {
        g
    } else {
        g * (a_max / m)
    }
}

pub fn nmse_ref(a: C64, beta: C64, kappa: f64) -> Result<f64> {
    let p = a.norm_sqr() * beta.norm_sqr();
    if p == 0.0 || kappa <= 0.0 {
        return Err(Error::Domain("reference NMSE undefined for zero gain".into()));
    }
    Ok(1.0 / (kappa * p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerMac {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
}

impl PerMac {
    pub fn total(&self) -> f64 {
        self.e1 + self.e2 + self.e3
    }
}

/// `e1 / |β|²`.
pub fn e1_coefficient(layer: &LayerSpec, sp: &SystemParams) -> f64 {
    (1.0 + layer.guard) * (1.0 + layer.cp_overhead) / (4.0 * sp.bandwidth_hz) / sp.rho_radio * sp.p_x0_w
}

/// Client waveform-generation coefficient `c`: layer energy per `|β|²`.
pub fn client_coefficient(layer: &LayerSpec, sp: &SystemParams) -> f64 {
    e1_coefficient(layer, sp) * layer.macs() as f64
}

/// ADC and decoding energies per MAC, fixed once the waveform is fixed.
pub fn readout_per_mac(layer: &LayerSpec, sp: &SystemParams) -> (f64, f64) {
    let f = (1.0 + layer.guard) / (2.0 * layer.n as f64);
    (f * sp.e_adc_j, f * layer.band_width().log2() * sp.e_dig_j)
}

pub fn per_mac_energies(beta: C64, layer: &LayerSpec, sp: &SystemParams) -> PerMac {
    let (e2, e3) = readout_per_mac(layer, sp);
    PerMac { e1: e1_coefficient(layer, sp) * beta.norm_sqr(), e2, e3 }
}

/// Weight-waveform airtime from frequency-domain tiling.
pub fn tw_schedule(layer: &LayerSpec, lfft: usize, bandwidth_hz: f64) -> Result<f64> {
    if layer.m > lfft {
        return Err(Error::InvalidArgument(format!("layer {}: M = {} exceeds Lfft = {lfft}", layer.name, layer.m)));
    }
    let cols = (lfft / layer.m).max(1);
    let n_tile = layer.n.div_ceil(cols);
    Ok((layer.p * n_tile) as f64 * lfft as f64 / bandwidth_hz)
}

/// Coefficient of `‖f‖²` in the BS energy: `T_w P_w0 / η_BS`.
pub fn bs_energy_coefficient(layer: &LayerSpec, sp: &SystemParams) -> Result<f64> {
    Ok(tw_schedule(layer, sp.lfft, sp.bandwidth_hz)? / sp.eta_bs * sp.p_w0_w)
}

/// What the energy model needs from one solved layer.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub beta: Vec<C64>,
    pub f_norm_sqr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerEnergy {
    pub name: String,
    pub macs: usize,
    pub per_mac: Vec<PerMac>,
    pub e_client_j: Vec<f64>,
    pub e_bs_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBreakdown {
    pub layers: Vec<LayerEnergy>,
    pub clients: usize,
    /// Waveform-generation part of the client energy per MAC.
    pub e_bar_1: f64,
    pub e_bar_client: f64,
    pub e_bar_bs: f64,
}

impl EnergyBreakdown {
    /// MAC-weighted `e2 + e3`, the client floor that no design can remove.
    pub fn readout_floor(&self) -> f64 {
        self.e_bar_client - self.e_bar_1
    }
}

pub fn aggregate_energy(points: &[OperatingPoint], layers: &[LayerSpec], sp: &SystemParams) -> Result<EnergyBreakdown> {
    if points.len() != layers.len() || layers.is_empty() {
        return Err(Error::LengthMismatch { left: points.len(), right: layers.len() });
    }
    let k = points[0].beta.len();
    if k == 0 || points.iter().any(|p| p.beta.len() != k) {
        return Err(Error::InvalidArgument("every layer needs the same nonzero client count".into()));
    }
    let mut out = Vec::with_capacity(layers.len());
    let (mut e1_sum, mut client_sum, mut bs_sum, mut macs_sum) = (0.0, 0.0, 0.0, 0usize);
    for (pt, layer) in points.iter().zip(layers) {
        let macs = layer.macs();
        let per_mac: Vec<PerMac> = pt.beta.iter().map(|b| per_mac_energies(*b, layer, sp)).collect();
        let e_client_j: Vec<f64> = per_mac.iter().map(|e| macs as f64 * e.total()).collect();
        let e_bs_j = bs_energy_coefficient(layer, sp)? * pt.f_norm_sqr;
        e1_sum += per_mac.iter().map(|e| macs as f64 * e.e1).sum::<f64>();
        client_sum += e_client_j.iter().sum::<f64>();
        bs_sum += e_bs_j;
        macs_sum += macs;
        out.push(LayerEnergy { name: layer.name.clone(), macs, per_mac, e_client_j, e_bs_j });
    }
    let denom = (k * macs_sum) as f64;
    Ok(EnergyBreakdown {
        layers: out,
        clients: k,
        e_bar_1: e1_sum / denom,
        e_bar_client: client_sum / denom,
        e_bar_bs: bs_sum / denom,
    })
}

pub fn write_energy_csv<W: Write>(eb: &EnergyBreakdown, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "layer",
        "client",
        "e1_pJ",
        "e2_pJ",
        "e3_pJ",
        "E_client_J",
        "E_bs_J",
        "ebar_client_pJ_per_mac",
        "ebar_bs_pJ_per_mac",
    ])?;
    for l in &eb.layers {
        for (k, (e, ec)) in l.per_mac.iter().zip(&l.e_client_j).enumerate() {
            w.write_record([
                l.name.clone(),
                k.to_string(),
                (e.e1 / PICO).to_string(),
                (e.e2 / PICO).to_string(),
                (e.e3 / PICO).to_string(),
                ec.to_string(),
                l.e_bs_j.to_string(),
                (eb.e_bar_client / PICO).to_string(),
                (eb.e_bar_bs / PICO).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

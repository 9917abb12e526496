//! Subcarrier-mapped analog MVM through a behavioural passive mixer.
//!
//! The BS loads row block `m` of the weight matrix `m` subcarriers below
//! each input tone, the client loads `x` on a comb of spacing `M̃`, and the
//! IF difference band of the mixer product carries `W x` on bins `1..=M'`.
//!
//! Frequency-to-time uses the unnormalised inverse DFT
//! (`s[t] = Σ_k S[k] e^{j2πkt/L}`) and analysis divides the forward DFT by
//! `L`, so a pointwise product in time is an exact circular convolution of
//! the loaded spectra.

use std::cell::RefCell;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::params::{LayerSpec, SystemParams, REFERENCE_DRIVE_W};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// `S[k] -> s[t]`, unnormalised.
pub fn idft(freq: &[C64]) -> Vec<C64> {
    let mut buf = freq.to_vec();
    plan(buf.len(), true).process(&mut buf);
    buf
}

/// `s[t] -> S[k]`, scaled by `1/L` so that `dft(idft(S)) = S`.
pub fn dft(time: &[C64]) -> Vec<C64> {
    let mut buf = time.to_vec();
    plan(buf.len(), false).process(&mut buf);
    let inv = 1.0 / buf.len() as f64;
    for v in &mut buf {
        *v *= inv;
    }
    buf
}

/// `ceil((1+ϑ)M')`, with a small slack so exact products are not bumped up
/// by floating-point noise.
pub fn padded_band(m_block: usize, guard: f64) -> usize {
    ((1.0 + guard) * m_block as f64 - 1e-9).ceil().max(m_block as f64) as usize
}

pub fn default_nu0(m_block: usize) -> usize {
    m_block + 3
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubcarrierMap {
    pub n: usize,
    pub m_block: usize,
    pub m_tilde: usize,
    pub nu0: usize,
    pub nu_x: Vec<usize>,
    /// Row-major `M' × N`, entry `(m-1)*N + (n-1)`.
    nu_w: Vec<usize>,
    pub lfft: usize,
}

impl SubcarrierMap {
    /// Weight tone for 1-based `(m, n)`.
    pub fn nu_w(&self, m: usize, n: usize) -> usize {
        self.nu_w[(m - 1) * self.n + (n - 1)]
    }

    /// Every `(m, n, n' != n)` cross product lands outside bins `1..=M'`.
    pub fn cross_products_clear(&self) -> bool {
        let band = 1..=self.m_block as i64;
        for m in 1..=self.m_block {
            for n in 1..=self.n {
                let w = self.nu_w(m, n) as i64;
                for (j, &x) in self.nu_x.iter().enumerate() {
                    if j + 1 != n && band.contains(&(x as i64 - w)) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

pub fn build_subcarrier_maps(
    n: usize,
    m_block: usize,
    guard: f64,
    nu0: usize,
    lfft: usize,
) -> Result<SubcarrierMap> {
    if n == 0 || m_block == 0 {
        return Err(Error::InvalidArgument("N and M' must be >= 1".into()));
    }
    if !(guard >= 0.0 && guard.is_finite()) {
        return Err(Error::InvalidArgument(format!("guard factor must be >= 0, got {guard}")));
    }
    if nu0 <= m_block {
        return Err(Error::InvalidArgument(format!("nu0 = {nu0} must exceed M' = {m_block}")));
    }
    let m_tilde = padded_band(m_block, guard);
    let needed = n * m_tilde + nu0;
    let limit = lfft / 2;
    if needed > limit {
        return Err(Error::IndexOverflow { needed, limit });
    }
    let nu_x: Vec<usize> = (0..n).map(|j| nu0 + j * m_tilde).collect();
    let mut nu_w = Vec::with_capacity(m_block * n);
    for m in 1..=m_block {
        nu_w.extend(nu_x.iter().map(|&v| v - m));
    }
    Ok(SubcarrierMap { n, m_block, m_tilde, nu0, nu_x, nu_w, lfft })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfdmSymbol {
    pub freq: Vec<C64>,
    /// CP followed by the useful part.
    pub time: Vec<C64>,
    pub cp_len: usize,
    pub sample_rate_hz: f64,
}

impl OfdmSymbol {
    pub fn from_freq(freq: Vec<C64>, cp_len: usize, sample_rate_hz: f64) -> Self {
        let useful = idft(&freq);
        let l = useful.len();
        let cp_len = cp_len.min(l);
        let mut time = Vec::with_capacity(l + cp_len);
        time.extend_from_slice(&useful[l - cp_len..]);
        time.extend_from_slice(&useful);
        Self { freq, time, cp_len, sample_rate_hz }
    }

    /// Builds a CP-free symbol from useful-interval samples.
    pub fn from_useful(useful: Vec<C64>, sample_rate_hz: f64) -> Self {
        let freq = dft(&useful);
        Self { freq, time: useful, cp_len: 0, sample_rate_hz }
    }

    pub fn lfft(&self) -> usize {
        self.freq.len()
    }

    pub fn useful(&self) -> &[C64] {
        &self.time[self.cp_len..]
    }

    pub fn strip_cp(&self) -> OfdmSymbol {
        OfdmSymbol {
            freq: self.freq.clone(),
            time: self.useful().to_vec(),
            cp_len: 0,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn rms(&self) -> f64 {
        let u = self.useful();
        (u.iter().map(|z| z.norm_sqr()).sum::<f64>() / u.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Input,
    Weight,
}

/// Cyclic-prefix length and sample rate shared by both waveforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Numerology {
    pub cp_len: usize,
    pub sample_rate_hz: f64,
}

impl Numerology {
    pub fn new(lfft: usize, cp_overhead: f64, sample_rate_hz: f64) -> Self {
        Self { cp_len: (cp_overhead * lfft as f64).round() as usize, sample_rate_hz }
    }
}

/// Loads `values` onto the map. Input role expects `N` values; weight role
/// expects a row-major `M' × N` block and loads conjugates.
pub fn encode_symbol(
    values: &[C64],
    map: &SubcarrierMap,
    role: Role,
    scale: f64,
    num: Numerology,
) -> Result<OfdmSymbol> {
    let mut freq = vec![C64::new(0.0, 0.0); map.lfft];
    match role {
        Role::Input => {
            if values.len() != map.n {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} input values", map.n),
                    found: values.len().to_string(),
                });
            }
            for (&k, v) in map.nu_x.iter().zip(values) {
                freq[k] = v * scale;
            }
        }
        Role::Weight => {
            if values.len() != map.m_block * map.n {
                return Err(Error::ShapeMismatch {
                    expected: format!("{}x{} weight block", map.m_block, map.n),
                    found: values.len().to_string(),
                });
            }
            for m in 1..=map.m_block {
                for n in 1..=map.n {
                    freq[map.nu_w(m, n)] = values[(m - 1) * map.n + (n - 1)].conj() * scale;
                }
            }
        }
    }
    Ok(OfdmSymbol::from_freq(freq, num.cp_len, num.sample_rate_hz))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixerRegion {
    SmallSignal,
    LoSaturated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixerMode {
    pub region: MixerRegion,
    pub rho_mixer: f64,
    pub v_lo_sat: f64,
}

impl MixerMode {
    pub fn small_signal(rho_mixer: f64) -> Self {
        Self { region: MixerRegion::SmallSignal, rho_mixer, v_lo_sat: 1.0 }
    }

    pub fn lo_saturated(rho_mixer: f64, v_lo_sat: f64) -> Self {
        Self { region: MixerRegion::LoSaturated, rho_mixer, v_lo_sat }
    }

    /// Mixer figures from the system constants; the saturation level sits at
    /// the LO threshold amplitude.
    pub fn from_params(sp: &SystemParams, region: MixerRegion) -> Self {
        Self { region, rho_mixer: sp.rho_mixer, v_lo_sat: (sp.p_lo_th_w / REFERENCE_DRIVE_W).sqrt() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rho_mixer > 0.0 && self.v_lo_sat > 0.0) {
            return Err(Error::InvalidArgument("rho_mixer and v_lo_sat must be positive".into()));
        }
        Ok(())
    }
}

/// Real-sample mixer: `ρ·lo·rf`, or `ρ·V·sgn(lo)·rf` once the LO saturates.
pub fn mixer_emulate(lo: &[f64], rf: &[f64], mode: &MixerMode) -> Result<Vec<f64>> {
    if lo.len() != rf.len() {
        return Err(Error::LengthMismatch { left: lo.len(), right: rf.len() });
    }
    mode.validate()?;
    let out = match mode.region {
        MixerRegion::SmallSignal => lo.iter().zip(rf).map(|(l, r)| mode.rho_mixer * l * r).collect(),
        MixerRegion::LoSaturated => lo
            .iter()
            .zip(rf)
            .map(|(l, r)| {
                let s = if *l > 0.0 {
                    1.0
                } else if *l < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                mode.rho_mixer * mode.v_lo_sat * s * r
            })
            .collect(),
    };
    Ok(out)
}

/// Complex-envelope equivalent of [`mixer_emulate`] restricted to the
/// difference band: `½ρ·conj(lo)·rf`. A hard-limited LO becomes its
/// first-zone envelope `V·(4/π)·lo/|lo|`. The CP of both inputs is dropped.
pub fn mix_baseband(lo: &OfdmSymbol, rf: &OfdmSymbol, mode: &MixerMode) -> Result<OfdmSymbol> {
    let (l, r) = (lo.useful(), rf.useful());
    if l.len() != r.len() {
        return Err(Error::LengthMismatch { left: l.len(), right: r.len() });
    }
    mode.validate()?;
    let half = 0.5 * mode.rho_mixer;
    let sat = mode.v_lo_sat * 4.0 / std::f64::consts::PI;
    let y: Vec<C64> = l
        .iter()
        .zip(r)
        .map(|(lo, rf)| {
            let lo_eff = match mode.region {
                MixerRegion::SmallSignal => *lo,
                MixerRegion::LoSaturated => {
                    let mag = lo.norm();
                    if mag > 0.0 {
                        lo * (sat / mag)
                    } else {
                        C64::new(0.0, 0.0)
                    }
                }
            };
            half * lo_eff.conj() * rf
        })
        .collect();
    Ok(OfdmSymbol::from_useful(y, rf.sample_rate_hz))
}

/// Analytic conversion gain between the loaded spectra and the decoded
/// band. For the saturated LO the gain is the limiter's small-signal
/// equivalent at the LO envelope RMS.
pub fn conversion_gain(mode: &MixerMode, lo_scale: C64, rf_scale: C64, lo_rms: f64) -> C64 {
    let base = 0.5 * mode.rho_mixer * lo_scale.conj() * rf_scale;
    match mode.region {
        MixerRegion::SmallSignal => base,
        MixerRegion::LoSaturated => base * (mode.v_lo_sat * 4.0 / std::f64::consts::PI / lo_rms),
    }
}

/// Bins `1..=M'` of the IF spectrum, divided by the conversion gain.
pub fn decode_if(if_symbol: &OfdmSymbol, map: &SubcarrierMap, known_gain: C64) -> Result<Vec<C64>> {
    if known_gain.norm() == 0.0 || !known_gain.is_finite() {
        return Err(Error::ZeroGain);
    }
    if if_symbol.lfft() != map.lfft {
        return Err(Error::LengthMismatch { left: if_symbol.lfft(), right: map.lfft });
    }
    Ok(if_symbol.freq[1..=map.m_block].iter().map(|v| v / known_gain).collect())
}

/// Waveform parameters for [`analog_mvm_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub m_block: usize,
    pub guard: f64,
    pub cp_overhead: f64,
    pub nu0: Option<usize>,
}

impl OracleConfig {
    pub fn new(m_block: usize) -> Self {
        Self { m_block, guard: 0.33, cp_overhead: 0.125, nu0: None }
    }

    pub fn from_layer(layer: &LayerSpec) -> Self {
        Self { m_block: layer.m_block, guard: layer.guard, cp_overhead: layer.cp_overhead, nu0: None }
    }
}

/// All `Q·M'` decoded rows, including zero padding of the last block.
pub fn analog_mvm_blocks(
    w: &CMatrix,
    x: &[C64],
    cfg: &OracleConfig,
    sp: &SystemParams,
    mode: &MixerMode,
) -> Result<Vec<C64>> {
    let (m, n) = (w.nrows(), w.ncols());
    if x.len() != n {
        return Err(Error::ShapeMismatch { expected: format!("input of length {n}"), found: x.len().to_string() });
    }
    if m == 0 || n == 0 || cfg.m_block == 0 {
        return Err(Error::InvalidArgument("empty MVM".into()));
    }
    let mb = cfg.m_block;
    let q = m.div_ceil(mb);
    let nu0 = cfg.nu0.unwrap_or_else(|| default_nu0(mb));
    let m_tilde = padded_band(mb, cfg.guard);
    // Inputs that do not fit one symbol are split over several symbols and
    // the partial products summed after decoding.
    let per_tile = (sp.lfft / 2).saturating_sub(nu0) / m_tilde;
    if per_tile == 0 {
        return Err(Error::IndexOverflow { needed: nu0 + m_tilde, limit: sp.lfft / 2 });
    }
    let num = Numerology::new(sp.lfft, cfg.cp_overhead, sp.bandwidth_hz);
    let lo_amp = (sp.p_w0_w / REFERENCE_DRIVE_W).sqrt();
    let rf_amp = (sp.p_x0_w / REFERENCE_DRIVE_W).sqrt();
    // Fixed, data-independent normalisation: unit-magnitude entries give
    // unit average power per waveform.
    let w_scale = lo_amp / ((mb * n) as f64).sqrt();
    let x_scale = rf_amp / (n as f64).sqrt();

    let mut out = vec![C64::new(0.0, 0.0); q * mb];
    let mut start = 0;
    while start < n {
        let cols = per_tile.min(n - start);
        let map = build_subcarrier_maps(cols, mb, cfg.guard, nu0, sp.lfft)?;
        let rf = encode_symbol(&x[start..start + cols], &map, Role::Input, x_scale, num)?;
        let mut block = vec![C64::new(0.0, 0.0); mb * cols];
        for b in 0..q {
            for r in 0..mb {
                let row = b * mb + r;
                for c in 0..cols {
                    block[r * cols + c] = if row < m { w[(row, start + c)] } else { C64::new(0.0, 0.0) };
                }
            }
            let lo = encode_symbol(&block, &map, Role::Weight, w_scale, num)?;
            let y = mix_baseband(&lo, &rf, mode)?;
            let rms = lo.rms();
            let gain = if rms > 0.0 {
                conversion_gain(mode, C64::new(w_scale, 0.0), C64::new(x_scale, 0.0), rms)
            } else {
                // An all-zero block decodes to zero regardless of the gain.
                conversion_gain(&MixerMode::small_signal(mode.rho_mixer), C64::new(w_scale, 0.0), C64::new(x_scale, 0.0), 1.0)
            };
            for (dst, v) in out[b * mb..(b + 1) * mb].iter_mut().zip(decode_if(&y, &map, gain)?) {
                *dst += v;
            }
        }
        start += cols;
    }
    Ok(out)
}

/// Stacks the decoded row blocks and drops the padding rows.
pub fn analog_mvm_oracle(
    w: &CMatrix,
    x: &[C64],
    cfg: &OracleConfig,
    sp: &SystemParams,
    mode: &MixerMode,
) -> Result<Vec<C64>> {
    let mut rows = analog_mvm_blocks(w, x, cfg, sp, mode)?;
    rows.truncate(w.nrows());
    Ok(rows)
}

/// `‖est − truth‖² / ‖truth‖²`.
pub fn decoded_nmse(est: &[C64], truth: &[C64]) -> f64 {
    let e: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).norm_sqr()).sum();
    let t: f64 = truth.iter().map(|z| z.norm_sqr()).sum();
    e / t
}

/// NMSE after the best complex scalar equaliser, which removes any pure
/// gain error and leaves only distortion.
pub fn fitted_nmse(est: &[C64], truth: &[C64]) -> f64 {
    let num: C64 = est.iter().zip(truth).map(|(a, b)| a.conj() * b).sum();
    let den: f64 = est.iter().map(|z| z.norm_sqr()).sum();
    if den == 0.0 {
        return 1.0;
    }
    let alpha = num / den;
    let scaled: Vec<C64> = est.iter().map(|v| v * alpha).collect();
    decoded_nmse(&scaled, truth)
}

pub fn format_complex_rows(rows: &[Vec<C64>]) -> String {
    let mut s = String::new();
    for row in rows {
        for (i, z) in row.iter().enumerate() {
            if i > 0 {
                s.push(';');
            }
            let _ = write!(s, "{},{}", z.re, z.im);
        }
        s.push('\n');
    }
    s
}

pub fn parse_complex_rows(text: &str) -> Result<Vec<Vec<C64>>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for pair in line.split(';') {
            let (re, im) = pair
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {}: expected re,im in {pair:?}", lineno + 1)))?;
            let p = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            row.push(C64::new(p(re)?, p(im)?));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_complex_rows(path: &Path, rows: &[Vec<C64>]) -> Result<()> {
    fs::write(path, format_complex_rows(rows))?;
    Ok(())
}

pub fn read_complex_rows(path: &Path) -> Result<Vec<Vec<C64>>> {
    parse_complex_rows(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{matvec, rel_error};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn unit_disk(rng: &mut impl Rng) -> C64 {
        loop {
            let z = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if z.norm() <= 1.0 {
                return z;
            }
        }
    }

    #[test]
    fn trivial_map() {
        let map = build_subcarrier_maps(1, 1, 0.0, 2, 16).unwrap();
        assert_eq!(map.nu_x, vec![2]);
        assert_eq!(map.nu_w(1, 1), 1);
        assert_eq!(map.m_tilde, 1);
    }

    #[test]
    fn three_tone_map() {
        let map = build_subcarrier_maps(3, 6, 0.33, 9, 4096).unwrap();
        assert_eq!(map.m_tilde, 8);
        assert_eq!(map.nu_x, vec![9, 17, 25]);
        assert_eq!(map.nu_w(1, 2), 16);
        for m in 1..=6 {
            for n in 1..=3 {
                assert_eq!(map.nu_w(m, n), map.nu_x[n - 1] - m);
            }
        }
    }

    #[test]
    fn map_errors() {
        assert!(matches!(build_subcarrier_maps(3, 6, 0.33, 6, 4096), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_subcarrier_maps(300, 6, 0.33, 9, 4096), Err(Error::IndexOverflow { .. })));
    }

    #[test]
    fn guard_excludes_cross_products() {
        let map = build_subcarrier_maps(25, 6, 0.33, 9, 4096).unwrap();
        assert!(map.cross_products_clear());
        let mut loaded = std::collections::HashSet::new();
        for m in 1..=6 {
            for n in 1..=25 {
                assert!(loaded.insert(map.nu_w(m, n)));
            }
        }
        let tight = build_subcarrier_maps(25, 6, 0.0, 9, 4096).unwrap();
        assert!(tight.cross_products_clear());
        // A comb narrower than the block spills into the band.
        let mut crowded = SubcarrierMap { m_tilde: 5, ..map.clone() };
        crowded.nu_x = (0..25).map(|j| 9 + 5 * j).collect();
        crowded.nu_w = (1..=6).flat_map(|m| crowded.nu_x.clone().into_iter().map(move |v| v - m)).collect();
        assert!(!crowded.cross_products_clear());
    }

    #[test]
    fn encode_examples() {
        let num = Numerology { cp_len: 2, sample_rate_hz: 1.0 };
        let map = build_subcarrier_maps(1, 1, 0.0, 2, 16).unwrap();
        let s = encode_symbol(&[c(1.0, 0.0)], &map, Role::Input, 1.0, num).unwrap();
        for (k, v) in s.freq.iter().enumerate() {
            assert_eq!(*v, if k == 2 { c(1.0, 0.0) } else { c(0.0, 0.0) });
        }
        let s = encode_symbol(&[c(1.0, 0.0)], &map, Role::Weight, 1.0, num).unwrap();
        assert_eq!(s.freq[1], c(1.0, 0.0));

        let map3 = build_subcarrier_maps(3, 6, 0.33, 9, 4096).unwrap();
        let mut w = vec![c(0.0, 0.0); 18];
        w[0] = c(0.0, 1.0);
        let s = encode_symbol(&w, &map3, Role::Weight, 1.0, num).unwrap();
        assert_eq!(s.freq[8], c(0.0, -1.0));

        assert!(matches!(
            encode_symbol(&[c(1.0, 0.0); 2], &map3, Role::Input, 1.0, num),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn cp_is_tail_of_useful_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let freq: Vec<C64> = (0..64).map(|_| unit_disk(&mut rng)).collect();
        let s = OfdmSymbol::from_freq(freq.clone(), 8, 1.0);
        assert_eq!(s.time.len(), 72);
        assert_eq!(&s.time[..8], &s.useful()[56..]);
        let back = dft(s.useful());
        assert!(rel_error(&back, &freq) < 1e-13);
    }

    #[test]
    fn mixer_examples() {
        let out = mixer_emulate(&[2.0], &[3.0], &MixerMode::small_signal(0.2512)).unwrap();
        assert!((out[0] - 1.5072).abs() < 1e-12);
        let out = mixer_emulate(&[-5.0], &[3.0], &MixerMode::lo_saturated(1.0, 1.0)).unwrap();
        assert_eq!(out, vec![-3.0]);
        let out = mixer_emulate(&[1.0, -2.0, 0.5], &[0.0; 3], &MixerMode::small_signal(0.2512)).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
        assert!(matches!(
            mixer_emulate(&[1.0], &[1.0, 2.0], &MixerMode::small_signal(1.0)),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn single_tone_product() {
        let l = 16;
        let mut a = vec![c(0.0, 0.0); l];
        let mut b = vec![c(0.0, 0.0); l];
        a[1] = c(0.5, 0.0);
        b[2] = c(3.0, 0.0);
        let lo = OfdmSymbol::from_freq(a, 0, 1.0);
        let rf = OfdmSymbol::from_freq(b, 0, 1.0);
        let mode = MixerMode::small_signal(1.0);
        let y = mix_baseband(&lo, &rf, &mode).unwrap();
        let map = build_subcarrier_maps(1, 1, 0.0, 2, 16).unwrap();
        let gain = conversion_gain(&mode, c(1.0, 0.0), c(1.0, 0.0), 1.0);
        let d = decode_if(&y, &map, gain).unwrap();
        assert!((d[0] - c(1.5, 0.0)).norm() < 1e-12);
        assert!(matches!(decode_if(&y, &map, c(0.0, 0.0)), Err(Error::ZeroGain)));
    }

    #[test]
    fn two_term_block() {
        let sp = SystemParams::reference();
        let w = CMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(2.0, 0.0)]);
        let x = [c(3.0, 0.0), c(4.0, 0.0)];
        let cfg = OracleConfig { m_block: 1, ..OracleConfig::new(1) };
        let y = analog_mvm_oracle(&w, &x, &cfg, &sp, &MixerMode::from_params(&sp, MixerRegion::SmallSignal)).unwrap();
        assert!((y[0] - c(11.0, 0.0)).norm() < 11.0 * 1e-9);
    }

    #[test]
    fn identity_recovers_basis_vector() {
        let sp = SystemParams::reference();
        let w = CMatrix::identity(6, 6);
        let mut x = vec![c(0.0, 0.0); 6];
        x[2] = c(1.0, 0.0);
        let y = analog_mvm_oracle(&w, &x, &OracleConfig::new(6), &sp, &MixerMode::from_params(&sp, MixerRegion::SmallSignal))
            .unwrap();
        assert!(rel_error(&y, &x) < 1e-12);
    }

    #[test]
    fn layer1_matches_dense_product() {
        let sp = SystemParams::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = CMatrix::from_fn(6, 25, |_, _| unit_disk(&mut rng));
        let x: Vec<C64> = (0..25).map(|_| unit_disk(&mut rng)).collect();
        let truth = matvec(&w, &x);
        let small = MixerMode::from_params(&sp, MixerRegion::SmallSignal);
        let y = analog_mvm_oracle(&w, &x, &OracleConfig::new(6), &sp, &small).unwrap();
        assert!(rel_error(&y, &truth) < 1e-9);

        // One row block through the bare encode / mix / decode chain.
        let map = build_subcarrier_maps(25, 6, 0.33, 9, 4096).unwrap();
        let num = Numerology::new(4096, 0.125, sp.bandwidth_hz);
        assert_eq!(num.cp_len, 512);
        let flat: Vec<C64> = (0..6).flat_map(|r| (0..25).map(move |cc| (r, cc))).map(|(r, cc)| w[(r, cc)]).collect();
        let lo = encode_symbol(&flat, &map, Role::Weight, 0.3, num).unwrap();
        let rf = encode_symbol(&x, &map, Role::Input, 0.7, num).unwrap();
        let mode = MixerMode::small_signal(sp.rho_mixer);
        let ifs = mix_baseband(&lo, &rf, &mode).unwrap();
        let d = decode_if(&ifs, &map, conversion_gain(&mode, c(0.3, 0.0), c(0.7, 0.0), 1.0)).unwrap();
        assert!(rel_error(&d, &truth) < 1e-9);

        let sat = MixerMode::from_params(&sp, MixerRegion::LoSaturated);
        let ys = analog_mvm_oracle(&w, &x, &OracleConfig::new(6), &sp, &sat).unwrap();
        assert!(rel_error(&ys, &truth) > rel_error(&y, &truth));
    }

    #[test]
    fn wide_input_is_tiled() {
        let sp = SystemParams { lfft: 256, ..SystemParams::reference() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = CMatrix::from_fn(13, 40, |_, _| unit_disk(&mut rng));
        let x: Vec<C64> = (0..40).map(|_| unit_disk(&mut rng)).collect();
        let small = MixerMode::from_params(&sp, MixerRegion::SmallSignal);
        let rows = analog_mvm_blocks(&w, &x, &OracleConfig::new(6), &sp, &small).unwrap();
        assert_eq!(rows.len(), 18);
        let truth = matvec(&w, &x);
        assert!(rel_error(&rows[..13], &truth) < 1e-9);
        let rms = (truth.iter().map(|z| z.norm_sqr()).sum::<f64>() / 13.0).sqrt();
        assert!(rows[13..].iter().all(|z| z.norm() < 1e-9 * rms));
    }

    #[test]
    fn passband_product_matches_baseband_model() {
        // 16x oversampled real passband: LO at bin 100, RF at bin 140.
        let l = 32;
        let os = 16;
        let total = l * os;
        let map = build_subcarrier_maps(2, 2, 0.5, 5, l).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w: Vec<C64> = (0..4).map(|_| unit_disk(&mut rng)).collect();
        let x: Vec<C64> = (0..2).map(|_| unit_disk(&mut rng)).collect();
        let num = Numerology { cp_len: 0, sample_rate_hz: 1.0 };
        let sw = encode_symbol(&w, &map, Role::Weight, 1.0, num).unwrap();
        let sx = encode_symbol(&x, &map, Role::Input, 1.0, num).unwrap();
        let (amp_w, amp_x) = (1.3, 0.6);
        let (cw, cx) = (100usize, 140usize);
        let envelope = |freq: &[C64], t: usize| -> C64 {
            freq.iter()
                .enumerate()
                .filter(|(_, v)| v.norm() > 0.0)
                .map(|(k, v)| v * C64::from_polar(1.0, 2.0 * std::f64::consts::PI * (k * t) as f64 / total as f64))
                .sum()
        };
        let carrier = |cf: usize, t: usize| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * (cf * t) as f64 / total as f64);
        let lo: Vec<f64> = (0..total).map(|t| (amp_w * envelope(&sw.freq, t) * carrier(cw, t)).re).collect();
        let rf: Vec<f64> = (0..total).map(|t| (amp_x * envelope(&sx.freq, t) * carrier(cx, t)).re).collect();
        let mode = MixerMode::small_signal(0.2512);
        let prod = mixer_emulate(&lo, &rf, &mode).unwrap();
        let spec = dft(&prod.iter().map(|v| c(*v, 0.0)).collect::<Vec<_>>());
        let gain = conversion_gain(&mode, c(amp_w, 0.0), c(amp_x, 0.0), 1.0);
        // Positive-frequency image carries half the complex envelope.
        let decoded: Vec<C64> = (1..=2).map(|m| 2.0 * spec[cx - cw + m] / gain).collect();
        let truth = [w[0] * x[0] + w[1] * x[1], w[2] * x[0] + w[3] * x[1]];
        assert!(rel_error(&decoded, &truth) < 1e-10);
    }

    #[test]
    fn golden_roundtrip() {
        let rows = vec![vec![c(1.0, -0.5), c(1e-17, 3.25)], vec![c(-2.0, 0.0)]];
        let text = format_complex_rows(&rows);
        assert_eq!(text.lines().next().unwrap(), "1,-0.5;0.00000000000000001,3.25");
        assert_eq!(parse_complex_rows(&text).unwrap(), rows);
        assert!(parse_complex_rows("1;2\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn pointwise_product_is_circular_convolution(seed in any::<u64>(), n in 1usize..6, mb in 1usize..5) {
            let l = 128;
            let map = build_subcarrier_maps(n, mb, 0.33, mb + 3, l).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let num = Numerology { cp_len: 16, sample_rate_hz: 1.0 };
            let w: Vec<C64> = (0..n * mb).map(|_| unit_disk(&mut rng)).collect();
            let x: Vec<C64> = (0..n).map(|_| unit_disk(&mut rng)).collect();
            let a = encode_symbol(&w, &map, Role::Weight, 1.0, num).unwrap();
            let b = encode_symbol(&x, &map, Role::Input, 1.0, num).unwrap();
            let prod: Vec<C64> = a.useful().iter().zip(b.useful()).map(|(p, q)| p * q).collect();
            let got = dft(&prod);
            for k in 0..l {
                let mut want = c(0.0, 0.0);
                for j in 0..l {
                    want += a.freq[j] * b.freq[(k + l - j) % l];
                }
                prop_assert!((got[k] - want).norm() < 1e-10);
            }
        }

        #[test]
        fn legal_maps_keep_band_clean(n in 1usize..40, mb in 1usize..10, guard in 0.0f64..1.0) {
            let map = build_subcarrier_maps(n, mb, guard, mb + 3, 4096).unwrap();
            prop_assert!(map.m_tilde >= mb);
            prop_assert!(map.cross_products_clear());
            prop_assert!(map.nu_w(mb, 1) >= 1);
        }
    }
}

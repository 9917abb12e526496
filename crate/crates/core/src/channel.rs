//! InF-SH downlink channels: geometry, LoS draw, path loss, shadowing and
//! Rician / Rayleigh small-scale fading on a half-wavelength UPA.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::rng::SeedStream;

/// LoS-probability decay length for the sparse-clutter / high-BS scenario.
pub fn k_infsh(d_clutter: f64, r: f64, h_c: f64, h_bs: f64, h_client: f64) -> f64 {
    -d_clutter / (1.0 - r).ln() * (h_bs - h_client) / (h_c - h_client)
}

pub fn los_probability(d2d: f64, k_infsh: f64) -> f64 {
    (-d2d / k_infsh).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LosFading {
    /// Rician factor in dB.
    Rician { k_db: f64 },
    /// `K → ∞`: deterministic steering vector with a random common phase.
    PureLos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryParams {
    pub d2d_min_m: f64,
    pub d2d_max_m: f64,
    pub h_bs_m: f64,
    pub h_client_m: f64,
    pub g_bs_dbi: f64,
    pub g_client_dbi: f64,
    pub f_ghz: f64,
    pub k_infsh_m: f64,
    pub los_fading: LosFading,
    pub sf_sigma_los_db: f64,
    pub sf_sigma_nlos_db: f64,
}

impl GeometryParams {
    pub fn inf_sh() -> Self {
        Self {
            d2d_min_m: 10.0,
            d2d_max_m: 15.0,
            h_bs_m: 8.0,
            h_client_m: 1.5,
            g_bs_dbi: 8.0,
            g_client_dbi: 3.0,
            f_ghz: 2.5,
            k_infsh_m: k_infsh(10.0, 0.2, 2.0, 8.0, 1.5),
            los_fading: LosFading::Rician { k_db: 9.0 },
            sf_sigma_los_db: 4.0,
            sf_sigma_nlos_db: 5.9,
        }
    }

    /// Every client at the same horizontal distance.
    pub fn at_distance(mut self, d2d_m: f64) -> Self {
        self.d2d_min_m = d2d_m;
        self.d2d_max_m = d2d_m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d2d_min_m > 0.0 && self.d2d_max_m >= self.d2d_min_m) {
            return Err(Error::InvalidArgument(format!(
                "d2d range [{}, {}] must be positive and ordered",
                self.d2d_min_m, self.d2d_max_m
            )));
        }
        if !(self.h_bs_m > self.h_client_m) {
            return Err(Error::InvalidArgument("h_bs must exceed h_client".into()));
        }
        if !(self.k_infsh_m > 0.0 && self.f_ghz > 0.0) {
            return Err(Error::InvalidArgument("k_infsh and carrier must be positive".into()));
        }
        if !(self.sf_sigma_los_db >= 0.0 && self.sf_sigma_nlos_db >= 0.0) {
            return Err(Error::InvalidArgument("shadow-fading sigmas must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for GeometryParams {
    fn default() -> Self {
        Self::inf_sh()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientGeometry {
    pub d2d: f64,
    pub d3d: f64,
    pub phi: f64,
    pub theta: f64,
    pub is_los: bool,
    pub sf_db: f64,
}

impl ClientGeometry {
    pub fn new(d2d: f64, phi: f64, is_los: bool, sf_db: f64, gp: &GeometryParams) -> Self {
        let dh = gp.h_bs_m - gp.h_client_m;
        Self {
            d2d,
            d3d: (d2d * d2d + dh * dh).sqrt(),
            phi,
            theta: ((gp.h_client_m - gp.h_bs_m) / d2d).atan(),
            is_los,
            sf_db,
        }
    }
}

/// Draws `k` clients. Each quantity comes from its own substream indexed by
/// client, so client `i` is the same whatever `k` is.
pub fn sample_geometry(seeds: &SeedStream, k: usize, gp: &GeometryParams) -> Vec<ClientGeometry> {
    (0..k as u64)
        .map(|i| {
            let mut pos = seeds.substream("geometry", i);
            let d2d = if gp.d2d_max_m > gp.d2d_min_m {
                pos.random_range(gp.d2d_min_m..gp.d2d_max_m)
            } else {
                gp.d2d_min_m
            };
            let phi = pos.random_range(0.0..2.0 * PI);
            let is_los = seeds.substream("los", i).random_bool(los_probability(d2d, gp.k_infsh_m));
            let sigma = if is_los { gp.sf_sigma_los_db } else { gp.sf_sigma_nlos_db };
            let z: f64 = seeds.substream("shadow", i).sample(StandardNormal);
            ClientGeometry::new(d2d, phi, is_los, sigma * z, gp)
        })
        .collect()
}

pub fn path_loss_db(d3d: f64, f_ghz: f64, is_los: bool) -> Result<f64> {
    if !(d3d > 0.0 && f_ghz > 0.0) {
        return Err(Error::Domain(format!("path loss needs d3d > 0 and f > 0, got {d3d}, {f_ghz}")));
    }
    let los = 31.84 + 21.5 * d3d.log10() + 19.0 * f_ghz.log10();
    if is_los {
        Ok(los)
    } else {
        Ok(los.max(32.4 + 23.0 * d3d.log10() + 20.0 * f_ghz.log10()))
    }
}

pub fn gain_from_db(pl_db: f64, sf_db: f64, gp: &GeometryParams) -> f64 {
    10f64.powf(-(pl_db + sf_db - gp.g_bs_dbi - gp.g_client_dbi) / 10.0)
}

pub fn large_scale_gain(geom: &ClientGeometry, gp: &GeometryParams) -> Result<f64> {
    Ok(gain_from_db(path_loss_db(geom.d3d, gp.f_ghz, geom.is_los)?, geom.sf_db, gp))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpaShape {
    pub rows: usize,
    pub cols: usize,
}

impl UpaShape {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    /// Most nearly square factorisation with `rows <= cols`
    /// (64 → 8×8, 128 → 8×16, 1024 → 32×32).
    pub fn for_antennas(n_t: usize) -> Result<Self> {
        if n_t == 0 {
            return Err(Error::InvalidArgument("array needs at least one element".into()));
        }
        let mut rows = (n_t as f64).sqrt().floor() as usize;
        while n_t % rows != 0 {
            rows -= 1;
        }
        Ok(Self { rows, cols: n_t / rows })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Steering vector of an array in the vertical plane: row index `p` runs
/// along the vertical with direction cosine `sin θ`, column index `q` runs
/// horizontally with `cos θ · sin φ`. Element `(p, q)` sits at `p*cols + q`.
pub fn upa_steering(theta: f64, phi: f64, rows: usize, cols: usize) -> Vec<C64> {
    let uy = theta.sin();
    let uz = theta.cos() * phi.sin();
    let mut a = Vec::with_capacity(rows * cols);
    for p in 0..rows {
        for q in 0..cols {
            a.push(C64::from_polar(1.0, PI * (p as f64 * uy + q as f64 * uz)));
        }
    }
    a
}

fn cn01(rng: &mut impl Rng) -> C64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Unit-average-power small-scale vector for one client.
pub fn small_scale(
    seeds: &SeedStream,
    index: u64,
    geom: &ClientGeometry,
    array: UpaShape,
    fading: LosFading,
) -> Vec<C64> {
    let mut scatter = seeds.substream("fading", index);
    if !geom.is_los {
        return (0..array.len()).map(|_| cn01(&mut scatter)).collect();
    }
    let phase = seeds.substream("phase", index).random_range(0.0..2.0 * PI);
    let a = upa_steering(geom.theta, geom.phi, array.rows, array.cols);
    let los = C64::from_polar(1.0, phase);
    match fading {
        LosFading::PureLos => a.iter().map(|v| los * v).collect(),
        LosFading::Rician { k_db } => {
            let k = 10f64.powf(k_db / 10.0);
            let (wl, ws) = ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt());
            a.iter().map(|v| wl * los * v + ws * cn01(&mut scatter)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `N_t × K`, column `k` is `h_k`.
    pub h: CMatrix,
    pub zeta: Vec<f64>,
    /// Empty for snapshots read back from CSV.
    pub geoms: Vec<ClientGeometry>,
    pub seed: u64,
}

impl ChannelRealization {
    pub fn n_t(&self) -> usize {
        self.h.nrows()
    }

    pub fn k(&self) -> usize {
        self.h.ncols()
    }

    pub fn column(&self, k: usize) -> Vec<C64> {
        self.h.column(k).iter().copied().collect()
    }
}

pub fn sample_channels(seeds: &SeedStream, k: usize, array: UpaShape, gp: &GeometryParams) -> Result<ChannelRealization> {
    gp.validate()?;
    if k == 0 || array.is_empty() {
        return Err(Error::InvalidArgument("need at least one client and one antenna".into()));
    }
    let geoms = sample_geometry(seeds, k, gp);
    let mut h = CMatrix::zeros(array.len(), k);
    let mut zeta = Vec::with_capacity(k);
    for (i, g) in geoms.iter().enumerate() {
        let z = large_scale_gain(g, gp)?;
        let s = z.sqrt();
        for (dst, v) in h.column_mut(i).iter_mut().zip(small_scale(seeds, i as u64, g, array, gp.los_fading)) {
            *dst = v * s;
        }
        zeta.push(z);
    }
    Ok(ChannelRealization { h, zeta, geoms, seed: seeds.master() })
}

/// Writes `n_t,k,seed` with its values, then one `k,antenna,re,im,zeta`
/// row per entry.
pub fn write_channel_csv<W: Write>(ch: &ChannelRealization, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(["n_t", "k", "seed"])?;
    w.write_record([ch.n_t().to_string(), ch.k().to_string(), ch.seed.to_string()])?;
    w.write_record(["k", "antenna", "re", "im", "zeta"])?;
    for k in 0..ch.k() {
        for a in 0..ch.n_t() {
            let v = ch.h[(a, k)];
            w.write_record([k.to_string(), a.to_string(), v.re.to_string(), v.im.to_string(), ch.zeta[k].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn field(rec: &csv::StringRecord, i: usize) -> Result<&str> {
    rec.get(i).ok_or_else(|| Error::Parse(format!("channel csv: short record {rec:?}")))
}

pub fn read_channel_csv<R: Read>(input: R) -> Result<ChannelRealization> {
    let mut r = csv::ReaderBuilder::new().flexible(true).has_headers(false).from_reader(input);
    let mut records = r.records();
    let mut next = |what: &str| -> Result<csv::StringRecord> {
        records.next().ok_or_else(|| Error::Parse(format!("channel csv: missing {what}")))?.map_err(Error::from)
    };
    let head = next("header")?;
    if head.iter().collect::<Vec<_>>() != ["n_t", "k", "seed"] {
        return Err(Error::Parse("channel csv: expected n_t,k,seed header".into()));
    }
    let dims = next("dimensions")?;
    let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("channel csv: {e}")));
    let parse_f64 = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("channel csv: {e}")));
    let n_t = parse_usize(field(&dims, 0)?)?;
    let k = parse_usize(field(&dims, 1)?)?;
    let seed = field(&dims, 2)?.parse::<u64>().map_err(|e| Error::Parse(format!("channel csv: {e}")))?;
    next("body header")?;
    let mut h = CMatrix::zeros(n_t, k);
    let mut zeta = vec![f64::NAN; k];
    let mut seen = 0usize;
    for rec in records {
        let rec = rec?;
        let (kk, a) = (parse_usize(field(&rec, 0)?)?, parse_usize(field(&rec, 1)?)?);
        if kk >= k || a >= n_t {
            return Err(Error::Parse(format!("channel csv: index ({kk}, {a}) out of range")));
        }
        h[(a, kk)] = C64::new(parse_f64(field(&rec, 2)?)?, parse_f64(field(&rec, 3)?)?);
        zeta[kk] = parse_f64(field(&rec, 4)?)?;
        seen += 1;
    }
    if seen != n_t * k {
        return Err(Error::Parse(format!("channel csv: expected {} entries, found {seen}", n_t * k)));
    }
    Ok(ChannelRealization { h, zeta, geoms: Vec::new(), seed })
}

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use arfc_core::channel::{sample_channels, ChannelRealization, GeometryParams, UpaShape};
use arfc_core::linalg::CMatrix;
use arfc_core::metrics::{aggregate_energy, compute_kappa, nmse_ref, EnergyBreakdown};
use arfc_core::nn::{
    calibrate_sref, evaluate, load_mnist, load_mnist_test, read_weights, train_or_load, CalibrationStats, CnnModel,
    EvalNoise, EvalResult, Splits, TrainConfig,
};
use arfc_core::params::{LayerSpec, SystemParams, PICO};
use arfc_core::precision::{
    budget_from_uniform, omega_weights, optimize_mixed_precision, AdamConfig, BudgetSpec, MixedResult,
    PrecisionProfile,
};
use arfc_core::rng::SeedStream;
use arfc_core::sca::{solve_layer, solve_layer_full, trace_gap, LayerProblem, PhyDesign, ScaOptions};
use arfc_core::{Error, Result};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind};

/// One CSV file, all cells already formatted.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    /// Header led by the experiment, config hash, seed and replicate columns.
    pub fn prefixed(name: &str, extra: &[&str]) -> Self {
        let cols: Vec<&str> = PREFIX.iter().copied().chain(extra.iter().copied()).collect();
        Self::new(name, &cols)
    }

    pub fn column(&self, name: &str) -> usize {
        self.header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join(format!("{}.csv", self.name)))?));
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Result tables (deterministic) and wall-clock tables (not).
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub tables: Vec<Table>,
    pub timings: Vec<Table>,
    pub infeasible: usize,
    pub errors: usize,
}

impl SweepOutput {
    pub fn table(&self, name: &str) -> &Table {
        self.tables.iter().find(|t| t.name == name).unwrap_or_else(|| panic!("no table {name}"))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for t in self.tables.iter().chain(&self.timings) {
            t.write(dir)?;
        }
        Ok(())
    }

    /// 0 when every cell succeeded, 2 when only infeasible cells occurred,
    /// 1 on any error.
    pub fn exit_code(&self) -> i32 {
        if self.errors > 0 {
            1
        } else if self.infeasible > 0 {
            2
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ok,
    Infeasible(String),
    Failed(String),
}

impl Outcome {
    fn of(e: &Error) -> Self {
        match e {
            Error::LayerInfeasible { .. }
            | Error::InfeasibleClient { .. }
            | Error::SubproblemInfeasible(_)
            | Error::BudgetExhausted { .. } => Outcome::Infeasible(e.to_string()),
            _ => Outcome::Failed(e.to_string()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Ok => "ok",
            Outcome::Infeasible(_) => "infeasible",
            Outcome::Failed(_) => "error",
        }
    }

    fn message(&self) -> String {
        match self {
            Outcome::Ok => String::new(),
            Outcome::Infeasible(m) | Outcome::Failed(m) => m.clone(),
        }
    }
}

fn tally(outcomes: impl IntoIterator<Item = Outcome>) -> (usize, usize) {
    outcomes.into_iter().fold((0, 0), |(i, e), o| match o {
        Outcome::Ok => (i, e),
        Outcome::Infeasible(_) => (i + 1, e),
        Outcome::Failed(_) => (i, e + 1),
    })
}

pub fn num(v: f64) -> String {
    format!("{v:.12e}")
}

/// Resolved parameters shared by every cell of a sweep.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub sp: SystemParams,
    pub gp: GeometryParams,
    pub layers: Vec<LayerSpec>,
}

impl Context {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let sp = cfg.system.params()?;
        let gp = cfg.geometry.params(cfg.system.carrier_ghz)?;
        Ok(Self { hash: cfg.hash(), sp, gp, layers: LayerSpec::lenet5(), cfg })
    }

    pub fn replicate(&self, r: usize) -> SeedStream {
        SeedStream::new(self.cfg.run.seed).child("replicate", r as u64)
    }

    fn prefix(&self, kind: ExperimentKind, r: usize) -> Vec<String> {
        vec![kind.as_str().into(), self.hash.clone(), self.cfg.run.seed.to_string(), r.to_string()]
    }

    pub fn channel(&self, r: usize, k: usize, n_t: usize, gp: &GeometryParams) -> Result<ChannelRealization> {
        sample_channels(&self.replicate(r).child("channel", 0), k, UpaShape::for_antennas(n_t)?, gp)
    }

    pub fn sca(&self) -> ScaOptions {
        ScaOptions { i_max: self.cfg.run.i_max, ..ScaOptions::default() }
    }

    pub fn layer(&self) -> &LayerSpec {
        &self.layers[self.cfg.run.layer - 1]
    }
}

const PREFIX: [&str; 4] = ["experiment", "config_hash", "seed", "replicate"];

/// Five solved layers on one channel draw.
#[derive(Debug, Clone)]
pub struct NetDesign {
    pub designs: Vec<PhyDesign>,
    pub energy: EnergyBreakdown,
    /// `eps[l][k]` realised by the designs.
    pub eps_realized: Vec<Vec<f64>>,
}

pub fn design_network(
    h: &CMatrix,
    eps: &[f64],
    lambda: f64,
    layers: &[LayerSpec],
    sp: &SystemParams,
    opts: &ScaOptions,
) -> Result<NetDesign> {
    let k = h.ncols();
    let kappa = compute_kappa(sp);
    let mut designs = Vec::with_capacity(layers.len());
    let mut eps_realized = Vec::with_capacity(layers.len());
    for (layer, e) in layers.iter().zip(eps) {
        let prob = LayerProblem::new(h.clone(), &vec![*e; k], layer, sp, lambda)?;
        let d = solve_layer(&prob, opts)?;
        eps_realized.push(
            d.gains.iter().zip(&d.beta).map(|(a, b)| nmse_ref(*a, *b, kappa).map(f64::sqrt)).collect::<Result<_>>()?,
        );
        designs.push(d);
    }
    let points: Vec<_> = designs.iter().map(|d| d.operating_point()).collect();
    let energy = aggregate_energy(&points, layers, sp)?;
    Ok(NetDesign { designs, energy, eps_realized })
}

/// Trained model, data splits and calibration statistics.
#[derive(Debug, Clone)]
pub struct NnAssets {
    pub model: CnnModel,
    pub splits: Splits,
    pub stats: CalibrationStats,
    pub clean: EvalResult,
}

/// Reads the weight file, training and saving it first when missing.
pub fn load_assets(cfg: &ExperimentConfig) -> Result<NnAssets> {
    let d = &cfg.data;
    let seeds = SeedStream::new(d.split_seed);
    let (model, test) = if d.model_path.exists() {
        (read_weights(BufReader::new(File::open(&d.model_path)?))?, load_mnist_test(&d.mnist_dir)?)
    } else {
        let mnist = load_mnist(&d.mnist_dir)?;
        (train_or_load(&d.model_path, Some(&mnist), &TrainConfig::default(), &seeds)?, mnist.test)
    };
    let splits = Splits::from_test(&test, d.n_eval, d.n_calib, &seeds)?;
    let stats = calibrate_sref(&model, &splits.calib)?;
    let clean = evaluate(&model, &splits.eval, &EvalNoise::Clean, &stats, 1, &seeds)?;
    Ok(NnAssets { model, splits, stats, clean })
}

pub fn run_convergence(ctx: &Context) -> Result<SweepOutput> {
    let c = &ctx.cfg.convergence;
    let cells: Vec<(usize, f64, usize)> = c
        .ks
        .iter()
        .flat_map(|k| c.lambdas.iter().flat_map(move |l| (0..ctx.cfg.run.replicates).map(move |r| (*k, *l, r))))
        .collect();
    let layer = ctx.layer();
    let opts = ctx.sca();
    let results: Vec<_> = cells
        .par_iter()
        .map(|&(k, lambda, r)| {
            let run = || -> Result<(PhyDesign, PhyDesign, f64, f64)> {
                let ch = ctx.channel(r, k, c.n_t, &ctx.gp)?;
                let prob = LayerProblem::new(ch.h, &vec![c.eps; k], layer, &ctx.sp, lambda)?;
                let t = Instant::now();
                let red = solve_layer(&prob, &opts)?;
                let t_red = t.elapsed().as_secs_f64();
                let t = Instant::now();
                let full = solve_layer_full(&prob, &opts)?;
                Ok((red, full, t_red, t.elapsed().as_secs_f64()))
            };
            (k, lambda, r, run())
        })
        .collect();

    let mut traces = Table::prefixed("convergence", &["k", "lambda", "eps", "n_t", "solver", "iter", "objective", "status"]);
    let mut summary = Table::prefixed(
        "convergence_summary",
        &["k", "lambda", "iters_reduced", "iters_full", "max_trace_gap", "monotone", "final_objective", "status", "message"],
    );
    let mut timing = Table::prefixed("convergence_timing", &["k", "lambda", "solver", "seconds"]);
    let mut outcomes = Vec::new();
    for (k, lambda, r, res) in results {
        let head = |extra: &[String]| -> Vec<String> {
            let mut row = ctx.prefix(ExperimentKind::Convergence, r);
            row.extend([k.to_string(), num(lambda)]);
            row.extend_from_slice(extra);
            row
        };
        match res {
            Ok((red, full, t_red, t_full)) => {
                for (name, d) in [("reduced", &red), ("full", &full)] {
                    let all = std::iter::once(d.initial_objective).chain(d.objective_trace.iter().copied());
                    for (i, v) in all.enumerate() {
                        traces.rows.push(head(&[num(c.eps), c.n_t.to_string(), name.into(), i.to_string(), num(v), "ok".into()]));
                    }
                }
                let monotone = [&red, &full].iter().all(|d| {
                    let mut prev = d.initial_objective;
                    d.objective_trace.iter().all(|v| {
                        let ok = *v <= prev;
                        prev = *v;
                        ok
                    })
                });
                summary.rows.push(head(&[
                    red.iterations.to_string(),
                    full.iterations.to_string(),
                    num(trace_gap(&red.objective_trace, &full.objective_trace)),
                    monotone.to_string(),
                    num(red.objective()),
                    "ok".into(),
                    String::new(),
                ]));
                timing.rows.push(head(&["reduced".into(), num(t_red)]));
                timing.rows.push(head(&["full".into(), num(t_full)]));
                outcomes.push(Outcome::Ok);
            }
            Err(e) => {
                let o = Outcome::of(&e);
                summary.rows.push(head(&[
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    o.label().into(),
                    o.message(),
                ]));
                outcomes.push(o);
            }
        }
    }
    let (infeasible, errors) = tally(outcomes);
    Ok(SweepOutput { tables: vec![traces, summary], timings: vec![timing], infeasible, errors })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs serially so timings are not disturbed by other cells.
pub fn run_runtime(ctx: &Context) -> Result<SweepOutput> {
    let c = &ctx.cfg.runtime;
    let layer = ctx.layer();
    let opts = ctx.sca();
    let mut results = Table::prefixed("runtime", &["n_t", "solver", "iterations", "objective", "status"]);
    let mut per_rep = Table::prefixed("runtime_samples_timing", &["n_t", "solver", "seconds"]);
    let mut medians = Table::new(
        "runtime_timing",
        &["experiment", "config_hash", "seed", "n_t", "solver", "repetitions", "median_s", "min_s", "max_s"],
    );
    let mut outcomes = Vec::new();
    let problem = |n_t: usize, rep: usize| -> Result<LayerProblem> {
        let ch = ctx.channel(rep, c.k, n_t, &ctx.gp)?;
        LayerProblem::new(ch.h, &vec![c.eps; c.k], layer, &ctx.sp, c.lambda)
    };
    // Warm caches and lazy allocations before the first timed solve.
    if let Ok(p) = problem(c.n_t[0], 0) {
        let _ = solve_layer(&p, &opts);
        let _ = solve_layer_full(&p, &opts);
    }
    for &n_t in &c.n_t {
        let mut times = [Vec::new(), Vec::new()];
        for rep in 0..c.repetitions {
            let prob = match problem(n_t, rep) {
                Ok(p) => p,
                Err(e) => {
                    outcomes.push(Outcome::of(&e));
                    continue;
                }
            };
            for (s, name) in ["reduced", "full"].iter().enumerate() {
                let t = Instant::now();
                let res = if s == 0 { solve_layer(&prob, &opts) } else { solve_layer_full(&prob, &opts) };
                let secs = t.elapsed().as_secs_f64();
                let mut row = ctx.prefix(ExperimentKind::Runtime, rep);
                row.extend([n_t.to_string(), name.to_string()]);
                match res {
                    Ok(d) => {
                        results.rows.push([row.clone(), vec![d.iterations.to_string(), num(d.objective()), "ok".into()]].concat());
                        per_rep.rows.push([row, vec![num(secs)]].concat());
                        times[s].push(secs);
                        outcomes.push(Outcome::Ok);
                    }
                    Err(e) => {
                        let o = Outcome::of(&e);
                        results.rows.push([row, vec![String::new(), String::new(), o.label().into()]].concat());
                        outcomes.push(o);
                    }
                }
            }
        }
        for (s, name) in ["reduced", "full"].iter().enumerate() {
            let t = &mut times[s];
            if t.is_empty() {
                continue;
            }
            let (lo, hi) = (t.iter().copied().fold(f64::INFINITY, f64::min), t.iter().copied().fold(0.0, f64::max));
            medians.rows.push(vec![
                ExperimentKind::Runtime.as_str().into(),
                ctx.hash.clone(),
                ctx.cfg.run.seed.to_string(),
                n_t.to_string(),
                name.to_string(),
                t.len().to_string(),
                num(median(t)),
                num(lo),
                num(hi),
            ]);
        }
    }
    let (infeasible, errors) = tally(outcomes);
    Ok(SweepOutput { tables: vec![results], timings: vec![medians, per_rep], infeasible, errors })
}

fn pj(v: f64) -> String {
    num(v / PICO)
}

pub fn run_energy_accuracy(ctx: &Context, assets: &NnAssets) -> Result<SweepOutput> {
    let c = &ctx.cfg.energy_accuracy;
    let cells: Vec<(f64, usize)> =
        c.eps.iter().flat_map(|e| (0..ctx.cfg.run.replicates).map(move |r| (*e, r))).collect();
    let opts = ctx.sca();
    let results: Vec<_> = cells
        .par_iter()
        .map(|&(eps, r)| {
            let t = Instant::now();
            let run = || -> Result<(NetDesign, EvalResult)> {
                let ch = ctx.channel(r, c.k, c.n_t, &ctx.gp)?;
                let net = design_network(&ch.h, &[eps; 5], 0.0, &ctx.layers, &ctx.sp, &opts)?;
                let noise = EvalNoise::PerClient(net.eps_realized.clone());
                let ev = evaluate(
                    &assets.model,
                    &assets.splits.eval,
                    &noise,
                    &assets.stats,
                    ctx.cfg.data.trials,
                    &ctx.replicate(r).child("eval-noise", 0),
                )?;
                Ok((net, ev))
            };
            (eps, r, run(), t.elapsed().as_secs_f64())
        })
        .collect();
    let mut table = Table::prefixed(
        "energy_accuracy",
        &[
            "eps",
            "e1_pj_per_mac",
            "e_client_pj_per_mac",
            "e_bs_pj_per_mac",
            "readout_floor_pj_per_mac",
            "e_digital_pj_per_mac",
            "accuracy",
            "cross_entropy",
            "clean_accuracy",
            "status",
            "message",
        ],
    );
    let mut timing = Table::prefixed("energy_accuracy_timing", &["eps", "seconds"]);
    let mut outcomes = Vec::new();
    for (eps, r, res, secs) in results {
        let mut row = ctx.prefix(ExperimentKind::EnergyAccuracy, r);
        row.push(num(eps));
        timing.rows.push([row.clone(), vec![num(secs)]].concat());
        match res {
            Ok((net, ev)) => {
                let e = &net.energy;
                row.extend([
                    pj(e.e_bar_1),
                    pj(e.e_bar_client),
                    pj(e.e_bar_bs),
                    pj(e.readout_floor()),
                    pj(ctx.sp.e_digital_j),
                    num(ev.accuracy),
                    num(ev.cross_entropy),
                    num(assets.clean.accuracy),
                    "ok".into(),
                    String::new(),
                ]);
                outcomes.push(Outcome::Ok);
            }
            Err(err) => {
                let o = Outcome::of(&err);
                row.extend(std::iter::repeat_n(String::new(), 4));
                row.push(pj(ctx.sp.e_digital_j));
                row.extend([String::new(), String::new(), num(assets.clean.accuracy), o.label().into(), o.message()]);
                outcomes.push(o);
            }
        }
        table.rows.push(row);
    }
    let (infeasible, errors) = tally(outcomes);
    Ok(SweepOutput { tables: vec![table], timings: vec![timing], infeasible, errors })
}

pub fn run_tradeoff(ctx: &Context) -> Result<SweepOutput> {
    let c = &ctx.cfg.tradeoff;
    let reps = ctx.cfg.run.replicates;
    let cells: Vec<(f64, f64, usize)> = c
        .distances_m
        .iter()
        .flat_map(|d| c.lambdas.iter().flat_map(move |l| (0..reps).map(move |r| (*d, *l, r))))
        .collect();
    let opts = ctx.sca();
    let results: Vec<_> = cells
        .par_iter()
        .map(|&(d, lambda, r)| {
            let t = Instant::now();
            let run = || -> Result<EnergyBreakdown> {
                let gp = ctx.gp.clone().at_distance(d);
                let ch = ctx.channel(r, c.k, c.n_t, &gp)?;
                Ok(design_network(&ch.h, &[c.eps; 5], lambda, &ctx.layers, &ctx.sp, &opts)?.energy)
            };
            (d, lambda, r, run(), t.elapsed().as_secs_f64())
        })
        .collect();
    let mut table = Table::prefixed(
        "tradeoff",
        &["d2d_m", "lambda", "e_bs_pj_per_mac", "e_client_pj_per_mac", "e1_pj_per_mac", "status", "message"],
    );
    let mut frontier = Table::new(
        "tradeoff_frontier",
        &["experiment", "config_hash", "seed", "d2d_m", "lambda", "replicates_ok", "e_bs_pj_per_mac", "e_client_pj_per_mac", "e_digital_pj_per_mac"],
    );
    let mut timing = Table::prefixed("tradeoff_timing", &["d2d_m", "lambda", "seconds"]);
    let mut outcomes = Vec::new();
    let mut sums: Vec<(f64, f64, usize, f64, f64)> = Vec::new();
    for (d, lambda, r, res, secs) in results {
        let mut row = ctx.prefix(ExperimentKind::Tradeoff, r);
        row.extend([num(d), num(lambda)]);
        timing.rows.push([row.clone(), vec![num(secs)]].concat());
        if r == 0 {
            sums.push((d, lambda, 0, 0.0, 0.0));
        }
        match res {
            Ok(e) => {
                let s = sums.last_mut().expect("replicate 0 comes first");
                s.2 += 1;
                s.3 += e.e_bar_bs;
                s.4 += e.e_bar_client;
                row.extend([pj(e.e_bar_bs), pj(e.e_bar_client), pj(e.e_bar_1), "ok".into(), String::new()]);
                outcomes.push(Outcome::Ok);
            }
            Err(err) => {
                let o = Outcome::of(&err);
                row.extend([String::new(), String::new(), String::new(), o.label().into(), o.message()]);
                outcomes.push(o);
            }
        }
        table.rows.push(row);
    }
    for (d, lambda, n, bs, cl) in sums {
        let mean = |v: f64| if n == 0 { String::new() } else { pj(v / n as f64) };
        frontier.rows.push(vec![
            ExperimentKind::Tradeoff.as_str().into(),
            ctx.hash.clone(),
            ctx.cfg.run.seed.to_string(),
            num(d),
            num(lambda),
            n.to_string(),
            mean(bs),
            mean(cl),
            pj(ctx.sp.e_digital_j),
        ]);
    }
    let (infeasible, errors) = tally(outcomes);
    Ok(SweepOutput { tables: vec![table, frontier], timings: vec![timing], infeasible, errors })
}

/// Adam settings of the mixed-precision sweep.
pub fn adam_config(ctx: &Context) -> AdamConfig {
    let m = &ctx.cfg.mixed_precision;
    AdamConfig { eta: m.eta, steps: m.steps, batch: m.batch, ..AdamConfig::default() }
}

/// Budget and optimised profile for each selected point of the shared-ε grid.
pub fn mixed_profiles(ctx: &Context, assets: &NnAssets) -> Result<Vec<(usize, f64, BudgetSpec, Result<MixedResult>)>> {
    let m = &ctx.cfg.mixed_precision;
    let grid = m.eps_grid();
    let points: Vec<usize> = if m.only.is_empty() { (0..grid.len()).collect() } else { m.only.clone() };
    let omega = omega_weights(&ctx.layers, m.k, &ctx.sp);
    let cfg = adam_config(ctx);
    points
        .par_iter()
        .map(|&i| {
            let budget = BudgetSpec::new(budget_from_uniform(grid[i], &omega), omega.clone(), m.gamma_min)?;
            let seeds = SeedStream::new(ctx.cfg.run.seed).child("mixed-opt", i as u64);
            let res = optimize_mixed_precision(&assets.model, &assets.splits.calib, &assets.stats, &budget, &cfg, &seeds);
            Ok((i, grid[i], budget, res))
        })
        .collect()
}

pub fn run_mixed_precision(ctx: &Context, assets: &NnAssets) -> Result<SweepOutput> {
    let m = &ctx.cfg.mixed_precision;
    let opts = ctx.sca();
    let profiles = mixed_profiles(ctx, assets)?;
    let mut prof_table = Table::new(
        "mixed_precision_profiles",
        &["experiment", "config_hash", "seed", "point", "eps_shared", "mode", "layer", "eps", "gamma", "omega", "budget_share", "best_step"],
    );
    let mut trace_table = Table::new(
        "mixed_precision_trace",
        &["experiment", "config_hash", "seed", "point", "step", "train_loss", "holdout_ce", "budget_used", "budget_target", "budget_rel_err"],
    );
    let base = |point: usize| -> Vec<String> {
        vec![ExperimentKind::MixedPrecision.as_str().into(), ctx.hash.clone(), ctx.cfg.run.seed.to_string(), point.to_string()]
    };
    let mut cells = Vec::new();
    let mut outcomes = Vec::new();
    for (i, eps_sh, budget, res) in &profiles {
        let uniform = PrecisionProfile::uniform(*eps_sh, ctx.layers.len())?;
        let mixed = match res {
            Ok(r) => {
                for s in &r.trace {
                    trace_table.rows.push(
                        [
                            base(*i),
                            vec![
                                s.step.to_string(),
                                s.train_loss.map(num).unwrap_or_default(),
                                num(s.holdout_ce),
                                num(s.budget_used),
                                num(budget.gamma0),
                                num((s.budget_used - budget.gamma0).abs() / budget.gamma0),
                            ],
                        ]
                        .concat(),
                    );
                }
                Some((r.profile.clone(), r.best_step))
            }
            Err(e) => {
                outcomes.push(Outcome::of(e));
                None
            }
        };
        let mut modes = vec![(uniform, 0usize)];
        modes.extend(mixed);
        for (p, best) in &modes {
            for l in 0..p.eps.len() {
                prof_table.rows.push(
                    [
                        base(*i),
                        vec![
                            num(*eps_sh),
                            p.mode.as_str().into(),
                            (l + 1).to_string(),
                            num(p.eps[l]),
                            num(p.gamma[l]),
                            num(budget.omega[l]),
                            num(budget.omega[l] * p.gamma[l] / budget.gamma0),
                            best.to_string(),
                        ],
                    ]
                    .concat(),
                );
            }
            for r in 0..ctx.cfg.run.replicates {
                cells.push((*i, *eps_sh, budget.clone(), p.clone(), r));
            }
        }
    }
    let results: Vec<_> = cells
        .par_iter()
        .map(|(_, _, _, p, r)| {
            let t = Instant::now();
            let run = || -> Result<(NetDesign, EvalResult)> {
                let ch = ctx.channel(*r, m.k, m.n_t, &ctx.gp)?;
                let net = design_network(&ch.h, &p.eps, 0.0, &ctx.layers, &ctx.sp, &opts)?;
                let ev = evaluate(
                    &assets.model,
                    &assets.splits.eval,
                    &EvalNoise::PerClient(net.eps_realized.clone()),
                    &assets.stats,
                    ctx.cfg.data.trials,
                    &ctx.replicate(*r).child("eval-noise", 0),
                )?;
                Ok((net, ev))
            };
            (run(), t.elapsed().as_secs_f64())
        })
        .collect();
    let mut table = Table::prefixed(
        "mixed_precision",
        &[
            "point",
            "eps_shared",
            "budget",
            "budget_used",
            "mode",
            "e1_pj_per_mac",
            "accuracy",
            "cross_entropy",
            "status",
            "message",
        ],
    );
    let mut timing = Table::prefixed("mixed_precision_timing", &["point", "mode", "seconds"]);
    for ((i, eps_sh, budget, p, r), (res, secs)) in cells.iter().zip(results) {
        let mut row = ctx.prefix(ExperimentKind::MixedPrecision, *r);
        row.extend([i.to_string(), num(*eps_sh), num(budget.gamma0), num(p.budget_used(&budget.omega)), p.mode.as_str().into()]);
        timing.rows.push([ctx.prefix(ExperimentKind::MixedPrecision, *r), vec![i.to_string(), p.mode.as_str().into(), num(secs)]].concat());
        match res {
            Ok((net, ev)) => {
                row.extend([pj(net.energy.e_bar_1), num(ev.accuracy), num(ev.cross_entropy), "ok".into(), String::new()]);
                outcomes.push(Outcome::Ok);
            }
            Err(e) => {
                let o = Outcome::of(&e);
                row.extend([String::new(), String::new(), String::new(), o.label().into(), o.message()]);
                outcomes.push(o);
            }
        }
        table.rows.push(row);
    }
    let (infeasible, errors) = tally(outcomes);
    Ok(SweepOutput { tables: vec![table, prof_table, trace_table], timings: vec![timing], infeasible, errors })
}

/// Dispatches one sweep, loading the model only when the sweep needs it.
pub fn run_sweep(kind: ExperimentKind, ctx: &Context) -> Result<SweepOutput> {
    match kind {
        ExperimentKind::Convergence => run_convergence(ctx),
        ExperimentKind::Runtime => run_runtime(ctx),
        ExperimentKind::Tradeoff => run_tradeoff(ctx),
        ExperimentKind::EnergyAccuracy => run_energy_accuracy(ctx, &load_assets(&ctx.cfg)?),
        ExperimentKind::MixedPrecision => run_mixed_precision(ctx, &load_assets(&ctx.cfg)?),
    }
}

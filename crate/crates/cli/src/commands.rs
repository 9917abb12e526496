//! Single-shot subcommands. Each writes its CSVs into the output directory.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use arfc_core::channel::write_channel_csv;
use arfc_core::metrics::write_energy_csv;
use arfc_core::nn::{evaluate, write_eval_csv, EvalNoise};
use arfc_core::precision::{
    budget_from_uniform, omega_weights, optimize_mixed_precision, write_profile_csv, write_trace_csv, BudgetSpec,
};
use arfc_core::rng::SeedStream;
use arfc_core::sca::{solve_layer, LayerProblem};
use arfc_core::Result;

use crate::experiments::{adam_config, design_network, load_assets, num, Context, Table};

/// Problem size shared by the single-shot commands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub k: usize,
    pub n_t: usize,
    pub eps: f64,
    pub lambda: f64,
    pub replicate: usize,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub fn channel(ctx: &Context, cell: &Cell, out: &Path) -> Result<()> {
    let ch = ctx.channel(cell.replicate, cell.k, cell.n_t, &ctx.gp)?;
    write_channel_csv(&ch, create(out, "channel.csv")?)
}

pub fn solve_layer_cmd(ctx: &Context, cell: &Cell, out: &Path) -> Result<()> {
    let ch = ctx.channel(cell.replicate, cell.k, cell.n_t, &ctx.gp)?;
    let prob = LayerProblem::new(ch.h, &vec![cell.eps; cell.k], ctx.layer(), &ctx.sp, cell.lambda)?;
    let d = solve_layer(&prob, &ctx.sca())?;
    let mut t = Table::prefixed("design", &["client", "a_re", "a_im", "beta_re", "beta_im", "abs_a_beta", "u"]);
    for k in 0..cell.k {
        let mut row = vec!["solve-layer".into(), ctx.hash.clone(), ctx.cfg.run.seed.to_string(), cell.replicate.to_string()];
        row.extend([
            k.to_string(),
            num(d.gains[k].re),
            num(d.gains[k].im),
            num(d.beta[k].re),
            num(d.beta[k].im),
            num((d.gains[k] * d.beta[k]).norm()),
            num(prob.u[k]),
        ]);
        t.rows.push(row);
    }
    t.write(out)?;
    let mut tr = Table::prefixed("trace", &["iter", "objective"]);
    for (i, v) in std::iter::once(d.initial_objective).chain(d.objective_trace.iter().copied()).enumerate() {
        tr.rows.push(vec![
            "solve-layer".into(),
            ctx.hash.clone(),
            ctx.cfg.run.seed.to_string(),
            cell.replicate.to_string(),
            i.to_string(),
            num(v),
        ]);
    }
    tr.write(out)
}

pub fn solve_net(ctx: &Context, cell: &Cell, out: &Path) -> Result<()> {
    let ch = ctx.channel(cell.replicate, cell.k, cell.n_t, &ctx.gp)?;
    let net = design_network(&ch.h, &[cell.eps; 5], cell.lambda, &ctx.layers, &ctx.sp, &ctx.sca())?;
    write_energy_csv(&net.energy, create(out, "energy.csv")?)
}

pub fn infer(ctx: &Context, cell: &Cell, out: &Path) -> Result<()> {
    let assets = load_assets(&ctx.cfg)?;
    let ch = ctx.channel(cell.replicate, cell.k, cell.n_t, &ctx.gp)?;
    let net = design_network(&ch.h, &[cell.eps; 5], cell.lambda, &ctx.layers, &ctx.sp, &ctx.sca())?;
    let seeds = ctx.replicate(cell.replicate).child("eval-noise", 0);
    let trials = ctx.cfg.data.trials;
    let target = evaluate(&assets.model, &assets.splits.eval, &EvalNoise::Uniform(vec![cell.eps; 5]), &assets.stats, trials, &seeds)?;
    let realized = evaluate(&assets.model, &assets.splits.eval, &EvalNoise::PerClient(net.eps_realized), &assets.stats, trials, &seeds)?;
    let rows = vec![("clean".to_string(), 0, assets.clean), ("target".to_string(), trials, target), ("realized".to_string(), trials, realized)];
    write_eval_csv(&rows, create(out, "eval.csv")?)
}

pub fn mixed(ctx: &Context, eps_shared: f64, out: &Path) -> Result<()> {
    let assets = load_assets(&ctx.cfg)?;
    let m = &ctx.cfg.mixed_precision;
    let omega = omega_weights(&ctx.layers, m.k, &ctx.sp);
    let budget = BudgetSpec::new(budget_from_uniform(eps_shared, &omega), omega, m.gamma_min)?;
    let seeds = SeedStream::new(ctx.cfg.run.seed).child("mixed-opt", 0);
    let r = optimize_mixed_precision(&assets.model, &assets.splits.calib, &assets.stats, &budget, &adam_config(ctx), &seeds)?;
    write_profile_csv(&r.profile, &budget, create(out, "profile.csv")?)?;
    write_trace_csv(&r.trace, &budget, create(out, "trace.csv")?)
}

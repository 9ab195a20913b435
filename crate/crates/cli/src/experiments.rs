//! One runner per experiment kind. Each writes its artifacts into a
//! directory and returns a JSON summary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use cmj_core::ancestry::{empirical_chain_measure, kernel_mass, parent_delay_fit, write_chains_csv};
use cmj_core::coupling::{check_domination, simulate_coupled, CouplingLabel};
use cmj_core::immigration::{
    chain_bound, dominating_chain_mean, estimate_tail, mean_tree_size, simulate_immigration, ImmigrationParams,
};
use cmj_core::interacting_sim::{simulate_interacting, simulate_interacting_path, SimConfig};
use cmj_core::nonlinear_sim::{default_bin_width, estimate_mean_age_density};
use cmj_core::pde::{solve_nonlinear, PdeSolution};
use cmj_core::stats::mean_and_se;
use cmj_core::NoiseKey;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, ExperimentKind, Model};
use crate::error::{CliError, CliResult};
use crate::report::convergence_report;

/// Inputs shared by every runner.
pub struct Context<'a> {
    pub config: &'a ExperimentConfig,
    pub model: &'a Model,
    pub dir: &'a Path,
}

impl Context<'_> {
    fn seed(&self) -> u64 {
        self.config.run.seed
    }

    fn horizon(&self) -> f64 {
        self.config.numeric.horizon
    }

    fn bin_width(&self) -> f64 {
        self.config
            .numeric
            .bin_width
            .unwrap_or_else(|| default_bin_width(&self.model.birth))
    }

    /// Noise for replicate `r` at population size `n`, experiment `tag`.
    fn key(&self, tag: u64, n: usize, r: usize) -> NoiseKey {
        NoiseKey::master(self.seed()).sub(tag).sub(n as u64).replicate(r as u64)
    }

    fn create(&self, name: &str) -> CliResult<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn solve(&self, horizon: f64) -> CliResult<PdeSolution> {
        let m = self.model;
        Ok(solve_nonlinear(&m.birth, &m.initial, &m.rule, horizon, self.config.numeric.dt)?)
    }

    /// Output times `0, step, …, T` (the horizon included).
    fn grid(&self) -> Vec<f64> {
        let step = self.config.numeric.output_step;
        let t = self.horizon();
        let n = (t / step).ceil() as usize;
        (0..=n).map(|j| (j as f64 * step).min(t)).collect()
    }
}

pub fn run_kind(kind: ExperimentKind, ctx: &Context) -> CliResult<Value> {
    match kind {
        ExperimentKind::Solve => solve(ctx),
        ExperimentKind::Simulate => simulate(ctx),
        ExperimentKind::Nonlinear => nonlinear(ctx),
        ExperimentKind::Couple => couple(ctx),
        ExperimentKind::Immigration => immigration(ctx),
        ExperimentKind::Chains => chains(ctx),
        ExperimentKind::Convergence => convergence(ctx),
    }
}

fn solve(ctx: &Context) -> CliResult<Value> {
    let sol = ctx.solve(ctx.horizon())?;
    sol.write_csv(ctx.create("solution.csv")?)?;
    sol.save(&ctx.dir.join("solution.json"))?;
    let h = ctx.bin_width();
    let age_max = ctx
        .config
        .numeric
        .age_max
        .unwrap_or(ctx.horizon() + ctx.model.initial.support_max().min(50.0));
    let mut out = ctx.create("density.csv")?;
    writeln!(out, "t,age,u")?;
    let ages = (age_max / h).ceil() as usize;
    for t in ctx.grid() {
        for k in 0..=ages {
            let a = k as f64 * h;
            writeln!(out, "{t},{a},{}", sol.eval_u(t, a)?)?;
        }
    }
    out.flush()?;
    Ok(json!({
        "residual": sol.residual(),
        "lipschitz": lipschitz_json(sol.lipschitz()),
        "gronwall_violation": sol.gronwall_violation(),
        "final_mass": sol.mass(ctx.horizon())?,
        "final_boundary": sol.boundary_at(ctx.horizon())?,
    }))
}

fn lipschitz_json(l: f64) -> Value {
    if l.is_finite() {
        json!(l)
    } else {
        json!("inf")
    }
}

fn simulate(ctx: &Context) -> CliResult<Value> {
    let m = ctx.model;
    let t = ctx.horizon();
    let sol = ctx.solve(t)?;
    let grid = ctx.grid();
    let mut masses = ctx.create("masses.csv")?;
    writeln!(masses, "ancestors,replicate,t,mass")?;
    let mut summary = ctx.create("mass_summary.csv")?;
    writeln!(summary, "ancestors,t,mean,se,pde")?;
    let mut per_n = Vec::new();
    for &n in &ctx.config.run.ancestors {
        let cfg = SimConfig::new(n, t);
        let first = simulate_interacting(&cfg, &m.birth, &m.initial, &m.rule, ctx.key(1, n, 0))?;
        first.forest.write_csv(ctx.create(&format!("forest_N{n}.csv"))?)?;
        first.path.write_csv(ctx.create(&format!("path_N{n}.csv"))?, ctx.config.numeric.output_step)?;
        let rest = (1..ctx.config.run.replicates)
            .into_par_iter()
            .map(|r| simulate_interacting_path(&cfg, &m.birth, &m.initial, &m.rule, ctx.key(1, n, r)))
            .collect::<cmj_core::Result<Vec<_>>>()?;
        let paths: Vec<_> = std::iter::once(first.path).chain(rest).collect();
        for (r, p) in paths.iter().enumerate() {
            for &s in &grid {
                writeln!(masses, "{n},{r},{s},{}", p.mass_at(s)?)?;
            }
        }
        let mut final_mass = (0.0, 0.0);
        for &s in &grid {
            let xs = paths.iter().map(|p| p.mass_at(s)).collect::<cmj_core::Result<Vec<_>>>()?;
            let (mean, se) = mean_and_se(&xs);
            writeln!(summary, "{n},{s},{mean},{se},{}", sol.mass(s)?)?;
            final_mass = (mean, se);
        }
        per_n.push(json!({"ancestors": n, "final_mass_mean": final_mass.0, "final_mass_se": final_mass.1}));
    }
    masses.flush()?;
    summary.flush()?;
    Ok(json!({ "pde_final_mass": sol.mass(t)?, "runs": per_n }))
}

fn nonlinear(ctx: &Context) -> CliResult<Value> {
    let m = ctx.model;
    let sol = ctx.solve(ctx.horizon())?;
    let times = if ctx.config.run.times.is_empty() {
        vec![ctx.horizon()]
    } else {
        ctx.config.run.times.clone()
    };
    let mut rows = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let est = estimate_mean_age_density(
            ctx.config.run.trees,
            ctx.bin_width(),
            t,
            &m.birth,
            &m.initial,
            &m.rule,
            &sol,
            ctx.key(2, i, 0),
        )?;
        est.write_csv(ctx.create(&format!("density_{i}.csv"))?)?;
        let cmp = est.compare(&sol)?;
        rows.push(json!({
            "file": format!("density_{i}.csv"),
            "t": t,
            "trees": est.replicates,
            "mean_count": est.mean_count,
            "mean_count_se": est.count_standard_error,
            "pde_mass": sol.mass(t)?,
            "l1": cmp.l1,
            "summed_se": cmp.summed_standard_error,
            "bin_width_term": cmp.bin_width_term,
            "within_tolerance": cmp.passes(),
        }));
    }
    Ok(json!({ "densities": rows }))
}

fn couple(ctx: &Context) -> CliResult<Value> {
    let m = ctx.model;
    let t = ctx.horizon();
    let sol = ctx.solve(t)?;
    let mut table = ctx.create("domination.csv")?;
    writeln!(
        table,
        "ancestors,eta,replicate,events,precondition,distance,first_violation,recount_matches,tau_stop,interacting,nonlinear,immigrants"
    )?;
    let mut checked = 0usize;
    let mut violations = 0usize;
    let mut runs = 0usize;
    for &n in &ctx.config.run.ancestors {
        let cfg = SimConfig::new(n, t);
        for (e, &eta) in ctx.config.run.eta.iter().enumerate() {
            let results = (0..ctx.config.run.replicates)
                .into_par_iter()
                .map(|r| -> CliResult<_> {
                    let run = simulate_coupled(&cfg, &m.birth, &m.initial, &m.rule, &sol, eta, ctx.key(3, n, r))?;
                    let report = check_domination(&run, &sol, ctx.config.numeric.eps_grid)?;
                    if r == 0 {
                        run.write_audit_csv(ctx.create(&format!("audit_N{n}_e{e}.csv"))?)?;
                    }
                    let counts = (
                        run.count_at(t, &[CouplingLabel::Both, CouplingLabel::OnlyInteracting]),
                        run.count_at(t, &[CouplingLabel::Both, CouplingLabel::OnlyNonlinear]),
                        run.immigration_at(t),
                    );
                    Ok((report, counts))
                })
                .collect::<CliResult<Vec<_>>>()?;
            for (r, (rep, (ci, cn, imm))) in results.iter().enumerate() {
                runs += 1;
                if rep.precondition {
                    checked += 1;
                    violations += rep.first_violation.is_some() as usize;
                }
                writeln!(
                    table,
                    "{n},{eta},{r},{},{},{},{},{},{},{ci},{cn},{imm}",
                    rep.events_checked,
                    rep.precondition,
                    rep.distance,
                    rep.first_violation.map_or(String::new(), |v| v.to_string()),
                    rep.forest_recount_matches,
                    rep.tau_stop.map_or(String::new(), |v| v.to_string()),
                )?;
            }
        }
    }
    table.flush()?;
    Ok(json!({
        "runs": runs,
        "runs_meeting_precondition": checked,
        "runs_with_violation": violations,
    }))
}

fn immigration(ctx: &Context) -> CliResult<Value> {
    let m = ctx.model;
    let t = ctx.horizon();
    if !ctx.model.lipschitz.is_finite() {
        return Err(CliError::Validation {
            field: "model.lipschitz".into(),
            message: "the immigration bound needs a finite Lipschitz constant".into(),
        });
    }
    let ez = mean_tree_size(&m.birth, t, ctx.config.numeric.dt)?;
    let mut chain = ctx.create("chain_bound.csv")?;
    writeln!(chain, "ancestors,eta,steps,mean,se,bound")?;
    let mut tail = ctx.create("tail.csv")?;
    writeln!(tail, "ancestors,eta,hits,trials,estimate,lower,upper")?;
    let replicates = ctx.config.run.replicates;
    let mut exceeded = 0usize;
    for &n in &ctx.config.run.ancestors {
        for (e, &eta) in ctx.config.run.eta.iter().enumerate() {
            let params = ImmigrationParams {
                ancestors: n,
                eta,
                lipschitz: m.lipschitz,
                horizon: t,
            };
            for &steps in &ctx.config.run.chain_steps {
                let (mean, se) =
                    dominating_chain_mean(&params, &m.birth, t, steps as usize, replicates, ctx.key(4, n, e))?;
                let bound = chain_bound(eta, m.lipschitz, n, ez, steps)?;
                exceeded += (mean > bound + 3.0 * se) as usize;
                writeln!(chain, "{n},{eta},{steps},{mean},{se},{bound}")?;
            }
            let est = estimate_tail(
                &params,
                &m.birth,
                &m.initial,
                ctx.config.run.tail_fraction,
                replicates.max(100),
                ctx.key(5, n, e),
            )?;
            writeln!(
                tail,
                "{n},{eta},{},{},{},{},{}",
                est.hits, est.trials, est.estimate, est.lower, est.upper
            )?;
            let path = simulate_immigration(&params, &m.birth, &m.initial, ctx.key(6, n, e), true)?;
            path.write_csv(ctx.create(&format!("immigration_N{n}_e{e}.csv"))?, ctx.config.numeric.output_step)?;
        }
    }
    chain.flush()?;
    tail.flush()?;
    Ok(json!({ "mean_tree_size": ez, "bounds_exceeded": exceeded }))
}

fn chains(ctx: &Context) -> CliResult<Value> {
    let m = ctx.model;
    let t = ctx.horizon();
    let sol = ctx.solve(t)?;
    let n = ctx.config.run.ancestors[0];
    let run = simulate_interacting(&SimConfig::new(n, t), &m.birth, &m.initial, &m.rule, ctx.key(7, n, 0))?;
    let chains = empirical_chain_measure(&run.forest, t)?;
    write_chains_csv(&chains, ctx.create("chains.csv")?)?;
    let [lo, hi] = ctx.config.run.window.unwrap_or([0.9 * t, t]);
    let fit = parent_delay_fit(&chains, &sol, &m.rule, (lo, hi), ctx.bin_width())?;
    fit.write_csv(ctx.create("delays.csv")?)?;

    // Kernel normalization at 20 times spread over (0, T].
    let mut worst: f64 = 0.0;
    let mut norms = ctx.create("kernel_mass.csv")?;
    writeln!(norms, "t,mass")?;
    for j in 1..=20 {
        let s = t * j as f64 / 20.0;
        let mass = kernel_mass(&sol, &m.rule, s)?;
        worst = worst.max((mass - 1.0).abs());
        writeln!(norms, "{s},{mass}")?;
    }
    norms.flush()?;
    Ok(json!({
        "ancestors": n,
        "chains": chains.len(),
        "window": [lo, hi],
        "window_samples": fit.samples(),
        "chi_square": fit.statistic,
        "dof": fit.dof,
        "p_value": fit.p_value,
        "kernel_mass_max_error": worst,
    }))
}

fn convergence(ctx: &Context) -> CliResult<Value> {
    let m = ctx.model;
    let t = ctx.horizon();
    let sol = ctx.solve(t)?;
    let numeric = &ctx.config.numeric;
    let mut raw = ctx.create("distances.csv")?;
    writeln!(raw, "ancestors,replicate,sup_distance")?;
    let mut results = Vec::new();
    for &n in &ctx.config.run.ancestors {
        let cfg = SimConfig::new(n, t);
        let d = (0..ctx.config.run.replicates)
            .into_par_iter()
            .map(|r| -> cmj_core::Result<f64> {
                let path = simulate_interacting_path(&cfg, &m.birth, &m.initial, &m.rule, ctx.key(8, n, r))?;
                path.sup_distance(&sol, numeric.output_step, numeric.eps_grid)
            })
            .collect::<cmj_core::Result<Vec<f64>>>()?;
        for (r, x) in d.iter().enumerate() {
            writeln!(raw, "{n},{r},{x}")?;
        }
        results.push((n, d));
    }
    raw.flush()?;
    let table = convergence_report(&results)?;
    table.write_csv(ctx.create("convergence.csv")?)?;
    Ok(json!({
        "slope": table.slope,
        "strictly_decreasing": table.strictly_decreasing(),
        "rows": table.rows,
    }))
}

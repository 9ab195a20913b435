//! Non-linear CMJ trees: a single tree thinned by the deterministic keep
//! probability `C(t, u_t)` read off a precomputed [`PdeSolution`].

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forest::Tree;
use crate::interacting_sim::{grow, DEFAULT_EVENT_CAP};
use crate::measures::GriddedDensity;
use crate::noise::NoiseKey;
use crate::pde::PdeSolution;
use crate::point_process::{BirthProcessSpec, InitialAgeDensity};
use crate::rule::InteractionRule;

pub struct NonlinearTree {
    pub tree: Tree,
    /// Kept birth times, ascending.
    pub births: Vec<f64>,
    pub events: usize,
}

fn check_inputs(
    spec: &BirthProcessSpec,
    g: &InitialAgeDensity,
    rule: &dyn InteractionRule,
    sol: &PdeSolution,
    horizon: f64,
) -> Result<()> {
    sol.check_rule(rule)?;
    if sol.birth() != spec || sol.initial() != g {
        return Err(Error::arg("the solution was computed for a different model"));
    }
    if !(horizon >= 0.0 && horizon <= sol.horizon() * (1.0 + 1e-12)) {
        return Err(Error::arg(format!(
            "horizon {horizon} exceeds the solved range [0, {}]",
            sol.horizon()
        )));
    }
    Ok(())
}

fn grow_one(
    spec: &BirthProcessSpec,
    g: &InitialAgeDensity,
    rule: &dyn InteractionRule,
    sol: &PdeSolution,
    horizon: f64,
    key: NoiseKey,
    record: bool,
) -> Result<(Option<Tree>, Vec<f64>, usize)> {
    // The atom samplers need a non-empty window; births at time 0 are
    // filtered by the callers when the horizon is 0.
    let window = if horizon > 0.0 { horizon } else { f64::MIN_POSITIVE };
    let grown = grow(
        &[key],
        1,
        window,
        DEFAULT_EVENT_CAP,
        spec,
        g,
        record,
        &mut |t, _| sol.keep_probability(rule, t.min(sol.horizon())),
    )?;
    let tree = grown.forest.map(|f| f.trees()[0].clone());
    Ok((tree, grown.births, grown.events))
}

/// Grows the non-linear tree whose ancestor has key `key` up to `horizon`.
pub fn simulate_nonlinear_tree(
    spec: &BirthProcessSpec,
    g: &InitialAgeDensity,
    rule: &dyn InteractionRule,
    sol: &PdeSolution,
    horizon: f64,
    key: NoiseKey,
) -> Result<NonlinearTree> {
    check_inputs(spec, g, rule, sol, horizon)?;
    if horizon <= 0.0 {
        return Err(Error::arg("horizon must be positive"));
    }
    let (tree, births, events) = grow_one(spec, g, rule, sol, horizon, key, true)?;
    Ok(NonlinearTree {
        tree: tree.expect("recorded"),
        births,
        events,
    })
}

/// Monte Carlo estimate of `E[μ'_t]` as a histogram density, with the
/// standard error of every bin.
#[derive(Clone, Debug, PartialEq)]
pub struct AgeDensityEstimate {
    pub time: f64,
    pub step: f64,
    pub replicates: usize,
    pub density: Vec<f64>,
    pub standard_error: Vec<f64>,
    /// Mean number of kept individuals born by `time`.
    pub mean_count: f64,
    pub count_standard_error: f64,
}

impl AgeDensityEstimate {
    pub fn gridded(&self) -> GriddedDensity {
        GriddedDensity::from_bins(self.step, self.density.clone()).expect("nonnegative by construction")
    }

    /// `Σ_k h · SE_k`.
    pub fn summed_standard_error(&self) -> f64 {
        self.standard_error.iter().sum::<f64>() * self.step
    }

    /// Compares the histogram with `u_t` evaluated at the bin midpoints.
    pub fn compare(&self, sol: &PdeSolution) -> Result<DensityComparison> {
        let t = self.time;
        let h = self.step;
        // Past this age both the histogram and u_t vanish.
        let top = t + sol.initial().support_max();
        let bins = ((top / h).ceil() as usize).max(self.density.len());
        const SUB: usize = 16;
        let mut l1 = 0.0;
        let mut variation = 0.0;
        let mut prev = sol.eval_u(t, 0.0)?;
        for k in 0..bins {
            let lo = k as f64 * h;
            let mid = sol.eval_u(t, lo + 0.5 * h)?;
            let est = self.density.get(k).copied().unwrap_or(0.0);
            l1 += h * (est - mid).abs();
            for s in 1..=SUB {
                let cur = sol.eval_u(t, lo + h * s as f64 / SUB as f64)?;
                variation += (cur - prev).abs();
                prev = cur;
            }
        }
        Ok(DensityComparison {
            l1,
            summed_standard_error: self.summed_standard_error(),
            bin_width_term: h * variation,
        })
    }

    /// Rows `age_lo,age_hi,density,se`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "age_lo,age_hi,density,se")?;
        for (k, (d, se)) in self.density.iter().zip(&self.standard_error).enumerate() {
            let lo = k as f64 * self.step;
            writeln!(out, "{lo},{},{d},{se}", lo + self.step)?;
        }
        Ok(())
    }
}

/// `L¹` distance between a histogram estimate and the solver density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityComparison {
    /// `Σ_k h |density_k - u_t(mid_k)|`.
    pub l1: f64,
    /// `Σ_k h · SE_k`.
    pub summed_standard_error: f64,
    /// `h · TV(u_t)`, bounding how far midpoint values sit from bin averages.
    pub bin_width_term: f64,
}

impl DensityComparison {
    /// `l1 ≤ 3 Σ h SE_k + h TV(u_t)`.
    pub fn passes(&self) -> bool {
        self.l1 <= 3.0 * self.summed_standard_error + self.bin_width_term
    }
}

/// Per-bin integer sums `Σ c` and `Σ c²` plus the node-count sums.
#[derive(Clone, Default)]
struct Tally {
    sum: Vec<u64>,
    sum_sq: Vec<u64>,
    count: u64,
    count_sq: u64,
}

impl Tally {
    fn merge(mut self, other: Tally) -> Tally {
        if self.sum.len() < other.sum.len() {
            self.sum.resize(other.sum.len(), 0);
            self.sum_sq.resize(other.sum.len(), 0);
        }
        for (k, (s, q)) in other.sum.iter().zip(&other.sum_sq).enumerate() {
            self.sum[k] += s;
            self.sum_sq[k] += q;
        }
        self.count += other.count;
        self.count_sq += other.count_sq;
        self
    }
}

/// Histogram of ages at time `t` over `replicates` independent non-linear
/// trees (tree `r` uses `key.ancestor(r)`), divided by `replicates · step`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_mean_age_density(
    replicates: usize,
    step: f64,
    t: f64,
    spec: &BirthProcessSpec,
    g: &InitialAgeDensity,
    rule: &dyn InteractionRule,
    sol: &PdeSolution,
    key: NoiseKey,
) -> Result<AgeDensityEstimate> {
    if replicates == 0 {
        return Err(Error::arg("at least one replicate is required"));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::arg("bin width must be positive"));
    }
    check_inputs(spec, g, rule, sol, t)?;
    const CHUNK: usize = 1024;
    let chunks: Vec<usize> = (0..replicates.div_ceil(CHUNK)).collect();
    let tally = chunks
        .par_iter()
        .map(|&c| -> Result<Tally> {
            let mut tally = Tally::default();
            let mut counts: Vec<u64> = Vec::new();
            for r in c * CHUNK..((c + 1) * CHUNK).min(replicates) {
                let (_, births, _) = grow_one(spec, g, rule, sol, t, key.ancestor(r), false)?;
                counts.clear();
                let mut n = 0u64;
                for &s in births.iter().filter(|&&s| s <= t) {
                    let k = ((t - s) / step).floor() as usize;
                    if counts.len() <= k {
                        counts.resize(k + 1, 0);
                    }
                    counts[k] += 1;
                    n += 1;
                }
                if tally.sum.len() < counts.len() {
                    tally.sum.resize(counts.len(), 0);
                    tally.sum_sq.resize(counts.len(), 0);
                }
                for (k, &x) in counts.iter().enumerate() {
                    tally.sum[k] += x;
                    tally.sum_sq[k] += x * x;
                }
                tally.count += n;
                tally.count_sq += n * n;
            }
            Ok(tally)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(Tally::default(), Tally::merge);

    let m = replicates as f64;
    let moments = |s: u64, q: u64| {
        let mean = s as f64 / m;
        let var = if replicates > 1 {
            ((q as f64 - m * mean * mean) / (m - 1.0)).max(0.0)
        } else {
            0.0
        };
        (mean, (var / m).sqrt())
    };
    let (density, standard_error) = tally
        .sum
        .iter()
        .zip(&tally.sum_sq)
        .map(|(&s, &q)| {
            let (mean, se) = moments(s, q);
            (mean / step, se / step)
        })
        .unzip();
    let (mean_count, count_standard_error) = moments(tally.count, tally.count_sq);
    Ok(AgeDensityEstimate {
        time: t,
        step,
        replicates,
        density,
        standard_error,
        mean_count,
        count_standard_error,
    })
}

/// Default bin width `0.05 · min(1, 1/‖τ‖∞)`.
pub fn default_bin_width(spec: &BirthProcessSpec) -> f64 {
    0.05 * 1f64.min(1.0 / spec.sup_bound)
}

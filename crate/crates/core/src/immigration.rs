//! CMJ process with immigration and the dominating chain used to bound it.
//!
//! A left forest of `N` un-thinned CMJ trees supplies potential immigration
//! times: at every positive left birth `ι_u`, an independent un-thinned tree
//! is planted with probability `(η + L I^η(ι_u⁻)/N) ∧ 1`, using the left
//! node's uniform mark. `I^η(t)` counts every birth (roots included) in the
//! planted trees by time `t`.
//!
//! The dominating process `S^η` uses the same marks but credits a planted
//! tree with its full size at age `T` as soon as it is planted, which gives
//! `I^η ≤ S^η` on `[0, T]` pathwise.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interacting_sim::{ancestor_draw, offspring_ages, ComingGeneration, DEFAULT_EVENT_CAP};
use crate::noise::{NoiseKey, Stream};
use crate::point_process::{BirthProcessSpec, InitialAgeDensity};
use crate::stats::{mean_and_se, wilson_interval, ProportionEstimate};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImmigrationParams {
    pub ancestors: usize,
    pub eta: f64,
    pub lipschitz: f64,
    pub horizon: f64,
}

impl ImmigrationParams {
    fn validate(&self) -> Result<()> {
        if self.ancestors == 0 {
            return Err(Error::arg("at least one ancestor is required"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::arg(format!("eta = {} must lie in [0, 1]", self.eta)));
        }
        if !(self.lipschitz >= 0.0 && self.lipschitz.is_finite()) {
            return Err(Error::arg("the Lipschitz constant must be finite and nonnegative"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::arg("horizon must be positive and finite"));
        }
        Ok(())
    }

    fn probability(&self, count: usize) -> f64 {
        (self.eta + self.lipschitz * count as f64 / self.ancestors as f64).min(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Time(f64);

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Birth ages, ascending and root (age 0) included, of an un-thinned tree
/// grown from a newborn with key `key` up to age `age` (exclusive).
pub fn planted_tree_ages(spec: &BirthProcessSpec, key: NoiseKey, age: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0];
    let mut stack = vec![(0.0, key)];
    while let Some((s, k)) = stack.pop() {
        for (j, a) in offspring_ages(spec, k, s, age)?.into_iter().enumerate() {
            let t = s + a;
            if t >= age {
                break;
            }
            out.push(t);
            if out.len() > DEFAULT_EVENT_CAP {
                return Err(Error::ResourceLimit {
                    what: "births in a planted tree",
                    cap: DEFAULT_EVENT_CAP,
                });
            }
            stack.push((t, k.child(j as u32 + 1)));
        }
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImmigrationResult {
    pub params: ImmigrationParams,
    /// Left-forest birth times, ascending (roots are the negative ones).
    pub left_births: Vec<f64>,
    /// Number of positive left births, i.e. potential immigration times.
    pub potential_times: usize,
    /// Planting times of the trees counted by `I^η`.
    pub immigration_times: Vec<f64>,
    /// Births in the planted trees, ascending.
    pub immigrant_births: Vec<f64>,
    /// Jumps `(time, S^η after the jump)` of the dominating process.
    pub dominating: Vec<(f64, usize)>,
}

impl ImmigrationResult {
    /// `I^η(t)`.
    pub fn immigration_at(&self, t: f64) -> usize {
        self.immigrant_births.partition_point(|&s| s <= t)
    }

    /// `Z_ι(t)`, roots included.
    pub fn left_count_at(&self, t: f64) -> usize {
        self.left_births.partition_point(|&s| s <= t)
    }

    /// `S^η(t)`.
    pub fn dominating_at(&self, t: f64) -> usize {
        match self.dominating.partition_point(|&(s, _)| s <= t) {
            0 => 0,
            k => self.dominating[k - 1].1,
        }
    }

    /// Rows `t,immigration,left_count,dominating` on a grid of step `dt`.
    pub fn write_csv<W: Write>(&self, mut out: W, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::arg("grid step must be positive"));
        }
        writeln!(out, "t,immigration,left_count,dominating")?;
        let steps = (self.params.horizon / dt).round() as usize;
        for j in 0..=steps {
            let t = (j as f64 * dt).min(self.params.horizon);
            writeln!(
                out,
                "{t},{},{},{}",
                self.immigration_at(t),
                self.left_count_at(t),
                self.dominating_at(t)
            )?;
        }
        Ok(())
    }
}

/// Grows the left forest and the immigration process on `[0, T]`. With
/// `track_dominating`, the dominating process `S^η` is built on the same
/// marks (it needs the planted trees grown to age `T`, which costs more).
pub fn simulate_immigration(
    params: &ImmigrationParams,
    spec: &BirthProcessSpec,
    g: &InitialAgeDensity,
    key: NoiseKey,
    track_dominating: bool,
) -> Result<ImmigrationResult> {
    params.validate()?;
    let horizon = params.horizon;
    let mut queue = ComingGeneration::default();
    let mut left_births = Vec::new();
    for i in 0..params.ancestors {
        let k = key.ancestor(i);
        let (sigma, times) = ancestor_draw(spec, g, k, horizon)?;
        left_births.push(sigma);
        for (j, &s) in times.iter().enumerate() {
            queue.push_at(i, 0, k.child(j as u32 + 1), s);
        }
    }
    left_births.sort_by(f64::total_cmp);

    let mut upcoming: BinaryHeap<Reverse<Time>> = BinaryHeap::new();
    let mut immigrant_births = Vec::new();
    let mut immigration_times = Vec::new();
    let mut dominating = Vec::new();
    let mut s_total = 0usize;
    let mut potential_times = 0usize;
    let mut events = 0usize;
    while let Some(ev) = queue.pop() {
        events += 1;
        if events > DEFAULT_EVENT_CAP {
            return Err(Error::ResourceLimit {
                what: "left-forest births",
                cap: DEFAULT_EVENT_CAP,
            });
        }
        let t = ev.time;
        while upcoming.peek().is_some_and(|Reverse(Time(s))| *s <= t) {
            let Reverse(Time(s)) = upcoming.pop().expect("peeked");
            immigrant_births.push(s);
        }
        potential_times += 1;
        left_births.push(t);
        let omega = ev.key.mark();
        let plant_i = omega <= params.probability(immigrant_births.len());
        let plant_s = track_dominating && omega <= params.probability(s_total);
        if plant_i || plant_s {
            let planted = ev.key.plant();
            let window = if plant_s { horizon } else { horizon - t };
            let ages = planted_tree_ages(spec, planted, window)?;
            if plant_i {
                immigration_times.push(t);
                upcoming.extend(ages.iter().map(|a| t + a).filter(|&s| s <= horizon).map(|s| Reverse(Time(s))));
            }
            if plant_s {
                s_total += ages.len();
                dominating.push((t, s_total));
            }
        }
        let ages = offspring_ages(spec, ev.key, t, horizon)?;
        queue.push_offspring(ev.tree, 0, ev.key, t, &ages, horizon);
    }
    while let Some(Reverse(Time(s))) = upcoming.pop() {
        immigrant_births.push(s);
    }
    Ok(ImmigrationResult {
        params: *params,
        left_births,
        potential_times,
        immigration_times,
        immigrant_births,
        dominating,
    })
}

/// `E[Z]` for the size `Z` (root included) of an un-thinned tree grown to
/// age `age`: the solution of `m(t) = 1 + ∫_0^t τ(a) m(t - a) da`, by the
/// trapezoid rule with step `step`.
pub fn mean_tree_size(spec: &BirthProcessSpec, age: f64, step: f64) -> Result<f64> {
    if !(age >= 0.0 && age.is_finite() && step > 0.0) {
        return Err(Error::arg("mean_tree_size needs a finite age and a positive step"));
    }
    if spec.intensity(0.0).is_none() {
        return Err(Error::config("the birth process has no intensity density"));
    }
    let n = ((age / step).ceil() as usize).max(1);
    let h = age / n as f64;
    let tau: Vec<f64> = (0..=n).map(|j| spec.intensity(j as f64 * h).unwrap_or(0.0)).collect();
    let mut m = vec![1.0; n + 1];
    for j in 1..=n {
        let inner: f64 = (1..j).map(|i| tau[i] * m[j - i]).sum();
        m[j] = (1.0 + h * (inner + 0.5 * tau[j] * m[0])) / (1.0 - 0.5 * h * tau[0]);
    }
    Ok(m[n])
}

/// `x_n = (ηN/L)((1 + L E[Z]/N)^n - 1)`, the solution of
/// `x_{k+1} = x_k (1 + L E[Z]/N) + η E[Z]`, `x_0 = 0`; `η E[Z] n` when
/// `L = 0`.
pub fn chain_bound(eta: f64, lipschitz: f64, ancestors: usize, mean_size: f64, steps: u64) -> Result<f64> {
    if !(eta >= 0.0 && lipschitz >= 0.0 && mean_size >= 0.0 && ancestors > 0) {
        return Err(Error::arg("chain_bound needs nonnegative parameters and N ≥ 1"));
    }
    let n = steps as f64;
    if lipschitz == 0.0 {
        return Ok(eta * mean_size * n);
    }
    let r = lipschitz * mean_size / ancestors as f64;
    Ok(eta * ancestors as f64 / lipschitz * (n * r.ln_1p()).exp_m1())
}

/// The Markov chain `S_{k+1} = S_k + Z_k` with probability
/// `(η + L S_k / N) ∧ 1`, where `Z_k` is the size at age `age` of an
/// independent un-thinned tree. Returns `S_0, …, S_steps`.
pub fn simulate_dominating_chain(
    params: &ImmigrationParams,
    spec: &BirthProcessSpec,
    age: f64,
    steps: usize,
    key: NoiseKey,
) -> Result<Vec<usize>> {
    params.validate()?;
    let mut rng = key.rng(Stream::Aux);
    let mut path = Vec::with_capacity(steps + 1);
    let mut s = 0usize;
    path.push(s);
    for k in 0..steps {
        let omega: f64 = rng.random();
        if omega < params.probability(s) {
            s += planted_tree_ages(spec, key.sub(k as u64), age)?.len();
        }
        path.push(s);
    }
    Ok(path)
}

/// Mean and standard error of `S_steps` over `replicates` chains.
pub fn dominating_chain_mean(
    params: &ImmigrationParams,
    spec: &BirthProcessSpec,
    age: f64,
    steps: usize,
    replicates: usize,
    key: NoiseKey,
) -> Result<(f64, f64)> {
    let finals = (0..replicates)
        .into_par_iter()
        .map(|r| Ok(*simulate_dominating_chain(params, spec, age, steps, key.replicate(r as u64))?.last().expect("non-empty") as f64))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_se(&finals))
}

/// Monte Carlo estimate of `P(I^η(T) ≥ εN)` with a 95% Wilson interval.
pub fn estimate_tail(
    params: &ImmigrationParams,
    spec: &BirthProcessSpec,
    g: &InitialAgeDensity,
    epsilon: f64,
    replicates: usize,
    key: NoiseKey,
) -> Result<ProportionEstimate> {
    if replicates < 100 {
        return Err(Error::arg("a tail estimate needs at least 100 replicates"));
    }
    let threshold = epsilon * params.ancestors as f64;
    let hits = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let run = simulate_immigration(params, spec, g, key.replicate(r as u64), false)?;
            Ok((run.immigration_at(params.horizon) as f64 >= threshold) as u64)
        })
        .collect::<Result<Vec<u64>>>()?
        .into_iter()
        .sum();
    Ok(wilson_interval(hits, replicates as u64, 1.96))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> (BirthProcessSpec, InitialAgeDensity) {
        (
            BirthProcessSpec::poisson_constant(1.0).unwrap(),
            InitialAgeDensity::exponential(1.0).unwrap(),
        )
    }

    fn params(eta: f64, lipschitz: f64) -> ImmigrationParams {
        ImmigrationParams {
            ancestors: 100,
            eta,
            lipschitz,
            horizon: 2.0,
        }
    }

    #[test]
    fn mean_tree_size_of_the_linear_model() {
        let (spec, _) = model();
        let m = mean_tree_size(&spec, 2.0, 1e-3).unwrap();
        assert!((m - 2f64.exp()).abs() < 1e-5 * m);
        assert_eq!(mean_tree_size(&spec, 0.0, 1e-3).unwrap(), 1.0);
        let sizes: Vec<f64> = (0..4000)
            .map(|r| planted_tree_ages(&spec, NoiseKey::master(77).sub(r), 1.5).unwrap().len() as f64)
            .collect();
        let (mean, se) = mean_and_se(&sizes);
        assert!((mean - 1.5f64.exp()).abs() < 4.0 * se);
    }

    #[test]
    fn no_immigration_without_eta_and_feedback() {
        let (spec, g) = model();
        let run = simulate_immigration(&params(0.0, 0.0), &spec, &g, NoiseKey::master(1), true).unwrap();
        assert!(run.immigrant_births.is_empty());
        assert_eq!(run.immigration_at(2.0), 0);
        assert_eq!(run.dominating_at(2.0), 0);
        assert!(run.potential_times > 0);
    }

    #[test]
    fn saturation_plants_at_every_positive_birth() {
        let (spec, g) = model();
        let run = simulate_immigration(&params(1.0, 0.0), &spec, &g, NoiseKey::master(2), false).unwrap();
        // Roots are not potential immigration times.
        assert_eq!(run.potential_times, run.left_count_at(2.0) - 100);
        assert_eq!(run.immigration_times.len(), run.potential_times);
        assert!(run.immigration_at(2.0) >= run.potential_times);
    }

    #[test]
    fn immigration_is_dominated_pathwise() {
        let (spec, g) = model();
        for seed in 0..10 {
            let run = simulate_immigration(&params(0.05, 1.0), &spec, &g, NoiseKey::master(seed), true).unwrap();
            let mut t = 0.0;
            while t <= 2.0 {
                assert!(run.immigration_at(t) <= run.dominating_at(t), "seed {seed}, t {t}");
                t += 0.01;
            }
            assert!(run.immigration_times.windows(2).all(|w| w[0] <= w[1]));
            assert!(run.immigration_times.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn same_marks_for_both_modes() {
        let (spec, g) = model();
        let a = simulate_immigration(&params(0.1, 1.0), &spec, &g, NoiseKey::master(5), true).unwrap();
        let b = simulate_immigration(&params(0.1, 1.0), &spec, &g, NoiseKey::master(5), false).unwrap();
        assert_eq!(a.immigrant_births, b.immigrant_births);
        assert_eq!(a.left_births, b.left_births);
    }

    #[test]
    fn chain_bound_matches_the_recursion() {
        assert_eq!(chain_bound(0.1, 1.0, 100, 2.0, 0).unwrap(), 0.0);
        assert_eq!(chain_bound(0.0, 1.0, 100, 2.0, 50).unwrap(), 0.0);
        let (eta, l, n, ez) = (0.1, 1.0, 100usize, 2.0);
        let mut x = 0.0;
        for _ in 0..50 {
            x = x * (1.0 + l * ez / n as f64) + eta * ez;
        }
        let closed = chain_bound(eta, l, n, ez, 50).unwrap();
        assert!((closed - x).abs() <= 1e-12 * x, "{closed} vs {x}");
        assert!((chain_bound(0.1, 0.0, 100, 2.0, 50).unwrap() - 10.0).abs() < 1e-12);
        // L → 0 approaches the linear limit.
        assert!((chain_bound(0.1, 1e-9, 100, 2.0, 50).unwrap() - 10.0).abs() < 1e-6);
    }

    #[test]
    fn tail_estimate_is_zero_without_immigration() {
        let (spec, g) = model();
        let p = ImmigrationParams {
            ancestors: 20,
            ..params(0.0, 1.0)
        };
        let est = estimate_tail(&p, &spec, &g, 0.5, 100, NoiseKey::master(1)).unwrap();
        assert_eq!(est.hits, 0);
        assert!(estimate_tail(&p, &spec, &g, 0.5, 99, NoiseKey::master(1)).is_err());
    }

    #[test]
    fn planted_tree_mean_size() {
        // E[Z(t)] = e^t for unit-rate Poisson reproduction.
        let (spec, _) = model();
        let sizes: Vec<f64> = (0..20_000)
            .map(|r| planted_tree_ages(&spec, NoiseKey::master(3).sub(r), 1.0).unwrap().len() as f64)
            .collect();
        let (m, se) = mean_and_se(&sizes);
        assert!((m - 1f64.exp()).abs() <= 3.0 * se, "{m} ± {se}");
    }
}

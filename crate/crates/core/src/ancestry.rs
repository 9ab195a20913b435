//! Backward birth chains.
//!
//! Following a typical individual born at `t` back through its ancestors
//! gives, in the limit, the time-inhomogeneous Markov chain
//!
//! ```text
//! E[φ(T_{i+1}) | T_i = t] = C(t, u_t) / u_t(0) · ∫ φ(t - a) u_t(a) τ(a) da,
//! ```
//!
//! stopped on reaching `(-∞, 0]`. This module evaluates its kernel, samples
//! it, evaluates the joint density of a chain, and extracts the empirical
//! chains from a simulated forest.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::forest::Forest;
use crate::pde::PdeSolution;
use crate::rule::InteractionRule;
use crate::stats::chi_square_goodness_of_fit;

/// Chains longer than this are reported as runaways.
pub const MAX_CHAIN_STEPS: usize = 1_000_000;

fn tau(sol: &PdeSolution, a: f64) -> Result<f64> {
    sol.birth()
        .intensity(a)
        .ok_or_else(|| Error::config("the birth process has no intensity density"))
}

/// `C(t, u_t) u_t(a) τ(a) / u_t(0)`, the density of the age of the parent
/// at the birth of an individual born at `t`.
pub fn kernel_density(sol: &PdeSolution, rule: &dyn InteractionRule, t: f64, a: f64) -> Result<f64> {
    let b = sol.boundary_at(t)?;
    if !(b > 0.0) {
        return Err(Error::Absorbing(t));
    }
    if a < 0.0 {
        return Ok(0.0);
    }
    let c = sol.keep_probability(rule, t)?;
    Ok(c * sol.eval_u(t, a)? * tau(sol, a)? / b)
}

/// Quadrature grid `(cells, step)` over the support of `g`: the solver step,
/// coarsened to at most `TAIL_CELLS` cells for long-tailed `g`.
fn tail_grid(sol: &PdeSolution) -> (usize, f64) {
    const TAIL_CELLS: usize = 2048;
    let top = sol.initial().support_max();
    let m = ((top / sol.dt()).ceil() as usize).clamp(1, TAIL_CELLS);
    (m, top / m as f64)
}

/// The kernel at time `t` tabulated for sampling: `(ages, cdf)` on the age
/// grid of the solution for ages below `t`, plus the weight of the terminal
/// part `a ≥ t` (where the chain leaves `(0, ∞)`).
struct KernelTable {
    ages: Vec<f64>,
    cdf: Vec<f64>,
    terminal: f64,
}

impl KernelTable {
    fn new(sol: &PdeSolution, rule: &dyn InteractionRule, t: f64) -> Result<Self> {
        let b = sol.boundary_at(t)?;
        if !(b > 0.0) {
            return Err(Error::Absorbing(t));
        }
        let c = sol.keep_probability(rule, t)?;
        let dt = sol.dt();
        let cells = (t / dt).ceil() as usize;
        let h = t / cells.max(1) as f64;
        let mut ages = Vec::with_capacity(cells + 1);
        let mut cdf = Vec::with_capacity(cells + 1);
        let f = |a: f64| -> Result<f64> { Ok(c * sol.eval_u(t, a)? * tau(sol, a)? / b) };
        let mut prev = f(0.0)?;
        let mut acc = 0.0;
        ages.push(0.0);
        cdf.push(0.0);
        for k in 1..=cells {
            let a = (k as f64 * h).min(t);
            // Stay on the boundary side of the density at a = t.
            let cur = f(if k == cells { a.next_down() } else { a })?;
            acc += 0.5 * h * (prev + cur);
            ages.push(a);
            cdf.push(acc);
            prev = cur;
        }
        let g = sol.initial();
        let (m, hs) = tail_grid(sol);
        let mut terminal = 0.0;
        for k in 0..=m {
            let s = k as f64 * hs;
            let w = if k == 0 || k == m { 0.5 } else { 1.0 };
            terminal += w * g.density(s) * tau(sol, t + s)?;
        }
        terminal *= hs * c / b;
        Ok(KernelTable { ages, cdf, terminal })
    }

    fn boundary_mass(&self) -> f64 {
        *self.cdf.last().expect("non-empty")
    }

    fn total(&self) -> f64 {
        self.boundary_mass() + self.terminal
    }

    fn invert(&self, target: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c < target).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let w = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
        self.ages[k - 1] + w * (self.ages[k] - self.ages[k - 1])
    }
}

/// `∫ kernel_density(t, a) da`, by the same quadrature the sampler uses.
pub fn kernel_mass(sol: &PdeSolution, rule: &dyn InteractionRule, t: f64) -> Result<f64> {
    Ok(KernelTable::new(sol, rule, t)?.total())
}

/// A backward chain `T_1 > T_2 > … > T_k` with `T_k ≤ 0 < T_{k-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSample {
    pub times: Vec<f64>,
}

impl ChainSample {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if n == 0 {
            return Err(Error::arg("empty chain"));
        }
        if self.times.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::arg("chain times must be strictly decreasing"));
        }
        if self.times[n - 1] > 0.0 || (n >= 2 && self.times[n - 2] <= 0.0) {
            return Err(Error::arg("exactly the last chain time must be nonpositive"));
        }
        Ok(())
    }
}

/// Samples the terminal age `a ≥ t`, i.e. `s = a - t ~ g(s) τ(t + s)`, by
/// rejection from `g`, falling back to a tabulated inverse CDF.
fn sample_terminal<R: Rng + ?Sized>(sol: &PdeSolution, t: f64, rng: &mut R) -> Result<f64> {
    let g = sol.initial();
    let bound = sol.rate_bound();
    for _ in 0..10_000 {
        let s = g.sample(rng);
        if rng.random::<f64>() * bound <= tau(sol, t + s)? {
            return Ok(s);
        }
    }
    let (m, hs) = tail_grid(sol);
    let mut cdf = vec![0.0];
    let mut prev = g.density(0.0) * tau(sol, t)?;
    for k in 1..=m {
        let cur = g.density(k as f64 * hs) * tau(sol, t + k as f64 * hs)?;
        cdf.push(cdf[k - 1] + 0.5 * hs * (prev + cur));
        prev = cur;
    }
    let target = rng.random::<f64>() * cdf[m];
    let k = cdf.partition_point(|&c| c < target).clamp(1, m);
    let w = if cdf[k] > cdf[k - 1] {
        (target - cdf[k - 1]) / (cdf[k] - cdf[k - 1])
    } else {
        0.5
    };
    Ok((k as f64 - 1.0 + w) * hs)
}

/// Runs the backward chain from `t1` until it reaches `(-∞, 0]`.
pub fn sample_chain<R: Rng + ?Sized>(
    sol: &PdeSolution,
    rule: &dyn InteractionRule,
    t1: f64,
    rng: &mut R,
) -> Result<ChainSample> {
    let mut times = vec![t1];
    let mut t = t1;
    while t > 0.0 {
        if times.len() > MAX_CHAIN_STEPS {
            return Err(Error::ResourceLimit {
                what: "backward chain steps",
                cap: MAX_CHAIN_STEPS,
            });
        }
        let table = KernelTable::new(sol, rule, t)?;
        let total = table.total();
        if !(total > 0.0) {
            return Err(Error::Absorbing(t));
        }
        let u = rng.random::<f64>() * total;
        let next = if u < table.boundary_mass() {
            let a = table.invert(u);
            let next = t - a;
            if next >= t {
                t.next_down()
            } else {
                next.max(f64::MIN_POSITIVE)
            }
        } else {
            -sample_terminal(sol, t, rng)?
        };
        times.push(next);
        t = next;
    }
    Ok(ChainSample { times })
}

/// The two factorizations of the joint density of a chain: the raw product
/// `g(-t_k) Π C(t_i, u_{t_i}) τ(t_i - t_{i+1})` and
/// `u_{t_1}(0) Π kernel(t_i, t_i - t_{i+1})`.
pub fn chain_density_factorizations(
    sol: &PdeSolution,
    rule: &dyn InteractionRule,
    chain: &ChainSample,
) -> Result<(f64, f64)> {
    chain.validate()?;
    let t = &chain.times;
    let k = t.len();
    let g = sol.initial();
    let mut raw = g.density(-t[k - 1]);
    if k == 1 {
        return Ok((raw, raw));
    }
    let mut telescoped = sol.boundary_at(t[0])?;
    for i in 0..k - 1 {
        let a = t[i] - t[i + 1];
        raw *= sol.keep_probability(rule, t[i])? * tau(sol, a)?;
        // The kernel at t_i evaluated at t_{i+1} (no re-rounding of the age).
        let b = sol.boundary_at(t[i])?;
        if !(b > 0.0) {
            return Err(Error::Absorbing(t[i]));
        }
        let u = if t[i + 1] > 0.0 {
            sol.boundary_at(t[i + 1])?
        } else {
            g.density(-t[i + 1])
        };
        telescoped *= sol.keep_probability(rule, t[i])? * u * tau(sol, a)? / b;
    }
    Ok((raw, telescoped))
}

/// Joint density `P_k(t_1, …, t_k)` of a chain. Errors if the two
/// factorizations disagree by more than `1e-6` relative.
pub fn chain_density(sol: &PdeSolution, rule: &dyn InteractionRule, chain: &ChainSample) -> Result<f64> {
    let (raw, telescoped) = chain_density_factorizations(sol, rule, chain)?;
    if (raw - telescoped).abs() > 1e-6 * raw.abs().max(telescoped.abs()) {
        return Err(Error::Invariant(format!(
            "chain density factorizations disagree: {raw} vs {telescoped}"
        )));
    }
    Ok(raw)
}

/// Parent delays of chains started in a birth-time window against the
/// kernel mixed over that window with weights `u_t(0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayFit {
    pub window: (f64, f64),
    pub step: f64,
    /// Per bin `[k h, (k+1) h)`; the last bin collects everything beyond.
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
}

impl DelayFit {
    pub fn samples(&self) -> usize {
        self.observed.iter().sum::<f64>() as usize
    }

    /// Rows `age_lo,age_hi,observed,expected`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "age_lo,age_hi,observed,expected")?;
        let last = self.observed.len() - 1;
        for (k, (o, e)) in self.observed.iter().zip(&self.expected).enumerate() {
            let lo = k as f64 * self.step;
            let hi = if k == last { f64::INFINITY } else { lo + self.step };
            writeln!(out, "{lo},{hi},{o},{e}")?;
        }
        Ok(())
    }
}

/// χ² goodness of fit of the delays `T_1 - T_2` over the chains with
/// `T_1 ∈ [lo, hi]`. Cells with expected counts below 5 are pooled.
pub fn parent_delay_fit(
    chains: &[WeightedChain],
    sol: &PdeSolution,
    rule: &dyn InteractionRule,
    window: (f64, f64),
    step: f64,
) -> Result<DelayFit> {
    let (lo, hi) = window;
    if !(0.0 < lo && lo < hi && hi <= sol.horizon()) {
        return Err(Error::arg(format!("window [{lo}, {hi}] must lie in (0, {}]", sol.horizon())));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::arg("bin width must be positive"));
    }
    let reach = hi + sol.initial().support_max().min(50.0);
    let bins = (reach / step).ceil() as usize;
    let mut observed = vec![0.0; bins + 1];
    for c in chains.iter().filter(|c| c.times[0] >= lo && c.times[0] <= hi) {
        if c.times.len() < 2 {
            continue;
        }
        let d = c.times[0] - c.times[1];
        observed[((d / step) as usize).min(bins)] += 1.0;
    }
    let n: f64 = observed.iter().sum();
    if n == 0.0 {
        return Err(Error::arg("no chain starts in the window"));
    }

    // Midpoint rule in t; per t the kernel is C u_t(a) τ(a) / b(t) and the
    // mixing weight b(t), so b cancels.
    const T_NODES: usize = 40;
    const A_NODES: usize = 8;
    let ht = (hi - lo) / T_NODES as f64;
    let mut expected = vec![0.0; bins + 1];
    let mut weight = 0.0;
    for i in 0..T_NODES {
        let t = lo + (i as f64 + 0.5) * ht;
        let b = sol.boundary_at(t)?;
        if !(b > 0.0) {
            continue;
        }
        weight += b;
        let c = sol.keep_probability(rule, t)?;
        for (k, e) in expected.iter_mut().take(bins).enumerate() {
            let mut cell = 0.0;
            for s in 0..A_NODES {
                let a = (k as f64 + (s as f64 + 0.5) / A_NODES as f64) * step;
                cell += sol.eval_u(t, a)? * tau(sol, a)?;
            }
            *e += c * cell * step / A_NODES as f64;
        }
    }
    if !(weight > 0.0) {
        return Err(Error::Absorbing(lo));
    }
    for e in expected.iter_mut() {
        *e *= n / weight;
    }
    let inside: f64 = expected[..bins].iter().sum();
    expected[bins] = (n - inside).max(0.0);
    let (statistic, dof, p_value) = chi_square_goodness_of_fit(&observed, &expected, 5.0);
    Ok(DelayFit {
        window,
        step,
        observed,
        expected,
        statistic,
        dof,
        p_value,
    })
}

/// A chain read off a forest, with its weight in the empirical measure.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedChain {
    pub weight: f64,
    pub times: Vec<f64>,
}

/// One chain per kept individual born at or before `t`, each of weight
/// `1/N`.
pub fn empirical_chain_measure(forest: &Forest, t: f64) -> Result<Vec<WeightedChain>> {
    if t > forest.horizon() {
        return Err(Error::arg(format!("time {t} beyond the forest horizon {}", forest.horizon())));
    }
    let w = 1.0 / forest.ancestors() as f64;
    let mut out = Vec::new();
    for tree in forest.trees() {
        for (id, node) in tree.nodes().iter().enumerate() {
            if node.status.is_kept() && node.birth_time <= t {
                let times = tree.chain_of(id);
                debug_assert!(tree.birth_chain(&tree.label(id)).is_ok());
                out.push(WeightedChain { weight: w, times });
            }
        }
    }
    Ok(out)
}

/// Rows `weight,k,t_1,…,t_k`.
pub fn write_chains_csv<W: Write>(chains: &[WeightedChain], mut out: W) -> Result<()> {
    writeln!(out, "weight,k,times")?;
    for c in chains {
        write!(out, "{},{}", c.weight, c.times.len())?;
        for s in &c.times {
            write!(out, ",{s}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

//! Finite measures on the age half-line and a certified Prohorov upper bound.

use std::io::Write;

use crate::error::{Error, Result};

/// A finite measure on `[0, ∞)`, seen through the operations the rest of the
/// crate needs.
pub trait AgeMeasure {
    fn mass(&self) -> f64;

    /// `∫ φ dμ`.
    fn integrate(&self, phi: &dyn Fn(f64) -> f64) -> f64;

    /// Atomic approximation in which no mass moves by more than `width / 2`.
    fn discretize(&self, width: f64) -> Discretized;
}

/// Sorted atoms plus the largest distance any unit of mass was moved to get
/// them.
#[derive(Clone, Debug, PartialEq)]
pub struct Discretized {
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
    pub displacement: f64,
}

impl Discretized {
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Borrowed empirical age measure: atoms at `time - σ` for every birth time
/// `σ ≤ time`, each of weight `1 / normalizer`.
#[derive(Clone, Copy, Debug)]
pub struct EmpiricalAges<'a> {
    pub time: f64,
    /// Sorted ascending; entries after `time` are ignored.
    pub birth_times: &'a [f64],
    pub normalizer: f64,
}

impl EmpiricalAges<'_> {
    fn visible(&self) -> &[f64] {
        let end = self.birth_times.partition_point(|&s| s <= self.time);
        &self.birth_times[..end]
    }
}

impl AgeMeasure for EmpiricalAges<'_> {
    fn mass(&self) -> f64 {
        self.visible().len() as f64 / self.normalizer
    }

    fn integrate(&self, phi: &dyn Fn(f64) -> f64) -> f64 {
        self.visible().iter().map(|s| phi(self.time - s)).sum::<f64>() / self.normalizer
    }

    fn discretize(&self, _width: f64) -> Discretized {
        let w = 1.0 / self.normalizer;
        let mut positions: Vec<f64> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for s in self.visible().iter().rev() {
            let age = self.time - s;
            match (positions.last(), weights.last_mut()) {
                (Some(&p), Some(last)) if p == age => *last += w,
                _ => {
                    positions.push(age);
                    weights.push(w);
                }
            }
        }
        Discretized {
            positions,
            weights,
            displacement: 0.0,
        }
    }
}

/// Owned empirical age measure `μ_t = N⁻¹ Σ δ_{t-σ}`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalAgeMeasure {
    time: f64,
    birth_times: Vec<f64>,
    normalizer: usize,
}

impl EmpiricalAgeMeasure {
    pub fn new(time: f64, mut birth_times: Vec<f64>, normalizer: usize) -> Result<Self> {
        if normalizer == 0 {
            return Err(Error::arg("normalizer must be positive"));
        }
        if birth_times.iter().any(|s| !s.is_finite() || *s > time) {
            return Err(Error::arg("birth times must be finite and not after the reference time"));
        }
        birth_times.sort_by(f64::total_cmp);
        Ok(EmpiricalAgeMeasure {
            time,
            birth_times,
            normalizer,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn birth_times(&self) -> &[f64] {
        &self.birth_times
    }

    pub fn normalizer(&self) -> usize {
        self.normalizer
    }

    pub fn count(&self) -> usize {
        self.birth_times.len()
    }

    pub fn view(&self) -> EmpiricalAges<'_> {
        EmpiricalAges {
            time: self.time,
            birth_times: &self.birth_times,
            normalizer: self.normalizer as f64,
        }
    }

    /// Ages in ascending order.
    pub fn ages(&self) -> impl Iterator<Item = f64> + '_ {
        self.birth_times.iter().rev().map(move |s| self.time - s)
    }

    /// `(age, weight)` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "age,weight")?;
        let w = 1.0 / self.normalizer as f64;
        for a in self.ages() {
            writeln!(out, "{a},{w}")?;
        }
        Ok(())
    }

    /// Histogram density on bins of width `step` starting at age zero.
    pub fn histogram(&self, step: f64) -> GriddedDensity {
        let top = self.ages().last().unwrap_or(0.0);
        let bins = (top / step).floor() as usize + 1;
        let mut values = vec![0.0; bins + 1];
        for a in self.ages() {
            values[(a / step).floor() as usize] += 1.0 / (self.normalizer as f64 * step);
        }
        GriddedDensity::from_bins(step, values).expect("nonnegative by construction")
    }
}

impl AgeMeasure for EmpiricalAgeMeasure {
    fn mass(&self) -> f64 {
        self.view().mass()
    }

    fn integrate(&self, phi: &dyn Fn(f64) -> f64) -> f64 {
        self.view().integrate(phi)
    }

    fn discretize(&self, width: f64) -> Discretized {
        self.view().discretize(width)
    }
}

/// How the values of a [`GriddedDensity`] are laid out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Layout {
    /// Values at the nodes `kΔ`, linear in between.
    Nodes,
    /// Constant values on the bins `[kΔ, (k+1)Δ)`.
    Bins,
}

/// Density of a finite measure on `[0, ∞)`, tabulated on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GriddedDensity {
    step: f64,
    values: Vec<f64>,
    layout: Layout,
}

impl GriddedDensity {
    /// Values at ages `0, step, 2 step, …`, interpolated linearly.
    pub fn from_nodes(step: f64, values: Vec<f64>) -> Result<Self> {
        Self::build(step, values, Layout::Nodes)
    }

    /// Piecewise-constant values on `[k step, (k+1) step)`.
    pub fn from_bins(step: f64, values: Vec<f64>) -> Result<Self> {
        Self::build(step, values, Layout::Bins)
    }

    fn build(step: f64, values: Vec<f64>, layout: Layout) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::arg("grid step must be positive"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::arg("density values must be finite and nonnegative"));
        }
        Ok(GriddedDensity { step, values, layout })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, a: f64) -> f64 {
        if a < 0.0 {
            return 0.0;
        }
        let x = a / self.step;
        let k = x.floor() as usize;
        match self.layout {
            Layout::Bins => self.values.get(k).copied().unwrap_or(0.0),
            Layout::Nodes => {
                if k + 1 >= self.values.len() {
                    return if k + 1 == self.values.len() && x == k as f64 { self.values[k] } else { 0.0 };
                }
                let w = x - k as f64;
                self.values[k] * (1.0 - w) + self.values[k + 1] * w
            }
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "age,weight")?;
        for (k, v) in self.values.iter().enumerate() {
            let age = match self.layout {
                Layout::Nodes => k as f64 * self.step,
                Layout::Bins => (k as f64 + 0.5) * self.step,
            };
            writeln!(out, "{age},{v}")?;
        }
        Ok(())
    }
}

impl AgeMeasure for GriddedDensity {
    fn mass(&self) -> f64 {
        self.integrate(&|_| 1.0)
    }

    /// Trapezoid rule for node layouts, midpoint rule for bin layouts.
    fn integrate(&self, phi: &dyn Fn(f64) -> f64) -> f64 {
        let h = self.step;
        match self.layout {
            Layout::Bins => self
                .values
                .iter()
                .enumerate()
                .map(|(k, v)| v * phi((k as f64 + 0.5) * h))
                .sum::<f64>()
                * h,
            Layout::Nodes => {
                let n = self.values.len();
                if n < 2 {
                    return 0.0;
                }
                let inner: f64 = (1..n - 1).map(|k| self.values[k] * phi(k as f64 * h)).sum();
                h * (inner + 0.5 * (self.values[0] * phi(0.0) + self.values[n - 1] * phi((n - 1) as f64 * h)))
            }
        }
    }

    fn discretize(&self, width: f64) -> Discretized {
        let h = self.step;
        let sub = ((h / width).ceil() as usize).max(1);
        let len = h / sub as f64;
        let mut positions = Vec::new();
        let mut weights = Vec::new();
        let cells = match self.layout {
            Layout::Bins => self.values.len(),
            Layout::Nodes => self.values.len().saturating_sub(1),
        };
        for k in 0..cells {
            let (v0, v1) = match self.layout {
                Layout::Bins => (self.values[k], self.values[k]),
                Layout::Nodes => (self.values[k], self.values[k + 1]),
            };
            if v0 == 0.0 && v1 == 0.0 {
                continue;
            }
            for s in 0..sub {
                let lo = s as f64 / sub as f64;
                let hi = (s + 1) as f64 / sub as f64;
                let d_lo = v0 + (v1 - v0) * lo;
                let d_hi = v0 + (v1 - v0) * hi;
                let m = 0.5 * (d_lo + d_hi) * len;
                if m > 0.0 {
                    positions.push(k as f64 * h + (s as f64 + 0.5) * len);
                    weights.push(m);
                }
            }
        }
        Discretized {
            positions,
            weights,
            displacement: 0.5 * len,
        }
    }
}

/// Largest mass of `mu` that can be transported onto `nu` moving no unit of
/// mass further than `radius`.
///
/// Both atom lists are sorted; the windows `[x - r, x + r]` are monotone in
/// `x`, so serving each atom of `mu` from the leftmost remaining atom of `nu`
/// is optimal.
fn matched_mass(mu: &Discretized, nu: &Discretized, radius: f64) -> f64 {
    let mut flow = 0.0;
    let mut j = 0;
    let n = nu.positions.len();
    let mut remaining = nu.weights.first().copied().unwrap_or(0.0);
    for (&x, &w) in mu.positions.iter().zip(&mu.weights) {
        let mut need = w;
        while j < n && nu.positions[j] < x - radius {
            j += 1;
            remaining = nu.weights.get(j).copied().unwrap_or(0.0);
        }
        while need > 0.0 && j < n && nu.positions[j] <= x + radius {
            let m = need.min(remaining);
            need -= m;
            remaining -= m;
            flow += m;
            if remaining <= 0.0 {
                j += 1;
                remaining = nu.weights.get(j).copied().unwrap_or(0.0);
            }
        }
    }
    flow
}

/// Whether `μ(A) ≤ ν(A^ε) + ε` and `ν(A) ≤ μ(A^ε) + ε` for every set `A`.
fn prohorov_feasible(mu: &Discretized, nu: &Discretized, eps: f64) -> bool {
    if eps < 0.0 {
        return false;
    }
    let flow = matched_mass(mu, nu, eps);
    mu.mass() - flow <= eps && nu.mass() - flow <= eps
}

/// Prohorov distance between two atomic measures, located on the grid
/// `{k · eps_grid}` after accounting for `slack`.
fn grid_search(mu: &Discretized, nu: &Discretized, eps_grid: f64, slack: f64) -> f64 {
    let top = mu.mass().max(nu.mass()) + slack;
    let mut hi = ((top / eps_grid).ceil() as u64).max(1) + 1;
    let mut lo = 0u64;
    // Invariant: k = hi is feasible, k = lo is not (k = 0 is never returned).
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if prohorov_feasible(mu, nu, mid as f64 * eps_grid - slack) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi as f64 * eps_grid
}

/// Certified upper bound `d̂ ≥ d_Pr(μ, ν)` on the grid `{ε_grid, 2ε_grid, …}`.
///
/// Densities are discretized into cells of width `ε_grid / 4`; the mass
/// displacement this introduces is added to the bound, so the result stays an
/// upper bound while exceeding the true distance by at most about
/// `ε_grid` plus that displacement.
pub fn prohorov_upper(mu: &dyn AgeMeasure, nu: &dyn AgeMeasure, eps_grid: f64) -> Result<f64> {
    if !(eps_grid > 0.0 && eps_grid.is_finite()) {
        return Err(Error::arg("eps_grid must be positive"));
    }
    let width = 0.25 * eps_grid;
    let dm = mu.discretize(width);
    let dn = nu.discretize(width);
    Ok(prohorov_upper_discretized(&dm, &dn, eps_grid))
}

/// As [`prohorov_upper`], for measures already discretized (lets callers
/// reuse the discretization of a fixed reference measure).
pub fn prohorov_upper_discretized(mu: &Discretized, nu: &Discretized, eps_grid: f64) -> f64 {
    let slack = mu.displacement + nu.displacement;
    grid_search(mu, nu, eps_grid, slack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dirac(age: f64, mass_units: usize) -> EmpiricalAgeMeasure {
        EmpiricalAgeMeasure::new(age, vec![0.0; mass_units], 1).unwrap()
    }

    /// Brute force over all subsets of the union of supports: for atomic
    /// measures it suffices to test sets made of atoms.
    fn brute_force_prohorov(mu: &[(f64, f64)], nu: &[(f64, f64)]) -> f64 {
        let feasible = |eps: f64| {
            let check = |a: &[(f64, f64)], b: &[(f64, f64)]| {
                let n = a.len();
                (0u32..(1 << n)).all(|mask| {
                    let set: Vec<f64> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| a[i].0).collect();
                    let lhs: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| a[i].1).sum();
                    let rhs: f64 = b
                        .iter()
                        .filter(|(y, _)| set.iter().any(|x| (x - y).abs() <= eps))
                        .map(|(_, w)| w)
                        .sum();
                    lhs <= rhs + eps + 1e-12
                })
            };
            check(mu, nu) && check(nu, mu)
        };
        // Candidate values: pairwise distances and partial masses.
        let mut candidates: Vec<f64> = vec![0.0];
        for (x, _) in mu {
            for (y, _) in nu {
                candidates.push((x - y).abs());
            }
        }
        let all: Vec<f64> = mu.iter().chain(nu).map(|p| p.1).collect();
        for mask in 0u32..(1 << all.len()) {
            let s: f64 = (0..all.len()).filter(|i| mask & (1 << i) != 0).map(|i| all[i]).sum();
            candidates.push(s);
        }
        candidates.sort_by(f64::total_cmp);
        // The distance is the infimum of feasible eps; take the smallest
        // feasible candidate, refined by bisection below it.
        let first = candidates.iter().copied().find(|&c| feasible(c)).unwrap();
        let below = candidates.iter().copied().filter(|&c| c < first).fold(0.0, f64::max);
        let (mut lo, mut hi) = (below, first);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    fn atoms_of(m: &EmpiricalAgeMeasure) -> Vec<(f64, f64)> {
        m.ages().map(|a| (a, 1.0 / m.normalizer() as f64)).collect()
    }

    #[test]
    fn integrate_empirical_mass_and_age() {
        let m = EmpiricalAgeMeasure::new(3.0, vec![0.0, 1.0, 2.0, -1.0, 0.5], 10).unwrap();
        assert_eq!(m.integrate(&|_| 1.0), 0.5);
        let single = EmpiricalAgeMeasure::new(2.0, vec![0.0], 1).unwrap();
        assert_eq!(single.integrate(&|a| a), 2.0);
    }

    #[test]
    fn gridded_probability_density_has_unit_mass() {
        let h = 1e-3;
        let values: Vec<f64> = (0..=40_000).map(|k| (-(k as f64) * h).exp()).collect();
        let g = GriddedDensity::from_nodes(h, values).unwrap();
        assert!((g.integrate(&|_| 1.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identical_measures_are_within_one_grid_step() {
        let m = EmpiricalAgeMeasure::new(2.0, vec![0.1, 0.7, 1.3], 3).unwrap();
        assert!(prohorov_upper(&m, &m, 1e-3).unwrap() <= 1e-3);
    }

    #[test]
    fn two_diracs() {
        for h in [0.0, 0.05, 0.37, 0.999, 1.5, 4.0] {
            let d = prohorov_upper(&dirac(0.0, 1), &dirac(h, 1), 1e-3).unwrap();
            let exact = h.min(1.0);
            assert!(d >= exact && d <= exact + 1e-3 + 1e-12, "h {h}: {d}");
        }
    }

    #[test]
    fn mass_gap_forces_unit_distance() {
        let empty = EmpiricalAgeMeasure::new(0.0, vec![], 1).unwrap();
        let d = prohorov_upper(&dirac(0.0, 1), &empty, 1e-3).unwrap();
        assert!((d - 1.0).abs() <= 1e-3 + 1e-12, "{d}");
    }

    #[test]
    fn rejects_nonpositive_grid() {
        let m = dirac(0.0, 1);
        assert!(prohorov_upper(&m, &m, 0.0).is_err());
        assert!(prohorov_upper(&m, &m, -1.0).is_err());
    }

    #[test]
    fn empirical_vs_own_histogram() {
        let births: Vec<f64> = (0..500).map(|k| -((k * 7919) % 1000) as f64 / 250.0).collect();
        let m = EmpiricalAgeMeasure::new(1.0, births, 400).unwrap();
        for step in [0.01, 0.05, 0.2] {
            let hist = m.histogram(step);
            let d = prohorov_upper(&m, &hist, 1e-3).unwrap();
            assert!(d <= step + 1e-3 + 1e-12, "step {step}: {d}");
        }
    }

    fn small_measure() -> impl Strategy<Value = EmpiricalAgeMeasure> {
        (prop::collection::vec(0.0f64..3.0, 0..5), 1usize..5)
            .prop_map(|(births, n)| EmpiricalAgeMeasure::new(3.0, births, n).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn matches_brute_force(mu in small_measure(), nu in small_measure()) {
            let eps = 1e-3;
            let d = prohorov_upper(&mu, &nu, eps).unwrap();
            let exact = brute_force_prohorov(&atoms_of(&mu), &atoms_of(&nu));
            prop_assert!(d >= exact - 1e-9, "d {} exact {}", d, exact);
            prop_assert!(d <= exact + eps + 1e-9, "d {} exact {}", d, exact);
        }

        #[test]
        fn symmetric_and_nonnegative(mu in small_measure(), nu in small_measure()) {
            let a = prohorov_upper(&mu, &nu, 1e-3).unwrap();
            let b = prohorov_upper(&nu, &mu, 1e-3).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a > 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn triangle_inequality(a in small_measure(), b in small_measure(), c in small_measure()) {
            let eps = 1e-3;
            let ab = prohorov_upper(&a, &b, eps).unwrap();
            let bc = prohorov_upper(&b, &c, eps).unwrap();
            let ac = prohorov_upper(&a, &c, eps).unwrap();
            prop_assert!(ac <= ab + bc + 2.0 * eps + 1e-12);
        }
    }
}

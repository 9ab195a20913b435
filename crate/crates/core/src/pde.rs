//! Solver for the non-linear age-structured renewal problem
//!
//! ```text
//! (∂_t + ∂_a) u_t(a) = 0,   u_t(0) = C(t, u_t) ∫ u_t(a) τ(a) da,   u_0 = g.
//! ```
//!
//! Along characteristics `u_t(a) = b(t - a)` for `a < t` and `g(a - t)`
//! otherwise, where `b(t) = u_t(0)` is the density of births. The solver
//! time-steps the Volterra equation satisfied by `b`,
//!
//! ```text
//! b(t) = C(t, u_t) · ( ∫_0^t b(t - a) τ(a) da + G(t) ),   G(t) = ∫ g(s) τ(s + t) ds,
//! ```
//!
//! with the trapezoid rule. The endpoint term of the convolution contains
//! `b(t)` itself, and so does the mass of `u_t` seen by `C`; both are
//! resolved by Picard sweeps within each step.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{AgeMeasure, Discretized, GriddedDensity};
use crate::point_process::{BirthProcessSpec, InitialAgeDensity};
use crate::rule::{checked_probability, InteractionRule};

const MAX_SWEEPS: usize = 100;
const SWEEP_TOLERANCE: f64 = 1e-14;

/// Boundary trace of the solution on a uniform time grid, together with the
/// model it was computed for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeSolution {
    dt: f64,
    horizon: f64,
    boundary: Vec<f64>,
    mass: Vec<f64>,
    keep: Vec<f64>,
    initial: InitialAgeDensity,
    birth: BirthProcessSpec,
    age_cutoff: f64,
    rule: String,
    #[serde(with = "extended_real")]
    lipschitz: f64,
    residual: f64,
    max_sweeps_used: usize,
}

/// `u_t` seen as a measure on ages. Only the boundary values up to time
/// `t` are consulted.
#[derive(Clone, Copy, Debug)]
pub struct Snapshot<'a> {
    t: f64,
    dt: f64,
    boundary: &'a [f64],
    initial: &'a InitialAgeDensity,
    age_cutoff: f64,
    mass: f64,
}

/// JSON has no infinity; an infinite Lipschitz constant is written as the
/// string `"inf"`.
mod extended_real {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            Repr::Finite(*x).serialize(s)
        } else if *x > 0.0 {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Err(serde::ser::Error::custom("expected a finite value or +inf"))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(x) => Ok(x),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("not a number: {t}"))),
        }
    }
}

fn interpolate(values: &[f64], dt: f64, s: f64) -> f64 {
    let x = (s / dt).max(0.0);
    let k = x.floor() as usize;
    if k + 1 >= values.len() {
        return *values.last().unwrap_or(&0.0);
    }
    let w = x - k as f64;
    values[k] * (1.0 - w) + values[k + 1] * w
}

impl Snapshot<'_> {
    pub fn time(&self) -> f64 {
        self.t
    }

    /// `u_t(a)`.
    pub fn density(&self, a: f64) -> f64 {
        if a < 0.0 {
            0.0
        } else if a < self.t {
            interpolate(self.boundary, self.dt, self.t - a)
        } else {
            self.initial.density(a - self.t)
        }
    }

    /// Splits `[lo, hi]` into cells no wider than `width`.
    fn cells(lo: f64, hi: f64, width: f64) -> impl Iterator<Item = (f64, f64)> {
        let n = if hi > lo { ((hi - lo) / width).ceil() as usize } else { 0 };
        let len = if n > 0 { (hi - lo) / n as f64 } else { 0.0 };
        (0..n).map(move |k| (lo + k as f64 * len, lo + (k + 1) as f64 * len))
    }

    /// Simpson's rule on a cell lying entirely on one side of the age `t`.
    fn cell_integral(&self, a0: f64, a1: f64, phi: &dyn Fn(f64) -> f64, boundary_side: bool) -> f64 {
        let f = |a: f64| {
            let u = if boundary_side {
                interpolate(self.boundary, self.dt, (self.t - a).max(0.0))
            } else {
                self.initial.density((a - self.t).max(0.0))
            };
            u * phi(a)
        };
        let mid = 0.5 * (a0 + a1);
        (a1 - a0) / 6.0 * (f(a0) + 4.0 * f(mid) + f(a1))
    }
}

impl AgeMeasure for Snapshot<'_> {
    fn mass(&self) -> f64 {
        self.mass
    }

    fn integrate(&self, phi: &dyn Fn(f64) -> f64) -> f64 {
        let young: f64 = Snapshot::cells(0.0, self.t, self.dt)
            .map(|(a0, a1)| self.cell_integral(a0, a1, phi, true))
            .sum();
        let old: f64 = Snapshot::cells(self.t, self.t + self.age_cutoff, self.dt)
            .map(|(a0, a1)| self.cell_integral(a0, a1, phi, false))
            .sum();
        young + old
    }

    fn discretize(&self, width: f64) -> Discretized {
        let mut positions = Vec::new();
        let mut weights = Vec::new();
        let mut displacement: f64 = 0.0;
        let one = |_: f64| 1.0;
        for (side, lo, hi) in [(true, 0.0, self.t), (false, self.t, self.t + self.age_cutoff)] {
            for (a0, a1) in Snapshot::cells(lo, hi, width) {
                let m = self.cell_integral(a0, a1, &one, side);
                displacement = displacement.max(0.5 * (a1 - a0));
                if m > 0.0 {
                    positions.push(0.5 * (a0 + a1));
                    weights.push(m);
                }
            }
        }
        Discretized {
            positions,
            weights,
            displacement,
        }
    }
}

fn trapezoid_weight(k: usize, last: usize) -> f64 {
    if k == 0 || k == last {
        0.5
    } else {
        1.0
    }
}

/// Solves the boundary equation on `[0, horizon]` with step `dt`.
pub fn solve_nonlinear(
    birth: &BirthProcessSpec,
    initial: &InitialAgeDensity,
    rule: &dyn InteractionRule,
    horizon: f64,
    dt: f64,
) -> Result<PdeSolution> {
    if !birth.has_density() {
        return Err(Error::config("the PDE needs a birth process with an intensity density"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::arg("horizon must be positive and finite"));
    }
    let sup = birth.sup_bound;
    if !(dt > 0.0 && dt <= 1e-2 * 1f64.min(1.0 / sup) * (1.0 + 1e-12)) {
        return Err(Error::arg(format!(
            "time step {dt} must be positive and at most 1e-2 · min(1, 1/‖τ‖∞) = {}",
            1e-2 * 1f64.min(1.0 / sup)
        )));
    }
    let steps = (horizon / dt).round() as usize;
    if ((steps as f64) * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::arg("horizon must be an integer multiple of the time step"));
    }
    let tau_at = |a: f64| birth.intensity(a).expect("density checked above");

    let age_cutoff = initial.support_max();
    let g_nodes = (age_cutoff / dt).ceil() as usize;
    let tau: Vec<f64> = (0..=steps + g_nodes).map(|k| tau_at(k as f64 * dt)).collect();
    let g: Vec<f64> = (0..=g_nodes)
        .map(|k| trapezoid_weight(k, g_nodes) * initial.density(k as f64 * dt))
        .collect();
    // Normalizing by the quadrature mass of g keeps the discrete scheme
    // mass-consistent (∫g = 1 exactly).
    let g_mass: f64 = g.iter().sum();
    let tail_term: Vec<f64> = (0..=steps)
        .map(|j| g.iter().zip(&tau[j..]).map(|(w, t)| w * t).sum::<f64>() / g_mass)
        .collect();

    let mut boundary: Vec<f64> = Vec::with_capacity(steps + 1);
    let mut mass = Vec::with_capacity(steps + 1);
    let mut keep = Vec::with_capacity(steps + 1);
    let mut max_sweeps_used = 0;

    fn snapshot<'a>(boundary: &'a [f64], t: f64, m: f64, dt: f64, initial: &'a InitialAgeDensity, age_cutoff: f64) -> Snapshot<'a> {
        Snapshot {
            t,
            dt,
            boundary,
            initial,
            age_cutoff,
            mass: m,
        }
    }

    // j = 0: u_0 = g has unit mass whatever b(0) is.
    let c0 = checked_probability(rule, 0.0, &snapshot(&[0.0], 0.0, 1.0, dt, initial, age_cutoff))?;
    boundary.push(c0 * tail_term[0]);
    mass.push(1.0);
    keep.push(c0);

    for j in 1..=steps {
        let t = j as f64 * dt;
        let partial = dt * ((1..j).map(|k| boundary[j - k] * tau[k]).sum::<f64>() + 0.5 * boundary[0] * tau[j]);
        let endpoint = 0.5 * dt * tau[0];
        let prev_mass = mass[j - 1];
        let prev_b = boundary[j - 1];
        boundary.push(prev_b);
        let mut converged = false;
        let mut last_update = f64::INFINITY;
        let mut c = 0.0;
        let mut m = prev_mass;
        for sweep in 1..=MAX_SWEEPS {
            let b = boundary[j];
            m = prev_mass + 0.5 * dt * (prev_b + b);
            c = checked_probability(rule, t, &snapshot(&boundary, t, m, dt, initial, age_cutoff))?;
            let next = c * (partial + endpoint * b + tail_term[j]);
            last_update = (next - b).abs();
            boundary[j] = next;
            if last_update <= SWEEP_TOLERANCE * next.abs().max(1.0) {
                max_sweeps_used = max_sweeps_used.max(sweep);
                m = prev_mass + 0.5 * dt * (prev_b + next);
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Divergence {
                time: t,
                iterations: MAX_SWEEPS,
                last_update,
            });
        }
        if boundary[j] < 0.0 {
            return Err(Error::Invariant(format!("negative birth density at t = {t}")));
        }
        mass.push(m);
        keep.push(c);
    }

    let mut sol = PdeSolution {
        dt,
        horizon: steps as f64 * dt,
        boundary,
        mass,
        keep,
        initial: initial.clone(),
        birth: birth.clone(),
        age_cutoff,
        rule: rule.describe(),
        lipschitz: rule.lipschitz(),
        residual: 0.0,
        max_sweeps_used,
    };
    sol.residual = sol.fixed_point_residual(rule, &tau, &tail_term)?;
    Ok(sol)
}

impl PdeSolution {
    /// Sup-norm distance between the computed trace and one application of
    /// the fixed-point map to it.
    fn fixed_point_residual(&self, rule: &dyn InteractionRule, tau: &[f64], tail_term: &[f64]) -> Result<f64> {
        let b = &self.boundary;
        let dt = self.dt;
        let mut worst: f64 = 0.0;
        for j in 0..b.len() {
            let t = j as f64 * dt;
            let conv = if j == 0 {
                0.0
            } else {
                dt * (0.5 * b[j] * tau[0] + (1..j).map(|k| b[j - k] * tau[k]).sum::<f64>() + 0.5 * b[0] * tau[j])
            };
            let c = checked_probability(rule, t, &self.snapshot_at_index(j))?;
            worst = worst.max((c * (conv + tail_term[j]) - b[j]).abs());
        }
        Ok(worst)
    }

    fn snapshot_at_index(&self, j: usize) -> Snapshot<'_> {
        Snapshot {
            t: j as f64 * self.dt,
            dt: self.dt,
            boundary: &self.boundary[..=j],
            initial: &self.initial,
            age_cutoff: self.age_cutoff,
            mass: self.mass[j],
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `b[j] ≈ u_{jΔt}(0)`.
    pub fn boundary(&self) -> &[f64] {
        &self.boundary
    }

    /// Total mass at the grid times.
    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    /// `C(t_j, u_{t_j})` at the grid times.
    pub fn keep_probabilities(&self) -> &[f64] {
        &self.keep
    }

    pub fn initial(&self) -> &InitialAgeDensity {
        &self.initial
    }

    pub fn birth(&self) -> &BirthProcessSpec {
        &self.birth
    }

    pub fn age_cutoff(&self) -> f64 {
        self.age_cutoff
    }

    pub fn rule_description(&self) -> &str {
        &self.rule
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn max_sweeps_used(&self) -> usize {
        self.max_sweeps_used
    }

    pub fn rate_bound(&self) -> f64 {
        self.birth.sup_bound
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.horizon * (1.0 + 1e-12)) {
            return Err(Error::arg(format!("time {t} outside the solved range [0, {}]", self.horizon)));
        }
        Ok(())
    }

    /// Errors unless `rule` is the rule this solution was computed with.
    pub fn check_rule(&self, rule: &dyn InteractionRule) -> Result<()> {
        if rule.describe() != self.rule {
            return Err(Error::arg(format!(
                "solution was computed for {} but {} was supplied",
                self.rule,
                rule.describe()
            )));
        }
        Ok(())
    }

    /// `b(t) = u_t(0)`, linearly interpolated.
    pub fn boundary_at(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(interpolate(&self.boundary, self.dt, t))
    }

    /// `u_t(a)`.
    pub fn eval_u(&self, t: f64, a: f64) -> Result<f64> {
        self.check_time(t)?;
        if a < 0.0 {
            return Ok(0.0);
        }
        Ok(if a < t {
            interpolate(&self.boundary, self.dt, t - a)
        } else {
            self.initial.density(a - t)
        })
    }

    /// `∫ u_t = 1 + ∫_0^t b`.
    pub fn mass(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let x = t / self.dt;
        let k = (x.floor() as usize).min(self.boundary.len() - 1);
        let s = t - k as f64 * self.dt;
        if s <= 0.0 {
            return Ok(self.mass[k]);
        }
        let b_t = interpolate(&self.boundary, self.dt, t);
        Ok(self.mass[k] + 0.5 * s * (self.boundary[k] + b_t))
    }

    /// `u_t` as a measure.
    pub fn snapshot(&self, t: f64) -> Result<Snapshot<'_>> {
        let mass = self.mass(t)?;
        let end = ((t / self.dt).ceil() as usize + 1).min(self.boundary.len());
        Ok(Snapshot {
            t,
            dt: self.dt,
            boundary: &self.boundary[..end],
            initial: &self.initial,
            age_cutoff: self.age_cutoff,
            mass,
        })
    }

    /// `C(t, u_t)`.
    pub fn keep_probability(&self, rule: &dyn InteractionRule, t: f64) -> Result<f64> {
        let snap = self.snapshot(t)?;
        checked_probability(rule, t, &snap)
    }

    /// `u_t` tabulated at ages `0, step, …` up to `t + age_cutoff`.
    pub fn gridded(&self, t: f64, step: f64) -> Result<GriddedDensity> {
        self.check_time(t)?;
        let n = ((t + self.age_cutoff) / step).ceil() as usize;
        let values = (0..=n).map(|k| self.eval_u(t, k as f64 * step)).collect::<Result<Vec<_>>>()?;
        GriddedDensity::from_nodes(step, values)
    }

    /// First grid index where `mass(t_j) ≤ ρ^j` fails, `ρ` being the
    /// one-step growth factor `(1 + Δt‖τ‖/2) / (1 - Δt‖τ‖/2)` of the
    /// trapezoid scheme (the discrete form of `mass ≤ e^{‖τ‖t}`).
    pub fn gronwall_violation(&self) -> Option<usize> {
        let s = self.birth.sup_bound;
        let rho = (1.0 + 0.5 * self.dt * s) / (1.0 - 0.5 * self.dt * s);
        let mut bound = self.mass[0];
        for (j, &m) in self.mass.iter().enumerate() {
            if j > 0 {
                bound *= rho;
            }
            if m > bound * (1.0 + 1e-12) {
                return Some(j);
            }
        }
        None
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,b,mass,keep")?;
        for (j, ((b, m), c)) in self.boundary.iter().zip(&self.mass).zip(&self.keep).enumerate() {
            writeln!(out, "{},{b},{m},{c}", j as f64 * self.dt)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        serde_json::to_vec(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::rule::ContactRate;

    fn linear(horizon: f64, dt: f64) -> PdeSolution {
        let spec = BirthProcessSpec::poisson_constant(1.0).unwrap();
        let g = InitialAgeDensity::exponential(1.0).unwrap();
        solve_nonlinear(&spec, &g, &ContactRate::constant(1.0).unwrap(), horizon, dt).unwrap()
    }

    fn logistic_mass(t: f64, k: f64) -> f64 {
        k / (1.0 + (k - 1.0) * (-t).exp())
    }

    #[test]
    fn linear_boundary_is_exponential() {
        let sol = linear(3.0, 1e-3);
        let worst = sol
            .boundary()
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let exact = (j as f64 * 1e-3).exp();
                (b - exact).abs() / exact
            })
            .fold(0.0, f64::max);
        assert!(worst <= 1e-3, "{worst}");
        for t in [0.0, 0.5, 1.7, 3.0] {
            let m = sol.mass(t).unwrap();
            assert!((m - t.exp()).abs() / t.exp() <= 1e-3);
        }
        assert_eq!(sol.mass(0.0).unwrap(), 1.0);
    }

    #[test]
    fn linear_profile_transports_the_boundary() {
        let sol = linear(3.0, 1e-3);
        let u = sol.eval_u(2.0, 0.5).unwrap();
        assert!((u - 1.5f64.exp()).abs() / 1.5f64.exp() <= 1e-3);
        for a in [0.0, 0.3, 2.5] {
            assert_eq!(sol.eval_u(0.0, a).unwrap(), sol.initial().density(a));
        }
        // b(0) = g(0) = 1, so both branches meet at a = t.
        let left = sol.eval_u(2.0, 2.0 - 1e-9).unwrap();
        let right = sol.eval_u(2.0, 2.0).unwrap();
        assert!((left - right).abs() <= 1e-3, "{left} {right}");
        assert!(sol.eval_u(3.5, 0.0).is_err());
    }

    #[test]
    fn zero_contact_rate_kills_every_birth() {
        let spec = BirthProcessSpec::poisson_constant(1.0).unwrap();
        let g = InitialAgeDensity::exponential(1.0).unwrap();
        let sol = solve_nonlinear(&spec, &g, &ContactRate::constant(0.0).unwrap(), 2.0, 1e-2).unwrap();
        assert!(sol.boundary().iter().all(|&b| b == 0.0));
        assert!(sol.masses().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn logistic_mass_matches_closed_form() {
        let spec = BirthProcessSpec::poisson_constant(1.0).unwrap();
        let g = InitialAgeDensity::exponential(1.0).unwrap();
        let rule = ContactRate::immunity(10.0).unwrap();
        let sol = solve_nonlinear(&spec, &g, &rule, 6.0, 1e-3).unwrap();
        let worst = sol
            .masses()
            .iter()
            .enumerate()
            .map(|(j, m)| {
                let exact = logistic_mass(j as f64 * 1e-3, 10.0);
                (m - exact).abs() / exact
            })
            .fold(0.0, f64::max);
        assert!(worst <= 1e-3, "{worst}");
        assert!(sol.residual() <= 1e-6);
        assert!(sol.gronwall_violation().is_none());
    }

    #[test]
    fn logistic_mass_saturates_at_capacity() {
        let spec = BirthProcessSpec::poisson_constant(1.0).unwrap();
        let g = InitialAgeDensity::uniform(1.0).unwrap();
        let rule = ContactRate::immunity(10.0).unwrap();
        let sol = solve_nonlinear(&spec, &g, &rule, 20.0, 1e-3).unwrap();
        assert!((sol.mass(20.0).unwrap() - 10.0).abs() <= 1e-2);
    }

    #[test]
    fn trapezoid_order_on_the_linear_case() {
        let err = |dt: f64| {
            let sol = linear(2.0, dt);
            sol.boundary()
                .iter()
                .enumerate()
                .map(|(j, b)| (b - (j as f64 * dt).exp()).abs())
                .fold(0.0, f64::max)
        };
        let order = (err(1e-2) / err(5e-3)).log2();
        assert!(order >= 1.8, "{order}");
    }

    #[test]
    fn invariants_on_a_nontrivial_model() {
        let spec = BirthProcessSpec::poisson(crate::point_process::RateDensity::Window {
            rate: 2.0,
            start: 0.2,
            end: 1.5,
        })
        .unwrap();
        let g = InitialAgeDensity::gamma(2.0, 0.5).unwrap();
        let rule = ContactRate::lockdown(5.0, 0.0, 0.5).unwrap();
        let sol = solve_nonlinear(&spec, &g, &rule, 4.0, 5e-3).unwrap();
        assert!(sol.boundary().iter().all(|&b| b >= 0.0));
        assert!(sol.residual() <= 1e-6, "{}", sol.residual());
        assert!(sol.gronwall_violation().is_none());
        // The snapshot's quadrature mass agrees with the stored mass.
        let snap = sol.snapshot(2.5).unwrap();
        assert!((snap.integrate(&|_| 1.0) - snap.mass()).abs() < 1e-3);
    }

    #[test]
    fn gronwall_check_detects_inflated_mass() {
        let mut sol = linear(1.0, 1e-2);
        assert!(sol.gronwall_violation().is_none());
        sol.mass[40] *= 1.0 + 1e-9;
        assert_eq!(sol.gronwall_violation(), Some(40));
    }

    #[test]
    fn precondition_failures() {
        let spec = BirthProcessSpec::poisson_constant(4.0).unwrap();
        let g = InitialAgeDensity::exponential(1.0).unwrap();
        let rule = ContactRate::constant(1.0).unwrap();
        assert!(solve_nonlinear(&spec, &g, &rule, 1.0, 1e-2).is_err());
        assert!(solve_nonlinear(&spec, &g, &rule, 1.0, 2.5e-3).is_ok());
        let atoms = BirthProcessSpec::atoms(vec![1.0]).unwrap();
        assert!(solve_nonlinear(&atoms, &g, &rule, 1.0, 1e-3).is_err());
    }

    struct OutOfRange;
    impl InteractionRule for OutOfRange {
        fn keep_probability(&self, t: f64, _ages: &dyn AgeMeasure) -> f64 {
            if t > 0.5 {
                -0.1
            } else {
                1.0
            }
        }
        fn lipschitz(&self) -> f64 {
            0.0
        }
        fn describe(&self) -> String {
            "out-of-range".into()
        }
    }

    /// Alternates between 0 and 1 on every call, so the Picard sweeps never
    /// settle.
    #[derive(Default)]
    struct Flicker(AtomicUsize);
    impl InteractionRule for Flicker {
        fn keep_probability(&self, _t: f64, _ages: &dyn AgeMeasure) -> f64 {
            (self.0.fetch_add(1, Ordering::Relaxed) % 2) as f64
        }
        fn lipschitz(&self) -> f64 {
            f64::INFINITY
        }
        fn describe(&self) -> String {
            "flicker".into()
        }
    }

    #[test]
    fn rule_failures_are_reported() {
        let spec = BirthProcessSpec::poisson_constant(1.0).unwrap();
        let g = InitialAgeDensity::exponential(1.0).unwrap();
        assert!(matches!(
            solve_nonlinear(&spec, &g, &OutOfRange, 1.0, 1e-2),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            solve_nonlinear(&spec, &g, &Flicker::default(), 1.0, 1e-2),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let sol = linear(1.0, 1e-2);
        let back = PdeSolution::from_bytes(&sol.to_bytes().unwrap()).unwrap();
        assert_eq!(sol, back);
        let spec = BirthProcessSpec::poisson_constant(1.0).unwrap();
        let g = InitialAgeDensity::uniform(1.0).unwrap();
        let rule = ContactRate::lockdown(5.0, 0.5, 0.5).unwrap();
        let discontinuous = solve_nonlinear(&spec, &g, &rule, 0.5, 1e-2).unwrap();
        assert_eq!(discontinuous.lipschitz(), f64::INFINITY);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sol.json");
        discontinuous.save(&path).unwrap();
        assert_eq!(PdeSolution::load(&path).unwrap(), discontinuous);
        let mut csv = Vec::new();
        sol.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), sol.boundary().len() + 1);
        assert!(text.starts_with("t,b,mass,keep\n0,1,1,1\n"));
    }
}

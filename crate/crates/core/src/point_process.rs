//! The reproduction point process and the initial age distribution.
//!
//! Three families of reproduction laws are supported: inhomogeneous Poisson
//! processes with a bounded rate density (sampled by thinning a homogeneous
//! process run at the stated upper bound), renewal processes with gamma
//! inter-birth times and a cap on the number of births, and deterministic
//! atom lists. Only the first two have an intensity density and can be used
//! by the PDE solver.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Open01, Uniform};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Hard cap on the number of atoms drawn for a single individual.
pub const MAX_ATOMS_PER_INDIVIDUAL: usize = 10_000_000;

/// Initial densities are truncated where their upper tail drops below this.
pub const TAIL_TOLERANCE: f64 = 1e-8;

/// Piecewise-linear function on `[xs[0], xs[last]]`, zero outside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::arg("a table needs at least two (x, y) rows of equal length"));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::arg("table abscissae must be strictly increasing"));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::arg("table entries must be finite"));
        }
        if ys.iter().any(|&y| y < 0.0) {
            return Err(Error::arg("table values must be nonnegative"));
        }
        Ok(PiecewiseLinear { xs, ys })
    }

    /// Parses `x,y` rows; a non-numeric first line is treated as a header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',').map(str::trim);
            let (Some(x), Some(y)) = (fields.next(), fields.next()) else {
                return Err(Error::Parse(format!("line {}: expected two columns", lineno + 1)));
            };
            match (x.parse::<f64>(), y.parse::<f64>()) {
                (Ok(x), Ok(y)) => {
                    xs.push(x);
                    ys.push(y);
                }
                _ if xs.is_empty() && lineno == 0 => continue,
                _ => return Err(Error::Parse(format!("line {}: not a number", lineno + 1))),
            }
        }
        Self::new(xs, ys)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] || x > self.xs[n - 1] {
            return 0.0;
        }
        let k = self.xs.partition_point(|&v| v <= x).clamp(1, n - 1);
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        let w = (x - x0) / (x1 - x0);
        self.ys[k - 1] * (1.0 - w) + self.ys[k] * w
    }

    pub fn max_value(&self) -> f64 {
        self.ys.iter().cloned().fold(0.0, f64::max)
    }

    pub fn integral(&self) -> f64 {
        self.xs
            .windows(2)
            .zip(self.ys.windows(2))
            .map(|(x, y)| 0.5 * (y[0] + y[1]) * (x[1] - x[0]))
            .sum()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    fn scaled(&self, factor: f64) -> Self {
        PiecewiseLinear {
            xs: self.xs.clone(),
            ys: self.ys.iter().map(|y| y * factor).collect(),
        }
    }
}

/// Rate density `τ(a)` of a Poisson reproduction process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum RateDensity {
    Constant { rate: f64 },
    /// `rate` on `[start, end)`, zero elsewhere (a fixed infectious period).
    Window { rate: f64, start: f64, end: f64 },
    /// `rate * exp(-decay * a)`.
    Decay { rate: f64, decay: f64 },
    Table(PiecewiseLinear),
}

impl RateDensity {
    pub fn eval(&self, a: f64) -> f64 {
        if a < 0.0 {
            return 0.0;
        }
        match self {
            RateDensity::Constant { rate } => *rate,
            RateDensity::Window { rate, start, end } => {
                if a >= *start && a < *end {
                    *rate
                } else {
                    0.0
                }
            }
            RateDensity::Decay { rate, decay } => rate * (-decay * a).exp(),
            RateDensity::Table(t) => t.eval(a),
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            RateDensity::Constant { rate } => *rate,
            RateDensity::Window { rate, .. } => *rate,
            RateDensity::Decay { rate, .. } => *rate,
            RateDensity::Table(t) => t.max_value(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            RateDensity::Constant { rate } => rate.is_finite() && *rate >= 0.0,
            RateDensity::Window { rate, start, end } => {
                rate.is_finite() && *rate >= 0.0 && start.is_finite() && end.is_finite() && 0.0 <= *start && start <= end
            }
            RateDensity::Decay { rate, decay } => rate.is_finite() && *rate >= 0.0 && decay.is_finite() && *decay >= 0.0,
            RateDensity::Table(_) => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("rate density parameters out of range: {self:?}")))
        }
    }

    fn is_identically_zero(&self) -> bool {
        match self {
            RateDensity::Constant { rate } | RateDensity::Decay { rate, .. } => *rate == 0.0,
            RateDensity::Window { rate, start, end } => *rate == 0.0 || start == end,
            RateDensity::Table(t) => t.max_value() == 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BirthProcessKind {
    Poisson { rate: RateDensity },
    /// Gamma(shape, scale) inter-birth times, at most `max_births` births.
    Renewal { shape: f64, scale: f64, max_births: usize },
    /// Deterministic, strictly increasing ages.
    Atoms { ages: Vec<f64> },
}

/// Generative model of the reproduction point process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BirthProcessSpec {
    pub kind: BirthProcessKind,
    /// Upper bound on the intensity density.
    pub sup_bound: f64,
}

impl BirthProcessSpec {
    /// Poisson process with the density's own supremum as thinning bound.
    pub fn poisson(rate: RateDensity) -> Result<Self> {
        let bound = rate.sup();
        Self::poisson_with_bound(rate, bound)
    }

    pub fn poisson_constant(rate: f64) -> Result<Self> {
        Self::poisson(RateDensity::Constant { rate })
    }

    pub fn poisson_with_bound(rate: RateDensity, sup_bound: f64) -> Result<Self> {
        rate.validate()?;
        if !(sup_bound.is_finite() && sup_bound >= 0.0) {
            return Err(Error::config("sup_bound must be finite and nonnegative"));
        }
        if sup_bound == 0.0 && !rate.is_identically_zero() {
            return Err(Error::config("sup_bound = 0 but the rate density is not identically zero"));
        }
        if rate.sup() > sup_bound {
            return Err(Error::config(format!(
                "rate density reaches {} above the stated bound {sup_bound}",
                rate.sup()
            )));
        }
        Ok(BirthProcessSpec {
            kind: BirthProcessKind::Poisson { rate },
            sup_bound,
        })
    }

    pub fn renewal(shape: f64, scale: f64, max_births: usize) -> Result<Self> {
        if !(shape.is_finite() && shape >= 1.0) {
            return Err(Error::config("renewal shape must be >= 1 for a bounded intensity"));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::config("renewal scale must be positive"));
        }
        if max_births == 0 {
            return Err(Error::config("renewal max_births must be positive"));
        }
        let mut spec = BirthProcessSpec {
            kind: BirthProcessKind::Renewal { shape, scale, max_births },
            sup_bound: 0.0,
        };
        // Scan the renewal density over many mean inter-birth times; the
        // density is smooth and settles at 1/mean, so a 1% margin is ample.
        let mean = shape * scale;
        let reach = mean * (max_births.min(200) as f64 + 10.0);
        let steps = 20_000;
        let mut sup: f64 = 0.0;
        for k in 0..=steps {
            let a = reach * k as f64 / steps as f64;
            sup = sup.max(renewal_density(shape, scale, max_births, a));
        }
        spec.sup_bound = sup * 1.01;
        Ok(spec)
    }

    pub fn atoms(ages: Vec<f64>) -> Result<Self> {
        if ages.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::config("atom ages must be finite and positive"));
        }
        if ages.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("atom ages must be strictly increasing"));
        }
        Ok(BirthProcessSpec {
            kind: BirthProcessKind::Atoms { ages },
            sup_bound: f64::INFINITY,
        })
    }

    /// Intensity density `τ(a)`, or `None` for atomic laws.
    pub fn intensity(&self, a: f64) -> Option<f64> {
        match &self.kind {
            BirthProcessKind::Poisson { rate } => Some(rate.eval(a)),
            BirthProcessKind::Renewal { shape, scale, max_births } => {
                Some(renewal_density(*shape, *scale, *max_births, a))
            }
            BirthProcessKind::Atoms { .. } => None,
        }
    }

    pub fn has_density(&self) -> bool {
        !matches!(self.kind, BirthProcessKind::Atoms { .. })
    }

    /// Atoms of one realization restricted to `[0, horizon)`, strictly increasing.
    ///
    /// Atoms are generated in increasing order, so for a fixed generator
    /// state the sample on a shorter window is a prefix of the sample on a
    /// longer one.
    pub fn sample_atoms<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> Result<Vec<f64>> {
        if !horizon.is_finite() {
            return Err(Error::arg(format!("sampling window must be finite, got {horizon}")));
        }
        let mut atoms = Vec::new();
        if horizon <= 0.0 {
            return Ok(atoms);
        }
        match &self.kind {
            BirthProcessKind::Poisson { rate } => {
                if self.sup_bound == 0.0 {
                    return Ok(atoms);
                }
                let clock = Exp::new(self.sup_bound).map_err(|e| Error::config(e.to_string()))?;
                let mut t = 0.0;
                loop {
                    t += clock.sample(rng);
                    if t >= horizon {
                        break;
                    }
                    let u: f64 = rng.random();
                    if u * self.sup_bound < rate.eval(t) {
                        push_distinct(&mut atoms, t)?;
                    }
                }
            }
            BirthProcessKind::Renewal { shape, scale, max_births } => {
                let gap = Gamma::new(*shape, *scale).map_err(|e| Error::config(e.to_string()))?;
                let mut t = 0.0;
                for _ in 0..*max_births {
                    t += gap.sample(rng);
                    if t >= horizon {
                        break;
                    }
                    push_distinct(&mut atoms, t)?;
                }
            }
            BirthProcessKind::Atoms { ages } => {
                atoms.extend(ages.iter().copied().take_while(|&a| a < horizon));
            }
        }
        Ok(atoms)
    }
}

fn push_distinct(atoms: &mut Vec<f64>, t: f64) -> Result<()> {
    if atoms.len() >= MAX_ATOMS_PER_INDIVIDUAL {
        return Err(Error::ResourceLimit {
            what: "atoms per individual",
            cap: MAX_ATOMS_PER_INDIVIDUAL,
        });
    }
    let t = match atoms.last() {
        Some(&prev) if t <= prev => prev.next_up(),
        _ => t,
    };
    atoms.push(t);
    Ok(())
}

/// Renewal density `Σ_{n ≤ max} f^{*n}(a)` for gamma inter-birth times.
fn renewal_density(shape: f64, scale: f64, max_births: usize, a: f64) -> f64 {
    if a < 0.0 || (a == 0.0 && shape > 1.0) {
        return 0.0;
    }
    let x = a / scale;
    let mut total = 0.0;
    for n in 1..=max_births {
        let k = shape * n as f64;
        let term = if x == 0.0 {
            if k == 1.0 {
                1.0 / scale
            } else {
                0.0
            }
        } else {
            ((k - 1.0) * x.ln() - x - ln_gamma(k)).exp() / scale
        };
        total += term;
        // Past the mode the terms decay geometrically.
        if k - 1.0 > x && term < 1e-17 * total.max(1e-300) {
            break;
        }
    }
    total
}

/// Law of the initial ages `A⁰ᵢ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InitialAgeDensity {
    Exponential { rate: f64 },
    Uniform { width: f64 },
    Gamma { shape: f64, scale: f64 },
    /// Tabulated density, normalized at construction.
    Table { density: PiecewiseLinear, cdf_knots: Vec<f64> },
}

impl InitialAgeDensity {
    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::config("exponential rate must be positive"));
        }
        Ok(InitialAgeDensity::Exponential { rate })
    }

    pub fn uniform(width: f64) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::config("uniform width must be positive"));
        }
        Ok(InitialAgeDensity::Uniform { width })
    }

    pub fn gamma(shape: f64, scale: f64) -> Result<Self> {
        if !(shape.is_finite() && shape >= 1.0 && scale.is_finite() && scale > 0.0) {
            return Err(Error::config("gamma initial density needs shape >= 1 and scale > 0"));
        }
        Ok(InitialAgeDensity::Gamma { shape, scale })
    }

    pub fn table(table: PiecewiseLinear) -> Result<Self> {
        if table.domain().0 < 0.0 {
            return Err(Error::config("initial ages must be nonnegative"));
        }
        let mass = table.integral();
        if !(mass > 0.0) {
            return Err(Error::config("tabulated initial density has zero mass"));
        }
        let density = table.scaled(1.0 / mass);
        let mut cdf_knots = Vec::with_capacity(density.xs.len());
        let mut acc = 0.0;
        cdf_knots.push(0.0);
        for (x, y) in density.xs.windows(2).zip(density.ys.windows(2)) {
            acc += 0.5 * (y[0] + y[1]) * (x[1] - x[0]);
            cdf_knots.push(acc);
        }
        Ok(InitialAgeDensity::Table { density, cdf_knots })
    }

    pub fn density(&self, a: f64) -> f64 {
        if a < 0.0 {
            return 0.0;
        }
        match self {
            InitialAgeDensity::Exponential { rate } => rate * (-rate * a).exp(),
            InitialAgeDensity::Uniform { width } => {
                if a <= *width {
                    1.0 / width
                } else {
                    0.0
                }
            }
            InitialAgeDensity::Gamma { shape, scale } => {
                if a == 0.0 {
                    return if *shape == 1.0 { 1.0 / scale } else { 0.0 };
                }
                let x = a / scale;
                ((shape - 1.0) * x.ln() - x - ln_gamma(*shape)).exp() / scale
            }
            InitialAgeDensity::Table { density, .. } => density.eval(a),
        }
    }

    /// `∫_a^∞ g`.
    pub fn tail(&self, a: f64) -> f64 {
        if a <= 0.0 {
            return 1.0;
        }
        match self {
            InitialAgeDensity::Exponential { rate } => (-rate * a).exp(),
            InitialAgeDensity::Uniform { width } => (1.0 - a / width).max(0.0),
            InitialAgeDensity::Gamma { shape, scale } => gamma_ur(*shape, a / scale),
            InitialAgeDensity::Table { density, cdf_knots } => {
                let (lo, hi) = density.domain();
                if a >= hi {
                    return 0.0;
                }
                if a <= lo {
                    return 1.0;
                }
                let k = density.xs.partition_point(|&v| v <= a).clamp(1, density.xs.len() - 1);
                let x0 = density.xs[k - 1];
                let partial = 0.5 * (density.ys[k - 1] + density.eval(a)) * (a - x0);
                (1.0 - cdf_knots[k - 1] - partial).max(0.0)
            }
        }
    }

    /// Age beyond which the remaining mass is below [`TAIL_TOLERANCE`].
    pub fn support_max(&self) -> f64 {
        match self {
            InitialAgeDensity::Exponential { rate } => (1.0 / TAIL_TOLERANCE).ln() / rate,
            InitialAgeDensity::Uniform { width } => *width,
            InitialAgeDensity::Table { density, .. } => density.domain().1,
            InitialAgeDensity::Gamma { shape, scale } => {
                let (mut lo, mut hi) = (0.0, shape * scale);
                while self.tail(hi) > TAIL_TOLERANCE {
                    lo = hi;
                    hi *= 2.0;
                }
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if self.tail(mid) > TAIL_TOLERANCE {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            InitialAgeDensity::Exponential { rate } => Exp::new(*rate).expect("validated rate").sample(rng),
            InitialAgeDensity::Uniform { width } => Uniform::new(0.0, *width).expect("validated width").sample(rng),
            InitialAgeDensity::Gamma { shape, scale } => {
                Gamma::new(*shape, *scale).expect("validated gamma").sample(rng)
            }
            InitialAgeDensity::Table { density, cdf_knots } => {
                let u: f64 = Open01.sample(rng);
                let k = cdf_knots.partition_point(|&c| c < u).clamp(1, cdf_knots.len() - 1);
                let (x0, x1) = (density.xs[k - 1], density.xs[k]);
                let (y0, y1) = (density.ys[k - 1], density.ys[k]);
                let need = u - cdf_knots[k - 1];
                let width = x1 - x0;
                let slope = (y1 - y0) / width;
                // Solve y0 s + slope s²/2 = need for s in [0, width].
                let s = if slope.abs() < 1e-12 * (y0.abs() + 1.0) {
                    if y0 > 0.0 {
                        need / y0
                    } else {
                        0.0
                    }
                } else {
                    let disc = (y0 * y0 + 2.0 * slope * need).max(0.0);
                    (disc.sqrt() - y0) / slope
                };
                x0 + s.clamp(0.0, width)
            }
        }
    }

    /// Total mass by composite trapezoid on `[0, support_max]`.
    pub fn quadrature_mass(&self, step: f64) -> f64 {
        let top = self.support_max();
        let n = (top / step).ceil() as usize;
        let h = top / n as f64;
        let mut acc = 0.5 * (self.density(0.0) + self.density(top));
        for k in 1..n {
            acc += self.density(k as f64 * h);
        }
        acc * h
    }
}

/// Shifts the atoms of an ancestor's point process by its (negative) birth
/// time and removes those falling before time zero or at/after the horizon.
pub fn censor_initial(atoms: &[f64], age: f64, horizon: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &a in atoms {
        if a >= age {
            let t = a - age;
            if t >= horizon {
                break;
            }
            let t = match out.last() {
                Some(&prev) if t <= prev => prev.next_up(),
                _ => t,
            };
            out.push(t);
        }
    }
    out
}

/// Draws an ancestor: its birth time `-A` with `A ~ g`, and the atoms of its
/// reproduction process at absolute times in `[0, horizon)`.
pub fn initial_pair<R: Rng + ?Sized>(
    g: &InitialAgeDensity,
    spec: &BirthProcessSpec,
    horizon: f64,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::arg("horizon must be positive and finite"));
    }
    let age = g.sample(rng);
    if !(age >= 0.0 && age.is_finite()) {
        return Err(Error::Invariant(format!("initial age sampler returned {age}")));
    }
    let atoms = spec.sample_atoms(age + horizon, rng)?;
    Ok((-age, censor_initial(&atoms, age, horizon)))
}

//! Experiment configuration files (TOML).

use std::path::Path;

use cmj_core::point_process::PiecewiseLinear;
use cmj_core::{BirthProcessSpec, ContactRate, InitialAgeDensity, InteractionRule, RateDensity};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Solve,
    Simulate,
    Nonlinear,
    Couple,
    Immigration,
    Chains,
    Convergence,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Solve => "solve",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Nonlinear => "nonlinear",
            ExperimentKind::Couple => "couple",
            ExperimentKind::Immigration => "immigration",
            ExperimentKind::Chains => "chains",
            ExperimentKind::Convergence => "convergence",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum BirthConfig {
    Poisson {
        rate: RateDensity,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sup_bound: Option<f64>,
    },
    Renewal {
        shape: f64,
        scale: f64,
        max_births: usize,
    },
    Atoms {
        ages: Vec<f64>,
    },
}

impl BirthConfig {
    pub fn build(&self) -> cmj_core::Result<BirthProcessSpec> {
        match self {
            BirthConfig::Poisson { rate, sup_bound: None } => BirthProcessSpec::poisson(rate.clone()),
            BirthConfig::Poisson {
                rate,
                sup_bound: Some(b),
            } => BirthProcessSpec::poisson_with_bound(rate.clone(), *b),
            BirthConfig::Renewal {
                shape,
                scale,
                max_births,
            } => BirthProcessSpec::renewal(*shape, *scale, *max_births),
            BirthConfig::Atoms { ages } => BirthProcessSpec::atoms(ages.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Exponential { rate: f64 },
    Uniform { width: f64 },
    Gamma { shape: f64, scale: f64 },
    /// Unnormalized density through the points `(ages[i], values[i])`.
    Table { ages: Vec<f64>, values: Vec<f64> },
}

impl InitialConfig {
    pub fn build(&self) -> cmj_core::Result<InitialAgeDensity> {
        match self {
            InitialConfig::Exponential { rate } => InitialAgeDensity::exponential(*rate),
            InitialConfig::Uniform { width } => InitialAgeDensity::uniform(*width),
            InitialConfig::Gamma { shape, scale } => InitialAgeDensity::gamma(*shape, *scale),
            InitialConfig::Table { ages, values } => {
                InitialAgeDensity::table(PiecewiseLinear::new(ages.clone(), values.clone())?)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub birth: BirthConfig,
    pub initial: InitialConfig,
    pub rule: ContactRate,
    /// Declared Lipschitz constant of the rule; defaults to the rule's own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericConfig {
    pub horizon: f64,
    pub dt: f64,
    /// Largest age written to density outputs; defaults to the horizon plus
    /// the support of the initial density.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_max: Option<f64>,
    #[serde(default = "default_eps_grid")]
    pub eps_grid: f64,
    /// Histogram bin width; defaults to `0.05 · min(1, 1/‖τ‖∞)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_width: Option<f64>,
    /// Spacing of time grids in path outputs and sup-distances.
    #[serde(default = "default_output_step")]
    pub output_step: f64,
}

fn default_eps_grid() -> f64 {
    0.01
}

fn default_output_step() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub ancestors: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Immigration levels η.
    #[serde(default = "default_eta")]
    pub eta: Vec<f64>,
    /// Non-linear trees per density estimate.
    #[serde(default = "default_trees")]
    pub trees: usize,
    /// Times at which densities are estimated (default: the horizon).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub times: Vec<f64>,
    /// Tail level ε in `P(I^η(T) ≥ εN)`.
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
    /// Step counts of the dominating chain.
    #[serde(default = "default_chain_steps")]
    pub chain_steps: Vec<u64>,
    /// Birth-time window of the chains experiment (default: the last 10%
    /// of the horizon).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
}

fn default_replicates() -> usize {
    30
}

fn default_eta() -> Vec<f64> {
    vec![0.2]
}

fn default_trees() -> usize {
    10_000
}

fn default_tail_fraction() -> f64 {
    0.5
}

fn default_chain_steps() -> Vec<u64> {
    vec![10, 100, 1000]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    pub model: ModelConfig,
    pub numeric: NumericConfig,
    pub run: RunConfig,
}

/// A validated configuration with its model objects built.
pub struct Model {
    pub birth: BirthProcessSpec,
    pub initial: InitialAgeDensity,
    pub rule: ContactRate,
    pub lipschitz: f64,
}

fn invalid(field: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Validation {
        field: field.to_string(),
        message: message.to_string(),
    }
}

fn positive(field: &str, x: f64) -> CliResult<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("{x} must be positive and finite")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| invalid("config", e.message()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    /// Checks every field against the preconditions of the modules that use
    /// it and builds the model.
    pub fn validate(&self) -> CliResult<Model> {
        let birth = self.model.birth.build().map_err(|e| invalid("model.birth", e))?;
        let initial = self.model.initial.build().map_err(|e| invalid("model.initial", e))?;
        let rule = self.model.rule.clone();
        rule.validate().map_err(|e| invalid("model.rule", e))?;
        let own = rule.lipschitz();
        let lipschitz = match self.model.lipschitz {
            None => own,
            Some(l) if l.is_nan() || l < own => {
                return Err(invalid(
                    "model.lipschitz",
                    format!("{l} is below the rule's Lipschitz constant {own}"),
                ))
            }
            Some(l) => l,
        };

        let n = &self.numeric;
        positive("numeric.horizon", n.horizon)?;
        positive("numeric.dt", n.dt)?;
        if n.dt > n.horizon {
            return Err(invalid("numeric.dt", "exceeds the horizon"));
        }
        if let Some(a) = n.age_max {
            positive("numeric.age_max", a)?;
        }
        positive("numeric.eps_grid", n.eps_grid)?;
        if let Some(h) = n.bin_width {
            positive("numeric.bin_width", h)?;
        }
        positive("numeric.output_step", n.output_step)?;

        let r = &self.run;
        if r.ancestors.is_empty() || r.ancestors.contains(&0) {
            return Err(invalid("run.ancestors", "needs at least one value, all positive"));
        }
        if r.replicates == 0 {
            return Err(invalid("run.replicates", "must be positive"));
        }
        if r.eta.is_empty() || r.eta.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(invalid("run.eta", "needs at least one value, all in (0, 1]"));
        }
        if r.trees == 0 {
            return Err(invalid("run.trees", "must be positive"));
        }
        if r.times.iter().any(|t| !(0.0..=n.horizon).contains(t)) {
            return Err(invalid("run.times", format!("times must lie in [0, {}]", n.horizon)));
        }
        if !(r.tail_fraction > 0.0 && r.tail_fraction.is_finite()) {
            return Err(invalid("run.tail_fraction", "must be positive"));
        }
        if r.chain_steps.is_empty() {
            return Err(invalid("run.chain_steps", "needs at least one value"));
        }
        if let Some([lo, hi]) = r.window {
            if !(0.0 < lo && lo < hi && hi <= n.horizon) {
                return Err(invalid("run.window", format!("needs 0 < lo < hi ≤ {}", n.horizon)));
            }
        }
        if matches!(self.kind, Some(ExperimentKind::Convergence)) {
            check_convergence_inputs(&r.ancestors, r.replicates)?;
        }
        Ok(Model {
            birth,
            initial,
            rule,
            lipschitz,
        })
    }
}

/// A convergence study needs three population sizes and 30 replicates.
pub fn check_convergence_inputs(ancestors: &[usize], replicates: usize) -> CliResult<()> {
    let mut distinct = ancestors.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(invalid("run.ancestors", "a convergence study needs at least 3 distinct values"));
    }
    if replicates < 30 {
        return Err(invalid("run.replicates", "a convergence study needs at least 30 replicates"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOGISTIC: &str = r#"
kind = "simulate"

[model]
birth = { family = "poisson", rate = { shape = "constant", rate = 1.0 } }
initial = { family = "exponential", rate = 1.0 }
rule = { rule = "immunity", capacity = 10.0 }

[numeric]
horizon = 3.0
dt = 0.01

[run]
ancestors = [100]
replicates = 2
seed = 7
"#;

    #[test]
    fn parses_and_validates() {
        let cfg = ExperimentConfig::from_toml(LOGISTIC).unwrap();
        assert_eq!(cfg.kind, Some(ExperimentKind::Simulate));
        let model = cfg.validate().unwrap();
        assert_eq!(model.lipschitz, 0.1);
        assert_eq!(cfg.numeric.eps_grid, 0.01);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml(LOGISTIC).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.to_toml(), cfg.to_toml());
    }

    fn field_of(text: &str) -> String {
        match ExperimentConfig::from_toml(text).and_then(|c| c.validate().map(|_| ())) {
            Err(CliError::Validation { field, .. }) => field,
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_offending_field() {
        assert_eq!(field_of(&LOGISTIC.replace("dt = 0.01", "dt = -1.0")), "numeric.dt");
        assert_eq!(field_of(&LOGISTIC.replace("capacity = 10.0", "capacity = 0.5")), "model.rule");
        assert_eq!(field_of(&LOGISTIC.replace("ancestors = [100]", "ancestors = []")), "run.ancestors");
        assert_eq!(
            field_of(&LOGISTIC.replace("family = \"exponential\", rate = 1.0", "family = \"exponential\", rate = 0.0")),
            "model.initial"
        );
        assert_eq!(
            field_of(&LOGISTIC.replace("rule = { rule", "lipschitz = 0.01\nrule = { rule")),
            "model.lipschitz"
        );
        assert_eq!(field_of(&LOGISTIC.replace("seed = 7", "seed = 7\nbogus = 1")), "config");
        let conv = LOGISTIC.replace("kind = \"simulate\"", "kind = \"convergence\"");
        assert_eq!(field_of(&conv), "run.ancestors");
    }
}

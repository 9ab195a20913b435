//! Interaction rules `C(t, μ)`: the probability that a potential birth at
//! time `t` is kept, given the current age measure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::AgeMeasure;

pub trait InteractionRule: Send + Sync {
    fn keep_probability(&self, t: f64, ages: &dyn AgeMeasure) -> f64;

    /// Lipschitz constant with respect to the Prohorov distance, on the
    /// horizon of interest. `f64::INFINITY` when the rule is discontinuous.
    fn lipschitz(&self) -> f64;

    /// Identifies the rule in solution files and manifests.
    fn describe(&self) -> String;
}

/// Evaluates the rule and checks that it returned a probability.
pub fn checked_probability(rule: &dyn InteractionRule, t: f64, ages: &dyn AgeMeasure) -> Result<f64> {
    let p = rule.keep_probability(t, ages);
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(Error::Contract(format!(
            "interaction rule {} returned {p} at t = {t}",
            rule.describe()
        )))
    }
}

/// Built-in contact-rate functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ContactRate {
    /// `C ≡ value`.
    Constant { value: f64 },
    /// `C(t, μ) = 1 - |μ| / K`: a closed population of size `K N` with
    /// perfect immunity after infection.
    Immunity { capacity: f64 },
    /// `(1 - |μ|/K)(1 - κ 1{|μ| > θK})`: contacts are cut by a factor `κ`
    /// once a fraction `θ` of the population has been infected.
    Lockdown {
        capacity: f64,
        reduction: f64,
        threshold: f64,
    },
}

impl ContactRate {
    pub fn constant(value: f64) -> Result<Self> {
        let rule = ContactRate::Constant { value };
        rule.validate()?;
        Ok(rule)
    }

    pub fn immunity(capacity: f64) -> Result<Self> {
        let rule = ContactRate::Immunity { capacity };
        rule.validate()?;
        Ok(rule)
    }

    pub fn lockdown(capacity: f64, reduction: f64, threshold: f64) -> Result<Self> {
        let rule = ContactRate::Lockdown {
            capacity,
            reduction,
            threshold,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ContactRate::Constant { value } if !(0.0..=1.0).contains(&value) => {
                Err(Error::config(format!("constant contact rate {value} outside [0, 1]")))
            }
            ContactRate::Immunity { capacity } | ContactRate::Lockdown { capacity, .. } if !(capacity > 1.0) => {
                Err(Error::config(format!("capacity K = {capacity} must exceed 1")))
            }
            ContactRate::Lockdown {
                reduction, threshold, ..
            } if !((0.0..=1.0).contains(&reduction) && (0.0..=1.0).contains(&threshold)) => {
                Err(Error::config("lockdown reduction and threshold must lie in [0, 1]"))
            }
            _ => Ok(()),
        }
    }

    fn at_mass(&self, mass: f64) -> f64 {
        match *self {
            ContactRate::Constant { value } => value,
            ContactRate::Immunity { capacity } => (1.0 - mass / capacity).clamp(0.0, 1.0),
            ContactRate::Lockdown {
                capacity,
                reduction,
                threshold,
            } => {
                let base = (1.0 - mass / capacity).clamp(0.0, 1.0);
                if mass > threshold * capacity {
                    base * (1.0 - reduction)
                } else {
                    base
                }
            }
        }
    }
}

impl InteractionRule for ContactRate {
    fn keep_probability(&self, _t: f64, ages: &dyn AgeMeasure) -> f64 {
        match self {
            ContactRate::Constant { value } => *value,
            _ => self.at_mass(ages.mass()),
        }
    }

    /// `||μ| - |ν|| ≤ d_Pr(μ, ν)`, so mass-based rules inherit `1/K`.
    fn lipschitz(&self) -> f64 {
        match *self {
            ContactRate::Constant { .. } => 0.0,
            ContactRate::Immunity { capacity } => 1.0 / capacity,
            ContactRate::Lockdown {
                capacity, reduction, ..
            } => {
                if reduction > 0.0 {
                    f64::INFINITY
                } else {
                    1.0 / capacity
                }
            }
        }
    }

    fn describe(&self) -> String {
        match self {
            ContactRate::Constant { value } => format!("constant(c={value})"),
            ContactRate::Immunity { capacity } => format!("immunity(K={capacity})"),
            ContactRate::Lockdown {
                capacity,
                reduction,
                threshold,
            } => format!("lockdown(K={capacity},kappa={reduction},theta={threshold})"),
        }
    }
}

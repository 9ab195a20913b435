//! Crump-Mode-Jagers (CMJ) branching forests with mean-field interaction.
//!
//! The crate provides
//!
//! * samplers for the reproduction point process and initial ages ([`point_process`]),
//! * empirical and gridded age measures with a certified Prohorov upper bound ([`measures`]),
//! * a solver for the non-linear age-structured renewal equation ([`pde`]),
//! * Ulam-Harris labelled forests ([`forest`]),
//! * the event-driven interacting simulator ([`interacting_sim`]) and its
//!   deterministic-thinning counterpart ([`nonlinear_sim`]),
//! * the five-label coupling between the two ([`coupling`]) and the dominating
//!   CMJ process with immigration ([`immigration`]),
//! * backward birth-chain analysis ([`ancestry`]).
//!
//! All randomness is derived from [`noise::NoiseKey`]s attached to individual
//! nodes, so that different constructions driven by the same key see the same
//! offspring point processes and the same uniform marks.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ancestry;
pub mod coupling;
pub mod error;
pub mod forest;
pub mod immigration;
pub mod interacting_sim;
pub mod measures;
pub mod noise;
pub mod nonlinear_sim;
pub mod pde;
pub mod point_process;
pub mod rule;
pub mod stats;

pub use error::{Error, Result};
pub use forest::{Forest, NodeStatus, Tree, UlamLabel};
pub use measures::{AgeMeasure, EmpiricalAgeMeasure, GriddedDensity};
pub use noise::NoiseKey;
pub use pde::PdeSolution;
pub use point_process::{BirthProcessSpec, InitialAgeDensity, RateDensity};
pub use rule::{ContactRate, InteractionRule};

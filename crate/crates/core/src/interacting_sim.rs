//! Event-driven construction of the interacting CMJ forest.
//!
//! Potential births are inspected in increasing `(time, sequence)` order from
//! a priority queue (the coming generation). A potential birth at `σ` is kept
//! iff its uniform mark is at most `C(σ, μ_{σ⁻})`, where `μ_{σ⁻}` is the
//! empirical age measure of the individuals kept so far. A kept individual
//! draws its offspring on the residual window `[0, T - σ)` and they join the
//! queue.
//!
//! The same loop, with a different keep probability, grows the non-linear
//! trees of [`crate::nonlinear_sim`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::forest::{Forest, NodeStatus, Tree};
use crate::measures::{prohorov_upper, EmpiricalAgeMeasure, EmpiricalAges};
use crate::pde::PdeSolution;
use crate::noise::{NoiseKey, Stream};
use crate::point_process::{initial_pair, BirthProcessSpec, InitialAgeDensity};
use crate::rule::{checked_probability, InteractionRule};
use crate::stats::quantile_sorted;

pub const DEFAULT_EVENT_CAP: usize = 20_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub ancestors: usize,
    pub horizon: f64,
    /// Maximum number of potential births inspected before giving up.
    pub event_cap: usize,
}

impl SimConfig {
    pub fn new(ancestors: usize, horizon: f64) -> Self {
        SimConfig {
            ancestors,
            horizon,
            event_cap: DEFAULT_EVENT_CAP,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.ancestors == 0 {
            return Err(Error::arg("at least one ancestor is required"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::arg("horizon must be positive and finite"));
        }
        Ok(())
    }
}

/// A potential birth waiting in the coming generation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Pending {
    pub time: f64,
    pub seq: u64,
    pub tree: usize,
    pub parent: usize,
    pub key: NoiseKey,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    /// Reversed, so that `BinaryHeap` pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

/// Min-queue of potential births with a global insertion counter.
#[derive(Default)]
pub(crate) struct ComingGeneration {
    heap: BinaryHeap<Pending>,
    next_seq: u64,
}

impl ComingGeneration {
    /// Queues the offspring of a node born at `birth` whose point process
    /// atoms (ages) are `atoms`; the child keys are `key.child(1), …`.
    pub fn push_offspring(&mut self, tree: usize, parent: usize, key: NoiseKey, birth: f64, ages: &[f64], horizon: f64) {
        for (k, &a) in ages.iter().enumerate() {
            let time = birth + a;
            if time >= horizon {
                break;
            }
            self.push_at(tree, parent, key.child(k as u32 + 1), time);
        }
    }

    pub fn push_at(&mut self, tree: usize, parent: usize, key: NoiseKey, time: f64) {
        self.heap.push(Pending {
            time,
            seq: self.next_seq,
            tree,
            parent,
            key,
        });
        self.next_seq += 1;
    }

    pub fn pop(&mut self) -> Option<Pending> {
        self.heap.pop()
    }
}

/// Offspring ages of a non-root individual born at `birth`.
pub(crate) fn offspring_ages(spec: &BirthProcessSpec, key: NoiseKey, birth: f64, horizon: f64) -> Result<Vec<f64>> {
    spec.sample_atoms(horizon - birth, &mut key.rng(Stream::Offspring))
}

/// Birth time and offspring times (absolute, in `[0, horizon)`) of the
/// ancestor with key `key`.
pub(crate) fn ancestor_draw(
    spec: &BirthProcessSpec,
    g: &InitialAgeDensity,
    key: NoiseKey,
    horizon: f64,
) -> Result<(f64, Vec<f64>)> {
    initial_pair(g, spec, horizon, &mut key.rng(Stream::Offspring))
}

pub(crate) struct Grown {
    pub forest: Option<Forest>,
    /// Birth times of the kept individuals (roots first), ascending.
    pub births: Vec<f64>,
    pub events: usize,
}

/// Shared event loop. `keep(t, μ_{t⁻})` returns the keep probability.
#[allow(clippy::too_many_arguments)]
pub(crate) fn grow(
    ancestor_keys: &[NoiseKey],
    normalizer: usize,
    horizon: f64,
    event_cap: usize,
    spec: &BirthProcessSpec,
    g: &InitialAgeDensity,
    record_forest: bool,
    keep: &mut dyn FnMut(f64, &EmpiricalAges<'_>) -> Result<f64>,
) -> Result<Grown> {
    let mut queue = ComingGeneration::default();
    let mut trees = Vec::new();
    let mut births = Vec::new();
    for (i, &key) in ancestor_keys.iter().enumerate() {
        let (sigma, times) = ancestor_draw(spec, g, key, horizon)?;
        births.push(sigma);
        if record_forest {
            trees.push(Tree::new(sigma));
        }
        for (k, &s) in times.iter().enumerate() {
            queue.push_at(i, 0, key.child(k as u32 + 1), s);
        }
    }
    births.sort_by(f64::total_cmp);

    let mut events = 0usize;
    while let Some(ev) = queue.pop() {
        events += 1;
        if events > event_cap {
            return Err(Error::ResourceLimit {
                what: "potential births",
                cap: event_cap,
            });
        }
        let view = EmpiricalAges {
            time: ev.time,
            birth_times: &births,
            normalizer: normalizer as f64,
        };
        let p = keep(ev.time, &view)?;
        let kept = ev.key.mark() <= p;
        let status = if kept { NodeStatus::Kept } else { NodeStatus::Pruned };
        let id = if record_forest {
            trees[ev.tree].add_child(ev.parent, ev.time, status)?
        } else {
            0
        };
        if kept {
            births.push(ev.time);
            let ages = offspring_ages(spec, ev.key, ev.time, horizon)?;
            queue.push_offspring(ev.tree, id, ev.key, ev.time, &ages, horizon);
        }
    }
    Ok(Grown {
        forest: record_forest.then(|| Forest::new(trees, horizon)),
        births,
        events,
    })
}

/// Right-continuous path `t ↦ μ^N_t` on `[0, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AgeMeasurePath {
    births: Vec<f64>,
    normalizer: usize,
    horizon: f64,
}

impl AgeMeasurePath {
    pub(crate) fn new(mut births: Vec<f64>, normalizer: usize, horizon: f64) -> Self {
        births.sort_by(f64::total_cmp);
        AgeMeasurePath {
            births,
            normalizer,
            horizon,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn normalizer(&self) -> usize {
        self.normalizer
    }

    /// Kept birth times, ascending (roots are the negative ones).
    pub fn birth_times(&self) -> &[f64] {
        &self.births
    }

    fn check(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::arg(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    /// `μ_t`, including a birth happening exactly at `t`.
    pub fn view(&self, t: f64) -> Result<EmpiricalAges<'_>> {
        self.check(t)?;
        Ok(EmpiricalAges {
            time: t,
            birth_times: &self.births,
            normalizer: self.normalizer as f64,
        })
    }

    pub fn at(&self, t: f64) -> Result<EmpiricalAgeMeasure> {
        self.check(t)?;
        let end = self.births.partition_point(|&s| s <= t);
        EmpiricalAgeMeasure::new(t, self.births[..end].to_vec(), self.normalizer)
    }

    pub fn mass_at(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.births.partition_point(|&s| s <= t) as f64 / self.normalizer as f64)
    }

    /// `max_j d̂(μ_{t_j}, u_{t_j})` over the grid `t_j = j · step` of
    /// `[0, min(T, horizon of sol)]`, the final time included.
    pub fn sup_distance(&self, sol: &PdeSolution, step: f64, eps_grid: f64) -> Result<f64> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::arg("grid step must be positive"));
        }
        let end = self.horizon.min(sol.horizon());
        let steps = (end / step).ceil() as usize;
        let mut sup: f64 = 0.0;
        for j in 0..=steps {
            let t = (j as f64 * step).min(end);
            let d = prohorov_upper(&self.view(t)?, &sol.snapshot(t)?, eps_grid)?;
            sup = sup.max(d);
        }
        Ok(sup)
    }

    /// Rows `t,mass,age_q10,age_q50,age_q90` on a grid of step `dt`.
    pub fn write_csv<W: Write>(&self, mut out: W, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::arg("grid step must be positive"));
        }
        writeln!(out, "t,mass,age_q10,age_q50,age_q90")?;
        let steps = (self.horizon / dt).round() as usize;
        for j in 0..=steps {
            let t = (j as f64 * dt).min(self.horizon);
            let end = self.births.partition_point(|&s| s <= t);
            let ages: Vec<f64> = self.births[..end].iter().rev().map(|s| t - s).collect();
            let q = |p| quantile_sorted(&ages, p);
            writeln!(
                out,
                "{t},{},{},{},{}",
                end as f64 / self.normalizer as f64,
                q(0.1),
                q(0.5),
                q(0.9)
            )?;
        }
        Ok(())
    }
}

pub struct InteractingRun {
    pub forest: Forest,
    pub path: AgeMeasurePath,
    /// Potential births inspected.
    pub events: usize,
}

/// Grows the interacting forest of `cfg.ancestors` trees. Ancestor `i` uses
/// the key `key.ancestor(i)`.
pub fn simulate_interacting(
    cfg: &SimConfig,
    spec: &BirthProcessSpec,
    g: &InitialAgeDensity,
    rule: &dyn InteractionRule,
    key: NoiseKey,
) -> Result<InteractingRun> {
    let grown = run(cfg, spec, g, rule, key, true)?;
    Ok(InteractingRun {
        forest: grown.forest.expect("recorded"),
        path: AgeMeasurePath::new(grown.births, cfg.ancestors, cfg.horizon),
        events: grown.events,
    })
}

/// Same as [`simulate_interacting`] without building the forest.
pub fn simulate_interacting_path(
    cfg: &SimConfig,
    spec: &BirthProcessSpec,
    g: &InitialAgeDensity,
    rule: &dyn InteractionRule,
    key: NoiseKey,
) -> Result<AgeMeasurePath> {
    let grown = run(cfg, spec, g, rule, key, false)?;
    Ok(AgeMeasurePath::new(grown.births, cfg.ancestors, cfg.horizon))
}

fn run(
    cfg: &SimConfig,
    spec: &BirthProcessSpec,
    g: &InitialAgeDensity,
    rule: &dyn InteractionRule,
    key: NoiseKey,
    record_forest: bool,
) -> Result<Grown> {
    cfg.validate()?;
    let keys: Vec<NoiseKey> = (0..cfg.ancestors).map(|i| key.ancestor(i)).collect();
    grow(
        &keys,
        cfg.ancestors,
        cfg.horizon,
        cfg.event_cap,
        spec,
        g,
        record_forest,
        &mut |t, mu| checked_probability(rule, t, mu),
    )
}

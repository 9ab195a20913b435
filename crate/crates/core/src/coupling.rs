//! Five-label coupling of the interacting forest with `N` independent
//! non-linear trees and a dominating CMJ process with immigration.
//!
//! Particles carry one of the labels `(1,1)`, `(1,0)`, `(0,1)`, `†`, `*`.
//! The `(1,1)`/`(1,0)` particles form the interacting forest, the
//! `(1,1)`/`(0,1)` particles the non-linear trees, and `I^η` counts the
//! `(1,0)`, `(0,1)` and `†` particles. Every particle owns a stream key: its
//! offspring process is drawn from that key and its children are the keys
//! `stream.child(1), stream.child(2), …`. The mark `ω_n` of a potential
//! birth is the mark of its key, so a `(1,1)` lineage sees exactly the noise
//! of the corresponding node in [`crate::interacting_sim`] and
//! [`crate::nonlinear_sim`].

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{Forest, NodeStatus, Tree};
use crate::interacting_sim::{ancestor_draw, offspring_ages, AgeMeasurePath, ComingGeneration, SimConfig};
use crate::measures::{prohorov_upper, EmpiricalAges};
use crate::noise::NoiseKey;
use crate::pde::PdeSolution;
use crate::point_process::{BirthProcessSpec, InitialAgeDensity};
use crate::rule::{checked_probability, InteractionRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CouplingLabel {
    /// `(1,1)`: present in both processes.
    Both,
    /// `(1,0)`: present in the interacting forest only.
    OnlyInteracting,
    /// `(0,1)`: present in the non-linear trees only.
    OnlyNonlinear,
    /// `†`: fictitious particle completing a thinned tree.
    Dagger,
    /// `*`: fictitious particle completing the `(1,1)` tree.
    Star,
}

impl CouplingLabel {
    pub fn in_interacting(self) -> bool {
        matches!(self, CouplingLabel::Both | CouplingLabel::OnlyInteracting)
    }

    pub fn in_nonlinear(self) -> bool {
        matches!(self, CouplingLabel::Both | CouplingLabel::OnlyNonlinear)
    }

    /// Counted by `I^η`.
    pub fn is_immigrant(self) -> bool {
        matches!(
            self,
            CouplingLabel::OnlyInteracting | CouplingLabel::OnlyNonlinear | CouplingLabel::Dagger
        )
    }

    pub fn is_discrepancy(self) -> bool {
        matches!(self, CouplingLabel::OnlyInteracting | CouplingLabel::OnlyNonlinear)
    }
}

impl fmt::Display for CouplingLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CouplingLabel::Both => "(1,1)",
            CouplingLabel::OnlyInteracting => "(1,0)",
            CouplingLabel::OnlyNonlinear => "(0,1)",
            CouplingLabel::Dagger => "dagger",
            CouplingLabel::Star => "star",
        })
    }
}

/// Label of the offspring of a `(1,1)` parent; `None` is `∂` (thinned in
/// both processes).
pub fn assign_offspring_label(p1: f64, p2: f64, omega: f64) -> Result<Option<CouplingLabel>> {
    if !((0.0..=1.0).contains(&p1) && (0.0..=1.0).contains(&p2)) {
        return Err(Error::arg(format!("keep probabilities ({p1}, {p2}) outside [0, 1]")));
    }
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::arg(format!("uniform draw {omega} outside (0, 1)")));
    }
    let gap = (p1 - p2).abs();
    Ok(if omega <= p1 - p2 {
        Some(CouplingLabel::OnlyInteracting)
    } else if omega <= p2 - p1 {
        Some(CouplingLabel::OnlyNonlinear)
    } else if gap < omega && omega < p1.max(p2) {
        Some(CouplingLabel::Both)
    } else {
        None
    })
}

/// `(L I / N + η) ∧ 1`-style envelope, without the cap; `L = ∞` with `I = 0`
/// gives `η`.
fn envelope(lipschitz: f64, immigrants: usize, n: usize, eta: f64) -> f64 {
    if immigrants == 0 {
        eta
    } else {
        lipschitz * immigrants as f64 / n as f64 + eta
    }
}

/// One inspected potential birth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub time: f64,
    pub parent: CouplingLabel,
    /// Label of the primary offspring; `None` is `∂`.
    pub child: Option<CouplingLabel>,
    /// A `*` particle was added alongside.
    pub star: bool,
    /// A `†` particle was immigrated.
    pub rho: bool,
    /// `I^η` right after the event.
    pub immigration: usize,
    /// Number of `(1,0)` and `(0,1)` particles right after the event.
    pub discrepancy: usize,
    pub p1: f64,
    pub p2: f64,
}

pub struct CoupledRun {
    pub interacting: Forest,
    pub nonlinear: Forest,
    pub audit: Vec<AuditRow>,
    /// `(birth time, label)` of every particle, roots included.
    pub particles: Vec<(f64, CouplingLabel)>,
    /// Time of the first event where `|P1 - P2|` exceeds the envelope.
    pub tau_stop: Option<f64>,
    pub ancestors: usize,
    pub horizon: f64,
    pub eta: f64,
    pub lipschitz: f64,
}

impl CoupledRun {
    fn births_where(&self, keep: impl Fn(CouplingLabel) -> bool) -> Vec<f64> {
        self.particles.iter().filter(|(_, l)| keep(*l)).map(|(s, _)| *s).collect()
    }

    /// `μ^N` path of the `(1,1)`/`(1,0)` particles.
    pub fn interacting_path(&self) -> AgeMeasurePath {
        AgeMeasurePath::new(self.births_where(CouplingLabel::in_interacting), self.ancestors, self.horizon)
    }

    /// `μ̄^N` path of the `(1,1)`/`(0,1)` particles.
    pub fn nonlinear_path(&self) -> AgeMeasurePath {
        AgeMeasurePath::new(self.births_where(CouplingLabel::in_nonlinear), self.ancestors, self.horizon)
    }

    /// Particles with one of `labels` born at or before `t`.
    pub fn count_at(&self, t: f64, labels: &[CouplingLabel]) -> usize {
        self.particles
            .iter()
            .filter(|(s, l)| *s <= t && labels.contains(l))
            .count()
    }

    pub fn immigration_at(&self, t: f64) -> usize {
        self.particles.iter().filter(|(s, l)| *s <= t && l.is_immigrant()).count()
    }

    /// Rows `time,parent,child,star,rho,immigration,discrepancy,p1,p2`.
    pub fn write_audit_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "time,parent,child,star,rho,immigration,discrepancy,p1,p2")?;
        for r in &self.audit {
            let child = r.child.map_or_else(|| "discarded".to_string(), |l| l.to_string());
            writeln!(
                out,
                "{},{},{child},{},{},{},{},{},{}",
                r.time, r.parent, r.star as u8, r.rho as u8, r.immigration, r.discrepancy, r.p1, r.p2
            )?;
        }
        Ok(())
    }
}

struct Particle {
    label: CouplingLabel,
    tree: usize,
    inter_node: Option<usize>,
    nonlin_node: Option<usize>,
}

struct Builder<'a> {
    spec: &'a BirthProcessSpec,
    horizon: f64,
    particles: Vec<Particle>,
    births: Vec<(f64, CouplingLabel)>,
    inter_births: Vec<f64>,
    queue: ComingGeneration,
    immigrants: usize,
    discrepancy: usize,
}

impl Builder<'_> {
    /// Records a particle born at `t` whose offspring process is drawn from
    /// `stream`, and queues its offspring.
    fn add(
        &mut self,
        label: CouplingLabel,
        t: f64,
        tree: usize,
        stream: NoiseKey,
        nodes: (Option<usize>, Option<usize>),
    ) -> Result<()> {
        let id = self.particles.len();
        self.particles.push(Particle {
            label,
            tree,
            inter_node: nodes.0,
            nonlin_node: nodes.1,
        });
        self.births.push((t, label));
        if label.in_interacting() {
            self.inter_births.push(t);
        }
        if label.is_immigrant() {
            self.immigrants += 1;
        }
        if label.is_discrepancy() {
            self.discrepancy += 1;
        }
        let ages = offspring_ages(self.spec, stream, t, self.horizon)?;
        self.queue.push_offspring(tree, id, stream, t, &ages, self.horizon);
        Ok(())
    }
}

/// Runs the coupled construction for `cfg.ancestors` ancestors (ancestor
/// `i` uses `key.ancestor(i)`, as in the standalone simulators).
#[allow(clippy::too_many_arguments)]
pub fn simulate_coupled(
    cfg: &SimConfig,
    spec: &BirthProcessSpec,
    g: &InitialAgeDensity,
    rule: &dyn InteractionRule,
    sol: &PdeSolution,
    eta: f64,
    key: NoiseKey,
) -> Result<CoupledRun> {
    cfg.validate()?;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::arg(format!("eta = {eta} must lie in (0, 1]")));
    }
    sol.check_rule(rule)?;
    if sol.birth() != spec || sol.initial() != g {
        return Err(Error::arg("the solution was computed for a different model"));
    }
    if cfg.horizon > sol.horizon() * (1.0 + 1e-12) {
        return Err(Error::arg(format!(
            "horizon {} exceeds the solved range [0, {}]",
            cfg.horizon,
            sol.horizon()
        )));
    }
    let n = cfg.ancestors;
    let horizon = cfg.horizon;
    let lipschitz = rule.lipschitz();
    let mut b = Builder {
        spec,
        horizon,
        particles: Vec::new(),
        births: Vec::new(),
        inter_births: Vec::new(),
        queue: ComingGeneration::default(),
        immigrants: 0,
        discrepancy: 0,
    };
    let mut inter_trees = Vec::with_capacity(n);
    let mut nonlin_trees = Vec::with_capacity(n);
    for i in 0..n {
        let k = key.ancestor(i);
        let (sigma, times) = ancestor_draw(spec, g, k, horizon)?;
        inter_trees.push(Tree::new(sigma));
        nonlin_trees.push(Tree::new(sigma));
        let id = b.particles.len();
        b.particles.push(Particle {
            label: CouplingLabel::Both,
            tree: i,
            inter_node: Some(0),
            nonlin_node: Some(0),
        });
        b.births.push((sigma, CouplingLabel::Both));
        b.inter_births.push(sigma);
        for (j, &s) in times.iter().enumerate() {
            b.queue.push_at(i, id, k.child(j as u32 + 1), s);
        }
    }
    b.inter_births.sort_by(f64::total_cmp);

    let mut audit = Vec::new();
    let mut tau_stop = None;
    let mut events = 0usize;
    while let Some(ev) = b.queue.pop() {
        events += 1;
        if events > cfg.event_cap {
            return Err(Error::ResourceLimit {
                what: "potential births",
                cap: cfg.event_cap,
            });
        }
        let t = ev.time;
        let omega = ev.key.mark();
        let p1 = checked_probability(
            rule,
            t,
            &EmpiricalAges {
                time: t,
                birth_times: &b.inter_births,
                normalizer: n as f64,
            },
        )?;
        let p2 = sol.keep_probability(rule, t)?;
        let bound = envelope(lipschitz, b.immigrants, n, eta);
        let gap = (p1 - p2).abs();
        if tau_stop.is_none() && gap > bound {
            tau_stop = Some(t);
        }
        let parent = &b.particles[ev.parent];
        let (plabel, tree, pin, pnl) = (parent.label, parent.tree, parent.inter_node, parent.nonlin_node);

        let mut star = false;
        let mut rho = false;
        let child = match plabel {
            CouplingLabel::Both => {
                let child = assign_offspring_label(p1, p2, omega)?;
                rho = gap < omega && omega <= bound;
                star = child != Some(CouplingLabel::Both);
                let in_i = child.is_some_and(CouplingLabel::in_interacting);
                let in_n = child.is_some_and(CouplingLabel::in_nonlinear);
                let ni = inter_trees[tree].add_child(pin.expect("(1,1) in both"), t, status(in_i))?;
                let nn = nonlin_trees[tree].add_child(pnl.expect("(1,1) in both"), t, status(in_n))?;
                if let Some(l) = child {
                    b.add(l, t, tree, ev.key, (in_i.then_some(ni), in_n.then_some(nn)))?;
                }
                if star {
                    b.add(CouplingLabel::Star, t, tree, ev.key.star(), (None, None))?;
                }
                if rho {
                    b.add(CouplingLabel::Dagger, t, tree, ev.key.dagger(), (None, None))?;
                }
                child
            }
            CouplingLabel::OnlyInteracting | CouplingLabel::OnlyNonlinear | CouplingLabel::Dagger => {
                let c = match plabel {
                    CouplingLabel::OnlyInteracting => p1,
                    CouplingLabel::OnlyNonlinear => p2,
                    _ => 1.0,
                };
                let kept = omega <= c;
                let l = if kept { plabel } else { CouplingLabel::Dagger };
                let mut nodes = (None, None);
                if plabel == CouplingLabel::OnlyInteracting {
                    let id = inter_trees[tree].add_child(pin.expect("(1,0) in the interacting forest"), t, status(kept))?;
                    nodes.0 = kept.then_some(id);
                }
                if plabel == CouplingLabel::OnlyNonlinear {
                    let id = nonlin_trees[tree].add_child(pnl.expect("(0,1) in the non-linear trees"), t, status(kept))?;
                    nodes.1 = kept.then_some(id);
                }
                b.add(l, t, tree, ev.key, nodes)?;
                Some(l)
            }
            CouplingLabel::Star => {
                rho = omega <= bound;
                b.add(CouplingLabel::Star, t, tree, ev.key.star(), (None, None))?;
                if rho {
                    b.add(CouplingLabel::Dagger, t, tree, ev.key, (None, None))?;
                }
                Some(CouplingLabel::Star)
            }
        };
        audit.push(AuditRow {
            time: t,
            parent: plabel,
            child,
            star,
            rho,
            immigration: b.immigrants,
            discrepancy: b.discrepancy,
            p1,
            p2,
        });
    }
    Ok(CoupledRun {
        interacting: Forest::new(inter_trees, horizon),
        nonlinear: Forest::new(nonlin_trees, horizon),
        audit,
        particles: b.births,
        tau_stop,
        ancestors: n,
        horizon,
        eta,
        lipschitz,
    })
}

fn status(kept: bool) -> NodeStatus {
    if kept {
        NodeStatus::Kept
    } else {
        NodeStatus::Pruned
    }
}

/// Outcome of [`check_domination`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub events_checked: usize,
    /// Index of the first audit row with `discrepancy > I^η`.
    pub first_violation: Option<usize>,
    /// `d̂(μ̄^N_T, u_T)`.
    pub distance: f64,
    /// `L · d̂(μ̄^N_T, u_T) < η`.
    pub precondition: bool,
    /// The discrepancy counter equals the number of labels kept in exactly
    /// one of the two forests.
    pub forest_recount_matches: bool,
    pub tau_stop: Option<f64>,
}

impl DominationReport {
    /// No violation on a run where the precondition holds (a run where it
    /// fails certifies nothing either way).
    pub fn certified(&self) -> bool {
        self.first_violation.is_none() && self.forest_recount_matches
    }
}

/// Labels kept in exactly one of the two forests, born at or before `t`.
pub fn forest_discrepancy(a: &Forest, b: &Forest, t: f64) -> usize {
    let mut count = 0;
    for (ta, tb) in a.trees().iter().zip(b.trees()) {
        let ka: std::collections::HashSet<_> =
            ta.kept_nodes().into_iter().filter(|(_, s)| *s <= t).map(|(l, _)| l).collect();
        let kb: std::collections::HashSet<_> =
            tb.kept_nodes().into_iter().filter(|(_, s)| *s <= t).map(|(l, _)| l).collect();
        count += ka.symmetric_difference(&kb).count();
    }
    count
}

/// Scans every event for `discrepancy ≤ I^η`, evaluates the precondition
/// `L d̂(μ̄^N_T, u_T) < η` and recounts the final discrepancy from the
/// forests.
pub fn check_domination(run: &CoupledRun, sol: &PdeSolution, eps_grid: f64) -> Result<DominationReport> {
    let first_violation = run.audit.iter().position(|r| r.discrepancy > r.immigration);
    let path = run.nonlinear_path();
    let mu_bar = path.view(run.horizon)?;
    let distance = prohorov_upper(&mu_bar, &sol.snapshot(run.horizon)?, eps_grid)?;
    let precondition = run.lipschitz.is_finite() && run.lipschitz * distance < run.eta;
    let counted = run.audit.last().map_or(0, |r| r.discrepancy);
    let recount = forest_discrepancy(&run.interacting, &run.nonlinear, run.horizon);
    Ok(DominationReport {
        events_checked: run.audit.len(),
        first_violation,
        distance,
        precondition,
        forest_recount_matches: counted == recount,
        tau_stop: run.tau_stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interacting_sim::simulate_interacting;
    use crate::nonlinear_sim::simulate_nonlinear_tree;
    use crate::pde::solve_nonlinear;
    use crate::rule::ContactRate;

    fn model(rule: &ContactRate, horizon: f64) -> (BirthProcessSpec, InitialAgeDensity, PdeSolution) {
        let spec = BirthProcessSpec::poisson_constant(1.0).unwrap();
        let g = InitialAgeDensity::exponential(1.0).unwrap();
        let sol = solve_nonlinear(&spec, &g, rule, horizon, 1e-2).unwrap();
        (spec, g, sol)
    }

    #[test]
    fn threshold_cases() {
        use CouplingLabel::*;
        assert_eq!(assign_offspring_label(0.7, 0.5, 0.1).unwrap(), Some(OnlyInteracting));
        assert_eq!(assign_offspring_label(0.7, 0.5, 0.6).unwrap(), Some(Both));
        assert_eq!(assign_offspring_label(0.7, 0.5, 0.8).unwrap(), None);
        assert_eq!(assign_offspring_label(0.5, 0.7, 0.1).unwrap(), Some(OnlyNonlinear));
        assert_eq!(assign_offspring_label(0.4, 0.4, 0.3).unwrap(), Some(Both));
        assert_eq!(assign_offspring_label(0.4, 0.4, 0.5).unwrap(), None);
        assert!(assign_offspring_label(1.2, 0.5, 0.5).is_err());
        assert!(assign_offspring_label(0.2, 0.5, 0.0).is_err());
        assert!(assign_offspring_label(0.2, 0.5, 1.0).is_err());
    }

    #[test]
    fn marginals_by_brute_force() {
        use rand::Rng;
        let mut rng = NoiseKey::master(1).rng(crate::noise::Stream::Aux);
        let (p1, p2) = (0.3, 0.9);
        let draws = 1_000_000;
        let (mut second, mut first) = (0u64, 0u64);
        for _ in 0..draws {
            let w: f64 = rng.random_range(f64::EPSILON..1.0);
            let l = assign_offspring_label(p1, p2, w).unwrap();
            if l.is_some_and(CouplingLabel::in_nonlinear) {
                second += 1;
            }
            if l.is_some_and(CouplingLabel::in_interacting) {
                first += 1;
            }
        }
        let check = |hits: u64, p: f64| {
            let f = hits as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((f - p).abs() <= 3.0 * se, "{f} vs {p}");
        };
        check(second, p2);
        check(first, p1);
    }

    #[test]
    fn constant_rule_couples_perfectly() {
        let rule = ContactRate::constant(0.7).unwrap();
        let (spec, g, sol) = model(&rule, 3.0);
        let cfg = SimConfig::new(60, 3.0);
        let key = NoiseKey::master(21);
        let run = simulate_coupled(&cfg, &spec, &g, &rule, &sol, 0.2, key).unwrap();
        assert!(run.audit.iter().all(|r| r.discrepancy == 0 && r.p1 == r.p2));
        assert_eq!(run.interacting, run.nonlinear);
        assert!(run.tau_stop.is_none());
        // Both sides are the standalone simulators under the same noise.
        let direct = simulate_interacting(&cfg, &spec, &g, &rule, key).unwrap();
        assert_eq!(run.interacting, direct.forest);
        for i in 0..cfg.ancestors {
            let tree = simulate_nonlinear_tree(&spec, &g, &rule, &sol, 3.0, key.ancestor(i)).unwrap();
            assert_eq!(run.nonlinear.tree(i), &tree.tree);
        }
        let report = check_domination(&run, &sol, 0.05).unwrap();
        assert!(report.certified());
    }

    #[test]
    fn saturated_eta_always_immigrates_from_star_parents() {
        let rule = ContactRate::immunity(3.0).unwrap();
        let (spec, g, sol) = model(&rule, 2.0);
        let run = simulate_coupled(&SimConfig::new(30, 2.0), &spec, &g, &rule, &sol, 1.0, NoiseKey::master(4)).unwrap();
        let star_rows: Vec<_> = run.audit.iter().filter(|r| r.parent == CouplingLabel::Star).collect();
        assert!(!star_rows.is_empty());
        assert!(star_rows.iter().all(|r| r.rho));
        // With η = 1 every (1,1) birth not kept in both adds a particle on
        // the right: I^η counts every particle off the (1,1)/* tree.
        let off_left = run
            .particles
            .iter()
            .filter(|(_, l)| !matches!(l, CouplingLabel::Both | CouplingLabel::Star))
            .count();
        assert_eq!(run.audit.last().unwrap().immigration, off_left);
        assert_eq!(run.immigration_at(2.0), off_left);
    }

    #[test]
    fn immigration_probability_follows_the_envelope() {
        // Each (1,1) event immigrates a † exactly on |P1-P2| < ω ≤ bound.
        let rule = ContactRate::immunity(4.0).unwrap();
        let (spec, g, sol) = model(&rule, 2.5);
        let run = simulate_coupled(&SimConfig::new(40, 2.5), &spec, &g, &rule, &sol, 0.1, NoiseKey::master(8)).unwrap();
        let mut prev_i = 0;
        for r in &run.audit {
            let bound = envelope(run.lipschitz, prev_i, 40, 0.1);
            match r.parent {
                CouplingLabel::Both => {
                    if r.rho {
                        assert!((r.p1 - r.p2).abs() < bound);
                    }
                    assert_eq!(r.star, r.child != Some(CouplingLabel::Both));
                }
                CouplingLabel::Star => assert!(!r.star && r.child == Some(CouplingLabel::Star)),
                _ => assert!(!r.rho && !r.star),
            }
            prev_i = r.immigration;
        }
    }

    #[test]
    fn corrupted_counter_is_detected() {
        let rule = ContactRate::immunity(10.0).unwrap();
        let (spec, g, sol) = model(&rule, 2.0);
        let mut run = simulate_coupled(&SimConfig::new(50, 2.0), &spec, &g, &rule, &sol, 0.2, NoiseKey::master(2)).unwrap();
        let report = check_domination(&run, &sol, 0.05).unwrap();
        assert!(report.certified(), "{report:?}");
        let k = run.audit.len() / 2;
        run.audit[k].discrepancy = run.audit[k].immigration + 1;
        let report = check_domination(&run, &sol, 0.05).unwrap();
        assert_eq!(report.first_violation, Some(k));
        assert!(!report.certified());
    }

    #[test]
    fn forest_recount_agrees_with_the_counter() {
        let rule = ContactRate::immunity(2.0).unwrap();
        let (spec, g, sol) = model(&rule, 3.0);
        for seed in 0..5 {
            let run = simulate_coupled(&SimConfig::new(20, 3.0), &spec, &g, &rule, &sol, 0.2, NoiseKey::master(seed)).unwrap();
            run.interacting.validate().unwrap();
            run.nonlinear.validate().unwrap();
            let counted = run.count_at(3.0, &[CouplingLabel::OnlyInteracting, CouplingLabel::OnlyNonlinear]);
            assert_eq!(counted, forest_discrepancy(&run.interacting, &run.nonlinear, 3.0));
            assert_eq!(
                run.interacting.kept_count(),
                run.count_at(3.0, &[CouplingLabel::Both, CouplingLabel::OnlyInteracting])
            );
            assert_eq!(
                run.nonlinear.kept_count(),
                run.count_at(3.0, &[CouplingLabel::Both, CouplingLabel::OnlyNonlinear])
            );
        }
    }

    #[test]
    fn preconditions() {
        let rule = ContactRate::immunity(10.0).unwrap();
        let (spec, g, sol) = model(&rule, 2.0);
        let key = NoiseKey::master(1);
        assert!(simulate_coupled(&SimConfig::new(5, 2.0), &spec, &g, &rule, &sol, 0.0, key).is_err());
        assert!(simulate_coupled(&SimConfig::new(5, 2.0), &spec, &g, &rule, &sol, 1.5, key).is_err());
        assert!(simulate_coupled(&SimConfig::new(5, 3.0), &spec, &g, &rule, &sol, 0.2, key).is_err());
        let other = ContactRate::immunity(5.0).unwrap();
        assert!(simulate_coupled(&SimConfig::new(5, 2.0), &spec, &g, &other, &sol, 0.2, key).is_err());
    }

    #[test]
    fn audit_csv_has_one_row_per_event() {
        let rule = ContactRate::immunity(10.0).unwrap();
        let (spec, g, sol) = model(&rule, 1.0);
        let run = simulate_coupled(&SimConfig::new(10, 1.0), &spec, &g, &rule, &sol, 0.2, NoiseKey::master(3)).unwrap();
        let mut buf = Vec::new();
        run.write_audit_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), run.audit.len() + 1);
    }
}

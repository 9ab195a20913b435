//! Closed-form benchmarks: the linear model (`C ≡ 1`, `τ ≡ 1`) and the
//! logistic immunity model (`C = 1 - m/K`, `τ ≡ 1`).

use cmj_core::interacting_sim::{simulate_interacting_path, SimConfig};
use cmj_core::nonlinear_sim::{estimate_mean_age_density, simulate_nonlinear_tree};
use cmj_core::pde::solve_nonlinear;
use cmj_core::stats::mean_and_se;
use cmj_core::{BirthProcessSpec, ContactRate, InitialAgeDensity, NoiseKey};

fn model() -> (BirthProcessSpec, InitialAgeDensity) {
    (
        BirthProcessSpec::poisson_constant(1.0).unwrap(),
        InitialAgeDensity::exponential(1.0).unwrap(),
    )
}

fn logistic(k: f64, t: f64) -> f64 {
    k / (1.0 + (k - 1.0) * (-t).exp())
}

#[test]
fn linear_boundary_is_exponential() {
    let (spec, g) = model();
    let rule = ContactRate::constant(1.0).unwrap();
    let sol = solve_nonlinear(&spec, &g, &rule, 3.0, 1e-3).unwrap();
    let worst = sol
        .boundary()
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let t = j as f64 * sol.dt();
            (b - t.exp()).abs() / t.exp()
        })
        .fold(0.0, f64::max);
    assert!(worst <= 1e-3, "max relative error {worst}");
}

#[test]
fn logistic_mass_follows_the_closed_form() {
    let (spec, g) = model();
    let rule = ContactRate::immunity(10.0).unwrap();
    let sol = solve_nonlinear(&spec, &g, &rule, 6.0, 1e-3).unwrap();
    for j in 0..=60 {
        let t = j as f64 * 0.1;
        let m = sol.mass(t).unwrap();
        let exact = logistic(10.0, t);
        assert!((m - exact).abs() <= 1e-3 * exact, "t={t}: {m} vs {exact}");
    }
}

#[test]
fn linear_population_grows_like_the_exponential() {
    let (spec, g) = model();
    let rule = ContactRate::constant(1.0).unwrap();
    let cfg = SimConfig::new(1000, 2.0);
    let runs: Vec<_> = (0..40)
        .map(|s| simulate_interacting_path(&cfg, &spec, &g, &rule, NoiseKey::master(100 + s)).unwrap())
        .collect();
    for t in [1.0, 2.0] {
        let masses: Vec<f64> = runs.iter().map(|p| p.mass_at(t).unwrap()).collect();
        let (mean, se) = mean_and_se(&masses);
        assert!((mean - f64::exp(t)).abs() <= 3.0 * se, "t={t}: {mean} ± {se}");
    }
}

#[test]
fn logistic_population_saturates() {
    let (spec, g) = model();
    let rule = ContactRate::immunity(10.0).unwrap();
    let cfg = SimConfig::new(2000, 5.0);
    let masses: Vec<f64> = (0..10)
        .map(|s| {
            simulate_interacting_path(&cfg, &spec, &g, &rule, NoiseKey::master(7).replicate(s))
                .unwrap()
                .mass_at(5.0)
                .unwrap()
        })
        .collect();
    let (mean, se) = mean_and_se(&masses);
    assert!((mean - logistic(10.0, 5.0)).abs() <= 3.0 * se + 1e-2, "{mean} ± {se}");
    assert!(masses.iter().all(|&m| m <= 10.0 + 1e-12));
}

#[test]
fn nonlinear_density_matches_the_solver() {
    let (spec, g) = model();
    let rule = ContactRate::immunity(10.0).unwrap();
    let sol = solve_nonlinear(&spec, &g, &rule, 2.0, 1e-3).unwrap();
    let est = estimate_mean_age_density(20_000, 0.05, 2.0, &spec, &g, &rule, &sol, NoiseKey::master(3)).unwrap();
    let cmp = est.compare(&sol).unwrap();
    assert!(cmp.passes(), "{cmp:?}");
    let (m, _) = (est.mean_count, est.count_standard_error);
    assert!((m - logistic(10.0, 2.0)).abs() <= 3.0 * est.count_standard_error + 1e-2);
}

#[test]
fn large_nonlinear_tree_is_consistent() {
    // About 10^5 potential births under the linear rule.
    let (spec, g) = model();
    let rule = ContactRate::constant(1.0).unwrap();
    let sol = solve_nonlinear(&spec, &g, &rule, 11.0, 1e-2).unwrap();
    let t = simulate_nonlinear_tree(&spec, &g, &rule, &sol, 11.0, NoiseKey::master(5)).unwrap();
    assert!(t.tree.len() > 10_000);
    assert_eq!(t.tree.kept_count(), t.births.len());
    t.tree.validate().unwrap();
    assert!(t.births.windows(2).all(|w| w[0] <= w[1]));
}

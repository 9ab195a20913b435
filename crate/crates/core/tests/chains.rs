//! Backward birth chains against the kernel of the limit equation.

use cmj_core::ancestry::{empirical_chain_measure, kernel_mass, parent_delay_fit, sample_chain};
use cmj_core::interacting_sim::{simulate_interacting, SimConfig};
use cmj_core::noise::Stream;
use cmj_core::pde::solve_nonlinear;
use cmj_core::stats::mean_and_se;
use cmj_core::{BirthProcessSpec, ContactRate, InitialAgeDensity, NoiseKey};
use rand::Rng;

fn model() -> (BirthProcessSpec, InitialAgeDensity) {
    (
        BirthProcessSpec::poisson_constant(1.0).unwrap(),
        InitialAgeDensity::exponential(1.0).unwrap(),
    )
}

#[test]
fn kernel_is_normalized_at_random_times() {
    let (spec, g) = model();
    for rule in [ContactRate::constant(1.0).unwrap(), ContactRate::immunity(10.0).unwrap()] {
        let sol = solve_nonlinear(&spec, &g, &rule, 3.0, 1e-3).unwrap();
        let mut rng = NoiseKey::master(17).rng(Stream::Aux);
        for _ in 0..20 {
            let t = 3.0 * (1.0 - rng.random::<f64>());
            let m = kernel_mass(&sol, &rule, t).unwrap();
            assert!((m - 1.0).abs() <= 1e-3, "t={t}: {m}");
        }
    }
}

#[test]
fn chain_lengths_are_reproducible() {
    let (spec, g) = model();
    let rule = ContactRate::constant(1.0).unwrap();
    let sol = solve_nonlinear(&spec, &g, &rule, 1.0, 1e-3).unwrap();
    let lengths = |seed, count| -> Vec<f64> {
        let mut rng = NoiseKey::master(seed).rng(Stream::Aux);
        (0..count)
            .map(|_| sample_chain(&sol, &rule, 1.0, &mut rng).unwrap().len() as f64)
            .collect()
    };
    let a = lengths(1, 100_000);
    assert_eq!(a[..2000], lengths(1, 2000)[..]);
    let (ma, sa) = mean_and_se(&a);
    let (mb, sb) = mean_and_se(&lengths(2, 20_000));
    // Linear case: Exp(1) steps back from 1, so the chain holds T_1, a
    // Poisson(1) number of further positive times and the final one.
    assert!((ma - 3.0).abs() <= 4.0 * sa, "{ma} ± {sa}");
    assert!((ma - mb).abs() <= 4.0 * (sa * sa + sb * sb).sqrt());
}

#[test]
fn linear_parent_delays_follow_the_kernel() {
    let (spec, g) = model();
    let rule = ContactRate::constant(1.0).unwrap();
    let sol = solve_nonlinear(&spec, &g, &rule, 2.1, 1e-3).unwrap();
    let run = simulate_interacting(&SimConfig::new(10_000, 2.1), &spec, &g, &rule, NoiseKey::master(23)).unwrap();
    let chains = empirical_chain_measure(&run.forest, 2.1).unwrap();
    let fit = parent_delay_fit(&chains, &sol, &rule, (1.9, 2.1), 0.1).unwrap();
    assert!(fit.samples() > 10_000);
    assert!(fit.p_value > 0.01, "{fit:?}");

    // The same histogram against the closed form e^{-a}.
    let n = fit.samples() as f64;
    let last = fit.expected.len() - 1;
    for (k, e) in fit.expected.iter().enumerate().take(last) {
        let lo = k as f64 * 0.1;
        let exact = n * ((-lo).exp() - (-lo - 0.1).exp());
        assert!((e - exact).abs() <= 1e-3 * n, "bin {k}: {e} vs {exact}");
    }
}

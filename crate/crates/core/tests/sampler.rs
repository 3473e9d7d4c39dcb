use proptest::prelude::*;

use longmix::data::{simulate_dataset, SimulationSpec, Span};
use longmix::diagnostics::{mean, variance};
use longmix::model::{JointParams, ModelState, Params, TotalParams, SD_UPPER};
use longmix::sampler::{initial_state, run_chain, run_chain_from, Block, ChainConfig};

fn table1() -> Params {
    Params::Total(TotalParams {
        beta0: 8.098,
        sigma: 0.541,
        sigma0: 4.234,
        sigma1: 0.054,
    })
}

fn total_sim(countries: usize, seed: u64) -> longmix::data::Simulated {
    let spec = SimulationSpec::balanced(table1(), countries, Span::new(1970, 2014).unwrap());
    simulate_dataset(&spec, seed).unwrap()
}

fn truth_state(sim: &longmix::data::Simulated, params: Params) -> ModelState {
    ModelState::from_parts(params, sim.effects.clone()).unwrap()
}

fn only(free: Block) -> std::collections::BTreeSet<Block> {
    [
        Block::FixedIntercepts,
        Block::RandomEffects,
        Block::ObsSd,
        Block::InterceptSd,
        Block::SlopeSd,
        Block::Correlations,
    ]
    .into_iter()
    .filter(|b| *b != free)
    .collect()
}

/// Variance draws of the one sd left free, everything else at the truth.
fn frozen_run(free: Block, seed: u64) -> (longmix::data::Simulated, Vec<f64>) {
    let sim = total_sim(12, seed);
    let init = truth_state(&sim, table1());
    let cfg = ChainConfig {
        iterations: 10_100,
        burnin: 100,
        thin: 1,
        chains: 1,
        seed,
        frozen: only(free),
        ..ChainConfig::default()
    };
    let d = run_chain_from(&sim.dataset, &cfg, 0, init).unwrap();
    let name = match free {
        Block::ObsSd => "sigma",
        Block::InterceptSd => "sigma0",
        _ => "sigma1",
    };
    let var = d.get(name).unwrap().iter().map(|s| s * s).collect();
    (sim, var)
}

/// Mean of `v` under the density `v^-(a+1) exp(-b/v)` on (0, upper), by
/// midpoint quadrature.
fn truncated_ig_mean(a: f64, b: f64, upper: f64) -> f64 {
    let n = 200_000;
    let h = upper / n as f64;
    let (mut z, mut m) = (0.0, 0.0);
    for k in 0..n {
        let v = (k as f64 + 0.5) * h;
        let w = (-(a + 1.0) * v.ln() - b / v).exp();
        z += w;
        m += w * v;
    }
    m / z
}

#[test]
fn obs_variance_draws_match_truncated_inverse_gamma() {
    let (sim, var) = frozen_run(Block::ObsSd, 31);
    let state = truth_state(&sim, table1());
    let n = sim.dataset.len() as f64;
    let ss: f64 = sim
        .dataset
        .observations()
        .iter()
        .map(|o| {
            let mu = longmix::model::linear_predictor(&state, o.country, o.t, o.sector).unwrap();
            (o.y - mu).powi(2)
        })
        .sum();
    let expected = truncated_ig_mean((n - 1.0) / 2.0, ss / 2.0, SD_UPPER * SD_UPPER);
    let se = (variance(&var) / var.len() as f64).sqrt();
    assert!(
        (mean(&var) - expected).abs() < 3.0 * se,
        "{} vs {expected}",
        mean(&var)
    );
}

#[test]
fn intercept_sd_draws_match_truncated_inverse_gamma() {
    let (sim, var) = frozen_run(Block::InterceptSd, 32);
    let b0 = sim.effects.columns()[0].to_vec();
    let ss: f64 = b0.iter().map(|b| b * b).sum();
    let c = b0.len() as f64;
    let expected = truncated_ig_mean((c - 1.0) / 2.0, ss / 2.0, SD_UPPER * SD_UPPER);
    let se = (variance(&var) / var.len() as f64).sqrt();
    assert!(
        (mean(&var) - expected).abs() < 3.0 * se,
        "{} vs {expected}",
        mean(&var)
    );
}

#[test]
fn slope_sd_draws_match_truncated_inverse_gamma() {
    let (sim, var) = frozen_run(Block::SlopeSd, 33);
    let b1 = sim.effects.columns()[1].to_vec();
    let ss: f64 = b1.iter().map(|b| b * b).sum();
    let c = b1.len() as f64;
    let expected = truncated_ig_mean((c - 1.0) / 2.0, ss / 2.0, SD_UPPER * SD_UPPER);
    let se = (variance(&var) / var.len() as f64).sqrt();
    assert!(
        (mean(&var) - expected).abs() < 3.0 * se,
        "{} vs {expected}",
        mean(&var)
    );
}

#[test]
fn step_sizes_are_frozen_after_burn_in() {
    let p = Params::Joint(JointParams {
        beta0_i: 8.7,
        beta0_a: 5.7,
        sigma: 0.565,
        sigma0_i: 2.6,
        sigma0_a: 3.8,
        sigma1_i: 0.05,
        sigma1_a: 0.05,
        rho0: 0.67,
        rho1: 0.9,
    });
    let spec = SimulationSpec::balanced(p, 8, Span::new(1970, 1999).unwrap());
    let sim = simulate_dataset(&spec, 4).unwrap();
    let short = ChainConfig {
        iterations: 1_500,
        burnin: 1_000,
        thin: 1,
        ..ChainConfig::default()
    };
    let long = ChainConfig {
        iterations: 3_000,
        ..short.clone()
    };
    let a = run_chain(&sim.dataset, &short, 0).unwrap();
    let b = run_chain(&sim.dataset, &long, 0).unwrap();
    assert_eq!(a.step_sizes, b.step_sizes);
    assert_eq!(a.step_sizes.len(), 6);
    for (name, col) in &a.draws {
        assert_eq!(col[..], b.draws[name][..col.len()], "{name}");
    }
}

#[test]
fn joint_missing_sector_country_gets_effects() {
    let p = Params::Joint(JointParams {
        beta0_i: 8.0,
        beta0_a: 5.0,
        sigma: 0.5,
        sigma0_i: 2.0,
        sigma0_a: 2.0,
        sigma1_i: 0.05,
        sigma1_a: 0.05,
        rho0: 0.5,
        rho1: 0.9,
    });
    let mut spec = SimulationSpec::balanced(p, 6, Span::new(1970, 2014).unwrap());
    spec.availability[0] = [longmix::Sector::Industrial].into();
    let sim = simulate_dataset(&spec, 9).unwrap();
    let cfg = ChainConfig {
        iterations: 4_000,
        burnin: 1_000,
        chains: 1,
        ..ChainConfig::default()
    };
    let d = run_chain(&sim.dataset, &cfg, 0).unwrap();
    let b0a = d.get("b0_A[C01]").unwrap();
    assert!(variance(b0a) > 0.0);
    assert_eq!(sim.dataset.dual_sector_countries(), vec![1, 2, 3, 4, 5]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn retained_draws_stay_in_support(seed in 0u64..10_000) {
        let p = Params::Joint(JointParams {
            beta0_i: 1.0,
            beta0_a: -1.0,
            sigma: 2.0,
            sigma0_i: 0.3,
            sigma0_a: 5.0,
            sigma1_i: 0.5,
            sigma1_a: 0.01,
            rho0: -0.95,
            rho1: 0.95,
        });
        let spec = SimulationSpec::balanced(p, 3, Span::new(2000, 2004).unwrap());
        let sim = simulate_dataset(&spec, seed).unwrap();
        let cfg = ChainConfig {
            iterations: 600,
            burnin: 100,
            thin: 1,
            chains: 1,
            seed,
            ..ChainConfig::default()
        };
        let d = run_chain(&sim.dataset, &cfg, 0).unwrap();
        for (name, col) in &d.draws {
            if name.starts_with("sigma") {
                prop_assert!(col.iter().all(|&v| v > 0.0 && v < SD_UPPER), "{}", name);
            } else if name.starts_with("rho") {
                prop_assert!(col.iter().all(|&v| v > -1.0 && v < 1.0), "{}", name);
            } else {
                prop_assert!(col.iter().all(|v| v.is_finite()), "{}", name);
            }
        }
    }

    #[test]
    fn same_seed_same_draws(seed in 0u64..10_000, chain in 0usize..8) {
        let sim = total_sim(3, seed);
        let cfg = ChainConfig {
            iterations: 300,
            burnin: 100,
            thin: 2,
            chains: 1,
            seed,
            ..ChainConfig::default()
        };
        let a = run_chain(&sim.dataset, &cfg, chain).unwrap();
        let b = run_chain_from(&sim.dataset, &cfg, chain, initial_state(&sim.dataset)).unwrap();
        prop_assert_eq!(a, b);
    }
}

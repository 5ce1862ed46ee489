//! Law-level validation of the Monte Carlo engine and cross-checks between
//! the estimator layer, the conversion formulas and simulation.

use approx::assert_abs_diff_eq;
use ctd_core::estimators::{estimate, EstimatorSettings};
use ctd_core::mc::{
    mc_discount_factor, mc_integral_moments, mc_marginal_stats, simulate_step_cov, McSettings,
};
use ctd_core::term_structure::{
    pair_correlation, rates_to_spreads, spread_mean, spread_variance, CorrelationSpec, RateParams,
    SpreadParams, TimeGrid,
};

fn table_spreads() -> Vec<SpreadParams> {
    vec![
        SpreadParams::with_constant_theta(0.0078, 0.0018, 0.000845, 0.000845).unwrap(),
        SpreadParams::with_constant_theta(0.0076, 0.0023, 0.001514, 0.001514).unwrap(),
    ]
}

fn corr(rho: f64) -> CorrelationSpec {
    CorrelationSpec::new(vec![vec![1.0, rho], vec![rho, 1.0]]).unwrap()
}

#[test]
fn marginals_match_closed_form_at_every_grid_time() {
    let spreads = table_spreads();
    let c = corr(0.3);
    // Two very different step sizes: the transition sampling is exact, so
    // both must match the closed-form moments at the same tolerance.
    for (dt, n_paths, seed) in [(0.5, 150_000usize, 42u64), (2.0, 150_000, 43)] {
        let grid = TimeGrid::new(20.0, dt).unwrap();
        let mc = McSettings {
            n_paths,
            seed,
            ..McSettings::default()
        };
        let stats = mc_marginal_stats(&spreads, &c, &grid, &mc).unwrap();
        let nf = n_paths as f64;
        for s in stats.iter().skip(1) {
            for i in 0..2 {
                let mu = spread_mean(&spreads[i], s.time).unwrap();
                let var = spread_variance(&spreads[i], s.time).unwrap();
                let se_mean = var.sqrt() / nf.sqrt();
                assert_abs_diff_eq!(s.mean[i], mu, epsilon = 4.0 * se_mean);
                let se_var = var * (2.0 / nf).sqrt();
                assert_abs_diff_eq!(s.variance[i], var, epsilon = 4.0 * se_var);
            }
            let rho_t = pair_correlation(&spreads[0], &spreads[1], 0.3, s.time).unwrap();
            let se_corr = (1.0 - rho_t * rho_t) / nf.sqrt();
            assert_abs_diff_eq!(s.correlation[1][0], rho_t, epsilon = 4.0 * se_corr);
        }
    }
}

#[test]
fn antithetic_sampling_halves_discount_variance() {
    let spreads = table_spreads();
    let c = corr(0.3);
    let grid = TimeGrid::new(20.0, 0.1).unwrap();
    let plain = mc_discount_factor(
        &spreads,
        &c,
        &grid,
        &McSettings {
            n_paths: 200_000,
            seed: 5,
            ..McSettings::default()
        },
    )
    .unwrap();
    let anti = mc_discount_factor(
        &spreads,
        &c,
        &grid,
        &McSettings {
            n_paths: 200_000,
            seed: 5,
            antithetic: true,
            ..McSettings::default()
        },
    )
    .unwrap();
    let ratio = (plain.std_error / anti.std_error).powi(2);
    assert!(
        ratio >= 2.0,
        "antithetic variance reduction only {ratio:.2}x"
    );
    // Same estimand.
    let se = plain.std_error.hypot(anti.std_error);
    assert_abs_diff_eq!(plain.value, anti.value, epsilon = 5.0 * se);
}

#[test]
fn estimators_agree_with_mc_for_single_spread() {
    let spreads = vec![table_spreads()[0].clone()];
    let c = CorrelationSpec::identity(1);
    let grid = TimeGrid::new(5.0, 0.1).unwrap();
    // A fine lattice keeps the left-sum bias of the expectation integral
    // (delta/2 per unit time) below the Monte Carlo resolution.
    let settings = EstimatorSettings {
        conv: ctd_core::ConvSettings {
            delta: 1e-6,
            ..ctd_core::ConvSettings::default()
        },
        ..EstimatorSettings::default()
    };
    let report = estimate(&spreads, &c, &grid, &settings).unwrap();
    let mc = mc_discount_factor(
        &spreads,
        &c,
        &grid,
        &McSettings {
            n_paths: 400_000,
            seed: 17,
            ..McSettings::default()
        },
    )
    .unwrap();
    let tol = 3.0 * mc.std_error + 5e-6;
    assert_abs_diff_eq!(report.cf2_mr.unwrap(), mc.value, epsilon = tol);
    assert_abs_diff_eq!(report.cf2_diffusion, mc.value, epsilon = tol);
    // First order sits below the reference (it drops the convexity term).
    assert!(report.cf1 <= mc.value + 3.0 * mc.std_error);
}

#[test]
fn deterministic_limit_closes_estimators_and_mc() {
    let spreads = vec![
        SpreadParams::with_constant_theta(0.0078, 0.0, 0.000845, 0.000845).unwrap(),
        SpreadParams::with_constant_theta(0.0076, 0.0, 0.001514, 0.001514).unwrap(),
    ];
    let c = corr(0.3);
    let grid = TimeGrid::new(10.0, 0.1).unwrap();
    let report = estimate(&spreads, &c, &grid, &EstimatorSettings::default()).unwrap();
    let mc = mc_discount_factor(
        &spreads,
        &c,
        &grid,
        &McSettings {
            n_paths: 128,
            ..McSettings::default()
        },
    )
    .unwrap();
    assert_eq!(mc.std_error, 0.0);
    assert_abs_diff_eq!(report.cf1, mc.value, epsilon = 1e-12);
    assert_abs_diff_eq!(report.cf2_diffusion, mc.value, epsilon = 1e-12);
    assert_abs_diff_eq!(report.cf2_mr.unwrap(), mc.value, epsilon = 1e-12);
}

#[test]
fn integral_moment_estimates_are_seed_stable() {
    let spreads = table_spreads();
    let c = corr(0.3);
    let grid = TimeGrid::new(5.0, 0.1).unwrap();
    let mut values = Vec::new();
    for seed in [1u64, 2, 3] {
        let (ey, _) = mc_integral_moments(
            &spreads,
            &c,
            &grid,
            &McSettings {
                n_paths: 400_000,
                seed,
                ..McSettings::default()
            },
        )
        .unwrap();
        values.push(ey);
    }
    for pair in values.windows(2) {
        let se = pair[0].std_error.hypot(pair[1].std_error);
        assert_abs_diff_eq!(pair[0].value, pair[1].value, epsilon = 4.0 * se);
    }
}

#[test]
fn sampled_maximum_expectation_matches_quadrature() {
    // Bridge between the path engine and the small-instance quadrature
    // oracle: over a two-step grid to 2t, Y = (max(0, q(0)) + max(0, q(t))) t,
    // so the engine's E[Y] exposes the sampled E[max(0, q_1(t), q_2(t))].
    let spreads = table_spreads();
    let c = corr(0.3);
    let t = 5.0;
    let grid = TimeGrid::new(2.0 * t, t).unwrap();
    let mc = McSettings {
        n_paths: 400_000,
        seed: 23,
        ..McSettings::default()
    };
    let (ey, _) = mc_integral_moments(&spreads, &c, &grid, &mc).unwrap();
    let m0 = spreads.iter().map(|p| p.q0).fold(0.0f64, f64::max);
    let sampled_max_mean = ey.value / t - m0;

    let mus: Vec<f64> = spreads.iter().map(|p| spread_mean(p, t).unwrap()).collect();
    let sigmas: Vec<f64> = spreads
        .iter()
        .map(|p| spread_variance(p, t).unwrap().sqrt())
        .collect();
    let rho_t = pair_correlation(&spreads[0], &spreads[1], 0.3, t).unwrap();
    let expected = ctd_core::mc::quad_max_moments(&mus, &sigmas, rho_t, 1).unwrap();
    let se = ey.std_error / t;
    assert_abs_diff_eq!(sampled_max_mean, expected, epsilon = 4.0 * se);
}

#[test]
fn converted_spread_model_matches_rate_difference_simulation() {
    // Simulate the three collateral rates directly (they are themselves
    // mean-reverting diffusions) and compare statistics of r_i - r_0 with
    // the converted spread model.
    let base = RateParams::new(0.0072, 0.0073, 0.000845).unwrap();
    let others = [
        RateParams::new(0.0083, 0.0073, 0.001514).unwrap(),
        RateParams::new(0.0080, 0.0074, 0.002265).unwrap(),
    ];
    let rate_corr = CorrelationSpec::new(vec![
        vec![1.0, 0.97, 0.95],
        vec![0.97, 1.0, 0.95],
        vec![0.95, 0.95, 1.0],
    ])
    .unwrap();
    let converted = rates_to_spreads(&base, &others, &rate_corr).unwrap();

    // Instantaneous correlation of the spread increments from the exact
    // one-step covariance of the rate system.
    let rates_as_processes: Vec<SpreadParams> = [base, others[0], others[1]]
        .iter()
        .map(|r| SpreadParams::with_constant_theta(r.kappa, r.xi, r.r0, r.r0).unwrap())
        .collect();
    let dt = 1e-4;
    let cov = simulate_step_cov(&rates_as_processes, &rate_corr, dt).unwrap();
    let var1 = cov[(1, 1)] + cov[(0, 0)] - 2.0 * cov[(1, 0)];
    let var2 = cov[(2, 2)] + cov[(0, 0)] - 2.0 * cov[(2, 0)];
    let cov12 = cov[(1, 2)] - cov[(1, 0)] - cov[(2, 0)] + cov[(0, 0)];
    let rho_implied = cov12 / (var1 * var2).sqrt();
    // The conversion normalizes by the averaged spread volatilities, which
    // differ from the exact increment volatilities at the few-1e-4 level
    // when the rate vols are unequal.
    assert_abs_diff_eq!(converted.corr.get(0, 1), rho_implied, epsilon = 5e-4);
    assert_abs_diff_eq!(rho_implied, 0.3847, epsilon = 1e-3);

    // Distribution of r_1 - r_0 at t = 5 against the converted model. Each
    // column of the marginal statistics is exact-in-law, so three standard
    // errors bound the model (conversion) error we tolerate here.
    let grid = TimeGrid::new(5.0, 0.5).unwrap();
    let mc = McSettings {
        n_paths: 200_000,
        seed: 97,
        ..McSettings::default()
    };
    let stats = mc_marginal_stats(&rates_as_processes, &rate_corr, &grid, &mc).unwrap();
    let last = stats.last().unwrap();
    let nf = mc.n_paths as f64;

    let mean_diff = last.mean[1] - last.mean[0];
    let var_diff = last.variance[1] + last.variance[0]
        - 2.0 * last.correlation[1][0] * (last.variance[1] * last.variance[0]).sqrt();
    let model_mean = spread_mean(&converted.spreads[0], 5.0).unwrap();
    let model_var = spread_variance(&converted.spreads[0], 5.0).unwrap();

    let se_mean = var_diff.sqrt() / nf.sqrt();
    assert_abs_diff_eq!(mean_diff, model_mean, epsilon = 3.0 * se_mean);
    let se_var = var_diff * (2.0 / nf).sqrt();
    assert_abs_diff_eq!(var_diff, model_var, epsilon = 3.0 * se_var);
}

#[test]
fn two_group_pricing_tracks_mc_under_negative_correlation() {
    // Two single-member groups with factor correlation -sqrt(|rho|) and
    // within-group gamma |c_corr| induce exactly corr(q1, q2) = rho < 0,
    // so the grouped estimator prices the same law the simulation samples.
    let spreads = table_spreads();
    let rho = -0.35f64;
    let c = CorrelationSpec::new(vec![vec![1.0, rho], vec![rho, 1.0]]).unwrap();
    let grid = TimeGrid::new(5.0, 0.1).unwrap();
    let settings = EstimatorSettings {
        conv: ctd_core::ConvSettings {
            delta: 1e-5,
            ..ctd_core::ConvSettings::default()
        },
        ..EstimatorSettings::default()
    };
    let c_corr = -rho.abs().sqrt();
    let report =
        ctd_core::estimators::estimate_two_group(&spreads, &c, &grid, 1, c_corr, &settings)
            .unwrap();
    let mc = mc_discount_factor(
        &spreads,
        &c,
        &grid,
        &McSettings {
            n_paths: 400_000,
            seed: 77,
            ..McSettings::default()
        },
    )
    .unwrap();
    // The grouped model matches the joint law exactly here, but the
    // per-time correlation of the simulated system decays slowly away from
    // rho (unequal reversion speeds); allow a small model-gap on top of the
    // Monte Carlo resolution.
    let tol = 3.0 * mc.std_error + 3e-5;
    assert_abs_diff_eq!(report.cf2_diffusion, mc.value, epsilon = tol);
    assert!(report.cf1 <= mc.value + 3.0 * mc.std_error);
}

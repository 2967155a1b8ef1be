use nalgebra::DMatrix;
use proptest::prelude::*;

use olqr_core::algorithms::{online_ce, OnlineCEParams, TexpMode};
use olqr_core::bench::{ExperimentConfig, WarmMode};
use olqr_core::estimate::{
    clip_to_ball, empirical_cov, ridge_acl, project_safe, weighted_objective,
};
use olqr_core::lyapunov::{dlyap, dlyap_direct, dlyap_series, lyapunov_residual, tol_lyap, LyapunovOptions};
use olqr_core::operator::{min_eigenvalue, op_norm, psd_dominates, psd_slack, SpectralDecomposition};
use olqr_core::riccati::{solve_dare, value_of_controller, DareOptions};
use olqr_core::rng::{normal_matrix, stream};
use olqr_core::simulate::{rollout, Policy};
use olqr_core::systems::{InstanceKind, InstanceSpec};
use olqr_core::lyapunov::check_repeated_identity;
use olqr_core::verify::{random_psd, random_stabilizing_gain, random_stable_matrix};

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(cases(64))]

    #[test]
    fn dlyap_residual_and_routes_agree(seed in any::<u64>(), d in 1usize..9, rho in 0.05f64..0.97) {
        let mut r = stream(seed, 1);
        let a = random_stable_matrix(&mut r, d, rho).unwrap();
        let lam = random_psd(&mut r, d, d + 1);
        let x = dlyap(&a, &lam).unwrap().x;
        prop_assert!(lyapunov_residual(&a, &lam, &x) <= tol_lyap(&lam));
        prop_assert!(min_eigenvalue(&x) >= -1e-10 * (1.0 + op_norm(&x)));
        let direct = dlyap_direct(&a, &lam).unwrap().x;
        let series = dlyap_series(&a, &lam, &LyapunovOptions::default()).unwrap().x;
        prop_assert!(op_norm(&(&direct - &series)) <= 1e-7 * (1.0 + op_norm(&direct)));
    }

    #[test]
    fn dlyap_is_monotone(seed in any::<u64>(), d in 1usize..9, rho in 0.05f64..0.95) {
        let mut r = stream(seed, 2);
        let a = random_stable_matrix(&mut r, d, rho).unwrap();
        let lo = random_psd(&mut r, d, 1);
        let hi = &lo + random_psd(&mut r, d, 2);
        let x_lo = dlyap(&a, &lo).unwrap().x;
        let x_hi = dlyap(&a, &hi).unwrap().x;
        prop_assert!(psd_dominates(&x_hi, &x_lo, 1e-9).unwrap());
    }

    #[test]
    fn repeated_dlyap_identity(seed in any::<u64>(), d in 1usize..8, rho in 0.05f64..0.95) {
        let mut r = stream(seed, 3);
        let a = random_stable_matrix(&mut r, d, rho).unwrap();
        let s = random_psd(&mut r, d, d);
        prop_assert!(check_repeated_identity(&a, &s).unwrap().passed());
    }

    #[test]
    fn spectral_reconstruction(seed in any::<u64>(), d in 1usize..10, cols in 1usize..12) {
        let mut r = stream(seed, 4);
        let s = random_psd(&mut r, d, cols);
        let sd = SpectralDecomposition::new(&s).unwrap();
        prop_assert!(op_norm(&(sd.reconstruct() - &s)) <= 1e-10 * (1.0 + op_norm(&s)));
        prop_assert!(sd.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        let h = sd.sqrt();
        prop_assert!(op_norm(&(&h * &h - &s)) <= 1e-9 * (1.0 + op_norm(&s)));
    }
}

fn instance(seed: u64, d: usize, d_u: usize, exp: bool) -> olqr_core::systems::SystemInstance {
    let kind = if exp { InstanceKind::Exponential } else { InstanceKind::Polynomial };
    let alpha = if exp { 1.0 } else { 2.0 };
    InstanceSpec::decay(kind, d, d_u, alpha, seed).build().unwrap()
}

proptest! {
    #![proptest_config(cases(32))]

    #[test]
    fn dare_fixed_point_and_optimality(seed in any::<u64>(), d in 2usize..9, d_u in 1usize..3, exp: bool) {
        let sys = instance(seed, d, d_u, exp);
        let sol = solve_dare(&sys.a, &sys.b, &sys.q, &sys.r, &DareOptions::default()).unwrap();
        prop_assert!(sol.residual <= 1e-9 * (1.0 + op_norm(&sol.p)));
        let k = random_stabilizing_gain(&sys, &mut stream(seed, 5)).unwrap();
        let pk = value_of_controller(&sys.a, &sys.b, &sys.q, &sys.r, &k).unwrap();
        prop_assert!(psd_slack(&pk, &sol.p).unwrap() >= -1e-9);
    }

    #[test]
    fn projection_is_feasible_and_no_worse_than_feasible_points(seed in any::<u64>(), d in 1usize..6, radius in 0.01f64..1.0) {
        let mut r = stream(seed, 6);
        let center = normal_matrix(&mut r, d, d) * 0.3;
        let target = &center + normal_matrix(&mut r, d, d);
        let w = random_psd(&mut r, d, d + 2) + DMatrix::identity(d, d) * 1e-3;
        let p = project_safe(&target, &center, radius, &w).unwrap();
        prop_assert!(op_norm(&(&p - &center)) <= radius * (1.0 + 1e-8));
        let best = weighted_objective(&p, &target, &w);
        for _ in 0..20 {
            let q = clip_to_ball(&(&center + normal_matrix(&mut r, d, d) * radius), &center, radius);
            prop_assert!(best <= weighted_objective(&q, &target, &w) * (1.0 + 1e-6) + 1e-12);
        }
    }

    #[test]
    fn isotropic_projection_is_singular_value_clipping(seed in any::<u64>(), d in 1usize..6, radius in 0.01f64..1.0) {
        let mut r = stream(seed, 7);
        let center = normal_matrix(&mut r, d, d) * 0.3;
        let target = &center + normal_matrix(&mut r, d, d);
        let p = project_safe(&target, &center, radius, &DMatrix::identity(d, d)).unwrap();
        let oracle = clip_to_ball(&target, &center, radius);
        prop_assert!(op_norm(&(&p - &oracle)) <= 1e-7);
    }

    #[test]
    fn ridge_first_order_and_error_identity(seed in any::<u64>(), d in 2usize..8, t in 20usize..300, lambda in 1e-4f64..1.0) {
        let sys = instance(seed, d, 1, false);
        let k = sys.optimal().unwrap().k.clone();
        let acl = sys.closed_loop(&k).unwrap();
        let tr = rollout(&sys, &Policy::new(k.clone(), 1.0), t, &DMatrix::zeros(d, 1).column(0).into(), seed).unwrap();
        let est = ridge_acl(&tr, lambda).unwrap();
        let x = tr.states.columns(0, t);
        let y = tr.states.columns(1, t);
        let tf = t as f64;
        let gram = x * x.transpose() / tf + DMatrix::identity(d, d) * lambda;
        let grad = &est * &gram - y * x.transpose() / tf;
        prop_assert!(op_norm(&grad) <= 1e-9 * (1.0 + op_norm(&gram)) * (1.0 + op_norm(&est)));
        let noise = &sys.b * &tr.explorations + &tr.disturbances;
        let err = (noise * x.transpose() / tf - &acl * lambda) * gram.try_inverse().unwrap();
        prop_assert!(op_norm(&(&est - &acl - err)) <= 1e-8 * (1.0 + op_norm(&acl)));
        let emp = empirical_cov(&tr);
        prop_assert!(min_eigenvalue(&emp) >= -1e-12 * (1.0 + op_norm(&emp)));
    }
}

proptest! {
    #![proptest_config(cases(16))]

    #[test]
    fn regret_is_additive_over_phases(seed in any::<u64>(), d in 2usize..6, horizon in 50usize..400, c_exp in 0.5f64..3.0) {
        let sys = instance(seed, d, 1, seed % 2 == 0);
        let params = OnlineCEParams { horizon, seed, texp_mode: TexpMode::Sqrt { c_exp }, ..OnlineCEParams::default() };
        let rep = online_ce(&sys, &sys.a, &sys.b, &params).unwrap();
        let trace = &rep.regret;
        prop_assert_eq!(trace.len(), horizon);
        let total: f64 = trace.phases.iter().map(|p| trace.phase_regret(&p.name).unwrap()).sum();
        prop_assert!((total - trace.final_regret()).abs() <= 1e-9 * (1.0 + trace.cumulative_cost[horizon - 1]));
        let direct: f64 = trace.costs.iter().sum::<f64>() - horizon as f64 * trace.j_star;
        prop_assert!((direct - trace.final_regret()).abs() <= 1e-9 * (1.0 + trace.cumulative_cost[horizon - 1]));
    }

    #[test]
    fn config_round_trips(
        d in 3usize..40,
        d_u in 1usize..3,
        alpha in 1.1f64..4.0,
        seeds in 1usize..100,
        horizons in proptest::collection::vec(2usize..100_000, 1..6),
        fraction in 0.01f64..1.0,
        plots: bool,
    ) {
        let mut cfg = ExperimentConfig {
            instance: InstanceSpec::decay(InstanceKind::Polynomial, d, d_u, alpha, d as u64),
            ..ExperimentConfig::default()
        };
        cfg.sweep.seeds = seeds;
        cfg.sweep.horizons = horizons;
        cfg.warm_mode = WarmMode::Synthetic { fraction };
        cfg.emit_plots = plots;
        let text = cfg.render().unwrap();
        prop_assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }
}

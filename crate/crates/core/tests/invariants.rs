use lqrl::dynamics::{optimal_cost, relaxed_cost_exact, simulate_episode};
use lqrl::inference::{posterior, truncate, Mat2, SufficientStats};
use lqrl::model::{CostSpec, DriftParams, LqModel, ThetaBox, TimeGrid};
use lqrl::policy::{
    exploratory_policy, gaussian_kl, proximal_update, sample_noise_path, GaussianPolicy,
    RandomisedPolicy,
};
use lqrl::riccati::{feedback_gains, greedy_action, hamiltonian, solve_riccati};
use lqrl::rng::stream_rng;
use proptest::prelude::*;

fn cost(q: f64, s_frac: f64, r: f64, m: f64, p: f64, qlin: f64) -> CostSpec {
    CostSpec {
        state_weight: q.into(),
        cross_weight: (s_frac * (q * r).sqrt()).into(),
        control_weight: r.into(),
        state_linear: p.into(),
        control_linear: qlin.into(),
        terminal_weight: m,
        terminal_linear: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn riccati_value_is_convex(
        a in -1.5f64..1.5, b in -2.0f64..2.0, q in 0.0f64..2.0, s in -0.9f64..0.9,
        r in 0.2f64..2.0, m in 0.0f64..2.0,
    ) {
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let sol = solve_riccati(DriftParams::new(a, b), &cost(q, s, r, m, 0.0, 0.0), &grid).unwrap();
        for t in grid.knots() {
            prop_assert!(sol.p.value(t) >= -1e-12);
        }
    }

    #[test]
    fn greedy_action_is_a_stationary_minimum(
        a in -1.0f64..1.0, b in -2.0f64..2.0, q in 0.2f64..2.0, s in -0.5f64..0.5,
        r in 0.3f64..2.0, p in -0.5f64..0.5, ql in -0.5f64..0.5,
        t in 0.0f64..1.0, x in -2.0f64..2.0,
    ) {
        let c = cost(q, s, r, 0.5, p, ql);
        let theta = DriftParams::new(a, b);
        let sol = solve_riccati(theta, &c, &TimeGrid::new(1.0, 100).unwrap()).unwrap();
        let y = 2.0 * (sol.p.value(t) * x + sol.eta.value(t));
        let h = |u: f64| hamiltonian(&theta, &c, t, x, u, y);
        let u = greedy_action(&sol, &c, t, x);
        let d = 1e-3;
        prop_assert!(((h(u + d) - h(u - d)) / (2.0 * d)).abs() < 1e-8);
        prop_assert!(h(u) <= h(u + d) && h(u) <= h(u - d));
    }

    #[test]
    fn proximal_update_shrinks_std_and_mixes_means(
        k0 in -1.0f64..1.0, g0 in -2.0f64..1.0, sd in 0.05f64..2.0,
        a in -1.0f64..1.0, b in 0.3f64..2.0, r in 0.3f64..2.0, rho in 0.01f64..10.0,
    ) {
        let grid = TimeGrid::new(1.0, 40).unwrap();
        let c = cost(1.0, 0.0, r, 0.5, 0.0, 0.1);
        let gains = feedback_gains(&solve_riccati(DriftParams::new(a, b), &c, &grid).unwrap(), &c);
        let prior = GaussianPolicy::new(k0.into(), g0.into(), sd.into()).unwrap();
        let (next, h) = proximal_update(&prior, &gains, rho, &c).unwrap();
        for t in grid.knots() {
            let w = h.0.value(t);
            prop_assert!((0.0..=1.0).contains(&w));
            prop_assert!(next.std.value(t) < sd);
            let (lo, hi) = (g0.min(gains.gain.value(t)), g0.max(gains.gain.value(t)));
            prop_assert!(next.gain.value(t) >= lo - 1e-12 && next.gain.value(t) <= hi + 1e-12);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_vanishes_on_the_diagonal(
        m1 in -3.0f64..3.0, s1 in 0.01f64..3.0, m2 in -3.0f64..3.0, s2 in 0.01f64..3.0,
    ) {
        prop_assert!(gaussian_kl(m1, s1, m2, s2).unwrap() >= -1e-12);
        prop_assert!(gaussian_kl(m1, s1, m1, s1).unwrap().abs() < 1e-12);
    }

    #[test]
    fn no_gaussian_policy_beats_the_optimal_cost(
        a in -1.0f64..1.0, b in 0.3f64..2.0, k in -0.5f64..0.5, g in -2.0f64..0.5,
        sd in 0.0f64..1.0, x0 in -1.0f64..1.0,
    ) {
        let model = LqModel::new(DriftParams::new(a, b), 0.5.into(), x0, 1.0,
            CostSpec::quadratic(1.0, 1.0, 0.5)).unwrap();
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let policy = GaussianPolicy::new(k.into(), g.into(), sd.into()).unwrap();
        let best = optimal_cost(&model, &grid).unwrap();
        prop_assert!(relaxed_cost_exact(&model, &policy, &grid).unwrap() >= best - 1e-9);
    }

    #[test]
    fn truncated_estimate_stays_in_box(seed in 0u64..1000, steps in 1usize..4) {
        let model = LqModel::benchmark();
        let exec = TimeGrid::new(1.0, 10).unwrap();
        let sim = exec.refine(10);
        let c = &model.cost;
        let gains = feedback_gains(&solve_riccati(DriftParams::new(0.0, 0.5), c, &exec).unwrap(), c);
        let base = exploratory_policy(&gains, 1.0, c).unwrap();
        let mut rng = stream_rng(seed, 0);
        let mut stats = SufficientStats::default();
        let mut last_trace = f64::INFINITY;
        let bx = ThetaBox::new(-0.5, 0.5, 0.8, 1.2).unwrap();
        for _ in 0..steps {
            let phi = RandomisedPolicy::new(base.clone(), sample_noise_path(&exec, &mut rng));
            let traj = simulate_episode(&model, &phi, &sim, &mut rng).unwrap();
            stats = stats.accumulate(&traj, &model.noise).unwrap();
            let post = posterior(DriftParams::new(0.0, 0.5), &Mat2::identity(), &stats).unwrap();
            prop_assert!(post.covariance.trace() <= last_trace + 1e-12);
            last_trace = post.covariance.trace();
            prop_assert!(bx.contains(&truncate(&post, &bx)));
        }
    }
}

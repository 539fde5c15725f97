use proptest::prelude::*;

use pipediff::config::{parse_config_str, Config, InitialData, ModelConfig};
use pipediff::diagnostics::{dissipation, relative_entropy, sandwich_constants};
use pipediff::steady::steady_data_stability;
use pipediff::stepper::{newton_solve, newton_solve_from};
use pipediff::*;

fn model_strategy() -> impl Strategy<Value = ConstitutiveModel> {
    (
        prop_oneof![
            (0.5f64..3.0, 1.0f64..4.0).prop_map(|(kappa, gamma)| BetaFamily::Power { kappa, gamma }),
            Just(BetaFamily::Linear),
        ],
        prop_oneof![Just(1.5), Just(2.0), 1.2f64..=2.0],
        0.2f64..1.0,
        1.0f64..3.0,
    )
        .prop_map(|(beta, p, lower, width)| {
            ConstitutiveModel::new(beta, p, Bounds::new(lower, lower + width).unwrap()).unwrap()
        })
}

fn nodal_in(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = NodalVector> {
    prop::collection::vec(lo..=hi, n).prop_map(NodalVector)
}

fn endpoint(lo: f64, hi: f64, horizon: f64) -> impl Strategy<Value = EndpointSchedule> {
    prop_oneof![
        (lo..=hi).prop_map(|value| EndpointSchedule::Constant { value }),
        (lo..=hi, lo..=hi, 0.0..horizon).prop_map(|(before, after, at)| EndpointSchedule::Step { before, after, at }),
        (lo..=hi, 0.0f64..1.0, 0.1f64..10.0).prop_map(move |(base, frac, omega)| EndpointSchedule::Sinusoid {
            base,
            amplitude: frac * (base - lo).min(hi - base),
            omega,
        }),
    ]
}

fn config_strategy() -> impl Strategy<Value = Config> {
    (model_strategy(), 1usize..40, 0.1f64..5.0, 0.1f64..10.0, any::<bool>(), 0usize..3)
        .prop_flat_map(|(model, cells, alpha, length, explicit_bounds, kind)| {
            let b = model.bounds;
            let horizon = 1.0;
            let initial = match kind {
                0 => (b.lower..=b.upper).prop_map(|value| InitialData::Constant { value }).boxed(),
                1 => prop::collection::vec(b.lower..=b.upper, cells + 1)
                    .prop_map(|values| InitialData::Nodal { values })
                    .boxed(),
                _ => (prop::collection::vec(b.lower..=b.upper, 3), 0.1f64..0.9)
                    .prop_map(move |(u, mid)| InitialData::PiecewiseLinear {
                        x: vec![0.0, mid * length, length],
                        u,
                    })
                    .boxed(),
            };
            (
                Just(model),
                Just(cells),
                Just(alpha),
                Just(length),
                Just(explicit_bounds),
                initial,
                endpoint(b.lower, b.upper, horizon),
                endpoint(b.lower, b.upper, horizon),
                prop_oneof![Just(1e-10), 1e-12f64..1e-8],
                1usize..80,
                any::<bool>(),
            )
        })
        .prop_map(
            |(model, cells, alpha, length, explicit_bounds, initial, left, right, tol, iters, floor)| {
                let mut config = Config {
                    model: ModelConfig {
                        beta: model.beta,
                        p: model.p,
                    },
                    bounds: explicit_bounds.then_some(model.bounds),
                    length,
                    cells,
                    alpha,
                    horizon: 1.0,
                    step: 0.01,
                    initial,
                    boundary: BoundarySchedule { left, right },
                    solver: SolverOptions::default(),
                    experiment: Default::default(),
                };
                config.solver.newton_tol = tol;
                config.solver.newton_max_iter = iters;
                config.solver.accept_rounding_floor = floor;
                config
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn config_round_trips_through_json(config in config_strategy()) {
        prop_assert!(config.validate().is_ok(), "{:?}", config.validate());
        let text = config.to_json();
        prop_assert_eq!(parse_config_str(&text).unwrap(), config);
    }

    #[test]
    fn lumped_norm_is_equivalent_to_exact(cells in 1usize..80, length in 0.01f64..100.0,
                                          seed in prop::collection::vec(-1e3f64..1e3, 81)) {
        let grid = Grid::new(length, cells).unwrap();
        let v = NodalVector(seed[..=cells].to_vec());
        let exact = grid.exact_l2_inner(&v, &v);
        let lumped = grid.lumped_inner(&v, &v);
        prop_assert!(exact <= lumped * (1.0 + 1e-12));
        prop_assert!(lumped <= 3.0 * exact * (1.0 + 1e-12));
    }

    #[test]
    fn relative_entropy_is_a_sandwiched_divergence(
        (model, u, v) in (model_strategy(), 2usize..41).prop_flat_map(|(model, n)| {
            let b = model.bounds;
            (Just(model), nodal_in(n, b.lower, b.upper), nodal_in(n, b.lower, b.upper))
        })
    ) {
        let grid = Grid::new(1.0, u.len() - 1).unwrap();
        let h = relative_entropy(&grid, &model, &u, &v).unwrap();
        prop_assert!(h >= 0.0);
        prop_assert_eq!(relative_entropy(&grid, &model, &u, &u).unwrap(), 0.0);
        let (c1, c2) = sandwich_constants(&model).unwrap();
        let rho = u.try_map(|x| model.beta(x)).unwrap();
        let rho_ref = v.try_map(|x| model.beta(x)).unwrap();
        let d = grid.exact_l2_norm_sq(&rho.sub(&rho_ref));
        let slack = 1e-12 * (1.0 + h);
        prop_assert!(c1 * d <= h + slack, "c1 d = {} > H = {}", c1 * d, h);
        prop_assert!(h <= c2 * d + slack, "H = {} > c2 d = {}", h, c2 * d);
    }

    #[test]
    fn dissipation_is_nonnegative(model in model_strategy(), alpha in 0.01f64..10.0,
                                  u in prop::collection::vec(-5.0f64..5.0, 2..60)) {
        let grid = Grid::new(1.0, u.len() - 1).unwrap();
        prop_assert!(dissipation(&grid, &model, alpha, &NodalVector(u)) >= 0.0);
    }

    #[test]
    fn steady_state_is_stable_in_its_data(model in model_strategy(), alpha in 0.1f64..10.0,
                                           cells in 1usize..40, length in 0.2f64..5.0,
                                           d in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0)) {
        let b = model.bounds;
        let pick = |x: f64| b.lower + (b.upper - b.lower) * x;
        let grid = Grid::new(length, cells).unwrap();
        let gaps = steady_data_stability(&model, alpha, &grid, (pick(d.0), pick(d.1)), (pick(d.2), pick(d.3))).unwrap();
        prop_assert!(gaps.boundary_bound_holds(), "{:?}", gaps);
        prop_assert!(gaps.domain_bound_holds(length), "{:?}", gaps);
    }

    #[test]
    fn analytic_steady_state_is_a_fixed_point_of_the_step(model in model_strategy(), alpha in 0.1f64..5.0,
                                                          cells in 1usize..33, d in (0.0f64..1.0, 0.0f64..1.0)) {
        let b = model.bounds;
        let (ua, ub) = (b.lower + b.width() * d.0, b.lower + b.width() * d.1);
        let grid = Grid::new(1.0, cells).unwrap();
        let steady = steady_analytic(&model, alpha, 1.0, ua, ub).unwrap().sample(&grid).nodal;
        // For tiny slopes the residual of the rounded profile sits at the
        // rounding floor of μ; the property concerns the state.
        let opts = SolverOptions { accept_rounding_floor: true, ..Default::default() };
        let sc = Scenario::new(grid, model, alpha, 0.1, 0.1, steady.clone(),
                               BoundarySchedule::constant(ua, ub), opts).unwrap();
        let step = newton_solve(&sc, &steady, 0.1, &sc.solver).unwrap();
        prop_assert!(step.state.max_abs_diff(&steady) <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn step_minimizer_is_unique(cells in 2usize..33, prev in prop::collection::vec(0.5f64..=2.0, 33),
                                guess in prop::collection::vec(0.5f64..=2.0, 33),
                                data in (0.5f64..=2.0, 0.5f64..=2.0), tau in 1e-3f64..0.5) {
        let model = ConstitutiveModel::gas(Bounds::new(0.5, 2.0).unwrap());
        let grid = Grid::new(1.0, cells).unwrap();
        let u_prev = NodalVector(prev[..=cells].to_vec());
        // uniqueness concerns the state; residuals at the rounding floor are acceptable here
        let opts = SolverOptions { accept_rounding_floor: true, ..Default::default() };
        let sc = Scenario::new(grid, model, 1.0, tau, tau, u_prev.clone(),
                               BoundarySchedule::constant(data.0, data.1), opts).unwrap();
        let a = newton_solve(&sc, &u_prev, tau, &opts).unwrap();
        let b = newton_solve_from(&sc, &u_prev, NodalVector(guess[..=cells].to_vec()), tau, &opts).unwrap();
        prop_assert!(a.state.max_abs_diff(&b.state) <= 1e-10, "gap {}", a.state.max_abs_diff(&b.state));
        prop_assert_eq!(a.m_matrix_violations + b.m_matrix_violations, 0);
    }
}

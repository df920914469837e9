use semimarkov::diffusion::*;
use semimarkov::montecarlo::RngSpec;
use semimarkov::solvers::{solve_forward_rl_sources, DiscretizationConfig};
use semimarkov::Error;

fn constant(a: f64) -> ProfileFn {
    Profile::Constant { value: a }.to_fn()
}

fn two_region() -> ProfileFn {
    Profile::Step {
        left: 0.5,
        right: 0.9,
        at: 0.0,
    }
    .to_fn()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn alpha_one_reproduces_the_heat_kernel() {
    let s = LatticeSpec::new(-5.0, 5.0, 0.05, constant(1.0)).unwrap();
    let cfg = DiscretizationConfig::with_horizon(1e-3, 0.5);
    let f = solve_vo_heat_forward(&s, 0.0, &cfg).unwrap();
    let b = solve_vo_heat_backward(&s, 0.0, &cfg).unwrap();
    let exact: Vec<f64> = f.x.iter().map(|&y| heat_kernel(1.0, 0.5, 0.0, y)).collect();
    assert!(sup_diff(f.slice(0.5).unwrap(), &exact) <= 1e-3);
    assert!(sup_diff(b.slice(0.5).unwrap(), &exact) <= 1e-3);
    assert!(f.warnings.is_empty() && b.warnings.is_empty());
}

#[test]
fn diffusivity_scales_the_kernel_width() {
    let s = LatticeSpec::new(-5.0, 5.0, 0.05, constant(1.0))
        .unwrap()
        .with_k(constant(2.0))
        .unwrap();
    let cfg = DiscretizationConfig::with_horizon(1e-3, 0.25);
    let f = solve_vo_heat_forward(&s, 0.0, &cfg).unwrap();
    let exact: Vec<f64> =
        f.x.iter()
            .map(|&y| heat_kernel(2.0, 0.25, 0.0, y))
            .collect();
    assert!(sup_diff(f.slice(0.25).unwrap(), &exact) <= 2e-3);
}

#[test]
fn reflecting_walls_conserve_mass() {
    let s = LatticeSpec::new(-1.0, 1.0, 0.1, two_region()).unwrap();
    let cfg = DiscretizationConfig::with_horizon(1e-2, 4.0);
    let f = solve_vo_heat_forward(&s, 0.5, &cfg).unwrap();
    assert!(f.max_mass_drift() <= 1e-8);
    assert!(f.mass.iter().all(|m| (m - 1.0).abs() <= 1e-10));
    assert!(f.min_value() >= -NEGATIVITY_SLACK);
}

#[test]
fn absorbing_walls_lose_mass_monotonically() {
    let s = LatticeSpec::new(-1.0, 1.0, 0.1, constant(0.8))
        .unwrap()
        .with_boundary(Boundary::Absorbing)
        .unwrap();
    let cfg = DiscretizationConfig::with_horizon(1e-2, 2.0);
    let f = solve_vo_heat_forward(&s, 0.0, &cfg).unwrap();
    assert!(f.mass.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    assert!(*f.mass.last().unwrap() < 0.9);
}

#[test]
fn constant_order_is_symmetric_about_the_source() {
    let s = LatticeSpec::new(-2.0, 2.0, 0.1, constant(0.7)).unwrap();
    let cfg = DiscretizationConfig::with_horizon(1e-2, 1.0);
    let f = solve_vo_heat_forward(&s, 0.0, &cfg).unwrap();
    assert!(f.asymmetry() <= 1e-12, "{:e}", f.asymmetry());
}

#[test]
fn lattice_solution_is_the_forward_chain_solution() {
    let s = LatticeSpec::new(-1.0, 1.0, 0.1, two_region()).unwrap();
    let cfg = DiscretizationConfig::with_horizon(1e-2, 1.0);
    let f = solve_vo_heat_forward(&s, 0.2, &cfg).unwrap();
    let m = lattice_model(&s).unwrap();
    let rows = solve_forward_rl_sources(&m, &cfg, &[s.index_of(0.2).unwrap()]).unwrap();
    for (n, row) in rows.iter().enumerate() {
        for i in 0..s.n_nodes() {
            assert!((row[(i, 0)] / s.epsilon - f.values[n][i]).abs() <= 1e-10);
        }
    }
}

#[test]
fn forward_and_backward_densities_agree() {
    let s = LatticeSpec::new(-3.0, 3.0, 0.1, constant(0.8)).unwrap();
    let cfg = DiscretizationConfig::with_horizon(1e-3, 0.5);
    let f = solve_vo_heat_forward(&s, 0.0, &cfg).unwrap();
    let b = solve_vo_heat_backward(&s, 0.0, &cfg).unwrap();
    assert!(sup_diff(f.slice(0.5).unwrap(), b.slice(0.5).unwrap()) <= 5e-3);
}

#[test]
fn mass_gathers_where_the_order_is_smallest() {
    let s = LatticeSpec::new(-2.0, 2.0, 0.1, two_region()).unwrap();
    let cfg = DiscretizationConfig::with_horizon(1e-2, 4.0);
    let f = solve_vo_heat_forward(&s, 0.0, &cfg).unwrap();
    let m = aggregation_diagnostic(&f, (-2.0, 0.0)).unwrap();
    let at = |t: f64| m[f.time_index(t).unwrap()].1;
    assert!(at(1.0) < at(2.0) && at(2.0) < at(4.0));
    assert!(at(4.0) > 0.5);

    let c = LatticeSpec::new(-2.0, 2.0, 0.1, constant(0.7)).unwrap();
    let f = solve_vo_heat_forward(&c, 0.0, &cfg).unwrap();
    for (_, v) in aggregation_diagnostic(&f, (-2.0, 0.0)).unwrap() {
        assert!((v - 0.5).abs() <= 1e-10);
    }
}

#[test]
fn density_csv_has_one_row_per_node_and_time() {
    let s = LatticeSpec::new(-1.0, 1.0, 0.25, constant(0.9)).unwrap();
    let cfg = DiscretizationConfig::with_horizon(0.1, 0.3);
    let f = solve_vo_heat_forward(&s, 0.0, &cfg).unwrap();
    let mut buf = Vec::new();
    f.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some("t,y,p"));
    assert_eq!(text.lines().count(), 1 + 4 * 9);
}

#[test]
fn invalid_inputs_are_rejected() {
    let s = LatticeSpec::new(-1.0, 1.0, 0.1, constant(0.8)).unwrap();
    let cfg = DiscretizationConfig::with_horizon(1e-2, 0.1);
    assert!(matches!(
        solve_vo_heat_forward(&s, 0.05, &cfg),
        Err(Error::Domain(_))
    ));
    let g = solve_vo_heat_forward(&s, 0.0, &cfg).unwrap();
    assert!(aggregation_diagnostic(&g, (-2.0, 0.0)).is_err());
    assert!(g.slice(0.123).is_err());

    let setup = |eps_list: Vec<f64>, reference| ScalingSetup {
        lattice: s.clone(),
        source: 0.0,
        eps_list,
        t_eval: 0.1,
        n_paths: 10,
        dt: 1e-2,
        reference,
    };
    let rng = RngSpec::new(1, 0);
    assert!(
        scaling_limit_experiment(&setup(vec![0.1, 0.2], ScalingReference::Gaussian), rng).is_err()
    );
    assert!(scaling_limit_experiment(&setup(vec![0.1], ScalingReference::Gaussian), rng).is_err());
    let coarse_ref = ScalingReference::VoHeat { epsilon: 0.1 };
    assert!(scaling_limit_experiment(&setup(vec![0.2, 0.1], coarse_ref), rng).is_err());
}

#[test]
fn scaling_report_is_deterministic() {
    let setup = ScalingSetup {
        lattice: LatticeSpec::new(-2.0, 2.0, 0.1, constant(1.0)).unwrap(),
        source: 0.0,
        eps_list: vec![0.4, 0.2],
        t_eval: 0.5,
        n_paths: 5_000,
        dt: 1e-2,
        reference: ScalingReference::Gaussian,
    };
    let a = scaling_limit_experiment(&setup, RngSpec::new(3, 0)).unwrap();
    let b = scaling_limit_experiment(&setup, RngSpec::new(3, 0)).unwrap();
    assert_eq!(a, b);
    for r in &a.rows {
        assert!(r.l1_distance <= 0.1, "{r:?}");
        assert!(r.mc_se > 0.0);
    }
}

#[test]
fn stiff_lattice_stays_nonnegative_from_a_point_source() {
    let s = LatticeSpec::new(-1.0, 1.0, 0.025, constant(0.8)).unwrap();
    let cfg = DiscretizationConfig::with_horizon(1e-3, 0.05);
    let f = solve_vo_heat_forward(&s, 0.0, &cfg).unwrap();
    assert!(f.min_value() >= -NEGATIVITY_SLACK, "{:e}", f.min_value());
    assert!(f.warnings.is_empty());
}

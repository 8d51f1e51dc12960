mod common;

use common::fixture;
use fdloc::case::{parse_case, BusId};
use fdloc::divider::{build_matrices, bus_response};
use fdloc::multi::{
    detect_sources, effective_model_error, estimate_rotor_trajectory, tls_closed_form, tls_solve,
};
use fdloc::signal::{generate_rotor, perturb_case, NoiseSpec, OscillationSpec, TimeGrid, Trajectory};
use fdloc::single::{dominance_check, localize_single, Method, DEFAULT_TIE_TOL};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bus_traj(name: &str, specs: &[OscillationSpec]) -> Trajectory {
    let case = fixture(name);
    let mats = build_matrices(&case).unwrap();
    let rotor = generate_rotor(specs, case.n_generators(), TimeGrid::default()).unwrap();
    bus_response(&mats, &rotor).unwrap()
}

#[test]
fn ieee14_gen1_is_located_at_bus1() {
    let traj = bus_traj("ieee14", &[OscillationSpec::dual_tone(1)]);
    for method in [Method::MagnitudeRms, Method::MagnitudeMax] {
        let r = localize_single(&traj, method, DEFAULT_TIE_TOL).unwrap();
        assert_eq!(r.top(), BusId(1));
        assert_eq!(r.dominant_everywhere, Some(true));
        assert!(r.relative_gap() > 0.0);
    }
    assert!(dominance_check(&traj, BusId(1), 0.0));
}

#[test]
fn two_bus_case_ties() {
    let case = parse_case(
        r#"{"name":"two","n_buses":2,"branches":[{"from":1,"to":2,"x":0.2}],
            "generators":[{"id":1,"bus":1,"xd":0.1,"xq":0.1}]}"#,
    )
    .unwrap();
    let mats = build_matrices(&case).unwrap();
    let rotor = generate_rotor(&[OscillationSpec::dual_tone(1)], 1, TimeGrid::default()).unwrap();
    let traj = bus_response(&mats, &rotor).unwrap();
    let r = localize_single(&traj, Method::MagnitudeRms, DEFAULT_TIE_TOL).unwrap();
    let mut group = r.top_group();
    group.sort();
    assert_eq!(group, vec![BusId(1), BusId(2)]);
    assert!(r.relative_gap() < 1e-12);
}

#[test]
fn every_generator_of_small_fixtures_is_located() {
    for name in ["wecc9", "ieee14"] {
        let case = fixture(name);
        for g in case.generators_by_id() {
            let traj = bus_traj(name, &[OscillationSpec::ramped_tone(g.id, 0.05)]);
            let r = localize_single(&traj, Method::MagnitudeRms, DEFAULT_TIE_TOL).unwrap();
            assert_eq!(r.top(), g.bus, "{name} gen {}", g.id);
            assert!(dominance_check(&traj, g.bus, 0.0));
        }
    }
}

proptest! {
    #[test]
    fn ranking_is_scale_invariant(c in 1e-3f64..1e3) {
        let traj = bus_traj("wecc9", &[OscillationSpec::dual_tone(2)]);
        let base = localize_single(&traj, Method::MagnitudeRms, DEFAULT_TIE_TOL).unwrap();
        let scaled = localize_single(&traj.scaled(c), Method::MagnitudeRms, DEFAULT_TIE_TOL).unwrap();
        let order = |r: &fdloc::single::LocalizationResult| r.ranking.iter().map(|b| b.bus).collect::<Vec<_>>();
        prop_assert_eq!(order(&base), order(&scaled));
    }

    #[test]
    fn tls_is_scale_covariant(seed in any::<u64>(), c in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        if let (Ok(x), Ok(xc)) = (tls_solve(&a, &b), tls_solve(&(&a * c), &(&b * c))) {
            prop_assume!(!x.nongeneric_multiplicity);
            prop_assert!((&xc.x - &x.x).amax() < 1e-8 * (1.0 + x.x.amax()));
        }
    }
}

#[test]
fn tls_matches_closed_form_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut compared = 0;
    for _ in 0..1000 {
        let rows = rng.random_range(4..12);
        let cols = rng.random_range(1..=rows - 2);
        let a = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0));
        let x0 = DVector::from_fn(cols, |_, _| rng.random_range(-1.0..1.0));
        let b = &a * x0 + DVector::from_fn(rows, |_, _| 0.2 * rng.random_range(-1.0..1.0));
        if let (Ok(s), Ok(o)) = (tls_solve(&a, &b), tls_closed_form(&a, &b)) {
            assert!((s.x - &o).amax() <= 1e-8 * o.amax().max(1.0));
            compared += 1;
        }
    }
    assert!(compared > 950, "{compared}");
}

#[test]
fn consistent_systems_are_solved_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let a = DMatrix::from_fn(7, 3, |_, _| rng.random_range(-1.0..1.0));
        let x0 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let sol = tls_solve(&a, &(&a * &x0)).unwrap();
        assert!((sol.x - x0).amax() < 1e-10);
        assert!(sol.sigma_min < 1e-12);
    }
}

#[test]
fn samples_are_estimated_independently() {
    let case = fixture("ieee14");
    let mats = build_matrices(&case).unwrap();
    let specs = [OscillationSpec::dual_tone(1), OscillationSpec::ramped_tone(5, 0.05)];
    let rotor = generate_rotor(&specs, 5, TimeGrid::new(0.0, 0.1, 40)).unwrap();
    let bus = bus_response(&mats, &rotor).unwrap();
    let full = estimate_rotor_trajectory(&mats, &bus).unwrap();
    let sub = bus_response(&mats, &rotor.clone()).unwrap();
    let mut values = sub.values().clone();
    values.column_mut(7).fill(0.3);
    let altered = Trajectory::new(sub.grid(), values, sub.labels().to_vec()).unwrap();
    let partial = estimate_rotor_trajectory(&mats, &altered).unwrap();
    for k in (0..40).filter(|&k| k != 7) {
        assert_eq!(full.trajectory.values().column(k), partial.trajectory.values().column(k));
    }
}

#[test]
fn noiseless_tls_recovers_ieee39_sources() {
    let case = fixture("ieee39");
    let mats = build_matrices(&case).unwrap();
    let specs = [OscillationSpec::dual_tone(1), OscillationSpec::ramped_tone(5, 0.05)];
    let rotor = generate_rotor(&specs, 10, TimeGrid::default()).unwrap();
    let bus = bus_response(&mats, &rotor).unwrap();
    let est = estimate_rotor_trajectory(&mats, &bus).unwrap();
    assert!((est.trajectory.values() - rotor.values()).amax() < 1e-8);
    let d = detect_sources(&est.trajectory, &est.degenerate, 0.1).unwrap();
    assert_eq!(d.detected.into_iter().collect::<Vec<_>>(), vec![1, 5]);
}

#[test]
fn model_error_grows_with_parameter_variance() {
    let case = fixture("ieee14");
    let base = build_matrices(&case).unwrap();
    let mean_norm = |variance: f64| {
        (0..100u64)
            .map(|seed| {
                let spec = NoiseSpec { meas_variance: 0.0, param_variance: variance, seed };
                let assumed = build_matrices(&perturb_case(&case, &spec).perturbed).unwrap();
                effective_model_error(&base, &assumed).unwrap().norm()
            })
            .sum::<f64>()
            / 100.0
    };
    let norms = [mean_norm(0.01), mean_norm(0.1), mean_norm(0.3)];
    assert!(norms[0] < norms[1] && norms[1] < norms[2], "{norms:?}");
    assert_eq!(mean_norm(0.0), 0.0);
}

use std::f64::consts::PI;

use bangbang::model::LOGISTIC_POPULATION;
use bangbang::twoscale::{arc_mask, corrector_fields};
use bangbang::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constructed_perturbations_annihilate_low_modes(
        start in 0.0f64..(2.0 * PI),
        length in 3.5f64..5.5,
        cutoff in 1usize..10,
        seed in any::<u64>(),
    ) {
        let grid = TorusGrid::new(128).unwrap();
        let omega = arc_mask(&grid, start, start + length);
        let spec = build_high_mode_perturbation(&grid, &omega, cutoff, seed).unwrap();
        let h = spec.field();
        prop_assert!(h.values().iter().zip(&omega).all(|(&v, &inside)| inside || v == 0.0));
        let s = grid.forward(h);
        for k in 0..cutoff as i64 {
            prop_assert!(s.coefficient(k).norm() <= 1e-8);
        }
        prop_assert!((spec.coefficient_norm_sq() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn derivative_identity_and_w_inequality(
        modes in prop::collection::vec((6usize..30, -1.0f64..1.0, -1.0f64..1.0), 1..4),
    ) {
        let model = builtin_model(LOGISTIC_POPULATION, &ModelParams::default()).unwrap();
        let disc = Discretization::new(96, 1.0, 60).unwrap();
        let control = Control::uniform(&disc.space, PI).unwrap();
        let u = solve_semilinear(&model, &control, &disc).unwrap();
        let cutoff = modes.iter().map(|m| m.0).min().unwrap();
        let spec = PerturbationSpectrum::from_modes(&disc.space, cutoff, &modes).unwrap();
        let expansion = corrector_fields(&disc.space, &u, &spec).unwrap();
        prop_assert!(expansion.derivative_identity_defect(&disc.space) <= 1e-8);
        prop_assert!(expansion.w_poincare_ratio(&disc.space) <= 1.0 + 1e-12);
    }
}

/// The remainder bound is `O(k⁻³)`; on smooth states the measured decay is
/// faster (about `k⁻⁶`), so `k³·E` must not grow with `k`.
#[test]
fn residual_energy_decays_at_least_like_k_cubed() {
    let model = builtin_model(LOGISTIC_POPULATION, &ModelParams::default()).unwrap();
    let disc = Discretization::new(128, 1.0, 4096).unwrap();
    let problem = ControlProblem::new(&model, &disc);
    let control = Control::uniform(&disc.space, PI).unwrap();
    let specs: Vec<PerturbationSpectrum> = [8, 16, 32]
        .iter()
        .map(|&k| PerturbationSpectrum::single_mode(&disc.space, k).unwrap())
        .collect();
    let report =
        twoscale::residual_study(&problem, &control, &specs, 0.1, Execution::default()).unwrap();
    let scaled: Vec<f64> = report
        .rows
        .iter()
        .map(|r| r.residual_energy * (r.cutoff as f64).powi(3))
        .collect();
    assert!(scaled.windows(2).all(|w| w[1] <= w[0]), "k³E = {scaled:?}");
    for r in &report.rows {
        assert!(r.residual_energy <= r.envelope, "{r:?}");
    }
}

#[test]
fn tail_spectrum_residual_decreases_when_the_cutoff_doubles() {
    let model = builtin_model(LOGISTIC_POPULATION, &ModelParams::default()).unwrap();
    let disc = Discretization::new(256, 1.0, 4096).unwrap();
    let problem = ControlProblem::new(&model, &disc);
    let control = Control::uniform(&disc.space, PI).unwrap();
    let tail = [
        (0usize, 1.0, 0.0),
        (1, 0.5, 0.2),
        (2, 0.25, -0.1),
        (3, 0.125, 0.0),
    ];
    let specs: Vec<PerturbationSpectrum> = [4usize, 8, 16]
        .iter()
        .map(|&k| {
            let modes: Vec<_> = tail.iter().map(|&(o, a, b)| (k + o, a, b)).collect();
            PerturbationSpectrum::from_modes(&disc.space, k, &modes).unwrap()
        })
        .collect();
    let report =
        twoscale::residual_study(&problem, &control, &specs, 0.1, Execution::default()).unwrap();
    let energies: Vec<f64> = report.rows.iter().map(|r| r.residual_energy).collect();
    assert!(energies.windows(2).all(|w| w[1] < w[0]), "{energies:?}");
}

#[test]
fn sequential_and_parallel_studies_agree_bitwise() {
    let model = builtin_model(LOGISTIC_POPULATION, &ModelParams::default()).unwrap();
    let disc = Discretization::new(64, 1.0, 1024).unwrap();
    let problem = ControlProblem::new(&model, &disc);
    let control = Control::uniform(&disc.space, PI).unwrap();
    let specs: Vec<PerturbationSpectrum> = [4, 8, 16]
        .iter()
        .map(|&k| PerturbationSpectrum::single_mode(&disc.space, k).unwrap())
        .collect();
    let a =
        twoscale::residual_study(&problem, &control, &specs, 0.1, Execution::Sequential).unwrap();
    let b =
        twoscale::residual_study(&problem, &control, &specs, 0.1, Execution::default()).unwrap();
    assert_eq!(a, b);
}

use std::f64::consts::PI;

use bangbang::adjoint::{DEFAULT_MARGIN_FRACTION, FD_STEP_FIRST};
use bangbang::experiment::{random_direction, random_nonnegative_direction};
use bangbang::model::{catalog_names, LOGISTIC_POPULATION, PURE_HEAT};
use bangbang::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn admissible(grid: &TorusGrid, seed: u64) -> Control {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = random_direction(grid, &mut rng, 4).map(|v| 0.5 + 0.3 * v);
    project_admissible(grid, &raw, PI).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn adjoint_gradient_matches_central_differences(seed in any::<u64>()) {
        let model = builtin_model(LOGISTIC_POPULATION, &ModelParams::default()).unwrap();
        let disc = Discretization::new(64, 1.0, 1000).unwrap();
        let problem = ControlProblem::new(&model, &disc);
        let m = admissible(&disc.space, seed);
        let bundle = problem.bundle(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
        for _ in 0..10 {
            let h = random_direction(&disc.space, &mut rng, 8);
            let d = problem.gateaux_first(&bundle, &h).unwrap();
            let fd = problem.fd_first(m.field(), &h, FD_STEP_FIRST).unwrap();
            prop_assert!((d.adjoint - fd).abs() <= 1e-5 * (1.0 + d.adjoint.abs()), "adjoint {} fd {}", d.adjoint, fd);
        }
    }

    #[test]
    fn second_derivative_forms_agree(seed in any::<u64>(), heat in any::<bool>()) {
        let name = if heat { PURE_HEAT } else { LOGISTIC_POPULATION };
        let model = builtin_model(name, &ModelParams::default()).unwrap();
        let disc = Discretization::new(64, 1.0, 1000).unwrap();
        let problem = ControlProblem::new(&model, &disc);
        let m = admissible(&disc.space, seed);
        let bundle = problem.bundle(&m).unwrap();
        let h = random_direction(&disc.space, &mut ChaCha8Rng::seed_from_u64(seed.rotate_left(7)), 8);
        let d = problem.gateaux_second(&bundle, m.field(), &h).unwrap();
        let mb = d.via_mb.total();
        prop_assert!((mb - d.via_pre).abs() <= 1e-4 * mb.abs().max(d.via_pre.abs()), "mb {} pre {}", mb, d.via_pre);
    }

    #[test]
    fn adjoint_is_positive_before_the_margin_and_psi_is_consistent(seed in any::<u64>()) {
        let disc = Discretization::new(64, 1.0, 400).unwrap();
        let margin = DEFAULT_MARGIN_FRACTION * disc.time.horizon();
        for name in catalog_names() {
            let model = builtin_model(name, &ModelParams::default()).unwrap();
            prop_assert!(model.check_hypotheses(&disc.space).is_ok());
            let problem = ControlProblem::new(&model, &disc);
            let bundle = problem.bundle(&admissible(&disc.space, seed)).unwrap();
            prop_assert!(bundle.min_adjoint_before(margin) > 0.0);
            if model.interaction.is_bilinear() {
                let defect = bundle.psi.zip_map(&bundle.u, |_, psi, u| psi.mul(u)).max_abs_diff(&bundle.p);
                prop_assert!(defect <= 1e-10, "{}: ψu - p = {}", name, defect);
            }
        }
    }

    #[test]
    fn objective_is_monotone_for_bilinear_catalog_models(seed in any::<u64>()) {
        let disc = Discretization::new(64, 1.0, 400).unwrap();
        for name in [LOGISTIC_POPULATION, PURE_HEAT] {
            let model = builtin_model(name, &ModelParams::default()).unwrap();
            let problem = ControlProblem::new(&model, &disc);
            let bundle = problem.bundle(&admissible(&disc.space, seed)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..5 {
                let h = random_nonnegative_direction(&disc.space, &mut rng, 8);
                prop_assert!(problem.gateaux_first(&bundle, &h).unwrap().adjoint >= -1e-8);
            }
        }
    }
}

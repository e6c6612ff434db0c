use bangbang::model::{LOGISTIC_POPULATION, PURE_HEAT};
use bangbang::*;
use proptest::prelude::*;

fn random_control(grid: &TorusGrid, volume: f64, seed: u64) -> Control {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let raw = Field::new((0..grid.len()).map(|_| rng.gen_range(-1.0..2.0)).collect());
    project_admissible(grid, &raw, volume).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn logistic_state_stays_positive_and_below_the_saturation_bound(
        mean in 0.2f64..2.5,
        ratio in 0.0f64..0.9,
        mode in 1u32..6,
        volume in 0.5f64..6.0,
        seed in any::<u64>(),
    ) {
        let params = ModelParams { horizon: 1.0, u0_mean: mean, u0_amplitude: ratio * mean, u0_mode: mode };
        let model = builtin_model(LOGISTIC_POPULATION, &params).unwrap();
        prop_assert!(model.check_hypotheses(&TorusGrid::new(64).unwrap()).is_ok());
        let disc = Discretization::new(64, 1.0, 400).unwrap();
        let u = solve_semilinear(&model, &random_control(&disc.space, volume, seed), &disc).unwrap();
        let bound = model.state_bound(&disc.space);
        prop_assert!(u.min() > 0.0);
        prop_assert!(u.max() <= bound + 1e-6, "max {} bound {}", u.max(), bound);
    }

    #[test]
    fn pure_heat_state_is_nonnegative(volume in 0.5f64..6.0, seed in any::<u64>()) {
        let model = builtin_model(PURE_HEAT, &ModelParams::default()).unwrap();
        let disc = Discretization::new(64, 1.0, 200).unwrap();
        let u = solve_semilinear(&model, &random_control(&disc.space, volume, seed), &disc).unwrap();
        prop_assert!(u.min() >= -1e-8);
        prop_assert!(u.max() <= model.state_bound(&disc.space) + 1e-6);
    }
}

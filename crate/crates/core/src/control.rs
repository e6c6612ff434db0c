//! Admissible controls `0 ≤ m ≤ 1`, `∫m = V0`, the projection onto that set
//! and the objective functional.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::solver::{Discretization, SpaceTimeField};
use crate::torus::{Field, TorusGrid};

const BOX_SLACK: f64 = 1e-10;
const MASS_SLACK: f64 = 1e-9;

/// A control in the admissible set, together with its volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    m: Field,
    volume: f64,
}

impl Control {
    /// Validates `m` against the box and mass constraints.
    pub fn new(grid: &TorusGrid, m: Field, volume: f64) -> Result<Self> {
        check_volume(volume)?;
        if m.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "control has {} values on a grid of {} points",
                m.len(),
                grid.len()
            )));
        }
        if !m.is_finite() || m.min() < -BOX_SLACK || m.max() > 1.0 + BOX_SLACK {
            return Err(Error::InadmissibleControl(format!(
                "control leaves [0, 1]: range [{}, {}]",
                m.min(),
                m.max()
            )));
        }
        let mass = grid.integral(&m);
        if (mass - volume).abs() > MASS_SLACK {
            return Err(Error::InadmissibleControl(format!(
                "control mass {mass} differs from volume {volume}"
            )));
        }
        Ok(Self { m, volume })
    }

    /// `m ≡ V0/2π`.
    pub fn uniform(grid: &TorusGrid, volume: f64) -> Result<Self> {
        check_volume(volume)?;
        Self::new(grid, grid.constant(volume / (2.0 * PI)), volume)
    }

    pub fn field(&self) -> &Field {
        &self.m
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn into_field(self) -> Field {
        self.m
    }
}

fn check_volume(volume: f64) -> Result<()> {
    if volume > 0.0 && volume < 2.0 * PI {
        Ok(())
    } else {
        Err(Error::InfeasibleVolume { volume })
    }
}

fn clipped_mass(grid: &TorusGrid, raw: &Field, shift: f64) -> f64 {
    grid.spacing()
        * raw
            .values()
            .iter()
            .map(|&r| (r + shift).clamp(0.0, 1.0))
            .sum::<f64>()
}

/// L² projection onto `{0 ≤ m ≤ 1, ∫m = V0}`: `clip(raw + c, 0, 1)` with the
/// shift `c` found by bisection on the (monotone) clipped mass.
pub fn project_admissible(grid: &TorusGrid, raw: &Field, volume: f64) -> Result<Control> {
    check_volume(volume)?;
    if !raw.is_finite() {
        return Err(Error::InadmissibleControl(
            "cannot project a non-finite field".into(),
        ));
    }
    let mut lo = -raw.max();
    let mut hi = 1.0 - raw.min();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clipped_mass(grid, raw, mid) < volume {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 {
            break;
        }
    }
    let mut shift = 0.5 * (lo + hi);
    // The mass is affine in the shift while the set of unclipped nodes is
    // fixed; one Newton step removes the bisection residue.
    let free = raw
        .values()
        .iter()
        .filter(|&&r| {
            let v = r + shift;
            v > 0.0 && v < 1.0
        })
        .count();
    if free > 0 {
        let candidate =
            shift + (volume - clipped_mass(grid, raw, shift)) / (free as f64 * grid.spacing());
        if (candidate - shift).abs() <= hi - lo + 1e-15 {
            shift = candidate;
        }
    }
    let m = raw.map(|r| (r + shift).clamp(0.0, 1.0));
    Control::new(grid, m, volume)
}

/// `𝒥 = ∬ j1(t, x, u) + ∫ j2(x, u(T))`, trapezoid in time.
pub fn evaluate_objective(model: &ModelSpec, u: &SpaceTimeField, disc: &Discretization) -> f64 {
    let grid = &disc.space;
    let xs: Vec<f64> = grid.nodes().collect();
    let time = *u.time();
    let running = time.trapezoid(|j| {
        let t = time.time(j);
        grid.spacing()
            * u.snapshot(j)
                .values()
                .iter()
                .zip(&xs)
                .map(|(&v, &x)| (model.running.value)(t, x, v))
                .sum::<f64>()
    });
    let terminal = grid.spacing()
        * u.last()
            .values()
            .iter()
            .zip(&xs)
            .map(|(&v, &x)| (model.terminal.value)(x, v))
            .sum::<f64>();
    running + terminal
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        builtin_model, ModelParams, RunningObjective, TerminalObjective, PURE_HEAT,
    };
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> TorusGrid {
        TorusGrid::new(64).unwrap()
    }

    #[test]
    fn admissible_raw_is_unchanged() {
        let g = grid();
        let c = project_admissible(&g, &g.constant(0.5), PI).unwrap();
        assert!(c.field().values().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn uniform_excess_is_shifted_down() {
        let g = grid();
        let c = project_admissible(&g, &g.constant(0.8), PI).unwrap();
        assert!(c.field().values().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn clipped_projection_matches_a_dense_shift_scan() {
        let g = grid();
        let raw = g.sample(|x| 2.0 * x.cos() + 0.5);
        let c = project_admissible(&g, &raw, PI).unwrap();
        assert!((g.integral(c.field()) - PI).abs() < 1e-10);
        assert_eq!(c.field().min(), 0.0);
        assert_eq!(c.field().max(), 1.0);

        // golden-section search over the shift for the mass mismatch
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let err = |s: f64| (clipped_mass(&g, &raw, s) - PI).abs();
        let (mut a, mut b) = (-3.0, 3.0);
        for _ in 0..200 {
            let c1 = b - phi * (b - a);
            let c2 = a + phi * (b - a);
            if err(c1) < err(c2) {
                b = c2;
            } else {
                a = c1;
            }
        }
        let oracle = raw.map(|r| (r + 0.5 * (a + b)).clamp(0.0, 1.0));
        assert!(oracle.sub(c.field()).sup_norm() < 1e-8);
    }

    #[test]
    fn volume_outside_the_open_interval_is_infeasible() {
        let g = grid();
        for v in [0.0, -1.0, 2.0 * PI, 7.0] {
            assert!(matches!(
                project_admissible(&g, &g.zeros(), v),
                Err(Error::InfeasibleVolume { .. })
            ));
        }
    }

    #[test]
    fn control_rejects_out_of_box_values() {
        let g = grid();
        assert!(Control::new(&g, g.constant(1.2), 1.2 * 2.0 * PI - 1e-3).is_err());
        assert!(Control::new(&g, g.constant(0.5), 1.0).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(seed in any::<u64>(), volume in 0.1f64..6.0) {
            let g = grid();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = Field::new((0..g.len()).map(|_| rng.gen_range(-2.0..3.0)).collect());
            let once = project_admissible(&g, &raw, volume).unwrap();
            let twice = project_admissible(&g, once.field(), volume).unwrap();
            prop_assert!(once.field().sub(twice.field()).sup_norm() <= 1e-12);
            prop_assert!((g.integral(once.field()) - volume).abs() <= 1e-10);
        }

        #[test]
        fn projection_is_nearest_among_admissible_points(seed in any::<u64>()) {
            let g = grid();
            let volume = 2.5;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = Field::new((0..g.len()).map(|_| rng.gen_range(-1.0..2.0)).collect());
            let proj = project_admissible(&g, &raw, volume).unwrap();
            let best = g.l2_norm_sq(&proj.field().sub(&raw));
            for _ in 0..100 {
                let q = Field::new((0..g.len()).map(|_| rng.gen::<f64>()).collect());
                let q = project_admissible(&g, &q, volume).unwrap();
                prop_assert!(best <= g.l2_norm_sq(&q.field().sub(&raw)) + 1e-12);
            }
        }
    }

    fn unit_disc() -> Discretization {
        Discretization::new(32, 1.0, 10).unwrap()
    }

    #[test]
    fn objective_of_unit_state_is_four_pi() {
        let disc = unit_disc();
        let mut model = builtin_model(PURE_HEAT, &ModelParams::default()).unwrap();
        model.running = RunningObjective::identity();
        let u = SpaceTimeField::constant_in_time(disc.time, disc.space.constant(1.0));
        assert!((evaluate_objective(&model, &u, &disc) - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn terminal_square_objective() {
        let disc = unit_disc();
        let mut model = builtin_model(PURE_HEAT, &ModelParams::default()).unwrap();
        model.terminal = TerminalObjective::square();
        let u = SpaceTimeField::constant_in_time(disc.time, disc.space.sample(f64::cos));
        assert!((evaluate_objective(&model, &u, &disc) - PI).abs() < 1e-12);
    }

    #[test]
    fn tracking_objective_vanishes_on_target() {
        let disc = unit_disc();
        let mut model = builtin_model(PURE_HEAT, &ModelParams::default()).unwrap();
        model.terminal = TerminalObjective::tracking(|x| 2.0 + x.sin());
        let u = SpaceTimeField::constant_in_time(disc.time, disc.space.sample(|x| 2.0 + x.sin()));
        assert_eq!(evaluate_objective(&model, &u, &disc), 0.0);
    }
}

//! Projected-gradient ascent over the admissible set and bang-bang
//! diagnostics of the result.

use serde::{Deserialize, Serialize};

use crate::adjoint::ControlProblem;
use crate::control::{evaluate_objective, project_admissible, Control};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::torus::{Field, TorusGrid};

/// Objective decrease tolerated when accepting a step.
const ACCEPT_SLACK: f64 = 1e-12;
const MAX_HALVINGS: usize = 30;
/// Largest step reached by doubling after accepted steps.
const MAX_STEP: f64 = 1e8;
/// Half-width of the tie band around the switching level.
pub const TIE_BAND: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum StepRule {
    Fixed {
        step: f64,
    },
    /// Start at `initial`, halve on failure (at most 30 times), double after
    /// each accepted step.
    Backtracking {
        initial: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub step: StepRule,
    /// Stop once `‖m_{k+1} - m_k‖_{L²}` falls below this.
    pub tolerance: f64,
    pub bang_bang_threshold: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            step: StepRule::Backtracking { initial: 10.0 },
            tolerance: 1e-10,
            bang_bang_threshold: 0.01,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let step_ok = match self.step {
            StepRule::Fixed { step } | StepRule::Backtracking { initial: step } => {
                step > 0.0 && step.is_finite()
            }
        };
        if self.max_iters == 0 {
            return Err(Error::config("optimizer.max_iters", "must be positive"));
        }
        if !step_ok {
            return Err(Error::config(
                "optimizer.step",
                "step size must be positive and finite",
            ));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config("optimizer.tolerance", "must be positive"));
        }
        if !(self.bang_bang_threshold > 0.0 && self.bang_bang_threshold < 0.5) {
            return Err(Error::config(
                "optimizer.bang_bang_threshold",
                "must lie in (0, 0.5)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub bang_bang_measure: f64,
    /// Step size that produced this iterate (0 for the initial point).
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub control: Control,
    pub converged: bool,
}

impl RunTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.objective)
    }

    /// Whether no recorded objective drops by more than the acceptance slack.
    pub fn is_monotone(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].objective >= w[0].objective - ACCEPT_SLACK)
    }
}

/// `m ← P_𝓜(m + τ g)` until the update is below tolerance.
pub fn optimize(
    problem: &ControlProblem<'_>,
    init: &Control,
    cfg: &OptimizerConfig,
) -> Result<RunTrace> {
    cfg.validate()?;
    let grid = &problem.disc.space;
    let volume = init.volume();
    let delta = cfg.bang_bang_threshold;
    let mut control = init.clone();
    let mut bundle = problem.bundle(&control)?;
    let mut objective = evaluate_objective(problem.model, &bundle.u, problem.disc);
    let mut records = vec![IterationRecord {
        iteration: 0,
        objective,
        bang_bang_measure: bang_bang_measure(grid, control.field(), delta),
        step: 0.0,
    }];
    let mut tau = match cfg.step {
        StepRule::Fixed { step } => step,
        StepRule::Backtracking { initial } => initial,
    };
    let mut converged = false;

    for iteration in 1..=cfg.max_iters {
        let g = &bundle.gradient_density;
        let (candidate, step) = match cfg.step {
            StepRule::Fixed { step } => (
                project_admissible(grid, &control.field().axpy(step, g), volume)?,
                step,
            ),
            StepRule::Backtracking { .. } => {
                let mut accepted = None;
                for _ in 0..=MAX_HALVINGS {
                    let cand = project_admissible(grid, &control.field().axpy(tau, g), volume)?;
                    if distance(grid, &cand, &control) < cfg.tolerance {
                        accepted = Some((cand, tau));
                        break;
                    }
                    if problem.objective(&cand)? >= objective - ACCEPT_SLACK {
                        accepted = Some((cand, tau));
                        break;
                    }
                    tau *= 0.5;
                }
                accepted.ok_or(Error::StalledLineSearch {
                    iteration,
                    halvings: MAX_HALVINGS,
                })?
            }
        };
        let moved = distance(grid, &candidate, &control);
        if moved < cfg.tolerance {
            records.push(IterationRecord {
                iteration,
                objective,
                bang_bang_measure: bang_bang_measure(grid, control.field(), delta),
                step,
            });
            converged = true;
            break;
        }
        control = candidate;
        bundle = problem.bundle(&control)?;
        objective = evaluate_objective(problem.model, &bundle.u, problem.disc);
        records.push(IterationRecord {
            iteration,
            objective,
            bang_bang_measure: bang_bang_measure(grid, control.field(), delta),
            step,
        });
        if let StepRule::Backtracking { .. } = cfg.step {
            tau = (2.0 * tau).min(MAX_STEP);
        }
    }
    log::debug!(
        "projected gradient: {} iterations, converged = {converged}, 𝒥 = {objective}",
        records.len() - 1
    );
    Ok(RunTrace {
        records,
        control,
        converged,
    })
}

/// Independent runs from several starting controls.
pub fn optimize_multistart(
    problem: &ControlProblem<'_>,
    inits: &[Control],
    cfg: &OptimizerConfig,
    exec: Execution,
) -> Result<Vec<RunTrace>> {
    exec.try_map(inits, |init| optimize(problem, init, cfg))
}

fn distance(grid: &TorusGrid, a: &Control, b: &Control) -> f64 {
    grid.l2_norm_sq(&a.field().sub(b.field())).sqrt()
}

/// `spacing · #{j : δ < m(x_j) < 1 - δ}`.
pub fn bang_bang_measure(grid: &TorusGrid, m: &Field, delta: f64) -> f64 {
    grid.spacing()
        * m.values()
            .iter()
            .filter(|&&v| v > delta && v < 1.0 - delta)
            .count() as f64
}

/// Switching level `c*` whose superlevel set of `g` has measure `V0`.
pub fn switching_level(grid: &TorusGrid, g: &Field, volume: f64) -> f64 {
    let mut sorted = g.values().to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let full = volume / grid.spacing();
    let whole = full.floor() as usize;
    let n = sorted.len();
    if whole == 0 {
        return sorted[0];
    }
    if whole >= n {
        return sorted[n - 1];
    }
    if (full - whole as f64).abs() < 1e-9 {
        0.5 * (sorted[whole - 1] + sorted[whole])
    } else {
        sorted[whole]
    }
}

/// `‖m - m̂‖_{L¹}` off the tie band, where `m̂` is the bathtub control of `g`.
pub fn switching_residual(grid: &TorusGrid, m: &Field, g: &Field, volume: f64, band: f64) -> f64 {
    let level = switching_level(grid, g, volume);
    grid.spacing()
        * m.values()
            .iter()
            .zip(g.values())
            .filter(|&(_, &gv)| (gv - level).abs() > band)
            .map(|(&mv, &gv)| {
                let target = if gv > level { 1.0 } else { 0.0 };
                (mv - target).abs()
            })
            .sum::<f64>()
}

/// First-order optimality defect of `control` for the problem.
pub fn pontryagin_residual(problem: &ControlProblem<'_>, control: &Control) -> Result<f64> {
    let bundle = problem.bundle(control)?;
    Ok(switching_residual(
        &problem.disc.space,
        control.field(),
        &bundle.gradient_density,
        control.volume(),
        TIE_BAND,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, ModelParams, PURE_HEAT};
    use crate::solver::Discretization;
    use std::f64::consts::PI;

    #[test]
    fn bang_bang_measure_examples() {
        let grid = TorusGrid::new(64).unwrap();
        let arc = grid.sample(|x| if x < PI { 1.0 } else { 0.0 });
        assert_eq!(bang_bang_measure(&grid, &arc, 0.01), 0.0);
        let half = grid.constant(0.5);
        assert!((bang_bang_measure(&grid, &half, 0.01) - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn bathtub_aligned_control_has_zero_residual() {
        let grid = TorusGrid::new(64).unwrap();
        let g = grid.sample(f64::cos);
        let m = g.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let volume = grid.integral(&m);
        assert_eq!(switching_residual(&grid, &m, &g, volume, TIE_BAND), 0.0);
        let uniform = grid.constant(volume / (2.0 * PI));
        assert!(switching_residual(&grid, &uniform, &g, volume, TIE_BAND) > 1.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = OptimizerConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.bang_bang_threshold = 0.5;
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
        cfg = OptimizerConfig {
            step: StepRule::Fixed { step: 0.0 },
            ..OptimizerConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stationary_start_returns_after_one_iteration() {
        // uniform state and control make the gradient density constant
        let params = ModelParams {
            u0_amplitude: 0.0,
            ..ModelParams::default()
        };
        let model = builtin_model(PURE_HEAT, &params).unwrap();
        let disc = Discretization::new(32, 1.0, 100).unwrap();
        let problem = ControlProblem::new(&model, &disc);
        let init = Control::uniform(&disc.space, 2.0).unwrap();
        let trace = optimize(&problem, &init, &OptimizerConfig::default()).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.records.len(), 2);
        assert!(trace.control.field().sub(init.field()).sup_norm() < 1e-12);
    }

    #[test]
    fn pure_heat_reaches_the_bathtub_of_its_gradient() {
        let model = builtin_model(PURE_HEAT, &ModelParams::default()).unwrap();
        let disc = Discretization::new(64, 1.0, 200).unwrap();
        let problem = ControlProblem::new(&model, &disc);
        let init = Control::uniform(&disc.space, PI).unwrap();
        let trace = optimize(&problem, &init, &OptimizerConfig::default()).unwrap();
        assert!(trace.converged);
        assert!(trace.is_monotone());
        let bundle = problem.bundle(&trace.control).unwrap();
        assert!(bundle.gradient_density.min() > 0.0);
        let r = switching_residual(
            &disc.space,
            trace.control.field(),
            &bundle.gradient_density,
            PI,
            TIE_BAND,
        );
        assert!(r < 1e-6, "residual {r}");
        // the superlevel set of the gradient density carries the mass
        let level = switching_level(&disc.space, &bundle.gradient_density, PI);
        for (&m, &g) in trace
            .control
            .field()
            .values()
            .iter()
            .zip(bundle.gradient_density.values())
        {
            if g > level + 1e-6 {
                assert!(m > 1.0 - 1e-9);
            } else if g < level - 1e-6 {
                assert!(m < 1e-9);
            }
        }
    }

    #[test]
    fn switching_level_splits_the_mass() {
        let grid = TorusGrid::new(16).unwrap();
        let g = grid.sample(|x| -(x - 3.0).abs());
        let level = switching_level(&grid, &g, 4.0 * grid.spacing());
        assert_eq!(g.values().iter().filter(|&&v| v > level).count(), 4);
    }
}

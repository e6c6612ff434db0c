//! Bilinear optimal control of reaction-diffusion equations on the torus.
//!
//! The crate solves `∂t u = ∂xx u + m·u + f(t, x, u)` (or `m·φ(u) + f`) with
//! a Fourier pseudospectral method, computes first and second derivatives of
//! `𝒥(m) = ∬ j1(u) + ∫ j2(u(T))` through the adjoint state, maximises `𝒥`
//! over `{0 ≤ m ≤ 1, ∫m = V0}` by projected gradient, and checks the
//! high-frequency expansion of the linearised state numerically.
//!
//! Batch workloads (directions, wavenumbers, resolutions) are mapped with
//! rayon when the `parallel` feature is on; see [`par`].

pub mod adjoint;
pub mod control;
pub mod error;
pub mod experiment;
pub mod model;
pub mod optimizer;
pub mod par;
pub mod solver;
pub mod torus;
pub mod twoscale;

pub use adjoint::{
    AdjointBundle, CoercivityReport, ControlProblem, FirstDerivative, SecondDerivative,
    SecondOrderDecomposition,
};
pub use control::{evaluate_objective, project_admissible, Control};
pub use error::{Error, Result};
pub use experiment::{run, ExperimentConfig, ExperimentKind, RunOptions, RunOutcome};
pub use model::{builtin_model, builtin_models, Interaction, ModelParams, ModelSpec};
pub use optimizer::{bang_bang_measure, optimize, OptimizerConfig, RunTrace, StepRule};
pub use par::Execution;
pub use solver::{
    solve_linear, solve_semilinear, Direction, Discretization, LinearSourceSpec, SpaceTimeField,
    TimeGrid,
};
pub use torus::{Field, SpectrumField, TorusGrid};
pub use twoscale::{
    build_high_mode_perturbation, CorrectorExpansion, PerturbationSpectrum, ScalingReport,
};

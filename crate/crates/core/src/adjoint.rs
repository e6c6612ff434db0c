//! Adjoint state, first and second Gateaux derivatives of the objective, and
//! the weighted-gradient rearrangement of the second derivative.
//!
//! The control enters every equation through its 2/3-truncation `m̃ = P m`
//! and perturbations likewise through `h̃ = P h`. With this convention the
//! gradient density `g = P ∫ φ(u) p dt` pairs with `h` exactly as the
//! linearised state does, up to time-discretisation error.
//!
//! For the second derivative, with `Ψ = p·φ'(u)/φ(u)` (`= p/u` when the
//! control acts bilinearly),
//!
//! ```text
//! 𝒥̈[h,h] = ∫u̇(T)² ∂uu j2 + ∫Ψ(T) u̇(T)² + 2∬Ψ|∂x u̇|² + ∬𝒵 u̇²
//! 𝒵      = -(∂tΨ + ∂xxΨ) - 2ΨV + ∂uu j1 + (m̃ φ'' + ∂uu f) p
//! ```
//!
//! where `∂tΨ + ∂xxΨ` is expanded with the state and adjoint equations so
//! that no time derivative and no third space derivative is taken.

use crate::control::{evaluate_objective, Control};
use crate::error::Result;
use crate::model::ModelSpec;
use crate::solver::{
    effective_control, solve_linear, solve_semilinear_with, Direction, Discretization,
    LinearSourceSpec, SpaceTimeField,
};
use crate::torus::Field;

/// Default margin `ε` before the horizon, as a fraction of `T`.
pub const DEFAULT_MARGIN_FRACTION: f64 = 0.1;
/// Default weight `δ` in the lower bound of [`coercivity_terms`].
pub const DEFAULT_DELTA: f64 = 0.5;
/// Finite-difference steps for first and second derivative checks.
pub const FD_STEP_FIRST: f64 = 1e-4;
pub const FD_STEP_SECOND: f64 = 1e-3;

/// State, adjoint and derived fields at one control.
#[derive(Debug, Clone)]
pub struct AdjointBundle {
    /// Effective control `P m`.
    pub control: Field,
    pub u: SpaceTimeField,
    pub p: SpaceTimeField,
    /// `V = m̃ φ'(u) + ∂u f(u)`
    pub potential: SpaceTimeField,
    /// `Ψ = p φ'(u)/φ(u)`
    pub psi: SpaceTimeField,
    /// `g = P ∫_0^T φ(u) p dt`
    pub gradient_density: Field,
}

impl AdjointBundle {
    /// `min p` over `[0, T - margin]`.
    pub fn min_adjoint_before(&self, margin: f64) -> f64 {
        self.p.min_to(self.p.time().window_end(margin))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstDerivative {
    /// `∬ ∂u j1 u̇ + ∫ ∂u j2 u̇(T)`
    pub direct: f64,
    /// `∫ h g`
    pub adjoint: f64,
}

/// Terms of the rearranged second derivative.
#[derive(Debug, Clone)]
pub struct SecondOrderDecomposition {
    /// `2∬Ψ|∂x u̇|²`
    pub term_grad: f64,
    /// `∫u̇(T)² ∂uu j2`
    pub term_terminal_j2: f64,
    /// `∫Ψ(T) u̇(T)²`
    pub term_terminal_psi: f64,
    /// `∬𝒵 u̇²`
    pub term_z: f64,
    pub z: SpaceTimeField,
    /// First-order part of `∂xxΨ`: `2 r'(u) ∂x p ∂x u + p r''(u) (∂x u)²`.
    pub x: SpaceTimeField,
    /// `-2ΨV + ∂uu j1 + (m̃ φ'' + ∂uu f) p`
    pub y: SpaceTimeField,
    pub u_dot: SpaceTimeField,
    pub psi: SpaceTimeField,
    /// `∂uu j2` at `u(T)`.
    pub terminal_curvature: Field,
}

impl SecondOrderDecomposition {
    pub fn total(&self) -> f64 {
        self.term_grad + self.term_terminal_j2 + self.term_terminal_psi + self.term_z
    }
}

#[derive(Debug, Clone)]
pub struct SecondDerivative {
    pub via_mb: SecondOrderDecomposition,
    pub via_pre: f64,
    pub via_fd: f64,
}

/// A model at a fixed discretisation.
#[derive(Debug, Clone, Copy)]
pub struct ControlProblem<'a> {
    pub model: &'a ModelSpec,
    pub disc: &'a Discretization,
}

impl<'a> ControlProblem<'a> {
    pub fn new(model: &'a ModelSpec, disc: &'a Discretization) -> Self {
        Self { model, disc }
    }

    /// State for an arbitrary (not necessarily admissible) control field.
    pub fn state_of(&self, m: &Field) -> Result<SpaceTimeField> {
        let grid = &self.disc.space;
        let m = effective_control(grid, m);
        solve_semilinear_with(self.model, &m, &self.model.initial_field(grid), self.disc)
    }

    pub fn objective_of(&self, m: &Field) -> Result<f64> {
        let u = self.state_of(m)?;
        Ok(evaluate_objective(self.model, &u, self.disc))
    }

    pub fn objective(&self, control: &Control) -> Result<f64> {
        self.objective_of(control.field())
    }

    pub fn bundle(&self, control: &Control) -> Result<AdjointBundle> {
        self.bundle_of(control.field())
    }

    pub fn bundle_of(&self, m: &Field) -> Result<AdjointBundle> {
        let u = self.state_of(m)?;
        self.solve_adjoint(m, u)
    }

    /// Backward solve of `∂t p + ∂xx p + Vp = -∂u j1`, `p(T) = ∂u j2(u(T))`.
    pub fn solve_adjoint(&self, m: &Field, u: SpaceTimeField) -> Result<AdjointBundle> {
        let grid = &self.disc.space;
        let model = self.model;
        let time = *u.time();
        let control = effective_control(grid, m);
        let xs: Vec<f64> = grid.nodes().collect();

        let potential = u.map(|j, uj| {
            let t = time.time(j);
            Field::new(
                uj.values()
                    .iter()
                    .zip(control.values())
                    .zip(&xs)
                    .map(|((&u, &m), &x)| {
                        m * model.interaction.dphi(u) + (model.reaction.du)(t, x, u)
                    })
                    .collect(),
            )
        });
        let source = u.map(|j, uj| {
            let t = time.time(j);
            Field::new(
                uj.values()
                    .iter()
                    .zip(&xs)
                    .map(|(&u, &x)| (model.running.du)(t, x, u))
                    .collect(),
            )
        });
        let terminal = Field::new(
            u.last()
                .values()
                .iter()
                .zip(&xs)
                .map(|(&u, &x)| (model.terminal.du)(x, u))
                .collect(),
        );
        let p = solve_linear(
            &LinearSourceSpec {
                potential: potential.clone(),
                source,
                initial: terminal,
                direction: Direction::Backward,
            },
            grid,
        )?;
        let psi = u.zip_map(&p, |_, uj, pj| {
            uj.zip_map(pj, |u, p| p * model.interaction.log_derivative(u).0)
        });
        let weighted = u.zip_map(&p, |_, uj, pj| {
            uj.zip_map(pj, |u, p| model.interaction.phi(u) * p)
        });
        let gradient_density = grid.dealias(&weighted.time_integral());
        Ok(AdjointBundle {
            control,
            u,
            p,
            potential,
            psi,
            gradient_density,
        })
    }

    /// `u̇` solving `∂t u̇ - ∂xx u̇ - V u̇ = h̃ φ(u)`, `u̇(0) = 0`.
    pub fn linearized(&self, bundle: &AdjointBundle, h: &Field) -> Result<SpaceTimeField> {
        let grid = &self.disc.space;
        let h = grid.dealias(h);
        let model = self.model;
        let source = bundle
            .u
            .map(|_, uj| uj.zip_map(&h, |u, h| h * model.interaction.phi(u)));
        solve_linear(
            &LinearSourceSpec {
                potential: bundle.potential.clone(),
                source,
                initial: grid.zeros(),
                direction: Direction::Forward,
            },
            grid,
        )
    }

    pub fn gateaux_first(&self, bundle: &AdjointBundle, h: &Field) -> Result<FirstDerivative> {
        let grid = &self.disc.space;
        let u_dot = self.linearized(bundle, h)?;
        let direct = self.pair_with_objective_slope(bundle, &u_dot);
        let adjoint = grid.inner(h, &bundle.gradient_density);
        Ok(FirstDerivative { direct, adjoint })
    }

    /// `∬ ∂u j1 θ + ∫ ∂u j2 θ(T)`.
    fn pair_with_objective_slope(&self, bundle: &AdjointBundle, theta: &SpaceTimeField) -> f64 {
        let grid = &self.disc.space;
        let model = self.model;
        let time = *theta.time();
        let xs: Vec<f64> = grid.nodes().collect();
        let running = time.trapezoid(|j| {
            let t = time.time(j);
            grid.spacing()
                * bundle
                    .u
                    .snapshot(j)
                    .values()
                    .iter()
                    .zip(theta.snapshot(j).values())
                    .zip(&xs)
                    .map(|((&u, &th), &x)| (model.running.du)(t, x, u) * th)
                    .sum::<f64>()
        });
        let terminal = grid.spacing()
            * bundle
                .u
                .last()
                .values()
                .iter()
                .zip(theta.last().values())
                .zip(&xs)
                .map(|((&u, &th), &x)| (model.terminal.du)(x, u) * th)
                .sum::<f64>();
        running + terminal
    }

    /// Central difference of `𝒥` along `h/‖h‖` with step `eps`, rescaled to `h`.
    pub fn fd_first(&self, m: &Field, h: &Field, eps: f64) -> Result<f64> {
        let norm = self.disc.space.l2_norm_sq(h).sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let step = eps / norm;
        let plus = self.objective_of(&m.axpy(step, h))?;
        let minus = self.objective_of(&m.axpy(-step, h))?;
        Ok((plus - minus) / (2.0 * step))
    }

    /// Second central difference of `𝒥` along `h/‖h‖`, rescaled to `h`.
    pub fn fd_second(&self, m: &Field, h: &Field, eps: f64) -> Result<f64> {
        let norm = self.disc.space.l2_norm_sq(h).sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let step = eps / norm;
        let plus = self.objective_of(&m.axpy(step, h))?;
        let centre = self.objective_of(m)?;
        let minus = self.objective_of(&m.axpy(-step, h))?;
        Ok((plus - 2.0 * centre + minus) / (step * step))
    }

    pub fn gateaux_second(
        &self,
        bundle: &AdjointBundle,
        m: &Field,
        h: &Field,
    ) -> Result<SecondDerivative> {
        let u_dot = self.linearized(bundle, h)?;
        let via_pre = self.second_pre(bundle, h, &u_dot);
        let via_mb = self.decompose(bundle, u_dot);
        let via_fd = self.fd_second(m, h, FD_STEP_SECOND)?;
        Ok(SecondDerivative {
            via_mb,
            via_pre,
            via_fd,
        })
    }

    /// `2∬ h̃ φ'(u) u̇ p + ∫u̇(T)² ∂uu j2 + ∬ u̇² (∂uu j1 + (m̃φ'' + ∂uu f) p)`.
    pub fn second_pre(&self, bundle: &AdjointBundle, h: &Field, u_dot: &SpaceTimeField) -> f64 {
        let grid = &self.disc.space;
        let model = self.model;
        let h = grid.dealias(h);
        let time = *u_dot.time();
        let xs: Vec<f64> = grid.nodes().collect();
        let bulk = time.trapezoid(|j| {
            let t = time.time(j);
            let (u, p, ud) = (
                bundle.u.snapshot(j),
                bundle.p.snapshot(j),
                u_dot.snapshot(j),
            );
            grid.spacing()
                * (0..grid.len())
                    .map(|i| {
                        let (u, p, ud, x) = (u.values()[i], p.values()[i], ud.values()[i], xs[i]);
                        let curvature = (model.running.duu)(t, x, u)
                            + (bundle.control.values()[i] * model.interaction.d2phi(u)
                                + (model.reaction.duu)(t, x, u))
                                * p;
                        2.0 * h.values()[i] * model.interaction.dphi(u) * ud * p
                            + ud * ud * curvature
                    })
                    .sum::<f64>()
        });
        let terminal = grid.spacing()
            * bundle
                .u
                .last()
                .values()
                .iter()
                .zip(u_dot.last().values())
                .zip(&xs)
                .map(|((&u, &ud), &x)| ud * ud * (model.terminal.duu)(x, u))
                .sum::<f64>();
        bulk + terminal
    }

    /// Weighted-gradient form of the second derivative for a given `u̇`.
    pub fn decompose(
        &self,
        bundle: &AdjointBundle,
        u_dot: SpaceTimeField,
    ) -> SecondOrderDecomposition {
        let grid = &self.disc.space;
        let model = self.model;
        let time = *u_dot.time();
        let xs: Vec<f64> = grid.nodes().collect();
        let n = grid.len();

        let mut zs = Vec::with_capacity(time.n_nodes());
        let mut xs_field = Vec::with_capacity(time.n_nodes());
        let mut ys = Vec::with_capacity(time.n_nodes());
        for j in 0..time.n_nodes() {
            let t = time.time(j);
            let u = bundle.u.snapshot(j);
            let p = bundle.p.snapshot(j);
            let v = bundle.potential.snapshot(j);
            let psi = bundle.psi.snapshot(j);
            let ux = grid.derivative(u, 1);
            let uxx = grid.derivative(u, 2);
            let px = grid.derivative(p, 1);
            // ∂t u + ∂xx u = 2∂xx u + P(m̃φ(u) + f)
            let reaction = grid.dealias(&Field::new(
                (0..n)
                    .map(|i| {
                        let (uu, x) = (u.values()[i], xs[i]);
                        bundle.control.values()[i] * model.interaction.phi(uu)
                            + (model.reaction.value)(t, x, uu)
                    })
                    .collect(),
            ));
            // ∂t p + ∂xx p = -P(Vp + ∂u j1)
            let adjoint_rhs = grid.dealias(&Field::new(
                (0..n)
                    .map(|i| {
                        let (uu, x) = (u.values()[i], xs[i]);
                        v.values()[i] * p.values()[i] + (model.running.du)(t, x, uu)
                    })
                    .collect(),
            ));
            let mut z = vec![0.0; n];
            let mut xf = vec![0.0; n];
            let mut y = vec![0.0; n];
            for i in 0..n {
                let (uu, pp, x) = (u.values()[i], p.values()[i], xs[i]);
                let (r, r1, r2) = model.interaction.log_derivative(uu);
                let (dux, dpx) = (ux.values()[i], px.values()[i]);
                let cross = 2.0 * r1 * dpx * dux + pp * r2 * dux * dux;
                let heat_of_psi = cross - r * adjoint_rhs.values()[i]
                    + pp * r1 * (2.0 * uxx.values()[i] + reaction.values()[i]);
                let yy = -2.0 * psi.values()[i] * v.values()[i]
                    + (model.running.duu)(t, x, uu)
                    + (bundle.control.values()[i] * model.interaction.d2phi(uu)
                        + (model.reaction.duu)(t, x, uu))
                        * pp;
                xf[i] = cross;
                y[i] = yy;
                z[i] = -heat_of_psi + yy;
            }
            zs.push(Field::new(z));
            xs_field.push(Field::new(xf));
            ys.push(Field::new(y));
        }
        let z = SpaceTimeField::new(time, zs);
        let x = SpaceTimeField::new(time, xs_field);
        let y = SpaceTimeField::new(time, ys);

        let term_grad = 2.0
            * time.trapezoid(|j| {
                let dx = grid.derivative(u_dot.snapshot(j), 1);
                grid.inner(bundle.psi.snapshot(j), &dx.mul(&dx))
            });
        let term_z = time.trapezoid(|j| {
            let ud = u_dot.snapshot(j);
            grid.inner(z.snapshot(j), &ud.mul(ud))
        });
        let terminal_sq = u_dot.last().mul(u_dot.last());
        let terminal_curvature = Field::new(
            bundle
                .u
                .last()
                .values()
                .iter()
                .zip(&xs)
                .map(|(&u, &x)| (model.terminal.duu)(x, u))
                .collect(),
        );
        let term_terminal_j2 = grid.inner(&terminal_curvature, &terminal_sq);
        let term_terminal_psi = grid.inner(bundle.psi.last(), &terminal_sq);
        SecondOrderDecomposition {
            term_grad,
            term_terminal_j2,
            term_terminal_psi,
            term_z,
            z,
            x,
            y,
            u_dot,
            psi: bundle.psi.clone(),
            terminal_curvature,
        }
    }
}

/// Measured ingredients of the coercivity estimate for `𝒥̈`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CoercivityReport {
    pub margin: f64,
    pub delta: f64,
    /// `inf Ψ` over `(0, T - ε] × 𝕋`
    pub alpha_hat: f64,
    /// `sup max(0, -𝒵)`
    pub beta_hat: f64,
    /// `sup max(0, -∂uu j2(u(T)))`
    pub gamma_hat: f64,
    /// `∬_{(0, T-ε)} |∂x u̇|²`
    pub grad_inner: f64,
    /// `∬_{(T-ε, T)} |∂x u̇|²`
    pub grad_outer: f64,
    /// `∬ u̇²`
    pub l2: f64,
    /// `∫ u̇(T)²`
    pub terminal_l2: f64,
    pub second_derivative: f64,
    pub lower_bound: f64,
    /// `𝒥̈ - lower_bound`
    pub slack: f64,
    /// `slack / (∬u̇² + ∫u̇(T)²)`, zero when `u̇ ≡ 0`.
    pub normalized_slack: f64,
}

/// Evaluates
/// `𝒥̈ ≥ α̂(1-δ)∬_{in}|∂x u̇|² - α̂δ∬_{out}|∂x u̇|² - β̂(1+1/δ)∬u̇² - γ̂∫u̇(T)²`
/// with all constants measured on the discrete fields.
pub fn coercivity_terms(
    decomp: &SecondOrderDecomposition,
    grid: &crate::torus::TorusGrid,
    margin: f64,
    delta: f64,
) -> CoercivityReport {
    let time = *decomp.u_dot.time();
    let end = time.window_end(margin);
    let alpha_hat = (1..=end.max(1))
        .map(|j| decomp.psi.snapshot(j).min())
        .fold(f64::INFINITY, f64::min);
    let beta_hat = decomp
        .z
        .snapshots()
        .iter()
        .map(|z| (-z.min()).max(0.0))
        .fold(0.0, f64::max);
    let gamma_hat = (-decomp.terminal_curvature.min()).max(0.0);
    let grad = |j: usize| grid.h1_seminorm_sq(decomp.u_dot.snapshot(j));
    let grad_inner = time.trapezoid_between(0, end, grad);
    let grad_outer = time.trapezoid_between(end, time.n_steps(), grad);
    let l2 = decomp.u_dot.l2_sq(grid);
    let terminal_l2 = grid.l2_norm_sq(decomp.u_dot.last());
    let second_derivative = decomp.total();
    let lower_bound = alpha_hat * (1.0 - delta) * grad_inner
        - alpha_hat * delta * grad_outer
        - beta_hat * (1.0 + 1.0 / delta) * l2
        - gamma_hat * terminal_l2;
    let slack = second_derivative - lower_bound;
    let scale = l2 + terminal_l2;
    let normalized_slack = if scale > 0.0 { slack / scale } else { 0.0 };
    CoercivityReport {
        margin,
        delta,
        alpha_hat,
        beta_hat,
        gamma_hat,
        grad_inner,
        grad_outer,
        l2,
        terminal_l2,
        second_derivative,
        lower_bound,
        slack,
        normalized_slack,
    }
}

//! Time integration on a uniform grid: the semilinear state equation and
//! linear equations with a potential, forward or backward in time.
//!
//! Every solve uses the same two-stage exponential step. With `z = -k²dt`,
//! `E = e^z`, `φ1 = (E - 1)/z`, `φ2 = (E - 1 - z)/z²` applied mode-wise and
//! `N(j, v)` the dealiased reaction term evaluated at time node `j`,
//!
//! ```text
//! a       = E v_n + dt φ1 N(n, v_n)
//! v_{n+1} = a + dt φ2 (N(n+1, a) - N(n, v_n))
//! ```
//!
//! Diffusion is integrated exactly and a reaction term constant in time is
//! integrated exactly, so the `e^{-k²t}` layers of high-mode forcing carry
//! no step-size bias. The scheme is second order in `dt`.

use crate::control::Control;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::torus::{Field, SpectrumField, TorusGrid};

/// Uniform time grid `t_j = j·T/N`, `j = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidGrid("n_steps must be positive".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        if j == self.n_steps {
            self.horizon
        } else {
            j as f64 * self.dt()
        }
    }

    pub fn times(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.n_steps + 1).map(move |j| self.time(j))
    }

    /// Index of the last node inside `[0, T - margin]`.
    pub fn window_end(&self, margin: f64) -> usize {
        let end = ((self.horizon - margin) / self.dt() + 1e-9).floor();
        (end.max(0.0) as usize).min(self.n_steps)
    }

    /// Trapezoid rule over nodes `0..=end` of the values `g(j)`.
    pub fn trapezoid_to(&self, end: usize, mut g: impl FnMut(usize) -> f64) -> f64 {
        self.trapezoid_between(0, end, &mut g)
    }

    pub fn trapezoid_between(
        &self,
        start: usize,
        end: usize,
        mut g: impl FnMut(usize) -> f64,
    ) -> f64 {
        assert!(start <= end && end <= self.n_steps);
        if start == end {
            return 0.0;
        }
        let inner: f64 = (start + 1..end).map(&mut g).sum();
        self.dt() * (inner + 0.5 * (g(start) + g(end)))
    }

    pub fn trapezoid(&self, g: impl FnMut(usize) -> f64) -> f64 {
        self.trapezoid_to(self.n_steps, g)
    }

    /// Smallest grid whose step is at most `max_dt`.
    pub fn with_max_step(horizon: f64, max_dt: f64) -> Result<Self> {
        let n = (horizon / max_dt - 1e-9).ceil().max(1.0) as usize;
        Self::new(horizon, n)
    }
}

/// Space and time resolution of a problem.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub space: TorusGrid,
    pub time: TimeGrid,
}

impl Discretization {
    pub fn new(n_points: usize, horizon: f64, n_steps: usize) -> Result<Self> {
        Ok(Self {
            space: TorusGrid::new(n_points)?,
            time: TimeGrid::new(horizon, n_steps)?,
        })
    }
}

/// One [`Field`] per node of a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    time: TimeGrid,
    snapshots: Vec<Field>,
}

impl SpaceTimeField {
    pub fn new(time: TimeGrid, snapshots: Vec<Field>) -> Self {
        assert_eq!(
            snapshots.len(),
            time.n_nodes(),
            "one snapshot per time node"
        );
        Self { time, snapshots }
    }

    /// The same field at every node.
    pub fn constant_in_time(time: TimeGrid, field: Field) -> Self {
        Self::new(time, vec![field; time.n_nodes()])
    }

    pub fn from_fn(time: TimeGrid, f: impl FnMut(usize) -> Field) -> Self {
        Self::new(time, (0..time.n_nodes()).map(f).collect())
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn snapshot(&self, j: usize) -> &Field {
        &self.snapshots[j]
    }

    pub fn snapshots(&self) -> &[Field] {
        &self.snapshots
    }

    pub fn into_snapshots(self) -> Vec<Field> {
        self.snapshots
    }

    pub fn first(&self) -> &Field {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &Field {
        self.snapshots.last().expect("at least two nodes")
    }

    pub fn is_finite(&self) -> bool {
        self.snapshots.iter().all(Field::is_finite)
    }

    pub fn min(&self) -> f64 {
        self.snapshots
            .iter()
            .map(Field::min)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.snapshots
            .iter()
            .map(Field::max)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Minimum over nodes `0..=end`.
    pub fn min_to(&self, end: usize) -> f64 {
        self.snapshots[..=end]
            .iter()
            .map(Field::min)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl FnMut(usize, &Field) -> Field) -> Self {
        let mut f = f;
        Self::new(
            self.time,
            self.snapshots
                .iter()
                .enumerate()
                .map(|(j, s)| f(j, s))
                .collect(),
        )
    }

    pub fn zip_map(&self, other: &Self, mut f: impl FnMut(usize, &Field, &Field) -> Field) -> Self {
        assert_eq!(self.time, other.time);
        Self::new(
            self.time,
            self.snapshots
                .iter()
                .zip(&other.snapshots)
                .enumerate()
                .map(|(j, (a, b))| f(j, a, b))
                .collect(),
        )
    }

    pub fn reversed(&self) -> Self {
        let mut snapshots = self.snapshots.clone();
        snapshots.reverse();
        Self::new(self.time, snapshots)
    }

    /// `∬ g(t, x)` with the trapezoid rule in time and rectangles in space.
    pub fn space_time_integral(&self, grid: &TorusGrid) -> f64 {
        self.time.trapezoid(|j| grid.integral(&self.snapshots[j]))
    }

    /// `∬ θ²`.
    pub fn l2_sq(&self, grid: &TorusGrid) -> f64 {
        self.time.trapezoid(|j| grid.l2_norm_sq(&self.snapshots[j]))
    }

    /// `∬ |∂x θ|²` over `[0, t_end]`.
    pub fn h1_seminorm_sq_to(&self, grid: &TorusGrid, end: usize) -> f64 {
        self.time
            .trapezoid_to(end, |j| grid.h1_seminorm_sq(&self.snapshots[j]))
    }

    pub fn h1_seminorm_sq(&self, grid: &TorusGrid) -> f64 {
        self.h1_seminorm_sq_to(grid, self.time.n_steps())
    }

    /// Trapezoid-in-time integral of the field itself, `∫_0^T θ(t, ·) dt`.
    pub fn time_integral(&self) -> Field {
        let n = self.snapshots[0].len();
        let mut acc = vec![0.0; n];
        let dt = self.time.dt();
        let last = self.time.n_steps();
        for (j, s) in self.snapshots.iter().enumerate() {
            let w = if j == 0 || j == last { 0.5 * dt } else { dt };
            for (a, v) in acc.iter_mut().zip(s.values()) {
                *a += w * v;
            }
        }
        Field::new(acc)
    }

    /// Largest sup-norm distance between matching snapshots.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.snapshots
            .iter()
            .zip(&other.snapshots)
            .map(|(a, b)| a.sub(b).sup_norm())
            .fold(0.0, f64::max)
    }
}

/// Forward or backward in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    /// The initial datum is imposed at `T`; `potential` and `source` stay
    /// indexed by physical time.
    Backward,
}

/// Data for `∂t θ - ∂xx θ - Vθ = S` with `θ` given at one end of the interval.
#[derive(Debug, Clone)]
pub struct LinearSourceSpec {
    pub potential: SpaceTimeField,
    pub source: SpaceTimeField,
    pub initial: Field,
    pub direction: Direction,
}

struct Stepper<'g> {
    grid: &'g TorusGrid,
    time: TimeGrid,
    decay: Vec<f64>,
    phi1: Vec<f64>,
    phi2: Vec<f64>,
}

/// `(e^z, (e^z - 1)/z, (e^z - 1 - z)/z²)` without cancellation near `z = 0`.
fn exponential_weights(z: f64) -> (f64, f64, f64) {
    if z.abs() < 1e-3 {
        let phi1 = 1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0 + z * z * z * z / 120.0;
        let phi2 = 0.5 + z / 6.0 + z * z / 24.0 + z * z * z / 120.0 + z * z * z * z / 720.0;
        (z.exp(), phi1, phi2)
    } else {
        let em1 = z.exp_m1();
        (z.exp(), em1 / z, (em1 - z) / (z * z))
    }
}

impl<'g> Stepper<'g> {
    fn new(grid: &'g TorusGrid, time: TimeGrid) -> Self {
        let dt = time.dt();
        let n = grid.len();
        let (mut decay, mut phi1, mut phi2) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for i in 0..n {
            let k = grid.wavenumber(i) as f64;
            let (e, p1, p2) = exponential_weights(-k * k * dt);
            decay.push(e);
            phi1.push(p1 * dt);
            phi2.push(p2 * dt);
        }
        Self {
            grid,
            time,
            decay,
            phi1,
            phi2,
        }
    }

    fn reaction_spectrum(&self, values: Field) -> SpectrumField {
        let mut s = self.grid.forward(&values);
        self.grid.truncate_spectrum(&mut s);
        s
    }

    fn integrate(
        &self,
        initial: Field,
        mut reaction: impl FnMut(usize, &Field) -> Field,
    ) -> Result<SpaceTimeField> {
        let mut snapshots = Vec::with_capacity(self.time.n_nodes());
        let mut current = initial;
        for n in 0..self.time.n_steps() {
            let u_hat = self.grid.forward(&current);
            let n1 = self.reaction_spectrum(reaction(n, &current));

            let mut stage_hat = SpectrumField::zeros(self.grid.len());
            for ((((s, &u), &r), &e), &p1) in stage_hat
                .coefficients_mut()
                .iter_mut()
                .zip(u_hat.coefficients())
                .zip(n1.coefficients())
                .zip(&self.decay)
                .zip(&self.phi1)
            {
                *s = u * e + r * p1;
            }
            let stage = self.grid.inverse(&stage_hat);
            let n2 = self.reaction_spectrum(reaction(n + 1, &stage));

            for (((s, &r1), &r2), &p2) in stage_hat
                .coefficients_mut()
                .iter_mut()
                .zip(n1.coefficients())
                .zip(n2.coefficients())
                .zip(&self.phi2)
            {
                *s += (r2 - r1) * p2;
            }
            let next = self.grid.inverse(&stage_hat);
            if !next.is_finite() {
                return Err(Error::NonFiniteState {
                    step: n + 1,
                    time: self.time.time(n + 1),
                });
            }
            snapshots.push(std::mem::replace(&mut current, next));
        }
        snapshots.push(current);
        Ok(SpaceTimeField::new(self.time, snapshots))
    }
}

/// Effective control entering the equations: the 2/3-truncation of `m`.
pub fn effective_control(grid: &TorusGrid, m: &Field) -> Field {
    grid.dealias(m)
}

/// State equation `∂t u = ∂xx u + m̃·φ(u) + f(t, x, u)` from `u(0) = u0`.
pub fn solve_semilinear(
    model: &ModelSpec,
    control: &Control,
    disc: &Discretization,
) -> Result<SpaceTimeField> {
    let grid = &disc.space;
    let m = effective_control(grid, control.field());
    solve_semilinear_with(model, &m, &model.initial_field(grid), disc)
}

/// State solve with an explicit (already effective) control and initial datum.
pub fn solve_semilinear_with(
    model: &ModelSpec,
    m: &Field,
    initial: &Field,
    disc: &Discretization,
) -> Result<SpaceTimeField> {
    let grid = &disc.space;
    let time = disc.time;
    let xs: Vec<f64> = grid.nodes().collect();
    let stepper = Stepper::new(grid, time);
    let u = stepper.integrate(initial.clone(), |j, u| {
        let t = time.time(j);
        let f = &model.reaction.value;
        Field::new(
            u.values()
                .iter()
                .zip(m.values())
                .zip(&xs)
                .map(|((&u, &m), &x)| m * model.interaction.phi(u) + f(t, x, u))
                .collect(),
        )
    })?;
    let min = u.min();
    if min < -1e-10 {
        log::warn!(
            "model `{}`: state reached min u = {min:.3e} < 0; the discrete maximum principle is violated",
            model.name
        );
    }
    Ok(u)
}

/// `∂t θ - ∂xx θ - Vθ = S`; backward problems are solved for `q(t) = θ(T - t)`.
pub fn solve_linear(spec: &LinearSourceSpec, grid: &TorusGrid) -> Result<SpaceTimeField> {
    let time = *spec.potential.time();
    assert_eq!(
        time,
        *spec.source.time(),
        "potential and source share a time grid"
    );
    let stepper = Stepper::new(grid, time);
    let last = time.n_steps();
    let index = |j: usize| match spec.direction {
        Direction::Forward => j,
        Direction::Backward => last - j,
    };
    let solution = stepper.integrate(spec.initial.clone(), |j, theta| {
        let jj = index(j);
        let v = spec.potential.snapshot(jj);
        let s = spec.source.snapshot(jj);
        Field::new(
            theta
                .values()
                .iter()
                .zip(v.values())
                .zip(s.values())
                .map(|((&th, &v), &s)| v * th + s)
                .collect(),
        )
    })?;
    Ok(match spec.direction {
        Direction::Forward => solution,
        Direction::Backward => solution.reversed(),
    })
}

/// Source `S = ∂x f_src + q·g` for [`energy_estimate_check`].
#[derive(Debug, Clone)]
pub struct EnergySources {
    pub f_src: SpaceTimeField,
    pub q: SpaceTimeField,
    pub g: SpaceTimeField,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    /// `∬|∂x θ|² + ∬θ² + ∫θ(T)²`
    pub lhs: f64,
    /// `∬(f_src² + g²)`
    pub rhs_data: f64,
}

impl EnergyReport {
    pub fn ratio(&self) -> f64 {
        if self.rhs_data == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs_data
        }
    }
}

/// Solves the potential equation with zero initial datum and source
/// `∂x f_src + q·g`, then compares the energy of the solution to the data.
pub fn energy_estimate_check(
    potential: &SpaceTimeField,
    sources: &EnergySources,
    grid: &TorusGrid,
) -> Result<EnergyReport> {
    let source = sources.f_src.zip_map(&sources.q, |j, f, q| {
        grid.derivative(f, 1).add(&q.mul(sources.g.snapshot(j)))
    });
    let spec = LinearSourceSpec {
        potential: potential.clone(),
        source,
        initial: grid.zeros(),
        direction: Direction::Forward,
    };
    let theta = solve_linear(&spec, grid)?;
    let lhs = theta.h1_seminorm_sq(grid) + theta.l2_sq(grid) + grid.l2_norm_sq(theta.last());
    let time = *potential.time();
    let rhs_data = time.trapezoid(|j| {
        grid.l2_norm_sq(sources.f_src.snapshot(j)) + grid.l2_norm_sq(sources.g.snapshot(j))
    });
    Ok(EnergyReport { lhs, rhs_data })
}

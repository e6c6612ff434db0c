//! Model description: reaction term, control interaction and objective
//! integrands, plus the built-in catalog and sampled hypothesis checks.
//!
//! All closures must be pure; a [`ModelSpec`] is shared across threads.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{Field, TorusGrid};

type TxuFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
type XuFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type UFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `f(t, x, u)` with its first and second `u`-partials.
#[derive(Clone)]
pub struct Reaction {
    pub value: TxuFn,
    pub du: TxuFn,
    pub duu: TxuFn,
}

impl Reaction {
    pub fn new(
        value: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        du: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        duu: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            du: Arc::new(du),
            duu: Arc::new(duu),
        }
    }

    pub fn zero() -> Self {
        Self::new(|_, _, _| 0.0, |_, _, _| 0.0, |_, _, _| 0.0)
    }

    /// `f(u) = c·u`.
    pub fn linear(c: f64) -> Self {
        Self::new(move |_, _, u| c * u, move |_, _, _| c, |_, _, _| 0.0)
    }

    /// `-u²` on `[-M, M]`, extended to a globally Lipschitz C² function.
    pub fn logistic(extension: LogisticExtension) -> Self {
        let (a, b, c) = (extension, extension, extension);
        Self::new(
            move |_, _, u| a.value(u),
            move |_, _, u| b.du(u),
            move |_, _, u| c.duu(u),
        )
    }
}

/// Even, C² extension of `u ↦ -u²` outside `[-M, M]`.
///
/// On `|u| ∈ [M, M+1]` the slope follows the cubic Hermite interpolant from
/// `(-2M, f''=-2)` to `(-A, f''=0)` with `A = 2M + 2`; beyond `M+1` the slope
/// is constant. The slope decreases monotonically, so `A` is the global
/// Lipschitz constant and `f(u) ≤ -u` keeps holding for `u ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticExtension {
    junction: f64,
    slope: f64,
}

impl LogisticExtension {
    pub fn new(junction: f64) -> Self {
        assert!(junction > 0.0);
        Self {
            junction,
            slope: 2.0 * junction + 2.0,
        }
    }

    pub fn junction(&self) -> f64 {
        self.junction
    }

    pub fn lipschitz(&self) -> f64 {
        self.slope
    }

    // Hermite data for the slope on τ ∈ [0, 1].
    fn blend(&self, tau: f64) -> (f64, f64, f64) {
        let m = self.junction;
        let a = self.slope;
        let (t2, t3, t4) = (tau * tau, tau * tau * tau, tau * tau * tau * tau);
        // slope g(τ) = h00·(-2M) + h10·(-2) + h01·(-A)
        let g = (2.0 * t3 - 3.0 * t2 + 1.0) * (-2.0 * m)
            + (t3 - 2.0 * t2 + tau) * (-2.0)
            + (-2.0 * t3 + 3.0 * t2) * (-a);
        let dg = (6.0 * t2 - 6.0 * tau) * (-2.0 * m)
            + (3.0 * t2 - 4.0 * tau + 1.0) * (-2.0)
            + (-6.0 * t2 + 6.0 * tau) * (-a);
        let int_g = (t4 / 2.0 - t3 + tau) * (-2.0 * m)
            + (t4 / 4.0 - 2.0 * t3 / 3.0 + t2 / 2.0) * (-2.0)
            + (-t4 / 2.0 + t3) * (-a);
        (int_g, g, dg)
    }

    fn value_pos(&self, u: f64) -> f64 {
        let m = self.junction;
        if u <= m {
            -u * u
        } else if u <= m + 1.0 {
            -m * m + self.blend(u - m).0
        } else {
            let end = -m * m + self.blend(1.0).0;
            end - self.slope * (u - m - 1.0)
        }
    }

    fn du_pos(&self, u: f64) -> f64 {
        let m = self.junction;
        if u <= m {
            -2.0 * u
        } else if u <= m + 1.0 {
            self.blend(u - m).1
        } else {
            -self.slope
        }
    }

    fn duu_pos(&self, u: f64) -> f64 {
        let m = self.junction;
        if u <= m {
            -2.0
        } else if u <= m + 1.0 {
            self.blend(u - m).2
        } else {
            0.0
        }
    }

    pub fn value(&self, u: f64) -> f64 {
        self.value_pos(u.abs())
    }

    pub fn du(&self, u: f64) -> f64 {
        u.signum() * self.du_pos(u.abs())
    }

    pub fn duu(&self, u: f64) -> f64 {
        self.duu_pos(u.abs())
    }
}

/// `φ` and its first three derivatives for an `m·φ(u)` interaction.
#[derive(Clone)]
pub struct PhiFunctions {
    pub phi: UFn,
    pub dphi: UFn,
    pub d2phi: UFn,
    pub d3phi: UFn,
}

/// How the control enters the state equation.
#[derive(Clone)]
pub enum Interaction {
    /// `m·u`
    Bilinear,
    /// `m·φ(u)`
    Phi(PhiFunctions),
}

impl Interaction {
    pub fn phi(&self, u: f64) -> f64 {
        match self {
            Interaction::Bilinear => u,
            Interaction::Phi(p) => (p.phi)(u),
        }
    }

    pub fn dphi(&self, u: f64) -> f64 {
        match self {
            Interaction::Bilinear => 1.0,
            Interaction::Phi(p) => (p.dphi)(u),
        }
    }

    pub fn d2phi(&self, u: f64) -> f64 {
        match self {
            Interaction::Bilinear => 0.0,
            Interaction::Phi(p) => (p.d2phi)(u),
        }
    }

    /// `r = φ'/φ` and its first two derivatives; the weight of the
    /// gradient term in the second variation is `p·r(u)`.
    pub fn log_derivative(&self, u: f64) -> (f64, f64, f64) {
        match self {
            Interaction::Bilinear => (1.0 / u, -1.0 / (u * u), 2.0 / (u * u * u)),
            Interaction::Phi(p) => {
                let (f0, f1, f2, f3) = ((p.phi)(u), (p.dphi)(u), (p.d2phi)(u), (p.d3phi)(u));
                let r = f1 / f0;
                let r1 = (f2 * f0 - f1 * f1) / (f0 * f0);
                let r2 = (f3 * f0 * f0 - 3.0 * f0 * f1 * f2 + 2.0 * f1 * f1 * f1) / (f0 * f0 * f0);
                (r, r1, r2)
            }
        }
    }

    pub fn is_bilinear(&self) -> bool {
        matches!(self, Interaction::Bilinear)
    }
}

/// Running integrand `j1(t, x, u)` with `u`-partials.
#[derive(Clone)]
pub struct RunningObjective {
    pub value: TxuFn,
    pub du: TxuFn,
    pub duu: TxuFn,
}

impl RunningObjective {
    pub fn new(
        value: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        du: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        duu: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            du: Arc::new(du),
            duu: Arc::new(duu),
        }
    }

    pub fn zero() -> Self {
        Self::new(|_, _, _| 0.0, |_, _, _| 0.0, |_, _, _| 0.0)
    }

    pub fn identity() -> Self {
        Self::new(|_, _, u| u, |_, _, _| 1.0, |_, _, _| 0.0)
    }
}

/// Terminal integrand `j2(x, u)` with `u`-partials.
#[derive(Clone)]
pub struct TerminalObjective {
    pub value: XuFn,
    pub du: XuFn,
    pub duu: XuFn,
}

impl TerminalObjective {
    pub fn new(
        value: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        du: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        duu: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            du: Arc::new(du),
            duu: Arc::new(duu),
        }
    }

    pub fn zero() -> Self {
        Self::new(|_, _| 0.0, |_, _| 0.0, |_, _| 0.0)
    }

    pub fn identity() -> Self {
        Self::new(|_, u| u, |_, _| 1.0, |_, _| 0.0)
    }

    pub fn square() -> Self {
        Self::new(|_, u| u * u, |_, u| 2.0 * u, |_, _| 2.0)
    }

    /// `-|u - y_ref(x)|²`; increasing in `u` below the target.
    pub fn tracking(target: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let target = Arc::new(target);
        let (t1, t2) = (target.clone(), target);
        Self::new(
            move |x, u| -(u - t1(x)).powi(2),
            move |x, u| -2.0 * (u - t2(x)),
            |_, _| -2.0,
        )
    }
}

/// Which objective partial is strictly positive on `u > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrictMonotonicity {
    Running,
    Terminal,
}

/// Complete description of one controlled reaction-diffusion problem.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub horizon: f64,
    pub initial: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub reaction: Reaction,
    pub interaction: Interaction,
    pub running: RunningObjective,
    pub terminal: TerminalObjective,
    /// Global Lipschitz constant of `f` in `u`.
    pub lipschitz: f64,
    /// Level `κ` with `f(u) ≤ -u` for `u ≥ κ`; `None` when the reaction does
    /// not saturate and only a finite-horizon growth bound is available.
    pub saturation: Option<f64>,
    pub strict: StrictMonotonicity,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("horizon", &self.horizon)
            .field("bilinear", &self.interaction.is_bilinear())
            .field("lipschitz", &self.lipschitz)
            .field("saturation", &self.saturation)
            .field("strict", &self.strict)
            .finish()
    }
}

impl ModelSpec {
    pub fn initial_field(&self, grid: &TorusGrid) -> Field {
        grid.sample(|x| (self.initial)(x))
    }

    pub fn initial_sup(&self, grid: &TorusGrid) -> f64 {
        self.initial_field(grid).sup_norm()
    }

    /// A priori bound on the state: `max{‖u0‖∞, κ}` when the reaction
    /// saturates, otherwise the growth bound `‖u0‖∞·e^{(1+A)T}`.
    pub fn state_bound(&self, grid: &TorusGrid) -> f64 {
        let sup = self.initial_sup(grid);
        match self.saturation {
            Some(kappa) => sup.max(kappa),
            None => sup * ((1.0 + self.lipschitz) * self.horizon).exp(),
        }
    }

    /// Upper end of the sampling interval for hypothesis checks.
    pub fn sampling_ceiling(&self, grid: &TorusGrid) -> f64 {
        let sup = self.initial_sup(grid);
        match self.saturation {
            Some(kappa) => sup.max(kappa) + 1.0,
            None => self.state_bound(grid) + 1.0,
        }
    }

    /// Sampled verification of the structural hypotheses on a 64×64 `(t, u)`
    /// lattice over `u ∈ (0, u_max]` and a subset of grid nodes.
    pub fn check_hypotheses(&self, grid: &TorusGrid) -> Result<HypothesisReport> {
        const LATTICE: usize = 64;
        let u0 = self.initial_field(grid);
        if u0.min() <= 0.0 {
            return Err(self.violation("initial datum", format!("min u0 = {} <= 0", u0.min())));
        }
        let u_max = self.sampling_ceiling(grid);
        let stride = (grid.len() / 16).max(1);
        let xs: Vec<f64> = grid.nodes().step_by(stride).collect();
        let ts: Vec<f64> = (0..LATTICE)
            .map(|i| self.horizon * i as f64 / (LATTICE - 1) as f64)
            .collect();
        let us: Vec<f64> = (1..=LATTICE)
            .map(|i| u_max * i as f64 / LATTICE as f64)
            .collect();

        let mut report = HypothesisReport {
            u_max,
            min_running_slope: f64::INFINITY,
            min_terminal_slope: f64::INFINITY,
            max_reaction_slope: 0.0,
            min_phi_log_derivative: None,
            min_abs_phi: None,
        };
        for &x in &xs {
            for &t in &ts {
                let f0 = (self.reaction.value)(t, x, 0.0);
                if f0 < 0.0 {
                    return Err(self.violation("H2", format!("f(t={t}, x={x}, 0) = {f0} < 0")));
                }
                for &u in &us {
                    let f = (self.reaction.value)(t, x, u);
                    if let Some(kappa) = self.saturation {
                        if u >= kappa && f > -u + 1e-12 {
                            return Err(self.violation(
                                "H2",
                                format!("f(t={t}, x={x}, u={u}) = {f} > -u above κ = {kappa}"),
                            ));
                        }
                    }
                    let slope = (self.reaction.du)(t, x, u).abs();
                    report.max_reaction_slope = report.max_reaction_slope.max(slope);
                    let dj1 = (self.running.du)(t, x, u);
                    report.min_running_slope = report.min_running_slope.min(dj1);
                }
            }
            for &u in &us {
                let dj2 = (self.terminal.du)(x, u);
                report.min_terminal_slope = report.min_terminal_slope.min(dj2);
            }
        }
        if report.max_reaction_slope > self.lipschitz * (1.0 + 1e-12) {
            return Err(self.violation(
                "H3",
                format!(
                    "sampled |∂u f| = {} exceeds declared Lipschitz bound {}",
                    report.max_reaction_slope, self.lipschitz
                ),
            ));
        }
        if report.min_running_slope < 0.0 || report.min_terminal_slope < 0.0 {
            return Err(self.violation(
                "HJ",
                format!(
                    "objective partials must be nonnegative: min ∂u j1 = {}, min ∂u j2 = {}",
                    report.min_running_slope, report.min_terminal_slope
                ),
            ));
        }
        let strict = match self.strict {
            StrictMonotonicity::Running => report.min_running_slope,
            StrictMonotonicity::Terminal => report.min_terminal_slope,
        };
        if strict <= 0.0 {
            return Err(self.violation(
                "HJ",
                format!(
                    "declared strictly increasing integrand ({:?}) has min slope {strict}",
                    self.strict
                ),
            ));
        }
        if let Interaction::Phi(p) = &self.interaction {
            let mut min_ratio = f64::INFINITY;
            let mut min_abs = f64::INFINITY;
            for &u in &us {
                let phi = (p.phi)(u);
                min_abs = min_abs.min(phi.abs());
                min_ratio = min_ratio.min((p.dphi)(u) / phi);
            }
            if !(min_ratio > 0.0) || !(min_abs > 0.0) {
                return Err(self.violation(
                    "interaction",
                    format!("need inf φ'/φ > 0 and inf |φ| > 0, got {min_ratio} and {min_abs}"),
                ));
            }
            report.min_phi_log_derivative = Some(min_ratio);
            report.min_abs_phi = Some(min_abs);
        }
        Ok(report)
    }

    fn violation(&self, hypothesis: &'static str, detail: String) -> Error {
        Error::HypothesisViolation {
            model: self.name.clone(),
            hypothesis,
            detail,
        }
    }
}

/// Sampled extrema gathered while checking hypotheses.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub u_max: f64,
    pub min_running_slope: f64,
    pub min_terminal_slope: f64,
    pub max_reaction_slope: f64,
    pub min_phi_log_derivative: Option<f64>,
    pub min_abs_phi: Option<f64>,
}

/// Parameters shared by the catalog models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub horizon: f64,
    /// `u0(x) = u0_mean + u0_amplitude·cos(u0_mode·x)`.
    pub u0_mean: f64,
    pub u0_amplitude: f64,
    pub u0_mode: u32,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            u0_mean: 1.0,
            u0_amplitude: 0.5,
            u0_mode: 1,
        }
    }
}

pub const LOGISTIC_POPULATION: &str = "logistic-population";
pub const PURE_HEAT: &str = "pure-heat";
pub const CARRYING_CAPACITY: &str = "carrying-capacity";

pub fn catalog_names() -> &'static [&'static str] {
    &[LOGISTIC_POPULATION, PURE_HEAT, CARRYING_CAPACITY]
}

/// Every catalog model instantiated with the same parameters.
pub fn builtin_models(params: &ModelParams) -> Vec<ModelSpec> {
    catalog_names()
        .iter()
        .map(|name| builtin_model(name, params).expect("catalog names resolve"))
        .collect()
}

pub fn builtin_model(name: &str, params: &ModelParams) -> Result<ModelSpec> {
    let ModelParams {
        horizon,
        u0_mean,
        u0_amplitude,
        u0_mode,
    } = *params;
    let initial: Arc<dyn Fn(f64) -> f64 + Send + Sync> =
        Arc::new(move |x: f64| u0_mean + u0_amplitude * (u0_mode as f64 * x).cos());
    let u0_sup = u0_mean.abs() + u0_amplitude.abs();
    match name {
        LOGISTIC_POPULATION => {
            let ext = LogisticExtension::new(u0_sup.max(1.0));
            Ok(ModelSpec {
                name: name.into(),
                horizon,
                initial,
                reaction: Reaction::logistic(ext),
                interaction: Interaction::Bilinear,
                running: RunningObjective::identity(),
                terminal: TerminalObjective::identity(),
                lipschitz: ext.lipschitz(),
                saturation: Some(1.0),
                strict: StrictMonotonicity::Running,
            })
        }
        PURE_HEAT => Ok(ModelSpec {
            name: name.into(),
            horizon,
            initial,
            reaction: Reaction::zero(),
            interaction: Interaction::Bilinear,
            running: RunningObjective::zero(),
            terminal: TerminalObjective::identity(),
            lipschitz: 0.0,
            saturation: None,
            strict: StrictMonotonicity::Terminal,
        }),
        CARRYING_CAPACITY => Ok(ModelSpec {
            name: name.into(),
            horizon,
            initial,
            reaction: Reaction::linear(1.0),
            interaction: Interaction::Phi(PhiFunctions {
                phi: Arc::new(|u| -u * u),
                dphi: Arc::new(|u| -2.0 * u),
                d2phi: Arc::new(|_| -2.0),
                d3phi: Arc::new(|_| 0.0),
            }),
            running: RunningObjective::zero(),
            terminal: TerminalObjective::identity(),
            lipschitz: 1.0,
            saturation: None,
            strict: StrictMonotonicity::Terminal,
        }),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

//! Experiment runner: JSON configuration, orchestration and bit-stable
//! emission of results.
//!
//! A run reads an [`ExperimentConfig`], executes one experiment kind and
//! writes a directory with `summary.json` (the effective configuration, the
//! scalar metrics and one entry per invariant check) and CSV tables. Reals
//! are printed with 17 significant digits so identical inputs give
//! byte-identical files.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::{coercivity_terms, CoercivityReport, ControlProblem, FD_STEP_FIRST};
use crate::control::{evaluate_objective, Control};
use crate::error::{Error, Result};
use crate::model::{builtin_model, catalog_names, ModelParams, ModelSpec};
use crate::optimizer::{optimize, pontryagin_residual, OptimizerConfig, RunTrace, StepRule};
use crate::par::Execution;
use crate::solver::{solve_semilinear, Discretization};
use crate::torus::{Field, TorusGrid};
use crate::twoscale::{
    arc_mask, build_high_mode_perturbation, check_layer_resolution, residual_study,
    PerturbationSpectrum, ScalingReport,
};

/// Overrides the configured output directory (but not `--out`).
pub const OUT_DIR_ENV: &str = "BANGBANG_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "results";

const SLOPE_LIMIT: f64 = -2.5;
const BANG_BANG_FRACTION: f64 = 0.02;
const PONTRYAGIN_FRACTION: f64 = 1e-3;
const GRADIENT_TOL: f64 = 1e-5;
const DIRECT_ADJOINT_TOL: f64 = 1e-6;
const MB_PRE_TOL: f64 = 1e-4;
const MB_FD_TOL: f64 = 1e-3;
const STATE_TOL: f64 = 1e-6;
const MONOTONE_TOL: f64 = 1e-8;
const IDENTITY_TOL: f64 = 1e-8;
/// Largest mode in the random smooth directions.
const DIRECTION_MODES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Solve,
    Optimize,
    DerivativeCheck,
    ExpansionStudy,
    BoundsCheck,
}

/// Initial datum `u0(x) = u0_mean + u0_amplitude·cos(u0_mode·x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialData {
    pub u0_mean: f64,
    pub u0_amplitude: f64,
    pub u0_mode: u32,
}

impl Default for InitialData {
    fn default() -> Self {
        let p = ModelParams::default();
        Self {
            u0_mean: p.u0_mean,
            u0_amplitude: p.u0_amplitude,
            u0_mode: p.u0_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: String,
    #[serde(default)]
    pub params: InitialData,
    pub n_points: usize,
    pub n_steps: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_volume")]
    pub volume: f64,
    #[serde(default)]
    pub k_list: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    /// Margin `ε` as a fraction of `T`.
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_directions")]
    pub n_directions: usize,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

fn default_horizon() -> f64 {
    1.0
}

fn default_volume() -> f64 {
    PI
}

fn default_margin() -> f64 {
    crate::adjoint::DEFAULT_MARGIN_FRACTION
}

fn default_delta() -> f64 {
    crate::adjoint::DEFAULT_DELTA
}

fn default_directions() -> usize {
    10
}

impl ExperimentConfig {
    /// Parses JSON, naming the offending field path on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(
                if path == "." { "<root>".into() } else { path },
                e.into_inner().to_string(),
            )
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            horizon: self.horizon,
            u0_mean: self.params.u0_mean,
            u0_amplitude: self.params.u0_amplitude,
            u0_mode: self.params.u0_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !catalog_names().contains(&self.model.as_str()) {
            return Err(Error::config(
                "model",
                format!(
                    "unknown model `{}`; expected one of {:?}",
                    self.model,
                    catalog_names()
                ),
            ));
        }
        let grid =
            TorusGrid::new(self.n_points).map_err(|e| Error::config("n_points", e.to_string()))?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("horizon", "must be positive and finite"));
        }
        if self.n_steps == 0 {
            return Err(Error::config("n_steps", "must be positive"));
        }
        if !(self.volume > 0.0 && self.volume < 2.0 * PI) {
            return Err(Error::config("volume", "must lie in (0, 2π)"));
        }
        if !(self.params.u0_mean - self.params.u0_amplitude.abs() > 0.0) {
            return Err(Error::config("params", "initial datum must be positive"));
        }
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return Err(Error::config("margin", "must lie in (0, 1)"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta", "must lie in (0, 1)"));
        }
        if self.n_directions == 0 {
            return Err(Error::config("n_directions", "must be positive"));
        }
        for (i, &t) in self.snapshot_times.iter().enumerate() {
            if !(0.0..=self.horizon).contains(&t) {
                return Err(Error::config(
                    format!("snapshot_times[{i}]"),
                    "must lie in [0, horizon]",
                ));
            }
        }
        if let Some(opt) = &self.optimizer {
            opt.validate()?;
        }
        let needs_k = matches!(
            self.kind,
            ExperimentKind::ExpansionStudy | ExperimentKind::BoundsCheck
        );
        if needs_k && self.k_list.is_empty() {
            return Err(Error::config("k_list", "required for this experiment kind"));
        }
        let time = Discretization::new(self.n_points, self.horizon, self.n_steps)?.time;
        for (i, &k) in self.k_list.iter().enumerate() {
            if k == 0 || k > grid.dealias_cutoff() {
                return Err(Error::config(
                    format!("k_list[{i}]"),
                    format!(
                        "must lie in [1, {}] for n_points = {}",
                        grid.dealias_cutoff(),
                        self.n_points
                    ),
                ));
            }
            if self.kind == ExperimentKind::ExpansionStudy {
                check_layer_resolution(&time, k)
                    .map_err(|e| Error::config("n_steps", e.to_string()))?;
            }
        }
        Ok(())
    }
}

/// Command-line overrides applied on top of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= threshold,
            value,
            threshold,
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: value >= threshold,
            value,
            threshold,
        }
    }

    fn flag(name: &str, passed: bool) -> Self {
        Self {
            name: name.into(),
            passed,
            value: if passed { 1.0 } else { 0.0 },
            threshold: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

/// A CSV table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(file: &str, header: &[&str]) -> Self {
        Self {
            file: file.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                match *cell {
                    Cell::Int(v) => write!(out, "{v}").unwrap(),
                    Cell::Real(v) => out.push_str(&format_real(v)),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// 17 significant digits, `.` separator, `NaN`/`inf` spelled out.
pub fn format_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Everything a run writes.
#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub config: ExperimentConfig,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    /// Two-column tables for plotting.
    pub plots: Vec<Table>,
}

impl ResultBundle {
    fn new(config: ExperimentConfig) -> Self {
        Self {
            config,
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            tables: Vec::new(),
            plots: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            config: &'a ExperimentConfig,
            passed: bool,
            metrics: &'a BTreeMap<String, f64>,
            checks: &'a [Check],
        }
        let mut text = serde_json::to_string_pretty(&Summary {
            config: &self.config,
            passed: self.passed(),
            metrics: &self.metrics,
            checks: &self.checks,
        })?;
        text.push('\n');
        Ok(text)
    }

    /// Writes `summary.json`, the tables and the plot data into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("summary.json"), self.summary_json()?)?;
        for table in &self.tables {
            fs::write(dir.join(&table.file), table.to_csv())?;
        }
        emit_plot_data(self, dir)
    }
}

/// Writes the two-column plotting tables of `bundle` into `dir`.
pub fn emit_plot_data(bundle: &ResultBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for table in &bundle.plots {
        fs::write(dir.join(&table.file), table.to_csv())?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub bundle: ResultBundle,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.bundle.passed()
    }
}

/// Process exit status: 0 when every check passes, 1 on a failed check or a
/// runtime error, 2 on a configuration error.
pub fn exit_code(result: &Result<RunOutcome>) -> i32 {
    match result {
        Ok(outcome) if outcome.passed() => 0,
        Ok(_) => 1,
        Err(e) if is_config_error(e) => 2,
        Err(_) => 1,
    }
}

fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config { .. }
            | Error::UnknownModel(_)
            | Error::InfeasibleVolume { .. }
            | Error::InvalidGrid(_)
            | Error::ResolutionExceeded { .. }
            | Error::Json(_)
    )
}

/// Output directory precedence: `--out`, then the environment, then the
/// configuration file.
pub fn resolve_output_dir(config: &ExperimentConfig, cli: Option<&Path>) -> PathBuf {
    if let Some(dir) = cli {
        return dir.to_path_buf();
    }
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(dir);
    }
    config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Loads, runs and writes one experiment.
pub fn run(config_path: &Path, options: &RunOptions) -> Result<RunOutcome> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = options.seed {
        config.seed = seed;
    }
    let output_dir = resolve_output_dir(&config, options.out_dir.as_deref());
    config.output_dir = Some(output_dir.clone());
    let bundle = execute(&config)?;
    bundle.write(&output_dir)?;
    log::info!(
        "{:?} on `{}`: {} ({} checks) -> {}",
        config.kind,
        config.model,
        if bundle.passed() { "pass" } else { "FAIL" },
        bundle.checks.len(),
        output_dir.display()
    );
    Ok(RunOutcome { output_dir, bundle })
}

/// Runs the experiment described by a validated configuration.
pub fn execute(config: &ExperimentConfig) -> Result<ResultBundle> {
    config.validate()?;
    let model = builtin_model(&config.model, &config.model_params())?;
    let disc = Discretization::new(config.n_points, config.horizon, config.n_steps)?;
    let mut bundle = ResultBundle::new(config.clone());
    match config.kind {
        ExperimentKind::Solve => run_solve(&model, &disc, config, &mut bundle)?,
        ExperimentKind::Optimize => run_optimize(&model, &disc, config, &mut bundle)?,
        ExperimentKind::DerivativeCheck => {
            run_derivative_check(&model, &disc, config, &mut bundle)?
        }
        ExperimentKind::ExpansionStudy => run_expansion_study(&model, &disc, config, &mut bundle)?,
        ExperimentKind::BoundsCheck => run_bounds_check(&model, &disc, config, &mut bundle)?,
    }
    Ok(bundle)
}

/// Seeded smooth direction `a0 + Σ_{k ≤ modes} (a_k cos kx + b_k sin kx)/k`.
pub fn random_direction(grid: &TorusGrid, rng: &mut impl Rng, modes: usize) -> Field {
    let a0 = rng.gen_range(-1.0..1.0);
    let coeffs: Vec<(usize, f64, f64)> = (1..=modes)
        .map(|k| {
            (
                k,
                rng.gen_range(-1.0..1.0) / k as f64,
                rng.gen_range(-1.0..1.0) / k as f64,
            )
        })
        .collect();
    grid.sample(|x| {
        a0 + coeffs
            .iter()
            .map(|&(k, a, b)| a * (k as f64 * x).cos() + b * (k as f64 * x).sin())
            .sum::<f64>()
    })
}

/// A random smooth direction shifted to be nonnegative with minimum 0.
pub fn random_nonnegative_direction(grid: &TorusGrid, rng: &mut impl Rng, modes: usize) -> Field {
    let h = random_direction(grid, rng, modes);
    let low = h.min();
    h.map(|v| v - low)
}

fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Checks shared by every kind that solves the uncontrolled-initialisation state.
fn state_checks(
    model: &ModelSpec,
    disc: &Discretization,
    control: &Control,
    bundle: &mut ResultBundle,
) -> Result<()> {
    let u = solve_semilinear(model, control, disc)?;
    let bound = model.state_bound(&disc.space);
    bundle.metric("state_min", u.min());
    bundle.metric("state_max", u.max());
    bundle.metric("state_bound", bound);
    bundle.metric("objective", evaluate_objective(model, &u, disc));
    bundle
        .checks
        .push(Check::flag("state_finite", u.is_finite()));
    bundle.checks.push(Check::at_least(
        "state_positive",
        u.min(),
        f64::MIN_POSITIVE,
    ));
    bundle.checks.push(Check::at_most(
        "state_upper_bound",
        u.max(),
        bound + STATE_TOL,
    ));
    Ok(())
}

fn run_solve(
    model: &ModelSpec,
    disc: &Discretization,
    config: &ExperimentConfig,
    bundle: &mut ResultBundle,
) -> Result<()> {
    let control = Control::uniform(&disc.space, config.volume)?;
    let u = solve_semilinear(model, &control, disc)?;
    let times = if config.snapshot_times.is_empty() {
        vec![0.0, 0.5 * config.horizon, config.horizon]
    } else {
        config.snapshot_times.clone()
    };
    let time = disc.time;
    let mut table = Table::new("snapshots.csv", &["t", "x", "u"]);
    for &t in &times {
        let j = ((t / time.dt()).round() as usize).min(time.n_steps());
        for (x, &v) in disc.space.nodes().zip(u.snapshot(j).values()) {
            table.push(vec![time.time(j).into(), x.into(), v.into()]);
        }
    }
    bundle.tables.push(table);
    state_checks(model, disc, &control, bundle)
}

fn run_optimize(
    model: &ModelSpec,
    disc: &Discretization,
    config: &ExperimentConfig,
    bundle: &mut ResultBundle,
) -> Result<()> {
    let cfg = config.optimizer.unwrap_or_default();
    let problem = ControlProblem::new(model, disc);
    let init = Control::uniform(&disc.space, config.volume)?;
    let trace = optimize(&problem, &init, &cfg)?;
    let residual = pontryagin_residual(&problem, &trace.control)?;
    let measure = trace
        .records
        .last()
        .map_or(f64::NAN, |r| r.bang_bang_measure);
    bundle.metric("final_objective", trace.final_objective());
    bundle.metric("bang_bang_measure", measure);
    bundle.metric("pontryagin_residual", residual);
    bundle.metric("iterations", (trace.records.len() - 1) as f64);
    bundle
        .checks
        .push(Check::flag("converged", trace.converged));
    if matches!(cfg.step, StepRule::Backtracking { .. }) {
        bundle
            .checks
            .push(Check::flag("objective_non_decreasing", trace.is_monotone()));
    }
    bundle.checks.push(Check::at_most(
        "bang_bang_measure",
        measure,
        BANG_BANG_FRACTION * 2.0 * PI,
    ));
    bundle.checks.push(Check::at_most(
        "pontryagin_residual",
        residual,
        PONTRYAGIN_FRACTION * 2.0 * PI,
    ));
    push_trace_tables(&disc.space, &trace, bundle);
    Ok(())
}

fn push_trace_tables(grid: &TorusGrid, trace: &RunTrace, bundle: &mut ResultBundle) {
    let mut full = Table::new(
        "optimizer_trace.csv",
        &["iteration", "objective", "bang_bang_measure", "step"],
    );
    let mut plot = Table::new("trace.csv", &["iteration", "objective"]);
    for r in &trace.records {
        full.push(vec![
            r.iteration.into(),
            r.objective.into(),
            r.bang_bang_measure.into(),
            r.step.into(),
        ]);
        plot.push(vec![r.iteration.into(), r.objective.into()]);
    }
    let mut control = Table::new("control.csv", &["x", "m"]);
    for (x, &m) in grid.nodes().zip(trace.control.field().values()) {
        control.push(vec![x.into(), m.into()]);
    }
    bundle.tables.push(full);
    bundle.plots.push(plot);
    bundle.plots.push(control);
}

#[derive(Debug, Clone, Copy)]
struct DirectionRow {
    direct: f64,
    adjoint: f64,
    fd_first: f64,
    via_mb: f64,
    via_pre: f64,
    via_fd: f64,
}

fn run_derivative_check(
    model: &ModelSpec,
    disc: &Discretization,
    config: &ExperimentConfig,
    bundle: &mut ResultBundle,
) -> Result<()> {
    let grid = &disc.space;
    let problem = ControlProblem::new(model, disc);
    let control = Control::uniform(grid, config.volume)?;
    let base = problem.bundle(&control)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let directions: Vec<Field> = (0..config.n_directions)
        .map(|_| random_direction(grid, &mut rng, DIRECTION_MODES))
        .collect();
    let rows = Execution::default().try_map(&directions, |h| -> Result<DirectionRow> {
        let first = problem.gateaux_first(&base, h)?;
        let fd_first = problem.fd_first(control.field(), h, FD_STEP_FIRST)?;
        let second = problem.gateaux_second(&base, control.field(), h)?;
        Ok(DirectionRow {
            direct: first.direct,
            adjoint: first.adjoint,
            fd_first,
            via_mb: second.via_mb.total(),
            via_pre: second.via_pre,
            via_fd: second.via_fd,
        })
    })?;
    let mut table = Table::new(
        "derivatives.csv",
        &[
            "direction",
            "direct",
            "adjoint",
            "fd_first",
            "via_mb",
            "via_pre",
            "via_fd",
        ],
    );
    for (i, r) in rows.iter().enumerate() {
        table.push(vec![
            i.into(),
            r.direct.into(),
            r.adjoint.into(),
            r.fd_first.into(),
            r.via_mb.into(),
            r.via_pre.into(),
            r.via_fd.into(),
        ]);
    }
    bundle.tables.push(table);
    let worst = |f: &dyn Fn(&DirectionRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let gradient = worst(&|r| relative(r.adjoint, r.fd_first));
    let forms = worst(&|r| relative(r.direct, r.adjoint));
    let mb_pre = worst(&|r| relative(r.via_mb, r.via_pre));
    let mb_fd = worst(&|r| relative(r.via_mb, r.via_fd));
    for (name, value, tol) in [
        ("gradient_vs_fd", gradient, GRADIENT_TOL),
        ("direct_vs_adjoint", forms, DIRECT_ADJOINT_TOL),
        ("second_mb_vs_pre", mb_pre, MB_PRE_TOL),
        ("second_mb_vs_fd", mb_fd, MB_FD_TOL),
    ] {
        bundle.metric(&format!("max_relative_{name}"), value);
        bundle.checks.push(Check::at_most(name, value, tol));
    }
    Ok(())
}

fn single_mode_spectra(grid: &TorusGrid, k_list: &[usize]) -> Result<Vec<PerturbationSpectrum>> {
    k_list
        .iter()
        .map(|&k| PerturbationSpectrum::single_mode(grid, k))
        .collect()
}

fn push_scaling_tables(report: &ScalingReport, bundle: &mut ResultBundle) {
    let slope = report.slope.unwrap_or(f64::NAN);
    let mut full = Table::new(
        "scaling_report.csv",
        &[
            "K",
            "residual_energy",
            "envelope",
            "L2_LK",
            "ratio_IJ_over_L",
            "slope",
        ],
    );
    let mut plot = Table::new("scaling.csv", &["K", "residual_energy"]);
    for row in &report.rows {
        full.push(vec![
            row.cutoff.into(),
            row.residual_energy.into(),
            row.envelope.into(),
            row.l2_lk.into(),
            row.ratio_ij_over_l.into(),
            slope.into(),
        ]);
        plot.push(vec![row.cutoff.into(), row.residual_energy.into()]);
    }
    bundle.tables.push(full);
    bundle.plots.push(plot);
}

fn run_expansion_study(
    model: &ModelSpec,
    disc: &Discretization,
    config: &ExperimentConfig,
    bundle: &mut ResultBundle,
) -> Result<()> {
    let grid = &disc.space;
    let problem = ControlProblem::new(model, disc);
    let control = Control::uniform(grid, config.volume)?;
    let specs = single_mode_spectra(grid, &config.k_list)?;
    let report = residual_study(
        &problem,
        &control,
        &specs,
        config.margin * config.horizon,
        Execution::default(),
    )?;
    let slope = report.slope.unwrap_or(f64::NAN);
    bundle.metric("slope", slope);
    bundle.checks.push(Check {
        name: "residual_slope".into(),
        passed: report.slope.is_some_and(|s| s <= SLOPE_LIMIT),
        value: slope,
        threshold: SLOPE_LIMIT,
    });
    let defect = report
        .rows
        .iter()
        .map(|r| r.derivative_defect)
        .fold(0.0, f64::max);
    let poincare = report
        .rows
        .iter()
        .map(|r| r.w_poincare_ratio)
        .fold(0.0, f64::max);
    bundle.metric("max_derivative_defect", defect);
    bundle.metric("max_w_poincare_ratio", poincare);
    bundle
        .checks
        .push(Check::at_most("derivative_identity", defect, IDENTITY_TOL));
    bundle
        .checks
        .push(Check::at_most("w_poincare", poincare, 1.0 + 1e-12));
    bundle.checks.push(Check::flag(
        "leading_lower_bound",
        report.rows.iter().all(|r| r.lower_bound_holds),
    ));
    push_scaling_tables(&report, bundle);
    Ok(())
}

fn run_bounds_check(
    model: &ModelSpec,
    disc: &Discretization,
    config: &ExperimentConfig,
    bundle: &mut ResultBundle,
) -> Result<()> {
    let grid = &disc.space;
    let hypotheses = model.check_hypotheses(grid);
    if let Err(e) = &hypotheses {
        log::warn!("{e}");
    }
    bundle
        .checks
        .push(Check::flag("hypotheses", hypotheses.is_ok()));
    let control = Control::uniform(grid, config.volume)?;
    state_checks(model, disc, &control, bundle)?;

    let problem = ControlProblem::new(model, disc);
    let base = problem.bundle(&control)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let directions: Vec<Field> = (0..config.n_directions)
        .map(|_| random_nonnegative_direction(grid, &mut rng, DIRECTION_MODES))
        .collect();
    let derivatives =
        Execution::default().try_map(&directions, |h| problem.gateaux_first(&base, h))?;
    let worst = derivatives
        .iter()
        .map(|d| d.adjoint)
        .fold(f64::INFINITY, f64::min);
    bundle.metric("min_derivative_nonnegative_direction", worst);
    bundle
        .checks
        .push(Check::at_least("monotonicity", worst, -MONOTONE_TOL));

    let omega = arc_mask(grid, 0.0, PI);
    let margin = config.margin * config.horizon;
    let reports =
        Execution::default().try_map(&config.k_list, |&k| -> Result<CoercivityReport> {
            let spec = build_high_mode_perturbation(grid, &omega, k, config.seed)?;
            let u_dot = problem.linearized(&base, spec.field())?;
            let decomp = problem.decompose(&base, u_dot);
            Ok(coercivity_terms(&decomp, grid, margin, config.delta))
        })?;
    let mut table = Table::new(
        "coercivity.csv",
        &[
            "K",
            "alpha_hat",
            "beta_hat",
            "gamma_hat",
            "second_derivative",
            "lower_bound",
            "slack",
            "normalized_slack",
        ],
    );
    for (&k, c) in config.k_list.iter().zip(&reports) {
        table.push(vec![
            k.into(),
            c.alpha_hat.into(),
            c.beta_hat.into(),
            c.gamma_hat.into(),
            c.second_derivative.into(),
            c.lower_bound.into(),
            c.slack.into(),
            c.normalized_slack.into(),
        ]);
    }
    bundle.tables.push(table);
    let min_slack = reports
        .iter()
        .map(|c| c.normalized_slack)
        .fold(f64::INFINITY, f64::min);
    bundle.metric("min_normalized_slack", min_slack);
    bundle.checks.push(Check::at_least(
        "second_order_lower_bound",
        min_slack,
        -MONOTONE_TOL,
    ));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(kind: &str) -> String {
        format!(r#"{{"kind": "{kind}", "model": "pure-heat", "n_points": 32, "n_steps": 50}}"#)
    }

    #[test]
    fn defaults_fill_optional_fields() {
        let c = ExperimentConfig::from_json(&minimal("solve")).unwrap();
        assert_eq!(c.kind, ExperimentKind::Solve);
        assert_eq!((c.horizon, c.volume, c.seed), (1.0, PI, 0));
        assert_eq!(c.params, InitialData::default());
        assert!(c.optimizer.is_none());
    }

    #[test]
    fn errors_name_the_field_path() {
        let bad = r#"{"kind": "solve", "model": "pure-heat", "n_points": 32, "n_steps": 50,
                      "optimizer": {"max_iters": "ten"}}"#;
        match ExperimentConfig::from_json(bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "optimizer.max_iters"),
            other => panic!("{other:?}"),
        }
        let unknown = minimal("solve").replace("pure-heat", "nope");
        assert!(
            matches!(ExperimentConfig::from_json(&unknown), Err(Error::Config { path, .. }) if path == "model")
        );
        let kind = minimal("bogus");
        assert!(
            matches!(ExperimentConfig::from_json(&kind), Err(Error::Config { path, .. }) if path == "kind")
        );
    }

    #[test]
    fn wavenumber_guards_are_config_errors() {
        let base = r#"{"kind": "expansion-study", "model": "logistic-population", "n_points": 32, "n_steps": 64"#;
        let too_high = format!("{base}, \"k_list\": [4, 11]}}");
        assert!(
            matches!(ExperimentConfig::from_json(&too_high), Err(Error::Config { path, .. }) if path == "k_list[1]")
        );
        let coarse = format!("{base}, \"k_list\": [8]}}");
        assert!(
            matches!(ExperimentConfig::from_json(&coarse), Err(Error::Config { path, .. }) if path == "n_steps")
        );
        let missing = format!("{base}}}");
        assert!(
            matches!(ExperimentConfig::from_json(&missing), Err(Error::Config { path, .. }) if path == "k_list")
        );
    }

    #[test]
    fn reals_carry_seventeen_significant_digits() {
        assert_eq!(format_real(0.1), "1.0000000000000001e-1");
        assert_eq!(format_real(-2.0), "-2.0000000000000000e0");
        assert_eq!(format_real(f64::NAN), "NaN");
        let v: f64 = format_real(PI).parse().unwrap();
        assert_eq!(v.to_bits(), PI.to_bits());
    }

    #[test]
    fn table_csv_layout() {
        let mut t = Table::new("a.csv", &["K", "value"]);
        t.push(vec![4usize.into(), 0.5.into()]);
        assert_eq!(t.to_csv(), "K,value\n4,5.0000000000000000e-1\n");
    }

    #[test]
    fn exit_codes() {
        let cfg_err: Result<RunOutcome> = Err(Error::config("n_points", "bad"));
        assert_eq!(exit_code(&cfg_err), 2);
        let runtime: Result<RunOutcome> = Err(Error::NonFiniteState { step: 3, time: 0.1 });
        assert_eq!(exit_code(&runtime), 1);
    }

    #[test]
    fn solve_bundle_passes_for_pure_heat() {
        let c = ExperimentConfig::from_json(&minimal("solve")).unwrap();
        let b = execute(&c).unwrap();
        assert!(b.passed(), "{:?}", b.checks);
        assert_eq!(b.tables[0].rows.len(), 3 * 32);
    }

    #[test]
    fn nonnegative_directions_are_nonnegative() {
        let grid = TorusGrid::new(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let h = random_nonnegative_direction(&grid, &mut rng, DIRECTION_MODES);
            assert_eq!(h.min(), 0.0);
        }
    }
}

//! High-frequency perturbations and the two-scale expansion of the
//! linearised state.
//!
//! For `h = Σ_{k≥K} a_k cos(kx) + b_k sin(kx)` the linearised state `u̇`
//! solving `∂t u̇ - ∂xx u̇ - V u̇ = h u` is approximated by
//!
//! ```text
//! Z = Σ a_k [u cos(kx)(1-e^{-k²t})/k² - 2∂x u sin(kx) φ(k²t)/k³]
//!   + b_k [u sin(kx)(1-e^{-k²t})/k² + 2∂x u cos(kx) φ(k²t)/k³],
//! φ(s) = 1 - s e^{-s} - e^{-s},
//! ```
//!
//! and `∂x Z = L + I + J` with
//!
//! ```text
//! L = u Σ (b_k cos - a_k sin)(1-e^{-k²t})/k
//! I = ∂x u Σ (a_k cos + b_k sin)(-1 + e^{-k²t} + 2k²t e^{-k²t})/k²
//! J = -2 ∂xx u W,   W = Σ (a_k sin - b_k cos) φ(k²t)/k³
//! ```
//!
//! The remainder `R = u̇ - Z` has `∫‖R‖²_{H¹} + ‖R(T)‖² = O(Σ(a²+b²)/k³)` for
//! single modes; [`residual_study`] measures that rate.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adjoint::{AdjointBundle, ControlProblem};
use crate::control::Control;
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::solver::{SpaceTimeField, TimeGrid};
use crate::torus::{Field, TorusGrid};

/// Largest admissible `k²dt` for a study at cutoff `K`.
pub const LAYER_RESOLUTION: f64 = 0.25;

/// `φ(s) = 1 - s e^{-s} - e^{-s}`, accurate near `s = 0` where it is `s²/2`.
pub fn transient_profile(s: f64) -> f64 {
    if s < 1e-2 {
        // alternating series 1/2 s² - 1/3 s³ + 1/8 s⁴ - 1/30 s⁵ + 1/144 s⁶
        let s2 = s * s;
        s2 * (0.5 - s / 3.0 + s2 / 8.0 - s2 * s / 30.0 + s2 * s2 / 144.0)
    } else {
        -(-s).exp_m1() - s * (-s).exp()
    }
}

/// Coefficients of a perturbation with no modes below `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpectrum {
    cutoff: usize,
    modes: Vec<(usize, f64, f64)>,
    support: Vec<bool>,
    field: Field,
}

impl PerturbationSpectrum {
    /// Spectrum from explicit `(k, a_k, b_k)`; normalised so `Σ(a²+b²) = 1`
    /// unless every coefficient vanishes. Support is the whole circle.
    pub fn from_modes(
        grid: &TorusGrid,
        cutoff: usize,
        modes: &[(usize, f64, f64)],
    ) -> Result<Self> {
        if cutoff == 0 {
            return Err(Error::Unsupported("cutoff K must be at least 1".into()));
        }
        if let Some(&(k, _, _)) = modes
            .iter()
            .find(|&&(k, _, _)| k < cutoff || k > grid.dealias_cutoff())
        {
            return Err(Error::Unsupported(format!(
                "mode {k} outside [K, k_max] = [{cutoff}, {}]",
                grid.dealias_cutoff()
            )));
        }
        let total: f64 = modes.iter().map(|&(_, a, b)| a * a + b * b).sum();
        let scale = if total > 0.0 { 1.0 / total.sqrt() } else { 0.0 };
        let modes: Vec<_> = modes
            .iter()
            .map(|&(k, a, b)| (k, a * scale, b * scale))
            .collect();
        let field = grid.from_modes(modes.iter().copied());
        Ok(Self {
            cutoff,
            modes,
            support: vec![true; grid.len()],
            field,
        })
    }

    /// `cos(kx)`.
    pub fn single_mode(grid: &TorusGrid, k: usize) -> Result<Self> {
        Self::from_modes(grid, k, &[(k, 1.0, 0.0)])
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Largest wavenumber carrying a coefficient.
    pub fn k_max(&self) -> usize {
        self.modes.iter().map(|m| m.0).max().unwrap_or(self.cutoff)
    }

    pub fn modes(&self) -> &[(usize, f64, f64)] {
        &self.modes
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn coefficient_norm_sq(&self) -> f64 {
        self.modes.iter().map(|&(_, a, b)| a * a + b * b).sum()
    }

    /// `Σ (a_k² + b_k²) / k^p`.
    pub fn weighted_sum(&self, power: i32) -> f64 {
        self.modes
            .iter()
            .map(|&(k, a, b)| (a * a + b * b) / (k as f64).powi(power))
            .sum()
    }

    /// `min_Υ (1/Υ) Σ/k⁴ + Υ Σ/k²` over `Υ ∈ {2^-10, …, 2^10}`.
    pub fn envelope(&self) -> f64 {
        let (s4, s2) = (self.weighted_sum(4), self.weighted_sum(2));
        (-10..=10)
            .map(|i| {
                let upsilon = 2f64.powi(i);
                s4 / upsilon + upsilon * s2
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Draws a seeded field on `ω` and deflates every mode outside `[K, k_max]`
/// (`k_max` the 2/3 cutoff) in `L²(ω)`; the result vanishes off `ω`, has no
/// modes below `K` and is band-limited below `n/3`.
pub fn build_high_mode_perturbation(
    grid: &TorusGrid,
    omega: &[bool],
    cutoff: usize,
    seed: u64,
) -> Result<PerturbationSpectrum> {
    let n = grid.len();
    assert_eq!(omega.len(), n, "mask must match the grid");
    let k_max = grid.dealias_cutoff();
    let points: Vec<usize> = (0..n).filter(|&i| omega[i]).collect();
    if cutoff == 0 || cutoff > k_max {
        return Err(Error::DegenerateSupport(format!(
            "cutoff K = {cutoff} outside [1, {k_max}]"
        )));
    }
    if points.len() < 4 * cutoff {
        return Err(Error::DegenerateSupport(format!(
            "ω has {} nodes, need at least 4K = {}",
            points.len(),
            4 * cutoff
        )));
    }

    // columns: cos/sin restricted to ω for k < K and k_max < k ≤ n/2
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let excluded = (0..cutoff).chain(k_max + 1..=n / 2);
    for k in excluded {
        let kf = k as f64;
        columns.push(points.iter().map(|&i| (kf * grid.node(i)).cos()).collect());
        if k != 0 && k != n / 2 {
            columns.push(points.iter().map(|&i| (kf * grid.node(i)).sin()).collect());
        }
    }
    let rows = points.len();
    let a = DMatrix::from_fn(rows, columns.len(), |r, c| columns[c][r]);
    let svd = a.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sigma_max = svd.singular_values.max();
    let basis: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-11 * sigma_max)
        .collect();
    if basis.len() >= rows {
        return Err(Error::DegenerateSupport(format!(
            "excluded modes span all of L²(ω) ({} nodes); reduce K or refine the grid",
            rows
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut rest = nalgebra::DVector::from_vec(draw);
    let norm_draw = rest.norm();
    // two passes of Gram-Schmidt projection for orthogonality to rounding
    for _ in 0..2 {
        for &i in &basis {
            let col = u.column(i);
            let c = col.dot(&rest);
            rest.axpy(-c, &col, 1.0);
        }
    }
    if rest.norm() <= 1e-6 * norm_draw {
        return Err(Error::DegenerateSupport(
            "deflated draw vanishes; ω too small for K".into(),
        ));
    }

    let mut values = vec![0.0; n];
    for (&i, &v) in points.iter().zip(rest.iter()) {
        values[i] = v;
    }
    let raw = Field::new(values);
    let spectrum = grid.forward(&raw);
    let mut modes = Vec::with_capacity(k_max + 1 - cutoff);
    for k in cutoff..=k_max {
        modes.push((k, spectrum.cos_coefficient(k), spectrum.sin_coefficient(k)));
    }
    let total: f64 = modes.iter().map(|&(_, a, b)| a * a + b * b).sum();
    let scale = 1.0 / total.sqrt();
    let field = raw.scale(scale);
    let modes: Vec<_> = modes
        .into_iter()
        .map(|(k, a, b)| (k, a * scale, b * scale))
        .collect();

    let check = grid.forward(&field);
    let leak = (0..cutoff)
        .chain(k_max + 1..=n / 2)
        .map(|k| check.coefficient(k as i64).norm())
        .fold(0.0, f64::max);
    if leak > 1e-8 {
        return Err(Error::DegenerateSupport(format!(
            "excluded modes retain amplitude {leak:.2e} after deflation"
        )));
    }
    Ok(PerturbationSpectrum {
        cutoff,
        modes,
        support: omega.to_vec(),
        field,
    })
}

/// Mask of the nodes in `[start, end)` (angles in radians, wrapping).
pub fn arc_mask(grid: &TorusGrid, start: f64, end: f64) -> Vec<bool> {
    let two_pi = 2.0 * PI;
    let len = (end - start).rem_euclid(two_pi);
    grid.nodes()
        .map(|x| (x - start).rem_euclid(two_pi) < len)
        .collect()
}

/// `Z` and its derivative components for one spectrum.
#[derive(Debug, Clone)]
pub struct CorrectorExpansion {
    pub cutoff: usize,
    pub z: SpaceTimeField,
    pub l: SpaceTimeField,
    pub i: SpaceTimeField,
    pub j: SpaceTimeField,
    pub w: SpaceTimeField,
    pub u: SpaceTimeField,
    pub u_x: SpaceTimeField,
    pub u_xx: SpaceTimeField,
}

/// Assembles `Z`, `L`, `I`, `J`, `W` snapshot by snapshot from the state.
pub fn corrector_fields(
    grid: &TorusGrid,
    u: &SpaceTimeField,
    spec: &PerturbationSpectrum,
) -> Result<CorrectorExpansion> {
    if spec.k_max() > grid.dealias_cutoff() {
        return Err(Error::InvalidGrid(format!(
            "k_max = {} must stay below n/3 (cutoff {})",
            spec.k_max(),
            grid.dealias_cutoff()
        )));
    }
    let time = *u.time();
    let nodes = time.n_nodes();
    let mut out: [Vec<Field>; 7] = Default::default();
    for v in out.iter_mut() {
        v.reserve(nodes);
    }
    for jj in 0..nodes {
        let t = time.time(jj);
        let uj = u.snapshot(jj);
        let ux = grid.derivative(uj, 1);
        let uxx = grid.derivative(uj, 2);
        let mut amp = Vec::with_capacity(spec.modes.len());
        let mut slope = Vec::with_capacity(spec.modes.len());
        let mut lsum = Vec::with_capacity(spec.modes.len());
        let mut isum = Vec::with_capacity(spec.modes.len());
        let mut wsum = Vec::with_capacity(spec.modes.len());
        for &(k, a, b) in &spec.modes {
            let kf = k as f64;
            let s = kf * kf * t;
            let e = (-s).exp();
            let rise = -(-s).exp_m1();
            let phi = transient_profile(s);
            let k2 = kf * kf;
            let k3 = k2 * kf;
            amp.push((k, a * rise / k2, b * rise / k2));
            // 2φ/k³ (-a sin + b cos)
            slope.push((k, 2.0 * b * phi / k3, -2.0 * a * phi / k3));
            lsum.push((k, b * rise / kf, -a * rise / kf));
            let g = (-rise + 2.0 * s * e) / k2;
            isum.push((k, a * g, b * g));
            wsum.push((k, -b * phi / k3, a * phi / k3));
        }
        let amp = grid.from_modes(amp);
        let slope = grid.from_modes(slope);
        let lsum = grid.from_modes(lsum);
        let isum = grid.from_modes(isum);
        let w = grid.from_modes(wsum);
        out[0].push(uj.mul(&amp).add(&ux.mul(&slope)));
        out[1].push(uj.mul(&lsum));
        out[2].push(ux.mul(&isum));
        out[3].push(uxx.mul(&w).scale(-2.0));
        out[4].push(w);
        out[5].push(ux);
        out[6].push(uxx);
    }
    let [z, l, i, j, w, u_x, u_xx] = out.map(|v| SpaceTimeField::new(time, v));
    Ok(CorrectorExpansion {
        cutoff: spec.cutoff,
        z,
        l,
        i,
        j,
        w,
        u: u.clone(),
        u_x,
        u_xx,
    })
}

impl CorrectorExpansion {
    /// `max_t sup_x |∂x Z - (L + I + J)|`.
    pub fn derivative_identity_defect(&self, grid: &TorusGrid) -> f64 {
        (0..self.z.time().n_nodes())
            .map(|jj| {
                let dz = grid.derivative(self.z.snapshot(jj), 1);
                let sum = self
                    .l
                    .snapshot(jj)
                    .add(self.i.snapshot(jj))
                    .add(self.j.snapshot(jj));
                dz.sub(&sum).sup_norm()
            })
            .fold(0.0, f64::max)
    }

    /// `max_t K²‖W‖² / ‖∂x W‖²`; at most 1 since `W` has no modes below `K`.
    pub fn w_poincare_ratio(&self, grid: &TorusGrid) -> f64 {
        let k2 = (self.cutoff * self.cutoff) as f64;
        self.w
            .snapshots()
            .iter()
            .map(|w| {
                let grad = grid.h1_seminorm_sq(w);
                if grad == 0.0 {
                    0.0
                } else {
                    k2 * grid.l2_norm_sq(w) / grad
                }
            })
            .fold(0.0, f64::max)
    }
}

/// `∫_0^T ‖u̇ - Z‖²_{H¹} dt + ‖u̇(T) - Z(T)‖²`.
pub fn residual_energy(grid: &TorusGrid, u_dot: &SpaceTimeField, z: &SpaceTimeField) -> f64 {
    let time = *u_dot.time();
    let bulk = time.trapezoid(|j| grid.h1_norm_sq(&u_dot.snapshot(j).sub(z.snapshot(j))));
    bulk + grid.l2_norm_sq(&u_dot.last().sub(z.last()))
}

/// Quantities of the leading-order lower bound for one expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeadingTermReport {
    pub margin: f64,
    /// `∬_{(0,T)} L²`
    pub l2_lk: f64,
    /// `∬_{(0,T-ε)} L²`
    pub l2_lk_window: f64,
    /// `(min u)² π Σ (a²+b²)/k² ∫_0^{T-ε} (1-e^{-k²t})² dt`
    pub surrogate: f64,
    /// `∬_{(0,T)} (I + J)²`
    pub ij_sq: f64,
    pub ratio_ij_over_l: f64,
    /// `∬ Z²`
    pub z_sq: f64,
    /// `Σ (a²+b²)/k⁴`
    pub s4: f64,
    /// `∬Z² / Σ(a²+b²)/k⁴`
    pub c_hat: f64,
    pub lower_bound_holds: bool,
}

pub fn leading_term_check(
    grid: &TorusGrid,
    expansion: &CorrectorExpansion,
    spec: &PerturbationSpectrum,
    margin: f64,
) -> LeadingTermReport {
    let time = *expansion.z.time();
    let end = time.window_end(margin);
    let l_sq = |j: usize| grid.l2_norm_sq(expansion.l.snapshot(j));
    let l2_lk = time.trapezoid(l_sq);
    let l2_lk_window = time.trapezoid_to(end, l_sq);
    let d_min = expansion.u.min_to(end);
    let surrogate = d_min
        * d_min
        * PI
        * spec
            .modes
            .iter()
            .map(|&(k, a, b)| {
                let k2 = (k * k) as f64;
                (a * a + b * b) / k2
                    * time.trapezoid_to(end, |j| (-(-k2 * time.time(j)).exp_m1()).powi(2))
            })
            .sum::<f64>();
    let ij_sq =
        time.trapezoid(|j| grid.l2_norm_sq(&expansion.i.snapshot(j).add(expansion.j.snapshot(j))));
    let z_sq = expansion.z.l2_sq(grid);
    let s4 = spec.weighted_sum(4);
    LeadingTermReport {
        margin,
        l2_lk,
        l2_lk_window,
        surrogate,
        ij_sq,
        ratio_ij_over_l: if l2_lk > 0.0 { ij_sq / l2_lk } else { 0.0 },
        z_sq,
        s4,
        c_hat: if s4 > 0.0 { z_sq / s4 } else { 0.0 },
        lower_bound_holds: l2_lk_window >= surrogate - 1e-6,
    }
}

/// One row of a [`ScalingReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingRow {
    pub cutoff: usize,
    pub residual_energy: f64,
    pub envelope: f64,
    /// `Σ (a²+b²)/k²`
    pub leading_bound: f64,
    pub l2_lk: f64,
    /// Analytic lower bound for `∬_{(0,T-ε)} L²`.
    pub lower_bound_value: f64,
    pub ratio_ij_over_l: f64,
    pub derivative_defect: f64,
    pub w_poincare_ratio: f64,
    pub lower_bound_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `ln residual_energy` against `ln K`.
    pub slope: Option<f64>,
}

impl ScalingReport {
    pub fn from_rows(rows: Vec<ScalingRow>) -> Self {
        let points: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.residual_energy > 0.0)
            .map(|r| ((r.cutoff as f64).ln(), r.residual_energy.ln()))
            .collect();
        let slope = log_log_slope(&points);
        Self { rows, slope }
    }
}

fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// Requires `dt ≤ 0.25/K²` so the `e^{-K²t}` layer spans several steps.
pub fn check_layer_resolution(time: &TimeGrid, cutoff: usize) -> Result<()> {
    let limit = LAYER_RESOLUTION / (cutoff * cutoff) as f64;
    if time.dt() > limit * (1.0 + 1e-12) {
        Err(Error::ResolutionExceeded {
            dt: time.dt(),
            k: cutoff,
            limit,
        })
    } else {
        Ok(())
    }
}

/// Residual and leading-term quantities for one spectrum at a fixed state.
pub fn study_spectrum(
    problem: &ControlProblem<'_>,
    bundle: &AdjointBundle,
    spec: &PerturbationSpectrum,
    margin: f64,
) -> Result<ScalingRow> {
    if !problem.model.interaction.is_bilinear() {
        return Err(Error::Unsupported(
            "the corrector expansion assumes a bilinear control term".into(),
        ));
    }
    let grid = &problem.disc.space;
    check_layer_resolution(&problem.disc.time, spec.cutoff())?;
    let u_dot = problem.linearized(bundle, spec.field())?;
    let expansion = corrector_fields(grid, &bundle.u, spec)?;
    let residual = residual_energy(grid, &u_dot, &expansion.z);
    let leading = leading_term_check(grid, &expansion, spec, margin);
    Ok(ScalingRow {
        cutoff: spec.cutoff(),
        residual_energy: residual,
        envelope: spec.envelope(),
        leading_bound: spec.weighted_sum(2),
        l2_lk: leading.l2_lk,
        lower_bound_value: leading.surrogate,
        ratio_ij_over_l: leading.ratio_ij_over_l,
        derivative_defect: expansion.derivative_identity_defect(grid),
        w_poincare_ratio: expansion.w_poincare_ratio(grid),
        lower_bound_holds: leading.lower_bound_holds,
    })
}

/// Studies every spectrum at the state of `control`; spectra run in
/// parallel under the `parallel` feature.
pub fn residual_study(
    problem: &ControlProblem<'_>,
    control: &Control,
    specs: &[PerturbationSpectrum],
    margin: f64,
    exec: Execution,
) -> Result<ScalingReport> {
    let bundle = problem.bundle(control)?;
    residual_study_at(problem, &bundle, specs, margin, exec)
}

pub fn residual_study_at(
    problem: &ControlProblem<'_>,
    bundle: &AdjointBundle,
    specs: &[PerturbationSpectrum],
    margin: f64,
    exec: Execution,
) -> Result<ScalingReport> {
    for spec in specs {
        check_layer_resolution(&problem.disc.time, spec.cutoff())?;
    }
    let rows = exec.try_map(specs, |spec| study_spectrum(problem, bundle, spec, margin))?;
    Ok(ScalingReport::from_rows(rows))
}

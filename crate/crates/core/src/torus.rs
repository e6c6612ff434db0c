//! Collocation grid on the torus `[0, 2π)` and the spectral calculus built on it.
//!
//! A [`Field`] is a plain vector of nodal values; every operation that needs
//! the Fourier basis goes through a [`TorusGrid`], which owns the FFT plans.
//! Coefficients follow the convention
//!
//! ```text
//! f(x_j) = Σ_{k=-n/2}^{n/2-1} c_k e^{i k x_j},   c_k = (1/n) Σ_j f(x_j) e^{-i k x_j}
//! ```
//!
//! so that for a real field `a_k = 2 Re c_k`, `b_k = -2 Im c_k` (`k ≥ 1`) are
//! the cosine/sine amplitudes of `f = c_0 + Σ a_k cos(kx) + b_k sin(kx)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Uniform collocation grid with `n` nodes `x_j = 2πj/n`.
#[derive(Clone)]
pub struct TorusGrid {
    n: usize,
    spacing: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("n_points", &self.n)
            .field("spacing", &self.spacing)
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}

impl TorusGrid {
    /// Smallest admissible resolution.
    pub const MIN_POINTS: usize = 8;

    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < Self::MIN_POINTS || !n_points.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "n_points must be even and >= {}, got {n_points}",
                Self::MIN_POINTS
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n: n_points,
            spacing: 2.0 * PI / n_points as f64,
            forward: planner.plan_fft_forward(n_points),
            inverse: planner.plan_fft_inverse(n_points),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.spacing
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.n).map(move |j| self.node(j))
    }

    /// Largest wavenumber kept by the 2/3 rule. Products of two fields
    /// truncated at this cutoff alias only into discarded modes.
    pub fn dealias_cutoff(&self) -> usize {
        (self.n - 1) / 3
    }

    /// Signed wavenumber stored at FFT index `idx`, in `-n/2 ..= n/2-1`.
    pub fn wavenumber(&self, idx: usize) -> i64 {
        let n = self.n as i64;
        let i = idx as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    fn index_of(&self, k: i64) -> usize {
        k.rem_euclid(self.n as i64) as usize
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::new(self.nodes().map(f).collect())
    }

    pub fn constant(&self, value: f64) -> Field {
        Field::new(vec![value; self.n])
    }

    pub fn zeros(&self) -> Field {
        self.constant(0.0)
    }

    fn check(&self, f: &Field) {
        assert_eq!(
            f.len(),
            self.n,
            "field has {} values on a grid of {} points",
            f.len(),
            self.n
        );
    }

    pub fn forward(&self, f: &Field) -> SpectrumField {
        self.check(f);
        let mut buf: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
        SpectrumField { coeffs: buf }
    }

    /// Real part of the inverse transform. Spectra produced by [`forward`]
    /// and by wavenumber-diagonal operators keep conjugate symmetry, so the
    /// imaginary part is round-off.
    ///
    /// [`forward`]: TorusGrid::forward
    pub fn inverse(&self, s: &SpectrumField) -> Field {
        assert_eq!(s.coeffs.len(), self.n);
        let mut buf = s.coeffs.clone();
        self.inverse.process(&mut buf);
        Field::new(buf.into_iter().map(|c| c.re).collect())
    }

    /// Multiplies the spectrum by `(ik)^order`. The Nyquist mode has no real
    /// odd derivative and is dropped for odd orders.
    pub fn derivative(&self, f: &Field, order: u32) -> Field {
        let mut s = self.forward(f);
        self.differentiate_spectrum(&mut s, order);
        self.inverse(&s)
    }

    pub fn differentiate_spectrum(&self, s: &mut SpectrumField, order: u32) {
        let half = (self.n / 2) as i64;
        for (idx, c) in s.coeffs.iter_mut().enumerate() {
            let k = self.wavenumber(idx);
            if order % 2 == 1 && k == -half {
                *c = Complex64::new(0.0, 0.0);
                continue;
            }
            *c *= Complex64::new(0.0, k as f64).powu(order);
        }
    }

    /// Zeroes every mode with `|k|` above [`dealias_cutoff`](Self::dealias_cutoff).
    pub fn truncate_spectrum(&self, s: &mut SpectrumField) {
        let cut = self.dealias_cutoff() as i64;
        for (idx, c) in s.coeffs.iter_mut().enumerate() {
            if self.wavenumber(idx).abs() > cut {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    pub fn dealias(&self, f: &Field) -> Field {
        let mut s = self.forward(f);
        self.truncate_spectrum(&mut s);
        self.inverse(&s)
    }

    /// Product of the 2/3-truncated factors, itself truncated at the same
    /// cutoff. Retained modes of the result are exact.
    pub fn dealiased_product(&self, f: &Field, g: &Field) -> Field {
        let f = self.dealias(f);
        let g = self.dealias(g);
        self.dealias(&f.mul(&g))
    }

    /// Rectangle rule, exact for trigonometric polynomials of degree `< n`.
    pub fn integral(&self, f: &Field) -> f64 {
        self.check(f);
        self.spacing * f.values.iter().sum::<f64>()
    }

    pub fn inner(&self, f: &Field, g: &Field) -> f64 {
        self.check(f);
        self.check(g);
        self.spacing
            * f.values
                .iter()
                .zip(&g.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn l2_norm_sq(&self, f: &Field) -> f64 {
        self.inner(f, f)
    }

    /// `∫|∂x f|² = π Σ_{k≥1} k² (a_k² + b_k²)`, evaluated from the spectrum.
    pub fn h1_seminorm_sq(&self, f: &Field) -> f64 {
        let s = self.forward(f);
        let half = (self.n / 2) as i64;
        (1..half)
            .map(|k| (k * k) as f64 * s.mode_energy(k))
            .sum::<f64>()
            * PI
    }

    /// `‖f‖²_{L²} + ‖∂x f‖²_{L²}`.
    pub fn h1_norm_sq(&self, f: &Field) -> f64 {
        self.l2_norm_sq(f) + self.h1_seminorm_sq(f)
    }

    /// Builds the real field `Σ a_k cos(kx) + b_k sin(kx)` from `(k, a_k, b_k)` triples.
    pub fn from_modes(&self, modes: impl IntoIterator<Item = (usize, f64, f64)>) -> Field {
        let mut s = SpectrumField::zeros(self.n);
        for (k, a, b) in modes {
            let k = k as i64;
            if k == 0 {
                s.coeffs[0] += Complex64::new(a, 0.0);
                continue;
            }
            let c = Complex64::new(0.5 * a, -0.5 * b);
            let pos = self.index_of(k);
            let neg = self.index_of(-k);
            s.coeffs[pos] += c;
            s.coeffs[neg] += c.conj();
        }
        self.inverse(&s)
    }
}

/// Nodal values of a real function on a [`TorusGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::new(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        assert_eq!(self.len(), other.len());
        Field::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a - b)
    }

    /// Pointwise product without dealiasing.
    pub fn mul(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Field {
        self.map(|v| s * v)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + s * b)
    }
}

/// Discrete Fourier coefficients `c_k`, stored in FFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumField {
    coeffs: Vec<Complex64>,
}

impl SpectrumField {
    pub fn zeros(n: usize) -> Self {
        Self {
            coeffs: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coefficients_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// `c_k` for a signed wavenumber.
    pub fn coefficient(&self, k: i64) -> Complex64 {
        self.coeffs[k.rem_euclid(self.coeffs.len() as i64) as usize]
    }

    fn is_nyquist(&self, k: i64) -> bool {
        k == (self.coeffs.len() / 2) as i64
    }

    /// Cosine amplitude `a_k` (`k ≥ 0`); `a_0` is the mean.
    pub fn cos_coefficient(&self, k: usize) -> f64 {
        let k = k as i64;
        let c = self.coefficient(k);
        if k == 0 || self.is_nyquist(k) {
            c.re
        } else {
            2.0 * c.re
        }
    }

    /// Sine amplitude `b_k` (`k ≥ 0`); zero at `k = 0` and at Nyquist.
    pub fn sin_coefficient(&self, k: usize) -> f64 {
        let k = k as i64;
        if k == 0 || self.is_nyquist(k) {
            0.0
        } else {
            -2.0 * self.coefficient(k).im
        }
    }

    /// `a_k² + b_k²`.
    pub fn mode_energy(&self, k: i64) -> f64 {
        let k = k.unsigned_abs() as usize;
        let a = self.cos_coefficient(k);
        let b = self.sin_coefficient(k);
        a * a + b * b
    }

    /// Largest `|c_{-k}| - |conj(c_k)|` mismatch; zero for spectra of real fields.
    pub fn conjugate_asymmetry(&self) -> f64 {
        let n = self.coeffs.len() as i64;
        (1..n / 2)
            .map(|k| (self.coefficient(-k) - self.coefficient(k).conj()).norm())
            .fold(0.0, f64::max)
    }
}

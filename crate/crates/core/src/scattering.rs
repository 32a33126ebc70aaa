//! Stationary scattering off a finite-range potential.
//!
//! The solution is started as a pure transmitted wave on the far side of the
//! potential, `y = 1`, `y' = i k`, integrated across the interaction region
//! with adaptive Dormand–Prince steps and decomposed into incident and
//! reflected plane waves on the near side. With `hbar = 1`, `2m = 1` the
//! exterior wavenumber is `k = sqrt(E - V_ext)`.
//!
//! The same integration at complex `E` gives the analytically continued
//! amplitude `F(E) = y(x_L) + i y'(x_L) / k`, twice the reflected amplitude
//! relative to unit transmission. Its zeros are the R-zeros.

use crate::fit::{fit_power_law, PowerLawFit};
use crate::ode::{DormandPrince, OdeError, State};
use crate::par::{self, Execution};
use crate::potentials::{Constant, Potential, PotentialProfile};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScatteringError {
    #[error("energy {energy} is below the exterior potential {exterior}; no propagating channel")]
    NonPropagating { energy: f64, exterior: f64 },
    #[error("integration failed: {0}")]
    Integration(#[from] OdeError),
    #[error("energy grid must be strictly increasing")]
    UnsortedGrid,
    #[error("dip at E = {energy} is not resolved above the noise floor {floor:e}")]
    DipUnresolved { energy: f64, floor: f64 },
    #[error("no local minimum near E = {0}")]
    NoDip(f64),
}

/// A potential that is constant outside `[-support, support]`.
pub trait ScatteringPotential: Sync {
    fn value(&self, x: f64) -> f64;
    /// Half-width beyond which the potential equals [`exterior_value`](Self::exterior_value).
    fn support(&self) -> f64;
    fn exterior_value(&self) -> f64;
    /// Half-width of the region an absorber must stay clear of.
    fn core_extent(&self) -> f64 {
        self.support()
    }
    /// Positions of discontinuities, integrated across exactly.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl ScatteringPotential for Potential {
    fn value(&self, x: f64) -> f64 {
        PotentialProfile::value(self, x)
    }
    fn support(&self) -> f64 {
        self.effective_length() + self.window_tail()
    }
    fn exterior_value(&self) -> f64 {
        Potential::exterior_value(self)
    }
    fn core_extent(&self) -> f64 {
        self.effective_length()
    }
}

impl ScatteringPotential for Constant {
    fn value(&self, _x: f64) -> f64 {
        self.0
    }
    fn support(&self) -> f64 {
        0.0
    }
    fn exterior_value(&self) -> f64 {
        self.0
    }
}

/// Rectangular well `V = -depth` for `|x| < half_width`, zero outside.
#[derive(Debug, Clone, Copy)]
pub struct SquareWell {
    pub depth: f64,
    pub half_width: f64,
}

impl SquareWell {
    /// Closed-form reflectance from matching at both interfaces.
    pub fn exact_reflectance(&self, e: f64) -> f64 {
        let k = e.sqrt();
        let q = (e + self.depth).sqrt();
        let s = (2.0 * q * self.half_width).sin();
        let num = (k * k - q * q).powi(2) * s * s;
        num / (num + 4.0 * k * k * q * q)
    }
}

impl ScatteringPotential for SquareWell {
    fn value(&self, x: f64) -> f64 {
        if x.abs() < self.half_width {
            -self.depth
        } else {
            0.0
        }
    }
    fn support(&self) -> f64 {
        self.half_width
    }
    fn exterior_value(&self) -> f64 {
        0.0
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![-self.half_width, self.half_width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Incidence {
    /// Wave incident from `x = -inf` moving right.
    #[default]
    Left,
    /// Wave incident from `x = +inf` moving left.
    Right,
}

/// Amplitudes at one energy, referenced to the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringResult {
    pub energy: Complex64,
    pub r: Complex64,
    pub t: Complex64,
    pub reflectance: f64,
    /// `|R/T|`.
    pub ratio: f64,
    /// `|R|^2 + |T|^2 - 1`; only meaningful for real energy and potential.
    pub flux_error: f64,
    pub incidence: Incidence,
}

#[derive(Debug, Clone)]
pub struct ScatteringSolver {
    pub integrator: DormandPrince,
}

impl Default for ScatteringSolver {
    fn default() -> Self {
        Self {
            integrator: DormandPrince::with_tolerances(1e-11, 1e-13),
        }
    }
}

/// Raw outcome of one integration across the potential.
struct Sweep {
    k: Complex64,
    x_near: f64,
    x_far: f64,
    y: Complex64,
    dy: Complex64,
}

impl ScatteringSolver {
    pub fn with_tolerance(rtol: f64) -> Self {
        Self {
            integrator: DormandPrince::with_tolerances(rtol, rtol * 1e-2),
        }
    }

    fn integrate<P: ScatteringPotential + ?Sized>(
        &self,
        pot: &P,
        e: Complex64,
        incidence: Incidence,
    ) -> Result<Sweep, ScatteringError> {
        let k = (e - pot.exterior_value()).sqrt();
        let edge = pot.support();
        // Integrate from the transmission side towards the incidence side.
        let (x_far, x_near, dy0) = match incidence {
            Incidence::Left => (edge, -edge, Complex64::i() * k),
            Incidence::Right => (-edge, edge, -Complex64::i() * k),
        };
        let rhs = |x: f64, y: &State<2>| [y[1], y[0] * (pot.value(x) - e)];
        let mut stops: Vec<f64> = pot
            .breakpoints()
            .into_iter()
            .filter(|b| b.abs() < edge)
            .collect();
        stops.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if matches!(incidence, Incidence::Left) {
            stops.reverse();
        }
        stops.push(x_near);
        let mut x = x_far;
        let mut y: State<2> = [Complex64::new(1.0, 0.0), dy0];
        for stop in stops {
            let (yn, _) = self.integrator.integrate(&rhs, x, stop, y)?;
            y = yn;
            x = stop;
        }
        Ok(Sweep {
            k,
            x_near,
            x_far,
            y: y[0],
            dy: y[1],
        })
    }

    /// `F(E) = y + i y'/k` on the incidence side for left incidence.
    /// Vanishes exactly at R-zeros; purely imaginary at real `E` for even real potentials.
    pub fn reflection_zero_function<P: ScatteringPotential + ?Sized>(
        &self,
        pot: &P,
        e: Complex64,
    ) -> Result<Complex64, ScatteringError> {
        let s = self.integrate(pot, e, Incidence::Left)?;
        Ok(s.y + Complex64::i() * s.dy / s.k)
    }

    /// Scattering amplitudes at (possibly complex) energy `e`.
    pub fn solve_complex<P: ScatteringPotential + ?Sized>(
        &self,
        pot: &P,
        e: Complex64,
        incidence: Incidence,
    ) -> Result<ScatteringResult, ScatteringError> {
        let s = self.integrate(pot, e, incidence)?;
        let i = Complex64::i();
        let k = s.k;
        let (incident, reflected) = match incidence {
            Incidence::Left => (0.5 * (s.y - i * s.dy / k), 0.5 * (s.y + i * s.dy / k)),
            Incidence::Right => (0.5 * (s.y + i * s.dy / k), 0.5 * (s.y - i * s.dy / k)),
        };
        let span = (s.x_far - s.x_near).abs();
        let t = (-i * k * span).exp() / incident;
        let r = match incidence {
            Incidence::Left => reflected * (2.0 * i * k * s.x_near).exp() / incident,
            Incidence::Right => reflected * (-2.0 * i * k * s.x_near).exp() / incident,
        };
        let reflectance = r.norm_sqr();
        Ok(ScatteringResult {
            energy: e,
            r,
            t,
            reflectance,
            ratio: (r / t).norm(),
            flux_error: reflectance + t.norm_sqr() - 1.0,
            incidence,
        })
    }

    /// Real-energy scattering with the propagating-channel check.
    pub fn solve<P: ScatteringPotential + ?Sized>(
        &self,
        pot: &P,
        e: f64,
        incidence: Incidence,
    ) -> Result<ScatteringResult, ScatteringError> {
        let ext = pot.exterior_value();
        if !(e > ext) {
            return Err(ScatteringError::NonPropagating { energy: e, exterior: ext });
        }
        self.solve_complex(pot, Complex64::new(e, 0.0), incidence)
    }

    /// Scattering wavefunction for left incidence, normalised to unit transmitted
    /// amplitude at the right edge, sampled at increasing positions `xs`.
    pub fn wavefunction<P: ScatteringPotential + ?Sized>(
        &self,
        pot: &P,
        e: Complex64,
        xs: &[f64],
    ) -> Result<Vec<Complex64>, ScatteringError> {
        let k = (e - pot.exterior_value()).sqrt();
        let edge = pot.support();
        let rhs = |x: f64, y: &State<2>| [y[1], y[0] * (pot.value(x) - e)];
        let i = Complex64::i();
        let mut out = vec![Complex64::new(0.0, 0.0); xs.len()];
        // Points beyond the edge are exact plane waves.
        let inside: Vec<(usize, f64)> = xs
            .iter()
            .enumerate()
            .rev()
            .filter(|(_, x)| x.abs() <= edge)
            .map(|(j, x)| (j, *x))
            .collect();
        let samples: Vec<f64> = inside.iter().map(|(_, x)| *x).collect();
        let mut got = Vec::with_capacity(samples.len());
        let (end, _) = self.integrator.integrate_sampled(
            &rhs,
            edge,
            -edge,
            [Complex64::new(1.0, 0.0), i * k],
            &samples,
            |_, y| got.push(y[0]),
        )?;
        for ((j, _), v) in inside.iter().zip(got) {
            out[*j] = v;
        }
        let a = 0.5 * (end[0] - i * end[1] / k);
        let b = 0.5 * (end[0] + i * end[1] / k);
        for (j, &x) in xs.iter().enumerate() {
            if x > edge {
                out[j] = (i * k * (x - edge)).exp();
            } else if x < -edge {
                out[j] = a * (i * k * (x + edge)).exp() + b * (-i * k * (x + edge)).exp();
            }
        }
        Ok(out)
    }

    /// Reflectance on a strictly increasing grid, with every interior local
    /// minimum refined by bisection until its position is bracketed within `resolution`.
    pub fn reflectance_curve<P: ScatteringPotential + ?Sized>(
        &self,
        pot: &P,
        energies: &[f64],
        resolution: f64,
        exec: Execution,
    ) -> Result<Vec<ScatteringResult>, ScatteringError> {
        if energies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ScatteringError::UnsortedGrid);
        }
        let solve = |e: &f64| self.solve(pot, *e, Incidence::Left);
        let mut curve: Vec<ScatteringResult> =
            par::map(exec, energies, solve).into_iter().collect::<Result<_, _>>()?;
        loop {
            let mut inserts = Vec::new();
            for i in 1..curve.len().saturating_sub(1) {
                let (a, b, c) = (&curve[i - 1], &curve[i], &curve[i + 1]);
                if b.reflectance <= a.reflectance && b.reflectance <= c.reflectance {
                    if b.energy.re - a.energy.re > resolution {
                        inserts.push(0.5 * (a.energy.re + b.energy.re));
                    }
                    if c.energy.re - b.energy.re > resolution {
                        inserts.push(0.5 * (b.energy.re + c.energy.re));
                    }
                }
            }
            if inserts.is_empty() {
                break;
            }
            inserts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            inserts.dedup();
            let extra: Vec<ScatteringResult> =
                par::map(exec, &inserts, solve).into_iter().collect::<Result<_, _>>()?;
            curve.extend(extra);
            curve.sort_by(|a, b| a.energy.re.partial_cmp(&b.energy.re).unwrap());
        }
        Ok(curve)
    }
}

/// Interior local minima of a reflectance curve, as indices.
pub fn local_minima(curve: &[ScatteringResult]) -> Vec<usize> {
    (1..curve.len().saturating_sub(1))
        .filter(|&i| {
            curve[i].reflectance < curve[i - 1].reflectance && curve[i].reflectance <= curve[i + 1].reflectance
        })
        .collect()
}

/// Which quantity a dip exponent is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DipQuantity {
    /// `|R|^2`.
    #[default]
    Reflectance,
    /// `|R/T|`.
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipCharacterization {
    pub energy: f64,
    pub depth: f64,
    pub exponent: f64,
    pub prefactor: f64,
    /// Offsets `|E - E_dip|` spanned by the fitted points.
    pub fit_window: (f64, f64),
    pub fit_residual: f64,
    pub points: usize,
    pub noise_floor: f64,
}

/// Pooled log-log slope of the dip lineshape around `e_dip`.
///
/// Only points whose value lies between `10 * depth` and `1000 * depth` enter
/// the fit, where `depth` is the smallest sampled value clamped from below by
/// the integration noise floor.
pub fn characterize_dip(
    curve: &[ScatteringResult],
    e_dip: f64,
    quantity: DipQuantity,
) -> Result<DipCharacterization, ScatteringError> {
    let value = |r: &ScatteringResult| match quantity {
        DipQuantity::Reflectance => r.reflectance,
        DipQuantity::Ratio => r.ratio,
    };
    // Amplitude error scales with the flux defect; the reflectance error with its square.
    let amp_noise = curve
        .iter()
        .map(|r| r.flux_error.abs())
        .fold(0.0, f64::max)
        .max(1e-13)
        * 10.0;
    let floor = match quantity {
        DipQuantity::Reflectance => amp_noise * amp_noise,
        DipQuantity::Ratio => amp_noise,
    };
    let depth = curve
        .iter()
        .filter(|r| (r.energy.re - e_dip).abs() > 0.0)
        .map(value)
        .fold(f64::INFINITY, f64::min)
        .max(floor);
    if !depth.is_finite() {
        return Err(ScatteringError::NoDip(e_dip));
    }
    let (lo, hi) = (10.0 * depth, 1e3 * depth);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let (mut left, mut right) = (0, 0);
    for r in curve {
        let v = value(r);
        let d = (r.energy.re - e_dip).abs();
        if d > 0.0 && v >= lo && v <= hi {
            xs.push(d);
            ys.push(v);
            if r.energy.re < e_dip {
                left += 1;
            } else {
                right += 1;
            }
        }
    }
    if left < 2 || right < 2 {
        return Err(ScatteringError::DipUnresolved { energy: e_dip, floor });
    }
    let fit: PowerLawFit = fit_power_law(&xs, &ys).ok_or(ScatteringError::DipUnresolved { energy: e_dip, floor })?;
    let wmin = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let wmax = xs.iter().cloned().fold(0.0, f64::max);
    Ok(DipCharacterization {
        energy: e_dip,
        depth,
        exponent: fit.exponent,
        prefactor: fit.prefactor,
        fit_window: (wmin, wmax),
        fit_residual: fit.residual,
        points: fit.points,
        noise_floor: floor,
    })
}

/// Energies `e_dip ± offset` with offsets log-spaced over `[min_offset, max_offset]`.
pub fn dip_probe_grid(e_dip: f64, min_offset: f64, max_offset: f64, per_decade: usize) -> Vec<f64> {
    let decades = (max_offset / min_offset).log10();
    let n = (decades * per_decade as f64).ceil() as usize;
    let offsets: Vec<f64> = (0..=n)
        .map(|j| min_offset * 10f64.powf(decades * j as f64 / n.max(1) as f64))
        .collect();
    let mut grid: Vec<f64> = offsets.iter().rev().map(|d| e_dip - d).collect();
    grid.extend(offsets.iter().map(|d| e_dip + d));
    grid
}

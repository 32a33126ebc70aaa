//! Finite-difference Schrödinger operator with complex absorbing boundaries.
//!
//! `H = -d²/dx² + V(x) + W(x)` on the interior points of a uniform grid with
//! Dirichlet ends. The kinetic term is the second-order three-point stencil,
//! so `H` is tridiagonal; it is stored that way and expanded to a dense matrix
//! only on request.
//!
//! Two absorbers are available. The complex absorbing potential `W` is
//! `-i eta ((x - x_R)/d)^order` on the right; in R-zero mode the left one
//! carries the opposite sign, feeding a right-moving wave in from the left and
//! swallowing it on the right. In resonance mode both sides absorb.
//!
//! Exterior complex scaling instead continues `x` into the complex plane
//! beyond an onset, `dz/dx = 1 + (e^{±i theta} - 1) s(x)` with a smooth step
//! `s`, and discretizes `-(1/z') d/dx (1/z') d/dx` in conservative form. Where
//! the potential is constant the continuation is exact, so the eigenvalues do
//! not depend on the angle beyond discretization error.

use crate::eigensolver::{CMatrix, EigenError, LinearOperator, ShiftedSolver};
use crate::scattering::ScatteringPotential;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

type C64 = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HamiltonianError {
    #[error("grid needs at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("grid bounds must satisfy x_min < x_max, got [{0}, {1}]")]
    BadBounds(f64, f64),
    #[error("absorber onset {onset} lies inside the potential support {support}")]
    ClippedCap { onset: f64, support: f64 },
    #[error("absorber strength and width must be positive")]
    BadCap,
    #[error("grid [{0}, {1}] is not symmetric about the origin")]
    AsymmetricGrid(f64, f64),
}

pub const MIN_POINTS: usize = 64;

/// Uniform grid of `n_points` interior nodes strictly between `x_min` and `x_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self, HamiltonianError> {
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(HamiltonianError::BadBounds(x_min, x_max));
        }
        if n_points < MIN_POINTS {
            return Err(HamiltonianError::TooFewPoints {
                min: MIN_POINTS,
                got: n_points,
            });
        }
        Ok(Self {
            x_min,
            x_max,
            n_points,
        })
    }

    /// Symmetric grid `[-half, half]` with spacing as close to `h` as the count allows.
    pub fn symmetric_with_spacing(half: f64, h: f64) -> Result<Self, HamiltonianError> {
        let n = ((2.0 * half / h).round() as usize).saturating_sub(1);
        Self::new(-half, half, n)
    }

    pub fn spacing(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points + 1) as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + (j + 1) as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.x(j)).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (self.x_min + self.x_max).abs() <= 1e-12 * (self.x_max - self.x_min)
    }

    /// Same bounds with `factor` times as many intervals.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            n_points: (self.n_points + 1) * factor - 1,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CapMode {
    /// Gain on the left, loss on the right.
    #[default]
    Rzero,
    /// Loss on both sides.
    Resonance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapSpec {
    /// `eta`
    pub strength: f64,
    /// Ramp length `d` measured inward from each grid end.
    pub width: f64,
    pub order: u32,
    pub mode: CapMode,
}

impl CapSpec {
    pub fn new(strength: f64, width: f64) -> Self {
        Self {
            strength,
            width,
            order: 2,
            mode: CapMode::Rzero,
        }
    }

    pub fn with_mode(mut self, mode: CapMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_strength(mut self, strength: f64) -> Self {
        self.strength = strength;
        self
    }

    /// Quarter-window ramps with `eta = 50 E_max`.
    pub fn window_default(grid: &Grid, e_max: f64) -> Self {
        Self::new(50.0 * e_max.max(1.0), 0.25 * (grid.x_max - grid.x_min))
    }

    pub fn validate(&self) -> Result<(), HamiltonianError> {
        if self.strength > 0.0 && self.width > 0.0 && self.order >= 1 {
            Ok(())
        } else {
            Err(HamiltonianError::BadCap)
        }
    }

    /// Imaginary potential at `x` for a grid spanning `[x_min, x_max]`.
    pub fn value(&self, x: f64, x_min: f64, x_max: f64) -> C64 {
        let right = x_max - self.width;
        let left = x_min + self.width;
        let ramp = |s: f64| self.strength * (s / self.width).powi(self.order as i32);
        if x > right {
            C64::new(0.0, -ramp(x - right))
        } else if x < left {
            let w = ramp(left - x);
            match self.mode {
                CapMode::Rzero => C64::new(0.0, w),
                CapMode::Resonance => C64::new(0.0, -w),
            }
        } else {
            C64::new(0.0, 0.0)
        }
    }
}

/// Smooth exterior complex scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSpec {
    /// Rotation angle `theta` in radians.
    pub angle: f64,
    /// `|x|` where the scaling starts.
    pub onset: f64,
    /// Length over which `dz/dx` turns from 1 to `e^{±i theta}`.
    pub ramp: f64,
    pub mode: CapMode,
}

impl ScalingSpec {
    pub fn new(angle: f64, onset: f64, ramp: f64) -> Self {
        Self {
            angle,
            onset,
            ramp,
            mode: CapMode::Rzero,
        }
    }

    pub fn with_angle(mut self, angle: f64) -> Self {
        self.angle = angle;
        self
    }

    pub fn with_mode(mut self, mode: CapMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), HamiltonianError> {
        let ok = self.angle > 0.0
            && self.angle < std::f64::consts::FRAC_PI_2
            && self.onset >= 0.0
            && self.ramp > 0.0;
        if ok {
            Ok(())
        } else {
            Err(HamiltonianError::BadCap)
        }
    }

    /// `dz/dx` at `x`.
    pub fn jacobian(&self, x: f64) -> C64 {
        let t = (x.abs() - self.onset) / self.ramp;
        let s = smooth_step(t);
        if s == 0.0 {
            return C64::new(1.0, 0.0);
        }
        let sign = match (self.mode, x > 0.0) {
            (_, true) | (CapMode::Resonance, false) => 1.0,
            (CapMode::Rzero, false) => -1.0,
        };
        C64::new(1.0, 0.0) + (C64::from_polar(1.0, sign * self.angle) - 1.0) * s
    }
}

/// `C^inf` step rising from 0 at `t <= 0` to 1 at `t >= 1`.
fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Absorber {
    Cap(CapSpec),
    Scaling(ScalingSpec),
}

/// Tridiagonal `H`; `lower[i] = H[i+1][i]`, `upper[i] = H[i][i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub grid: Grid,
    pub absorber: Option<Absorber>,
    pub diag: Vec<C64>,
    pub lower: Vec<C64>,
    pub upper: Vec<C64>,
    form: EnergyForm,
}

/// Pieces of the bilinear energy
/// `sum_j mid_j (u_j - u_{j-1})^2 / h^2 + sum_j local_j u_j^2 / node_j`
/// and its metric `sum_j u_j^2 / node_j`, with `u_{-1} = u_n = 0`.
#[derive(Debug, Clone, PartialEq)]
struct EnergyForm {
    /// `1/z'` at the nodes.
    node: Vec<C64>,
    /// `1/z'` at the cell midpoints `x_j - h/2`, `j = 0..=n`.
    mid: Vec<C64>,
    /// Potential plus absorbing potential at the nodes.
    local: Vec<C64>,
}

/// Builds `H` for `pot` on `grid`; the absorber ramps must lie outside the potential support.
pub fn assemble<P: ScatteringPotential + ?Sized>(
    pot: &P,
    grid: &Grid,
    cap: Option<&CapSpec>,
) -> Result<OperatorMatrix, HamiltonianError> {
    let support = pot.core_extent();
    if let Some(c) = cap {
        c.validate()?;
        let right = grid.x_max - c.width;
        let left = grid.x_min + c.width;
        if right < support {
            return Err(HamiltonianError::ClippedCap {
                onset: right,
                support,
            });
        }
        if left > -support {
            return Err(HamiltonianError::ClippedCap {
                onset: left,
                support,
            });
        }
    }
    let h = grid.spacing();
    let kin = 2.0 / (h * h);
    let local: Vec<C64> = (0..grid.n_points)
        .map(|j| {
            let x = grid.x(j);
            let w = cap.map_or(C64::new(0.0, 0.0), |c| c.value(x, grid.x_min, grid.x_max));
            C64::new(pot.value(x), 0.0) + w
        })
        .collect();
    let diag = local.iter().map(|v| v + kin).collect();
    let off = vec![C64::new(-1.0 / (h * h), 0.0); grid.n_points - 1];
    let one = C64::new(1.0, 0.0);
    Ok(OperatorMatrix {
        grid: *grid,
        absorber: cap.map(|c| Absorber::Cap(*c)),
        diag,
        lower: off.clone(),
        upper: off,
        form: EnergyForm {
            node: vec![one; grid.n_points],
            mid: vec![one; grid.n_points + 1],
            local,
        },
    })
}

/// Builds `H` with exterior complex scaling; the onset must clear the whole
/// potential support, tails included, and the scaled region must fit the grid.
pub fn assemble_scaled<P: ScatteringPotential + ?Sized>(
    pot: &P,
    grid: &Grid,
    scaling: &ScalingSpec,
) -> Result<OperatorMatrix, HamiltonianError> {
    scaling.validate()?;
    let support = pot.support();
    if scaling.onset < support {
        return Err(HamiltonianError::ClippedCap {
            onset: scaling.onset,
            support,
        });
    }
    if scaling.onset + scaling.ramp > grid.x_max.min(-grid.x_min) {
        return Err(HamiltonianError::BadCap);
    }
    let h = grid.spacing();
    let n = grid.n_points;
    let g = |x: f64| 1.0 / scaling.jacobian(x);
    let gc: Vec<C64> = (0..n).map(|j| g(grid.x(j))).collect();
    // g at the midpoints x_{j - 1/2}, j = 0..=n
    let gm: Vec<C64> = (0..=n).map(|j| g(grid.x(j) - 0.5 * h)).collect();
    let h2 = h * h;
    let local: Vec<C64> = (0..n).map(|j| C64::new(pot.value(grid.x(j)), 0.0)).collect();
    let diag = (0..n)
        .map(|j| gc[j] * (gm[j] + gm[j + 1]) / h2 + local[j])
        .collect();
    let lower = (0..n - 1).map(|j| -gc[j + 1] * gm[j + 1] / h2).collect();
    let upper = (0..n - 1).map(|j| -gc[j] * gm[j + 1] / h2).collect();
    Ok(OperatorMatrix {
        grid: *grid,
        absorber: Some(Absorber::Scaling(*scaling)),
        diag,
        lower,
        upper,
        form: EnergyForm {
            node: gc,
            mid: gm,
            local,
        },
    })
}

pub fn assemble_with<P: ScatteringPotential + ?Sized>(
    pot: &P,
    grid: &Grid,
    absorber: &Absorber,
) -> Result<OperatorMatrix, HamiltonianError> {
    match absorber {
        Absorber::Cap(c) => assemble(pot, grid, Some(c)),
        Absorber::Scaling(s) => assemble_scaled(pot, grid, s),
    }
}

impl OperatorMatrix {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn to_dense(&self) -> CMatrix {
        let n = self.dim();
        CMatrix::from_fn(n, |i, j| {
            if i == j {
                self.diag[i]
            } else if i == j + 1 {
                self.lower[j]
            } else if j == i + 1 {
                self.upper[i]
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    /// Eigenvalue estimate stationary in the error of `v`: the Rayleigh
    /// quotient in the bilinear form that makes `H` symmetric, evaluated from
    /// differences so the large kinetic terms never cancel.
    pub fn energy_quotient(&self, v: &[C64]) -> Option<C64> {
        let f = &self.form;
        let n = v.len();
        let h2 = self.grid.spacing().powi(2);
        let at = |j: usize| if j < n { v[j] } else { C64::new(0.0, 0.0) };
        let mut kinetic = C64::new(0.0, 0.0);
        for j in 0..=n {
            let prev = if j == 0 { C64::new(0.0, 0.0) } else { v[j - 1] };
            let d = at(j) - prev;
            kinetic += f.mid[j] * d * d;
        }
        let mut local = C64::new(0.0, 0.0);
        let mut den = C64::new(0.0, 0.0);
        for j in 0..n {
            let w = v[j] * v[j] / f.node[j];
            local += f.local[j] * w;
            den += w;
        }
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        (den.norm() > 1e-8 * norm).then(|| (kinetic / h2 + local) / den)
    }

    /// Same operator with complex-conjugated entries.
    pub fn conj(&self) -> Self {
        Self {
            diag: self.diag.iter().map(|d| d.conj()).collect(),
            lower: self.lower.iter().map(|d| d.conj()).collect(),
            upper: self.upper.iter().map(|d| d.conj()).collect(),
            form: EnergyForm {
                node: self.form.node.iter().map(|d| d.conj()).collect(),
                mid: self.form.mid.iter().map(|d| d.conj()).collect(),
                local: self.form.local.iter().map(|d| d.conj()).collect(),
            },
            ..self.clone()
        }
    }

    /// `max |(PT) H (PT)^-1 - H|`, with P the grid reflection and T complex conjugation.
    pub fn pt_defect(&self) -> Result<f64, HamiltonianError> {
        if !self.grid.is_symmetric() {
            return Err(HamiltonianError::AsymmetricGrid(self.grid.x_min, self.grid.x_max));
        }
        let n = self.dim();
        let d = (0..n).map(|i| (self.diag[n - 1 - i].conj() - self.diag[i]).norm());
        let o = (0..n - 1).map(|i| (self.upper[n - 2 - i].conj() - self.lower[i]).norm());
        Ok(d.chain(o).fold(0.0, f64::max))
    }
}

pub fn pt_defect(h: &OperatorMatrix) -> Result<f64, HamiltonianError> {
    h.pt_defect()
}

impl LinearOperator for OperatorMatrix {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn norm_inf(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i].norm();
                if i > 0 {
                    s += self.lower[i - 1].norm();
                }
                if i + 1 < n {
                    s += self.upper[i].norm();
                }
                s
            })
            .fold(0.0, f64::max)
    }

    fn stationary_value(&self, v: &[C64]) -> Option<C64> {
        self.energy_quotient(v)
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.lower[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    fn factor_shifted(&self, shift: C64) -> Result<Box<dyn ShiftedSolver + '_>, EigenError> {
        Ok(Box::new(TridiagonalLu::factor(
            &self.lower,
            &self.diag.iter().map(|d| d - shift).collect::<Vec<_>>(),
            &self.upper,
        )))
    }
}

/// LU factorisation of a general tridiagonal matrix with row interchanges.
pub struct TridiagonalLu {
    dl: Vec<C64>,
    d: Vec<C64>,
    du: Vec<C64>,
    du2: Vec<C64>,
    swapped: Vec<bool>,
}

impl TridiagonalLu {
    /// `lower[i] = A[i+1][i]`, `upper[i] = A[i][i+1]`.
    pub fn factor(lower: &[C64], diag: &[C64], upper: &[C64]) -> Self {
        let n = diag.len();
        let mut dl = lower.to_vec();
        let mut d = diag.to_vec();
        let mut du = upper.to_vec();
        let mut du2 = vec![C64::new(0.0, 0.0); n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        let scale = d
            .iter()
            .chain(&dl)
            .map(|z| z.norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        for i in 0..n.saturating_sub(1) {
            if d[i].norm() >= dl[i].norm() {
                if d[i].norm() == 0.0 {
                    d[i] = C64::new(f64::EPSILON * scale, 0.0);
                }
                let f = dl[i] / d[i];
                dl[i] = f;
                d[i + 1] -= f * du[i];
            } else {
                let f = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = f;
                let tmp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = tmp - f * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -f * du[i + 1];
                }
                swapped[i] = true;
            }
        }
        if n > 0 && d[n - 1].norm() == 0.0 {
            d[n - 1] = C64::new(f64::EPSILON * scale, 0.0);
        }
        Self {
            dl,
            d,
            du,
            du2,
            swapped,
        }
    }
}

impl ShiftedSolver for TridiagonalLu {
    fn solve(&self, b: &mut [C64]) {
        let n = self.d.len();
        if n == 0 {
            return;
        }
        for i in 0..n - 1 {
            if self.swapped[i] {
                let tmp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = tmp - self.dl[i] * b[i];
            } else {
                let bi = b[i];
                b[i + 1] -= self.dl[i] * bi;
            }
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensolver::{eig, eig_subset_near, SubsetOptions};
    use crate::potentials::{
        Constant, NoiseKind, NoiseSpec, Perturbation, Potential, PotentialSpec,
    };

    fn quartic() -> Potential {
        Potential::new(PotentialSpec::by_length(4.0, 3.0, 10.0)).unwrap()
    }

    #[test]
    fn particle_in_a_box() {
        let x = 2.0;
        for n in [127, 255] {
            let grid = Grid::new(0.0, x, n).unwrap();
            let h = assemble(&Constant(0.0), &grid, None).unwrap();
            let vals = eig(&h.to_dense()).unwrap();
            let low = vals.iter().map(|p| p.value.re).fold(f64::INFINITY, f64::min);
            let exact = (std::f64::consts::PI / x).powi(2);
            let dx = grid.spacing();
            assert!((low - exact).abs() < exact * dx * dx, "{low} vs {exact}");
        }
    }

    #[test]
    fn rzero_mode_is_pt_symmetric() {
        let grid = Grid::new(-12.0, 12.0, 400).unwrap();
        let cap = CapSpec::new(50.0, 6.0);
        let h = assemble(&quartic(), &grid, Some(&cap)).unwrap();
        assert!(h.pt_defect().unwrap() < 1e-12);
    }

    #[test]
    fn resonance_mode_only_absorbs() {
        let grid = Grid::new(-12.0, 12.0, 400).unwrap();
        let cap = CapSpec::new(50.0, 6.0).with_mode(CapMode::Resonance);
        let h = assemble(&quartic(), &grid, Some(&cap)).unwrap();
        assert!(h.diag.iter().all(|d| d.im <= 0.0));
        assert!(h.diag.iter().any(|d| d.im < 0.0));
    }

    #[test]
    fn noise_kind_controls_pt_defect() {
        let grid = Grid::new(-12.0, 12.0, 400).unwrap();
        let cap = CapSpec::new(50.0, 6.0);
        let noisy = |kind| {
            let spec = PotentialSpec::by_length(4.0, 3.0, 10.0).with_perturbation(
                Perturbation::Noise(NoiseSpec::new(kind, 0.01, 7)),
            );
            let h = assemble(&Potential::new(spec).unwrap(), &grid, Some(&cap)).unwrap();
            h.pt_defect().unwrap()
        };
        assert!(noisy(NoiseKind::Symmetric) < 1e-12);
        assert!(noisy(NoiseKind::ParityBreaking) > 1e-4);
    }

    #[test]
    fn clipped_absorber_is_rejected() {
        let grid = Grid::new(-5.0, 5.0, 400).unwrap();
        let cap = CapSpec::new(50.0, 3.0);
        assert!(matches!(
            assemble(&quartic(), &grid, Some(&cap)),
            Err(HamiltonianError::ClippedCap { .. })
        ));
        let skew = Grid::new(-12.0, 13.0, 400).unwrap();
        let h = assemble(&quartic(), &skew, Some(&CapSpec::new(50.0, 6.0))).unwrap();
        assert!(h.pt_defect().is_err());
    }

    #[test]
    fn tridiagonal_solver_matches_dense() {
        let grid = Grid::new(-12.0, 12.0, 200).unwrap();
        let h = assemble(&quartic(), &grid, Some(&CapSpec::new(50.0, 6.0))).unwrap();
        let shift = C64::new(3.0, 0.5);
        let b: Vec<C64> = (0..h.dim()).map(|i| C64::new((i as f64).sin(), 1.0)).collect();
        let mut x = b.clone();
        h.factor_shifted(shift).unwrap().solve(&mut x);
        let back = h.apply(&x);
        for i in 0..h.dim() {
            assert!((back[i] - shift * x[i] - b[i]).norm() < 1e-9);
        }
    }

    #[test]
    fn subset_near_agrees_with_dense_on_operator() {
        let grid = Grid::new(-10.0, 10.0, 300).unwrap();
        let pot = Potential::new(PotentialSpec::by_length(4.0, 2.0, 10.0)).unwrap();
        let h = assemble(&pot, &grid, Some(&CapSpec::new(100.0, 5.0))).unwrap();
        let full = eig(&h.to_dense()).unwrap();
        let shift = C64::new(1.0, 0.0);
        let near = eig_subset_near(&h, shift, 2, &[], &SubsetOptions::default()).unwrap();
        for p in &near {
            assert!(full.iter().any(|q| (q.value - p.value).norm() < 1e-8));
        }
        let mut conj_closed = true;
        for p in &full {
            conj_closed &= full
                .iter()
                .any(|q| (q.value - p.value.conj()).norm() < 1e-8 * p.value.norm().max(1.0));
        }
        assert!(conj_closed);
    }
}

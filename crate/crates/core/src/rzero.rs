//! R-zeros: complex energies at which a wave incident from the left is not reflected.
//!
//! A spectrum is computed in two passes. A survey diagonalises the absorber
//! Hamiltonian on a grid resolving the fastest exterior wave, with short strong
//! absorbers; it locates candidates but its absorbers still reflect a little.
//! Each candidate is then refined with long, gentle absorbers on three nested
//! grids and extrapolated in the grid spacing. A candidate is accepted when
//! its refined residual, its shift under doubled absorber strength and its
//! localisation in the survey all pass. Accepted values can be cross-checked
//! against zeros of the analytically continued reflection amplitude.

use crate::eigensolver::{
    eig, eig_in_disc, eig_subset_near, norm2, overlap, EigenError, EigenPair, LinearOperator,
    SubsetOptions,
};
use crate::hamiltonian::{
    assemble, assemble_with, Absorber, CapMode, CapSpec, Grid, HamiltonianError, OperatorMatrix, ScalingSpec,
};
use crate::par::{self, Execution};
use crate::potentials::{Potential, PotentialError, PotentialProfile, PotentialSpec, Truncation};
use crate::scattering::{ScatteringError, ScatteringSolver};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

type C64 = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RzeroError {
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Scattering(#[from] ScatteringError),
    #[error("no R-zero survived filtering; {} candidates rejected", .rejected.len())]
    EmptyAfterFilter { rejected: Vec<Rejected> },
    #[error("window upper edge {requested} exceeds the truncation-dominated ceiling {ceiling}")]
    AboveCeiling { requested: f64, ceiling: f64 },
    #[error("window upper edge {requested} exceeds the scanned range {e_max}")]
    AboveScan { requested: f64, e_max: f64 },
    #[error("reflection-root iteration from {guess} did not converge ({reason})")]
    RootNotConverged { guess: C64, reason: String },
    #[error("parameter values must be strictly monotone")]
    NonMonotone,
    #[error("invalid settings: {0}")]
    Settings(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SurveyMethod {
    /// Dense below `dense_limit` points, slicing above.
    #[default]
    Auto,
    Dense,
    /// Shift-and-invert discs tiled along the real axis.
    Slicing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RefineMethod {
    /// Exterior complex scaling; sensitivity from halving the angle.
    #[default]
    Scaling,
    /// Long quadratic absorber; its linear shift is extrapolated away.
    Cap,
}

/// Every knob of a spectrum computation. Absorbers left as `None` are derived
/// from the potential and the scan window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSettings {
    pub e_min: f64,
    pub e_max: f64,
    /// Candidates with `|Im E|` above this are not reported.
    pub im_max: f64,
    /// `|Im E|` below this counts as real.
    pub im_tol: f64,
    pub survey_method: SurveyMethod,
    pub dense_limit: usize,
    /// Largest exterior wavenumber times survey grid spacing.
    pub survey_kh: f64,
    pub survey_gap: f64,
    /// Side of the square cells tiling the scan window when slicing.
    pub survey_tile: f64,
    pub survey_cap: Option<CapSpec>,
    /// Largest exterior wavenumber times the coarsest refinement spacing.
    pub refine_kh: f64,
    pub refine_levels: usize,
    /// Levels are dropped while the finest grid exceeds this many points.
    pub refine_max_points: usize,
    pub refine_gap: f64,
    pub refine_method: RefineMethod,
    pub refine_cap: Option<CapSpec>,
    pub refine_scaling: Option<ScalingSpec>,
    /// Default complex-scaling angle in radians.
    pub scaling_angle: f64,
    /// Target absorber-induced energy error used to size automatic absorbers.
    pub cap_error_target: f64,
    /// Refinement moves to finer grids while the Richardson error estimate
    /// exceeds this times `max(1, |E|)`.
    pub grid_error_target: f64,
    pub residual_max: f64,
    pub sensitivity_max: f64,
    pub localization_min: f64,
    pub cross_check: bool,
    /// Compare against a survey at `ceiling_factor` times the length.
    pub ceiling_check: bool,
    pub ceiling_factor: f64,
}

impl Default for SpectrumSettings {
    fn default() -> Self {
        Self {
            e_min: 0.0,
            e_max: 25.0,
            im_max: 5.0,
            im_tol: 1e-6,
            survey_method: SurveyMethod::Auto,
            dense_limit: 400,
            survey_kh: 0.25,
            survey_gap: 1.0,
            survey_tile: 2.0,
            survey_cap: None,
            refine_kh: 0.3,
            refine_levels: 4,
            refine_max_points: 800_000,
            refine_gap: 2.0,
            refine_method: RefineMethod::Scaling,
            refine_cap: None,
            refine_scaling: None,
            scaling_angle: 0.6,
            cap_error_target: 2e-7,
            grid_error_target: 1e-9,
            residual_max: 1e-8,
            sensitivity_max: 1e-6,
            localization_min: 0.5,
            cross_check: true,
            ceiling_check: false,
            ceiling_factor: 1.5,
        }
    }
}

impl SpectrumSettings {
    pub fn window(mut self, e_min: f64, e_max: f64) -> Self {
        self.e_min = e_min;
        self.e_max = e_max;
        self
    }

    pub fn validate(&self) -> Result<(), RzeroError> {
        let bad = |m: &str| Err(RzeroError::Settings(m.to_string()));
        if !(self.e_max > self.e_min) {
            return bad("e_max must exceed e_min");
        }
        if !(self.im_max > 0.0 && self.im_tol > 0.0) {
            return bad("im_max and im_tol must be positive");
        }
        if !(self.survey_tile > 0.0) {
            return bad("survey_tile must be positive");
        }
        if !(self.survey_kh > 0.0 && self.refine_kh > 0.0) {
            return bad("grid resolution factors must be positive");
        }
        if self.refine_levels == 0 {
            return bad("refine_levels must be at least 1");
        }
        if !(self.cap_error_target > 0.0) {
            return bad("cap_error_target must be positive");
        }
        if !(self.grid_error_target > 0.0) {
            return bad("grid_error_target must be positive");
        }
        if self.ceiling_check && !(self.ceiling_factor > 1.0) {
            return bad("ceiling_factor must exceed 1");
        }
        Ok(())
    }
}

/// Grids and absorbers resolved for one potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub survey_grid: Grid,
    pub survey_cap: CapSpec,
    pub refine_grid: Grid,
    pub refine_absorber: Absorber,
    /// Nested refinement grids actually used.
    pub refine_levels: usize,
    #[serde(default)]
    pub refine_max_points: usize,
    #[serde(default)]
    pub grid_error_target: f64,
}

fn lowest_value(pot: &Potential) -> f64 {
    let edge = pot.effective_length() + pot.window_tail();
    let n = 4000;
    (0..=n)
        .map(|i| PotentialProfile::value(pot, -edge + 2.0 * edge * i as f64 / n as f64))
        .fold(pot.exterior_value(), f64::min)
}

impl Layout {
    pub fn resolve(pot: &Potential, s: &SpectrumSettings) -> Result<Self, RzeroError> {
        let l = pot.effective_length();
        let v_ext = pot.exterior_value();
        let k_max = (s.e_max - lowest_value(pot)).max(1.0).sqrt();
        let k_lo = (s.e_min.max(0.0) - v_ext).max(1.0).sqrt();
        let k_hi = (s.e_max - v_ext).max(1.0).sqrt();

        let half = 2.0 * (l + s.survey_gap);
        let survey_grid = Grid::symmetric_with_spacing(half, s.survey_kh / k_max)?;
        let survey_cap = s
            .survey_cap
            .unwrap_or_else(|| CapSpec::window_default(&survey_grid, s.e_max));

        let w = pot.spec().sharpness;
        let h0 = (s.refine_kh / k_max).min(1.0 / w);
        let (refine_absorber, refine_half) = match s.refine_method {
            RefineMethod::Cap => {
                // Onset reflection of a quadratic ramp shifts energies by about
                // 19 eta / (d^2 k^4); eta d / (6 k) = 40 keeps the far wall invisible.
                let cap = s.refine_cap.unwrap_or_else(|| {
                    let d = (4560.0 * k_hi / (s.cap_error_target * k_lo.powi(4)))
                        .cbrt()
                        .clamp(4.0, 5000.0);
                    CapSpec::new(240.0 * k_hi / d, d)
                });
                (Absorber::Cap(cap), l + s.refine_gap + cap.width)
            }
            RefineMethod::Scaling => {
                let sc = s.refine_scaling.unwrap_or_else(|| {
                    ScalingSpec::new(s.scaling_angle, pot.effective_length() + pot.window_tail(), 4.0)
                });
                // Decay of exp(-k sin(theta) x) to roundoff past the ramp, at
                // half the angle too.
                let decay = (36.0 / (k_lo * (0.5 * sc.angle).sin())).clamp(4.0, 400.0);
                (Absorber::Scaling(sc), sc.onset + sc.ramp + decay)
            }
        };
        let refine_grid = Grid::symmetric_with_spacing(refine_half, h0)?;
        let refine_levels = (1..=s.refine_levels)
            .rev()
            .find(|&k| refine_grid.refined(1 << (k - 1)).n_points <= s.refine_max_points)
            .unwrap_or(1);
        Ok(Self {
            survey_grid,
            survey_cap,
            refine_grid,
            refine_absorber,
            refine_levels,
            refine_max_points: s.refine_max_points,
            grid_error_target: s.grid_error_target,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RzeroKind {
    Real,
    PairMember,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RZero {
    pub energy: C64,
    /// Backward error `|H v - E v| / (|H| |v|)` on the finest grid.
    pub residual: f64,
    /// `|Delta E|` when the refinement absorber strength is doubled.
    pub cap_sensitivity: f64,
    /// Fraction of the survey eigenvector weight inside `|x| <= L_eff`.
    pub localization: f64,
    pub kind: RzeroKind,
    pub survey_energy: C64,
    /// Zero of the reflection amplitude found from this value, if attempted and converged.
    pub reflection_root: Option<C64>,
    /// Richardson error estimate of the refined value.
    #[serde(default)]
    pub grid_error: f64,
}

impl RZero {
    pub fn reflection_agreement(&self) -> Option<f64> {
        self.reflection_root.map(|r| (r - self.energy).norm())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    pub survey_energy: C64,
    pub refined: Option<C64>,
    pub residual: f64,
    pub cap_sensitivity: f64,
    pub localization: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Unbroken,
    Mixed,
    Broken,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Unbroken => "unbroken",
            Phase::Mixed => "mixed",
            Phase::Broken => "broken",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub spec: PotentialSpec,
    pub settings: SpectrumSettings,
    pub layout: Layout,
    /// Sorted by real part.
    pub rzeros: Vec<RZero>,
    pub rejected: Vec<Rejected>,
    pub phase: Phase,
    pub e_max: f64,
    /// Lowest energy at which the survey moved under a longer truncation.
    pub ceiling: Option<f64>,
}

impl Spectrum {
    pub fn real_energies(&self) -> Vec<f64> {
        self.rzeros
            .iter()
            .filter(|r| r.kind == RzeroKind::Real)
            .map(|r| r.energy.re)
            .collect()
    }

    pub fn lowest_real(&self) -> Option<f64> {
        self.real_energies().into_iter().next()
    }

    /// Largest distance from a non-real R-zero to the nearest conjugate of another.
    pub fn pairing_error(&self) -> f64 {
        self.rzeros
            .iter()
            .filter(|r| r.kind == RzeroKind::PairMember)
            .map(|r| {
                self.rzeros
                    .iter()
                    .filter(|q| q.kind == RzeroKind::PairMember)
                    .map(|q| (q.energy - r.energy.conj()).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }
}

/// A candidate from the survey.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyMode {
    pub energy: C64,
    pub residual: f64,
    pub localization: f64,
}

fn localization(grid: &Grid, v: &[C64], l: f64) -> f64 {
    let total: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    let inside: f64 = v
        .iter()
        .enumerate()
        .filter(|(j, _)| grid.x(*j).abs() <= l)
        .map(|(_, z)| z.norm_sqr())
        .sum();
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}

fn in_region(e: C64, s: &SpectrumSettings, margin: f64) -> bool {
    e.re >= s.e_min - margin && e.re <= s.e_max + margin && e.im.abs() <= s.im_max + margin
}

/// Candidate R-zeros in the scan window of `settings`.
pub fn survey(
    pot: &Potential,
    layout: &Layout,
    settings: &SpectrumSettings,
) -> Result<Vec<SurveyMode>, RzeroError> {
    let op = assemble(pot, &layout.survey_grid, Some(&layout.survey_cap))?;
    let l = pot.effective_length();
    let dense = match settings.survey_method {
        SurveyMethod::Dense => true,
        SurveyMethod::Slicing => false,
        SurveyMethod::Auto => op.dim() <= settings.dense_limit,
    };
    // A parity-symmetric potential with gain/loss absorbers is PT-symmetric:
    // its spectrum is closed under conjugation and partners share localization.
    let mirrored = pot.is_parity_symmetric() && layout.survey_cap.mode == CapMode::Rzero;
    let pairs = if dense {
        eig(&op.to_dense())?
    } else {
        let im_lo = if mirrored { 0.0 } else { -settings.im_max };
        let cells = |lo: f64, hi: f64| {
            let n = ((hi - lo) / settings.survey_tile).ceil().max(1.0) as usize;
            let side = (hi - lo) / n as f64;
            ((0..n).map(move |i| lo + (i as f64 + 0.5) * side), side)
        };
        let (res, dre) = cells(settings.e_min, settings.e_max);
        let (ims, dim) = cells(im_lo, settings.im_max);
        let radius = 0.5 * dre.hypot(dim) * (1.0 + 1e-6);
        let ims: Vec<f64> = ims.collect();
        let centers: Vec<C64> = res
            .flat_map(|re| ims.iter().map(move |&im| C64::new(re, im)))
            .collect();
        let tiles = par::map(Execution::default(), &centers, |c| {
            eig_in_disc(&op, *c, radius, &SubsetOptions::default())
        });
        let mut all: Vec<EigenPair> = Vec::new();
        for t in tiles {
            for p in t? {
                let dup = all
                    .iter()
                    .any(|q| (q.value - p.value).norm() <= 1e-6 * p.value.norm().max(1.0));
                if !dup {
                    all.push(p);
                }
            }
        }
        all
    };
    let pairs: Vec<EigenPair> = if mirrored && !dense {
        let mut out = Vec::with_capacity(2 * pairs.len());
        for p in pairs {
            if p.value.im > settings.im_tol {
                let mut q = p.clone();
                q.value = q.value.conj();
                q.vector = q.vector.iter().rev().map(|z| z.conj()).collect();
                out.push(q);
                out.push(p);
            } else if p.value.im >= -settings.im_tol {
                out.push(p);
            }
        }
        out
    } else {
        pairs
    };
    let mut modes: Vec<SurveyMode> = pairs
        .into_iter()
        .filter(|p| in_region(p.value, settings, 0.0))
        .map(|p| SurveyMode {
            energy: p.value,
            residual: p.residual,
            localization: localization(&layout.survey_grid, &p.vector, l),
        })
        .collect();
    modes.sort_by(|a, b| a.energy.re.total_cmp(&b.energy.re));
    Ok(modes)
}

/// Richardson extrapolation of values computed at spacings `h, h/2, h/4, ...`
/// for an error series in even powers of `h`.
pub fn richardson(values: &[C64]) -> C64 {
    let mut t: Vec<C64> = values.to_vec();
    for j in 1..values.len() {
        let f = 4f64.powi(j as i32);
        for i in (j..values.len()).rev() {
            t[i] = t[i] + (t[i] - t[i - 1]) / (f - 1.0);
        }
    }
    *t.last().expect("at least one level")
}

/// Refined eigenvalue from nested grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub energy: C64,
    /// Per-level eigenvalues, coarsest first.
    pub levels: Vec<C64>,
    pub residual: f64,
    pub cap_sensitivity: f64,
    /// Change of the extrapolated value when the coarsest level is dropped;
    /// NaN with fewer than two levels.
    pub grid_error: f64,
}

/// Richardson error estimate: extrapolation with and without the coarsest level.
pub fn grid_error(values: &[C64]) -> f64 {
    match values.len() {
        0 | 1 => f64::NAN,
        2 => (values[1] - values[0]).norm() / 3.0,
        _ => (richardson(values) - richardson(&values[1..])).norm(),
    }
}

fn eigenvalue_near(
    pot: &Potential,
    grid: &Grid,
    absorber: &Absorber,
    guess: C64,
    start: Option<Vec<C64>>,
) -> Result<EigenPair, RzeroError> {
    let op = assemble_with(pot, grid, absorber)?;
    let opts = SubsetOptions {
        guard: 1,
        ..SubsetOptions::default()
    };
    let start: Vec<Vec<C64>> = start.into_iter().collect();
    let mut pair = eig_subset_near(&op, guess, 1, &start, &opts)?.remove(0);
    pair.residual /= op.norm_inf();
    Ok(pair)
}

/// Linear interpolation of interior grid values onto the grid refined by 2.
fn prolong(v: &[C64]) -> Vec<C64> {
    let n = v.len();
    let at = |j: isize| {
        if j < 0 || j as usize >= n {
            C64::new(0.0, 0.0)
        } else {
            v[j as usize]
        }
    };
    (0..2 * n + 1)
        .map(|i| {
            if i % 2 == 1 {
                v[i / 2]
            } else {
                let j = (i / 2) as isize;
                0.5 * (at(j - 1) + at(j))
            }
        })
        .collect()
}

/// Eigenvalues nearest `guess` on `levels` nested grids, each level seeded
/// with the previous eigenvector.
fn ladder(
    pot: &Potential,
    grid: &Grid,
    absorber: &Absorber,
    levels: usize,
    guess: C64,
) -> Result<(Vec<C64>, EigenPair), RzeroError> {
    let mut e = guess;
    let mut vals = Vec::with_capacity(levels);
    let mut last: Option<EigenPair> = None;
    for lvl in 0..levels {
        let g = grid.refined(1 << lvl);
        let start = last.as_ref().map(|p| prolong(&p.vector));
        let pair = eigenvalue_near(pot, &g, absorber, e, start)?;
        e = pair.value;
        vals.push(e);
        last = Some(pair);
    }
    Ok((vals, last.expect("at least one level")))
}

/// Extrapolated eigenvalue nearest `guess` and its absorber sensitivity.
///
/// Grid error is removed by Richardson extrapolation over `levels` nested
/// grids. With complex scaling the sensitivity is the change of the
/// extrapolated value when the angle is halved. With an absorbing potential
/// the shift, linear in `eta` to leading order, is removed with finest-grid
/// runs at `2 eta` and `4 eta`, and the sensitivity is the change of that
/// corrected value when `eta` is doubled.
pub fn refine_candidate(
    pot: &Potential,
    layout: &Layout,
    levels: usize,
    guess: C64,
) -> Result<Refined, RzeroError> {
    let mut grid = layout.refine_grid;
    let (mut vals, mut pair) = ladder(pot, &grid, &layout.refine_absorber, levels, guess)?;
    // Near a coalescence the coarse levels can sit outside the h^2 regime;
    // slide the ladder to finer grids until the estimate settles.
    let target = layout.grid_error_target * guess.norm().max(1.0);
    while grid_error(&vals) > target && grid.refined(2 << (levels - 1)).n_points <= layout.refine_max_points {
        grid = grid.refined(2);
        let finest = grid.refined(1 << (levels - 1));
        pair = eigenvalue_near(pot, &finest, &layout.refine_absorber, pair.value, Some(prolong(&pair.vector)))?;
        vals.remove(0);
        vals.push(pair.value);
    }
    let e = pair.value;
    let err = grid_error(&vals);
    match layout.refine_absorber {
        Absorber::Scaling(sc) => {
            let rich = richardson(&vals);
            let half = Absorber::Scaling(sc.with_angle(0.5 * sc.angle));
            let (other, _) = ladder(pot, &grid, &half, levels, e)?;
            Ok(Refined {
                energy: rich,
                levels: vals,
                residual: pair.residual,
                cap_sensitivity: (richardson(&other) - rich).norm(),
                grid_error: err,
            })
        }
        Absorber::Cap(cap) => {
            let finest = grid.refined(1 << (levels - 1));
            let at = |f: f64| Absorber::Cap(cap.with_strength(f * cap.strength));
            let p2 = eigenvalue_near(pot, &finest, &at(2.0), e, Some(pair.vector.clone()))?;
            let e2 = p2.value;
            let e4 = eigenvalue_near(pot, &finest, &at(4.0), e2, Some(p2.vector))?.value;
            let d1 = e - e2;
            let d2 = e2 - e4;
            Ok(Refined {
                energy: richardson(&vals) + d1,
                levels: vals,
                residual: pair.residual,
                cap_sensitivity: (2.0 * d1 - d2).norm(),
                grid_error: err,
            })
        }
    }
}

/// Spectrum with the default parallel execution.
pub fn compute_spectrum(
    spec: &PotentialSpec,
    settings: &SpectrumSettings,
) -> Result<Spectrum, RzeroError> {
    compute_spectrum_with(spec, settings, Execution::default())
}

/// Refines survey candidates and sorts them into accepted and rejected.
fn admit(
    pot: &Potential,
    layout: &Layout,
    settings: &SpectrumSettings,
    modes: &[SurveyMode],
    exec: Execution,
    accepted: &mut Vec<RZero>,
    rejected: &mut Vec<Rejected>,
) {
    let solver = ScatteringSolver::default();
    let refined = par::map(exec, modes, |m| {
        let r = refine_candidate(pot, layout, layout.refine_levels, m.energy);
        let root = match (&r, settings.cross_check) {
            (Ok(r), true) => refine_by_reflection_root(pot, r.energy, &solver, &RootOptions::default())
                .ok()
                .map(|x| x.energy),
            _ => None,
        };
        (r, root)
    });

    for (m, (r, root)) in modes.iter().zip(refined) {
        let r = match r {
            Ok(r) => r,
            Err(e) => {
                rejected.push(Rejected {
                    survey_energy: m.energy,
                    refined: None,
                    residual: f64::NAN,
                    cap_sensitivity: f64::NAN,
                    localization: m.localization,
                    reason: format!("refinement failed: {e}"),
                });
                continue;
            }
        };
        let mut reasons = Vec::new();
        if !(r.residual < settings.residual_max) {
            reasons.push(format!("residual {:.2e}", r.residual));
        }
        if !(r.cap_sensitivity < settings.sensitivity_max) {
            reasons.push(format!("absorber sensitivity {:.2e}", r.cap_sensitivity));
        }
        if !(m.localization > settings.localization_min) {
            reasons.push(format!("localization {:.3}", m.localization));
        }
        if !in_region(r.energy, settings, 0.0) {
            reasons.push("refined value left the window".to_string());
        }
        if let Some(dup) = accepted
            .iter()
            .position(|a| (a.energy - r.energy).norm() < 1e-6 * r.energy.norm().max(1.0))
        {
            if accepted[dup].localization >= m.localization {
                reasons.push(format!("duplicate of {}", accepted[dup].energy));
            } else {
                let old = accepted.remove(dup);
                rejected.push(Rejected {
                    survey_energy: old.survey_energy,
                    refined: Some(old.energy),
                    residual: old.residual,
                    cap_sensitivity: old.cap_sensitivity,
                    localization: old.localization,
                    reason: format!("duplicate of {}", r.energy),
                });
            }
        }
        if reasons.is_empty() {
            accepted.push(RZero {
                energy: r.energy,
                residual: r.residual,
                cap_sensitivity: r.cap_sensitivity,
                localization: m.localization,
                kind: if r.energy.im.abs() < settings.im_tol {
                    RzeroKind::Real
                } else {
                    RzeroKind::PairMember
                },
                survey_energy: m.energy,
                reflection_root: root,
                grid_error: r.grid_error,
            });
        } else {
            rejected.push(Rejected {
                survey_energy: m.energy,
                refined: Some(r.energy),
                residual: r.residual,
                cap_sensitivity: r.cap_sensitivity,
                localization: m.localization,
                reason: reasons.join("; "),
            });
        }
    }
}

/// Conjugates of accepted pair members that have no accepted partner.
fn missing_partners(accepted: &[RZero]) -> Vec<SurveyMode> {
    accepted
        .iter()
        .filter(|a| a.kind == RzeroKind::PairMember)
        .filter(|a| {
            let c = a.energy.conj();
            !accepted
                .iter()
                .any(|b| (b.energy - c).norm() < 1e-6 * c.norm().max(1.0))
        })
        .map(|a| SurveyMode {
            energy: a.energy.conj(),
            residual: f64::NAN,
            localization: a.localization,
        })
        .collect()
}

pub fn compute_spectrum_with(
    spec: &PotentialSpec,
    settings: &SpectrumSettings,
    exec: Execution,
) -> Result<Spectrum, RzeroError> {
    settings.validate()?;
    let pot = Potential::new(spec.clone())?;
    let layout = Layout::resolve(&pot, settings)?;
    let modes = survey(&pot, &layout, settings)?;
    let mut rejected: Vec<Rejected> = Vec::new();
    let (modes, spread): (Vec<SurveyMode>, Vec<SurveyMode>) = modes
        .into_iter()
        .partition(|m| m.localization > settings.localization_min);
    for m in spread {
        rejected.push(Rejected {
            survey_energy: m.energy,
            refined: None,
            residual: f64::NAN,
            cap_sensitivity: f64::NAN,
            localization: m.localization,
            reason: format!("localization {:.3}", m.localization),
        });
    }

    let mut accepted: Vec<RZero> = Vec::new();
    admit(&pot, &layout, settings, &modes, exec, &mut accepted, &mut rejected);
    // Under PT symmetry pairs are exact. A survey can resolve only one member
    // of a nearly coalesced pair, so the partner is refined from the conjugate.
    if pot.is_parity_symmetric() {
        let partners = missing_partners(&accepted);
        admit(&pot, &layout, settings, &partners, exec, &mut accepted, &mut rejected);
    }
    if accepted.is_empty() {
        return Err(RzeroError::EmptyAfterFilter { rejected });
    }
    accepted.sort_by(|a, b| {
        a.energy
            .re
            .total_cmp(&b.energy.re)
            .then(a.energy.im.total_cmp(&b.energy.im))
    });
    let ceiling = if settings.ceiling_check {
        truncation_ceiling(&pot, &modes, settings)?
    } else {
        None
    };
    let phase = phase_of(&accepted, settings.e_min, settings.e_max);
    Ok(Spectrum {
        spec: spec.clone(),
        settings: settings.clone(),
        layout,
        rzeros: accepted,
        rejected,
        phase,
        e_max: settings.e_max,
        ceiling,
    })
}

/// Lowest survey energy that does not reappear when the truncation is lengthened.
fn truncation_ceiling(
    pot: &Potential,
    modes: &[SurveyMode],
    settings: &SpectrumSettings,
) -> Result<Option<f64>, RzeroError> {
    let mut longer = pot.spec().clone();
    let f = settings.ceiling_factor;
    longer.truncation = match longer.truncation {
        Truncation::ByLength(l) => Truncation::ByLength(l * f),
        Truncation::ByEnergy(b) => Truncation::ByEnergy(b * f.powf(longer.exponent)),
    };
    let lp = Potential::new(longer)?;
    let layout = Layout::resolve(&lp, settings)?;
    let other: Vec<SurveyMode> = survey(&lp, &layout, settings)?
        .into_iter()
        .filter(|m| m.localization > settings.localization_min)
        .collect();
    let matched = |e: C64, set: &[SurveyMode]| {
        set.iter()
            .any(|m| (m.energy - e).norm() <= 0.02 * e.norm().max(1.0))
    };
    let low = modes
        .iter()
        .filter(|m| !matched(m.energy, &other))
        .chain(other.iter().filter(|m| !matched(m.energy, modes)))
        .map(|m| m.energy.re)
        .fold(f64::INFINITY, f64::min);
    Ok(low.is_finite().then_some(low))
}

pub(crate) fn phase_of(rzeros: &[RZero], lo: f64, hi: f64) -> Phase {
    let inside: Vec<&RZero> = rzeros
        .iter()
        .filter(|r| r.energy.re >= lo && r.energy.re <= hi)
        .collect();
    let real = inside.iter().filter(|r| r.kind == RzeroKind::Real).count();
    if real == 0 {
        Phase::Broken
    } else if real == inside.len() {
        Phase::Unbroken
    } else {
        Phase::Mixed
    }
}

/// Phase of the R-zeros with real part in `window`.
pub fn classify(spectrum: &Spectrum, window: (f64, f64)) -> Result<Phase, RzeroError> {
    if window.1 > spectrum.e_max {
        return Err(RzeroError::AboveScan {
            requested: window.1,
            e_max: spectrum.e_max,
        });
    }
    if let Some(c) = spectrum.ceiling {
        if window.1 > c {
            return Err(RzeroError::AboveCeiling {
                requested: window.1,
                ceiling: c,
            });
        }
    }
    Ok(phase_of(&spectrum.rzeros, window.0, window.1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootOptions {
    /// Stop once `|R| < tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterates farther than this from the guess count as divergence.
    pub trust_radius: f64,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 60,
            trust_radius: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionRoot {
    pub energy: C64,
    /// `|R|` at the returned energy.
    pub reflection: f64,
    pub iterations: usize,
}

fn reflection_ratio(
    pot: &Potential,
    solver: &ScatteringSolver,
    e: C64,
) -> Result<(C64, f64), RzeroError> {
    let f = solver.reflection_zero_function(pot, e)?;
    let r = solver.solve_complex(pot, e, crate::scattering::Incidence::Left)?;
    Ok((f, r.r.norm()))
}

/// Secant iteration on the continued reflection amplitude, started at `guess`.
pub fn refine_by_reflection_root(
    pot: &Potential,
    guess: C64,
    solver: &ScatteringSolver,
    opts: &RootOptions,
) -> Result<ReflectionRoot, RzeroError> {
    let fail = |reason: String| RzeroError::RootNotConverged { guess, reason };
    let scale = guess.norm().max(1.0);
    let mut e0 = guess;
    let mut e1 = guess + 1e-4 * scale;
    let (mut f0, _) = reflection_ratio(pot, solver, e0)?;
    let (mut f1, mut r1) = reflection_ratio(pot, solver, e1)?;
    for it in 1..=opts.max_iter {
        let den = f1 - f0;
        if den.norm() == 0.0 {
            return Err(fail("secant slope vanished".into()));
        }
        let e2 = e1 - f1 * (e1 - e0) / den;
        if !(e2.re.is_finite() && e2.im.is_finite()) || (e2 - guess).norm() > opts.trust_radius
        {
            return Err(fail(format!("iterate {e2} left the trust region")));
        }
        let step = (e2 - e1).norm();
        e0 = e1;
        f0 = f1;
        e1 = e2;
        (f1, r1) = reflection_ratio(pot, solver, e1)?;
        if r1 < opts.tol && step < 1e-11 * scale {
            return Ok(ReflectionRoot {
                energy: e1,
                reflection: r1,
                iterations: it,
            });
        }
    }
    Err(fail(format!("|R| = {r1:.2e} after {} iterations", opts.max_iter)))
}

/// Convenience wrapper building the potential from a spec.
pub fn refine_spec_by_reflection_root(
    spec: &PotentialSpec,
    guess: C64,
) -> Result<ReflectionRoot, RzeroError> {
    let pot = Potential::new(spec.clone())?;
    refine_by_reflection_root(&pot, guess, &ScatteringSolver::default(), &RootOptions::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpCandidate {
    pub p_star: f64,
    pub e_star: f64,
    /// Distance between the two real eigenvalues at the real-side bracket end.
    pub min_gap: f64,
    pub vector_overlap: f64,
    /// Final bracket `(real side, complex side)` in the exponent.
    pub bracket: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EpSearch {
    pub accepted: Vec<EpCandidate>,
    /// Merges whose eigenvectors did not coalesce.
    pub ambiguous: Vec<EpCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpSettings {
    pub p_tol: f64,
    pub overlap_min: f64,
    pub max_bisections: usize,
}

impl Default for EpSettings {
    fn default() -> Self {
        Self {
            p_tol: 1e-7,
            overlap_min: 0.99,
            max_bisections: 60,
        }
    }
}

/// Eigenvalues in a band on the coarsest refinement grid, used for tracking.
struct Tracker<'a> {
    family: &'a (dyn Fn(f64) -> PotentialSpec + Sync),
    settings: SpectrumSettings,
}

struct BandPoint {
    p: f64,
    values: Vec<C64>,
}

impl Tracker<'_> {
    fn operator(&self, p: f64) -> Result<(Potential, OperatorMatrix), RzeroError> {
        let pot = Potential::new((self.family)(p))?;
        let layout = Layout::resolve(&pot, &self.settings)?;
        let op = assemble_with(&pot, &layout.refine_grid, &layout.refine_absorber)?;
        Ok((pot, op))
    }

    fn band(&self, p: f64) -> Result<BandPoint, RzeroError> {
        let pot = Potential::new((self.family)(p))?;
        let layout = Layout::resolve(&pot, &self.settings)?;
        let modes = survey(&pot, &layout, &self.settings)?;
        let (_, op) = self.operator(p)?;
        let mut values: Vec<C64> = Vec::new();
        for m in modes.iter().filter(|m| m.localization > self.settings.localization_min) {
            let pair = eig_subset_near(&op, m.energy, 1, &[], &SubsetOptions::default())?;
            let v = pair[0].value;
            if in_region(v, &self.settings, 0.0)
                && !values.iter().any(|u| (u - v).norm() < 1e-8 * v.norm().max(1.0))
            {
                values.push(v);
            }
        }
        values.sort_by(|a, b| a.re.total_cmp(&b.re));
        Ok(BandPoint { p, values })
    }

    /// The two eigenvalues nearest `center` with their vectors.
    fn pair_near(&self, p: f64, center: C64) -> Result<Vec<EigenPair>, RzeroError> {
        let (_, op) = self.operator(p)?;
        Ok(eig_subset_near(&op, center, 2, &[], &SubsetOptions::default())?)
    }
}

fn real_count(values: &[C64], tol: f64) -> usize {
    values.iter().filter(|v| v.im.abs() < tol).count()
}

/// Follows R-zeros in `band` across the exponents `ps` and bisects every
/// interval where two real values turn into a conjugate pair (or back).
pub fn track_and_find_ep(
    family: &(dyn Fn(f64) -> PotentialSpec + Sync),
    ps: &[f64],
    band: (f64, f64),
    base: &SpectrumSettings,
    ep: &EpSettings,
    exec: Execution,
) -> Result<EpSearch, RzeroError> {
    let increasing = ps.windows(2).all(|w| w[1] > w[0]);
    let decreasing = ps.windows(2).all(|w| w[1] < w[0]);
    if ps.len() < 2 || !(increasing || decreasing) {
        return Err(RzeroError::NonMonotone);
    }
    let settings = base.clone().window(band.0, band.1);
    let tracker = Tracker {
        family,
        settings: settings.clone(),
    };
    let points: Vec<BandPoint> = par::map(exec, ps, |p| tracker.band(*p))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let tol = settings.im_tol;
    let mut out = EpSearch::default();
    for w in points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (ra, rb) = (real_count(&a.values, tol), real_count(&b.values, tol));
        if ra == rb {
            continue;
        }
        let (real_side, complex_side) = if ra > rb { (a, b) } else { (b, a) };
        // The new pair sits where two real values vanished.
        let pair = complex_side
            .values
            .iter()
            .filter(|v| v.im > tol)
            .min_by(|u, v| {
                let du = real_side.values.iter().map(|r| (r - *u).norm()).fold(f64::INFINITY, f64::min);
                let dv = real_side.values.iter().map(|r| (r - *v).norm()).fold(f64::INFINITY, f64::min);
                du.total_cmp(&dv)
            });
        let Some(pair) = pair else { continue };
        let center = C64::new(pair.re, 0.0);
        let c = bisect_ep(&tracker, real_side.p, complex_side.p, center, tol, ep)?;
        if c.vector_overlap > ep.overlap_min {
            out.accepted.push(c);
        } else {
            out.ambiguous.push(c);
        }
    }
    Ok(out)
}

fn bisect_ep(
    tracker: &Tracker,
    mut p_real: f64,
    mut p_complex: f64,
    mut center: C64,
    tol: f64,
    ep: &EpSettings,
) -> Result<EpCandidate, RzeroError> {
    let mut last_real: Option<Vec<EigenPair>> = None;
    for _ in 0..ep.max_bisections {
        if (p_real - p_complex).abs() < ep.p_tol {
            break;
        }
        let mid = 0.5 * (p_real + p_complex);
        let pair = tracker.pair_near(mid, center)?;
        let both_real = pair.iter().all(|q| q.value.im.abs() < tol);
        center = C64::new(0.5 * (pair[0].value.re + pair[1].value.re), 0.0);
        if both_real {
            p_real = mid;
            last_real = Some(pair);
        } else {
            p_complex = mid;
        }
    }
    let pair = match last_real {
        Some(p) => p,
        None => tracker.pair_near(p_real, center)?,
    };
    let gap = (pair[0].value - pair[1].value).norm();
    let ov = overlap(&pair[0].vector, &pair[1].vector);
    debug_assert!(norm2(&pair[0].vector) > 0.0);
    Ok(EpCandidate {
        p_star: 0.5 * (p_real + p_complex),
        e_star: 0.5 * (pair[0].value.re + pair[1].value.re),
        min_gap: gap,
        vector_overlap: ov,
        bracket: (p_real, p_complex),
    })
}

/// Exceptional point located from the reflection amplitude alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringEp {
    pub p_star: f64,
    pub e_star: f64,
    /// Extremum of `Im F` at `p_star`; zero at an exact double root.
    pub extremum: f64,
}

/// For even potentials `F(E)` is imaginary on the real axis and an EP is a
/// double zero of `Im F`. Bisects in `p` on the sign of the extremum of
/// `s Im F` over `e_bracket`, where `s` is the sign at the bracket ends.
pub fn ep_by_scattering(
    family: &(dyn Fn(f64) -> PotentialSpec + Sync),
    p_bracket: (f64, f64),
    e_bracket: (f64, f64),
    p_tol: f64,
    solver: &ScatteringSolver,
) -> Result<ScatteringEp, RzeroError> {
    let g = |pot: &Potential, e: f64| -> Result<f64, RzeroError> {
        Ok(solver.reflection_zero_function(pot, C64::new(e, 0.0))?.im)
    };
    let extremum = |p: f64| -> Result<(f64, f64), RzeroError> {
        let pot = Potential::new(family(p))?;
        let s = g(&pot, e_bracket.0)?.signum();
        let f = |e: f64| -> Result<f64, RzeroError> { Ok(s * g(&pot, e)?) };
        // Coarse scan, then golden-section on the best cell.
        let n = 40;
        let es: Vec<f64> = (0..=n)
            .map(|i| e_bracket.0 + (e_bracket.1 - e_bracket.0) * i as f64 / n as f64)
            .collect();
        let vals: Vec<f64> = es.iter().map(|e| f(*e)).collect::<Result<_, _>>()?;
        let i = (0..=n).min_by(|a, b| vals[*a].total_cmp(&vals[*b])).unwrap();
        let (mut a, mut b) = (es[i.saturating_sub(1)], es[(i + 1).min(n)]);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let (mut fc, mut fd) = (f(c)?, f(d)?);
        while b - a > 1e-9 * (1.0 + a.abs()) {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = f(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = f(d)?;
            }
        }
        let e = 0.5 * (a + b);
        Ok((e, f(e)?))
    };
    let (e_a, m_a) = extremum(p_bracket.0)?;
    let (e_b, m_b) = extremum(p_bracket.1)?;
    if m_a.signum() == m_b.signum() {
        return Err(RzeroError::Settings(format!(
            "no double root bracketed: extrema {m_a:e} at E = {e_a} and {m_b:e} at E = {e_b}"
        )));
    }
    let (mut lo, mut hi) = p_bracket;
    let mut m_lo = m_a;
    let mut best = if m_a.abs() < m_b.abs() { (lo, e_a, m_a) } else { (hi, e_b, m_b) };
    while (hi - lo).abs() > p_tol {
        let mid = 0.5 * (lo + hi);
        let (e, m) = extremum(mid)?;
        if m.abs() < best.2.abs() {
            best = (mid, e, m);
        }
        if m == 0.0 {
            break;
        }
        if m.signum() == m_lo.signum() {
            lo = mid;
            m_lo = m;
        } else {
            hi = mid;
        }
    }
    Ok(ScatteringEp {
        p_star: best.0,
        e_star: best.1,
        extremum: best.2,
    })
}

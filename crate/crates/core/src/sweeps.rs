//! Parameter sweeps, eigenfunction envelope fits and noise-robustness studies.
//!
//! Sweep points run through [`par::map`], so the merged output is in axis and
//! seed order whatever the execution mode.

use crate::fit::{fit_power_law, PowerLawFit};
use crate::par::{self, Execution};
use crate::potentials::{
    NoiseKind, NoiseSpec, Perturbation, PotentialSpec, QuadraticSign, QuadraticSpec, Truncation,
};
use crate::rzero::{compute_spectrum_with, phase_of, Phase, RZero, RzeroError, RzeroKind, SpectrumSettings};
use crate::scattering::{ScatteringError, ScatteringPotential, ScatteringSolver};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error("sweep values must be strictly monotone")]
    NonMonotone,
    #[error("sweep has no values")]
    Empty,
    #[error("at least one seed is required")]
    NoSeeds,
    #[error("invalid sweep value {value} for axis {axis:?}")]
    BadValue { axis: Axis, value: f64 },
    #[error("noise strengths must be positive and span at least three decades, got {lo}..{hi}")]
    NarrowNoiseRange { lo: f64, hi: f64 },
    #[error("fit window [{lo}, {hi}] holds fewer than three envelope maxima")]
    TooFewMaxima { lo: f64, hi: f64 },
    #[error(transparent)]
    Scattering(#[from] ScatteringError),
    #[error(transparent)]
    Rzero(#[from] RzeroError),
}

/// Parameter varied along a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Exponent `p`.
    P,
    /// Truncation length.
    L,
    /// Energy bound `|V_max|` (truncation by energy).
    VmaxAbs,
    /// Window sharpness.
    W,
    /// Random-noise strength.
    NR,
    /// Negative quadratic term strength.
    NNq,
    /// Positive quadratic term strength.
    NPq,
}

impl Axis {
    /// `base` with this parameter set to `value`; `seed` goes to any noise draw.
    pub fn apply(self, base: &PotentialSpec, value: f64, seed: u64, noise_kind: NoiseKind) -> PotentialSpec {
        let mut spec = base.clone();
        match self {
            Axis::P => spec.exponent = value,
            Axis::L => spec.truncation = Truncation::ByLength(value),
            Axis::VmaxAbs => spec.truncation = Truncation::ByEnergy(value),
            Axis::W => spec.sharpness = value,
            Axis::NR => {
                let mut n = match &base.perturbation {
                    Some(Perturbation::Noise(n)) => n.clone(),
                    _ => NoiseSpec::new(noise_kind, value, seed),
                };
                n.strength = value;
                spec.perturbation = Some(Perturbation::Noise(n));
            }
            Axis::NNq | Axis::NPq => {
                let sign = if self == Axis::NNq {
                    QuadraticSign::Negative
                } else {
                    QuadraticSign::Positive
                };
                spec.perturbation = Some(Perturbation::Quadratic(QuadraticSpec { sign, strength: value }));
            }
        }
        if let Some(Perturbation::Noise(n)) = &mut spec.perturbation {
            n.seed = seed;
        }
        spec
    }
}

/// A parameter scan. Each `(value, seed)` pair is one spectrum computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub base: PotentialSpec,
    #[serde(default)]
    pub settings: SpectrumSettings,
    /// Energy window for the phase label; the spectrum window when absent.
    #[serde(default)]
    pub classify_window: Option<(f64, f64)>,
    #[serde(default = "SweepPlan::default_seeds")]
    pub seeds: Vec<u64>,
    /// Kind of noise drawn for [`Axis::NR`] when the base spec carries none.
    #[serde(default = "SweepPlan::default_noise_kind")]
    pub noise_kind: NoiseKind,
}

impl SweepPlan {
    fn default_seeds() -> Vec<u64> {
        vec![0]
    }
    fn default_noise_kind() -> NoiseKind {
        NoiseKind::Symmetric
    }

    pub fn new(axis: Axis, values: Vec<f64>, base: PotentialSpec, settings: SpectrumSettings) -> Self {
        Self {
            axis,
            values,
            base,
            settings,
            classify_window: None,
            seeds: Self::default_seeds(),
            noise_kind: Self::default_noise_kind(),
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.values.is_empty() {
            return Err(SweepError::Empty);
        }
        if self.seeds.is_empty() {
            return Err(SweepError::NoSeeds);
        }
        let up = self.values.windows(2).all(|w| w[1] > w[0]);
        let down = self.values.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(SweepError::NonMonotone);
        }
        for &v in &self.values {
            let ok = match self.axis {
                Axis::NR | Axis::NNq | Axis::NPq => v.is_finite() && v >= 0.0,
                _ => v.is_finite() && v > 0.0,
            };
            if !ok {
                return Err(SweepError::BadValue { axis: self.axis, value: v });
            }
        }
        Ok(())
    }
}

/// Outcome of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub seed: u64,
    pub spec: PotentialSpec,
    pub rzeros: Vec<RZero>,
    pub phase: Option<Phase>,
    /// Set when the computation failed; the point then carries no R-zeros.
    pub error: Option<String>,
}

impl SweepPoint {
    pub fn real_count(&self) -> usize {
        self.rzeros.iter().filter(|r| r.kind == RzeroKind::Real).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDataset {
    pub plan: SweepPlan,
    pub points: Vec<SweepPoint>,
}

impl SweepDataset {
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.error.is_some()).count()
    }
}

/// One spectrum per `(value, seed)`. Failures become error rows; a window with
/// no surviving R-zero is reported as an empty, broken point.
pub fn run_sweep(plan: &SweepPlan, exec: Execution) -> Result<SweepDataset, SweepError> {
    plan.validate()?;
    let jobs: Vec<(f64, u64)> = plan
        .values
        .iter()
        .flat_map(|&v| plan.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let window = plan
        .classify_window
        .unwrap_or((plan.settings.e_min, plan.settings.e_max));
    let points = par::map(exec, &jobs, |&(v, seed)| {
        let spec = plan.axis.apply(&plan.base, v, seed, plan.noise_kind);
        let (rzeros, phase, error) = match compute_spectrum_with(&spec, &plan.settings, exec) {
            Ok(s) => {
                let phase = phase_of(&s.rzeros, window.0, window.1);
                (s.rzeros, Some(phase), None)
            }
            Err(RzeroError::EmptyAfterFilter { .. }) => (Vec::new(), Some(Phase::Broken), None),
            Err(e) => (Vec::new(), None, Some(e.to_string())),
        };
        SweepPoint {
            axis_value: v,
            seed,
            spec,
            rzeros,
            phase,
            error,
        }
    });
    Ok(SweepDataset {
        plan: plan.clone(),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub window: (f64, f64),
    /// RMS residual of `ln |psi|`.
    pub residual: f64,
    pub maxima: usize,
}

/// Positions of the local maxima of `|Re psi|` on `[lo, hi]` with the
/// modulus `|psi|` there, from a scattering wavefunction at energy `e`.
///
/// At a maximum of `|Re psi|` the phase is a multiple of pi, so `|psi|` at
/// that point lies on the oscillation envelope.
pub fn envelope_maxima<P: ScatteringPotential + ?Sized>(
    pot: &P,
    energy: f64,
    (lo, hi): (f64, f64),
    solver: &ScatteringSolver,
) -> Result<Vec<(f64, f64)>, SweepError> {
    // Forty samples per local wavelength at the deepest end.
    let k_max = (energy - pot.value(hi).min(pot.value(lo))).max(energy).sqrt().max(1.0);
    let h = (2.0 * std::f64::consts::PI / k_max) / 40.0;
    let n = ((hi - lo) / h).ceil() as usize + 1;
    let xs: Vec<f64> = (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect();
    let psi = solver.wavefunction(pot, C64::new(energy, 0.0), &xs)?;
    let mut out = Vec::new();
    for j in 1..n - 1 {
        let (a, b, c) = (psi[j - 1].re.abs(), psi[j].re.abs(), psi[j + 1].re.abs());
        if b > a && b >= c {
            out.push((xs[j], psi[j].norm()));
        }
    }
    Ok(out)
}

/// Log-log fit of the envelope maxima of `|psi|` on `window`.
pub fn envelope_fit_in<P: ScatteringPotential + ?Sized>(
    pot: &P,
    energy: f64,
    window: (f64, f64),
    solver: &ScatteringSolver,
) -> Result<EnvelopeFit, SweepError> {
    let maxima = envelope_maxima(pot, energy, window, solver)?;
    let too_few = SweepError::TooFewMaxima {
        lo: window.0,
        hi: window.1,
    };
    if maxima.len() < 3 {
        return Err(too_few);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = maxima.iter().cloned().unzip();
    let fit: PowerLawFit = fit_power_law(&xs, &ys).ok_or(too_few)?;
    Ok(EnvelopeFit {
        exponent: fit.exponent,
        prefactor: fit.prefactor,
        window,
        residual: fit.residual,
        maxima: fit.points,
    })
}

/// Lower end of the default envelope window.
pub const ENVELOPE_X_LO: f64 = 2.0;

/// Envelope fit on `[2, 0.8 L_eff]`, normalised so that `|psi(0)| = 1`.
pub fn envelope_fit(spec: &PotentialSpec, energy: f64) -> Result<EnvelopeFit, SweepError> {
    let pot = crate::potentials::Potential::new(spec.clone()).map_err(RzeroError::from)?;
    let solver = ScatteringSolver::default();
    let window = (ENVELOPE_X_LO, 0.8 * pot.effective_length());
    let mut fit = envelope_fit_in(&pot, energy, window, &solver)?;
    let psi0 = solver.wavefunction(&pot, C64::new(energy, 0.0), &[0.0])?[0].norm();
    fit.prefactor /= psi0;
    Ok(fit)
}

/// Which perturbation family a noise study scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Symmetric,
    ParityBreaking,
    NegativeQuadratic,
    PositiveQuadratic,
}

impl NoiseFamily {
    fn axis(self) -> (Axis, NoiseKind) {
        match self {
            NoiseFamily::Symmetric => (Axis::NR, NoiseKind::Symmetric),
            NoiseFamily::ParityBreaking => (Axis::NR, NoiseKind::ParityBreaking),
            NoiseFamily::NegativeQuadratic => (Axis::NNq, NoiseKind::Symmetric),
            NoiseFamily::PositiveQuadratic => (Axis::NPq, NoiseKind::Symmetric),
        }
    }

    fn is_random(self) -> bool {
        matches!(self, NoiseFamily::Symmetric | NoiseFamily::ParityBreaking)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseStudy {
    pub base: PotentialSpec,
    pub family: NoiseFamily,
    /// Strictly increasing.
    pub strengths: Vec<f64>,
    pub num_seeds: usize,
    #[serde(default)]
    pub settings: SpectrumSettings,
    /// R-zeros with `|Im E|` above this are not shown or matched.
    #[serde(default = "NoiseStudy::default_threshold")]
    pub im_threshold: f64,
    /// Relative gate on `|Re E - Re E_ref|` for trajectory matching.
    #[serde(default = "NoiseStudy::default_gate")]
    pub match_gate: f64,
}

impl NoiseStudy {
    fn default_threshold() -> f64 {
        3.0
    }
    fn default_gate() -> f64 {
        0.2
    }

    pub fn new(base: PotentialSpec, family: NoiseFamily, strengths: Vec<f64>, settings: SpectrumSettings) -> Self {
        Self {
            base,
            family,
            strengths,
            num_seeds: 3,
            settings,
            im_threshold: Self::default_threshold(),
            match_gate: Self::default_gate(),
        }
    }

    /// Log-spaced `1e-4 ..= 1e-1`, two points per decade.
    pub fn default_strengths() -> Vec<f64> {
        (0..=6).map(|j| 10f64.powf(-4.0 + 0.5 * j as f64)).collect()
    }

    fn validate(&self) -> Result<(), SweepError> {
        let lo = self.strengths.first().copied().unwrap_or(f64::NAN);
        let hi = self.strengths.last().copied().unwrap_or(f64::NAN);
        if !(lo > 0.0 && hi / lo >= 1e3 - 1e-9) || self.strengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SweepError::NarrowNoiseRange { lo, hi });
        }
        if self.num_seeds == 0 {
            return Err(SweepError::NoSeeds);
        }
        Ok(())
    }
}

/// One reference R-zero followed at one strength and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMatch {
    pub strength: f64,
    pub seed: u64,
    pub reference: usize,
    pub reference_energy: f64,
    /// `None` when no R-zero passed the threshold and gate.
    pub energy: Option<C64>,
    pub error: Option<String>,
}

/// Seed average for one reference R-zero at one strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSummary {
    pub strength: f64,
    pub reference: usize,
    pub reference_energy: f64,
    pub matched: usize,
    pub mean_re: f64,
    pub stderr_re: f64,
    pub mean_abs_im: f64,
    pub stderr_abs_im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDataset {
    pub study: NoiseStudy,
    /// Real R-zeros of the unperturbed spectrum.
    pub references: Vec<f64>,
    pub matches: Vec<NoiseMatch>,
    pub summary: Vec<NoiseSummary>,
    /// `|Im E_0|` against strength, for parity-breaking noise.
    pub im_scaling: Option<PowerLawFit>,
}

impl NoiseDataset {
    pub fn summary_for(&self, reference: usize) -> impl Iterator<Item = &NoiseSummary> {
        self.summary.iter().filter(move |s| s.reference == reference)
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Nearest real part among candidates below the threshold, within the relative gate.
fn match_reference(reference: f64, rzeros: &[RZero], threshold: f64, gate: f64) -> Option<C64> {
    rzeros
        .iter()
        .map(|r| r.energy)
        .filter(|e| e.im.abs() < threshold && (e.re - reference).abs() <= gate * reference.abs())
        .min_by(|a, b| (a.re - reference).abs().total_cmp(&(b.re - reference).abs()))
}

/// Follows the clean real R-zeros through a range of perturbation strengths.
///
/// Seeds are `0..num_seeds`; quadratic families are deterministic and use seed 0 only.
pub fn noise_study(study: &NoiseStudy, exec: Execution) -> Result<NoiseDataset, SweepError> {
    study.validate()?;
    let mut clean_spec = study.base.clone();
    clean_spec.perturbation = None;
    let clean = compute_spectrum_with(&clean_spec, &study.settings, exec)?;
    let references = clean.real_energies();

    let (axis, kind) = study.family.axis();
    let seeds: Vec<u64> = if study.family.is_random() {
        (0..study.num_seeds as u64).collect()
    } else {
        vec![0]
    };
    let jobs: Vec<(f64, u64)> = study
        .strengths
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let runs = par::map(exec, &jobs, |&(strength, seed)| {
        let spec = axis.apply(&clean_spec, strength, seed, kind);
        compute_spectrum_with(&spec, &study.settings, exec)
    });

    let mut matches = Vec::new();
    for (&(strength, seed), run) in jobs.iter().zip(&runs) {
        for (i, &reference) in references.iter().enumerate() {
            let (energy, error) = match run {
                Ok(s) => (
                    match_reference(reference, &s.rzeros, study.im_threshold, study.match_gate),
                    None,
                ),
                Err(RzeroError::EmptyAfterFilter { .. }) => (None, None),
                Err(e) => (None, Some(e.to_string())),
            };
            matches.push(NoiseMatch {
                strength,
                seed,
                reference: i,
                reference_energy: reference,
                energy,
                error,
            });
        }
    }

    let mut summary = Vec::new();
    for &strength in &study.strengths {
        for (i, &reference) in references.iter().enumerate() {
            let hits: Vec<C64> = matches
                .iter()
                .filter(|m| m.strength == strength && m.reference == i)
                .filter_map(|m| m.energy)
                .collect();
            let re: Vec<f64> = hits.iter().map(|e| e.re).collect();
            let im: Vec<f64> = hits.iter().map(|e| e.im.abs()).collect();
            let (mean_re, stderr_re) = mean_stderr(&re);
            let (mean_abs_im, stderr_abs_im) = mean_stderr(&im);
            summary.push(NoiseSummary {
                strength,
                reference: i,
                reference_energy: reference,
                matched: hits.len(),
                mean_re,
                stderr_re,
                mean_abs_im,
                stderr_abs_im,
            });
        }
    }

    let im_scaling = if study.family == NoiseFamily::ParityBreaking && !references.is_empty() {
        let (xs, ys): (Vec<f64>, Vec<f64>) = summary
            .iter()
            .filter(|s| s.reference == 0 && s.matched > 0)
            .map(|s| (s.strength, s.mean_abs_im))
            .unzip();
        fit_power_law(&xs, &ys)
    } else {
        None
    };

    Ok(NoiseDataset {
        study: study.clone(),
        references,
        matches,
        summary,
        im_scaling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::Constant;

    #[test]
    fn axis_apply_sets_one_parameter() {
        let base = PotentialSpec::by_length(4.0, 5.0, 10.0);
        assert_eq!(Axis::P.apply(&base, 3.0, 0, NoiseKind::Symmetric).exponent, 3.0);
        assert_eq!(
            Axis::VmaxAbs.apply(&base, 625.0, 0, NoiseKind::Symmetric).effective_length(),
            5.0
        );
        let noisy = Axis::NR.apply(&base, 1e-3, 7, NoiseKind::ParityBreaking);
        match noisy.perturbation {
            Some(Perturbation::Noise(n)) => {
                assert_eq!(n.kind, NoiseKind::ParityBreaking);
                assert_eq!(n.seed, 7);
                assert_eq!(n.strength, 1e-3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn plan_validation() {
        let base = PotentialSpec::by_length(4.0, 5.0, 10.0);
        let s = SpectrumSettings::default();
        assert!(SweepPlan::new(Axis::L, vec![2.0, 3.0, 4.0], base.clone(), s.clone()).validate().is_ok());
        assert!(SweepPlan::new(Axis::L, vec![4.0, 3.0], base.clone(), s.clone()).validate().is_ok());
        assert_eq!(
            SweepPlan::new(Axis::L, vec![2.0, 4.0, 3.0], base.clone(), s.clone()).validate(),
            Err(SweepError::NonMonotone)
        );
        assert_eq!(
            SweepPlan::new(Axis::L, vec![], base.clone(), s.clone()).validate(),
            Err(SweepError::Empty)
        );
        assert!(SweepPlan::new(Axis::L, vec![-1.0, 2.0], base, s).validate().is_err());
    }

    #[test]
    fn plane_wave_envelope_is_flat() {
        let fit = envelope_fit_in(&Constant(0.0), 2.0, (2.0, 20.0), &ScatteringSolver::default()).unwrap();
        assert!(fit.exponent.abs() < 0.01, "{}", fit.exponent);
        assert!(fit.maxima > 5);
    }

    #[test]
    fn stderr_of_constant_sample_is_zero() {
        assert_eq!(mean_stderr(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        assert!(mean_stderr(&[]).0.is_nan());
    }

    #[test]
    fn matching_respects_gate_and_threshold() {
        let rz = |re: f64, im: f64| RZero {
            energy: C64::new(re, im),
            residual: 0.0,
            cap_sensitivity: 0.0,
            localization: 1.0,
            kind: RzeroKind::PairMember,
            survey_energy: C64::new(re, im),
            reflection_root: None,
            grid_error: 0.0,
        };
        let set = vec![rz(1.4, 0.1), rz(1.5, 4.0), rz(6.0, 0.0)];
        assert_eq!(match_reference(1.477, &set, 3.0, 0.2), Some(C64::new(1.4, 0.1)));
        assert_eq!(match_reference(3.0, &set, 3.0, 0.2), None);
        assert_eq!(match_reference(1.45, &set[1..], 3.0, 0.2), None);
    }

    #[test]
    fn noise_study_needs_three_decades() {
        let base = PotentialSpec::by_length(4.0, 5.0, 10.0);
        let st = NoiseStudy::new(base, NoiseFamily::Symmetric, vec![1e-3, 1e-2], SpectrumSettings::default());
        assert!(matches!(noise_study(&st, Execution::Sequential), Err(SweepError::NarrowNoiseRange { .. })));
        assert_eq!(NoiseStudy::default_strengths().len(), 7);
    }
}

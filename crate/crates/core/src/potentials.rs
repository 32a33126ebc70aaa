//! Truncated, smoothed inverted power-law potentials `V(x) = -|x|^p`.
//!
//! The unbounded tail is replaced by a constant exterior value through the
//! two-sided sigmoid window
//!
//! ```text
//! f(x, w, L) = 1/(1 + exp(-w(x + L))) + 1/(1 + exp(w(x - L))) - 1
//! V(x)       = -(|x|^p + perturbation(x)) f + V_ext (1 - f)
//! ```
//!
//! Energies are in units of the ground-state scale and lengths in the matching
//! length scale, with `hbar = 1` and `2m = 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("invalid potential parameter: {0}")]
    InvalidParameter(String),
    #[error("position {0} is not finite")]
    NonFinitePosition(f64),
    /// The second derivative of `-|x|^p` diverges at the origin for `p < 2`.
    #[error("second derivative is singular at x = 0 for p = {exponent}")]
    SingularAtOrigin { exponent: f64 },
}

/// How the unbounded tail is cut off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Cut at `|x| = L`.
    ByLength(f64),
    /// Cut where `|V|` reaches the bound, i.e. at `|x| = bound^(1/p)`.
    ByEnergy(f64),
}

/// Value of the potential outside the truncation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Exterior {
    /// Constant `-L_eff^p`, continuous with the interior.
    #[default]
    Plateau,
    /// Zero outside the window.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Cosine series, even in `x`.
    Symmetric,
    /// Sine series with random phases.
    ParityBreaking,
}

/// Random Fourier-series noise added under the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub strength: f64,
    #[serde(default = "NoiseSpec::default_components")]
    pub num_components: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "NoiseSpec::default_amplitudes")]
    pub amplitude_range: (f64, f64),
    #[serde(default = "NoiseSpec::default_frequencies")]
    pub frequency_range: (f64, f64),
    #[serde(default = "NoiseSpec::default_phases")]
    pub phase_range: (f64, f64),
}

impl NoiseSpec {
    fn default_components() -> usize {
        50
    }
    fn default_amplitudes() -> (f64, f64) {
        (-1.0, 1.0)
    }
    fn default_frequencies() -> (f64, f64) {
        (0.1, 5.0)
    }
    fn default_phases() -> (f64, f64) {
        (0.0, 2.0 * PI)
    }

    pub fn new(kind: NoiseKind, strength: f64, seed: u64) -> Self {
        Self {
            kind,
            strength,
            num_components: Self::default_components(),
            seed,
            amplitude_range: Self::default_amplitudes(),
            frequency_range: Self::default_frequencies(),
            phase_range: Self::default_phases(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadraticSign {
    /// Adds `-n x^2` (deepens the barrier).
    Negative,
    /// Adds `+n x^2`.
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub sign: QuadraticSign,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    Noise(NoiseSpec),
    Quadratic(QuadraticSpec),
}

/// Full description of a truncated, smoothed, optionally perturbed potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub exponent: f64,
    pub truncation: Truncation,
    pub sharpness: f64,
    #[serde(default)]
    pub exterior: Exterior,
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
}

impl PotentialSpec {
    pub fn by_length(exponent: f64, length: f64, sharpness: f64) -> Self {
        Self {
            exponent,
            truncation: Truncation::ByLength(length),
            sharpness,
            exterior: Exterior::Plateau,
            perturbation: None,
        }
    }

    pub fn by_energy(exponent: f64, bound: f64, sharpness: f64) -> Self {
        Self {
            exponent,
            truncation: Truncation::ByEnergy(bound),
            sharpness,
            exterior: Exterior::Plateau,
            perturbation: None,
        }
    }

    pub fn with_exterior(mut self, exterior: Exterior) -> Self {
        self.exterior = exterior;
        self
    }

    pub fn with_perturbation(mut self, perturbation: Perturbation) -> Self {
        self.perturbation = Some(perturbation);
        self
    }

    pub fn with_exponent(mut self, exponent: f64) -> Self {
        self.exponent = exponent;
        self
    }

    /// `L` for length truncation, `bound^(1/p)` for energy truncation.
    pub fn effective_length(&self) -> f64 {
        match self.truncation {
            Truncation::ByLength(l) => l,
            Truncation::ByEnergy(bound) => bound.powf(1.0 / self.exponent),
        }
    }

    pub fn validate(&self) -> Result<(), PotentialError> {
        let bad = |msg: String| Err(PotentialError::InvalidParameter(msg));
        if !(self.exponent.is_finite() && self.exponent > 0.0) {
            return bad(format!("exponent must be > 0, got {}", self.exponent));
        }
        if !(self.sharpness.is_finite() && self.sharpness > 0.0) {
            return bad(format!("sharpness must be > 0, got {}", self.sharpness));
        }
        match self.truncation {
            Truncation::ByLength(l) if !(l.is_finite() && l > 0.0) => {
                return bad(format!("truncation length must be > 0, got {l}"))
            }
            Truncation::ByEnergy(b) if !(b.is_finite() && b > 0.0) => {
                return bad(format!("energy bound must be > 0, got {b}"))
            }
            _ => {}
        }
        let l_eff = self.effective_length();
        if !(l_eff.is_finite() && l_eff > 0.0) {
            return bad(format!("effective length {l_eff} is not finite and positive"));
        }
        match &self.perturbation {
            Some(Perturbation::Noise(n)) => {
                if !(n.strength.is_finite() && n.strength >= 0.0) {
                    return bad(format!("noise strength must be >= 0, got {}", n.strength));
                }
                let (f0, f1) = n.frequency_range;
                if !(f0 > 0.0 && f1 >= f0) {
                    return bad(format!("noise frequency range must be positive, got {f0}..{f1}"));
                }
                if n.amplitude_range.1 < n.amplitude_range.0 || n.phase_range.1 < n.phase_range.0 {
                    return bad("noise ranges must be ordered".into());
                }
            }
            Some(Perturbation::Quadratic(q)) => {
                if !(q.strength.is_finite() && q.strength >= 0.0) {
                    return bad(format!("quadratic strength must be >= 0, got {}", q.strength));
                }
            }
            None => {}
        }
        Ok(())
    }
}

/// Logistic function evaluated without overflow for any finite argument.
#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Window value and its first two derivatives with respect to `x`.
#[derive(Debug, Clone, Copy)]
struct Window {
    f: f64,
    df: f64,
    d2f: f64,
}

fn window(x: f64, w: f64, l: f64) -> Window {
    // f(x) = s(-w(|x| - L)) - s(-w(|x| + L)), the form that keeps full
    // precision in both tails and is even by construction.
    let u = x.abs();
    let s1 = sigmoid(-w * (u - l));
    let s2 = sigmoid(-w * (u + l));
    let d1 = s1 * (1.0 - s1);
    let d2 = s2 * (1.0 - s2);
    let dfu = -w * d1 + w * d2;
    // s'' with respect to its argument is s(1-s)(1-2s); the chain factor (-w)^2 = w^2.
    let d2fu = w * w * (d1 * (1.0 - 2.0 * s1) - d2 * (1.0 - 2.0 * s2));
    Window {
        f: s1 - s2,
        df: if x == 0.0 { 0.0 } else { x.signum() * dfu },
        d2f: d2fu,
    }
}

/// The smoothing window `f(x, w, L)`.
pub fn smoothing_window(x: f64, w: f64, l: f64) -> f64 {
    window(x, w, l).f
}

/// Drawn coefficients of one noise realization.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSeries {
    pub kind: NoiseKind,
    pub strength: f64,
    pub amplitudes: Vec<f64>,
    /// The `omega_i` of `cos(2 pi x / omega_i)`; a length scale despite the name.
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
}

impl NoiseSeries {
    pub fn draw(spec: &NoiseSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = spec.num_components;
        let mut amplitudes = Vec::with_capacity(n);
        let mut frequencies = Vec::with_capacity(n);
        let mut phases = Vec::with_capacity(n);
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
        for _ in 0..n {
            // Phases are drawn for both kinds so that a seed yields the same
            // amplitudes and frequencies whichever kind is requested.
            amplitudes.push(uniform(&mut rng, spec.amplitude_range));
            frequencies.push(uniform(&mut rng, spec.frequency_range));
            phases.push(uniform(&mut rng, spec.phase_range));
        }
        Self {
            kind: spec.kind,
            strength: spec.strength,
            amplitudes,
            frequencies,
            phases,
        }
    }

    /// `g(x)`, `g'(x)`, `g''(x)` (without the strength factor).
    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let mut g = 0.0;
        let mut dg = 0.0;
        let mut d2g = 0.0;
        for ((&a, &om), &phi) in self.amplitudes.iter().zip(&self.frequencies).zip(&self.phases) {
            let q = 2.0 * PI / om;
            match self.kind {
                NoiseKind::Symmetric => {
                    let (s, c) = (q * x).sin_cos();
                    g += a * c;
                    dg -= a * q * s;
                    d2g -= a * q * q * c;
                }
                NoiseKind::ParityBreaking => {
                    let (s, c) = (q * x + phi).sin_cos();
                    g += a * s;
                    dg += a * q * c;
                    d2g -= a * q * q * s;
                }
            }
        }
        (g, dg, d2g)
    }
}

/// First and second spatial derivative of the potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub first: f64,
    pub second: f64,
}

/// Anything that can be sampled as a real 1D potential.
pub trait PotentialProfile: Sync {
    fn value(&self, x: f64) -> f64;
    fn derivatives(&self, x: f64) -> Result<Derivatives, PotentialError>;
    fn exponent(&self) -> f64;
}

/// `|x|^p` with its derivatives; `None` in the second slot marks the origin singularity.
fn power_terms(x: f64, p: f64) -> (f64, f64, Option<f64>) {
    let u = x.abs();
    if u == 0.0 {
        // Below p = 2 the derivatives at the origin are undefined or infinite.
        let d2 = if p < 2.0 {
            None
        } else if p == 2.0 {
            Some(2.0)
        } else {
            Some(0.0)
        };
        return (0.0, 0.0, d2);
    }
    let h = u.powf(p);
    let h1 = x.signum() * p * h / u;
    let h2 = p * (p - 1.0) * h / (u * u);
    (h, h1, Some(h2))
}

/// Validated, immutable potential ready for evaluation.
#[derive(Debug, Clone)]
pub struct Potential {
    spec: PotentialSpec,
    l_eff: f64,
    exterior_value: f64,
    noise: Option<NoiseSeries>,
}

impl Potential {
    pub fn new(spec: PotentialSpec) -> Result<Self, PotentialError> {
        spec.validate()?;
        let l_eff = spec.effective_length();
        let p = spec.exponent;
        let exterior_value = match spec.exterior {
            Exterior::Zero => 0.0,
            Exterior::Plateau => {
                let base = -l_eff.powf(p);
                match &spec.perturbation {
                    Some(Perturbation::Quadratic(q)) => match q.sign {
                        QuadraticSign::Negative => base - q.strength * l_eff * l_eff,
                        QuadraticSign::Positive => base + q.strength * l_eff * l_eff,
                    },
                    _ => base,
                }
            }
        };
        let noise = match &spec.perturbation {
            Some(Perturbation::Noise(n)) => Some(NoiseSeries::draw(n)),
            _ => None,
        };
        Ok(Self {
            spec,
            l_eff,
            exterior_value,
            noise,
        })
    }

    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    pub fn effective_length(&self) -> f64 {
        self.l_eff
    }

    /// Constant value approached for `|x| >> L_eff`.
    pub fn exterior_value(&self) -> f64 {
        self.exterior_value
    }

    pub fn noise(&self) -> Option<&NoiseSeries> {
        self.noise.as_ref()
    }

    /// True when `V(x) = V(-x)` holds exactly.
    pub fn is_parity_symmetric(&self) -> bool {
        !matches!(&self.noise, Some(n) if n.kind == NoiseKind::ParityBreaking && n.strength != 0.0)
    }

    /// Distance beyond `L_eff` past which the window is flat to double precision.
    pub fn window_tail(&self) -> f64 {
        40.0 / self.spec.sharpness
    }

    /// Interior profile `A(x)` (the part multiplied by `-f`) and its derivatives.
    fn interior(&self, x: f64) -> (f64, f64, Option<f64>) {
        let (mut a, mut a1, mut a2) = power_terms(x, self.spec.exponent);
        match &self.spec.perturbation {
            Some(Perturbation::Quadratic(q)) => {
                let s = match q.sign {
                    QuadraticSign::Negative => q.strength,
                    QuadraticSign::Positive => -q.strength,
                };
                a += s * x * x;
                a1 += 2.0 * s * x;
                a2 = a2.map(|v| v + 2.0 * s);
            }
            Some(Perturbation::Noise(_)) => {
                let series = self.noise.as_ref().expect("noise drawn at construction");
                let (g, g1, g2) = series.eval(x);
                a += series.strength * g;
                a1 += series.strength * g1;
                a2 = a2.map(|v| v + series.strength * g2);
            }
            None => {}
        }
        (a, a1, a2)
    }

    pub fn evaluate(&self, x: f64) -> Result<f64, PotentialError> {
        if !x.is_finite() {
            return Err(PotentialError::NonFinitePosition(x));
        }
        Ok(self.value(x))
    }
}

impl PotentialProfile for Potential {
    fn value(&self, x: f64) -> f64 {
        let win = window(x, self.spec.sharpness, self.l_eff);
        let (a, _, _) = self.interior(x);
        -a * win.f + self.exterior_value * (1.0 - win.f)
    }

    fn derivatives(&self, x: f64) -> Result<Derivatives, PotentialError> {
        if !x.is_finite() {
            return Err(PotentialError::NonFinitePosition(x));
        }
        let win = window(x, self.spec.sharpness, self.l_eff);
        let (a, a1, a2) = self.interior(x);
        let a2 = a2.ok_or(PotentialError::SingularAtOrigin {
            exponent: self.spec.exponent,
        })?;
        let c = self.exterior_value;
        Ok(Derivatives {
            first: -a1 * win.f - a * win.df - c * win.df,
            second: -a2 * win.f - 2.0 * a1 * win.df - a * win.d2f - c * win.d2f,
        })
    }

    fn exponent(&self) -> f64 {
        self.spec.exponent
    }
}

/// The untruncated `V(x) = -|x|^p`, used where only local quantities matter.
#[derive(Debug, Clone, Copy)]
pub struct PowerLaw {
    pub exponent: f64,
}

impl PotentialProfile for PowerLaw {
    fn value(&self, x: f64) -> f64 {
        -x.abs().powf(self.exponent)
    }

    fn derivatives(&self, x: f64) -> Result<Derivatives, PotentialError> {
        if !x.is_finite() {
            return Err(PotentialError::NonFinitePosition(x));
        }
        let (_, h1, h2) = power_terms(x, self.exponent);
        let h2 = h2.ok_or(PotentialError::SingularAtOrigin {
            exponent: self.exponent,
        })?;
        Ok(Derivatives {
            first: -h1,
            second: -h2,
        })
    }

    fn exponent(&self) -> f64 {
        self.exponent
    }
}

/// Constant potential, mostly useful as a test fixture.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl PotentialProfile for Constant {
    fn value(&self, _x: f64) -> f64 {
        self.0
    }

    fn derivatives(&self, _x: f64) -> Result<Derivatives, PotentialError> {
        Ok(Derivatives {
            first: 0.0,
            second: 0.0,
        })
    }

    fn exponent(&self) -> f64 {
        0.0
    }
}

//! WKB force potential
//!
//! ```text
//! V_wkb(x, E) = -[ 5/16 (V'/(E - V))^2 + 1/4 V''/(E - V) ]
//! ```
//!
//! the correction under which WKB waves solve the Schrödinger equation exactly.
//! Its profile shows where above-barrier reflection originates.

use crate::potentials::{Potential, PotentialError, PotentialProfile};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WkbError {
    #[error("V_wkb diverges at x = {x} for p = {exponent}")]
    Singular { x: f64, exponent: f64 },
    #[error("E = {energy} is not above V(x) = {potential} at x = {x}")]
    BelowBarrier { x: f64, energy: f64, potential: f64 },
    #[error("invalid profile window: {0}")]
    BadWindow(String),
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

/// Value of the force potential at one point.
pub fn evaluate_wkb<P: PotentialProfile + ?Sized>(pot: &P, energy: f64, x: f64) -> Result<f64, WkbError> {
    let v = pot.value(x);
    let gap = energy - v;
    if !(gap > 0.0) {
        return Err(WkbError::BelowBarrier {
            x,
            energy,
            potential: v,
        });
    }
    let d = pot.derivatives(x).map_err(|e| match e {
        PotentialError::SingularAtOrigin { exponent } => WkbError::Singular { x, exponent },
        other => WkbError::Potential(other),
    })?;
    let r = d.first / gap;
    Ok(-(5.0 / 16.0 * r * r + 0.25 * d.second / gap))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakStructure {
    /// One maximum at the origin.
    SinglePeak,
    /// A mirrored pair of maxima around a central well.
    DoublePeak,
    /// Unbounded at the origin (`p < 2`); also a single central peak.
    DivergentAtOrigin,
    /// No local maximum at all, e.g. a constant potential.
    Flat,
}

impl PeakStructure {
    /// True for the single-peak family, including the divergent one.
    pub fn is_single(self) -> bool {
        matches!(self, Self::SinglePeak | Self::DivergentAtOrigin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WkbProfile {
    pub energy: f64,
    /// `(x, V_wkb)`; the origin is left out when the profile diverges there.
    pub samples: Vec<(f64, f64)>,
    /// `(x_peak, height)` sorted by position.
    pub peaks: Vec<(f64, f64)>,
    pub structure: PeakStructure,
}

impl WkbProfile {
    /// Highest finite peak.
    pub fn max_height(&self) -> Option<f64> {
        self.peaks
            .iter()
            .map(|p| p.1)
            .filter(|h| h.is_finite())
            .fold(None, |m, h| Some(m.map_or(h, |m: f64| m.max(h))))
    }
}

/// Symmetric sampling window `[-half_width, half_width]` with `points` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileWindow {
    pub half_width: f64,
    pub points: usize,
}

impl ProfileWindow {
    /// Spacing `1e-3` of the window width, with the origin on the grid.
    pub fn new(half_width: f64) -> Self {
        Self {
            half_width,
            points: 2001,
        }
    }

    /// `[-2 L_eff, 2 L_eff]`.
    pub fn for_potential(pot: &Potential) -> Self {
        Self::new(2.0 * pot.effective_length())
    }

    fn validate(&self) -> Result<(), WkbError> {
        if !(self.half_width > 0.0) || !self.half_width.is_finite() {
            return Err(WkbError::BadWindow(format!("half width {}", self.half_width)));
        }
        if self.points < 5 {
            return Err(WkbError::BadWindow(format!("{} points", self.points)));
        }
        Ok(())
    }

    fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.points - 1) as f64
    }

    fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        let mid = (self.points - 1) as f64 / 2.0;
        (0..self.points).map(|j| (j as f64 - mid) * h).collect()
    }
}

/// Vertex of the parabola through three equally spaced samples.
fn parabolic_vertex(x: f64, h: f64, ym: f64, y0: f64, yp: f64) -> (f64, f64) {
    let denom = ym - 2.0 * y0 + yp;
    if denom >= 0.0 {
        return (x, y0);
    }
    let t = 0.5 * (ym - yp) / denom;
    (x + t * h, y0 - 0.25 * (ym - yp) * t)
}

fn local_maxima(samples: &[(f64, f64)], h: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for j in 1..samples.len().saturating_sub(1) {
        let (ym, y0, yp) = (samples[j - 1].1, samples[j].1, samples[j + 1].1);
        // Ties on the left only, so a flat top is counted once.
        if y0 >= ym && y0 > yp && (samples[j + 1].0 - samples[j - 1].0 - 2.0 * h).abs() < 1e-9 * h.max(1.0) {
            out.push(parabolic_vertex(samples[j].0, h, ym, y0, yp));
        }
    }
    out
}

/// Samples the force potential, locates its maxima and classifies the central structure.
pub fn profile<P: PotentialProfile + ?Sized>(
    pot: &P,
    energy: f64,
    window: ProfileWindow,
) -> Result<WkbProfile, WkbError> {
    window.validate()?;
    let h = window.spacing();
    let divergent = match evaluate_wkb(pot, energy, 0.0) {
        Err(WkbError::Singular { .. }) => true,
        Err(e) => return Err(e),
        Ok(_) => false,
    };
    let mut samples = Vec::with_capacity(window.points);
    for x in window.nodes() {
        if divergent && x.abs() < 0.5 * h {
            continue;
        }
        samples.push((x, evaluate_wkb(pot, energy, x)?));
    }
    let mut peaks = local_maxima(&samples, h);
    let structure = if divergent {
        peaks.retain(|p| p.0.abs() > 2.0 * h);
        peaks.push((0.0, f64::INFINITY));
        peaks.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        PeakStructure::DivergentAtOrigin
    } else if peaks.is_empty() {
        PeakStructure::Flat
    } else if peaks.iter().any(|p| p.0.abs() <= 2.0 * h) {
        PeakStructure::SinglePeak
    } else {
        PeakStructure::DoublePeak
    };
    Ok(WkbProfile {
        energy,
        samples,
        peaks,
        structure,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub x: f64,
    /// Largest `|V_wkb|` in the edge region.
    pub height: f64,
    /// Signed value at the spike.
    pub value: f64,
}

/// The extremum of the force potential produced by the truncation edge at `x > 0`.
///
/// The edge region `[L_eff - 10/w, L_eff + tail]` is scanned at spacing
/// `1e-3 / w` and the extremum refined on a parabola.
pub fn truncation_spike(pot: &Potential, energy: f64) -> Result<Spike, WkbError> {
    let w = pot.spec().sharpness;
    let l = pot.effective_length();
    let lo = (l - 10.0 / w).max(0.5 * l);
    let hi = l + pot.window_tail();
    let h = 1e-3 / w;
    let n = ((hi - lo) / h).ceil() as usize + 1;
    let mut best = (0usize, 0.0f64);
    let mut vals = Vec::with_capacity(n);
    for j in 0..n {
        let v = evaluate_wkb(pot, energy, lo + j as f64 * h)?;
        if v.abs() > best.1.abs() {
            best = (j, v);
        }
        vals.push(v);
    }
    let j = best.0;
    let (x, value) = if j > 0 && j + 1 < n {
        let s = best.1.signum();
        let (xv, yv) = parabolic_vertex(lo + j as f64 * h, h, s * vals[j - 1], s * vals[j], s * vals[j + 1]);
        (xv, s * yv)
    } else {
        (lo + j as f64 * h, best.1)
    };
    Ok(Spike {
        x,
        height: value.abs(),
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{Constant, PotentialSpec, PowerLaw};

    #[test]
    fn constant_potential_gives_zero() {
        for e in [0.5, 3.0] {
            for x in [-2.0, 0.0, 7.5] {
                assert_eq!(evaluate_wkb(&Constant(-1.0), e, x).unwrap(), 0.0);
            }
        }
        let prof = profile(&Constant(0.0), 1.0, ProfileWindow::new(3.0)).unwrap();
        assert_eq!(prof.structure, PeakStructure::Flat);
    }

    #[test]
    fn harmonic_origin_value() {
        // V = -x^2: V' = 0, V'' = -2 at the origin.
        let e = 1.477;
        let v = evaluate_wkb(&PowerLaw { exponent: 2.0 }, e, 0.0).unwrap();
        assert!((v - 1.0 / (2.0 * e)).abs() < 1e-15);
        assert!((v - 0.3385).abs() < 1e-4);
    }

    #[test]
    fn closed_form_away_from_origin() {
        // For -|x|^p: V_wkb = p(p-1)u^(p-2)/(4g) - 5p^2 u^(2p-2)/(16 g^2), g = E + u^p.
        let (p, e) = (3.3, 2.0);
        for x in [0.3f64, -1.1, 2.7] {
            let u = x.abs();
            let g = e + u.powf(p);
            let exact = p * (p - 1.0) * u.powf(p - 2.0) / (4.0 * g) - 5.0 * p * p * u.powf(2.0 * p - 2.0) / (16.0 * g * g);
            let v = evaluate_wkb(&PowerLaw { exponent: p }, e, x).unwrap();
            assert!((v - exact).abs() < 1e-13 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn singular_below_two() {
        let err = evaluate_wkb(&PowerLaw { exponent: 1.5 }, 1.0, 0.0).unwrap_err();
        assert!(matches!(err, WkbError::Singular { .. }));
        assert!(evaluate_wkb(&PowerLaw { exponent: 1.5 }, 1.0, 1e-3).is_ok());
    }

    #[test]
    fn below_barrier_is_an_error() {
        let err = evaluate_wkb(&Constant(2.0), 1.0, 0.0).unwrap_err();
        assert!(matches!(err, WkbError::BelowBarrier { .. }));
    }

    #[test]
    fn bifurcation_at_two() {
        for e in [1.477, 3.0] {
            for (p, single) in [(1.5, true), (1.8, true), (2.0, true), (2.2, false), (3.0, false), (4.0, false)] {
                let prof = profile(&PowerLaw { exponent: p }, e, ProfileWindow::new(5.0)).unwrap();
                assert_eq!(prof.structure.is_single(), single, "p = {p}, E = {e}");
                if !single {
                    assert_eq!(prof.structure, PeakStructure::DoublePeak);
                    assert_eq!(prof.peaks.len(), 2);
                    assert!((prof.peaks[0].0 + prof.peaks[1].0).abs() < 1e-9);
                    assert!((prof.peaks[0].1 - prof.peaks[1].1).abs() < 1e-12);
                }
            }
        }
        let p15 = profile(&PowerLaw { exponent: 1.5 }, 1.477, ProfileWindow::new(5.0)).unwrap();
        assert_eq!(p15.structure, PeakStructure::DivergentAtOrigin);
    }

    #[test]
    fn profile_is_even() {
        let pot = Potential::new(PotentialSpec::by_length(4.0, 3.0, 10.0)).unwrap();
        let prof = profile(&pot, 1.477, ProfileWindow::for_potential(&pot)).unwrap();
        let n = prof.samples.len();
        for j in 0..n / 2 {
            let (a, b) = (prof.samples[j], prof.samples[n - 1 - j]);
            assert_eq!(a.0, -b.0);
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn peak_height_grows_with_p() {
        let heights: Vec<f64> = [4.0, 5.0, 6.0, 7.0, 7.8]
            .iter()
            .map(|&p| {
                profile(&PowerLaw { exponent: p }, 1.477, ProfileWindow::new(3.0))
                    .unwrap()
                    .max_height()
                    .unwrap()
            })
            .collect();
        assert!(heights.windows(2).all(|w| w[1] > w[0]), "{heights:?}");
        assert!(heights[4] > 1.0, "{heights:?}");
    }

    #[test]
    fn tail_decays_as_inverse_square() {
        let pot = PowerLaw { exponent: 4.0 };
        let xs: Vec<f64> = (0..40).map(|j| 10.0 * 10f64.powf(j as f64 / 39.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| evaluate_wkb(&pot, 1.477, x).unwrap().abs()).collect();
        let fit = crate::fit::fit_power_law(&xs, &ys).unwrap();
        assert!((fit.exponent + 2.0).abs() < 0.05, "{}", fit.exponent);
    }

    #[test]
    fn spike_shrinks_with_length_and_grows_with_sharpness() {
        let spike = |l: f64, w: f64| {
            let pot = Potential::new(PotentialSpec::by_length(4.0, l, w)).unwrap();
            truncation_spike(&pot, 1.477).unwrap()
        };
        let hs: Vec<f64> = [2.0, 5.0, 8.0].iter().map(|&l| spike(l, 10.0).height).collect();
        assert!(hs[0] > hs[1] && hs[1] > hs[2], "{hs:?}");
        assert!(spike(5.0, 20.0).height > spike(5.0, 10.0).height);
        let s = spike(5.0, 10.0);
        assert!((s.x - 5.0).abs() < 0.5);
    }

    #[test]
    fn interior_matches_infinite_length() {
        let inf = PowerLaw { exponent: 4.0 };
        let pot = Potential::new(PotentialSpec::by_length(4.0, 5.0, 10.0)).unwrap();
        for x in [0.0, 0.5, 1.0, 2.0, 3.0] {
            let a = evaluate_wkb(&pot, 1.477, x).unwrap();
            let b = evaluate_wkb(&inf, 1.477, x).unwrap();
            assert!((a - b).abs() < 1e-6, "x = {x}: {a} vs {b}");
        }
    }
}

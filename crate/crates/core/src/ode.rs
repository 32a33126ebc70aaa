//! Adaptive Dormand–Prince 5(4) integration for small complex systems.
//!
//! The scattering code integrates `y'' = (V - E) y` as a two-component first
//! order system, possibly at complex energy, so the state is a fixed-size
//! array of `Complex64`. Step control follows Hairer's `dopri5`, including the
//! fourth-order continuous extension used for sampling the solution.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at x = {x} (h = {h:e})")]
    StepSizeUnderflow { x: f64, h: f64 },
    #[error("step budget of {budget} exhausted at x = {x}")]
    TooManySteps { x: f64, budget: usize },
    #[error("solution left the representable range at x = {x}")]
    NonFinite { x: f64 },
    #[error("solution magnitude {magnitude:e} exceeded the growth guard at x = {x}")]
    GrowthGuard { x: f64, magnitude: f64 },
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

pub type State<const N: usize> = [Complex64; N];

/// Right-hand side `dy/dx = f(x, y)`.
pub trait System<const N: usize> {
    fn rhs(&self, x: f64, y: &State<N>) -> State<N>;
}

impl<const N: usize, F> System<N> for F
where
    F: Fn(f64, &State<N>) -> State<N>,
{
    fn rhs(&self, x: f64, y: &State<N>) -> State<N> {
        self(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-11,
            atol: 1e-13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DormandPrince {
    pub tol: Tolerances,
    pub max_steps: usize,
    /// Largest allowed |h|; `None` means the whole interval.
    pub h_max: Option<f64>,
    /// Abort when any component exceeds this magnitude.
    pub growth_guard: f64,
}

impl Default for DormandPrince {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            max_steps: 20_000_000,
            h_max: None,
            growth_guard: 1e150,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Dense-output polynomial for one accepted step.
struct Interpolant<const N: usize> {
    x_old: f64,
    h: f64,
    r: [State<N>; 5],
}

impl<const N: usize> Interpolant<N> {
    fn eval(&self, x: f64) -> State<N> {
        let theta = (x - self.x_old) / self.h;
        let theta1 = 1.0 - theta;
        let mut out = [Complex64::new(0.0, 0.0); N];
        for (i, o) in out.iter_mut().enumerate() {
            let [r1, r2, r3, r4, r5] = &self.r;
            *o = r1[i] + (r2[i] + (r3[i] + (r4[i] + r5[i] * theta1) * theta) * theta1) * theta;
        }
        out
    }
}

fn axpy<const N: usize>(y: &State<N>, h: f64, terms: &[(f64, &State<N>)]) -> State<N> {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (c, k) in terms {
            acc += k[i] * *c;
        }
        *o += acc * h;
    }
    out
}

impl DormandPrince {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            tol: Tolerances { rtol, atol },
            ..Self::default()
        }
    }

    /// Integrates from `x0` to `x1` (either direction) and returns `y(x1)`.
    pub fn integrate<const N: usize, S: System<N>>(
        &self,
        sys: &S,
        x0: f64,
        x1: f64,
        y0: State<N>,
    ) -> Result<(State<N>, Stats), OdeError> {
        self.integrate_sampled(sys, x0, x1, y0, &[], |_, _| {})
    }

    /// Like [`integrate`](Self::integrate), additionally reporting the solution at each
    /// of `samples` (ordered in the direction of integration) via dense output.
    pub fn integrate_sampled<const N: usize, S: System<N>>(
        &self,
        sys: &S,
        x0: f64,
        x1: f64,
        y0: State<N>,
        samples: &[f64],
        mut observe: impl FnMut(f64, &State<N>),
    ) -> Result<(State<N>, Stats), OdeError> {
        let dir = if x1 >= x0 { 1.0 } else { -1.0 };
        let span = (x1 - x0).abs();
        let mut stats = Stats::default();
        if span == 0.0 {
            for &s in samples {
                observe(s, &y0);
            }
            return Ok((y0, stats));
        }
        let h_max = self.h_max.unwrap_or(span).min(span);
        let mut x = x0;
        let mut y = y0;
        let mut k1 = sys.rhs(x, &y);
        stats.evaluations += 1;
        let mut h = self.initial_step(sys, x, &y, &k1, dir, h_max, &mut stats);
        let mut next_sample = 0usize;
        let mut last_err = 1e-4f64;
        let mut reject_streak = false;

        loop {
            if stats.accepted + stats.rejected >= self.max_steps {
                return Err(OdeError::TooManySteps {
                    x,
                    budget: self.max_steps,
                });
            }
            let remaining = (x1 - x) * dir;
            let mut last = false;
            if h.abs() >= remaining {
                h = remaining * dir;
                last = true;
            }
            if h.abs() <= 1e-14 * x.abs().max(1.0) {
                return Err(OdeError::StepSizeUnderflow { x, h });
            }

            let k2 = sys.rhs(x + C2 * h, &axpy(&y, h, &[(A21, &k1)]));
            let k3 = sys.rhs(x + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
            let k4 = sys.rhs(x + C4 * h, &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
            let k5 = sys.rhs(
                x + C5 * h,
                &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let k6 = sys.rhs(
                x + h,
                &axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            );
            let y_new = axpy(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
            let k7 = sys.rhs(x + h, &y_new);
            stats.evaluations += 6;

            let mut err = 0.0f64;
            for i in 0..N {
                let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
                let sc = self.tol.atol + self.tol.rtol * y[i].norm().max(y_new[i].norm());
                err = err.max(e.norm() / sc);
            }
            if !err.is_finite() {
                return Err(OdeError::NonFinite { x });
            }

            if err <= 1.0 {
                stats.accepted += 1;
                let x_new = if last { x1 } else { x + h };
                if next_sample < samples.len() {
                    let mut r5 = [Complex64::new(0.0, 0.0); N];
                    let mut r2 = [Complex64::new(0.0, 0.0); N];
                    let mut r3 = [Complex64::new(0.0, 0.0); N];
                    let mut r4 = [Complex64::new(0.0, 0.0); N];
                    for i in 0..N {
                        let ydiff = y_new[i] - y[i];
                        let bspl = k1[i] * h - ydiff;
                        r2[i] = ydiff;
                        r3[i] = bspl;
                        r4[i] = ydiff - k7[i] * h - bspl;
                        r5[i] = (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7) * h;
                    }
                    let interp = Interpolant {
                        x_old: x,
                        h,
                        r: [y, r2, r3, r4, r5],
                    };
                    while next_sample < samples.len() && (samples[next_sample] - x_new) * dir <= 0.0 {
                        let s = samples[next_sample];
                        observe(s, &interp.eval(s));
                        next_sample += 1;
                    }
                }
                x = x_new;
                y = y_new;
                k1 = k7;
                let mag = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
                if !mag.is_finite() {
                    return Err(OdeError::NonFinite { x });
                }
                if mag > self.growth_guard {
                    return Err(OdeError::GrowthGuard { x, magnitude: mag });
                }
                if last {
                    while next_sample < samples.len() {
                        observe(samples[next_sample], &y);
                        next_sample += 1;
                    }
                    return Ok((y, stats));
                }
                // PI controller (Hairer's beta = 0.04).
                let fac = 0.9 * err.max(1e-10).powf(-0.2 + 0.04 * 0.75) * last_err.powf(0.04);
                let mut fac = fac.clamp(0.2, 10.0);
                if reject_streak {
                    fac = fac.min(1.0);
                }
                reject_streak = false;
                last_err = err.max(1e-4);
                h = (h * fac).abs().min(h_max) * dir;
            } else {
                stats.rejected += 1;
                reject_streak = true;
                let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                h *= fac;
            }
        }
    }

    /// Classic fixed-step integration with `steps` equal steps (used to check the order).
    pub fn integrate_fixed<const N: usize, S: System<N>>(
        sys: &S,
        x0: f64,
        x1: f64,
        y0: State<N>,
        steps: usize,
    ) -> State<N> {
        let h = (x1 - x0) / steps as f64;
        let mut y = y0;
        let mut x = x0;
        for _ in 0..steps {
            let k1 = sys.rhs(x, &y);
            let k2 = sys.rhs(x + C2 * h, &axpy(&y, h, &[(A21, &k1)]));
            let k3 = sys.rhs(x + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
            let k4 = sys.rhs(x + C4 * h, &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
            let k5 = sys.rhs(
                x + C5 * h,
                &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let k6 = sys.rhs(
                x + h,
                &axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            );
            y = axpy(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
            x += h;
        }
        y
    }

    #[allow(clippy::too_many_arguments)]
    fn initial_step<const N: usize, S: System<N>>(
        &self,
        sys: &S,
        x: f64,
        y: &State<N>,
        f0: &State<N>,
        dir: f64,
        h_max: f64,
        stats: &mut Stats,
    ) -> f64 {
        // Hairer's hinit heuristic.
        let sc = |i: usize| self.tol.atol + self.tol.rtol * y[i].norm();
        let mut dnf = 0.0;
        let mut dny = 0.0;
        for i in 0..N {
            dnf += (f0[i].norm() / sc(i)).powi(2);
            dny += (y[i].norm() / sc(i)).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
            1e-6
        } else {
            (dny / dnf).sqrt() * 0.01
        };
        h = h.min(h_max);
        let y1 = axpy(y, h * dir, &[(1.0, f0)]);
        let f1 = sys.rhs(x + h * dir, &y1);
        stats.evaluations += 1;
        let mut der2 = 0.0;
        for i in 0..N {
            der2 += ((f1[i] - f0[i]).norm() / sc(i)).powi(2);
        }
        let der2 = der2.sqrt() / h;
        let der12 = der2.max(dnf.sqrt());
        let h1 = if der12 <= 1e-15 {
            (h * 1e-3).max(1e-6)
        } else {
            (0.01 / der12).powf(0.2)
        };
        (100.0 * h).min(h1).min(h_max) * dir
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// y'' = -k^2 y written as a first-order system.
    fn oscillator(k: f64) -> impl Fn(f64, &State<2>) -> State<2> {
        move |_x, y| [y[1], -y[0] * (k * k)]
    }

    #[test]
    fn harmonic_oscillator_matches_closed_form() {
        let k = 3.0;
        let solver = DormandPrince::with_tolerances(1e-12, 1e-14);
        let (y, stats) = solver.integrate(&oscillator(k), 0.0, 10.0, [c(1.0, 0.0), c(0.0, k)]).unwrap();
        // y = exp(i k x)
        let exact = Complex64::from_polar(1.0, k * 10.0);
        assert!((y[0] - exact).norm() < 1e-9, "{:?} vs {exact}", y[0]);
        assert!(stats.accepted > 10);
    }

    #[test]
    fn backward_integration() {
        let k = 2.0;
        let solver = DormandPrince::default();
        let (y, _) = solver.integrate(&oscillator(k), 5.0, -5.0, [c(1.0, 0.0), c(0.0, k)]).unwrap();
        let exact = Complex64::from_polar(1.0, -k * 10.0);
        assert!((y[0] - exact).norm() < 1e-8);
    }

    #[test]
    fn dense_output_is_accurate() {
        let k = 1.7;
        let solver = DormandPrince::with_tolerances(1e-12, 1e-14);
        let samples: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let mut worst = 0.0f64;
        solver
            .integrate_sampled(&oscillator(k), 0.0, 10.0, [c(1.0, 0.0), c(0.0, k)], &samples, |x, y| {
                worst = worst.max((y[0] - Complex64::from_polar(1.0, k * x)).norm());
            })
            .unwrap();
        assert!(worst < 1e-9, "dense output error {worst}");
    }

    #[test]
    fn fixed_step_order_is_five() {
        let k = 1.0;
        let exact = Complex64::from_polar(1.0, 4.0);
        let err = |n| {
            let y = DormandPrince::integrate_fixed(&oscillator(k), 0.0, 4.0, [c(1.0, 0.0), c(0.0, k)], n);
            (y[0] - exact).norm()
        };
        let (e1, e2) = (err(40), err(80));
        let order = (e1 / e2).log2();
        assert!((order - 5.0).abs() < 0.3, "observed order {order}");
    }

    #[test]
    fn growth_guard_trips() {
        let solver = DormandPrince {
            growth_guard: 1e6,
            ..DormandPrince::default()
        };
        let sys = |_x: f64, y: &State<2>| [y[1], y[0] * 25.0];
        let res = solver.integrate(&sys, 0.0, 10.0, [c(1.0, 0.0), c(5.0, 0.0)]);
        assert!(matches!(res, Err(OdeError::GrowthGuard { .. })));
    }

    #[test]
    fn step_budget_reported() {
        let solver = DormandPrince {
            max_steps: 5,
            ..DormandPrince::default()
        };
        let res = solver.integrate(&oscillator(50.0), 0.0, 100.0, [c(1.0, 0.0), c(0.0, 50.0)]);
        assert!(matches!(res, Err(OdeError::TooManySteps { .. })));
    }
}

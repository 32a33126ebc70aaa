//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so that every criterion is
//! evaluated and reported even when an earlier one fails. The process exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reflectionless::cli_io::{self, RunConfig, RunOptions};
use reflectionless::eigensolver::eigenvalues;
use reflectionless::par::{self, Execution};
use reflectionless::potentials::{Exterior, Potential, PotentialSpec, PowerLaw};
use reflectionless::rzero::{
    compute_spectrum, ep_by_scattering, refine_spec_by_reflection_root, track_and_find_ep, EpSettings, Phase,
    RzeroError, Spectrum, SpectrumSettings,
};
use reflectionless::scattering::{
    characterize_dip, dip_probe_grid, local_minima, DipQuantity, Incidence, ScatteringSolver, SquareWell,
};
use reflectionless::sweeps::{envelope_fit, noise_study, NoiseFamily, NoiseStudy};
use reflectionless::wkb::{self, PeakStructure, ProfileWindow};
use std::sync::Mutex;
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Accepted R-zeros collected from every spectrum computed here, for criterion 9.
static SEEN: Mutex<Vec<Spectrum>> = Mutex::new(Vec::new());

fn spectrum(spec: PotentialSpec, top: f64) -> Result<Spectrum, RzeroError> {
    let s = compute_spectrum(&spec, &SpectrumSettings::default().window(0.0, top))?;
    SEEN.lock().unwrap().push(s.clone());
    Ok(s)
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn ground_state() -> Outcome {
    let t = Instant::now();
    let e = spectrum(PotentialSpec::by_length(4.0, 6.0, 1000.0), 3.0)
        .ok()
        .and_then(|s| s.lowest_real());
    let secs = t.elapsed().as_secs_f64();
    let smooth = spectrum(PotentialSpec::by_length(4.0, 6.0, 10.0), 3.0)
        .ok()
        .and_then(|s| s.lowest_real());
    match e {
        Some(e) => outcome(
            within(e, 1.477, 5e-4) && secs < 60.0,
            format!(
                "p=4 L=6 w=1000: E0 = {e:.7} (target 1.477 +- 5e-4), {secs:.1} s; w=10 gives {}",
                smooth.map_or("none".into(), |v| format!("{v:.7}"))
            ),
        ),
        None => outcome(false, "no real R-zero found".into()),
    }
}

fn second_rzero() -> Outcome {
    let e1 = spectrum(PotentialSpec::by_length(4.0, 8.0, 10.0), 8.0)
        .ok()
        .and_then(|s| s.real_energies().get(1).copied());
    let pot = Potential::new(PotentialSpec::by_length(4.0, 15.0, 1000.0)).unwrap();
    let es: Vec<f64> = (0..=40).map(|j| 5.8 + 0.01 * j as f64).collect();
    let dip = ScatteringSolver::default()
        .reflectance_curve(&pot, &es, 1e-9, Execution::default())
        .ok()
        .and_then(|c| {
            local_minima(&c)
                .into_iter()
                .map(|i| c[i])
                .min_by(|a, b| a.reflectance.total_cmp(&b.reflectance))
        });
    match (e1, dip) {
        (Some(e1), Some(d)) => outcome(
            within(e1, 6.00, 2e-2) && within(d.energy.re, 5.97, 2e-2),
            format!(
                "L=8 w=10: E1 = {e1:.6} (6.00 +- 0.02); L=15 w=1000 dip at {:.6}, |R|^2 = {:.1e} (5.97 +- 0.02)",
                d.energy.re, d.reflectance
            ),
        ),
        _ => outcome(false, format!("E1 {e1:?}, dip {dip:?}")),
    }
}

fn phase_of(p: f64, l: f64, top: f64, settings: SpectrumSettings) -> (Phase, usize) {
    match compute_spectrum(&PotentialSpec::by_length(p, l, 10.0), &settings.window(0.0, top)) {
        Ok(s) => {
            let n = s.real_energies().len();
            let phase = s.phase;
            SEEN.lock().unwrap().push(s);
            (phase, n)
        }
        // Nothing survived the gates: no real R-zero in the window.
        Err(RzeroError::EmptyAfterFilter { .. }) => (Phase::Broken, 0),
        Err(e) => panic!("p={p} L={l}: {e}"),
    }
}

fn phase_diagram() -> Outcome {
    use Phase::*;
    let points: &[(f64, f64, f64, Phase)] = &[
        (1.5, 16.0, 6.0, Broken),
        (2.0, 16.0, 6.0, Broken),
        (2.0, 50.0, 6.0, Broken),
        (2.2, 8.0, 10.0, Mixed),
        (2.5, 6.0, 12.0, Mixed),
        (3.0, 6.0, 15.0, Mixed),
        (3.4, 10.0, 12.0, Mixed),
        (3.7, 5.0, 25.0, Mixed),
        (4.0, 4.0, 25.0, Unbroken),
        (5.0, 3.0, 25.0, Unbroken),
        (6.0, 2.5, 20.0, Unbroken),
        (8.0, 2.0, 25.0, Unbroken),
    ];
    let mut ok = true;
    let mut labels = Vec::new();
    for &(p, l, top, want) in points {
        let (got, _) = phase_of(p, l, top, SpectrumSettings::default());
        ok &= got == want;
        labels.push(format!("p={p}:{got}"));
    }
    // Unbroken: real count up to half the truncation depth L^p grows with L.
    // Below a fixed ceiling it instead converges to the untruncated levels.
    let counts: Vec<usize> = [2.0f64, 2.5, 3.0, 3.5]
        .iter()
        .map(|&l| phase_of(4.0, l, 0.5 * l.powi(4), SpectrumSettings::default()).1)
        .collect();
    let growing = counts.windows(2).all(|w| w[1] > w[0]);
    // Mixed: finite real count unchanged by a longer truncation.
    let mixed: Vec<usize> = [6.0, 8.0]
        .iter()
        .map(|&l| phase_of(3.0, l, 15.0, SpectrumSettings::default()).1)
        .collect();
    // Classification under finer grids and a different absorber angle.
    let fine = SpectrumSettings {
        survey_kh: 0.125,
        refine_kh: 0.15,
        scaling_angle: 0.4,
        ..SpectrumSettings::default()
    };
    let stable = [(1.5, 16.0, 6.0), (3.0, 6.0, 15.0), (6.0, 2.5, 20.0)]
        .iter()
        .all(|&(p, l, top)| phase_of(p, l, top, fine.clone()).0 == phase_of(p, l, top, SpectrumSettings::default()).0);
    outcome(
        ok && growing && mixed[0] == mixed[1] && stable,
        format!(
            "{}; p=4 real count below L^p/2 for L=2,2.5,3,3.5: {counts:?}; p=3 real count for L=6,8: {mixed:?}; stable under refinement: {stable}",
            labels.join(" ")
        ),
    )
}

fn exceptional_points() -> Outcome {
    let t = Instant::now();
    let ep = |l: f64, ps: (f64, f64), band: (f64, f64)| {
        let fam = move |p: f64| PotentialSpec::by_length(p, l, 10.0);
        let grid: Vec<f64> = (0..=6).map(|j| ps.0 + (ps.1 - ps.0) * j as f64 / 6.0).collect();
        track_and_find_ep(&fam, &grid, band, &SpectrumSettings::default(), &EpSettings::default(), Execution::default())
            .ok()
            .and_then(|s| s.accepted.into_iter().next())
    };
    let ep1 = ep(10.0, (3.3, 3.6), (6.0, 11.0));
    let ep2 = ep(6.0, (3.85, 4.0), (16.0, 25.0));
    let secs = t.elapsed().as_secs_f64();
    let ok1 = ep1
        .as_ref()
        .is_some_and(|c| within(c.p_star, 3.44, 0.03) && within(c.e_star, 8.4, 0.2));
    let ok2 = ep2
        .as_ref()
        .is_some_and(|c| within(c.p_star, 3.94, 0.03) && within(c.e_star, 20.2, 0.4));
    let fmt = |c: &Option<reflectionless::rzero::EpCandidate>| {
        c.as_ref()
            .map_or("not found".into(), |c| format!("p* = {:.5}, E* = {:.4}", c.p_star, c.e_star))
    };

    // Dip lineshapes.
    let solver = ScatteringSolver::default();
    let iso_spec = PotentialSpec::by_length(4.0, 6.0, 10.0);
    let iso = refine_spec_by_reflection_root(&iso_spec, C64::new(6.0, 0.0)).ok().and_then(|root| {
        let pot = Potential::new(iso_spec.clone()).unwrap();
        let e = root.energy.re;
        let c = solver
            .reflectance_curve(&pot, &dip_probe_grid(e, 1e-4, 1.0, 8), 1e-9, Execution::default())
            .ok()?;
        characterize_dip(&c, e, DipQuantity::Reflectance).ok()
    });
    let fam = |p: f64| PotentialSpec::by_length(p, 6.0, 10.0);
    let at_ep = ep_by_scattering(&fam, (3.40, 3.48), (7.5, 9.5), 1e-9, &solver).ok().and_then(|ep| {
        let pot = Potential::new(fam(ep.p_star)).unwrap();
        let c = solver
            .reflectance_curve(&pot, &dip_probe_grid(ep.e_star, 1e-3, 1.0, 8), 1e-9, Execution::default())
            .ok()?;
        characterize_dip(&c, ep.e_star, DipQuantity::Reflectance).ok()
    });
    let x_iso = iso.as_ref().map_or(f64::NAN, |d| d.exponent);
    let x_ep = at_ep.as_ref().map_or(f64::NAN, |d| d.exponent);
    let ok_dips = within(x_iso, 2.0, 0.3) && within(x_ep, 4.0, 0.3);
    outcome(
        ok1 && ok2 && ok_dips && secs < 1800.0,
        format!(
            "EP1 {} (3.44 +- 0.03, 8.4 +- 0.2) {}; EP2 {} (3.94 +- 0.03, 20.2 +- 0.4) {}; tracking {secs:.0} s; dip exponents {x_iso:.4} (2.0 +- 0.3), {x_ep:.4} at EP (4.0 +- 0.3)",
            fmt(&ep1),
            if ok1 { "ok" } else { "MISS" },
            fmt(&ep2),
            if ok2 { "ok" } else { "MISS" },
        ),
    )
}

fn reflectance_shapes() -> Outcome {
    let solver = ScatteringSolver::default();
    let pot = Potential::new(PotentialSpec::by_length(2.0, 200.0, 10.0)).unwrap();
    let es: Vec<f64> = (0..=30).map(|j| 3.0 + 0.1 * j as f64).collect();
    let c = solver.reflectance_curve(&pot, &es, 1e-4, Execution::default()).unwrap();
    let decreasing = c.windows(2).all(|w| w[1].reflectance < w[0].reflectance);
    let no_min = local_minima(&c).is_empty();

    let pot = Potential::new(PotentialSpec::by_length(6.0, 3.0, 1000.0)).unwrap();
    let es: Vec<f64> = (0..=140).map(|j| 0.5 + 0.025 * j as f64).collect();
    let c = solver.reflectance_curve(&pot, &es, 1e-4, Execution::default()).unwrap();
    let peak = local_minima(&c).first().and_then(|&i| {
        (i + 1..c.len() - 1)
            .find(|&j| c[j].reflectance > c[j - 1].reflectance && c[j].reflectance >= c[j + 1].reflectance)
            .map(|j| (c[i].energy.re, c[j].energy.re, c[j].reflectance))
    });
    let peak_ok = peak.is_some_and(|(_, _, r)| within(r, 0.10, 0.03));
    outcome(
        decreasing && no_min && peak_ok,
        format!(
            "p=2 L=200 on [3,6]: strictly decreasing {decreasing}, no minima {no_min}; p=6 L=3 w=1000 first dip / next peak {}",
            peak.map_or("not found".into(), |(d, e, r)| format!("{d:.3} / {e:.3}, |R|^2 = {r:.4} (0.10 +- 0.03)"))
        ),
    )
}

fn envelope_law() -> Outcome {
    let spec = PotentialSpec::by_length(4.0, 15.0, 10.0);
    let fit = refine_spec_by_reflection_root(&spec, C64::new(1.477, 0.0))
        .ok()
        .and_then(|root| envelope_fit(&spec, root.energy.re).ok());
    match fit {
        Some(f) => outcome(
            within(f.exponent, -1.0, 0.01),
            format!(
                "exponent {:.5} (-1.00 +- 0.01), prefactor {:.4} with psi(0) = 1, {} maxima",
                f.exponent,
                f.prefactor,
                f.maxima
            ),
        ),
        None => outcome(false, "envelope fit failed".into()),
    }
}

fn wkb_bifurcation() -> Outcome {
    let e = 1.477;
    let structure = |p: f64| {
        wkb::profile(&PowerLaw { exponent: p }, e, ProfileWindow::new(5.0))
            .map(|w| w.structure)
            .ok()
    };
    let single = [1.5, 2.0].iter().all(|&p| structure(p).is_some_and(|s| s.is_single()));
    let double = [2.2, 3.0, 4.0, 6.0]
        .iter()
        .all(|&p| structure(p) == Some(PeakStructure::DoublePeak));
    let pot = PowerLaw { exponent: 4.0 };
    let xs: Vec<f64> = (0..40).map(|j| 10.0 * 10f64.powf(j as f64 / 39.0)).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| wkb::evaluate_wkb(&pot, e, x).unwrap().abs()).collect();
    let slope = reflectionless::fit::fit_power_law(&xs, &ys).unwrap().exponent;
    let spikes: Vec<f64> = [2.0, 5.0, 8.0]
        .iter()
        .map(|&l| {
            let pot = Potential::new(PotentialSpec::by_length(4.0, l, 10.0)).unwrap();
            wkb::truncation_spike(&pot, e).unwrap().height
        })
        .collect();
    let shrinking = spikes.windows(2).all(|w| w[1] < w[0]);
    outcome(
        single && double && within(slope, -2.0, 0.05) && shrinking,
        format!(
            "single for p=1.5,2: {single}; double for p=2.2,3,4,6: {double}; tail slope {slope:.4}; spike heights L=2,5,8: {:.4} {:.4} {:.4}",
            spikes[0], spikes[1], spikes[2]
        ),
    )
}

fn noise_robustness() -> Outcome {
    let base = PotentialSpec::by_length(4.0, 6.0, 10.0);
    let study = |family, top: f64, strengths: Vec<f64>| {
        noise_study(
            &NoiseStudy::new(base.clone(), family, strengths, SpectrumSettings::default().window(0.0, top)),
            Execution::default(),
        )
        .unwrap()
    };
    let sym = study(NoiseFamily::Symmetric, 4.0, NoiseStudy::default_strengths());
    let s = sym.summary_for(0).find(|s| within(s.strength, 1e-3, 1e-12)).unwrap();
    let sym_ok = within(s.mean_re, sym.references[0], 1e-2) && s.matched == 3;

    let par = study(NoiseFamily::ParityBreaking, 8.0, NoiseStudy::default_strengths());
    let fit = par.im_scaling.clone();
    let par_ok = fit.as_ref().is_some_and(|f| f.residual < 0.1);

    let mut quad_dev = 0.0f64;
    let mut quad_ok = true;
    for family in [NoiseFamily::NegativeQuadratic, NoiseFamily::PositiveQuadratic] {
        let q = study(family, 8.0, vec![1e-3, 1e-2, 1e-1, 1.0]);
        for (k, &r) in q.references.iter().enumerate() {
            match q.summary_for(k).find(|s| within(s.strength, 1e-3, 1e-12)) {
                Some(s) if s.matched > 0 => {
                    quad_dev = quad_dev.max((s.mean_re - r).abs());
                    quad_ok &= (s.mean_re - r).abs() < 1e-2;
                }
                _ => quad_ok = false,
            }
        }
    }
    outcome(
        sym_ok && par_ok && quad_ok,
        format!(
            "symmetric 1e-3: {:.6} vs clean {:.6}; parity-breaking |Im E0| ~ n^{:.3}, log-log residual {:.4}; quadratic 1e-3 max shift {quad_dev:.2e}",
            s.mean_re,
            sym.references[0],
            fit.as_ref().map_or(f64::NAN, |f| f.exponent),
            fit.as_ref().map_or(f64::NAN, |f| f.residual),
        ),
    )
}

fn property_suites() -> Outcome {
    // Flux unitarity on random truncated potentials.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let solver = ScatteringSolver::default();
    let cases: Vec<(PotentialSpec, f64)> = (0..1000)
        .map(|_| {
            let spec = PotentialSpec::by_length(
                rng.random_range(1.5..8.0),
                rng.random_range(1.0..4.0),
                rng.random_range(5.0..50.0),
            )
            .with_exterior(if rng.random_bool(0.5) { Exterior::Zero } else { Exterior::Plateau });
            (spec, rng.random_range(0.05..30.0))
        })
        .collect();
    let flux = par::map(Execution::default(), &cases, |(spec, e)| {
        let pot = Potential::new(spec.clone()).unwrap();
        solver.solve(&pot, *e, Incidence::Left).unwrap().flux_error.abs()
    })
    .into_iter()
    .fold(0.0, f64::max);

    // Eigensolver against characteristic-polynomial roots.
    let eig_dev = (0..500u64)
        .map(|seed| {
            let a = random_matrix(seed, 1 + (seed % 5) as usize);
            multiset_distance(&eigenvalues(&a).unwrap(), &poly_roots(&charpoly(&a)))
        })
        .fold(0.0, f64::max);

    // Cross-method agreement and pairing over every spectrum computed above.
    let seen = SEEN.lock().unwrap();
    let mut agree = 0.0f64;
    let mut missing = 0;
    let mut pairing = 0.0f64;
    let mut count = 0;
    for s in seen.iter() {
        pairing = pairing.max(s.pairing_error());
        for r in &s.rzeros {
            count += 1;
            match r.reflection_agreement() {
                Some(a) => agree = agree.max(a),
                None => missing += 1,
            }
        }
    }
    drop(seen);

    // Square well against the closed form.
    let strict = ScatteringSolver::with_tolerance(1e-12);
    let well_dev = (0..200)
        .map(|_| {
            let well = SquareWell {
                depth: rng.random_range(0.1..20.0),
                half_width: rng.random_range(0.1..3.0),
            };
            let e = rng.random_range(0.01..30.0);
            (strict.solve(&well, e, Incidence::Left).unwrap().reflectance - well.exact_reflectance(e)).abs()
        })
        .fold(0.0, f64::max);

    // Byte-identical reruns through the dataset writer.
    let dir = tempfile::tempdir().unwrap();
    let rerun = |sub: &str| {
        let cfg = cli_io::parse_config(
            "kind = \"sweep\"\nseed = 5\np = 4\nL = 4\n[spectrum]\ne_max = 8\n[sweep]\naxis = \"n_r\"\nvalues = [0.001, 0.01]\nseeds = [1, 2]\nnoise_kind = \"parity_breaking\"\n",
        )
        .unwrap();
        let cfg = RunConfig {
            out: dir.path().join(sub),
            ..cfg
        };
        let sequential = if sub == "b" { Execution::Sequential } else { Execution::default() };
        let report = cli_io::run(
            &cfg,
            &RunOptions {
                overwrite: false,
                exec: sequential,
            },
        )
        .unwrap();
        report
            .files
            .iter()
            .filter(|f| f.extension().is_some_and(|e| e == "csv"))
            .map(|f| std::fs::read(f).unwrap())
            .collect::<Vec<_>>()
    };
    let identical = rerun("a") == rerun("b");

    let ok = flux < 1e-8 && eig_dev < 1e-8 && agree < 1e-6 && missing == 0 && pairing < 1e-8 && well_dev < 1e-8 && identical;
    outcome(
        ok,
        format!(
            "flux {flux:.1e} over 1000 cases; eigen oracle {eig_dev:.1e} over 500 matrices; CAP vs reflection root {agree:.1e} over {count} R-zeros ({missing} unchecked); pairing {pairing:.1e}; square well {well_dev:.1e}; reruns identical: {identical}"
        ),
    )
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("ground-state R-zero", ground_state),
        ("second R-zero", second_rzero),
        ("phase diagram", phase_diagram),
        ("exceptional points", exceptional_points),
        ("reflectance phenomenology", reflectance_shapes),
        ("envelope law", envelope_law),
        ("WKB bifurcation", wkb_bifurcation),
        ("noise robustness", noise_robustness),
        ("property suites", property_suites),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} {:<26} {}  [{:.0} s] {}",
            k + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

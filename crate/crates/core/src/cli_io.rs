//! Run configuration, experiment driver and dataset files.
//!
//! A run is described by a TOML document. Potential parameters sit at the top
//! level; each experiment kind reads its own table:
//!
//! ```toml
//! kind = "spectrum"      # spectrum | scatter | wkb | ep | sweep | noise
//! seed = 0
//! out = "out"
//! p = 4.0
//! L = 6.0                # or vmax = |V_max|
//! w = 10.0
//! exterior = "plateau"   # or "zero"
//!
//! [spectrum]             # SpectrumSettings, every key optional
//! e_max = 10.0
//! ```
//!
//! Unknown keys are rejected. Every output file `name.csv` is paired with a
//! `name.json` sidecar holding the resolved configuration, from which the run
//! can be repeated bit for bit.

use crate::par::Execution;
use crate::potentials::{NoiseKind, NoiseSpec, Perturbation, PotentialSpec, QuadraticSpec, Exterior, Truncation};
use crate::rzero::{
    compute_spectrum_with, ep_by_scattering, track_and_find_ep, EpSettings, RZero, RzeroError, RzeroKind,
    SpectrumSettings,
};
use crate::scattering::{
    characterize_dip, local_minima, DipQuantity, Incidence, ScatteringError, ScatteringResult, ScatteringSolver,
};
use crate::sweeps::{self, Axis, NoiseFamily, NoiseStudy, SweepError, SweepPlan};
use crate::wkb::{self, ProfileWindow, WkbError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    pub const PARTIAL: i32 = 4;
    pub const OUTPUT: i32 = 5;
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path} exists; pass --overwrite to replace it")]
    Collision { path: PathBuf },
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
    #[error("output error: {0}")]
    Csv(#[from] csv::Error),
    #[error("output error: {0}")]
    Json(#[from] serde_json::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => exit::CONFIG,
            RunError::Numerical(_) => exit::NUMERICAL,
            _ => exit::OUTPUT,
        }
    }
}

impl From<RzeroError> for RunError {
    fn from(e: RzeroError) -> Self {
        match e {
            RzeroError::Potential(_) | RzeroError::Settings(_) | RzeroError::NonMonotone => {
                RunError::Config(e.to_string())
            }
            _ => RunError::Numerical(e.to_string()),
        }
    }
}

impl From<SweepError> for RunError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Rzero(e) => e.into(),
            SweepError::Scattering(e) => e.into(),
            SweepError::TooFewMaxima { .. } => RunError::Numerical(e.to_string()),
            _ => RunError::Config(e.to_string()),
        }
    }
}

impl From<ScatteringError> for RunError {
    fn from(e: ScatteringError) -> Self {
        match e {
            ScatteringError::NonPropagating { .. } | ScatteringError::UnsortedGrid => RunError::Config(e.to_string()),
            _ => RunError::Numerical(e.to_string()),
        }
    }
}

impl From<WkbError> for RunError {
    fn from(e: WkbError) -> Self {
        match e {
            WkbError::Singular { .. } => RunError::Numerical(e.to_string()),
            _ => RunError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    Spectrum,
    Scatter,
    Wkb,
    Ep,
    Sweep,
    Noise,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::Scatter => "scatter",
            ExperimentKind::Wkb => "wkb",
            ExperimentKind::Ep => "ep",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Noise => "noise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeConfig {
    /// Fit the envelope of the lowest real R-zero's scattering state.
    pub enabled: bool,
    pub x_lo: f64,
    /// Upper end as a fraction of `L_eff`.
    pub x_hi_fraction: f64,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            x_lo: sweeps::ENVELOPE_X_LO,
            x_hi_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatterConfig {
    pub e_min: f64,
    pub e_max: f64,
    pub points: usize,
    /// Dip positions are refined until bracketed this tightly.
    pub resolution: f64,
    pub incidence: Incidence,
    /// Fit the lineshape exponent of every local minimum.
    pub fit_dips: bool,
    pub dip_quantity: DipQuantity,
}

impl Default for ScatterConfig {
    fn default() -> Self {
        Self {
            e_min: 0.5,
            e_max: 10.0,
            points: 200,
            resolution: 1e-4,
            incidence: Incidence::Left,
            fit_dips: false,
            dip_quantity: DipQuantity::Reflectance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WkbConfig {
    pub energy: f64,
    /// Use the untruncated `-|x|^p`.
    pub infinite: bool,
    /// Defaults to `2 L_eff`, or 5 in infinite mode.
    pub half_width: Option<f64>,
    pub points: usize,
}

impl Default for WkbConfig {
    fn default() -> Self {
        Self {
            energy: 1.477,
            infinite: false,
            half_width: None,
            points: 2001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EpMethod {
    /// Eigenvalue tracking and bisection on the discretized operator.
    #[default]
    Tracking,
    /// Double root of the reflection function.
    Scattering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpConfig {
    pub method: EpMethod,
    pub p_min: f64,
    pub p_max: f64,
    /// Tracking intervals between `p_min` and `p_max`.
    pub steps: usize,
    pub e_min: f64,
    pub e_max: f64,
    pub p_tol: f64,
    pub overlap_min: f64,
}

impl Default for EpConfig {
    fn default() -> Self {
        Self {
            method: EpMethod::Tracking,
            p_min: 3.3,
            p_max: 3.6,
            steps: 6,
            e_min: 6.0,
            e_max: 11.0,
            p_tol: 1e-6,
            overlap_min: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub classify_window: Option<(f64, f64)>,
    pub seeds: Vec<u64>,
    pub noise_kind: NoiseKind,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: Axis::L,
            values: vec![2.0, 3.0, 4.0, 5.0, 6.0],
            classify_window: None,
            seeds: vec![0],
            noise_kind: NoiseKind::Symmetric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub family: NoiseFamily,
    pub strengths: Vec<f64>,
    pub num_seeds: usize,
    pub im_threshold: f64,
    pub match_gate: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            family: NoiseFamily::Symmetric,
            strengths: NoiseStudy::default_strengths(),
            num_seeds: 3,
            im_threshold: 3.0,
            match_gate: 0.2,
        }
    }
}

/// A complete run description. All fields have defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub out: PathBuf,
    pub p: f64,
    #[serde(rename = "L")]
    pub length: Option<f64>,
    /// Energy bound `|V_max|`; exclusive with `L`.
    pub vmax: Option<f64>,
    pub w: f64,
    pub exterior: Exterior,
    /// Random noise under the window; its seed is taken from `seed`.
    pub random_noise: Option<NoiseSpec>,
    pub quadratic: Option<QuadraticSpec>,
    pub spectrum: SpectrumSettings,
    pub envelope: EnvelopeConfig,
    pub scatter: ScatterConfig,
    pub wkb: WkbConfig,
    pub ep: EpConfig,
    pub sweep: SweepConfig,
    pub noise: NoiseConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Spectrum,
            seed: 0,
            out: PathBuf::from("out"),
            p: 4.0,
            length: None,
            vmax: None,
            w: 10.0,
            exterior: Exterior::Plateau,
            random_noise: None,
            quadratic: None,
            spectrum: SpectrumSettings::default(),
            envelope: EnvelopeConfig::default(),
            scatter: ScatterConfig::default(),
            wkb: WkbConfig::default(),
            ep: EpConfig::default(),
            sweep: SweepConfig::default(),
            noise: NoiseConfig::default(),
        }
    }
}

pub const DEFAULT_LENGTH: f64 = 6.0;

/// Strict parse followed by [`RunConfig::resolve`].
pub fn parse_config(text: &str) -> Result<RunConfig, RunError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
    cfg.resolve()
}

/// Reads a TOML run config, or the `config` member of a JSON sidecar.
pub fn load_config_file(path: &Path) -> Result<RunConfig, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        #[derive(Deserialize)]
        struct Wrapper {
            config: RunConfig,
        }
        serde_json::from_str::<Wrapper>(&text)
            .map_err(|e| RunError::Config(e.to_string()))
            .and_then(|w| w.config.resolve())
    } else {
        parse_config(&text)
    };
    parsed.map_err(|e| match e {
        RunError::Config(m) => RunError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

impl RunConfig {
    /// Fills implied values and checks cross-field constraints.
    pub fn resolve(mut self) -> Result<Self, RunError> {
        match (self.length, self.vmax) {
            (Some(_), Some(_)) => return Err(RunError::Config("set either `L` or `vmax`, not both".into())),
            (None, None) => self.length = Some(DEFAULT_LENGTH),
            _ => {}
        }
        if self.random_noise.is_some() && self.quadratic.is_some() {
            return Err(RunError::Config(
                "`random_noise` and `quadratic` cannot be combined".into(),
            ));
        }
        if let Some(n) = &mut self.random_noise {
            n.seed = self.seed;
        }
        self.potential_spec()
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        self.spectrum.validate()?;
        Ok(self)
    }

    pub fn potential_spec(&self) -> PotentialSpec {
        let truncation = match (self.length, self.vmax) {
            (_, Some(b)) => Truncation::ByEnergy(b),
            (l, None) => Truncation::ByLength(l.unwrap_or(DEFAULT_LENGTH)),
        };
        let perturbation = match (&self.random_noise, &self.quadratic) {
            (Some(n), _) => Some(Perturbation::Noise(n.clone())),
            (None, Some(q)) => Some(Perturbation::Quadratic(*q)),
            _ => None,
        };
        PotentialSpec {
            exponent: self.p,
            truncation,
            sharpness: self.w,
            exterior: self.exterior,
            perturbation,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable in TOML")
    }
}

/// Column layout of a CSV dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    Spectrum,
    Scatter,
    Wkb,
    Ep,
    Fits,
    Phase,
    Noise,
    NoiseSummary,
}

impl Schema {
    pub fn header(self) -> &'static [&'static str] {
        match self {
            Schema::Spectrum => &["axis_value", "seed", "re_E", "im_E", "residual", "localization", "kind"],
            Schema::Scatter => &["E", "re_R", "im_R", "re_T", "im_T", "reflectance", "flux_error"],
            Schema::Wkb => &["x", "V_wkb"],
            Schema::Ep => &["p_star", "E_star", "min_gap", "overlap"],
            Schema::Fits => &["exponent", "prefactor", "residual"],
            Schema::Phase => &["axis_value", "seed", "phase", "real_count", "total_count", "error"],
            Schema::Noise => &["strength", "seed", "reference", "reference_E", "re_E", "im_E", "matched", "error"],
            Schema::NoiseSummary => &[
                "strength",
                "reference",
                "reference_E",
                "matched",
                "mean_re_E",
                "stderr_re_E",
                "mean_abs_im_E",
                "stderr_abs_im_E",
            ],
        }
    }
}

/// One CSV field.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    U(u64),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => fmt_f64(*x),
            Cell::U(u) => u.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: Schema,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(schema: Schema) -> Self {
        Self { schema, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.schema.header().len());
        self.rows.push(row);
    }
}

pub fn spectrum_rows(table: &mut Table, axis_value: f64, seed: u64, rzeros: &[RZero]) {
    for r in rzeros {
        let kind = match r.kind {
            RzeroKind::Real => "real",
            RzeroKind::PairMember => "pair",
        };
        table.push(vec![
            Cell::F(axis_value),
            Cell::U(seed),
            Cell::F(r.energy.re),
            Cell::F(r.energy.im),
            Cell::F(r.residual),
            Cell::F(r.localization),
            Cell::S(kind.into()),
        ]);
    }
}

pub fn scatter_rows(table: &mut Table, curve: &[ScatteringResult]) {
    for r in curve {
        table.push(vec![
            Cell::F(r.energy.re),
            Cell::F(r.r.re),
            Cell::F(r.r.im),
            Cell::F(r.t.re),
            Cell::F(r.t.im),
            Cell::F(r.reflectance),
            Cell::F(r.flux_error),
        ]);
    }
}

/// Sidecar written next to every CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar<T> {
    pub library: String,
    pub version: String,
    pub schema: Schema,
    pub columns: Vec<String>,
    pub config: RunConfig,
    /// Kind-specific results that do not fit the table.
    pub summary: T,
}

/// Writes `dir/name.csv` and `dir/name.json`. Existing files are only
/// replaced when `overwrite` is set.
pub fn emit_dataset<T: Serialize>(
    table: &Table,
    config: &RunConfig,
    summary: &T,
    dir: &Path,
    name: &str,
    overwrite: bool,
) -> Result<Vec<PathBuf>, RunError> {
    let csv_path = dir.join(format!("{name}.csv"));
    let json_path = dir.join(format!("{name}.json"));
    for p in [&csv_path, &json_path] {
        if p.exists() && !overwrite {
            return Err(RunError::Collision { path: p.clone() });
        }
    }
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(table.schema.header())?;
    for row in &table.rows {
        w.write_record(row.iter().map(Cell::render))?;
    }
    w.flush()?;
    let sidecar = Sidecar {
        library: env!("CARGO_PKG_NAME").to_string(),
        version: VERSION.to_string(),
        schema: table.schema,
        columns: table.schema.header().iter().map(|s| s.to_string()).collect(),
        config: config.clone(),
        summary,
    };
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    std::fs::write(&json_path, text)?;
    Ok(vec![csv_path, json_path])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub overwrite: bool,
    pub exec: Execution,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            overwrite: false,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    /// Sweep points or noise runs that failed.
    pub failures: usize,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.failures > 0 {
            exit::PARTIAL
        } else {
            exit::SUCCESS
        }
    }
}

/// Dips are located to this accuracy before their lineshape is fitted.
pub const DIP_RESOLUTION: f64 = 1e-10;
/// Offset range `|E - E_dip|` sampled for lineshape fits.
pub const DIP_FIT_OFFSETS: (f64, f64) = (1e-3, 1.0);

#[derive(Serialize)]
struct SpectrumSummary {
    phase: Option<String>,
    rejected: usize,
    layout: Option<crate::rzero::Layout>,
    reflection_agreement: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct Nothing {}

/// Checks for collisions before any computation starts.
fn check_targets(dir: &Path, names: &[&str], overwrite: bool) -> Result<(), RunError> {
    if overwrite {
        return Ok(());
    }
    for name in names {
        for ext in ["csv", "json"] {
            let p = dir.join(format!("{name}.{ext}"));
            if p.exists() {
                return Err(RunError::Collision { path: p });
            }
        }
    }
    Ok(())
}

/// Runs the experiment named by `config.kind` and writes its datasets to `config.out`.
pub fn run(config: &RunConfig, opts: &RunOptions) -> Result<RunReport, RunError> {
    let config = config.clone().resolve()?;
    let dir = config.out.clone();
    let spec = config.potential_spec();
    let exec = opts.exec;
    let ow = opts.overwrite;
    let mut files = Vec::new();
    let mut failures = 0;
    match config.kind {
        ExperimentKind::Spectrum => {
            let mut names = vec!["spectrum"];
            if config.envelope.enabled {
                names.push("envelope");
            }
            check_targets(&dir, &names, ow)?;
            let mut table = Table::new(Schema::Spectrum);
            let (rzeros, summary) = match compute_spectrum_with(&spec, &config.spectrum, exec) {
                Ok(s) => {
                    let summary = SpectrumSummary {
                        phase: Some(s.phase.to_string()),
                        rejected: s.rejected.len(),
                        layout: Some(s.layout),
                        reflection_agreement: s.rzeros.iter().map(|r| r.reflection_agreement()).collect(),
                    };
                    (s.rzeros, summary)
                }
                Err(RzeroError::EmptyAfterFilter { rejected }) => (
                    Vec::new(),
                    SpectrumSummary {
                        phase: None,
                        rejected: rejected.len(),
                        layout: None,
                        reflection_agreement: Vec::new(),
                    },
                ),
                Err(e) => return Err(e.into()),
            };
            spectrum_rows(&mut table, config.p, config.seed, &rzeros);
            files.extend(emit_dataset(&table, &config, &summary, &dir, "spectrum", ow)?);
            if config.envelope.enabled {
                let e0 = rzeros
                    .iter()
                    .find(|r| r.kind == RzeroKind::Real)
                    .map(|r| r.energy.re)
                    .ok_or_else(|| RunError::Numerical("no real R-zero to fit an envelope to".into()))?;
                let pot = crate::potentials::Potential::new(spec.clone()).map_err(|e| RunError::Config(e.to_string()))?;
                let window = (
                    config.envelope.x_lo,
                    config.envelope.x_hi_fraction * pot.effective_length(),
                );
                let fit = sweeps::envelope_fit_in(&pot, e0, window, &ScatteringSolver::default())?;
                let mut t = Table::new(Schema::Fits);
                t.push(vec![Cell::F(fit.exponent), Cell::F(fit.prefactor), Cell::F(fit.residual)]);
                files.extend(emit_dataset(&t, &config, &fit, &dir, "envelope", ow)?);
            }
        }
        ExperimentKind::Scatter => {
            let sc = &config.scatter;
            let mut names = vec!["scatter"];
            if sc.fit_dips {
                names.push("dips");
            }
            check_targets(&dir, &names, ow)?;
            if sc.points < 2 || !(sc.e_max > sc.e_min) {
                return Err(RunError::Config("scatter needs points >= 2 and e_max > e_min".into()));
            }
            let pot = crate::potentials::Potential::new(spec.clone()).map_err(|e| RunError::Config(e.to_string()))?;
            let solver = ScatteringSolver::default();
            let es: Vec<f64> = (0..sc.points)
                .map(|j| sc.e_min + (sc.e_max - sc.e_min) * j as f64 / (sc.points - 1) as f64)
                .collect();
            let curve = if sc.incidence == Incidence::Left {
                solver.reflectance_curve(&pot, &es, sc.resolution, exec)?
            } else {
                crate::par::map(exec, &es, |e| solver.solve(&pot, *e, sc.incidence))
                    .into_iter()
                    .collect::<Result<Vec<_>, _>>()?
            };
            let mut table = Table::new(Schema::Scatter);
            scatter_rows(&mut table, &curve);
            let minima: Vec<f64> = local_minima(&curve).iter().map(|&i| curve[i].energy.re).collect();
            files.extend(emit_dataset(&table, &config, &minima, &dir, "scatter", ow)?);
            if sc.fit_dips {
                let mut t = Table::new(Schema::Fits);
                let mut fits = Vec::new();
                let step = (sc.e_max - sc.e_min) / (sc.points - 1) as f64;
                for &e in &minima {
                    let bracket = solver.reflectance_curve(&pot, &[e - step, e, e + step], DIP_RESOLUTION, exec)?;
                    let e = local_minima(&bracket).first().map_or(e, |&i| bracket[i].energy.re);
                    let probe = crate::scattering::dip_probe_grid(e, DIP_FIT_OFFSETS.0, DIP_FIT_OFFSETS.1, 8);
                    let c = solver.reflectance_curve(&pot, &probe, DIP_RESOLUTION, exec)?;
                    match characterize_dip(&c, e, sc.dip_quantity) {
                        Ok(d) => {
                            t.push(vec![Cell::F(d.exponent), Cell::F(d.prefactor), Cell::F(d.fit_residual)]);
                            fits.push(Some(d));
                        }
                        Err(_) => fits.push(None),
                    }
                }
                files.extend(emit_dataset(&t, &config, &fits, &dir, "dips", ow)?);
            }
        }
        ExperimentKind::Wkb => {
            check_targets(&dir, &["wkb"], ow)?;
            let wc = &config.wkb;
            let (prof, spike) = if wc.infinite {
                let window = ProfileWindow {
                    half_width: wc.half_width.unwrap_or(5.0),
                    points: wc.points,
                };
                let pl = crate::potentials::PowerLaw { exponent: config.p };
                (wkb::profile(&pl, wc.energy, window)?, None)
            } else {
                let pot = crate::potentials::Potential::new(spec.clone()).map_err(|e| RunError::Config(e.to_string()))?;
                let window = ProfileWindow {
                    half_width: wc.half_width.unwrap_or(2.0 * pot.effective_length()),
                    points: wc.points,
                };
                (
                    wkb::profile(&pot, wc.energy, window)?,
                    Some(wkb::truncation_spike(&pot, wc.energy)?),
                )
            };
            let mut table = Table::new(Schema::Wkb);
            for (x, v) in &prof.samples {
                table.push(vec![Cell::F(*x), Cell::F(*v)]);
            }
            #[derive(Serialize)]
            struct WkbSummary {
                structure: wkb::PeakStructure,
                peaks: Vec<(f64, f64)>,
                spike: Option<wkb::Spike>,
            }
            let summary = WkbSummary {
                structure: prof.structure,
                peaks: prof.peaks.clone(),
                spike,
            };
            files.extend(emit_dataset(&table, &config, &summary, &dir, "wkb", ow)?);
        }
        ExperimentKind::Ep => {
            check_targets(&dir, &["ep"], ow)?;
            let ec = &config.ep;
            if ec.steps < 1 || !(ec.p_max > ec.p_min) || !(ec.e_max > ec.e_min) {
                return Err(RunError::Config("ep needs steps >= 1, p_max > p_min and e_max > e_min".into()));
            }
            let base = spec.clone();
            let family = move |p: f64| base.clone().with_exponent(p);
            let mut table = Table::new(Schema::Ep);
            match ec.method {
                EpMethod::Tracking => {
                    let ps: Vec<f64> = (0..=ec.steps)
                        .map(|j| ec.p_min + (ec.p_max - ec.p_min) * j as f64 / ec.steps as f64)
                        .collect();
                    let eps = EpSettings {
                        p_tol: ec.p_tol,
                        overlap_min: ec.overlap_min,
                        ..EpSettings::default()
                    };
                    let found = track_and_find_ep(&family, &ps, (ec.e_min, ec.e_max), &config.spectrum, &eps, exec)?;
                    for c in &found.accepted {
                        table.push(vec![
                            Cell::F(c.p_star),
                            Cell::F(c.e_star),
                            Cell::F(c.min_gap),
                            Cell::F(c.vector_overlap),
                        ]);
                    }
                    files.extend(emit_dataset(&table, &config, &found, &dir, "ep", ow)?);
                }
                EpMethod::Scattering => {
                    let found = ep_by_scattering(
                        &family,
                        (ec.p_min, ec.p_max),
                        (ec.e_min, ec.e_max),
                        ec.p_tol,
                        &ScatteringSolver::default(),
                    )?;
                    table.push(vec![
                        Cell::F(found.p_star),
                        Cell::F(found.e_star),
                        Cell::F(found.extremum.abs()),
                        Cell::F(f64::NAN),
                    ]);
                    files.extend(emit_dataset(&table, &config, &found, &dir, "ep", ow)?);
                }
            }
        }
        ExperimentKind::Sweep => {
            check_targets(&dir, &["sweep", "phase"], ow)?;
            let sc = &config.sweep;
            let plan = SweepPlan {
                axis: sc.axis,
                values: sc.values.clone(),
                base: spec.clone(),
                settings: config.spectrum.clone(),
                classify_window: sc.classify_window,
                seeds: sc.seeds.clone(),
                noise_kind: sc.noise_kind,
            };
            let data = sweeps::run_sweep(&plan, exec)?;
            failures = data.failures();
            let mut table = Table::new(Schema::Spectrum);
            let mut phases = Table::new(Schema::Phase);
            for pt in &data.points {
                spectrum_rows(&mut table, pt.axis_value, pt.seed, &pt.rzeros);
                phases.push(vec![
                    Cell::F(pt.axis_value),
                    Cell::U(pt.seed),
                    Cell::S(pt.phase.map(|p| p.to_string()).unwrap_or_default()),
                    Cell::U(pt.real_count() as u64),
                    Cell::U(pt.rzeros.len() as u64),
                    Cell::S(pt.error.clone().unwrap_or_default()),
                ]);
            }
            files.extend(emit_dataset(&table, &config, &Nothing {}, &dir, "sweep", ow)?);
            files.extend(emit_dataset(&phases, &config, &Nothing {}, &dir, "phase", ow)?);
        }
        ExperimentKind::Noise => {
            check_targets(&dir, &["noise", "noise_summary", "noise_fit"], ow)?;
            let nc = &config.noise;
            let study = NoiseStudy {
                base: spec.clone(),
                family: nc.family,
                strengths: nc.strengths.clone(),
                num_seeds: nc.num_seeds,
                settings: config.spectrum.clone(),
                im_threshold: nc.im_threshold,
                match_gate: nc.match_gate,
            };
            let data = sweeps::noise_study(&study, exec)?;
            let mut table = Table::new(Schema::Noise);
            for m in &data.matches {
                if m.error.is_some() {
                    failures += 1;
                }
                let (re, im) = m.energy.map_or((f64::NAN, f64::NAN), |e| (e.re, e.im));
                table.push(vec![
                    Cell::F(m.strength),
                    Cell::U(m.seed),
                    Cell::U(m.reference as u64),
                    Cell::F(m.reference_energy),
                    Cell::F(re),
                    Cell::F(im),
                    Cell::S(if m.energy.is_some() { "yes" } else { "no" }.into()),
                    Cell::S(m.error.clone().unwrap_or_default()),
                ]);
            }
            let mut summary = Table::new(Schema::NoiseSummary);
            for s in &data.summary {
                summary.push(vec![
                    Cell::F(s.strength),
                    Cell::U(s.reference as u64),
                    Cell::F(s.reference_energy),
                    Cell::U(s.matched as u64),
                    Cell::F(s.mean_re),
                    Cell::F(s.stderr_re),
                    Cell::F(s.mean_abs_im),
                    Cell::F(s.stderr_abs_im),
                ]);
            }
            let mut fit = Table::new(Schema::Fits);
            if let Some(f) = &data.im_scaling {
                fit.push(vec![Cell::F(f.exponent), Cell::F(f.prefactor), Cell::F(f.residual)]);
            }
            files.extend(emit_dataset(&table, &config, &data.references, &dir, "noise", ow)?);
            files.extend(emit_dataset(&summary, &config, &Nothing {}, &dir, "noise_summary", ow)?);
            files.extend(emit_dataset(&fit, &config, &data.im_scaling, &dir, "noise_fit", ow)?);
        }
    }
    Ok(RunReport { files, failures })
}

/// Identifiers accepted by [`repro_configs`].
pub const FIGURES: &[&str] = &[
    "fig2a", "fig2b", "fig3a", "fig3b", "fig4a", "fig4b", "fig5a", "fig5b", "fig6", "noise-symmetric",
    "noise-parity", "noise-quadratic",
];

/// Pinned configurations that regenerate one figure, each with its own
/// subdirectory of `out`.
pub fn repro_configs(id: &str, out: &Path, seed: u64) -> Option<Vec<RunConfig>> {
    let base = |kind: ExperimentKind, sub: &str| RunConfig {
        kind,
        seed,
        out: out.join(id).join(sub),
        ..RunConfig::default()
    };
    let cfgs = match id {
        // Spectrum against truncation length, sharp edge.
        "fig2a" => {
            let mut c = base(ExperimentKind::Sweep, "");
            c.w = 1000.0;
            c.spectrum = SpectrumSettings::default().window(0.0, 25.0);
            c.sweep.values = vec![2.0, 3.0, 4.0, 5.0, 6.0];
            vec![c]
        }
        // Lowest R-zero and its envelope.
        "fig2b" => {
            let mut c = base(ExperimentKind::Spectrum, "");
            c.length = Some(15.0);
            c.spectrum = SpectrumSettings::default().window(0.0, 3.0);
            c.envelope.enabled = true;
            vec![c]
        }
        // Spectrum against p at fixed energy bound.
        "fig3a" => {
            let mut c = base(ExperimentKind::Sweep, "");
            c.vmax = Some(400.0);
            c.spectrum = SpectrumSettings::default().window(0.0, 12.0);
            c.sweep.axis = Axis::P;
            c.sweep.values = vec![1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 6.0, 8.0];
            vec![c]
        }
        // Reflectance curves for several p.
        "fig3b" => [1.5, 2.0, 3.0, 4.0, 6.0, 7.8]
            .iter()
            .map(|&p| {
                let mut c = base(ExperimentKind::Scatter, &format!("p{p}"));
                c.p = p;
                c.length = Some(3.0);
                c.w = 1000.0;
                c.scatter.e_min = 0.2;
                c.scatter.e_max = 30.0;
                c.scatter.points = 400;
                c
            })
            .collect(),
        "fig4a" => {
            let mut a = base(ExperimentKind::Ep, "ep1");
            a.length = Some(10.0);
            let mut b = base(ExperimentKind::Ep, "ep2");
            b.ep.p_min = 3.85;
            b.ep.p_max = 4.0;
            b.ep.e_min = 16.0;
            b.ep.e_max = 25.0;
            vec![a, b]
        }
        // Dip lineshapes: isolated R-zero and the first exceptional point.
        "fig4b" => {
            let mut iso = base(ExperimentKind::Scatter, "isolated");
            iso.length = Some(6.0);
            iso.scatter.e_min = 5.0;
            iso.scatter.e_max = 7.0;
            iso.scatter.fit_dips = true;
            let mut ep = base(ExperimentKind::Scatter, "ep");
            ep.p = 3.441597792506218;
            ep.scatter.e_min = 7.5;
            ep.scatter.e_max = 9.5;
            ep.scatter.fit_dips = true;
            vec![iso, ep]
        }
        "fig5a" => [1.5, 2.0, 2.2, 3.0, 4.0, 6.0, 7.8]
            .iter()
            .map(|&p| {
                let mut c = base(ExperimentKind::Wkb, &format!("p{p}"));
                c.p = p;
                c.wkb.infinite = true;
                c
            })
            .collect(),
        "fig5b" => [2.0, 5.0, 8.0]
            .iter()
            .map(|&l| {
                let mut c = base(ExperimentKind::Wkb, &format!("L{l}"));
                c.length = Some(l);
                c
            })
            .collect(),
        // Reflectance ratio near the second R-zero at L = 15, sharp edge.
        "fig6" => {
            let mut c = base(ExperimentKind::Scatter, "");
            c.length = Some(15.0);
            c.w = 1000.0;
            c.scatter.e_min = 5.5;
            c.scatter.e_max = 6.5;
            c.scatter.fit_dips = true;
            c.scatter.dip_quantity = DipQuantity::Ratio;
            vec![c]
        }
        "noise-symmetric" | "noise-parity" => {
            let mut c = base(ExperimentKind::Noise, "");
            c.spectrum = SpectrumSettings::default().window(0.0, 25.0);
            c.noise.family = if id == "noise-symmetric" {
                NoiseFamily::Symmetric
            } else {
                NoiseFamily::ParityBreaking
            };
            vec![c]
        }
        "noise-quadratic" => [NoiseFamily::NegativeQuadratic, NoiseFamily::PositiveQuadratic]
            .iter()
            .map(|&f| {
                let mut c = base(
                    ExperimentKind::Noise,
                    if f == NoiseFamily::NegativeQuadratic { "negative" } else { "positive" },
                );
                c.spectrum = SpectrumSettings::default().window(0.0, 25.0);
                c.noise.family = f;
                c.noise.strengths = vec![1e-3, 1e-2, 1e-1, 1.0];
                c
            })
            .collect(),
        _ => return None,
    };
    Some(cfgs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_resolves_defaults() {
        let cfg = parse_config("p = 4\nL = 5\n").unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Spectrum);
        assert_eq!(cfg.length, Some(5.0));
        assert_eq!(cfg.w, 10.0);
        assert_eq!(cfg.spectrum, SpectrumSettings::default());
        assert_eq!(cfg.potential_spec(), PotentialSpec::by_length(4.0, 5.0, 10.0));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config("pp = 4\n").unwrap_err();
        assert!(matches!(err, RunError::Config(_)));
        assert!(err.to_string().contains("pp"), "{err}");
        let err = parse_config("[spectrum]\ne_maxx = 3\n").unwrap_err();
        assert!(err.to_string().contains("e_maxx"), "{err}");
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn length_and_bound_are_exclusive() {
        assert!(parse_config("L = 5\nvmax = 100\n").is_err());
        let cfg = parse_config("p = 4\nvmax = 625\n").unwrap();
        assert!((cfg.potential_spec().effective_length() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = "kind = \"noise\"\nseed = 9\np = 4\nL = 6\n[random_noise]\nkind = \"parity_breaking\"\nstrength = 0.001\n[noise]\nfamily = \"parity_breaking\"\n";
        let cfg = parse_config(text).unwrap();
        let again = parse_config(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        match &cfg.random_noise {
            Some(n) => assert_eq!(n.seed, 9),
            None => panic!(),
        }
    }

    #[test]
    fn sidecar_reproduces_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config("kind = \"wkb\"\np = 3\nvmax = 50\n").unwrap();
        let files = emit_dataset(&Table::new(Schema::Wkb), &cfg, &Nothing {}, dir.path(), "wkb", false).unwrap();
        assert_eq!(load_config_file(&files[1]).unwrap(), cfg);
        assert_eq!(std::fs::read_to_string(&files[0]).unwrap(), "x,V_wkb\n");
        let again = emit_dataset(&Table::new(Schema::Wkb), &cfg, &Nothing {}, dir.path(), "wkb", false);
        assert!(matches!(again, Err(RunError::Collision { .. })));
    }

    #[test]
    fn floats_have_seventeen_digits() {
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        let x = 0.1 + 0.2;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }

    #[test]
    fn every_figure_has_a_config() {
        for id in FIGURES {
            let cfgs = repro_configs(id, Path::new("o"), 0).unwrap();
            assert!(!cfgs.is_empty());
            for c in cfgs {
                c.resolve().unwrap();
            }
        }
        assert!(repro_configs("fig99", Path::new("o"), 0).is_none());
    }
}

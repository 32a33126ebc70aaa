use clap::{Args, Parser, Subcommand};
use reflectionless::cli_io::{self, exit, ExperimentKind, RunConfig, RunError, RunOptions, FIGURES};
use reflectionless::par::{self, Execution};
use std::path::PathBuf;
use std::process::ExitCode;

/// Reflectionless scattering modes of truncated inverted power-law potentials.
///
/// Each subcommand reads an optional TOML run config, applies the flags on
/// top of it and writes `<name>.csv` plus a `<name>.json` sidecar holding the
/// resolved config into the output directory.
///
/// Exit codes: 0 success, 2 config error, 3 numerical failure, 4 partial
/// sweep failure, 5 output error or file collision.
#[derive(Debug, Parser)]
#[command(name = "reflectionless", version, about, long_about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run config (every key optional) or a JSON sidecar from an earlier run.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for random noise (overrides the config).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true, value_name = "N", env = "REFLECTIONLESS_THREADS")]
    threads: Option<usize>,
    /// Replace existing output files.
    #[arg(long, global = true)]
    overwrite: bool,
    /// Power-law exponent p.
    #[arg(short, long, global = true)]
    p: Option<f64>,
    /// Truncation length L.
    #[arg(short = 'L', long = "length", global = true)]
    length: Option<f64>,
    /// Energy bound |V_max| instead of a length.
    #[arg(long, global = true)]
    vmax: Option<f64>,
    /// Window sharpness w.
    #[arg(short, long, global = true)]
    w: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// R-zero spectrum and PT phase of one potential.
    Spectrum,
    /// Reflection and transmission over an energy range.
    Scatter,
    /// WKB force potential profile.
    Wkb,
    /// Exceptional points along a family in p.
    Ep,
    /// Spectra over one parameter axis.
    Sweep,
    /// Stability of R-zeros under perturbations.
    Noise,
    /// Pinned runs regenerating one figure.
    Repro {
        /// One of the figure ids listed by `--list`.
        #[arg(required_unless_present = "list")]
        figure: Option<String>,
        /// Print the figure ids and exit.
        #[arg(long)]
        list: bool,
    },
}

fn load(common: &Common, kind: ExperimentKind) -> Result<RunConfig, RunError> {
    let mut cfg = match &common.config {
        Some(path) => cli_io::load_config_file(path)?,
        None => RunConfig::default(),
    };
    cfg.kind = kind;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(p) = common.p {
        cfg.p = p;
    }
    if let Some(l) = common.length {
        cfg.length = Some(l);
        cfg.vmax = None;
    }
    if let Some(b) = common.vmax {
        cfg.vmax = Some(b);
        cfg.length = None;
    }
    if let Some(w) = common.w {
        cfg.w = w;
    }
    cfg.resolve()
}

fn execution(threads: Option<usize>) -> Execution {
    match threads {
        Some(0) | Some(1) => Execution::Sequential,
        Some(n) => {
            par::init_threads(n);
            Execution::Parallel
        }
        None => Execution::default(),
    }
}

fn run(cli: Cli) -> Result<i32, RunError> {
    let opts = RunOptions {
        overwrite: cli.common.overwrite,
        exec: execution(cli.common.threads),
    };
    let kind = match &cli.command {
        Command::Spectrum => ExperimentKind::Spectrum,
        Command::Scatter => ExperimentKind::Scatter,
        Command::Wkb => ExperimentKind::Wkb,
        Command::Ep => ExperimentKind::Ep,
        Command::Sweep => ExperimentKind::Sweep,
        Command::Noise => ExperimentKind::Noise,
        Command::Repro { list: true, .. } => {
            for id in FIGURES {
                println!("{id}");
            }
            return Ok(exit::SUCCESS);
        }
        Command::Repro { figure: Some(id), .. } => {
            let out = cli.common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let cfgs = cli_io::repro_configs(id, &out, cli.common.seed.unwrap_or(0)).ok_or_else(|| {
                RunError::Config(format!("unknown figure `{id}`; known: {}", FIGURES.join(", ")))
            })?;
            let mut code = exit::SUCCESS;
            for cfg in cfgs {
                let report = cli_io::run(&cfg, &opts)?;
                report.files.iter().for_each(|f| println!("{}", f.display()));
                code = code.max(report.exit_code());
            }
            return Ok(code);
        }
        Command::Repro { figure: None, .. } => unreachable!("clap requires a figure"),
    };
    let cfg = load(&cli.common, kind)?;
    let report = cli_io::run(&cfg, &opts)?;
    for f in &report.files {
        println!("{}", f.display());
    }
    if report.failures > 0 {
        eprintln!("{} runs failed; see the error column", report.failures);
    }
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

//! `tbnoise`: command-line front end for ensemble runs, unravelling
//! comparisons, master-equation runs and fits of result files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tbnoise::config::{load_config, parse_kind, Overrides};
use tbnoise::ensemble::{compare_unravellings, run_ensemble_with, worker_count};
use tbnoise::lindblad::run_lindblad;
use tbnoise::observables::{asymptotic_variance, fit_diffusion, fit_power_law, EnsembleSummary};
use tbnoise::results::{read_csv, write_csv, write_records, RunMeta, COLUMNS};
use tbnoise::{presets, Boundary, Error, InitialState, NoiseVariant};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_EQUIVALENCE: u8 = 4;

#[derive(Parser)]
#[command(name = "tbnoise", version, about = "Noisy tight-binding chain simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a trajectory ensemble and write its summary CSV.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write every trajectory's observables to this file.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Compare unravellings with direct master-equation integration.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated checkpoint times.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<f64>>,
        /// Comma-separated unravellings, each `tag` or `tag:noise`.
        #[arg(long, value_delimiter = ',')]
        unravellings: Option<Vec<String>>,
        /// Noise strength of the reference integration, when it should differ.
        #[arg(long)]
        oracle_gamma: Option<f64>,
        #[arg(long)]
        z_threshold: Option<f64>,
    },
    /// Integrate the master equation directly and write a summary CSV.
    Lindblad {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a result file.
    Fit {
        csv: PathBuf,
        #[arg(long, value_enum, default_value_t = FitKind::Diffusion)]
        kind: FitKind,
        /// Fit window `lo,hi` in time units (or in γt with `--gamma-units`).
        #[arg(long, value_delimiter = ',')]
        window: Option<Vec<f64>>,
        /// Interpret the window in units of γt.
        #[arg(long)]
        gamma_units: bool,
        /// Column for power-law fits.
        #[arg(long, default_value = "mean_x_sq")]
        column: String,
    },
    /// List the named presets.
    Presets,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitKind {
    /// Slope of `mean_x2` against t.
    Diffusion,
    /// Exponent of a column against t on log–log axes.
    PowerLaw,
    /// Time average of `mean_var` over the late window.
    Asymptotic,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    sites: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    boundary: Option<Boundary>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    trajectories: Option<u64>,
    /// wnp, qsd, qsd-wide, jump or jump-event.
    #[arg(long)]
    unravelling: Option<String>,
    #[arg(long)]
    noise: Option<NoiseVariant>,
    /// `gaussian:variance[:center]`, `delta[:site]` or `uniform`.
    #[arg(long)]
    initial: Option<InitialState>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> tbnoise::Result<Overrides> {
        let file = match &self.config {
            Some(path) => load_config(path)?,
            None => Overrides::default(),
        };
        let cli = Overrides {
            preset: self.preset.clone(),
            gamma: self.gamma,
            sites: self.sites,
            dt: self.dt,
            boundary: self.boundary,
            seed: self.seed,
            t_max: self.t_max,
            initial: self.initial,
            unravelling: self.unravelling.clone(),
            noise: self.noise,
            trajectories: self.trajectories,
            out: self.out.clone(),
            ..Default::default()
        };
        Ok(file.then(cli))
    }
}

fn write_or_print(text: &str, path: Option<&Path>) -> tbnoise::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn summary_text(summary: &EnsembleSummary, out: Option<&Path>) -> tbnoise::Result<()> {
    match out {
        Some(p) => write_csv(summary, p),
        None => write_or_print(&tbnoise::results::to_csv_string(summary), None),
    }
}

fn cmd_run(common: &Common, records: Option<PathBuf>) -> tbnoise::Result<u8> {
    let mut layered = common.overrides()?;
    if records.is_some() {
        layered.records = records;
    }
    let spec = layered.run_spec()?;
    let output = run_ensemble_with(&spec, worker_count()?)?;
    summary_text(&output.summary, spec.output.as_deref())?;
    if let (Some(path), Some(recs)) = (&layered.records, &output.records) {
        write_records(&output.summary.meta, recs, path)?;
    }
    Ok(0)
}

fn cmd_compare(
    common: &Common,
    checkpoints: Option<Vec<f64>>,
    unravellings: Option<Vec<String>>,
    oracle_gamma: Option<f64>,
    z_threshold: Option<f64>,
) -> tbnoise::Result<u8> {
    let mut layered = common.overrides()?;
    if layered.preset.is_none() && common.config.is_none() {
        layered.preset = Some("compare-small".into());
    }
    let kinds = unravellings
        .map(|v| v.iter().map(|s| parse_kind(s)).collect::<tbnoise::Result<Vec<_>>>())
        .transpose()?;
    let layered = layered.then(Overrides {
        checkpoints,
        unravellings: kinds,
        oracle_gamma,
        z_threshold,
        ..Default::default()
    });
    let spec = layered.compare_spec()?;
    let report = compare_unravellings(&spec, worker_count()?)?;
    write_or_print(&report.to_csv_string(), layered.out.as_deref())?;
    eprintln!("{}", report.summary_line());
    Ok(if report.passed() { 0 } else { EXIT_EQUIVALENCE })
}

fn cmd_lindblad(common: &Common) -> tbnoise::Result<u8> {
    let spec = common.overrides()?.run_spec()?;
    let times = spec.grid.times(spec.params.t_max, None)?;
    let meta = RunMeta { unravelling: "lindblad".into(), noise: "none".into(), ..spec.meta() };
    let summary = run_lindblad(&spec.params, &spec.initial, &times, meta)?;
    summary_text(&summary, spec.output.as_deref())?;
    Ok(0)
}

fn cmd_fit(
    csv: &Path,
    kind: FitKind,
    window: Option<Vec<f64>>,
    gamma_units: bool,
    column: &str,
) -> tbnoise::Result<u8> {
    if window.as_ref().is_some_and(|w| w.len() != 2) {
        return Err(Error::Config("--window takes two values, `lo,hi`".into()));
    }
    let summary = read_csv(csv)?;
    let gamma = summary.meta.gamma;
    let t_end = summary.t.last().copied().unwrap_or(0.0);
    let window = match window {
        Some(w) if gamma_units => {
            if !(gamma > 0.0) {
                return Err(Error::Config("--gamma-units needs a file with gamma > 0".into()));
            }
            (w[0] / gamma, w[1] / gamma)
        }
        Some(w) => (w[0], w[1]),
        // Diffusion: γt ∈ [10, 100]; otherwise the last decade.
        None => match kind {
            FitKind::Diffusion if gamma > 0.0 => (10.0 / gamma, 100.0 / gamma),
            _ => (t_end / 10.0, t_end),
        },
    };
    match kind {
        FitKind::Diffusion => println!("{}", fit_diffusion(&summary, window)?.to_line()),
        FitKind::PowerLaw => {
            let y = summary.column(column).ok_or_else(|| {
                Error::Config(format!("unknown column `{column}`; expected one of {}", COLUMNS.join(", ")))
            })?;
            println!("{} column={column}", fit_power_law(&summary.t, y, window)?.to_line());
        }
        FitKind::Asymptotic => {
            println!("model=asymptotic_variance value={} gamma={gamma}", asymptotic_variance(&summary, gamma)?);
        }
    }
    let m = &summary.meta;
    println!(
        "# source = {} gamma = {} sites = {} unravelling = {} noise = {} seed = {} trajectories = {} initial = {}",
        csv.display(),
        m.gamma,
        m.n_sites,
        m.unravelling,
        m.noise,
        m.seed,
        summary.n_trajectories,
        m.initial
    );
    Ok(0)
}

fn cmd_presets() -> tbnoise::Result<u8> {
    for p in presets::all() {
        println!("{:<20} {}", p.name, p.description);
    }
    Ok(0)
}

fn exit_code(err: &Error) -> u8 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { common, records } => cmd_run(&common, records),
        Command::Compare { common, checkpoints, unravellings, oracle_gamma, z_threshold } => {
            cmd_compare(&common, checkpoints, unravellings, oracle_gamma, z_threshold)
        }
        Command::Lindblad { common } => cmd_lindblad(&common),
        Command::Fit { csv, kind, window, gamma_units, column } => {
            cmd_fit(&csv, kind, window, gamma_units, &column)
        }
        Command::Presets => cmd_presets(),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            if let Error::TrajectoryAbort { index, seed, .. } = &err {
                eprintln!("replay: trajectory index {index} with --seed {seed}");
            }
            ExitCode::from(exit_code(&err))
        }
    }
}

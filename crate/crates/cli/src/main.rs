//! `selftest`: command-line front end for the self-testing pipeline.
//!
//! Exit codes: 0 success, 2 config or usage error, 3 numeric failure
//! (including a failed no-signalling check), 4 I/O error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use selftest_core::bell::{born_table, check_no_signalling, default_ns_tolerance, BellScenario, CorrelationTable};
use selftest_core::highdim::{build_qudit_settings, reconstruct_with, PairingMode, QuditLayout};
use selftest_core::noise::{mix_white, sample_counts};
use selftest_core::qcore::{purity, trace_distance, DensityMatrix, SchmidtState, TargetQubitState};
use selftest_core::runner::config::RENORMALIZATION_WARN;
use selftest_core::runner::{emit_report, run_with_options, ExperimentConfig, Format, Report, RunOptions};
use selftest_core::tiltedchsh::{extract_theta, optimal_settings, theta_standard_error};
use selftest_core::tomo::{reconstruct_with_basis, sample_tomography, schmidt_readout, tomo_projectors, tomography_probabilities};
use selftest_core::{Error, Result};

#[derive(Parser)]
#[command(name = "selftest", version, about = "Device-independent self-testing of pure bipartite states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write the report.
    Run {
        config: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Discover qubit settings by see-saw maximization.
        #[arg(long)]
        reoptimize: bool,
        /// Record wall-clock timings in the report.
        #[arg(long)]
        timing: bool,
    },
    /// Extract θ (two-qubit table) or Schmidt coefficients (qudit table) from a table file.
    Selftest {
        table: PathBuf,
        #[arg(long, value_enum, default_value = "primary")]
        pairing_mode: PairingArg,
    },
    /// Simulated tomography of a target state.
    Tomograph {
        #[command(flatten)]
        state: StateArgs,
    },
    /// Check the no-signalling constraints of a table file.
    CheckNs {
        table: PathBuf,
        /// Tolerance; defaults to 1e-12 for exact tables and 5/√N for sampled ones.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Re-render a stored JSON report.
    Report {
        report: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Write the Bell table of a target state under its ideal settings.
    Table {
        #[command(flatten)]
        state: StateArgs,
        /// Table file to write (.json or .csv); stdout as JSON when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Comma-separated output formats.
    #[arg(long, value_delimiter = ',', default_value = "json,csv")]
    format: Vec<String>,
}

#[derive(Args)]
struct StateArgs {
    /// Two-qubit target cos θ|00⟩ + sin θ|11⟩.
    #[arg(long, conflicts_with = "coeffs", required_unless_present = "coeffs")]
    theta: Option<f64>,
    /// Schmidt coefficients of a qutrit or ququart target (renormalized).
    #[arg(long, value_delimiter = ',')]
    coeffs: Option<Vec<f64>>,
    /// White-noise visibility.
    #[arg(long)]
    visibility: Option<f64>,
    /// Samples per setting (exact probabilities when absent).
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PairingArg {
    Primary,
    LeastSquares,
}

impl From<PairingArg> for PairingMode {
    fn from(p: PairingArg) -> Self {
        match p {
            PairingArg::Primary => PairingMode::Primary,
            PairingArg::LeastSquares => PairingMode::LeastSquares,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn print_json(value: serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(&value)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}")?;
    Ok(())
}

fn formats(names: &[String]) -> Result<Vec<Format>> {
    names.iter().map(|n| n.parse()).collect()
}

fn read_table(path: &Path) -> Result<CorrelationTable> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        CorrelationTable::read_csv(fs::File::open(path)?)
    } else {
        CorrelationTable::from_json_str(&fs::read_to_string(path)?)
    }
}

enum Prepared {
    Qubit(TargetQubitState, DensityMatrix),
    Qudit(SchmidtState, DensityMatrix),
}

impl Prepared {
    fn rho(&self) -> &DensityMatrix {
        match self {
            Prepared::Qubit(_, r) | Prepared::Qudit(_, r) => r,
        }
    }

    fn d(&self) -> usize {
        match self {
            Prepared::Qubit(..) => 2,
            Prepared::Qudit(s, _) => s.d(),
        }
    }
}

fn prepare(args: &StateArgs) -> Result<Prepared> {
    let noisy = |rho: DensityMatrix| match args.visibility {
        Some(v) => mix_white(&rho, v).map_err(|e| Error::Config(e.to_string())),
        None => Ok(rho),
    };
    match (args.theta, &args.coeffs) {
        (Some(theta), _) => {
            let t = TargetQubitState::new(theta).map_err(|e| Error::Config(e.to_string()))?;
            let rho = noisy(t.density())?;
            Ok(Prepared::Qubit(t, rho))
        }
        (None, Some(c)) => {
            if !(3..=4).contains(&c.len()) {
                return Err(Error::Config(format!("{} coefficients; qudit targets need 3 or 4", c.len())));
            }
            let (s, dev) = SchmidtState::normalized(c.clone()).map_err(|e| Error::Config(e.to_string()))?;
            if dev > RENORMALIZATION_WARN {
                eprintln!("warning: coefficients renormalized (norm off by {dev:.3e})");
            }
            let rho = noisy(s.density())?;
            Ok(Prepared::Qudit(s, rho))
        }
        (None, None) => Err(Error::Config("either --theta or --coeffs is required".into())),
    }
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            reoptimize,
            timing,
        } => {
            let mut config = ExperimentConfig::from_json_str(&fs::read_to_string(&config)?)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            for s in config.resolve()? {
                if s.renormalized_by > RENORMALIZATION_WARN {
                    eprintln!(
                        "warning: state {:?} renormalized (norm off by {:.3e})",
                        s.label, s.renormalized_by
                    );
                }
            }
            let formats = formats(&out.format)?;
            let report = run_with_options(&config, RunOptions { reoptimize, timing })?;
            for path in emit_report(&report, &formats, &out.out_dir)? {
                println!("{}", path.display());
            }
        }
        Command::Report { report, out } => {
            let formats = formats(&out.format)?;
            let report = Report::from_json_str(&fs::read_to_string(&report)?)?;
            for path in emit_report(&report, &formats, &out.out_dir)? {
                println!("{}", path.display());
            }
        }
        Command::Selftest { table, pairing_mode } => {
            let table = read_table(&table)?;
            let s = table.scenario();
            if s == BellScenario::chsh() {
                let mut out = serde_json::to_value(extract_theta(&table)?)?;
                if let Some(se) = theta_standard_error(&table)? {
                    out["theta_se"] = se.into();
                }
                print_json(out)?;
            } else {
                let layout = QuditLayout::standard(s.outcomes).map_err(|_| {
                    Error::InvalidTable(format!(
                        "neither a [{{2,2}},{{2,2}}] nor a [{{3,d}},{{4,d}}] table (d = {})",
                        s.outcomes
                    ))
                })?;
                print_json(serde_json::to_value(reconstruct_with(&table, &layout, pairing_mode.into())?)?)?;
            }
        }
        Command::CheckNs { table, tol } => {
            let table = read_table(&table)?;
            let tol = tol.unwrap_or_else(|| default_ns_tolerance(&table));
            let report = check_no_signalling(&table, tol);
            print_json(serde_json::to_value(&report)?)?;
            if !report.pass {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Tomograph { state } => {
            let prepared = prepare(&state)?;
            let d = prepared.d();
            let basis = tomo_projectors(d)?;
            let mut data = tomography_probabilities(prepared.rho(), &basis)?;
            if let Some(n) = state.samples {
                data = sample_tomography(&data, n, state.seed)?;
            }
            let r = reconstruct_with_basis(&data, &basis)?;
            print_json(serde_json::json!({
                "d": d,
                "joint_measurements": basis.joint_measurement_count(),
                "gram_condition": r.gram_condition,
                "projection_distance": r.projection_distance,
                "purity": purity(&r.rho),
                "trace_distance": trace_distance(r.rho.matrix(), prepared.rho().matrix())?,
                "readout": schmidt_readout(&r.rho, d)?,
                "rho": r.rho,
            }))?;
        }
        Command::Table { state, output } => {
            let prepared = prepare(&state)?;
            let settings = match &prepared {
                Prepared::Qubit(t, _) => optimal_settings(t.theta())?.settings,
                Prepared::Qudit(s, _) => build_qudit_settings(s)?.settings,
            };
            let mut table = born_table(prepared.rho(), &settings.alice, &settings.bob)?;
            if let Some(n) = state.samples {
                table = sample_counts(&table, n, state.seed)?;
            }
            match output {
                Some(path) if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => {
                    table.write_csv(fs::File::create(&path)?)?;
                }
                Some(path) => fs::write(&path, table.to_json_string()?)?,
                None => println!("{}", table.to_json_string()?),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

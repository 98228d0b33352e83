//! `mmsc`: synthesize and fit multimode atom–ring transmission spectra,
//! simulate and fit fluorescence correlations, align drifted spectra and run
//! the atom-number calibration chain.

mod commands;
mod config;
mod error;
mod svg;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{FitMode, G2Mode, SweepLadder};
use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "mmsc", version, about = "Multimode strong coupling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a transmission spectrum from a configuration.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path (`freq_hz,transmission`).
        #[arg(long)]
        out: PathBuf,
        /// Also write a line-plot SVG next to the CSV.
        #[arg(long)]
        svg: bool,
        /// Override the configured RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Add Poisson shot noise at this mean photon count per bin.
        #[arg(long)]
        noise_counts: Option<f64>,
    },
    /// Fit a spectrum: atom detuning, coupling strength, or single-pass OD.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Input spectrum CSV.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: FitMode,
        /// Write a key/value result file here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize a ladder of spectra over coupling strengths and extract
    /// the mode shifts.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated collective couplings, gN/2pi in MHz.
        #[arg(long)]
        gn_mhz: Option<String>,
        /// Comma-separated optical depths (alternative ladder).
        #[arg(long)]
        od: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Simulate or fit ensemble intensity correlations.
    G2 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: G2Mode,
        /// Measured correlation CSV (`tau_s,g2`), for fitting.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Add Poisson noise at this mean count per bin (simulation only).
        #[arg(long)]
        noise_counts: Option<f64>,
    },
    /// Align empty-resonator traces to a reference and apply the offsets to
    /// their paired loaded traces.
    Recenter {
        #[arg(long)]
        config: PathBuf,
        /// Directory of trace CSVs (`*_empty.csv` / `*_loaded.csv` pairs).
        #[arg(long)]
        traces_dir: PathBuf,
        /// Reference spectrum CSV.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Per-atom OD, cooperativity and the multimode coupling threshold from
    /// calibration records.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        /// Records CSV (`od,od_err,n_eff,n_err`).
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run() -> Result<commands::CommandOutcome, CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { config, out, svg, seed, noise_counts } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            commands::cmd_simulate(&cfg, &out, svg, noise_counts)
        }
        Command::Fit { config, data, mode, out } => {
            let cfg = RunConfig::load(&config)?;
            commands::cmd_fit(&cfg, &data, mode, out.as_deref())
        }
        Command::Sweep { config, gn_mhz, od, out_dir } => {
            let cfg = RunConfig::load(&config)?;
            let ladder = match (gn_mhz, od) {
                (Some(g), None) => SweepLadder::GnMhz(commands::parse_ladder(&g)?),
                (None, Some(o)) => SweepLadder::Od(commands::parse_ladder(&o)?),
                _ => {
                    return Err(CliError::config(
                        "sweep needs exactly one of --gn-mhz and --od".into(),
                    ))
                }
            };
            commands::cmd_sweep(&cfg, ladder, &out_dir)
        }
        Command::G2 { config, mode, data, out, svg, seed, noise_counts } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            commands::cmd_g2(&cfg, mode, data.as_deref(), out.as_deref(), svg, noise_counts)
        }
        Command::Recenter { config, traces_dir, reference, out_dir } => {
            let cfg = RunConfig::load(&config)?;
            commands::cmd_recenter(&cfg, &traces_dir, &reference, &out_dir)
        }
        Command::Calibrate { config, records, out } => {
            let cfg = RunConfig::load(&config)?;
            commands::cmd_calibrate(&cfg, &records, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(outcome) => ExitCode::from(outcome.exit_code as u8),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}

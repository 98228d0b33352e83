//! Subcommand implementations. Files carry frequencies in Hz; printed
//! summaries use MHz and microseconds where that reads better.

use std::path::{Path, PathBuf};

use mmsc_core::calibration::{
    intrinsic_cooperativity, mmsc_threshold, od_per_atom, CalibrationRecord, Measurement,
    LITERATURE_C1, LITERATURE_MMSC_THRESHOLD_ATOMS, LITERATURE_OD1,
};
use mmsc_core::correlations::{
    add_counting_noise, fit_atom_number, g2_ensemble, AtomNumberFitConfig, DriveParams,
    EnsembleG2Params,
};
use mmsc_core::fit::{
    fit_coupling, fit_detuning, fit_od_single_pass, CouplingFitOptions, SpectrumFitSetup,
};
use mmsc_core::model::{gn_to_od, od_to_gn, EnsembleParams, TAU};
use mmsc_core::spectra::{add_shot_noise, find_mode_shifts, recenter, synthesize, RecenterConfig};
use mmsc_core::spectrum::{frequency_grid, Spectrum};
use mmsc_core::io as core_io;

use crate::config::RunConfig;
use crate::error::{CliError, EXIT_NUMERICAL};
use crate::svg;
use crate::table::ResultTable;

pub struct CommandOutcome {
    pub exit_code: i32,
}

impl CommandOutcome {
    fn ok() -> Self {
        Self { exit_code: 0 }
    }
}

fn load_spectrum(path: &Path) -> Result<Spectrum, CliError> {
    core_io::read_spectrum_csv(path).map_err(CliError::from)
}

fn spectrum_svg(path: &Path, title: &str, spec: &Spectrum) -> Result<(), CliError> {
    let points: Vec<(f64, f64)> = spec
        .freqs()
        .iter()
        .zip(spec.values())
        .map(|(f, v)| (f / 1e6, *v))
        .collect();
    svg::write_line_plot(path, title, "detuning (MHz)", "transmission", &points)
}

fn write_sidecar(out: &Path, config: &RunConfig, spec: &Spectrum, noise: Option<f64>) -> Result<(), CliError> {
    let meta = format!(
        "label = \"{}\"\nspan_hz = {}\nstep_hz = {}\npoints = {}\nseed = {}\nnoise_counts_per_bin = {}\n",
        spec.meta.label,
        spec.meta.span_hz,
        spec.meta.step_hz,
        spec.len(),
        config.seed,
        noise.unwrap_or(0.0),
    );
    let path = sidecar_path(out);
    std::fs::write(&path, meta).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.toml");
    out.with_file_name(name)
}

pub fn cmd_simulate(
    config: &RunConfig,
    out: &Path,
    with_svg: bool,
    noise_counts: Option<f64>,
) -> Result<CommandOutcome, CliError> {
    let res = config.resonator()?;
    let ens = config.ensemble()?;
    let grid = frequency_grid(config.sweep.span_hz, config.sweep.points)?;
    let mut spec = synthesize(&grid, &res, &ens)?;
    if let Some(counts) = noise_counts {
        spec = add_shot_noise(&spec, counts, config.seed)?;
    }
    core_io::write_spectrum_csv(out, &spec)?;
    write_sidecar(out, config, &spec, noise_counts)?;
    if with_svg {
        spectrum_svg(&out.with_extension("svg"), &spec.meta.label, &spec)?;
    }
    println!(
        "wrote {} ({} points, span {} MHz, {})",
        out.display(),
        spec.len(),
        spec.meta.span_hz / 1e6,
        spec.meta.label
    );
    Ok(CommandOutcome::ok())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FitMode {
    Detuning,
    Coupling,
    Od,
}

pub fn cmd_fit(
    config: &RunConfig,
    data: &Path,
    mode: FitMode,
    out: Option<&Path>,
) -> Result<CommandOutcome, CliError> {
    let spec = load_spectrum(data)?;
    let res = config.resonator()?;
    let setup = SpectrumFitSetup::new(res, config.gamma(), config.atoms.beta)?;

    let (table, fit) = match mode {
        FitMode::Detuning => {
            let ens = config.ensemble()?;
            if ens.n_atoms <= 0.0 {
                return Err(CliError::config(
                    "detuning fit needs atoms.od or atoms.n_atoms to fix the coupling".into(),
                ));
            }
            let g_n = od_to_gn(ens.od(), config.gamma(), res.fsr);
            let fit = fit_detuning(&spec, &setup, g_n, TAU * config.atoms.delta_at_hz)?;
            let mut t = ResultTable::new("detuning fit");
            t.push_scalar("delta_at_hz", fit.estimates[0] / TAU)?;
            t.push_scalar("delta_at_sigma_hz", fit.uncertainties[0] / TAU)?;
            println!(
                "delta_at/2pi = {:.4} ± {:.4} kHz",
                fit.estimates[0] / TAU / 1e3,
                fit.uncertainties[0] / TAU / 1e3
            );
            (t, fit)
        }
        FitMode::Coupling => {
            let cfit = fit_coupling(&spec, &setup, &CouplingFitOptions::default())?;
            let mut t = ResultTable::new("coupling fit");
            t.push_scalar("od", cfit.od)?;
            t.push_scalar("od_sigma", cfit.od_sigma)?;
            t.push_scalar("gn_hz", cfit.g_n / TAU)?;
            t.push_scalar("gn_sigma_hz", cfit.g_n_sigma / TAU)?;
            t.push_scalar("delta_at_hz", cfit.fit.estimates[1] / TAU)?;
            println!(
                "od = {:.4} ± {:.4};  gN/2pi = {:.4} ± {:.4} MHz;  delta_at/2pi = {:.4} kHz",
                cfit.od,
                cfit.od_sigma,
                cfit.g_n / TAU / 1e6,
                cfit.g_n_sigma / TAU / 1e6,
                cfit.fit.estimates[1] / TAU / 1e3
            );
            (t, cfit.fit)
        }
        FitMode::Od => {
            let fit = fit_od_single_pass(&spec, config.atoms.probe_sat)?;
            let mut t = ResultTable::new("single-pass od fit");
            t.push_scalar("od0", fit.estimates[0])?;
            t.push_scalar("od0_sigma", fit.uncertainties[0])?;
            t.push_scalar("gamma_fwhm_hz", fit.estimates[1])?;
            t.push_scalar("gamma_fwhm_sigma_hz", fit.uncertainties[1])?;
            t.push_scalar("sat", fit.estimates[2])?;
            t.push_scalar("center_hz", fit.estimates[3])?;
            println!(
                "od0 = {:.4} ± {:.4};  fwhm = {:.4} MHz;  center = {:.4} MHz (sat fixed at {})",
                fit.estimates[0],
                fit.uncertainties[0],
                fit.estimates[1] / 1e6,
                fit.estimates[3] / 1e6,
                fit.estimates[2]
            );
            (t, fit)
        }
    };

    let mut table = table;
    table.push_scalar("residual_norm", fit.residual_norm)?;
    table.push_scalar("iterations", fit.iterations as f64)?;
    table.push_scalar("converged", if fit.flag.converged() { 1.0 } else { 0.0 })?;
    println!(
        "residual sum of squares {:.6e}, {} iterations, {}",
        fit.residual_norm,
        fit.iterations,
        fit.flag.as_str()
    );
    if let Some(out) = out {
        table.write(out)?;
        println!("wrote {}", out.display());
    }
    if !fit.flag.converged() {
        eprintln!("fit did not converge ({})", fit.flag.as_str());
        return Ok(CommandOutcome { exit_code: EXIT_NUMERICAL });
    }
    Ok(CommandOutcome::ok())
}

pub enum SweepLadder {
    GnMhz(Vec<f64>),
    Od(Vec<f64>),
}

pub fn cmd_sweep(
    config: &RunConfig,
    ladder: SweepLadder,
    out_dir: &Path,
) -> Result<CommandOutcome, CliError> {
    let res = config.resonator()?;
    let gamma = config.gamma();
    let ods: Vec<f64> = match &ladder {
        SweepLadder::GnMhz(gns) => {
            gns.iter().map(|g| gn_to_od(TAU * g * 1e6, gamma, res.fsr)).collect()
        }
        SweepLadder::Od(ods) => ods.clone(),
    };
    if ods.is_empty() {
        return Err(CliError::config("sweep ladder is empty".into()));
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::io(format!("{}: {e}", out_dir.display())))?;

    let grid = frequency_grid(config.sweep.span_hz, config.sweep.points)?;
    let orders = [-2, -1, 1, 2];
    let mut col_order = Vec::new();
    let mut col_gn = Vec::new();
    let mut col_shift = Vec::new();
    let mut col_depth = Vec::new();
    for (i, &od) in ods.iter().enumerate() {
        let ens = EnsembleParams::with_od(gamma, config.atoms.beta, od, TAU * config.atoms.delta_at_hz)
            .map_err(|e| CliError::config(format!("ladder step {i}: {e}")))?;
        let spec = synthesize(&grid, &res, &ens)?;
        let path = out_dir.join(format!("step_{i:03}.csv"));
        core_io::write_spectrum_csv(&path, &spec)?;
        let gn = od_to_gn(od, gamma, res.fsr);
        for shift in find_mode_shifts(&spec, res.fsr, &orders)? {
            col_order.push(shift.order as f64);
            col_gn.push(gn / TAU);
            col_shift.push(shift.shift);
            col_depth.push(shift.depth);
        }
    }
    let mut summary = ResultTable::new("mode shifts per ladder step");
    summary.push_column("order", col_order)?;
    summary.push_column("gn_hz", col_gn)?;
    summary.push_column("shift_hz", col_shift)?;
    summary.push_column("depth", col_depth)?;
    let summary_path = out_dir.join("summary.csv");
    write_summary_csv(&summary_path, &summary)?;
    println!("wrote {} ladder steps and {}", ods.len(), summary_path.display());
    Ok(CommandOutcome::ok())
}

fn write_summary_csv(path: &Path, table: &ResultTable) -> Result<(), CliError> {
    // The sweep summary is tabular data, not a key/value result file.
    let text = table.render_text();
    let mut lines = text.lines();
    let _caption = lines.next();
    let mut out = String::from("order,gn_hz,shift_hz,depth\n");
    let _header = lines.next();
    for line in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() == 4 {
            out.push_str(&format!("{},{},{},{}\n", fields[0], fields[1], fields[2], fields[3]));
        }
    }
    std::fs::write(path, out).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum G2Mode {
    Simulate,
    Fit,
}

pub fn cmd_g2(
    config: &RunConfig,
    mode: G2Mode,
    data: Option<&Path>,
    out: Option<&Path>,
    with_svg: bool,
    noise_counts: Option<f64>,
) -> Result<CommandOutcome, CliError> {
    let gamma = config.gamma();
    let drive = DriveParams::new(
        TAU * config.drive.rabi_hz_over_2pi,
        TAU * config.drive.detuning_hz,
        gamma,
    )?;
    match mode {
        G2Mode::Simulate => {
            let ens_atoms = config.ensemble()?;
            if ens_atoms.n_atoms <= 0.0 {
                return Err(CliError::config(
                    "g2 simulation needs atoms.od or atoms.n_atoms".into(),
                ));
            }
            let (mu, mu0) = config.mu_values();
            let ens = EnsembleG2Params::new(
                ens_atoms.n_atoms,
                mu0,
                mu,
                (config.g2.mu0_bounds[0], config.g2.mu0_bounds[1]),
                (config.g2.mu_bounds[0], config.g2.mu_bounds[1]),
            )?;
            let grid = config.tau_grid();
            let mut trace = g2_ensemble(&grid, &drive, &ens)?;
            if let Some(counts) = noise_counts {
                trace = add_counting_noise(&trace, counts, config.seed)?;
            }
            let out = out.ok_or_else(|| CliError::config("g2 simulate needs --out".into()))?;
            core_io::write_correlation_csv(out, &trace)?;
            if with_svg {
                let points: Vec<(f64, f64)> = trace
                    .taus()
                    .iter()
                    .zip(trace.values())
                    .map(|(t, v)| (t * 1e6, *v))
                    .collect();
                svg::write_line_plot(
                    &out.with_extension("svg"),
                    &format!("g2, N = {}", ens_atoms.n_atoms),
                    "delay (us)",
                    "g2",
                    &points,
                )?;
            }
            println!(
                "wrote {} ({} delays, g2(0) = {:.4})",
                out.display(),
                trace.len(),
                trace.values()[0]
            );
            Ok(CommandOutcome::ok())
        }
        G2Mode::Fit => {
            let data = data.ok_or_else(|| CliError::config("g2 fit needs --data".into()))?;
            let trace = core_io::read_correlation_csv(data)?;
            let cfg = AtomNumberFitConfig {
                gamma,
                drive_detuning: TAU * config.drive.detuning_hz,
                rabi_bounds: (0.05 * gamma, 50.0 * gamma),
                rabi_init: TAU * config.drive.rabi_hz_over_2pi,
                n_bounds: (0.0, 1e4),
                n_init: 3.0,
                mu0_bounds: (config.g2.mu0_bounds[0], config.g2.mu0_bounds[1]),
                mu_bounds: (config.g2.mu_bounds[0], config.g2.mu_bounds[1]),
            };
            let fit = fit_atom_number(&trace, &cfg)?;
            println!(
                "N_eff = {:.4} ± {:.4} (corner spread {:.4});  rabi/2pi = {:.4} MHz;  mu = {:.4};  mu0 = {:.4}",
                fit.n_eff,
                fit.n_sigma,
                fit.corner_spread,
                fit.fit.estimates[1] / TAU / 1e6,
                fit.fit.estimates[2],
                fit.fit.estimates[3]
            );
            println!(
                "residual sum of squares {:.6e}, {} iterations, {}",
                fit.fit.residual_norm,
                fit.fit.iterations,
                fit.fit.flag.as_str()
            );
            if let Some(out) = out {
                let mut t = ResultTable::new("atom-number fit");
                t.push_scalar("n_eff", fit.n_eff)?;
                t.push_scalar("n_sigma", fit.n_sigma)?;
                t.push_scalar("corner_spread", fit.corner_spread)?;
                t.push_scalar("rabi_hz", fit.fit.estimates[1] / TAU)?;
                t.push_scalar("mu", fit.fit.estimates[2])?;
                t.push_scalar("mu0", fit.fit.estimates[3])?;
                t.push_scalar("residual_norm", fit.fit.residual_norm)?;
                t.push_scalar("converged", if fit.fit.flag.converged() { 1.0 } else { 0.0 })?;
                t.write(out)?;
                println!("wrote {}", out.display());
            }
            if !fit.fit.flag.converged() {
                eprintln!("fit did not converge ({})", fit.fit.flag.as_str());
                return Ok(CommandOutcome { exit_code: EXIT_NUMERICAL });
            }
            Ok(CommandOutcome::ok())
        }
    }
}

pub fn cmd_recenter(
    config: &RunConfig,
    traces_dir: &Path,
    reference: &Path,
    out_dir: &Path,
) -> Result<CommandOutcome, CliError> {
    let reference_spec = load_spectrum(reference)?;
    let res = config.resonator()?;
    let cfg = RecenterConfig::for_fsr(res.fsr);

    let mut entries: Vec<PathBuf> = std::fs::read_dir(traces_dir)
        .map_err(|e| CliError::io(format!("{}: {e}", traces_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(CliError::config(format!("no .csv traces in {}", traces_dir.display())));
    }

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::io(format!("{}: {e}", out_dir.display())))?;

    // Alignment targets: *_empty.csv files and any file without the
    // empty/loaded pairing convention. *_loaded.csv files take the offset of
    // their empty partner.
    let stem_of = |p: &Path| p.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
    let mut align_paths = Vec::new();
    let mut loaded_only = Vec::new();
    for path in &entries {
        let stem = stem_of(path);
        if let Some(base) = stem.strip_suffix("_loaded") {
            let partner = traces_dir.join(format!("{base}_empty.csv"));
            if !partner.exists() {
                loaded_only.push(path.clone());
            }
            continue;
        }
        align_paths.push(path.clone());
    }

    let mut traces = Vec::new();
    for path in &align_paths {
        traces.push(load_spectrum(path)?);
    }
    let (aligned, report) = recenter(&traces, &reference_spec, &cfg)?;

    let mut report_text = String::from("file,offset_hz,rss_before,rss_after\n");
    let mut warnings = Vec::new();
    for ((path, spec), alignment) in align_paths.iter().zip(&aligned).zip(&report.alignments) {
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        core_io::write_spectrum_csv(&out_dir.join(&name), spec)?;
        report_text.push_str(&format!(
            "{name},{},{},{}\n",
            alignment.offset_hz, alignment.rss_before, alignment.rss_after
        ));
        // Paired loaded trace gets the same per-shot offset.
        let stem = stem_of(path);
        if let Some(base) = stem.strip_suffix("_empty") {
            let partner = traces_dir.join(format!("{base}_loaded.csv"));
            if partner.exists() {
                let loaded = load_spectrum(&partner)?;
                let shifted = mmsc_core::spectra::apply_offset(&loaded, alignment.offset_hz)?;
                let loaded_name = partner.file_name().unwrap().to_string_lossy().to_string();
                core_io::write_spectrum_csv(&out_dir.join(&loaded_name), &shifted)?;
                report_text.push_str(&format!(
                    "{loaded_name},{},,\n",
                    alignment.offset_hz
                ));
            } else {
                warnings.push(format!("no loaded partner for {name}"));
            }
        }
    }
    for path in &loaded_only {
        warnings.push(format!(
            "skipped {}: no matching _empty trace",
            path.file_name().unwrap().to_string_lossy()
        ));
    }
    for w in &warnings {
        report_text.push_str(&format!("# warning: {w}\n"));
        eprintln!("warning: {w}");
    }
    let report_path = out_dir.join("recenter_report.csv");
    std::fs::write(&report_path, report_text)
        .map_err(|e| CliError::io(format!("{}: {e}", report_path.display())))?;
    println!("aligned {} traces; report at {}", aligned.len(), report_path.display());
    Ok(CommandOutcome::ok())
}

pub fn cmd_calibrate(
    config: &RunConfig,
    records_path: &Path,
    out: Option<&Path>,
) -> Result<CommandOutcome, CliError> {
    let records = read_records(records_path)?;
    let res = config.resonator()?;
    let gamma = config.gamma();

    let od1 = od_per_atom(&records)?;
    let threshold = mmsc_threshold(od1.weighted, gamma, res.fsr)?;
    let coop = intrinsic_cooperativity(od1.weighted, res.kappa0, res.kappa_ext, res.fsr, gamma)?;

    println!("calibration from {} records:", records.len());
    println!(
        "  od per atom        {:.5} ± {:.5} weighted   ({:.5} ± {:.5} unweighted;  literature {} ± {})",
        od1.weighted.value,
        od1.weighted.sigma,
        od1.unweighted.value,
        od1.unweighted.sigma,
        LITERATURE_OD1.value,
        LITERATURE_OD1.sigma
    );
    println!(
        "  mmsc threshold     {:.1} ± {:.1} atoms              (literature {} ± {})",
        threshold.value,
        threshold.sigma,
        LITERATURE_MMSC_THRESHOLD_ATOMS.value,
        LITERATURE_MMSC_THRESHOLD_ATOMS.sigma
    );
    println!(
        "  single-atom coop   {:.4} (kappa0) / {:.4} (kappa0+kappa_ext)   (literature {})",
        coop.intrinsic.value, coop.total.value, LITERATURE_C1
    );

    if let Some(out) = out {
        let mut t = ResultTable::new("calibration");
        t.push_scalar("od1", od1.weighted.value)?;
        t.push_scalar("od1_sigma", od1.weighted.sigma)?;
        t.push_scalar("od1_unweighted", od1.unweighted.value)?;
        t.push_scalar("od1_unweighted_sigma", od1.unweighted.sigma)?;
        t.push_scalar("n_threshold", threshold.value)?;
        t.push_scalar("n_threshold_sigma", threshold.sigma)?;
        t.push_scalar("c1_kappa0", coop.intrinsic.value)?;
        t.push_scalar("c1_kappa_total", coop.total.value)?;
        t.push_scalar("literature_od1", LITERATURE_OD1.value)?;
        t.push_scalar("literature_od1_sigma", LITERATURE_OD1.sigma)?;
        t.push_scalar("literature_n_threshold", LITERATURE_MMSC_THRESHOLD_ATOMS.value)?;
        t.push_scalar("literature_c1", LITERATURE_C1)?;
        t.write(out)?;
        println!("wrote {}", out.display());
    }
    Ok(CommandOutcome::ok())
}

const RECORDS_HEADER: &str = "od,od_err,n_eff,n_err";

fn read_records(path: &Path) -> Result<Vec<CalibrationRecord>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header.trim() != RECORDS_HEADER {
        return Err(CliError::config(format!(
            "{}: expected header '{RECORDS_HEADER}', found '{header}'",
            path.display()
        )));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CliError::config(format!(
                "{}: line {}: expected 4 fields, found {}",
                path.display(),
                i + 2,
                fields.len()
            )));
        }
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| {
                CliError::config(format!(
                    "{}: line {}: '{}' is not a number",
                    path.display(),
                    i + 2,
                    s
                ))
            })
        };
        records.push(CalibrationRecord {
            od: Measurement::new(parse(fields[0])?, parse(fields[1])?),
            n_eff: Measurement::new(parse(fields[2])?, parse(fields[3])?),
        });
    }
    if records.is_empty() {
        return Err(CliError::config(format!("{}: no record rows", path.display())));
    }
    Ok(records)
}

/// Shared `--gn-mhz`/`--od` list parsing.
pub fn parse_ladder(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::config(format!("ladder entry '{s}' is not a number")))
        })
        .collect()
}

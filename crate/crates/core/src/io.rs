//! CSV formats for spectra and correlation traces.
//!
//! Spectrum files carry the header `freq_hz,transmission`; intensity
//! correlations `tau_s,g2`; field correlations `tau_s,re,im`. Values are
//! written in plain decimal notation via the shortest round-trip float
//! formatting, so write/read cycles are exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::correlations::{FieldTrace, IntensityTrace};
use crate::error::{Error, Result};
use crate::spectrum::{Spectrum, SpectrumMeta};

pub const SPECTRUM_HEADER: &str = "freq_hz,transmission";
pub const G2_HEADER: &str = "tau_s,g2";
pub const FIELD_HEADER: &str = "tau_s,re,im";

pub fn write_spectrum_csv(path: &Path, spec: &Spectrum) -> Result<()> {
    let mut out = String::with_capacity(spec.len() * 24);
    out.push_str(SPECTRUM_HEADER);
    out.push('\n');
    for (f, v) in spec.freqs().iter().zip(spec.values()) {
        out.push_str(&format!("{f},{v}\n"));
    }
    fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_spectrum_csv(path: &Path) -> Result<Spectrum> {
    let text = fs::read_to_string(path)?;
    let (freqs, cols) = parse_csv(&text, SPECTRUM_HEADER, 1, path)?;
    let span = freqs.last().copied().unwrap_or(0.0) - freqs.first().copied().unwrap_or(0.0);
    let step = if freqs.len() > 1 { freqs[1] - freqs[0] } else { 0.0 };
    let meta = SpectrumMeta {
        label: path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string(),
        span_hz: span,
        step_hz: step,
    };
    Spectrum::new(freqs, cols.into_iter().next().unwrap(), meta)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_correlation_csv(path: &Path, trace: &IntensityTrace) -> Result<()> {
    let mut out = String::with_capacity(trace.len() * 24);
    out.push_str(G2_HEADER);
    out.push('\n');
    for (t, v) in trace.taus().iter().zip(trace.values()) {
        out.push_str(&format!("{t},{v}\n"));
    }
    fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_correlation_csv(path: &Path) -> Result<IntensityTrace> {
    let text = fs::read_to_string(path)?;
    let (taus, cols) = parse_csv(&text, G2_HEADER, 1, path)?;
    IntensityTrace::new(taus, cols.into_iter().next().unwrap())
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_field_correlation_csv(path: &Path, trace: &FieldTrace) -> Result<()> {
    let mut out = String::with_capacity(trace.len() * 32);
    out.push_str(FIELD_HEADER);
    out.push('\n');
    for (t, v) in trace.taus().iter().zip(trace.values()) {
        out.push_str(&format!("{t},{},{}\n", v.re, v.im));
    }
    fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_field_correlation_csv(path: &Path) -> Result<FieldTrace> {
    let text = fs::read_to_string(path)?;
    let (taus, cols) = parse_csv(&text, FIELD_HEADER, 2, path)?;
    let mut it = cols.into_iter();
    let (re, im) = (it.next().unwrap(), it.next().unwrap());
    let values = re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect();
    FieldTrace::new(taus, values)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Parse a CSV with the exact `header` and `1 + extra_cols` numeric columns.
/// Returns the first column and the remaining columns.
fn parse_csv(
    text: &str,
    header: &str,
    extra_cols: usize,
    path: &Path,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("");
    if first.trim() != header {
        return Err(Error::Format(format!(
            "{}: expected header '{header}', found '{first}'",
            path.display()
        )));
    }
    let mut key = Vec::new();
    let mut cols = vec![Vec::new(); extra_cols];
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + extra_cols {
            return Err(Error::Format(format!(
                "{}: line {}: expected {} fields, found {}",
                path.display(),
                idx + 2,
                1 + extra_cols,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| {
                Error::Format(format!(
                    "{}: line {}: '{}' is not a number",
                    path.display(),
                    idx + 2,
                    s
                ))
            })
        };
        key.push(parse(fields[0])?);
        for (c, field) in cols.iter_mut().zip(&fields[1..]) {
            c.push(parse(field)?);
        }
    }
    if key.is_empty() {
        return Err(Error::Format(format!("{}: no data rows", path.display())));
    }
    Ok((key, cols))
}

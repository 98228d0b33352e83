//! Spectrum synthesis, shot-noise injection, transmission-minima extraction
//! and the empty-cavity recentering algorithm.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ring_transmission_with, EnsembleParams, ResonatorParams};
use crate::spectrum::{Spectrum, SpectrumMeta};

/// Displacement of a transmission minimum from its bare-resonator position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeShift {
    /// Mode order, ..,-2,-1,+1,+2,.. (the split central resonance has no
    /// single minimum and therefore no order-0 entry).
    pub order: i32,
    /// Shift in Hz, outward-positive: positive values move away from the
    /// central resonance on either side.
    pub shift: f64,
    /// Transmission at the refined minimum.
    pub depth: f64,
}

/// Pointwise ring transmission over a frequency grid.
pub fn synthesize(grid: &[f64], res: &ResonatorParams, ens: &EnsembleParams) -> Result<Spectrum> {
    if grid.len() < 2 {
        return Err(Error::InvalidParams("synthesis grid needs at least 2 points".into()));
    }
    if grid.iter().any(|f| !f.is_finite()) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParams("synthesis grid must be finite and sorted".into()));
    }
    let coeff = res.coupling_coefficients()?;
    let values = grid
        .iter()
        .map(|&f| ring_transmission_with(f, res.fsr, &coeff, res.loop_open, ens))
        .collect::<Result<Vec<_>>>()?;
    let step = grid[1] - grid[0];
    let meta = SpectrumMeta {
        label: format!(
            "{} loop, N = {}",
            if res.loop_open { "open" } else { "closed" },
            ens.n_atoms
        ),
        span_hz: grid[grid.len() - 1] - grid[0],
        step_hz: step,
    };
    Spectrum::new(grid.to_vec(), values, meta)
}

/// Replace every sample by a Poisson draw with mean
/// `value * mean_counts_per_bin`, renormalized back to transmission units.
/// Deterministic for a fixed seed.
pub fn add_shot_noise(spec: &Spectrum, mean_counts_per_bin: f64, seed: u64) -> Result<Spectrum> {
    if !(mean_counts_per_bin > 0.0) {
        return Err(Error::InvalidParams(format!(
            "mean_counts_per_bin must be > 0, got {mean_counts_per_bin}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = spec
        .values()
        .iter()
        .map(|&t| {
            let mean = t * mean_counts_per_bin;
            if mean <= 0.0 {
                return 0.0;
            }
            let draw: f64 = Poisson::new(mean).expect("mean > 0").sample(&mut rng);
            draw / mean_counts_per_bin
        })
        .collect();
    spec.with_values(values)
}

/// Locate the transmission minimum in each requested order window
/// `[n*fsr - fsr/2, n*fsr + fsr/2]`, refine it with a three-point parabola
/// and report the shift relative to `n*fsr`, outward-positive.
pub fn find_mode_shifts(spec: &Spectrum, fsr: f64, orders: &[i32]) -> Result<Vec<ModeShift>> {
    orders
        .iter()
        .map(|&order| {
            if order == 0 {
                return Err(Error::InvalidModeOrder);
            }
            let center = order as f64 * fsr;
            let (lo, hi) = (center - fsr / 2.0, center + fsr / 2.0);
            let freqs = spec.freqs();
            if lo < freqs[0] || hi > freqs[freqs.len() - 1] {
                return Err(Error::WindowNotCovered { order, lo, hi });
            }
            let start = freqs.partition_point(|&f| f < lo);
            let end = freqs.partition_point(|&f| f <= hi);
            let window = &spec.values()[start..end];
            if window.len() < 3 {
                return Err(Error::WindowNotCovered { order, lo, hi });
            }
            let (k, _) = window
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            if k == 0 || k == window.len() - 1 {
                return Err(Error::NoClearMinimum { order });
            }
            let i = start + k;
            let (f_min, depth) = refine_parabola(
                freqs[i - 1],
                freqs[i],
                freqs[i + 1],
                spec.values()[i - 1],
                spec.values()[i],
                spec.values()[i + 1],
            );
            Ok(ModeShift {
                order,
                shift: (f_min - center) * (order.signum() as f64),
                depth,
            })
        })
        .collect()
}

/// All transmission dips with at least `min_prominence` contrast, as
/// parabola-refined `(frequency, depth)` pairs.
///
/// Prominence of a local minimum is how far the curve has to rise on its
/// shallower side before descending below the minimum again; filtering on it
/// separates real dips from numerical dimples on a plateau.
pub fn find_dips(spec: &Spectrum, min_prominence: f64) -> Vec<(f64, f64)> {
    let v = spec.values();
    let f = spec.freqs();
    let mut dips = Vec::new();
    for i in 1..v.len() - 1 {
        if !(v[i] < v[i - 1] && v[i] < v[i + 1]) {
            continue;
        }
        let mut left_max = f64::NEG_INFINITY;
        for j in (0..i).rev() {
            if v[j] < v[i] {
                break;
            }
            left_max = left_max.max(v[j]);
        }
        let mut right_max = f64::NEG_INFINITY;
        for j in i + 1..v.len() {
            if v[j] < v[i] {
                break;
            }
            right_max = right_max.max(v[j]);
        }
        if left_max.min(right_max) - v[i] >= min_prominence {
            dips.push(refine_parabola(f[i - 1], f[i], f[i + 1], v[i - 1], v[i], v[i + 1]));
        }
    }
    dips
}

/// Vertex of the parabola through three samples bracketing a minimum.
/// Falls back to the central sample when the points are collinear.
fn refine_parabola(x0: f64, x1: f64, x2: f64, y0: f64, y1: f64, y2: f64) -> (f64, f64) {
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let curv = (d12 - d01) / (x2 - x0);
    if curv <= 0.0 || !curv.is_finite() {
        return (x1, y1);
    }
    // Newton's divided-difference form: y = y0 + d01 (x-x0) + curv (x-x0)(x-x1)
    let x_min = (x0 + x1) / 2.0 - d01 / (2.0 * curv);
    let y_min = y0 + d01 * (x_min - x0) + curv * (x_min - x0) * (x_min - x1);
    (x_min, y_min)
}

/// Controls for the rigid-offset alignment search.
#[derive(Debug, Clone, Copy)]
pub struct RecenterConfig {
    /// Half-width of the offset search range in Hz (offsets are searched in
    /// `[-search_range_hz, +search_range_hz]`). Default: half a free
    /// spectral range, which keeps the periodic resonance comb unambiguous.
    pub search_range_hz: f64,
    /// Two offsets whose residuals agree within this relative tolerance are
    /// reported as ambiguous.
    pub ambiguity_rel: f64,
}

impl RecenterConfig {
    pub fn for_fsr(fsr: f64) -> Self {
        Self { search_range_hz: fsr / 2.0, ambiguity_rel: 1e-6 }
    }
}

/// Offset and residuals for one aligned trace.
#[derive(Debug, Clone, Copy)]
pub struct TraceAlignment {
    /// Frequency displacement of the trace relative to the reference, Hz:
    /// `trace(f) ~ reference(f - offset_hz)`. Applying the correction means
    /// resampling the trace at `f + offset_hz`.
    pub offset_hz: f64,
    /// Mean squared difference to the reference per overlapping sample,
    /// before alignment.
    pub rss_before: f64,
    /// Same, after alignment. Never exceeds `rss_before`.
    pub rss_after: f64,
}

/// Per-trace offsets with before/after residuals.
#[derive(Debug, Clone, Default)]
pub struct RecenterReport {
    pub alignments: Vec<TraceAlignment>,
}

/// Align each trace to `reference` by the rigid frequency offset minimizing
/// the mean squared difference (linear interpolation for sub-bin offsets):
/// a coarse scan at grid resolution followed by golden-section refinement.
///
/// Returns the aligned traces (resampled onto the reference grid) and the
/// per-trace report; the offsets can be re-applied to paired traces with
/// [`apply_offset`].
pub fn recenter(
    traces: &[Spectrum],
    reference: &Spectrum,
    cfg: &RecenterConfig,
) -> Result<(Vec<Spectrum>, RecenterReport)> {
    let step = reference.step();
    for (i, t) in traces.iter().enumerate() {
        if ((t.step() - step) / step).abs() > 1e-9 {
            return Err(Error::GridMismatch(format!(
                "trace {i} step {} Hz differs from reference step {} Hz",
                t.step(),
                step
            )));
        }
    }
    let results: Vec<Result<(Spectrum, TraceAlignment)>> = traces
        .par_iter()
        .map(|t| {
            let alignment = align_one(t, reference, cfg)?;
            Ok((apply_offset(t, alignment.offset_hz)?, alignment))
        })
        .collect();
    let mut aligned = Vec::with_capacity(traces.len());
    let mut report = RecenterReport::default();
    for r in results {
        let (s, a) = r?;
        aligned.push(s);
        report.alignments.push(a);
    }
    Ok((aligned, report))
}

/// Resample `spec` at `f + offset_hz` on its own grid, clamping to the edge
/// values where the shifted grid leaves the sampled range.
pub fn apply_offset(spec: &Spectrum, offset_hz: f64) -> Result<Spectrum> {
    let values = spec.freqs().iter().map(|&f| spec.interp(f + offset_hz)).collect();
    spec.with_values(values)
}

fn align_one(trace: &Spectrum, reference: &Spectrum, cfg: &RecenterConfig) -> Result<TraceAlignment> {
    let step = reference.step();
    let bins = (cfg.search_range_hz / step).floor() as i64;
    if bins < 1 {
        return Err(Error::InvalidParams(format!(
            "search range {} Hz is below one grid step {} Hz",
            cfg.search_range_hz, step
        )));
    }

    // On matching uniform grids the shifted trace value is a fractional
    // index lookup; the scan below is hot, so avoid generic interpolation.
    let base = (trace.freqs()[0] - reference.freqs()[0]) / step;
    let uniform = trace.is_uniform(1e-9)
        && reference.is_uniform(1e-9)
        && (base - base.round()).abs() <= 1e-9;
    let mse = |delta: f64| -> f64 {
        if uniform {
            mse_uniform(trace.values(), reference.values(), base.round(), delta / step)
        } else {
            mse_at(trace, reference, delta)
        }
    };

    // Coarse scan at whole-bin offsets.
    let coarse: Vec<(f64, f64)> = (-bins..=bins)
        .map(|k| {
            let delta = k as f64 * step;
            (delta, mse(delta))
        })
        .collect();
    let (best_idx, &(coarse_delta, coarse_mse)) = coarse
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
        .unwrap();

    // Periodic-ambiguity check: another coarse local minimum, away from the
    // winning basin, with a residual equal within tolerance. Residuals are
    // compared on the scale of the reference signal power so a perfect
    // zero-residual match still registers as ambiguous.
    let signal_power = reference.values().iter().map(|v| v * v).sum::<f64>()
        / reference.len() as f64;
    let tol = cfg.ambiguity_rel * signal_power.max(f64::MIN_POSITIVE);
    for (i, &(delta, mse)) in coarse.iter().enumerate() {
        if (i as i64 - best_idx as i64).abs() <= 2 {
            continue;
        }
        let is_local_min = (i == 0 || coarse[i - 1].1 >= mse)
            && (i == coarse.len() - 1 || coarse[i + 1].1 >= mse);
        if is_local_min && (mse - coarse_mse).abs() <= tol {
            return Err(Error::AmbiguousAlignment {
                a: coarse_delta,
                b: delta,
                rel: cfg.ambiguity_rel,
            });
        }
    }

    // Golden-section refinement inside the winning bin pair.
    let lo = coarse_delta - step;
    let hi = coarse_delta + step;
    let (refined_delta, refined_mse) = golden_section(&mse, lo, hi, step * 1e-6);
    let (offset_hz, rss_after) = if refined_mse <= coarse_mse {
        (refined_delta, refined_mse)
    } else {
        (coarse_delta, coarse_mse)
    };
    Ok(TraceAlignment { offset_hz, rss_before: mse(0.0), rss_after })
}

/// Mean squared difference on matching uniform grids: reference index `i`
/// maps to the fractional trace index `i - base + delta_bins`.
fn mse_uniform(tv: &[f64], rv: &[f64], base: f64, delta_bins: f64) -> f64 {
    let shift = delta_bins - base;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, &r) in rv.iter().enumerate() {
        let j = i as f64 + shift;
        if j < 0.0 || j > (tv.len() - 1) as f64 {
            continue;
        }
        let j0 = j.floor();
        let w = j - j0;
        let k = j0 as usize;
        let v = if w <= 1e-12 || k + 1 >= tv.len() {
            tv[k]
        } else {
            tv[k] * (1.0 - w) + tv[k + 1] * w
        };
        let d = v - r;
        sum += d * d;
        n += 1;
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

/// Mean squared difference between `trace` shifted back by `delta` and the
/// reference, over the overlapping part of the grids (general-grid path).
fn mse_at(trace: &Spectrum, reference: &Spectrum, delta: f64) -> f64 {
    let rf = reference.freqs();
    let rv = reference.values();
    let tf = trace.freqs();
    let t_lo = tf[0] - delta;
    let t_hi = tf[tf.len() - 1] - delta;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, &f) in rf.iter().enumerate() {
        if f < t_lo || f > t_hi {
            continue;
        }
        let d = trace.interp(f + delta) - rv[i];
        sum += d * d;
        n += 1;
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = (a + b) / 2.0;
    (x, f(x))
}

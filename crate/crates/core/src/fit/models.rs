//! The concrete spectrum fits: atom–resonator detuning, collective coupling
//! strength, and single-pass optical depth.

use crate::error::{Error, Result};
use crate::fit::engine::{nls_minimize, Bounds, FitOptions, FitProblem, FitResult};
use crate::model::{
    gn_to_od, od_to_gn, ring_transmission_with, saturated_lorentzian, EnsembleParams,
    ResonatorParams, TAU,
};
use crate::spectrum::Spectrum;

const MHZ: f64 = 1e6;

/// Fixed physics shared by the spectrum fits: the resonator and the atomic
/// line, with `beta` held constant (atom number and `beta` are not separately
/// identifiable from a transmission spectrum; `beta` defaults to OD1/4).
#[derive(Debug, Clone, Copy)]
pub struct SpectrumFitSetup {
    pub res: ResonatorParams,
    /// Dipole decay rate, rad/s.
    pub gamma: f64,
    /// Fixed emission fraction into the fiber mode.
    pub beta: f64,
}

impl SpectrumFitSetup {
    pub fn new(res: ResonatorParams, gamma: f64, beta: f64) -> Result<Self> {
        EnsembleParams::new(gamma, beta, 0.0, 0.0)?;
        Ok(Self { res, gamma, beta })
    }

    fn model(&self, od: f64, delta_at: f64, freqs: &[f64]) -> Result<Vec<f64>> {
        let ens = EnsembleParams::with_od(self.gamma, self.beta, od, delta_at)?;
        let coeff = self.res.coupling_coefficients()?;
        freqs
            .iter()
            .map(|&f| ring_transmission_with(f, self.res.fsr, &coeff, self.res.loop_open, &ens))
            .collect()
    }
}

/// Fit the atom–resonator detuning with everything else held fixed.
///
/// `g_n` (rad/s) comes from an independently measured OD. The single fitted
/// parameter is reported in rad/s in `estimates[0]`.
pub fn fit_detuning(
    spec: &Spectrum,
    setup: &SpectrumFitSetup,
    g_n: f64,
    init_delta_at: f64,
) -> Result<FitResult> {
    let od = gn_to_od(g_n, setup.gamma, setup.res.fsr);
    let freqs = spec.freqs().to_vec();
    let data = spec.values().to_vec();
    let setup = *setup;
    // Parameter: delta_at / 2pi in MHz, bounded to half an FSR either way
    // (larger detunings alias onto the neighboring mode).
    let half_fsr_mhz = setup.res.fsr / 2.0 / MHZ;
    let problem = FitProblem::new(
        move |p: &[f64]| {
            let delta_at = TAU * p[0] * MHZ;
            match setup.model(od, delta_at, &freqs) {
                Ok(m) => m.iter().zip(&data).map(|(a, b)| a - b).collect(),
                Err(_) => vec![f64::NAN; data.len()],
            }
        },
        vec![init_delta_at / TAU / MHZ],
    )
    .with_bounds(Bounds::new(vec![-half_fsr_mhz], vec![half_fsr_mhz])?)
    .with_options(FitOptions { step_scales: vec![0.1], ..Default::default() });
    let mut fit = nls_minimize(&problem)?;
    fit.estimates[0] *= TAU * MHZ;
    fit.uncertainties[0] *= TAU * MHZ;
    Ok(fit)
}

/// Controls for [`fit_coupling`].
#[derive(Debug, Clone, Copy)]
pub struct CouplingFitOptions {
    /// Let the atom–resonator detuning float alongside the coupling
    /// (recorded in the result either way).
    pub float_delta_at: bool,
    /// Fit a global transmission scale as a nuisance parameter.
    pub fit_scale: bool,
    /// Starting OD; when absent a coarse grid scan picks one.
    pub od_init: Option<f64>,
}

impl Default for CouplingFitOptions {
    fn default() -> Self {
        Self { float_delta_at: true, fit_scale: false, od_init: None }
    }
}

/// Coupling-strength fit result: the engine output over
/// `[od, delta_at (rad/s), scale?]` plus the derived collective coupling.
#[derive(Debug, Clone)]
pub struct CouplingFit {
    pub fit: FitResult,
    pub od: f64,
    pub od_sigma: f64,
    /// Collective coupling rate, rad/s.
    pub g_n: f64,
    pub g_n_sigma: f64,
}

/// Fit the single-pass OD (continuous atom number at fixed `beta`) to a
/// coupled ring spectrum and report the collective coupling via the OD
/// conversion.
pub fn fit_coupling(
    spec: &Spectrum,
    setup: &SpectrumFitSetup,
    opts: &CouplingFitOptions,
) -> Result<CouplingFit> {
    let lo = spec.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = spec.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 0.02 {
        return Err(Error::FlatSpectrum(hi - lo));
    }

    let freqs = spec.freqs().to_vec();
    let data = spec.values().to_vec();
    let setup_c = *setup;

    let od_init = match opts.od_init {
        Some(od) => od,
        None => {
            // Coarse scan over a log ladder; the cost landscape in OD is
            // smooth but can trap a cold start on the wrong side.
            let mut best = (f64::INFINITY, 0.0);
            for od in [0.0, 0.01, 0.03, 0.1, 0.3, 1.0, 2.0, 4.0, 8.0, 12.0, 20.0, 35.0, 60.0] {
                if let Ok(m) = setup_c.model(od, 0.0, &freqs) {
                    let cost: f64 =
                        m.iter().zip(&data).map(|(a, b)| (a - b) * (a - b)).sum();
                    if cost < best.0 {
                        best = (cost, od);
                    }
                }
            }
            best.1
        }
    };

    let float_delta = opts.float_delta_at;
    let fit_scale = opts.fit_scale;
    let half_fsr_mhz = setup.res.fsr / 2.0 / MHZ;
    let mut initial = vec![od_init, 0.0];
    let mut lower = vec![0.0, -half_fsr_mhz];
    let mut upper = vec![1e3, half_fsr_mhz];
    let mut scales = vec![1.0, 0.1];
    if !float_delta {
        lower[1] = 0.0;
        upper[1] = 0.0;
    }
    if fit_scale {
        initial.push(1.0);
        lower.push(0.1);
        upper.push(10.0);
        scales.push(1.0);
    }

    let problem = FitProblem::new(
        move |p: &[f64]| {
            let delta_at = TAU * p[1] * MHZ;
            let scale = if fit_scale { p[2] } else { 1.0 };
            match setup_c.model(p[0], delta_at, &freqs) {
                Ok(m) => m.iter().zip(&data).map(|(a, b)| scale * a - b).collect(),
                Err(_) => vec![f64::NAN; data.len()],
            }
        },
        initial,
    )
    .with_bounds(Bounds::new(lower, upper)?)
    .with_options(FitOptions { step_scales: scales, ..Default::default() });

    let mut fit = nls_minimize(&problem)?;
    fit.estimates[1] *= TAU * MHZ;
    fit.uncertainties[1] *= TAU * MHZ;

    let od = fit.estimates[0];
    let od_sigma = fit.uncertainties[0];
    let g_n = od_to_gn(od, setup.gamma, setup.res.fsr);
    // Secant propagation through the square root stays finite at od = 0.
    let g_n_sigma = if od_sigma.is_finite() {
        (od_to_gn(od + od_sigma, setup.gamma, setup.res.fsr)
            - od_to_gn((od - od_sigma).max(0.0), setup.gamma, setup.res.fsr))
            / 2.0
    } else {
        f64::INFINITY
    };
    Ok(CouplingFit { fit, od, od_sigma, g_n, g_n_sigma })
}

/// Minimum dip contrast for the open-loop OD fit: below an on-resonance
/// OD of about 0.03 the dip drowns in the baseline and the fit is refused.
pub const MIN_DIP_TRANSMISSION: f64 = 0.97;

/// Fit a saturated Lorentzian to an open-loop (single-pass) spectrum.
///
/// `sat` is a fixed input, not a fitted parameter: the model obeys the exact
/// reparameterization `(od0, w, s) -> (od0 (1+s)/(1+s'), w sqrt((1+s)/(1+s')), s')`,
/// so the saturation cannot be inferred from a single trace and has to come
/// from the known probe intensity. The reported `od0` is referred to the
/// supplied `sat`.
///
/// Parameters, in `estimates` order: `od0`, `gamma_fwhm_hz`, `sat` (echoed
/// with zero uncertainty), `center_hz`.
pub fn fit_od_single_pass(spec: &Spectrum, sat: f64) -> Result<FitResult> {
    let values = spec.values();
    let freqs = spec.freqs();
    let (i_min, &t_min) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    if t_min > MIN_DIP_TRANSMISSION {
        return Err(Error::InsufficientAbsorption(MIN_DIP_TRANSMISSION));
    }

    if !(sat >= 0.0) || !sat.is_finite() {
        return Err(Error::InvalidParams(format!("sat must be >= 0, got {sat}")));
    }

    let center0 = freqs[i_min];
    let od0 = ((1.0 + sat) * -t_min.max(1e-12).ln()).max(0.01);
    // Width from the half-transmission crossing points, with a fallback of
    // a tenth of the span for shallow dips.
    let t_half = (1.0 + t_min) / 2.0;
    let left = freqs[..i_min]
        .iter()
        .zip(&values[..i_min])
        .rev()
        .find(|(_, &v)| v >= t_half)
        .map(|(f, _)| *f);
    let right = freqs[i_min..]
        .iter()
        .zip(&values[i_min..])
        .find(|(_, &v)| v >= t_half)
        .map(|(f, _)| *f);
    let span = freqs[freqs.len() - 1] - freqs[0];
    let w = match (left, right) {
        (Some(l), Some(r)) => r - l,
        _ => span / 10.0,
    };
    // Invert T(w/2) = t_half for the Lorentzian width parameter.
    let ratio = od0 / (-t_half.ln()).max(1e-9) - 1.0 - sat;
    let gamma0 = if ratio > 0.0 { w / ratio.sqrt() } else { w };

    let data = values.to_vec();
    let fs = freqs.to_vec();
    // Scaled parameters: od0, width in MHz, center in MHz.
    let problem = FitProblem::new(
        move |p: &[f64]| {
            fs.iter()
                .zip(&data)
                .map(|(&f, &d)| saturated_lorentzian(f - p[2] * MHZ, p[0], p[1] * MHZ, sat) - d)
                .collect()
        },
        vec![od0, gamma0 / MHZ, center0 / MHZ],
    )
    .with_bounds(Bounds::new(
        vec![0.0, spec.step() / MHZ, freqs[0] / MHZ],
        vec![1e4, 10.0 * span / MHZ, freqs[freqs.len() - 1] / MHZ],
    )?)
    .with_options(FitOptions { step_scales: vec![1.0, 1.0, 0.1], ..Default::default() });

    let mut fit = nls_minimize(&problem)?;
    fit.estimates[1] *= MHZ;
    fit.uncertainties[1] *= MHZ;
    // Splice the fixed saturation back into the reported parameter set.
    fit.estimates.insert(2, sat);
    fit.uncertainties.insert(2, 0.0);
    fit.estimates[3] *= MHZ;
    fit.uncertainties[3] *= MHZ;
    Ok(fit)
}

//! Closed-form physics of the atom–ring system: transfer coefficients,
//! single-atom and ensemble transmission, the multimode ring transmission
//! formula, and the OD / g_N / cooperativity conversions.
//!
//! Unit conventions, used consistently across the crate:
//!
//! * `gamma`, `kappa0`, `kappa_ext`, `g_N`, `delta_at` are angular rates in
//!   rad/s. `gamma` is the atomic dipole (amplitude) decay; the population
//!   decays at `2*gamma`.
//! * `fsr` and every spectrum frequency axis are cyclic frequencies in Hz.
//!
//! The mixed convention is deliberate: the coupling conversion
//! `g_N^2 = 2 * fsr * gamma * od` only reproduces the known reference data
//! points when `g_N` and `gamma` are angular and `fsr` is in Hz.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const TAU: f64 = 2.0 * PI;

/// Geometry and loss rates of the fiber ring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonatorParams {
    /// Free spectral range, Hz.
    pub fsr: f64,
    /// Intrinsic loss rate, rad/s.
    pub kappa0: f64,
    /// In/out coupling rate, rad/s.
    pub kappa_ext: f64,
    /// Open fiber loop: fully overcoupled single-pass configuration
    /// (the `t1 -> 0` limit of the ring formula).
    pub loop_open: bool,
}

impl ResonatorParams {
    pub fn new(fsr: f64, kappa0: f64, kappa_ext: f64, loop_open: bool) -> Result<Self> {
        if !(fsr > 0.0) || !fsr.is_finite() {
            return Err(Error::InvalidParams(format!("fsr must be > 0, got {fsr}")));
        }
        if !(kappa0 >= 0.0) || !kappa0.is_finite() {
            return Err(Error::InvalidParams(format!("kappa0 must be >= 0, got {kappa0}")));
        }
        if !(kappa_ext >= 0.0) || !kappa_ext.is_finite() {
            return Err(Error::InvalidParams(format!(
                "kappa_ext must be >= 0, got {kappa_ext}"
            )));
        }
        let p = Self { fsr, kappa0, kappa_ext, loop_open };
        // Surface out-of-range loss ratios at construction time.
        p.coupling_coefficients()?;
        Ok(p)
    }

    /// Amplitude transfer coefficients of the ring.
    ///
    /// `t_rt = sqrt(1 - kappa0/(2 pi fsr))` is the single-round-trip
    /// transmission, `t1 = sqrt(1 - kappa_ext/(2 pi fsr))` the beamsplitter
    /// through-coefficient and `t2 = sqrt(1 - t1^2)` the cross-coefficient.
    pub fn coupling_coefficients(&self) -> Result<CouplingCoefficients> {
        let r0 = self.kappa0 / (TAU * self.fsr);
        let rext = self.kappa_ext / (TAU * self.fsr);
        if r0 >= 1.0 {
            return Err(Error::CouplingRatio { name: "kappa0", ratio: r0 });
        }
        if rext >= 1.0 {
            return Err(Error::CouplingRatio { name: "kappa_ext", ratio: rext });
        }
        let t1 = (1.0 - rext).sqrt();
        Ok(CouplingCoefficients {
            t_rt: (1.0 - r0).sqrt(),
            t1,
            t2: (1.0 - t1 * t1).sqrt(),
        })
    }

    /// Cavity linewidth (FWHM) in Hz, `(kappa0 + kappa_ext)/pi`.
    pub fn fwhm_hz(&self) -> f64 {
        (self.kappa0 + self.kappa_ext) / PI
    }

    /// Finesse: free spectral range over linewidth.
    pub fn finesse(&self) -> f64 {
        self.fsr / self.fwhm_hz()
    }
}

/// Field-amplitude transfer coefficients derived from the resonator rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingCoefficients {
    pub t_rt: f64,
    pub t1: f64,
    pub t2: f64,
}

/// Atomic side of the coupled system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleParams {
    /// Dipole (amplitude) decay rate, rad/s. Population decays at `2*gamma`.
    pub gamma: f64,
    /// Fraction of spontaneous emission into the fiber mode, in [0, 1).
    pub beta: f64,
    /// Effective atom number, continuous and >= 0.
    pub n_atoms: f64,
    /// Atom–resonator detuning `omega_at - omega_res`, rad/s.
    pub delta_at: f64,
}

impl EnsembleParams {
    pub fn new(gamma: f64, beta: f64, n_atoms: f64, delta_at: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParams(format!("gamma must be > 0, got {gamma}")));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidParams(format!("beta must be in [0, 1), got {beta}")));
        }
        if !(n_atoms >= 0.0) || !n_atoms.is_finite() {
            return Err(Error::InvalidParams(format!("n_atoms must be >= 0, got {n_atoms}")));
        }
        if !delta_at.is_finite() {
            return Err(Error::InvalidParams(format!("delta_at must be finite, got {delta_at}")));
        }
        Ok(Self { gamma, beta, n_atoms, delta_at })
    }

    /// Ensemble with the atom number chosen so the on-resonance single-pass
    /// optical depth equals `od`.
    pub fn with_od(gamma: f64, beta: f64, od: f64, delta_at: f64) -> Result<Self> {
        if !(od >= 0.0) || !od.is_finite() {
            return Err(Error::InvalidParams(format!("od must be >= 0, got {od}")));
        }
        let probe = Self::new(gamma, beta, 0.0, delta_at)?;
        let od1 = probe.od_per_atom();
        let n_atoms = if od == 0.0 { 0.0 } else { od / od1 };
        Self::new(gamma, beta, n_atoms, delta_at)
    }

    /// Exact on-resonance optical depth of a single atom,
    /// `-ln|t_at(0)|^2 = 2 ln((1+beta)/(1-beta))`, which is `4*beta + O(beta^3)`.
    pub fn od_per_atom(&self) -> f64 {
        2.0 * ((1.0 + self.beta) / (1.0 - self.beta)).ln()
    }

    /// On-resonance single-pass optical depth of the ensemble,
    /// `-n_atoms * ln|t_at(0)|^2`.
    pub fn od(&self) -> f64 {
        self.n_atoms * self.od_per_atom()
    }
}

/// Amplitude transmission through a single fiber-coupled atom,
/// `t_at = (gamma - beta gamma - i delta) / (gamma + beta gamma - i delta)`
/// with `delta = omega_at - omega` in rad/s. `|t_at| <= 1` for all real delta.
pub fn atom_transmission(delta: f64, ens: &EnsembleParams) -> Complex64 {
    let num = Complex64::new(ens.gamma * (1.0 - ens.beta), -delta);
    let den = Complex64::new(ens.gamma * (1.0 + ens.beta), -delta);
    num / den
}

/// `t_at(delta)^N` on the principal log branch, continuous in `N`.
///
/// `t_at` always has positive real part, so the principal branch never
/// crosses the cut.
pub fn ensemble_transmission(delta: f64, ens: &EnsembleParams) -> Complex64 {
    if ens.n_atoms == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    (atom_transmission(delta, ens).ln() * ens.n_atoms).exp()
}

/// Power transmission through the coupling fiber at probe detuning
/// `omega_rel` (Hz) from the central empty-cavity resonance.
///
/// Closed loop: `T = |(e^{i kL} t_rt t_at^N - t1) / (e^{i kL} t_rt t_at^N t1 - 1)|^2`.
/// Open loop (`loop_open`): the `t1 -> 0` limit, `T = |e^{i kL} t_rt t_at^N|^2`.
///
/// Axis registration: an empty-cavity resonance sits at `omega_rel = 0`; the
/// atomic detuning seen by the probe is `delta = delta_at - 2 pi omega_rel`.
/// The round-trip phase advances as `kL = -2 pi omega_rel / fsr`; the sign is
/// fixed by requiring dressed modes to repel from the atomic line (outward
/// shifts of the higher-order resonances).
pub fn ring_transmission(omega_rel: f64, res: &ResonatorParams, ens: &EnsembleParams) -> Result<f64> {
    let c = res.coupling_coefficients()?;
    ring_transmission_with(omega_rel, res.fsr, &c, res.loop_open, ens)
}

/// Same as [`ring_transmission`], with precomputed coupling coefficients
/// (used by grid synthesis to avoid re-deriving them per point).
pub fn ring_transmission_with(
    omega_rel: f64,
    fsr: f64,
    coeff: &CouplingCoefficients,
    loop_open: bool,
    ens: &EnsembleParams,
) -> Result<f64> {
    let delta = ens.delta_at - TAU * omega_rel;
    let t_n = ensemble_transmission(delta, ens);
    let phase = Complex64::from_polar(1.0, -TAU * omega_rel / fsr);
    let loop_amp = phase * coeff.t_rt * t_n;
    let t1 = if loop_open { 0.0 } else { coeff.t1 };
    let den = loop_amp * t1 - 1.0;
    if den.norm() < 1e-14 {
        return Err(Error::DegenerateRing);
    }
    let num = loop_amp - t1;
    Ok((num / den).norm_sqr())
}

/// Collective coupling rate from the single-pass optical depth:
/// `g_N = sqrt(2 * fsr * gamma * od)` (rad/s), with `fsr` in Hz and
/// `gamma` in rad/s.
pub fn od_to_gn(od: f64, gamma: f64, fsr: f64) -> f64 {
    (2.0 * fsr * gamma * od).sqrt()
}

/// Inverse of [`od_to_gn`]: `od = g_N^2 / (2 * fsr * gamma)`.
pub fn gn_to_od(g_n: f64, gamma: f64, fsr: f64) -> f64 {
    g_n * g_n / (2.0 * fsr * gamma)
}

/// Collective cooperativity `C_N = finesse * od / pi`.
pub fn cooperativity(od: f64, finesse: f64) -> f64 {
    finesse * od / PI
}

/// Saturated-Lorentzian single-pass transmission,
/// `T(delta) = exp(-od0 / (1 + sat + (2 delta / gamma_fwhm)^2))`
/// with `delta` and `gamma_fwhm` in Hz.
pub fn saturated_lorentzian(delta_hz: f64, od0: f64, gamma_fwhm_hz: f64, sat: f64) -> f64 {
    let x = 2.0 * delta_hz / gamma_fwhm_hz;
    (-od0 / (1.0 + sat + x * x)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FSR: f64 = 7.1e6;
    const KAPPA0: f64 = TAU * 0.39e6;
    const KAPPA_EXT: f64 = TAU * 0.21e6;
    const GAMMA: f64 = TAU * 2.61e6;

    fn paper_resonator() -> ResonatorParams {
        ResonatorParams::new(FSR, KAPPA0, KAPPA_EXT, false).unwrap()
    }

    #[test]
    fn lossless_coefficients_are_identity() {
        let r = ResonatorParams::new(FSR, 0.0, 0.0, false).unwrap();
        let c = r.coupling_coefficients().unwrap();
        assert_eq!(c.t_rt, 1.0);
        assert_eq!(c.t1, 1.0);
        assert_eq!(c.t2, 0.0);
    }

    #[test]
    fn paper_coefficients() {
        // Direct evaluation of the square-root formulas at
        // kappa0/2pi = 0.39 MHz, kappa_ext/2pi = 0.21 MHz, fsr = 7.1 MHz.
        let c = paper_resonator().coupling_coefficients().unwrap();
        assert!((c.t_rt - 0.972_147_325_530_040_9).abs() < 1e-12);
        assert!((c.t1 - 0.985_100_266_577_604_6).abs() < 1e-12);
        assert!((c.t2 * c.t2 + c.t1 * c.t1 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn critical_coupling_condition() {
        let c = paper_resonator().coupling_coefficients().unwrap();
        // kappa_ext = 2 pi fsr (1 - t_rt^2) with the same kappa0 makes t1 = t_rt.
        let kappa_ext = TAU * FSR * (1.0 - c.t_rt * c.t_rt);
        let r = ResonatorParams::new(FSR, KAPPA0, kappa_ext, false).unwrap();
        let c2 = r.coupling_coefficients().unwrap();
        assert!((c2.t1 - c2.t_rt).abs() < 1e-14);
    }

    #[test]
    fn out_of_range_ratio_is_domain_error() {
        let err = ResonatorParams::new(FSR, TAU * 7.2e6, 0.0, false).unwrap_err();
        assert!(matches!(err, Error::CouplingRatio { name: "kappa0", .. }));
        let err = ResonatorParams::new(FSR, 0.0, TAU * 7.1e6, false).unwrap_err();
        assert!(matches!(err, Error::CouplingRatio { name: "kappa_ext", .. }));
    }

    #[test]
    fn decoupled_atom_is_transparent() {
        let ens = EnsembleParams::new(GAMMA, 0.0, 1.0, 0.0).unwrap();
        for delta in [-10.0 * GAMMA, -GAMMA, 0.0, 0.3 * GAMMA, 25.0 * GAMMA] {
            let t = atom_transmission(delta, &ens);
            assert!((t - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn on_resonance_atom_transmission_is_real() {
        let beta = 0.12;
        let ens = EnsembleParams::new(GAMMA, beta, 1.0, 0.0).unwrap();
        let t = atom_transmission(0.0, &ens);
        assert!((t.re - (1.0 - beta) / (1.0 + beta)).abs() < 1e-15);
        assert_eq!(t.im, 0.0);
    }

    #[test]
    fn single_atom_od_matches_series_expansion() {
        // -ln|t_at|^2 = 4 (beta + beta^3/3 + beta^5/5) + O(beta^7)
        let beta = 0.0055;
        let ens = EnsembleParams::new(GAMMA, beta, 1.0, 0.0).unwrap();
        let od1 = -atom_transmission(0.0, &ens).norm_sqr().ln();
        let series = 4.0 * (beta + beta.powi(3) / 3.0 + beta.powi(5) / 5.0);
        assert!((od1 - series).abs() < 1e-14);
        assert!((od1 - 0.022).abs() < 3e-7); // od1 = 4 beta to leading order
        assert!((ens.od_per_atom() - od1).abs() < 1e-15);
    }

    #[test]
    fn atom_transmission_is_passive() {
        let ens = EnsembleParams::new(GAMMA, 0.3, 1.0, 0.0).unwrap();
        for delta in [-5.0 * GAMMA, -0.1 * GAMMA, 0.0, 2.0 * GAMMA, 40.0 * GAMMA] {
            assert!(atom_transmission(delta, &ens).norm() <= 1.0 + 1e-15);
        }
    }

    #[test]
    fn ensemble_transmission_limits() {
        let ens0 = EnsembleParams::new(GAMMA, 0.0055, 0.0, 0.0).unwrap();
        assert_eq!(ensemble_transmission(0.7 * GAMMA, &ens0), Complex64::new(1.0, 0.0));

        let ens1 = EnsembleParams::new(GAMMA, 0.0055, 1.0, 0.0).unwrap();
        let d = -1.3 * GAMMA;
        assert!((ensemble_transmission(d, &ens1) - atom_transmission(d, &ens1)).norm() < 1e-14);
    }

    #[test]
    fn ensemble_od_logarithm_identity() {
        let ens = EnsembleParams::with_od(GAMMA, 0.0055, 12.7, 0.0).unwrap();
        let on_res = ensemble_transmission(0.0, &ens).norm_sqr();
        let od = ens.od();
        assert!((on_res - (-od).exp()).abs() / (-od).exp() < 1e-12);
        assert!((od - 12.7).abs() < 1e-12);
    }

    #[test]
    fn critical_coupling_gives_zero_on_resonance() {
        let r = ResonatorParams::new(FSR, KAPPA0, KAPPA0, false).unwrap();
        let ens = EnsembleParams::new(GAMMA, 0.0055, 0.0, 0.0).unwrap();
        let t = ring_transmission(0.0, &r, &ens).unwrap();
        assert!(t < 1e-28);
    }

    #[test]
    fn empty_ring_on_resonance_minimum() {
        // Matches the truncated geometric round-trip series (see the series
        // oracle in the acceptance suite); frozen from direct evaluation.
        let ens = EnsembleParams::new(GAMMA, 0.0055, 0.0, 0.0).unwrap();
        let t = ring_transmission(0.0, &paper_resonator(), &ens).unwrap();
        assert!((t - 0.093_602_661_014_18).abs() < 1e-12);
    }

    #[test]
    fn open_loop_dense_region() {
        // OD = 12.7 suppresses the open-loop transmission below e^-10 around
        // resonance (out to ~±1.37 MHz) and below 0.5 over the ±10 MHz span.
        let r = ResonatorParams::new(FSR, KAPPA0, KAPPA_EXT, true).unwrap();
        let ens = EnsembleParams::with_od(GAMMA, 0.0055, 12.7, 0.0).unwrap();
        for f in [-1.3e6, -0.5e6, 0.0, 0.8e6, 1.3e6] {
            assert!(ring_transmission(f, &r, &ens).unwrap() < (-10.0f64).exp());
        }
        let mut max = 0.0f64;
        for i in 0..=400 {
            let f = -10e6 + 20e6 * i as f64 / 400.0;
            max = max.max(ring_transmission(f, &r, &ens).unwrap());
        }
        assert!(max < 0.5, "max open-loop T over ±10 MHz = {max}");
    }

    #[test]
    fn degenerate_ring_is_an_error() {
        let r = ResonatorParams::new(FSR, 0.0, 0.0, false).unwrap();
        let ens = EnsembleParams::new(GAMMA, 0.0, 0.0, 0.0).unwrap();
        assert!(matches!(ring_transmission(0.0, &r, &ens), Err(Error::DegenerateRing)));
        // Off resonance the lossless ring is all-pass.
        let t = ring_transmission(0.31 * FSR, &r, &ens).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn od_gn_conversions() {
        assert_eq!(od_to_gn(0.0, GAMMA, FSR), 0.0);
        // OD = 12.7 -> g_N/2pi = 8.655 MHz (reported as 8.7 MHz).
        let gn = od_to_gn(12.7, GAMMA, FSR);
        assert!((gn / TAU - 8.655_184_940_893_6e6).abs() < 1.0);
        // OD = 645 * 0.022 -> g_N/2pi = 9.149 MHz (reported as 9.2 MHz),
        // about 1.3 fsr.
        let gn2 = od_to_gn(645.0 * 0.022, GAMMA, FSR);
        assert!((gn2 / TAU - 9.148_832_772_948e6).abs() < 1.0);
        assert!((gn2 / TAU / FSR - 1.3).abs() < 0.02);
        // Exact round trip.
        for od in [1e-6, 0.022, 1.0, 12.7, 100.0] {
            assert!((gn_to_od(od_to_gn(od, GAMMA, FSR), GAMMA, FSR) - od).abs() / od < 1e-12);
        }
    }

    #[test]
    fn finesse_and_cooperativity() {
        let r = paper_resonator();
        // fwhm = (kappa0 + kappa_ext)/pi = 1.2 MHz, finesse = 7.1/1.2.
        assert!((r.fwhm_hz() - 1.2e6).abs() < 1e-6);
        assert!((r.finesse() - 5.916_666_666_666_667).abs() < 1e-12);
        assert_eq!(cooperativity(0.0, r.finesse()), 0.0);
        assert!((cooperativity(12.7, r.finesse()) - 23.918_335_364_327).abs() < 1e-9);
    }

    #[test]
    fn saturated_lorentzian_limits() {
        assert!((saturated_lorentzian(1e14, 12.7, 5.22e6, 0.0) - 1.0).abs() < 1e-9);
        assert_eq!(saturated_lorentzian(0.0, 12.7, 5.22e6, 0.0), (-12.7f64).exp());
        // Wings at ±10 MHz sit near e^(-0.81).
        let t = saturated_lorentzian(10e6, 12.7, 5.22e6, 0.0);
        assert!((t - 0.444_875_271_616_42).abs() < 1e-12);
        // Strong saturation washes out the dip.
        assert!(saturated_lorentzian(0.0, 12.7, 5.22e6, 1e6) > 0.9999);
    }
}

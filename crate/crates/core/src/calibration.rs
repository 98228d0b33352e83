//! Conversions between optical depth, effective atom number, coupling
//! strength and cooperativity, plus the threshold to multimode strong
//! coupling. Uncertainty propagation is first order throughout.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::TAU;

/// A value with a one-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub value: f64,
    pub sigma: f64,
}

impl Measurement {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, sigma: 0.0 }
    }

    /// Relative uncertainty, 0 for exact values.
    pub fn rel(&self) -> f64 {
        if self.value == 0.0 {
            0.0
        } else {
            self.sigma / self.value.abs()
        }
    }
}

impl fmt::Display for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ± {}", self.value, self.sigma)
    }
}

/// One calibration point: a measured OD paired with the atom number fitted
/// from the correlation data taken at that OD.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationRecord {
    pub od: Measurement,
    pub n_eff: Measurement,
}

/// Reference values reported in the literature for the 30 m ring setup this
/// toolkit models; printed alongside computed values for comparison, never
/// asserted.
pub const LITERATURE_OD1: Measurement = Measurement { value: 0.022, sigma: 0.005 };
pub const LITERATURE_C1: f64 = 0.26;
pub const LITERATURE_MMSC_THRESHOLD_ATOMS: Measurement = Measurement { value: 294.0, sigma: 34.0 };

/// Per-atom optical depth estimates from a set of calibration records.
#[derive(Debug, Clone, Copy)]
pub struct OdPerAtom {
    /// Inverse-variance-weighted mean of the od/n ratios (falls back to the
    /// unweighted mean when any record lacks uncertainties).
    pub weighted: Measurement,
    pub unweighted: Measurement,
}

/// Average optical depth per atom over the records.
pub fn od_per_atom(records: &[CalibrationRecord]) -> Result<OdPerAtom> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let ratios: Vec<Measurement> = records
        .iter()
        .map(|r| {
            if !(r.od.value > 0.0) || !(r.n_eff.value > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "calibration record needs od > 0 and n_eff > 0, got od {} n {}",
                    r.od.value, r.n_eff.value
                )));
            }
            let value = r.od.value / r.n_eff.value;
            let rel = (r.od.rel().powi(2) + r.n_eff.rel().powi(2)).sqrt();
            Ok(Measurement::new(value, value * rel))
        })
        .collect::<Result<_>>()?;

    let n = ratios.len() as f64;
    let mean = ratios.iter().map(|r| r.value).sum::<f64>() / n;
    let sem = if ratios.len() > 1 {
        let var =
            ratios.iter().map(|r| (r.value - mean) * (r.value - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        ratios[0].sigma
    };
    let unweighted = Measurement::new(mean, sem);

    let weighted = if ratios.iter().any(|r| r.sigma <= 0.0) {
        unweighted
    } else {
        let wsum: f64 = ratios.iter().map(|r| 1.0 / (r.sigma * r.sigma)).sum();
        let value = ratios.iter().map(|r| r.value / (r.sigma * r.sigma)).sum::<f64>() / wsum;
        Measurement::new(value, (1.0 / wsum).sqrt())
    };
    Ok(OdPerAtom { weighted, unweighted })
}

/// Effective atom number for a measured total OD, `n = od / od1`.
pub fn atoms_from_od(od: Measurement, od1: Measurement) -> Result<Measurement> {
    if !(od1.value > 0.0) {
        return Err(Error::InvalidParams(format!("od1 must be > 0, got {}", od1.value)));
    }
    let value = od.value / od1.value;
    let rel = (od.rel().powi(2) + od1.rel().powi(2)).sqrt();
    Ok(Measurement::new(value, value * rel))
}

/// Optical depth at which the collective coupling reaches one free spectral
/// range, `g_N = 2 pi fsr`: `od = 2 pi^2 fsr / gamma`.
pub fn mmsc_threshold_od(gamma: f64, fsr: f64) -> f64 {
    let g_target = TAU * fsr;
    g_target * g_target / (2.0 * fsr * gamma)
}

/// Atom number at the multimode strong coupling threshold,
/// `n = mmsc_threshold_od / od1`, with the uncertainty propagated from od1.
pub fn mmsc_threshold(od1: Measurement, gamma: f64, fsr: f64) -> Result<Measurement> {
    if !(od1.value > 0.0) {
        return Err(Error::InvalidParams(format!("od1 must be > 0, got {}", od1.value)));
    }
    let od_th = mmsc_threshold_od(gamma, fsr);
    let value = od_th / od1.value;
    Ok(Measurement::new(value, value * od1.rel()))
}

/// Single-atom cooperativity estimates `C1 = g1^2 / (2 kappa gamma)` with
/// `g1^2 = 2 fsr gamma od1`, reported for both readings of the cavity decay.
#[derive(Debug, Clone, Copy)]
pub struct CooperativityEstimate {
    /// `kappa = kappa0` (intrinsic losses only).
    pub intrinsic: Measurement,
    /// `kappa = kappa0 + kappa_ext` (total linewidth).
    pub total: Measurement,
}

/// Both single-atom cooperativity conventions. Simplifies to
/// `C1 = fsr * od1 / kappa`.
pub fn intrinsic_cooperativity(
    od1: Measurement,
    kappa0: f64,
    kappa_ext: f64,
    fsr: f64,
    gamma: f64,
) -> Result<CooperativityEstimate> {
    if !(od1.value >= 0.0) || !(kappa0 > 0.0) || !(kappa_ext >= 0.0) || !(fsr > 0.0) || !(gamma > 0.0)
    {
        return Err(Error::InvalidParams("cooperativity inputs must be positive".into()));
    }
    let g1_sq = 2.0 * fsr * gamma * od1.value;
    let c = |kappa: f64| {
        let value = g1_sq / (2.0 * kappa * gamma);
        Measurement::new(value, value * od1.rel())
    };
    Ok(CooperativityEstimate { intrinsic: c(kappa0), total: c(kappa0 + kappa_ext) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{cooperativity, od_to_gn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FSR: f64 = 7.1e6;
    const GAMMA: f64 = TAU * 2.61e6;

    fn paper_records() -> Vec<CalibrationRecord> {
        vec![
            CalibrationRecord {
                od: Measurement::new(0.06, 0.01),
                n_eff: Measurement::new(2.7, 0.3),
            },
            CalibrationRecord {
                od: Measurement::new(0.11, 0.02),
                n_eff: Measurement::new(4.3, 0.3),
            },
            CalibrationRecord {
                od: Measurement::new(0.20, 0.01),
                n_eff: Measurement::new(9.5, 0.5),
            },
        ]
    }

    #[test]
    fn single_record_returns_its_ratio() {
        let recs = [CalibrationRecord {
            od: Measurement::new(0.022, 0.002),
            n_eff: Measurement::exact(1.0),
        }];
        let od1 = od_per_atom(&recs).unwrap();
        assert!((od1.weighted.value - 0.022).abs() < 1e-15);
        assert!((od1.unweighted.value - 0.022).abs() < 1e-15);
    }

    #[test]
    fn reference_records_give_od1_near_literature() {
        let od1 = od_per_atom(&paper_records()).unwrap();
        assert!((od1.weighted.value - 0.022).abs() < 0.003, "weighted {}", od1.weighted);
        assert!((od1.unweighted.value - 0.022).abs() < 0.003, "unweighted {}", od1.unweighted);
    }

    #[test]
    fn od_scaling_is_homogeneous() {
        let c = 3.7;
        let scaled: Vec<CalibrationRecord> = paper_records()
            .into_iter()
            .map(|r| CalibrationRecord {
                od: Measurement::new(c * r.od.value, c * r.od.sigma),
                n_eff: r.n_eff,
            })
            .collect();
        let base = od_per_atom(&paper_records()).unwrap();
        let big = od_per_atom(&scaled).unwrap();
        assert!((big.weighted.value - c * base.weighted.value).abs() < 1e-12);
        assert!((big.unweighted.value - c * base.unweighted.value).abs() < 1e-12);
    }

    #[test]
    fn empty_records_error() {
        assert!(matches!(od_per_atom(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn atoms_from_od_examples() {
        let od1 = Measurement::exact(0.022);
        let n = atoms_from_od(Measurement::exact(0.022), od1).unwrap();
        assert!((n.value - 1.0).abs() < 1e-15);
        let n = atoms_from_od(Measurement::exact(14.2), od1).unwrap();
        assert!((n.value - 645.45).abs() < 0.05);
        let n = atoms_from_od(Measurement::exact(12.7), od1).unwrap();
        assert!((n.value - 577.27).abs() < 0.05);
    }

    #[test]
    fn atoms_from_od_round_trip_is_identity() {
        let od1 = Measurement::exact(0.0217);
        for n in [1.0, 2.7, 9.5, 294.0, 645.0] {
            let od = Measurement::exact(n * od1.value);
            let back = atoms_from_od(od, od1).unwrap();
            assert!((back.value - n).abs() / n < 1e-12);
        }
    }

    #[test]
    fn threshold_examples() {
        // od at threshold satisfies od_to_gn(od) = 2 pi fsr.
        let od_th = mmsc_threshold_od(GAMMA, FSR);
        assert!((od_to_gn(od_th, GAMMA, FSR) - TAU * FSR).abs() / (TAU * FSR) < 1e-12);
        assert!((od_th - 8.546).abs() < 1e-3);

        let n = mmsc_threshold(Measurement::new(0.022, 0.005), GAMMA, FSR).unwrap();
        assert!((n.value - 388.46).abs() < 0.05, "threshold {}", n);

        // Inverse proportionality in od1.
        let half = mmsc_threshold(Measurement::exact(0.044), GAMMA, FSR).unwrap();
        assert!((half.value - n.value / 2.0).abs() < 1e-9);
    }

    #[test]
    fn threshold_identity_via_gn() {
        let od1 = Measurement::exact(0.022);
        let n = mmsc_threshold(od1, GAMMA, FSR).unwrap();
        let gn = od_to_gn(n.value * od1.value, GAMMA, FSR);
        assert!((gn - TAU * FSR).abs() / (TAU * FSR) < 1e-9);
    }

    #[test]
    fn cooperativity_estimates() {
        let od1 = Measurement::new(0.022, 0.005);
        let c = intrinsic_cooperativity(od1, TAU * 0.39e6, TAU * 0.21e6, FSR, GAMMA).unwrap();
        assert!((c.intrinsic.value - 0.063_743_6).abs() < 1e-6, "{}", c.intrinsic);
        assert!((c.total.value - 0.041_433_3).abs() < 1e-6, "{}", c.total);
        // Zero OD per atom means zero cooperativity.
        let z = intrinsic_cooperativity(Measurement::exact(0.0), TAU * 0.39e6, 0.0, FSR, GAMMA)
            .unwrap();
        assert_eq!(z.intrinsic.value, 0.0);
    }

    #[test]
    fn collective_cooperativity_is_linear_in_od() {
        // C_N / N = C_1 for uniform ensembles.
        let finesse = 5.9166;
        let od1 = 0.022;
        let n = 37.0;
        let c1 = cooperativity(od1, finesse);
        let cn = cooperativity(n * od1, finesse);
        assert!((cn / n - c1).abs() < 1e-12);
    }

    #[test]
    fn first_order_sigmas_match_monte_carlo() {
        // 1e4-sample Monte-Carlo propagation oracle, 10% relative on sigma.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut gauss = move || {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let records = paper_records();
        let analytic = od_per_atom(&records).unwrap().weighted;
        let trials = 10_000;
        let mut samples = Vec::with_capacity(trials);
        for _ in 0..trials {
            let jittered: Vec<CalibrationRecord> = records
                .iter()
                .map(|r| CalibrationRecord {
                    od: Measurement::new(r.od.value + r.od.sigma * gauss(), r.od.sigma),
                    n_eff: Measurement::new(r.n_eff.value + r.n_eff.sigma * gauss(), r.n_eff.sigma),
                })
                .collect();
            samples.push(od_per_atom(&jittered).unwrap().weighted.value);
        }
        let mean = samples.iter().sum::<f64>() / trials as f64;
        let var =
            samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (trials - 1) as f64;
        let mc_sigma = var.sqrt();
        assert!(
            (mc_sigma - analytic.sigma).abs() / mc_sigma < 0.10,
            "MC sigma {mc_sigma} vs first-order {}",
            analytic.sigma
        );

        // Same oracle for the threshold conversion.
        let od1 = Measurement::new(0.022, 0.003);
        let analytic_th = mmsc_threshold(od1, GAMMA, FSR).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut gauss = move || {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let mut samples = Vec::with_capacity(trials);
        for _ in 0..trials {
            let od1_s = od1.value + od1.sigma * gauss();
            if od1_s <= 0.0 {
                continue;
            }
            samples.push(mmsc_threshold_od(GAMMA, FSR) / od1_s);
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let mc_sigma = var.sqrt();
        // The ratio is mildly nonlinear in od1 at 14% relative error; the
        // first-order sigma still has to land within 10% of the sampled one.
        assert!(
            (mc_sigma - analytic_th.sigma).abs() / mc_sigma < 0.10,
            "MC sigma {mc_sigma} vs first-order {}",
            analytic_th.sigma
        );
    }
}

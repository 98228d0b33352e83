//! Property tests for the model invariants: passivity, periodicity,
//! decoupling, symmetry, conversion round trips and alignment equivariance.

use proptest::prelude::*;

use mmsc_core::correlations::{g2_ensemble, DriveParams, EnsembleG2Params};
use mmsc_core::model::{
    gn_to_od, od_to_gn, ring_transmission, EnsembleParams, ResonatorParams, TAU,
};
use mmsc_core::spectra::{recenter, synthesize, RecenterConfig};
use mmsc_core::spectrum::{frequency_grid, Spectrum, SpectrumMeta};

const FSR: f64 = 7.1e6;
const GAMMA: f64 = TAU * 2.61e6;

fn valid_resonator() -> impl Strategy<Value = ResonatorParams> {
    (1e6..20e6f64, 0.01..0.8f64, 0.0..0.8f64, any::<bool>()).prop_map(|(fsr, r0, rext, open)| {
        ResonatorParams::new(fsr, TAU * fsr * r0, TAU * fsr * rext, open).unwrap()
    })
}

fn valid_ensemble() -> impl Strategy<Value = EnsembleParams> {
    (0.5e6..5e6f64, 0.0..0.1f64, 0.0..800.0f64, -2e6..2e6f64).prop_map(
        |(gamma_mhz, beta, n, delta_khz)| {
            EnsembleParams::new(TAU * gamma_mhz, beta, n, TAU * delta_khz).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn transmission_is_passive(
        res in valid_resonator(),
        ens in valid_ensemble(),
        f in -50e6..50e6f64,
    ) {
        let t = ring_transmission(f, &res, &ens).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&t), "T = {t}");
    }

    #[test]
    fn empty_ring_is_periodic_in_the_fsr(
        res in valid_resonator(),
        f in -10e6..10e6f64,
        k in -3i32..=3,
    ) {
        let ens = EnsembleParams::new(GAMMA, 0.0055, 0.0, 0.0).unwrap();
        let a = ring_transmission(f, &res, &ens).unwrap();
        let b = ring_transmission(f + k as f64 * res.fsr, &res, &ens).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "T({f}) = {a} vs shifted {b}");
    }

    #[test]
    fn decoupled_atoms_leave_the_empty_spectrum(
        res in valid_resonator(),
        f in -20e6..20e6f64,
        n in 0.0..500.0f64,
    ) {
        let empty = EnsembleParams::new(GAMMA, 0.0055, 0.0, 0.0).unwrap();
        let beta_zero = EnsembleParams::new(GAMMA, 0.0, n, 0.0).unwrap();
        let t0 = ring_transmission(f, &res, &empty).unwrap();
        prop_assert_eq!(ring_transmission(f, &res, &beta_zero).unwrap(), t0);
    }

    #[test]
    fn on_resonance_spectrum_is_symmetric(
        res in valid_resonator(),
        n in 0.0..800.0f64,
        f in 0.0..20e6f64,
    ) {
        let ens = EnsembleParams::new(GAMMA, 0.0055, n, 0.0).unwrap();
        let plus = ring_transmission(f, &res, &ens).unwrap();
        let minus = ring_transmission(-f, &res, &ens).unwrap();
        prop_assert!((plus - minus).abs() < 1e-12, "T(+f) = {plus}, T(-f) = {minus}");
    }

    #[test]
    fn od_gn_round_trip(od in 0.0..100.0f64, gamma_mhz in 0.5..5.0f64, fsr in 1e6..20e6f64) {
        let gamma = TAU * gamma_mhz * 1e6;
        let back = gn_to_od(od_to_gn(od, gamma, fsr), gamma, fsr);
        prop_assert!((back - od).abs() <= 1e-12 * od.max(1.0));
    }

    #[test]
    fn open_loop_on_resonance_od_identity(
        beta in 0.001..0.1f64,
        n in 0.0..500.0f64,
    ) {
        // With no round-trip loss the open-loop on-resonance transmission is
        // exactly exp(-od).
        let res = ResonatorParams::new(FSR, 0.0, TAU * 0.2e6, true).unwrap();
        let ens = EnsembleParams::new(GAMMA, beta, n, 0.0).unwrap();
        let t = ring_transmission(0.0, &res, &ens).unwrap();
        prop_assert!(((-t.ln()) - ens.od()).abs() < 1e-9 * ens.od().max(1.0));
    }
}

proptest! {
    // Spectrum-level properties run on full grids, so fewer cases.
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn synthesized_spectra_decouple_pointwise(res in valid_resonator()) {
        let grid = frequency_grid(5.0 * res.fsr, 501).unwrap();
        let empty = EnsembleParams::new(GAMMA, 0.0055, 0.0, 0.0).unwrap();
        let none = EnsembleParams::new(GAMMA, 0.0, 123.0, TAU * 50e3).unwrap();
        let a = synthesize(&grid, &res, &empty).unwrap();
        let b = synthesize(&grid, &res, &none).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }

    #[test]
    fn recentering_is_shift_equivariant(shift_khz in -800.0..800.0f64) {
        let res = ResonatorParams::new(FSR, TAU * 0.39e6, TAU * 0.21e6, false).unwrap();
        let ens = EnsembleParams::new(GAMMA, 0.0055, 0.0, 0.0).unwrap();
        let grid = frequency_grid(5.0 * FSR, 1421).unwrap(); // 25 kHz step
        let reference = synthesize(&grid, &res, &ens).unwrap();
        let shift = shift_khz * 1e3;

        let shifted_grid: Vec<f64> = grid.iter().map(|f| f - shift).collect();
        let moved = synthesize(&shifted_grid, &res, &ens).unwrap();
        let trace = Spectrum::new(grid.clone(), moved.values().to_vec(), SpectrumMeta::default())
            .unwrap();

        let cfg = RecenterConfig::for_fsr(FSR);
        let (_, base) = recenter(std::slice::from_ref(&reference), &reference, &cfg).unwrap();
        let (_, rep) = recenter(&[trace], &reference, &cfg).unwrap();
        let expect = base.alignments[0].offset_hz + shift;
        prop_assert!(
            (rep.alignments[0].offset_hz - expect).abs() <= reference.step(),
            "offset {} for shift {shift}",
            rep.alignments[0].offset_hz
        );
    }

    #[test]
    fn ensemble_g2_normalization_ends_at_one(
        n in 1.0..20.0f64,
        mu in 0.05..1.0f64,
        mu0 in 0.05..1.0f64,
        rabi_over_gamma in 0.5..5.0f64,
    ) {
        let drive = DriveParams::resonant(rabi_over_gamma * GAMMA, GAMMA).unwrap();
        let grid: Vec<f64> = (0..401).map(|i| 10.5e-6 * i as f64 / 400.0).collect();
        let ens = EnsembleG2Params::new(n, mu0, mu, (0.0, 1.0), (0.0, 1.0)).unwrap();
        let trace = g2_ensemble(&grid, &drive, &ens).unwrap();
        prop_assert_eq!(trace.values()[trace.len() - 1], 1.0);
        prop_assert!(trace.values().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}

use mmsc_core::correlations::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

fn main() {
    let gamma = 2.0 * std::f64::consts::PI * 2.61e6;
    let grid: Vec<f64> = (0..2001).map(|i| 10e-6 * i as f64 / 2000.0).collect();
    let drive = DriveParams::resonant(2.0 * gamma, gamma).unwrap();
    let n_true = 9.5f64;
    let ens = EnsembleG2Params::new(n_true, 0.3, 0.6, (0.0, 1.0), (0.0, 1.0)).unwrap();
    let clean = g2_ensemble(&grid, &drive, &ens).unwrap();
    let counts = 100_000.0;
    let cfg = AtomNumberFitConfig {
        gamma,
        drive_detuning: 0.0,
        rabi_bounds: (0.5 * gamma, 10.0 * gamma),
        rabi_init: 1.5 * gamma,
        n_bounds: (0.0, 100.0),
        n_init: 3.0,
        mu0_bounds: (0.285, 0.315),
        mu_bounds: (0.57, 0.63),
    };
    for trial in [1u64, 4, 0, 2] {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + trial * 131 + n_true as u64);
        let values: Vec<f64> = clean.values().iter().map(|&v| {
            let mean = v * counts;
            if mean <= 0.0 { return 0.0; }
            let d: f64 = rand_distr::Poisson::new(mean).unwrap().sample(&mut rng);
            d / counts
        }).collect();
        let data = IntensityTrace::new(clean.taus().to_vec(), values).unwrap();
        let fit = fit_atom_number(&data, &cfg).unwrap();
        println!("trial {trial}: n = {:.4} (rabi/g {:.4}, mu {:.4}, mu0 {:.4}) flag {:?} iters {} ssr {:.6e} corner {:.3}",
            fit.n_eff, fit.fit.estimates[1]/gamma, fit.fit.estimates[2], fit.fit.estimates[3],
            fit.fit.flag, fit.fit.iterations, fit.fit.residual_norm, fit.corner_spread);
        // compare cost at truth vs at the fitted point
        let ens_t = EnsembleG2Params::new(n_true, 0.3, 0.6, (0.0,1.0), (0.0,1.0)).unwrap();
        let model_t = g2_ensemble(&grid, &drive, &ens_t).unwrap();
        let tail_start = 0.9 * 10e-6;
        let tail: Vec<f64> = data.taus().iter().zip(data.values()).filter(|(t,_)| **t >= tail_start).map(|(_,v)| *v).collect();
        let tm = tail.iter().sum::<f64>() / tail.len() as f64;
        let cost_t: f64 = model_t.values().iter().zip(data.values()).map(|(m,d)| (m - d/tm)*(m - d/tm)).sum();
        println!("   cost at truth = {:.6e}", cost_t);
    }
}

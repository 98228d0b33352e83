//! Driven two-level-atom dynamics, single-atom correlation functions via
//! quantum regression, the N-atom intensity-correlation model and the
//! constrained atom-number fit.
//!
//! The density matrix lives in the basis `{|g>, |e>}` and is flattened
//! row-major as `[rho_gg, rho_ge, rho_eg, rho_ee]`. One master-equation
//! generator drives both state propagation and the regression traces; only
//! the initial condition differs.

use nalgebra::{Matrix2, Matrix4, Vector4};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fit::{nls_minimize, Bounds, FitOptions, FitProblem, FitResult};

pub type DensityMatrix = Matrix2<Complex64>;

/// Resonant (or near-resonant) classical drive on the two-level atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveParams {
    /// Rabi frequency, rad/s.
    pub rabi: f64,
    /// Drive–atom detuning `omega_drive - omega_at`, rad/s (0 by default:
    /// the excitation beams are resonant).
    pub detuning: f64,
    /// Dipole decay rate, rad/s; the population decays at `2*gamma`.
    pub gamma: f64,
}

impl DriveParams {
    pub fn new(rabi: f64, detuning: f64, gamma: f64) -> Result<Self> {
        if !(rabi >= 0.0) || !rabi.is_finite() {
            return Err(Error::InvalidParams(format!("rabi must be >= 0, got {rabi}")));
        }
        if !detuning.is_finite() {
            return Err(Error::InvalidParams("detuning must be finite".into()));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParams(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(Self { rabi, detuning, gamma })
    }

    pub fn resonant(rabi: f64, gamma: f64) -> Result<Self> {
        Self::new(rabi, 0.0, gamma)
    }
}

/// Delay grid with sampled correlation values (real for intensity-type
/// traces, complex for field-type traces).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTrace<T> {
    taus: Vec<f64>,
    values: Vec<T>,
}

pub type IntensityTrace = CorrelationTrace<f64>;
pub type FieldTrace = CorrelationTrace<Complex64>;

/// Value types storable in a trace, checked finite at construction.
pub trait TraceValue: Copy {
    fn finite(&self) -> bool;
}

impl TraceValue for f64 {
    fn finite(&self) -> bool {
        self.is_finite()
    }
}

impl TraceValue for Complex64 {
    fn finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl<T: TraceValue> CorrelationTrace<T> {
    pub fn new(taus: Vec<f64>, values: Vec<T>) -> Result<Self> {
        if taus.len() != values.len() {
            return Err(Error::InvalidParams("taus/values length mismatch".into()));
        }
        if taus.len() < 2 {
            return Err(Error::InvalidParams("trace needs at least 2 points".into()));
        }
        if taus[0] != 0.0 {
            return Err(Error::InvalidParams(format!("taus must start at 0, got {}", taus[0])));
        }
        if taus.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParams("taus must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.finite()) {
            return Err(Error::InvalidParams("trace values must be finite".into()));
        }
        Ok(Self { taus, values })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }
}

const SM: usize = 0; // |g><g| index helpers for the flattened layout
const GE: usize = 1;
const EG: usize = 2;
const EE: usize = 3;

/// Master-equation generator as a 4x4 matrix on the flattened operator,
/// built column-by-column by applying the superoperator to basis matrices.
///
/// `H = -detuning |e><e| + (rabi/2)(sigma+ + sigma-)` in the frame rotating
/// at the drive frequency; single decay channel `sigma-` at rate `2*gamma`.
fn liouvillian(drive: &DriveParams) -> Matrix4<Complex64> {
    let z = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let sm = Matrix2::new(z, one, z, z); // |g><e|
    let sp = Matrix2::new(z, z, one, z); // |e><g|
    let proj_e = Matrix2::new(z, z, z, one);
    let h = proj_e * Complex64::new(-drive.detuning, 0.0)
        + (sp + sm) * Complex64::new(drive.rabi / 2.0, 0.0);
    let decay = Complex64::new(2.0 * drive.gamma, 0.0);
    let apply = |x: &Matrix2<Complex64>| -> Matrix2<Complex64> {
        let comm = h * x - x * h;
        let jump = sm * x * sp;
        let anti = sp * sm * x + x * sp * sm;
        comm * Complex64::new(0.0, -1.0) + (jump - anti * Complex64::new(0.5, 0.0)) * decay
    };
    let mut l = Matrix4::zeros();
    for col in 0..4 {
        let mut basis = Matrix2::zeros();
        basis[(col / 2, col % 2)] = one;
        let out = apply(&basis);
        for row in 0..4 {
            l[(row, col)] = out[(row / 2, row % 2)];
        }
    }
    l
}

fn flatten(m: &DensityMatrix) -> Vector4<Complex64> {
    Vector4::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

fn unflatten(v: &Vector4<Complex64>) -> DensityMatrix {
    Matrix2::new(v[SM], v[GE], v[EG], v[EE])
}

/// Marches a flattened operator along a delay grid by exact per-step matrix
/// exponentiation, caching the exponential while the step stays constant.
struct Propagator {
    l: Matrix4<Complex64>,
    cached: Option<(f64, Matrix4<Complex64>)>,
}

impl Propagator {
    fn new(drive: &DriveParams) -> Self {
        Self { l: liouvillian(drive), cached: None }
    }

    fn step(&mut self, v: &Vector4<Complex64>, dt: f64) -> Vector4<Complex64> {
        let reuse = matches!(&self.cached, Some((d, _)) if (*d - dt).abs() <= 1e-15 * dt.abs());
        if !reuse {
            let e = (self.l * Complex64::new(dt, 0.0)).exp();
            self.cached = Some((dt, e));
        }
        self.cached.as_ref().unwrap().1 * v
    }

    /// Sample the evolution of `v0` (the state at tau = 0) on `taus`.
    fn trajectory(&mut self, v0: Vector4<Complex64>, taus: &[f64]) -> Vec<Vector4<Complex64>> {
        let mut out = Vec::with_capacity(taus.len());
        let mut v = v0;
        let mut t = 0.0;
        for &tau in taus {
            let dt = tau - t;
            if dt > 0.0 {
                v = self.step(&v, dt);
                t = tau;
            }
            out.push(v);
        }
        out
    }
}

/// Stationary state of the driven atom: `(rho_ee, rho_eg)`.
///
/// On resonance `rho_ee = s / (2 (1 + s))` with saturation
/// `s = rabi^2 / (2 gamma^2)`.
pub fn bloch_steady_state(drive: &DriveParams) -> (f64, Complex64) {
    let rho = steady_state_matrix(drive);
    (rho[(1, 1)].re, rho[(1, 0)])
}

fn steady_state_matrix(drive: &DriveParams) -> DensityMatrix {
    if drive.rabi == 0.0 && drive.detuning == 0.0 {
        // Undriven atom decays to the ground state.
        return Matrix2::new(
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
        );
    }
    // Solve L v = 0 with the trace row replacing the first equation.
    let mut a = liouvillian(drive);
    for col in 0..4 {
        a[(0, col)] = Complex64::new(0.0, 0.0);
    }
    a[(0, SM)] = Complex64::new(1.0, 0.0);
    a[(0, EE)] = Complex64::new(1.0, 0.0);
    let b = Vector4::new(
        Complex64::new(1.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
    );
    let v = a.lu().solve(&b).expect("driven two-level steady state is unique");
    unflatten(&v)
}

/// Largest delay step the state propagator accepts, `0.1 / max(gamma, rabi)`.
pub fn max_propagation_step(drive: &DriveParams) -> f64 {
    0.1 / drive.gamma.max(drive.rabi)
}

/// Evolve a density matrix along `tau_grid` (starting at the grid origin) by
/// exact exponentiation of the generator per step.
///
/// The initial matrix must be Hermitian, unit-trace and positive; trace and
/// positivity are preserved to machine precision. Grid steps above
/// [`max_propagation_step`] are rejected.
pub fn propagate_bloch(
    initial: &DensityMatrix,
    drive: &DriveParams,
    tau_grid: &[f64],
) -> Result<Vec<DensityMatrix>> {
    if tau_grid.is_empty() {
        return Err(Error::InvalidParams("empty tau grid".into()));
    }
    if tau_grid[0] < 0.0 || tau_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParams("tau grid must be nonnegative and increasing".into()));
    }
    let tol = 1e-12;
    let trace = initial[(0, 0)].re + initial[(1, 1)].re;
    let herm = (initial[(0, 1)] - initial[(1, 0)].conj()).norm();
    let det = (initial[(0, 0)] * initial[(1, 1)] - initial[(0, 1)] * initial[(1, 0)]).re;
    if (trace - 1.0).abs() > tol
        || initial[(0, 0)].im.abs() > tol
        || initial[(1, 1)].im.abs() > tol
        || herm > tol
        || initial[(0, 0)].re < -tol
        || initial[(1, 1)].re < -tol
        || det < -tol
    {
        return Err(Error::InvalidParams(
            "initial density matrix must be Hermitian, unit trace and positive".into(),
        ));
    }
    let max_step = max_propagation_step(drive);
    let mut prev = 0.0;
    for &t in tau_grid {
        if t - prev > max_step {
            return Err(Error::StepTooLarge { step: t - prev, max: max_step });
        }
        prev = t;
    }
    let mut prop = Propagator::new(drive);
    Ok(prop
        .trajectory(flatten(initial), tau_grid)
        .iter()
        .map(unflatten)
        .collect())
}

fn validate_tau_grid(tau_grid: &[f64]) -> Result<()> {
    if tau_grid.len() < 2 || tau_grid[0] != 0.0 || tau_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParams(
            "tau grid must start at 0 and increase strictly".into(),
        ));
    }
    Ok(())
}

/// Single-atom second-order correlation by quantum regression:
/// `Gamma2(tau) = rho_ee_ss * P_e(tau | ground at tau = 0)`, so that
/// `Gamma2(0) = 0` and `Gamma2(inf) = rho_ee_ss^2`.
pub fn gamma2(tau_grid: &[f64], drive: &DriveParams) -> Result<IntensityTrace> {
    validate_tau_grid(tau_grid)?;
    let (rho_ee, _) = bloch_steady_state(drive);
    let ground = Vector4::new(
        Complex64::new(1.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
    );
    let mut prop = Propagator::new(drive);
    let values = prop
        .trajectory(ground, tau_grid)
        .iter()
        .map(|v| rho_ee * v[EE].re)
        .collect();
    CorrelationTrace::new(tau_grid.to_vec(), values)
}

/// Single-atom first-order correlation `<sigma+(tau) sigma-(0)>` by quantum
/// regression from the stationary state: the regression operator starts at
/// `sigma- rho_ss` and evolves under the same generator; the trace against
/// `sigma+` is its `|g><e|` component.
///
/// `Gamma1(0) = rho_ee_ss`; at long delays it settles on the coherent plateau
/// `rho_ge_ss * rho_eg_ss = |rho_eg_ss|^2`.
pub fn gamma1(tau_grid: &[f64], drive: &DriveParams) -> Result<FieldTrace> {
    validate_tau_grid(tau_grid)?;
    let rho = steady_state_matrix(drive);
    // sigma- rho: row g of the operator picks up row e of rho.
    let start = Vector4::new(rho[(1, 0)], rho[(1, 1)], Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    let mut prop = Propagator::new(drive);
    let values = prop.trajectory(start, tau_grid).iter().map(|v| v[GE]).collect();
    CorrelationTrace::new(tau_grid.to_vec(), values)
}

/// Geometric coefficients of the ensemble correlation model, carrying the
/// closed intervals they are constrained to.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleG2Params {
    pub n_atoms: f64,
    pub mu0: f64,
    pub mu: f64,
    pub mu0_bounds: (f64, f64),
    pub mu_bounds: (f64, f64),
}

impl EnsembleG2Params {
    pub fn new(
        n_atoms: f64,
        mu0: f64,
        mu: f64,
        mu0_bounds: (f64, f64),
        mu_bounds: (f64, f64),
    ) -> Result<Self> {
        if !(n_atoms >= 0.0) || !n_atoms.is_finite() {
            return Err(Error::InvalidParams(format!("n_atoms must be >= 0, got {n_atoms}")));
        }
        for (name, (lo, hi)) in [("mu0_bounds", mu0_bounds), ("mu_bounds", mu_bounds)] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidParams(format!("{name} must be a finite interval")));
            }
        }
        if !(mu0_bounds.0..=mu0_bounds.1).contains(&mu0) {
            return Err(Error::InvalidParams(format!("mu0 = {mu0} outside {mu0_bounds:?}")));
        }
        if !(mu_bounds.0..=mu_bounds.1).contains(&mu) {
            return Err(Error::InvalidParams(format!("mu = {mu} outside {mu_bounds:?}")));
        }
        Ok(Self { n_atoms, mu0, mu, mu0_bounds, mu_bounds })
    }
}

/// Delay beyond which the ensemble correlation is taken as asymptotic; the
/// returned trace is normalized to its value at the largest delay.
pub const G2_NORMALIZATION_WINDOW_S: f64 = 10e-6;

/// Normalized ensemble intensity correlation,
/// `g2(tau) ∝ N Gamma2(tau) + N (N-1) [mu0 + mu |Gamma1(tau)|^2]`,
/// scaled so the value at the last grid point is exactly 1.
pub fn g2_ensemble(
    tau_grid: &[f64],
    drive: &DriveParams,
    ens: &EnsembleG2Params,
) -> Result<IntensityTrace> {
    validate_tau_grid(tau_grid)?;
    let tau_max = *tau_grid.last().unwrap();
    if tau_max < G2_NORMALIZATION_WINDOW_S {
        return Err(Error::ShortTauGrid { got: tau_max, need: G2_NORMALIZATION_WINDOW_S });
    }
    let n = ens.n_atoms;
    if n <= 0.0 {
        return Err(Error::InvalidParams("g2_ensemble needs n_atoms > 0".into()));
    }
    let g2 = gamma2(tau_grid, drive)?;
    let g1 = gamma1(tau_grid, drive)?;
    let raw: Vec<f64> = g2
        .values()
        .iter()
        .zip(g1.values())
        .map(|(&two, one)| n * two + n * (n - 1.0) * (ens.mu0 + ens.mu * one.norm_sqr()))
        .collect();
    let asymptote = *raw.last().unwrap();
    if !(asymptote > 0.0) {
        return Err(Error::NonIdentifiable(asymptote));
    }
    CorrelationTrace::new(tau_grid.to_vec(), raw.iter().map(|v| v / asymptote).collect())
}

/// Replace every sample by a Poisson draw with mean
/// `value * mean_counts_per_bin`, renormalized back; deterministic under a
/// fixed seed. Counting-noise counterpart of the spectrum shot-noise op.
pub fn add_counting_noise(
    trace: &IntensityTrace,
    mean_counts_per_bin: f64,
    seed: u64,
) -> Result<IntensityTrace> {
    use rand::SeedableRng;
    use rand_distr::Distribution;
    if !(mean_counts_per_bin > 0.0) {
        return Err(Error::InvalidParams(format!(
            "mean_counts_per_bin must be > 0, got {mean_counts_per_bin}"
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let values = trace
        .values()
        .iter()
        .map(|&v| {
            let mean = v * mean_counts_per_bin;
            if mean <= 0.0 {
                return 0.0;
            }
            let draw: f64 = rand_distr::Poisson::new(mean).expect("mean > 0").sample(&mut rng);
            draw / mean_counts_per_bin
        })
        .collect();
    IntensityTrace::new(trace.taus().to_vec(), values)
}

/// Configuration of the constrained atom-number fit.
#[derive(Debug, Clone, Copy)]
pub struct AtomNumberFitConfig {
    /// Dipole decay rate, rad/s (fixed).
    pub gamma: f64,
    /// Drive detuning, rad/s (fixed; resonant excitation by default).
    pub drive_detuning: f64,
    /// Rabi-frequency search interval, rad/s.
    pub rabi_bounds: (f64, f64),
    pub rabi_init: f64,
    /// Atom-number search interval.
    pub n_bounds: (f64, f64),
    pub n_init: f64,
    /// Constraint intervals for the geometric coefficients.
    pub mu0_bounds: (f64, f64),
    pub mu_bounds: (f64, f64),
}

impl AtomNumberFitConfig {
    /// Wide-open intervals around a resonant drive guess.
    pub fn broad(gamma: f64, rabi_init: f64) -> Self {
        Self {
            gamma,
            drive_detuning: 0.0,
            rabi_bounds: (0.05 * gamma, 50.0 * gamma),
            rabi_init,
            n_bounds: (0.0, 1e4),
            n_init: 3.0,
            mu0_bounds: (0.0, 1.0),
            mu_bounds: (0.0, 1.0),
        }
    }
}

/// Atom-number estimate with the interval-sensitivity contribution.
#[derive(Debug, Clone)]
pub struct AtomNumberFit {
    /// Engine result over `[n_atoms, rabi (rad/s), mu, mu0]`.
    pub fit: FitResult,
    pub n_eff: f64,
    /// Statistical sigma and the mu/mu0 interval spread, added in
    /// quadrature.
    pub n_sigma: f64,
    /// Half-range of the atom-number estimates refit at the four corners of
    /// the (mu, mu0) constraint box.
    pub corner_spread: f64,
}

/// Bound-constrained least-squares fit of the ensemble correlation model to
/// a measured trace.
///
/// The data are renormalized internally by the mean over the trailing 10% of
/// the delay window, which makes the estimate invariant under any positive
/// rescaling of the input values.
pub fn fit_atom_number(data: &IntensityTrace, cfg: &AtomNumberFitConfig) -> Result<AtomNumberFit> {
    let taus = data.taus().to_vec();
    let tau_max = *taus.last().unwrap();
    if tau_max < G2_NORMALIZATION_WINDOW_S {
        return Err(Error::ShortTauGrid { got: tau_max, need: G2_NORMALIZATION_WINDOW_S });
    }

    // Internal renormalization by the asymptotic tail.
    let tail_start = 0.9 * tau_max;
    let tail: Vec<f64> = taus
        .iter()
        .zip(data.values())
        .filter(|(t, _)| **t >= tail_start)
        .map(|(_, v)| *v)
        .collect();
    let tail_mean = tail.iter().sum::<f64>() / tail.len() as f64;
    if !(tail_mean > 0.0) {
        return Err(Error::NonIdentifiable(tail_mean));
    }
    let norm: Vec<f64> = data.values().iter().map(|v| v / tail_mean).collect();

    let hi = norm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = norm.iter().cloned().fold(f64::INFINITY, f64::min);
    if (hi - lo) / hi.abs().max(1e-12) < 0.02 {
        return Err(Error::NonIdentifiable(hi - lo));
    }

    let gamma = cfg.gamma;
    // Internal parameter order puts rabi last: the single-atom traces only
    // depend on it, so with a one-slot memo the finite-difference columns
    // for (n, mu, mu0) all reuse the cached traces.
    let run_fit = |mu_bounds: (f64, f64), mu0_bounds: (f64, f64), start: &[f64]| -> Result<FitResult> {
        let taus = taus.clone();
        let norm = norm.clone();
        let memo: std::cell::RefCell<Option<(f64, IntensityTrace, FieldTrace)>> =
            std::cell::RefCell::new(None);
        let problem = FitProblem::new(
            move |p: &[f64]| {
                let (n, mu, mu0, rabi_scaled) = (p[0], p[1], p[2], p[3]);
                let mut memo = memo.borrow_mut();
                let fresh = !matches!(&*memo, Some((r, _, _)) if *r == rabi_scaled);
                if fresh {
                    let drive = DriveParams {
                        rabi: rabi_scaled * gamma,
                        detuning: cfg.drive_detuning,
                        gamma,
                    };
                    match (gamma2(&taus, &drive), gamma1(&taus, &drive)) {
                        (Ok(g2t), Ok(g1t)) => *memo = Some((rabi_scaled, g2t, g1t)),
                        _ => return vec![f64::NAN; norm.len()],
                    }
                }
                let (_, g2t, g1t) = memo.as_ref().unwrap();
                let raw: Vec<f64> = g2t
                    .values()
                    .iter()
                    .zip(g1t.values())
                    .map(|(&two, one)| {
                        n * two + n * (n - 1.0) * (mu0 + mu * one.norm_sqr())
                    })
                    .collect();
                let asym = *raw.last().unwrap();
                if !(asym > 0.0) {
                    return vec![f64::NAN; norm.len()];
                }
                raw.iter().zip(&norm).map(|(g, d)| g / asym - d).collect()
            },
            vec![start[0], start[2], start[3], start[1]],
        )
        .with_bounds(Bounds::new(
            vec![cfg.n_bounds.0.max(1e-3), mu_bounds.0, mu0_bounds.0, cfg.rabi_bounds.0 / gamma],
            vec![cfg.n_bounds.1, mu_bounds.1, mu0_bounds.1, cfg.rabi_bounds.1 / gamma],
        )?)
        .with_options(FitOptions { step_scales: vec![1.0, 0.1, 0.1, 1.0], ..Default::default() });
        let mut fit = nls_minimize(&problem)?;
        // Public order: [n, rabi, mu, mu0].
        fit.estimates.swap(1, 3);
        fit.estimates.swap(2, 3);
        fit.uncertainties.swap(1, 3);
        fit.uncertainties.swap(2, 3);
        Ok(fit)
    };

    let mid = |b: (f64, f64)| 0.5 * (b.0 + b.1);
    let (mu_mid, mu0_mid) = (mid(cfg.mu_bounds), mid(cfg.mu0_bounds));

    // Cold starts wander into wrong basins when rabi and n are jointly off.
    // Coarse-scan both on a small grid, reusing the expensive single-atom
    // traces per rabi value; the configured start competes as a candidate.
    let rabi_lo = cfg.rabi_bounds.0 / gamma;
    let rabi_hi = cfg.rabi_bounds.1 / gamma;
    let n_lo = cfg.n_bounds.0.max(1e-3);
    let mut start = vec![
        cfg.n_init.clamp(n_lo, cfg.n_bounds.1),
        (cfg.rabi_init / gamma).clamp(rabi_lo, rabi_hi),
        mu_mid,
        mu0_mid,
    ];
    let mut best_cost = f64::INFINITY;
    let mut rabi_grid: Vec<f64> = [0.8f64, 1.5, 2.0, 3.0, 5.0]
        .iter()
        .map(|r| r.clamp(rabi_lo, rabi_hi))
        .collect();
    rabi_grid.push(start[1]);
    let mut n_grid: Vec<f64> = [1.0f64, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0, 30.0]
        .iter()
        .map(|n| n.clamp(n_lo, cfg.n_bounds.1))
        .collect();
    n_grid.push(start[0]);
    for &r in &rabi_grid {
        let drive = DriveParams { rabi: r * gamma, detuning: cfg.drive_detuning, gamma };
        let (g2t, g1t) = match (gamma2(&taus, &drive), gamma1(&taus, &drive)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => continue,
        };
        for &n in &n_grid {
            let raw: Vec<f64> = g2t
                .values()
                .iter()
                .zip(g1t.values())
                .map(|(&two, one)| {
                    n * two + n * (n - 1.0) * (mu0_mid + mu_mid * one.norm_sqr())
                })
                .collect();
            let asym = *raw.last().unwrap();
            if !(asym > 0.0) {
                continue;
            }
            let cost: f64 = raw
                .iter()
                .zip(&norm)
                .map(|(g, d)| (g / asym - d) * (g / asym - d))
                .sum();
            if cost < best_cost {
                best_cost = cost;
                start = vec![n, r, mu_mid, mu0_mid];
            }
        }
    }
    let mut fit = run_fit(cfg.mu_bounds, cfg.mu0_bounds, &start)?;
    let n_eff = fit.estimates[0];
    let n_stat = fit.uncertainties[0];

    // Interval sensitivity: refit with (mu, mu0) pinned at each corner of
    // the constraint box.
    let mut corner_n = Vec::with_capacity(4);
    for &mu in &[cfg.mu_bounds.0, cfg.mu_bounds.1] {
        for &mu0 in &[cfg.mu0_bounds.0, cfg.mu0_bounds.1] {
            let start = vec![n_eff, fit.estimates[1], mu, mu0];
            if let Ok(f) = run_fit((mu, mu), (mu0, mu0), &start) {
                corner_n.push(f.estimates[0]);
            }
        }
    }
    let corner_spread = if corner_n.is_empty() {
        0.0
    } else {
        let max = corner_n.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = corner_n.iter().cloned().fold(f64::INFINITY, f64::min);
        (max - min) / 2.0
    };
    let n_sigma = (n_stat * n_stat + corner_spread * corner_spread).sqrt();

    // Report rabi in rad/s.
    fit.estimates[1] *= gamma;
    fit.uncertainties[1] *= gamma;
    Ok(AtomNumberFit { fit, n_eff, n_sigma, corner_spread })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAMMA: f64 = 2.0 * std::f64::consts::PI * 2.61e6;

    fn uniform_grid(tau_max: f64, points: usize) -> Vec<f64> {
        (0..points).map(|i| tau_max * i as f64 / (points - 1) as f64).collect()
    }

    fn ground() -> DensityMatrix {
        Matrix2::new(
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
        )
    }

    fn excited() -> DensityMatrix {
        Matrix2::new(
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
        )
    }

    #[test]
    fn steady_state_limits() {
        let (ree, reg) = bloch_steady_state(&DriveParams::resonant(0.0, GAMMA).unwrap());
        assert_eq!(ree, 0.0);
        assert_eq!(reg.norm(), 0.0);

        let (ree, _) = bloch_steady_state(&DriveParams::resonant(1e5 * GAMMA, GAMMA).unwrap());
        assert!((ree - 0.5).abs() < 1e-8);

        // s = 2 at rabi = 2 gamma: rho_ee = s/(2(1+s)) = 1/3.
        let (ree, _) = bloch_steady_state(&DriveParams::resonant(2.0 * GAMMA, GAMMA).unwrap());
        assert!((ree - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn steady_state_matches_long_time_propagation() {
        let drive = DriveParams::resonant(2.0 * GAMMA, GAMMA).unwrap();
        let grid = uniform_grid(40.0 / GAMMA, 2000);
        let states = propagate_bloch(&ground(), &drive, &grid).unwrap();
        let last = states.last().unwrap();
        let (ree, reg) = bloch_steady_state(&drive);
        assert!((last[(1, 1)].re - ree).abs() < 1e-10);
        assert!((last[(1, 0)] - reg).norm() < 1e-10);
    }

    #[test]
    fn undriven_decay_is_exponential() {
        let drive = DriveParams::resonant(0.0, GAMMA).unwrap();
        let grid = uniform_grid(3.0 / GAMMA, 200);
        let states = propagate_bloch(&excited(), &drive, &grid).unwrap();
        for (t, rho) in grid.iter().zip(&states) {
            let expect = (-2.0 * GAMMA * t).exp();
            assert!((rho[(1, 1)].re - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn damped_rabi_oscillation_matches_closed_form() {
        let rabi = 5.0 * GAMMA;
        let drive = DriveParams::resonant(rabi, GAMMA).unwrap();
        let grid = uniform_grid(8.0 / GAMMA, 2000);
        let states = propagate_bloch(&ground(), &drive, &grid).unwrap();
        let (ree_ss, _) = bloch_steady_state(&drive);
        let omega_r = (rabi * rabi - GAMMA * GAMMA / 4.0).sqrt();
        for (t, rho) in grid.iter().zip(&states) {
            let env = (-1.5 * GAMMA * t).exp();
            let expect = ree_ss
                * (1.0 - env * ((omega_r * t).cos() + 1.5 * GAMMA / omega_r * (omega_r * t).sin()));
            assert!(
                (rho[(1, 1)].re - expect).abs() < 1e-8,
                "t = {t}: {} vs {expect}",
                rho[(1, 1)].re
            );
        }
    }

    #[test]
    fn propagation_preserves_trace_and_positivity() {
        let drive = DriveParams::resonant(3.0 * GAMMA, GAMMA).unwrap();
        let grid = uniform_grid(20.0 / GAMMA, 1500);
        let states = propagate_bloch(&ground(), &drive, &grid).unwrap();
        for rho in &states {
            let trace = rho[(0, 0)].re + rho[(1, 1)].re;
            assert!((trace - 1.0).abs() < 1e-12);
            let det = (rho[(0, 0)] * rho[(1, 1)] - rho[(0, 1)] * rho[(1, 0)]).re;
            assert!(det > -1e-12);
            assert!(rho[(0, 0)].re > -1e-12 && rho[(1, 1)].re > -1e-12);
            assert!((rho[(0, 1)] - rho[(1, 0)].conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn oversized_steps_are_rejected() {
        let drive = DriveParams::resonant(GAMMA, GAMMA).unwrap();
        let grid = vec![0.0, 1.0 / GAMMA];
        assert!(matches!(
            propagate_bloch(&ground(), &drive, &grid),
            Err(Error::StepTooLarge { .. })
        ));
    }

    #[test]
    fn invalid_initial_matrix_is_rejected() {
        let drive = DriveParams::resonant(GAMMA, GAMMA).unwrap();
        let grid = uniform_grid(1.0 / GAMMA, 50);
        let bad = Matrix2::new(
            Complex64::new(0.9, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.3, 0.0),
        );
        assert!(propagate_bloch(&bad, &drive, &grid).is_err());
    }

    #[test]
    fn gamma2_matches_resonance_fluorescence_closed_form() {
        for mult in [1.0, 3.0, 10.0] {
            let rabi = mult * GAMMA;
            let drive = DriveParams::resonant(rabi, GAMMA).unwrap();
            let grid = uniform_grid(10.0 / GAMMA, 2001);
            let trace = gamma2(&grid, &drive).unwrap();
            let (ree, _) = bloch_steady_state(&drive);
            let norm = ree * ree;
            let omega_r = (rabi * rabi - GAMMA * GAMMA / 4.0).sqrt();
            let mut max_err = 0.0f64;
            for (t, v) in grid.iter().zip(trace.values()) {
                let env = (-1.5 * GAMMA * t).exp();
                let closed = 1.0
                    - env * ((omega_r * t).cos() + 1.5 * GAMMA / omega_r * (omega_r * t).sin());
                max_err = max_err.max((v / norm - closed).abs());
            }
            assert!(max_err < 1e-6, "rabi = {mult} gamma: max err {max_err}");
        }
    }

    #[test]
    fn gamma2_starts_at_zero() {
        let drive = DriveParams::resonant(2.0 * GAMMA, GAMMA).unwrap();
        let grid = uniform_grid(5.0 / GAMMA, 100);
        let trace = gamma2(&grid, &drive).unwrap();
        assert_eq!(trace.values()[0], 0.0);
    }

    #[test]
    fn gamma2_oscillation_period_tracks_the_drive() {
        let rabi = 20.0 * GAMMA;
        let drive = DriveParams::resonant(rabi, GAMMA).unwrap();
        let grid = uniform_grid(2.0 / GAMMA, 4001);
        let trace = gamma2(&grid, &drive).unwrap();
        let v = trace.values();
        let peaks: Vec<f64> = (1..v.len() - 1)
            .filter(|&i| v[i] > v[i - 1] && v[i] > v[i + 1])
            .map(|i| grid[i])
            .collect();
        assert!(peaks.len() >= 2);
        let spacing = peaks[1] - peaks[0];
        let expect = 2.0 * std::f64::consts::PI / rabi;
        assert!((spacing - expect).abs() / expect < 0.05, "spacing {spacing} vs {expect}");
    }

    #[test]
    fn gamma1_limits() {
        let grid = uniform_grid(20.0 / GAMMA, 2001);
        let undriven = DriveParams::resonant(0.0, GAMMA).unwrap();
        let trace = gamma1(&grid, &undriven).unwrap();
        assert!(trace.values().iter().all(|v| v.norm() == 0.0));

        let drive = DriveParams::resonant(GAMMA, GAMMA).unwrap();
        let trace = gamma1(&grid, &drive).unwrap();
        let (ree, reg) = bloch_steady_state(&drive);
        assert!((trace.values()[0] - Complex64::new(ree, 0.0)).norm() < 1e-12);
        // Coherent plateau <sigma+><sigma-> = rho_ge * rho_eg.
        let plateau = reg.conj() * reg;
        assert!((trace.values()[trace.len() - 1] - plateau).norm() < 1e-6);
    }

    fn paper_drive() -> DriveParams {
        DriveParams::resonant(2.0 * GAMMA, GAMMA).unwrap()
    }

    fn g2_grid() -> Vec<f64> {
        uniform_grid(10e-6, 2001)
    }

    #[test]
    fn ensemble_g2_single_atom_antibunches() {
        let ens = EnsembleG2Params::new(1.0, 0.3, 0.5, (0.0, 1.0), (0.0, 1.0)).unwrap();
        let trace = g2_ensemble(&g2_grid(), &paper_drive(), &ens).unwrap();
        assert!(trace.values()[0].abs() < 1e-12);
        assert_eq!(trace.values()[trace.len() - 1], 1.0);
    }

    #[test]
    fn ensemble_g2_zero_mu_reduces_to_single_atom() {
        let grid = g2_grid();
        let drive = paper_drive();
        for n in [1.0, 2.5, 7.3] {
            let ens = EnsembleG2Params::new(n, 0.0, 0.0, (0.0, 1.0), (0.0, 1.0)).unwrap();
            let trace = g2_ensemble(&grid, &drive, &ens).unwrap();
            let single = gamma2(&grid, &drive).unwrap();
            let norm = *single.values().last().unwrap();
            for (a, b) in trace.values().iter().zip(single.values()) {
                assert!((a - b / norm).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ensemble_g2_zero_delay_grows_with_atom_number() {
        let grid = g2_grid();
        let drive = paper_drive();
        let mut last = -1.0;
        for n in 1..=20 {
            let ens =
                EnsembleG2Params::new(n as f64, 0.2, 0.6, (0.0, 1.0), (0.0, 1.0)).unwrap();
            let g0 = g2_ensemble(&grid, &drive, &ens).unwrap().values()[0];
            assert!(g0 > last, "g2(0) not increasing at N = {n}");
            last = g0;
        }
        assert!(last > 1.0, "large ensembles must bunch, got {last}");
    }

    #[test]
    fn ensemble_g2_requires_the_normalization_window() {
        let grid = uniform_grid(1e-6, 101);
        let ens = EnsembleG2Params::new(2.0, 0.2, 0.6, (0.0, 1.0), (0.0, 1.0)).unwrap();
        assert!(matches!(
            g2_ensemble(&grid, &paper_drive(), &ens),
            Err(Error::ShortTauGrid { .. })
        ));
    }

    fn synthetic_trace(n: f64, counts_per_bin: f64, seed: u64) -> IntensityTrace {
        let grid = g2_grid();
        let ens = EnsembleG2Params::new(n, 0.3, 0.6, (0.0, 1.0), (0.0, 1.0)).unwrap();
        let clean = g2_ensemble(&grid, &paper_drive(), &ens).unwrap();
        if counts_per_bin <= 0.0 {
            return clean;
        }
        add_counting_noise(&clean, counts_per_bin, seed).unwrap()
    }

    /// Constraint intervals of ±5% around the geometry used to synthesize
    /// the data; the atom number is identifiable only through these.
    fn tight_config() -> AtomNumberFitConfig {
        AtomNumberFitConfig {
            gamma: GAMMA,
            drive_detuning: 0.0,
            rabi_bounds: (0.5 * GAMMA, 10.0 * GAMMA),
            rabi_init: 1.5 * GAMMA,
            n_bounds: (0.0, 100.0),
            n_init: 3.0,
            mu0_bounds: (0.285, 0.315),
            mu_bounds: (0.57, 0.63),
        }
    }

    #[test]
    fn atom_number_round_trip_single_atom() {
        let data = synthetic_trace(1.0, 20_000.0, 5);
        let fit = fit_atom_number(&data, &tight_config()).unwrap();
        assert!(
            (0.8..=1.2).contains(&fit.n_eff),
            "single-atom trace fit n = {}",
            fit.n_eff
        );
    }

    #[test]
    fn atom_number_round_trip_moderate_noise() {
        let data = synthetic_trace(4.3, 20_000.0, 11);
        let fit = fit_atom_number(&data, &tight_config()).unwrap();
        assert!((fit.n_eff - 4.3).abs() / 4.3 < 0.10, "n = {}", fit.n_eff);
        assert!(fit.n_sigma >= fit.corner_spread);
    }

    #[test]
    fn atom_number_fit_is_scale_invariant() {
        let data = synthetic_trace(4.3, 0.0, 0);
        let scaled = IntensityTrace::new(
            data.taus().to_vec(),
            data.values().iter().map(|v| 37.5 * v).collect(),
        )
        .unwrap();
        let a = fit_atom_number(&data, &tight_config()).unwrap();
        let b = fit_atom_number(&scaled, &tight_config()).unwrap();
        assert!(
            (a.n_eff - b.n_eff).abs() < 1e-6 * a.n_eff.abs().max(1.0),
            "{} vs {}",
            a.n_eff,
            b.n_eff
        );
    }

    #[test]
    fn flat_data_is_nonidentifiable() {
        let grid = g2_grid();
        let data = IntensityTrace::new(grid.clone(), vec![1.0; grid.len()]).unwrap();
        assert!(matches!(
            fit_atom_number(&data, &tight_config()),
            Err(Error::NonIdentifiable(_))
        ));
    }
}

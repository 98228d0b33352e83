//! Damped Gauss–Newton minimizer with forward-difference Jacobian and
//! box-bound handling by clamping plus active-set exclusion.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Damping ceiling: the normal equations are considered irrecoverably
/// singular once the damping parameter exceeds this.
pub const DAMPING_MAX: f64 = 1e12;

/// Closed per-parameter intervals, possibly infinite.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidParams("bounds length mismatch".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidParams("each lower bound must be <= its upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    fn clamp(&self, p: &mut [f64]) {
        for (x, (l, u)) in p.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(*l, *u);
        }
    }

    fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (l, u))| *x >= *l && *x <= *u)
    }
}

/// Convergence tolerances and stepping controls.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Infinity-norm threshold on the gradient `J^T r`.
    pub gtol: f64,
    /// Relative step-norm threshold.
    pub steptol: f64,
    pub max_iters: usize,
    /// Per-parameter magnitudes used for the relative finite-difference
    /// step `h_j = 1e-6 * max(|p_j|, scale_j)`. Empty means 1.0 for all.
    pub step_scales: Vec<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { gtol: 1e-10, steptol: 1e-12, max_iters: 200, step_scales: Vec::new() }
    }
}

/// A least-squares problem: residual vector, start point, bounds, tolerances.
pub struct FitProblem<'a> {
    pub residual: Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>,
    pub initial: Vec<f64>,
    pub bounds: Bounds,
    pub options: FitOptions,
}

impl<'a> FitProblem<'a> {
    pub fn new<F>(residual: F, initial: Vec<f64>) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + 'a,
    {
        let n = initial.len();
        Self {
            residual: Box::new(residual),
            initial,
            bounds: Bounds::unbounded(n),
            options: FitOptions::default(),
        }
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn with_options(mut self, options: FitOptions) -> Self {
        self.options = options;
        self
    }
}

/// How the minimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    /// Gradient infinity-norm below `gtol`.
    Gradient,
    /// Step norm below `steptol` relative to the parameter norm.
    Step,
    /// Iteration budget exhausted without meeting a tolerance.
    MaxIters,
}

impl Convergence {
    pub fn converged(self) -> bool {
        !matches!(self, Convergence::MaxIters)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Convergence::Gradient => "converged-gradient",
            Convergence::Step => "converged-step",
            Convergence::MaxIters => "max-iters",
        }
    }
}

/// Estimates with one-sigma uncertainties and convergence diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub estimates: Vec<f64>,
    /// One-sigma uncertainties from the Gauss–Newton normal-matrix inverse
    /// scaled by the residual variance; infinite where the normal matrix is
    /// singular.
    pub uncertainties: Vec<f64>,
    /// Final residual sum of squares.
    pub residual_norm: f64,
    pub iterations: usize,
    pub flag: Convergence,
    /// Cost (sum of squares) after each accepted step, starting with the
    /// initial cost. Nonincreasing by construction.
    pub cost_history: Vec<f64>,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Forward-difference Jacobian, `m x n`. Steps back off the upper bound
/// where a forward step would leave the box.
fn jacobian(
    residual: &dyn Fn(&[f64]) -> Vec<f64>,
    p: &[f64],
    r0: &[f64],
    bounds: &Bounds,
    scales: &[f64],
) -> Result<DMatrix<f64>> {
    let (m, n) = (r0.len(), p.len());
    let mut jac = DMatrix::zeros(m, n);
    let mut pj = p.to_vec();
    for j in 0..n {
        let scale = scales.get(j).copied().unwrap_or(1.0);
        let mut h = 1e-6 * p[j].abs().max(scale.abs().max(f64::MIN_POSITIVE));
        if p[j] + h > bounds.upper[j] {
            h = -h;
        }
        pj[j] = p[j] + h;
        let h_actual = pj[j] - p[j];
        let r = (residual)(&pj);
        if r.len() != m {
            return Err(Error::InvalidParams(format!(
                "residual dimension changed from {m} to {} during differentiation",
                r.len()
            )));
        }
        for i in 0..m {
            jac[(i, j)] = (r[i] - r0[i]) / h_actual;
        }
        pj[j] = p[j];
    }
    Ok(jac)
}

/// Minimize the sum of squared residuals with adaptive damping: the damping
/// parameter is multiplied by 7 on a rejected step and divided by 3 on an
/// accepted one, starting from `1e-3 * max diag(J^T J)`. Parameters pinned at
/// a bound with an outward-pointing gradient are excluded from the step.
pub fn nls_minimize(problem: &FitProblem) -> Result<FitResult> {
    let n = problem.initial.len();
    if n == 0 {
        return Err(Error::InvalidParams("no parameters to fit".into()));
    }
    if problem.bounds.lower.len() != n {
        return Err(Error::InvalidParams("bounds dimension does not match parameters".into()));
    }
    if !problem.bounds.contains(&problem.initial) {
        return Err(Error::InvalidParams("initial parameters violate the bounds".into()));
    }
    let residual = problem.residual.as_ref();
    let opts = &problem.options;
    let scales: Vec<f64> = if opts.step_scales.is_empty() {
        vec![1.0; n]
    } else {
        opts.step_scales.clone()
    };

    let mut p = problem.initial.clone();
    let mut r = (residual)(&p);
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteResidual);
    }
    if r.len() < n {
        return Err(Error::InvalidParams(format!(
            "residual dimension {} is below parameter dimension {n}",
            r.len()
        )));
    }
    let mut cost = sum_sq(&r);
    let mut cost_history = vec![cost];
    let mut lambda: Option<f64> = None;
    let mut iterations = 0;
    let mut flag = Convergence::MaxIters;

    'outer: while iterations < opts.max_iters {
        let jac = jacobian(residual, &p, &r, &problem.bounds, &scales)?;
        let grad = jac.transpose() * DVector::from_column_slice(&r);

        if grad.amax() <= opts.gtol {
            flag = Convergence::Gradient;
            break;
        }

        // Active set: a parameter sitting on a bound whose gradient points
        // out of the box takes no part in the step.
        let free: Vec<usize> = (0..n)
            .filter(|&j| {
                let at_lower = p[j] <= problem.bounds.lower[j] && grad[j] > 0.0;
                let at_upper = p[j] >= problem.bounds.upper[j] && grad[j] < 0.0;
                !(at_lower || at_upper)
            })
            .collect();
        if free.is_empty() {
            flag = Convergence::Step;
            break;
        }

        let nf = free.len();
        let mut a = DMatrix::zeros(nf, nf);
        let mut g = DVector::zeros(nf);
        for (bi, &j) in free.iter().enumerate() {
            g[bi] = grad[j];
            for (bk, &k) in free.iter().enumerate() {
                let mut s = 0.0;
                for row in 0..jac.nrows() {
                    s += jac[(row, j)] * jac[(row, k)];
                }
                a[(bi, bk)] = s;
            }
        }

        let max_diag = (0..nf).fold(0.0f64, |m, i| m.max(a[(i, i)]));
        let lam = lambda.get_or_insert(1e-3 * max_diag.max(f64::MIN_POSITIVE));

        loop {
            let mut damped = a.clone();
            for i in 0..nf {
                damped[(i, i)] += *lam;
            }
            let solved = damped.clone().cholesky().map(|c| c.solve(&(-&g))).or_else(|| {
                damped.lu().solve(&(-&g))
            });
            let step = match solved {
                Some(s) if s.iter().all(|x| x.is_finite()) => s,
                _ => {
                    *lam *= 7.0;
                    if *lam > DAMPING_MAX {
                        return Err(Error::SingularNormalMatrix(DAMPING_MAX));
                    }
                    continue;
                }
            };

            let mut trial = p.clone();
            for (bi, &j) in free.iter().enumerate() {
                trial[j] += step[bi];
            }
            problem.bounds.clamp(&mut trial);

            let step_norm = trial
                .iter()
                .zip(&p)
                .map(|(t, x)| (t - x) * (t - x))
                .sum::<f64>()
                .sqrt();
            let p_norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();

            let r_trial = (residual)(&trial);
            let finite = r_trial.len() == r.len() && r_trial.iter().all(|x| x.is_finite());
            let cost_trial = if finite { sum_sq(&r_trial) } else { f64::INFINITY };

            if cost_trial < cost {
                p = trial;
                r = r_trial;
                cost = cost_trial;
                cost_history.push(cost);
                *lam /= 3.0;
                iterations += 1;
                if step_norm <= opts.steptol * (p_norm + opts.steptol) {
                    flag = Convergence::Step;
                    break 'outer;
                }
                break;
            }

            *lam *= 7.0;
            if *lam > DAMPING_MAX {
                // The damped step has shrunk to nothing without finding a
                // lower cost: numerically at a minimum.
                flag = Convergence::Step;
                break 'outer;
            }
        }
    }

    // Uncertainties from the full (undamped) normal matrix at the solution.
    let jac = jacobian(residual, &p, &r, &problem.bounds, &scales)?;
    let m = r.len();
    let dof = (m - n).max(1);
    let s2 = cost / dof as f64;
    let normal = jac.transpose() * &jac;
    let uncertainties = match normal.try_inverse() {
        Some(inv) => (0..n).map(|i| (inv[(i, i)] * s2).max(0.0).sqrt()).collect(),
        None => vec![f64::INFINITY; n],
    };

    Ok(FitResult {
        estimates: p,
        uncertainties,
        residual_norm: cost,
        iterations,
        flag,
        cost_history,
    })
}

//! Damped least-squares engine and the concrete spectrum-fit models.

mod engine;
mod models;

pub use engine::{
    nls_minimize, Bounds, Convergence, FitOptions, FitProblem, FitResult, DAMPING_MAX,
};
pub use models::{
    fit_coupling, fit_detuning, fit_od_single_pass, CouplingFit, CouplingFitOptions,
    SpectrumFitSetup, MIN_DIP_TRANSMISSION,
};

//! Modeling and data-analysis toolkit for multimode strong coupling of an
//! atomic ensemble to a long fiber-ring resonator.
//!
//! The crate covers four areas:
//!
//! * [`model`] — closed-form transfer physics of the atom–ring system and the
//!   OD / coupling / cooperativity conversions;
//! * [`spectra`] — spectrum synthesis, shot noise, transmission-minima
//!   extraction and empty-cavity recentering;
//! * [`fit`] — a damped Gauss–Newton least-squares engine plus the concrete
//!   spectrum fits (detuning, coupling strength, single-pass OD);
//! * [`correlations`] and [`calibration`] — resonance-fluorescence
//!   correlation functions, the ensemble g2 model, the constrained
//!   atom-number fit and the atom-number/OD calibration chain.
//!
//! All operations are pure functions of immutable inputs; RNG state is passed
//! explicitly per call, so everything is safe to evaluate in parallel.

pub mod calibration;
pub mod correlations;
pub mod error;
pub mod fit;
pub mod io;
pub mod model;
pub mod spectra;
pub mod spectrum;

pub use error::{Error, Result};
pub use model::{EnsembleParams, ResonatorParams};
pub use spectrum::Spectrum;

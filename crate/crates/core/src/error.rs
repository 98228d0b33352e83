use thiserror::Error;

/// Errors produced by the modeling, spectrum, fit and calibration routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A type invariant was violated when constructing a parameter set.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// A loss rate exceeds what one resonator round trip can dissipate,
    /// i.e. kappa / (2 pi nu_FSR) >= 1.
    #[error("loss ratio {name}/(2*pi*fsr) = {ratio} is >= 1; transfer coefficient undefined")]
    CouplingRatio { name: &'static str, ratio: f64 },

    /// The ring transmission denominator vanished (lossless ring driven
    /// exactly on resonance).
    #[error("degenerate ring denominator: lossless resonator on resonance")]
    DegenerateRing,

    /// The spectrum does not span the requested mode-order window.
    #[error("spectrum does not cover the order-{order} window [{lo} Hz, {hi} Hz]")]
    WindowNotCovered { order: i32, lo: f64, hi: f64 },

    /// The minimum of a mode-order window lies on the window edge, so no
    /// dip can be attributed to that order.
    #[error("no clear transmission minimum in the order-{order} window (minimum on edge)")]
    NoClearMinimum { order: i32 },

    /// Mode order 0 is not a valid shift order; the central resonance
    /// splits and has no single minimum.
    #[error("mode order 0 has no defined shift; use orders ..,-2,-1,+1,+2,..")]
    InvalidModeOrder,

    /// Traces passed to the recentering routine do not share a grid step.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Two alignment offsets explain the data equally well (periodic
    /// resonance comb inside the search range).
    #[error("ambiguous alignment: offsets {a} Hz and {b} Hz give residuals equal within {rel:e} relative")]
    AmbiguousAlignment { a: f64, b: f64, rel: f64 },

    /// The residual function returned a non-finite value at the initial
    /// point of a fit.
    #[error("residual function is not finite at the initial parameters")]
    NonFiniteResidual,

    /// The damped normal equations stayed singular past the damping limit.
    #[error("singular normal matrix: damping exceeded {0:e}")]
    SingularNormalMatrix(f64),

    /// The spectrum carries no resonance structure to fit.
    #[error("degenerate fit: spectrum is flat over the span (range {0})")]
    FlatSpectrum(f64),

    /// Open-loop OD fit requires the transmission to actually dip.
    #[error("fit window: transmission never drops below {0}; not enough absorption to fit")]
    InsufficientAbsorption(f64),

    /// Correlation grid does not reach the normalization window.
    #[error("tau grid too short: extends to {got} s, need at least {need} s for normalization")]
    ShortTauGrid { got: f64, need: f64 },

    /// Propagation grid step exceeds the accuracy guard.
    #[error("tau step {step} s exceeds accuracy guard {max} s")]
    StepTooLarge { step: f64, max: f64 },

    /// Correlation data carries no structure versus delay.
    #[error("non-identifiable data: correlation trace is flat (relative range {0})")]
    NonIdentifiable(f64),

    /// A calibration operation was given no records.
    #[error("empty input: at least one calibration record is required")]
    EmptyInput,

    /// A file did not conform to one of the tool's formats.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

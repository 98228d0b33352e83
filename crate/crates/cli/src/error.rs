//! Exit-code contract: 0 success, 2 configuration/format, 3 I/O,
//! 4 numerical (non-convergence or degenerate data).

use mmsc_core::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: String) -> Self {
        Self { code: EXIT_CONFIG, message }
    }

    pub fn io(message: String) -> Self {
        Self { code: EXIT_IO, message }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => EXIT_IO,
            Error::Format(_)
            | Error::InvalidParams(_)
            | Error::CouplingRatio { .. }
            | Error::GridMismatch(_)
            | Error::EmptyInput
            | Error::WindowNotCovered { .. }
            | Error::InvalidModeOrder => EXIT_CONFIG,
            Error::DegenerateRing
            | Error::NoClearMinimum { .. }
            | Error::AmbiguousAlignment { .. }
            | Error::NonFiniteResidual
            | Error::SingularNormalMatrix(_)
            | Error::FlatSpectrum(_)
            | Error::InsufficientAbsorption(_)
            | Error::ShortTauGrid { .. }
            | Error::StepTooLarge { .. }
            | Error::NonIdentifiable(_) => EXIT_NUMERICAL,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}

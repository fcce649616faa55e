use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("Hilbert space {requested:?} exceeds the {max}-dimensional cap")]
    HilbertSize { requested: Vec<usize>, max: usize },

    #[error("perturbation theory invalid: detuning {detuning:.4e} rad/s is within {threshold:.4e} rad/s of resonance")]
    ResonanceProximity { detuning: f64, threshold: f64 },

    #[error("dressed-state labels are ambiguous at grid point {index} (best overlap {overlap:.3})")]
    DegenerateLabel { index: usize, overlap: f64 },

    #[error("pulse is not number-selective: bandwidth {bandwidth:.4e} rad/s vs splitting {splitting:.4e} rad/s")]
    Selectivity { bandwidth: f64, splitting: f64 },

    #[error("Fock index {index} leaves no guard level in a {levels}-level resonator")]
    GuardLevel { index: usize, levels: usize },

    #[error("norm drifted by {drift:.3e} during integration")]
    Instability { drift: f64 },

    #[error("step calibration failed: {0}")]
    Calibration(String),

    #[error("unsupported schedule: {0}")]
    Unsupported(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Numerical failures (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Instability { .. } | Error::DegenerateLabel { .. } | Error::Calibration(_))
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("spin quantum number {0} is not a non-negative half-integer")]
    InvalidSpin(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not Hermitian (max asymmetry {max_asymmetry:e})")]
    NotHermitian { max_asymmetry: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "level tracking failed between {from_mt} mT and {to_mt} mT (best overlap^2 {overlap:.3}); \
         refine the field grid"
    )]
    Tracking { from_mt: f64, to_mt: f64, overlap: f64 },

    #[error("state {label} cannot be resolved at {field_mt} mT (purity {purity:.3})")]
    LabelUnresolved { label: String, field_mt: f64, purity: f64 },

    #[error("line {line} vanishes at {field_mt} mT (strength {strength:e} below floor {floor:e})")]
    LineVanished {
        line: String,
        field_mt: f64,
        strength: f64,
        floor: f64,
    },

    #[error("norm drift {drift:e} exceeds tolerance; reduce the time step")]
    NormDrift { drift: f64 },

    #[error("{peaks} peaks cannot identify {free} free parameters")]
    InsufficientPeaks { peaks: usize, free: usize },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Tracking { .. }
                | Error::LabelUnresolved { .. }
                | Error::LineVanished { .. }
                | Error::NormDrift { .. }
                | Error::NotHermitian { .. }
        )
    }
}

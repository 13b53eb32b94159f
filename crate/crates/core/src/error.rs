use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    InvalidDimension(usize),
    InvalidScale(f64),
    InvalidParameter(&'static str),
    DegenerateEdge,
    EmptyDomain,
    GridMismatch,
    SolverFailure { iterations: usize, relative_residual: f64 },
    Stagnation { iterations: usize, last_estimate: f64 },
    WindowOverflow,
    HorizonTooShort { requested: f64, horizon: f64 },
    InsufficientPoints(usize),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidDimension(d) => write!(f, "dimension {d} not supported (need 1..=3)"),
            Error::InvalidScale(e) => write!(f, "invalid lattice scale {e}"),
            Error::InvalidParameter(what) => write!(f, "invalid parameter: {what}"),
            Error::DegenerateEdge => write!(f, "degenerate edge: endpoints coincide"),
            Error::EmptyDomain => write!(f, "domain contains no lattice site at this scale"),
            Error::GridMismatch => write!(f, "grid functions live on different grids"),
            Error::SolverFailure { iterations, relative_residual } => write!(
                f,
                "solver did not converge after {iterations} iterations (relative residual {relative_residual:e})"
            ),
            Error::Stagnation { iterations, last_estimate } => write!(
                f,
                "power iteration stagnated after {iterations} iterations (last estimate {last_estimate})"
            ),
            Error::WindowOverflow => write!(f, "shifted support left the allocated window"),
            Error::HorizonTooShort { requested, horizon } => {
                write!(f, "trajectory horizon {horizon} is shorter than requested time {requested}")
            }
            Error::InsufficientPoints(n) => write!(f, "need at least 3 distinct points, got {n}"),
        }
    }
}

impl core::error::Error for Error {}

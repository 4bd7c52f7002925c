use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("transition kernel for player {player} is not stochastic: {violations} column(s) off the simplex, first at (t={t}, s={s}, a={a})")]
    InvalidKernel {
        player: usize,
        violations: usize,
        t: usize,
        s: usize,
        a: usize,
    },

    #[error("initial distribution for player {player} is not a probability vector")]
    InvalidInitial { player: usize },

    #[error("cost model is not admissible: {0}")]
    Inadmissible(String),

    #[error("non-finite cost for player {player} at (t={t}, s={s}, a={a})")]
    NonFiniteCost {
        player: usize,
        t: usize,
        s: usize,
        a: usize,
    },

    #[error("non-finite potential value")]
    NonFinitePotential,

    #[error("location ({row}, {col}) lies outside the {rows}x{cols} grid")]
    OutsideGrid {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            got,
        }
    }
}

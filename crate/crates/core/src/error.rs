use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("photon number {requested} exceeds truncation limit {limit}")]
    Truncation { requested: usize, limit: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not unitary: max |U U^dag - I| = {deviation:e}")]
    NonUnitary { deviation: f64 },

    #[error("{name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("distribution is not normalized: total = {total}")]
    Unnormalized { total: f64 },

    #[error(
        "truncated probability mass {tail:e} exceeds ceiling {ceiling:e}; raise m_max (currently {m_max})"
    )]
    TailTooLarge {
        tail: f64,
        ceiling: f64,
        m_max: usize,
    },

    #[error("source-event enumeration would visit {events} events (cap {cap})")]
    TooManyEvents { events: usize, cap: usize },

    #[error("optimizer did not converge: {0}")]
    NoConvergence(String),

    #[error("record does not match table: {0}")]
    Mismatch(String),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value,
            range: "[0, 1]",
        })
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `B_i^T grad h_i` vanishes where the filter must act.
    #[error("well-posedness violated{}: |B_i^T grad h_i| = {gain:e}", subsystem_suffix(.subsystem))]
    WellPosedness { subsystem: Option<usize>, gain: f64 },

    #[error("QP infeasible for subsystem {subsystem}")]
    Infeasible { subsystem: usize },

    #[error("numerical blowup at step {step} (t = {time})")]
    NumericalBlowup { step: usize, time: f64 },

    #[error(
        "state left the domain box at step {step} (t = {time}), coordinate {coordinate} = {value}"
    )]
    DomainExit {
        step: usize,
        time: f64,
        coordinate: usize,
        value: f64,
    },

    #[error("hypothesis not met: {0}")]
    HypothesisNotMet(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn subsystem_suffix(subsystem: &Option<usize>) -> String {
    match subsystem {
        Some(i) => format!(" at subsystem {i}"),
        None => String::new(),
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

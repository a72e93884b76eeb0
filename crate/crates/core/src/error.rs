use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameters or run configuration rejected before any work is done.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Probability reached the edge of an open chain.
    #[error("wave function reached the open boundary at t = {time} (site {site})")]
    Boundary { time: f64, site: i64 },

    #[error("step-size instability at t = {time}: norm before renormalisation was {norm}")]
    Instability { time: f64, norm: f64 },

    #[error("argument outside the validated range: {0}")]
    Range(String),

    #[error("master-equation integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("trajectory {index} (base seed {seed}) aborted: {source}")]
    TrajectoryAbort {
        index: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed result file: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures raised while integrating, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Boundary { .. }
                | Error::Instability { .. }
                | Error::Range(_)
                | Error::Integration { .. }
                | Error::TrajectoryAbort { .. }
        )
    }
}

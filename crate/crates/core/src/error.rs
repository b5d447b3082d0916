use std::fmt;
use std::path::PathBuf;

/// Which QoS-constrained service an allocation failure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Service {
    Communication,
    Sensing,
}

impl fmt::Display for Service {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Service::Communication => f.write_str("communication"),
            Service::Sensing => f.write_str("sensing"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular system in {context}")]
    Singular { context: &'static str },

    #[error("estimator diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("{service} QoS infeasible: required {required}, max achievable {max_achievable}")]
    Infeasible {
        service: Service,
        required: f64,
        max_achievable: f64,
    },

    /// Carries the shortfall of the weight that came closest to feasibility.
    #[error(
        "no feasible allocation weight in the sweep range; closest: {service} required {required}, max achievable {max_achievable}"
    )]
    NoFeasibleEta {
        service: Service,
        required: f64,
        max_achievable: f64,
    },

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error at {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("JSON error at {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

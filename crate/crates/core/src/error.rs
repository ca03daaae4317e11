use crate::analysis::AnalysisError;
use crate::autodiff::AdError;
use crate::hypernet::HyperError;
use crate::nets::NetError;
use crate::physics::PhysicsError;
use crate::problems::ProblemError;
use crate::training::TrainError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error, classified the way the command line reports it.
///
/// Module errors convert into one of three classes; [`Error::exit_code`]
/// maps them to 2 (configuration), 3 (numerical failure) and 4 (I/O).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numerical(_) => 3,
            Error::Io(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Attaches a path or other context to the message.
    pub fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            Error::Config(m) => Error::Config(format!("{what}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("{what}: {m}")),
            Error::Io(m) => Error::Io(format!("{what}: {m}")),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<AdError> for Error {
    fn from(e: AdError) -> Self {
        match e {
            AdError::NonFinite { .. } => Error::Numerical(e.to_string()),
            _ => Error::Config(e.to_string()),
        }
    }
}

impl From<NetError> for Error {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Autodiff(inner) => inner.into(),
            NetError::NonFinite(_) => Error::Numerical(e.to_string()),
            NetError::Shape(_) => Error::Config(e.to_string()),
        }
    }
}

impl From<HyperError> for Error {
    fn from(e: HyperError) -> Self {
        match e {
            HyperError::Net(inner) => inner.into(),
            HyperError::Autodiff(inner) => inner.into(),
            _ => Error::Config(e.to_string()),
        }
    }
}

impl From<PhysicsError> for Error {
    fn from(e: PhysicsError) -> Self {
        match e {
            PhysicsError::Net(inner) => inner.into(),
            PhysicsError::Autodiff(inner) => inner.into(),
            _ => Error::Config(e.to_string()),
        }
    }
}

impl From<ProblemError> for Error {
    fn from(e: ProblemError) -> Self {
        match e {
            ProblemError::Config(m) => Error::Config(m),
            ProblemError::Numerical(m) => Error::Numerical(m),
            ProblemError::Io(e) => e.into(),
        }
    }
}

impl From<TrainError> for Error {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => Error::Config(m),
            TrainError::NonFinite(_) | TrainError::Diverged { .. } => {
                Error::Numerical(e.to_string())
            }
            TrainError::Format(_) => Error::Io(e.to_string()),
            TrainError::Physics(inner) => inner.into(),
            TrainError::Hyper(inner) => inner.into(),
            TrainError::Net(inner) => inner.into(),
            TrainError::Autodiff(inner) => inner.into(),
            TrainError::Io(inner) => inner.into(),
        }
    }
}

impl From<AnalysisError> for Error {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::UndefinedMetric(_) => Error::Numerical(e.to_string()),
            AnalysisError::Shape(m) | AnalysisError::Config(m) => Error::Config(m),
            AnalysisError::Train(inner) => inner.into(),
            AnalysisError::Hyper(inner) => inner.into(),
            AnalysisError::Net(inner) => inner.into(),
            AnalysisError::Problem(inner) => inner.into(),
        }
    }
}

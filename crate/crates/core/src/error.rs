use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid network: {}", .0.join("; "))]
    Topology(Vec<String>),

    #[error("neuron `{neuron}`: {source}")]
    Neuron {
        neuron: String,
        #[source]
        source: Box<Error>,
    },

    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}: total loss {loss} exceeds 1000x initial loss {initial}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn for_neuron(self, neuron: &str) -> Self {
        Error::Neuron { neuron: neuron.to_string(), source: Box::new(self) }
    }
}

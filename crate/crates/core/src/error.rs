use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("location ({x}, {y}) lies outside the domain")]
    OutOfDomain { x: f64, y: f64 },

    #[error("{what} is not numerically positive definite{}", node_suffix(*.node))]
    Singular { what: &'static str, node: Option<usize> },

    #[error("non-finite log density at the current state of block `{0}`")]
    NonFiniteDensity(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

fn node_suffix(node: Option<usize>) -> String {
    node.map(|n| format!(" (node {n})")).unwrap_or_default()
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn singular(what: &'static str) -> Self {
        Error::Singular { what, node: None }
    }

    /// Attaches a node id to a singularity error raised deeper in the stack.
    pub(crate) fn at_node(self, node: usize) -> Self {
        match self {
            Error::Singular { what, node: None } => Error::Singular {
                what,
                node: Some(node),
            },
            other => other,
        }
    }

    /// True for failures of the numerical kind (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular { .. } | Error::NonFiniteDensity(_) => true,
            Error::Iteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("basis dimension overflows for q={q}, d={d}")]
    BasisOverflow { q: usize, d: usize },

    #[error("parameter point outside the box at coordinate {coord}: {value} not in [{lower}, {upper}]")]
    OutsideBox {
        coord: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("quadrature rule would have {nodes} nodes, above the cap of {cap}")]
    TooManyNodes { nodes: u128, cap: usize },

    #[error("evaluation failed at quadrature node {node}: {source}")]
    AtNode {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("nonlinearity overflow: {0}")]
    Overflow(String),

    #[error("newton iteration failed to converge after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("time integration failed at t={t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("requested time {t} outside trajectory span [{start}, {end}]")]
    Extrapolation { t: f64, start: f64, end: f64 },

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("output matrix has numerical rank {rank} < {cols} columns; orthonormalize the basis first")]
    RankDeficient { rank: usize, cols: usize },

    #[error("reduced dimension r={r} exceeds available {available}")]
    ReducedDimension { r: usize, available: usize },

    #[error("time grids differ: {0}")]
    GridMismatch(String),

    #[error("model definition: {0}")]
    Model(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn at_node(node: usize, source: Error) -> Self {
        Error::AtNode {
            node,
            source: Box::new(source),
        }
    }
}

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("evaluation failed at node {node} {coords:?}: {message}")]
    Evaluation {
        node: usize,
        coords: [f64; 2],
        message: String,
    },

    #[error("field rank {found} does not match expected rank {expected}")]
    RankMismatch { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("negative potential {value} at node {node}")]
    NegativePotential { node: usize, value: f64 },

    #[error("degenerate well near {coords:?}: {message}")]
    DegenerateWell { coords: [f64; 2], message: String },

    #[error("no potential wells found")]
    NoWells,

    #[error("endomorphism field is not symmetric at node {node}")]
    NotSymmetric { node: usize },

    #[error("domain is disconnected: {unreached} nodes unreachable from the source")]
    Disconnected { unreached: usize },

    #[error("geodesic trace stalled at {at:?} (d = {distance}); start is likely on the cut locus")]
    CutLocus { at: [f64; 2], distance: f64 },

    #[error("separating surface is empty: wells are not separated inside G")]
    EmptySurface,

    #[error("transverse Hessian is not positive definite (min eigenvalue {min_eigenvalue})")]
    IndefiniteHessian { min_eigenvalue: f64 },

    #[error("ambiguous geodesic-manifold dimension: {0}")]
    AmbiguousEll(String),

    #[error("invalid Dirichlet region: {0}")]
    InvalidRegion(String),

    #[error("exponential weight overflow: {0}")]
    Overflow(String),

    #[error("cutoff radii violate ordering constraints: {0}")]
    CutoffRadii(String),

    #[error("partition of unity violated: max |sum chi^2 - 1| = {deviation}")]
    PartitionOfUnity { deviation: f64 },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),

    #[error("insufficient eigenvalues: {0}")]
    InsufficientEigenvalues(String),

    #[error("spectral window rejected: {0}")]
    Window(String),

    #[error("surface quadrature underresolved: {nodes} nodes")]
    Underresolved { nodes: usize },

    #[error("missing pair geometry for wells ({0}, {1})")]
    MissingPair(usize, usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("config error (line {line}): {message}")]
    Config { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait ResultExt<T> {
    fn context(self, context: impl Into<String>) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl Into<String>) -> Result<T> {
        self.map_err(|e| e.context(context))
    }
}

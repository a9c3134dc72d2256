use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("non-unique/no Lyapunov solution: eigenvalues of the closed loop pair to zero")]
    SingularLyapunov,

    #[error("eigenvalue iteration did not converge")]
    EigenNonConvergence,

    #[error("pencil (E, A) is not regular")]
    IrregularPencil,

    #[error("impulsive modes present: pencil has index >= 2")]
    ImpulsiveModes,

    #[error("pair (J, B1[{player}]) is not stabilizable")]
    NotStabilizable { player: usize },

    #[error("feedback is not index-preserving: I + X2 B2 F is singular")]
    NotIndexPreserving,

    #[error("closed loop is unstable (max real part {max_real:.6})")]
    UnstableLoop { max_real: f64 },

    #[error("initial state is inconsistent with the algebraic constraint (residual {0:.3e})")]
    InconsistentInitialState(f64),

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),

    #[error("no admissible preimage member found after {0} attempts")]
    PreimageSearchFailed(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

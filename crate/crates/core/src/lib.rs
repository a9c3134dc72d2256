//! Forward and inverse solvers for infinite-horizon linear-quadratic games
//! whose dynamics are descriptor (differential-algebraic) systems.

pub mod error;
pub mod feedback;
pub mod forward;
pub mod game;
pub mod inverse;
pub mod io;
pub mod lane_keeping;
pub mod linalg;
pub mod pencil;

pub use error::{Error, Result};
pub use feedback::{FeedbackProfile, ReducedFeedback, Trajectory};
pub use forward::{EquilibriumSolution, SolverOptions};
pub use game::{reduce_game, CostParameters, DescriptorGame, ReducedGame};
pub use inverse::{Constraints, IdentifyOptions, InverseCertificate, ThetaLayout};
pub use linalg::{Mat, SymMat, Vector};
pub use pencil::{Pencil, WeierstrassData};

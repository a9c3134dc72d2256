use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Forward and inverse solvers for LQ differential games with descriptor
/// dynamics.
///
/// Exit codes: 0 success, 1 usage or input error, 2 model assumption
/// violated (irregular pencil, impulsive modes, not stabilizable, feedback
/// raises the index), 3 no forward solution found, 4 empty inverse solution
/// set, 5 unstable closed loop.
#[derive(Debug, Parser)]
#[command(name = "dgame", version, about, long_about = None)]
#[command(allow_negative_numbers = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pencil analysis and the dynamic/algebraic split.
    Reduce(Common),
    /// Stabilizing feedback Nash equilibria for the given costs.
    Forward(Common),
    /// Cost parameters that rationalize the observed feedback.
    Inverse(InverseArgs),
    /// Identification under the ODE model E = I, checked against the
    /// descriptor conditions.
    Misspecify(MisspecifyArgs),
    /// Membership of candidate cost parameters in the inverse solution set.
    Verify(VerifyArgs),
    /// Closed-loop trajectory of the observed feedback as CSV.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Problem file (JSON with E, A, B and optional costs, F, constraints).
    pub problem: PathBuf,
    /// Seed of every randomized step.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative convergence tolerance of the forward solver.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Random starts of the forward solver.
    #[arg(long, default_value_t = 64)]
    pub starts: usize,
    /// Definiteness margin required of Rᵢᵢ + GᵢᵀQᵢGᵢ [default: 1e-8·(1+‖θ‖)].
    #[arg(long)]
    pub eps_pd: Option<f64>,
    /// Named entry of `cost_sets` to use instead of `costs`.
    #[arg(long)]
    pub cost_set: Option<String>,
    /// Write the JSON report here (atomically).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Behavior {
    /// Initial dynamic state x₁(0), comma separated [default: all ones].
    #[arg(long, value_delimiter = ',')]
    pub x1: Option<Vec<f64>>,
    /// Simulation horizon in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    /// Sampling step in seconds.
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
}

#[derive(Debug, Args)]
pub struct InverseArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub behavior: Behavior,
    /// Recover F from a trajectory CSV (t, x…, u…) instead of the file's F.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Restrict every Qᵢ to its diagonal.
    #[arg(long)]
    pub diagonal_q: bool,
}

#[derive(Debug, Args)]
pub struct MisspecifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub behavior: Behavior,
    /// Use these parameters instead of identifying them under E = I.
    #[arg(long)]
    pub theta: Option<PathBuf>,
    /// Write state and input errors of the closest behavior here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Candidate parameters, `{"theta": [[…], …]}` with one vector per player.
    /// Without it the selected cost set is checked.
    #[arg(long)]
    pub theta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub behavior: Behavior,
    /// Simulate a seeded member of Ω⁻¹(Ω(F)) instead of F itself.
    #[arg(long)]
    pub preimage_seed: Option<u64>,
    /// Trajectory CSV destination [default: stdout].
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Reduce(c) | Command::Forward(c) => c,
            Command::Inverse(a) => &a.common,
            Command::Misspecify(a) => &a.common,
            Command::Verify(a) => &a.common,
            Command::Simulate(a) => &a.common,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Reduce(_) => "reduce",
            Command::Forward(_) => "forward",
            Command::Inverse(_) => "inverse",
            Command::Misspecify(_) => "misspecify",
            Command::Verify(_) => "verify",
            Command::Simulate(_) => "simulate",
        }
    }
}

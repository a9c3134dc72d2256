use std::path::Path;

use dgame_core::feedback::{
    fit_feedback, in_fs, omega, preimage_sample, simulate, FsFailure, Loop, Trajectory,
};
use dgame_core::forward::{
    equilibrium_at, solve_fbne, verify_nash_local, EquilibriumSolution, SolverOptions,
};
use dgame_core::game::reduce_game;
use dgame_core::inverse::{
    assemble, dimension_report, identify, membership, rationalized_behaviors, residual,
    BehaviorOptions, BehaviorReport, IdentifyOptions, InverseCertificate, ThetaLayout,
};
use dgame_core::io::{
    spectrum_json, to_json_matrix, BehaviorJson, BehaviorsReport, ComplexJson, Meta,
    MisspecifyReport, PencilReport, PlayerInverseReport, ProblemFile, ReducedReport, ReportFile,
    ResidualsJson, SolutionReport, VerifyPlayerReport, VerifyReport,
};
use dgame_core::linalg::{self, Vector};
use dgame_core::pencil::{finite_spectrum, index_of, is_regular};
use dgame_core::{CostParameters, DescriptorGame, FeedbackProfile, ReducedFeedback, ReducedGame};
use serde::Deserialize;

use crate::args::{
    Behavior, Command, Common, InverseArgs, MisspecifyArgs, SimulateArgs, VerifyArgs,
};

/// Local-Nash trials and deviation radius used by `verify`.
const NASH_TRIALS: usize = 200;
const NASH_RADIUS: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] dgame_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("observed feedback is not admissible: {0}")]
    Inadmissible(FsFailure),
    #[error("observed feedback is not admissible for the ODE model E = I: {0}")]
    OdeInadmissible(FsFailure),
    #[error("no stabilizing equilibrium found from {0} starts")]
    NoSolution(usize),
    #[error("inverse solution set is empty for player(s) {0:?}")]
    Infeasible(Vec<usize>),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use dgame_core::Error as E;
        match self {
            CliError::Core(
                E::IrregularPencil
                | E::ImpulsiveModes
                | E::NotStabilizable { .. }
                | E::NotIndexPreserving,
            ) => 2,
            CliError::Core(E::UnstableLoop { .. }) => 5,
            CliError::Core(_) | CliError::Usage(_) => 1,
            CliError::Inadmissible(FsFailure::IndexRaised { .. }) => 2,
            CliError::Inadmissible(FsFailure::Unstable { .. }) => 5,
            CliError::OdeInadmissible(FsFailure::Unstable { .. }) => 5,
            CliError::OdeInadmissible(_) => 2,
            CliError::NoSolution(_) => 3,
            CliError::Infeasible(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// A finished command: the report to write and an optional failing verdict
/// that still comes with a report.
pub struct Outcome {
    pub report: ReportFile,
    pub verdict: Option<CliError>,
}

impl Outcome {
    fn ok(report: ReportFile) -> Self {
        Self {
            report,
            verdict: None,
        }
    }
}

pub fn run(cmd: &Command) -> Result<Outcome> {
    let common = cmd.common();
    let problem = ProblemFile::read(&common.problem)?;
    let meta = Meta {
        command: cmd.name().into(),
        seed: common.seed,
        tol: common.tol,
        starts: common.starts,
        eps_pd: common.eps_pd,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    let report = ReportFile::new(meta);
    match cmd {
        Command::Reduce(c) => reduce(&problem, c, report),
        Command::Forward(c) => forward(&problem, c, report),
        Command::Inverse(a) => inverse(&problem, a, report),
        Command::Misspecify(a) => misspecify(&problem, a, report),
        Command::Verify(a) => verify(&problem, a, report),
        Command::Simulate(a) => simulate_cmd(&problem, a, report),
    }
}

fn solver_options(c: &Common) -> SolverOptions {
    SolverOptions {
        n_starts: c.starts,
        seed: c.seed,
        tol: c.tol,
        ..Default::default()
    }
}

fn identify_options(c: &Common) -> IdentifyOptions {
    IdentifyOptions {
        seed: c.seed,
        eps: c.eps_pd,
        ..Default::default()
    }
}

fn behavior_options(b: &Behavior, rg: &ReducedGame) -> Result<BehaviorOptions> {
    let x1_0 = initial_state(b, rg)?;
    Ok(BehaviorOptions {
        x1_0: Some(x1_0),
        horizon: b.horizon,
        dt: b.dt,
        ..Default::default()
    })
}

fn initial_state(b: &Behavior, rg: &ReducedGame) -> Result<Vector> {
    match &b.x1 {
        None => Ok(Vector::from_element(rg.r(), 1.0)),
        Some(v) if v.len() == rg.r() => Ok(Vector::from_row_slice(v)),
        Some(v) => Err(CliError::Usage(format!(
            "--x1 has {} entries, expected r = {}",
            v.len(),
            rg.r()
        ))),
    }
}

fn costs(problem: &ProblemFile, c: &Common) -> Result<CostParameters> {
    problem.cost_set(c.cost_set.as_deref())?.ok_or_else(|| {
        CliError::Usage("problem file has no costs (add `costs` or pass --cost-set)".into())
    })
}

fn observed_feedback(
    problem: &ProblemFile,
    trajectory: Option<&Path>,
    game: &DescriptorGame,
) -> Result<FeedbackProfile> {
    if let Some(path) = trajectory {
        let traj =
            Trajectory::read_csv(std::fs::File::open(path).map_err(dgame_core::Error::from)?)?;
        let fit = fit_feedback(&traj, &game.input_dims())?;
        println!(
            "fitted F from {} samples (rank {}, residual {:.3e})",
            traj.len(),
            fit.rank,
            fit.residual
        );
        return Ok(fit.profile);
    }
    problem
        .feedback()?
        .ok_or_else(|| CliError::Usage("problem file has no observed feedback `F`".into()))
}

/// `Ω(F)` after checking that `F` is admissible.
fn admissible(rg: &ReducedGame, f: &FeedbackProfile) -> Result<ReducedFeedback> {
    in_fs(rg, f)?.map_err(CliError::Inadmissible)?;
    Ok(omega(rg, f)?)
}

fn solution_report(s: &EquilibriumSolution) -> SolutionReport {
    SolutionReport {
        f_bar: to_json_matrix(&s.f_bar.f_bar),
        p: s.p.iter().map(|p| to_json_matrix(p.as_mat())).collect(),
        spectrum: spectrum_json(&s.spectrum),
        residuals: ResidualsJson {
            lyapunov: s.residuals.lyapunov.clone(),
            stationarity: s.residuals.stationarity,
        },
        iterations: s.iterations,
    }
}

fn behaviors_report(b: &BehaviorReport) -> BehaviorsReport {
    BehaviorsReport {
        count: b.count(),
        matched: b.behaviors.iter().map(|x| x.matches).collect(),
        details: b
            .behaviors
            .iter()
            .map(|x| BehaviorJson {
                f_bar: to_json_matrix(&x.f_bar),
                spectrum: spectrum_json(&x.spectrum),
                matched: x.matches,
                input_distance: x.input_distance,
            })
            .collect(),
    }
}

fn format_spectrum(ev: &[ComplexJson]) -> String {
    ev.iter()
        .map(|z| format!("{:.4}{:+.4}i", z.re, z.im))
        .collect::<Vec<_>>()
        .join(", ")
}

fn pencil_report(game: &DescriptorGame) -> Result<PencilReport> {
    let p = game.pencil();
    let split = game.split();
    let index = index_of(&p)?;
    let note = (index == 0)
        .then(|| "E is invertible: standard LQ differential game, no algebraic part".to_string());
    Ok(PencilReport {
        regular: is_regular(&p),
        index,
        r: split.r,
        finite_spectrum: spectrum_json(&finite_spectrum(&p)?),
        note,
    })
}

fn reduce(problem: &ProblemFile, _c: &Common, mut report: ReportFile) -> Result<Outcome> {
    let game = problem.game()?;
    let rg = reduce_game(&game);
    let pencil = pencil_report(&game)?;
    println!(
        "regular pencil, index {}, r = {} (n = {}), finite spectrum [{}]",
        pencil.index,
        pencil.r,
        game.n(),
        format_spectrum(&pencil.finite_spectrum)
    );
    if let Some(note) = &pencil.note {
        println!("{note}");
    }
    report.pencil = Some(pencil);
    report.reduced = Some(ReducedReport {
        j: to_json_matrix(&rg.j),
        b1: rg.b1_bar.iter().map(to_json_matrix).collect(),
        b2: rg.b2_bar.iter().map(to_json_matrix).collect(),
        x1: to_json_matrix(&rg.split.x1),
        x2: to_json_matrix(&rg.split.x2),
    });
    Ok(Outcome::ok(report))
}

fn forward(problem: &ProblemFile, c: &Common, mut report: ReportFile) -> Result<Outcome> {
    let game = problem.game()?;
    let rg = reduce_game(&game);
    let costs = costs(problem, c)?;
    let set = solve_fbne(&rg, &costs, &solver_options(c))?;
    println!(
        "{} stabilizing equilibria ({} starts, {} converged runs)",
        set.solutions.len(),
        set.starts,
        set.converged_runs
    );
    for (k, s) in set.solutions.iter().enumerate() {
        println!(
            "  #{k}: spectrum [{}], residual {:.2e}",
            format_spectrum(&spectrum_json(&s.spectrum)),
            s.residuals.max()
        );
    }
    report.pencil = Some(pencil_report(&game)?);
    report.forward = Some(set.solutions.iter().map(solution_report).collect());
    let verdict = set
        .solutions
        .is_empty()
        .then_some(CliError::NoSolution(set.starts));
    Ok(Outcome { report, verdict })
}

fn player_reports(cert: &InverseCertificate, rg: &ReducedGame) -> Vec<PlayerInverseReport> {
    let dims = dimension_report(cert, rg);
    cert.players
        .iter()
        .zip(dims)
        .map(|(p, d)| PlayerInverseReport {
            player: p.player,
            residual: p.residual,
            pd_margin: p.pd_margin,
            feasible: p.feasible,
            theta: p.theta.iter().copied().collect(),
            kernel_dim: d.kernel_dim,
            bound: d.l.saturating_sub(d.r_mi),
        })
        .collect()
}

fn inverse(problem: &ProblemFile, a: &InverseArgs, mut report: ReportFile) -> Result<Outcome> {
    let game = problem.game()?;
    let rg = reduce_game(&game);
    let f = observed_feedback(problem, a.trajectory.as_deref(), &game)?;
    let f_bar = admissible(&rg, &f)?;
    let mut constraints = problem.constraints();
    constraints.diagonal_q |= a.diagonal_q;
    let cert = identify(&rg, &f_bar, &constraints, &identify_options(&a.common))?;
    let players = player_reports(&cert, &rg);
    for p in &players {
        println!(
            "player {}: residual {:.3e}, margin {:.3e}, kernel dim {} (bound {}), {}",
            p.player,
            p.residual,
            p.pd_margin,
            p.kernel_dim,
            p.bound,
            if p.feasible { "feasible" } else { "infeasible" }
        );
    }
    report.inverse = Some(players);
    if !cert.feasible() {
        let bad = cert
            .players
            .iter()
            .filter(|p| !p.feasible)
            .map(|p| p.player)
            .collect();
        return Ok(Outcome {
            report,
            verdict: Some(CliError::Infeasible(bad)),
        });
    }
    let behaviors = rationalized_behaviors(
        &rg,
        &cert.costs()?,
        &f_bar,
        &solver_options(&a.common),
        &behavior_options(&a.behavior, &rg)?,
    )?;
    println!(
        "identified costs rationalize {} behavior(s), {} matching the observation",
        behaviors.count(),
        behaviors.matching()
    );
    report.behaviors = Some(behaviors_report(&behaviors));
    Ok(Outcome::ok(report))
}

#[derive(Debug, Deserialize)]
struct ThetaFile {
    theta: Vec<Vec<f64>>,
}

fn read_theta(path: &Path, layout: &ThetaLayout, players: usize) -> Result<Vec<Vector>> {
    let text = std::fs::read_to_string(path).map_err(dgame_core::Error::from)?;
    let file: ThetaFile = serde_json::from_str(&text).map_err(dgame_core::Error::from)?;
    if file.theta.len() != players {
        return Err(CliError::Usage(format!(
            "theta file has {} vectors, expected one per player ({players})",
            file.theta.len()
        )));
    }
    file.theta
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.len() == layout.len() {
                Ok(Vector::from_row_slice(t))
            } else {
                Err(CliError::Usage(format!(
                    "theta[{i}] has length {}, expected L = {}",
                    t.len(),
                    layout.len()
                )))
            }
        })
        .collect()
}

fn misspecify(
    problem: &ProblemFile,
    a: &MisspecifyArgs,
    mut report: ReportFile,
) -> Result<Outcome> {
    let game = problem.game()?;
    let rg = reduce_game(&game);
    let f = observed_feedback(problem, None, &game)?;
    let f_bar = admissible(&rg, &f)?;
    let layout = ThetaLayout::for_game(&rg);
    let thetas = match &a.theta {
        Some(path) => read_theta(path, &layout, rg.n_players())?,
        None => {
            let ode = reduce_game(&game.as_ode()?);
            // the ODE model sees F itself, not its class, so a preimage
            // member can be admissible for E and still unstable for E = I
            in_fs(&ode, &f)?.map_err(CliError::OdeInadmissible)?;
            let cert = identify(
                &ode,
                &omega(&ode, &f)?,
                &problem.constraints(),
                &identify_options(&a.common),
            )?;
            if !cert.feasible() {
                let bad = cert
                    .players
                    .iter()
                    .filter(|p| !p.feasible)
                    .map(|p| p.player)
                    .collect();
                report.inverse = Some(player_reports(&cert, &ode));
                return Ok(Outcome {
                    report,
                    verdict: Some(CliError::Infeasible(bad)),
                });
            }
            cert.players.iter().map(|p| p.theta.clone()).collect()
        }
    };
    let m = assemble(&rg, &f_bar)?.m;
    let descriptor_residuals = thetas
        .iter()
        .enumerate()
        .map(|(i, t)| residual(&m[i], t))
        .collect::<dgame_core::Result<Vec<_>>>()?;
    for (i, r) in descriptor_residuals.iter().enumerate() {
        println!("player {i}: descriptor residual ‖𝓜ᵢθᵢ‖ = {r:.4}");
    }
    let opts = behavior_options(&a.behavior, &rg)?;
    let costs = layout.costs_from(&thetas)?;
    let behaviors = rationalized_behaviors(&rg, &costs, &f_bar, &solver_options(&a.common), &opts)?;
    println!(
        "misspecified costs give {} behavior(s), {} matching the observation",
        behaviors.count(),
        behaviors.matching()
    );
    let x1_0 = opts.x1_0.clone().expect("set by behavior_options");
    let reference = simulate(&rg, Loop::Reduced(&f_bar), &x1_0, opts.horizon, opts.dt)?;
    let trajectories = behaviors
        .behaviors
        .iter()
        .map(|b| {
            let fb = ReducedFeedback::for_game(b.f_bar.clone(), &rg)?;
            simulate(&rg, Loop::Reduced(&fb), &x1_0, opts.horizon, opts.dt)
        })
        .collect::<dgame_core::Result<Vec<_>>>()?;
    if let Some(path) = &a.csv {
        let closest = behaviors
            .behaviors
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.input_distance.total_cmp(&y.1.input_distance))
            .map(|(k, _)| k);
        match closest {
            Some(k) => {
                let t = &trajectories[k];
                let error = Trajectory {
                    times: t.times.clone(),
                    x: t.x.iter().zip(&reference.x).map(|(a, b)| a - b).collect(),
                    u: t.u.iter().zip(&reference.u).map(|(a, b)| a - b).collect(),
                };
                write_csv(path, &error)?;
            }
            None => println!("no behavior to compare, {} not written", path.display()),
        }
    }
    report.misspecify = Some(MisspecifyReport {
        theta: thetas.iter().map(|t| t.iter().copied().collect()).collect(),
        descriptor_residuals,
        state_error_sup: trajectories
            .iter()
            .map(|t| t.state_distance(&reference))
            .collect(),
        input_error_sup: trajectories
            .iter()
            .map(|t| t.input_distance(&reference))
            .collect(),
    });
    report.behaviors = Some(behaviors_report(&behaviors));
    Ok(Outcome::ok(report))
}

fn verify(problem: &ProblemFile, a: &VerifyArgs, mut report: ReportFile) -> Result<Outcome> {
    let game = problem.game()?;
    let rg = reduce_game(&game);
    let layout = ThetaLayout::for_game(&rg);
    let f = observed_feedback(problem, None, &game)?;
    let f_bar = admissible(&rg, &f)?;
    let thetas = match &a.theta {
        Some(path) => read_theta(path, &layout, rg.n_players())?,
        None => {
            let c = costs(problem, &a.common)?;
            (0..rg.n_players())
                .map(|i| layout.to_theta(&c, i))
                .collect()
        }
    };
    let m = assemble(&rg, &f_bar)?.m;
    let mut players = Vec::new();
    for (i, t) in thetas.iter().enumerate() {
        let v = membership(&rg, i, &m[i], t, &layout, a.common.eps_pd)?;
        println!(
            "player {i}: residual {:.3e}, margin {:.3e}, {}",
            v.residual,
            v.pd_margin,
            if v.member { "member" } else { "not a member" }
        );
        players.push(VerifyPlayerReport {
            player: i,
            residual: v.residual,
            pd_margin: v.pd_margin,
            member: v.member,
        });
    }
    let member = players.iter().all(|p| p.member);
    let local_nash = if member {
        let costs = layout.costs_from(&thetas)?;
        let eq = equilibrium_at(&rg, &costs, &f_bar)?;
        let check = verify_nash_local(&rg, &costs, &eq, NASH_TRIALS, NASH_RADIUS, a.common.seed)?;
        println!(
            "local Nash check over {} deviations: {}",
            check.trials,
            if check.passed() { "passed" } else { "violated" }
        );
        Some(check.passed())
    } else {
        None
    };
    report.verify = Some(VerifyReport {
        players,
        member,
        local_nash,
    });
    Ok(Outcome::ok(report))
}

fn write_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    dgame_core::io::write_atomic(path, &buf)?;
    Ok(())
}

fn simulate_cmd(
    problem: &ProblemFile,
    a: &SimulateArgs,
    mut report: ReportFile,
) -> Result<Outcome> {
    let game = problem.game()?;
    let rg = reduce_game(&game);
    let mut f = observed_feedback(problem, None, &game)?;
    let f_bar = admissible(&rg, &f)?;
    if let Some(seed) = a.preimage_seed {
        f = preimage_sample(&rg, &f_bar, Some(seed))?;
    }
    let x1_0 = initial_state(&a.behavior, &rg)?;
    let traj = simulate(
        &rg,
        Loop::Full(&f),
        &x1_0,
        a.behavior.horizon,
        a.behavior.dt,
    )?;
    let spectrum = linalg::eigvals(&rg.closed_loop(&f_bar.f_bar))?;
    match &a.csv {
        Some(path) => {
            write_csv(path, &traj)?;
            println!(
                "{} samples written to {}, closed-loop spectrum [{}]",
                traj.len(),
                path.display(),
                format_spectrum(&spectrum_json(&spectrum))
            );
        }
        None => {
            traj.write_csv(std::io::stdout().lock())?;
        }
    }
    report.pencil = Some(pencil_report(&game)?);
    Ok(Outcome::ok(report))
}

//! Dispatch a validated problem to its solver and check the result.
//!
//! Every check is recomputed from the returned trajectory alone, using the
//! same three-point derivative on the output grid that a reader of the CSV
//! would use:
//!
//! * `action_rate`: `max |ż − L(q, v, z)|` (with `F(x, u, z)` for control
//!   problems), tolerance `1e-6`.
//! * `endpoint`: `‖q(t_end) − q1‖∞`, tolerance `max(1e-8, tol)`.
//! * `constraint_drift`: `max |ψ|` at the nodes; for control problems
//!   `max |X(x, u, z) − ẋ|`. Tolerance `1e-6`.
//! * `stationarity`: `max |∂F/∂u − μ·∂X/∂u|`, tolerance `max(1e-8, tol)`.

use std::time::Instant;

use herglotz::contact::{differentiate, first_variation, DEFAULT_VARIATION_EPS};
use herglotz::control::{hocp_as_vakonomic, max_stationarity, solve_hocp, ControlProblem, HocpConfig};
use herglotz::dynamics::integrate_herglotz;
use herglotz::numkit::NewtonConfig;
use herglotz::vakonomic::{
    constraint_drift, extended_lagrangian, integrate_vakonomic, solve_vakonomic_bvp, ShootingConfig,
};
use herglotz::{ContactLagrangian, DiscretePath, ExtendedState, OdeConfig, Variation, VakonomicProblem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::problem::{Problem, ProblemFile, SolverSettings};
use crate::CliError;

pub const ACTION_RATE_TOL: f64 = 1e-6;
pub const ENDPOINT_TOL: f64 = 1e-8;
pub const DRIFT_TOL: f64 = 1e-6;
pub const STATIONARITY_TOL: f64 = 1e-8;
pub const VARIATION_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub kind: String,
    pub nodes: usize,
    /// Newton iterations of the shooting solve, if there was one.
    pub solver_iterations: Option<usize>,
    pub checks: Vec<Check>,
    pub all_passed: bool,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub path: DiscretePath,
    pub report: RunReport,
}

fn ode(t_span: (f64, f64), s: &SolverSettings) -> OdeConfig {
    OdeConfig::new(t_span.0, t_span.1, s.dt)
}

fn newton(base: NewtonConfig, s: &SolverSettings) -> NewtonConfig {
    NewtonConfig {
        abs_tol: s.tol,
        max_iter: s.max_iter,
        ..base
    }
}

fn solver(e: herglotz::Error) -> CliError {
    CliError::Solver(e)
}

/// Solve the problem and evaluate every applicable check.
pub fn run(pf: &ProblemFile) -> Result<RunOutput, CliError> {
    let started = Instant::now();
    let s = &pf.solver;
    let (path, iterations, checks) = match &pf.problem {
        Problem::HerglotzIvp {
            lagrangian,
            start,
            t_span,
        } => {
            let path = integrate_herglotz(lagrangian, start, &ode(*t_span, s)).map_err(solver)?;
            let checks = vec![action_rate(&path, lagrangian)?];
            (path, None, checks)
        }
        Problem::HerglotzBvp { problem, guess } | Problem::VakonomicBvp { problem, guess } => {
            let cfg = ShootingConfig {
                dt: s.dt,
                newton: newton(ShootingConfig::default().newton, s),
            };
            let sol = solve_vakonomic_bvp(problem, guess, &cfg).map_err(solver)?;
            let checks = vakonomic_checks(problem, &sol.path, s)?;
            (sol.path, Some(sol.iterations), checks)
        }
        Problem::VakonomicIvp { problem, v0, mu0 } => {
            let b = problem.boundary();
            let s0 = ExtendedState::new(b.q0.clone(), v0.clone(), b.z0, mu0.clone());
            let path = integrate_vakonomic(problem, &s0, &ode(b.t_span, s)).map_err(solver)?;
            let checks = vakonomic_checks(problem, &path, s)?;
            (path, None, checks)
        }
        Problem::Hocp {
            problem,
            mu_guess,
            u_guess,
        } => {
            let cfg = HocpConfig {
                dt: s.dt,
                newton: newton(NewtonConfig::default(), s),
                u_guess: u_guess.clone(),
            };
            let sol = solve_hocp(problem, mu_guess, &cfg).map_err(solver)?;
            let checks = control_checks(problem, &sol.path, s)?;
            (sol.path, Some(sol.iterations), checks)
        }
    };
    let all_passed = checks.iter().all(|c| c.passed);
    Ok(RunOutput {
        report: RunReport {
            kind: pf.kind.name().to_string(),
            nodes: path.len(),
            solver_iterations: iterations,
            checks,
            all_passed,
            wall_time_seconds: started.elapsed().as_secs_f64(),
        },
        path,
    })
}

fn z_rate(path: &DiscretePath) -> Vec<f64> {
    let z: Vec<Vec<f64>> = path.z.as_ref().expect("solvers return z").iter().map(|&x| vec![x]).collect();
    differentiate(&path.times, &z).into_iter().map(|r| r[0]).collect()
}

fn action_rate(path: &DiscretePath, l: &ContactLagrangian) -> Result<Check, CliError> {
    let z = path.z.as_ref().expect("solvers return z");
    let rate = z_rate(path);
    let mut worst: f64 = 0.0;
    for i in 0..path.len() {
        let lv = l.eval(&path.q[i], &path.v[i], z[i]).map_err(solver)?;
        worst = worst.max((rate[i] - lv).abs());
    }
    Ok(Check::new("action_rate", worst, ACTION_RATE_TOL))
}

fn vakonomic_checks(p: &VakonomicProblem, path: &DiscretePath, s: &SolverSettings) -> Result<Vec<Check>, CliError> {
    let mut checks = vec![action_rate(path, p.lagrangian())?];
    if let Some(q1) = &p.boundary().q1 {
        let end = path.q.last().unwrap();
        let err = p.dynamic_coords().iter().map(|&i| (end[i] - q1[i]).abs()).fold(0.0, f64::max);
        checks.push(Check::new("endpoint", err, ENDPOINT_TOL.max(s.tol)));
    }
    if p.k() > 0 {
        let drift = constraint_drift(p, path).map_err(solver)?.into_iter().fold(0.0, f64::max);
        checks.push(Check::new("constraint_drift", drift, DRIFT_TOL));
    }
    Ok(checks)
}

fn control_checks(cp: &ControlProblem, path: &DiscretePath, s: &SolverSettings) -> Result<Vec<Check>, CliError> {
    let z = path.z.as_ref().expect("control paths carry z");
    let u = path.u.as_ref().expect("control paths carry u");
    let slice = |i: usize| -> Vec<f64> {
        let mut y = path.q[i].clone();
        y.extend_from_slice(&u[i]);
        y.push(z[i]);
        y
    };
    let rate = z_rate(path);
    let xdot = differentiate(&path.times, &path.q);
    let (mut action, mut drift) = (0.0f64, 0.0f64);
    for i in 0..path.len() {
        let y = slice(i);
        let f = cp.cost().eval_slots(&y).map_err(|e| solver(e.into()))?;
        action = action.max((rate[i] - f).abs());
        for (j, xj) in cp.dynamics().iter().enumerate() {
            let x = xj.eval_slots(&y).map_err(|e| solver(e.into()))?;
            drift = drift.max((x - xdot[i][j]).abs());
        }
    }
    let x_b = cp.boundary().x_b.as_ref().expect("validated");
    let end = path.q.last().unwrap();
    let endpoint = end.iter().zip(x_b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(vec![
        Check::new("action_rate", action, ACTION_RATE_TOL),
        Check::new("endpoint", endpoint, ENDPOINT_TOL.max(s.tol)),
        Check::new("constraint_drift", drift, DRIFT_TOL),
        Check::new(
            "stationarity",
            max_stationarity(cp, path).map_err(solver)?,
            STATIONARITY_TOL.max(s.tol),
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariationReport {
    pub seed: u64,
    pub values: Vec<f64>,
    pub max_abs: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// First variation of the contact action of a solved trajectory along
/// `count` random smooth directions vanishing at both ends.
///
/// Constrained problems are certified through their extended Lagrangian,
/// with the multipliers varied alongside the coordinates.
pub fn certify(pf: &ProblemFile, out: &RunOutput, seed: u64, count: usize) -> Result<VariationReport, CliError> {
    let path = &out.path;
    let (lagrangian, z0, positions) = match &pf.problem {
        Problem::HerglotzIvp { lagrangian, start, .. } => (lagrangian.clone(), start.z, path.q.clone()),
        Problem::HerglotzBvp { problem, .. } | Problem::VakonomicBvp { problem, .. } | Problem::VakonomicIvp { problem, .. } => {
            (extended_lagrangian(problem), problem.boundary().z0, with_multipliers(path, &path.q))
        }
        Problem::Hocp { problem, .. } => {
            let vp = hocp_as_vakonomic(problem).map_err(solver)?;
            let u = path.u.as_ref().expect("control paths carry u");
            let xu: Vec<Vec<f64>> = path.q.iter().zip(u).map(|(x, u)| x.iter().chain(u).copied().collect()).collect();
            (extended_lagrangian(&vp), problem.boundary().z0, with_multipliers(path, &xu))
        }
    };
    let curve = DiscretePath::from_positions(path.times.clone(), positions).map_err(solver)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..count)
        .map(|_| {
            let dir = Variation::random_smooth(&curve.times, curve.dim(), 4, &mut rng);
            first_variation(&lagrangian, &curve, z0, &dir, DEFAULT_VARIATION_EPS)
        })
        .collect::<herglotz::Result<Vec<f64>>>()
        .map_err(solver)?;
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(VariationReport {
        seed,
        values,
        max_abs,
        tolerance: VARIATION_TOL,
        passed: max_abs <= VARIATION_TOL,
    })
}

fn with_multipliers(path: &DiscretePath, coords: &[Vec<f64>]) -> Vec<Vec<f64>> {
    match &path.mu {
        Some(mu) => coords.iter().zip(mu).map(|(q, m)| q.iter().chain(m).copied().collect()).collect(),
        None => coords.to_vec(),
    }
}

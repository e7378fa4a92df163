//! Problem files.
//!
//! A problem file is TOML:
//!
//! ```toml
//! kind = "herglotz_ivp"          # herglotz_ivp | herglotz_bvp | vakonomic | hocp
//! n = 1
//!
//! [params]
//! w = 1.0
//! g = 0.1
//!
//! [expressions]
//! lagrangian = "v1^2/2 - w^2*q1^2/2 - g*z"
//!
//! [boundary]
//! t_span = [0.0, 10.0]
//! q0 = [1.0]
//! v0 = [0.0]
//!
//! [solver]
//! dt = 1e-3
//!
//! [output]
//! csv = "oscillator.csv"
//! ```
//!
//! Every expression is parsed while loading, so a bad file fails before any
//! solving starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use herglotz::control::{ControlBoundary, ControlProblem};
use herglotz::vakonomic::{Boundary, BvpGuess, VakonomicProblem};
use herglotz::{ContactLagrangian, ContactState, Env};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    HerglotzIvp,
    HerglotzBvp,
    Vakonomic,
    Hocp,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::HerglotzIvp => "herglotz_ivp",
            Kind::HerglotzBvp => "herglotz_bvp",
            Kind::Vakonomic => "vakonomic",
            Kind::Hocp => "hocp",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    kind: Kind,
    n: usize,
    m: Option<usize>,
    k: Option<usize>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    #[serde(default)]
    expressions: RawExpressions,
    #[serde(default)]
    boundary: RawBoundary,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExpressions {
    lagrangian: Option<String>,
    #[serde(default)]
    constraints: Vec<String>,
    dynamics: Option<Vec<String>>,
    cost: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    t_span: Option<[f64; 2]>,
    q0: Option<Vec<f64>>,
    v0: Option<Vec<f64>>,
    q1: Option<Vec<f64>>,
    mu0: Option<Vec<f64>>,
    x_a: Option<Vec<f64>>,
    x_b: Option<Vec<f64>>,
    #[serde(default)]
    z0: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    dt: Option<f64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    v0_guess: Option<Vec<f64>>,
    mu0_guess: Option<Vec<f64>>,
    u_guess: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    csv: Option<PathBuf>,
    report: Option<PathBuf>,
}

/// Numerical settings shared by every kind.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub dt: f64,
    /// Newton residual tolerance for shooting.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            tol: 1e-10,
            max_iter: 50,
        }
    }
}

/// A validated problem, ready to run.
#[derive(Debug, Clone)]
pub enum Problem {
    HerglotzIvp {
        lagrangian: ContactLagrangian,
        start: ContactState,
        t_span: (f64, f64),
    },
    HerglotzBvp {
        problem: VakonomicProblem,
        guess: BvpGuess,
    },
    VakonomicIvp {
        problem: VakonomicProblem,
        v0: Vec<f64>,
        mu0: Vec<f64>,
    },
    VakonomicBvp {
        problem: VakonomicProblem,
        guess: BvpGuess,
    },
    Hocp {
        problem: ControlProblem,
        mu_guess: Vec<f64>,
        u_guess: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub kind: Kind,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub problem: Problem,
    pub solver: SolverSettings,
    pub csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// Read and validate a problem file. Relative output paths are resolved
/// against the file's directory.
pub fn load_problem(path: &Path) -> Result<ProblemFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut pf = parse_problem(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    for out in [&mut pf.csv, &mut pf.report].into_iter().flatten() {
        if out.is_relative() {
            *out = base.join(&*out);
        }
    }
    Ok(pf)
}

/// Validate problem-file text.
pub fn parse_problem(text: &str) -> Result<ProblemFile, CliError> {
    let raw: RawFile = toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
    build(raw)
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Schema(msg.into())
}

fn required<T: Clone>(value: &Option<T>, field: &str, kind: Kind) -> Result<T, CliError> {
    value
        .clone()
        .ok_or_else(|| schema(format!("{field} required for kind={}", kind.name())))
}

fn forbid<T>(value: &Option<T>, field: &str, kind: Kind) -> Result<(), CliError> {
    match value {
        Some(_) => Err(schema(format!("{field} is not used by kind={}", kind.name()))),
        None => Ok(()),
    }
}

fn check_len(values: &[f64], expected: usize, field: &str, what: &str) -> Result<(), CliError> {
    if values.len() == expected {
        Ok(())
    } else {
        Err(schema(format!(
            "{field} has {} entries, expected {what} = {expected}",
            values.len()
        )))
    }
}

fn expression(field: &str, r: herglotz::Result<impl Sized>) -> Result<(), CliError> {
    r.map(|_| ()).map_err(|source| CliError::Expression {
        field: field.to_string(),
        source,
    })
}

fn build(raw: RawFile) -> Result<ProblemFile, CliError> {
    let kind = raw.kind;
    let n = raw.n;
    if n == 0 {
        return Err(schema("n must be at least 1"));
    }
    let params: Env = raw.params.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let solver = settings(&raw.solver)?;
    let b = &raw.boundary;
    let e = &raw.expressions;
    let t_span = {
        let [a, c] = required(&b.t_span, "boundary.t_span", kind)?;
        if !(a.is_finite() && c.is_finite() && c > a) {
            return Err(schema(format!("boundary.t_span must be increasing, got [{a}, {c}]")));
        }
        (a, c)
    };

    if kind != Kind::Hocp {
        forbid(&raw.m, "m", kind)?;
        forbid(&e.dynamics, "expressions.dynamics", kind)?;
        forbid(&e.cost, "expressions.cost", kind)?;
        forbid(&b.x_a, "boundary.x_a", kind)?;
        forbid(&b.x_b, "boundary.x_b", kind)?;
        forbid(&raw.solver.u_guess, "solver.u_guess", kind)?;
    }
    if kind != Kind::Vakonomic {
        let k = raw.k.unwrap_or(0);
        if k != 0 || !e.constraints.is_empty() {
            return Err(schema(format!("constraints are only allowed for kind=vakonomic, not kind={}", kind.name())));
        }
        forbid(&b.mu0, "boundary.mu0", kind)?;
    }

    let (m, k, problem) = match kind {
        Kind::HerglotzIvp => {
            forbid(&b.q1, "boundary.q1", kind)?;
            let src = required(&e.lagrangian, "expressions.lagrangian", kind)?;
            let lagrangian = ContactLagrangian::parse(n, &src, &params)
                .map_err(|source| CliError::Expression { field: "expressions.lagrangian".into(), source })?;
            let q0 = required(&b.q0, "boundary.q0", kind)?;
            let v0 = required(&b.v0, "boundary.v0", kind)?;
            check_len(&q0, n, "boundary.q0", "n")?;
            check_len(&v0, n, "boundary.v0", "n")?;
            let start = ContactState::new(q0, v0, b.z0);
            (0, 0, Problem::HerglotzIvp { lagrangian, start, t_span })
        }
        Kind::HerglotzBvp | Kind::Vakonomic => {
            let src = required(&e.lagrangian, "expressions.lagrangian", kind)?;
            let vars = ContactLagrangian::parse(n, &src, &params)
                .map_err(|source| CliError::Expression { field: "expressions.lagrangian".into(), source })?
                .variables();
            let k = raw.k.unwrap_or(e.constraints.len());
            if k != e.constraints.len() {
                return Err(schema(format!(
                    "k = {k} but expressions.constraints has {} entries",
                    e.constraints.len()
                )));
            }
            for (i, c) in e.constraints.iter().enumerate() {
                expression(
                    &format!("expressions.constraints[{i}]"),
                    herglotz::contact::parse_bound(c, &vars, &params),
                )?;
            }
            let q0 = required(&b.q0, "boundary.q0", kind)?;
            check_len(&q0, n, "boundary.q0", "n")?;
            if let Some(q1) = &b.q1 {
                check_len(q1, n, "boundary.q1", "n")?;
            }
            let refs: Vec<&str> = e.constraints.iter().map(String::as_str).collect();
            let bnd = Boundary {
                q0,
                q1: b.q1.clone(),
                z0: b.z0,
                t_span,
            };
            let problem = VakonomicProblem::parse(n, &src, &refs, &params, bnd)
                .map_err(|source| CliError::Expression { field: "expressions".into(), source })?;
            let problem = if kind == Kind::HerglotzBvp {
                required(&b.q1, "boundary.q1", kind)?;
                forbid(&b.v0, "boundary.v0", kind)?;
                forbid(&raw.solver.mu0_guess, "solver.mu0_guess", kind)?;
                let guess = bvp_guess(&problem, &raw.solver, n, 0)?;
                Problem::HerglotzBvp { problem, guess }
            } else if b.q1.is_some() {
                forbid(&b.v0, "boundary.v0", kind)?;
                forbid(&b.mu0, "boundary.mu0", kind)?;
                let guess = bvp_guess(&problem, &raw.solver, n, k)?;
                Problem::VakonomicBvp { problem, guess }
            } else {
                let v0 = b
                    .v0
                    .clone()
                    .ok_or_else(|| schema("boundary.v0 or boundary.q1 required for kind=vakonomic"))?;
                check_len(&v0, n, "boundary.v0", "n")?;
                let mu0 = b.mu0.clone().unwrap_or_else(|| vec![0.0; k]);
                check_len(&mu0, k, "boundary.mu0", "k")?;
                Problem::VakonomicIvp { problem, v0, mu0 }
            };
            (0, k, problem)
        }
        Kind::Hocp => {
            forbid(&e.lagrangian, "expressions.lagrangian", kind)?;
            forbid(&b.q0, "boundary.q0", kind)?;
            forbid(&b.q1, "boundary.q1", kind)?;
            forbid(&b.v0, "boundary.v0", kind)?;
            forbid(&raw.solver.v0_guess, "solver.v0_guess", kind)?;
            let m = required(&raw.m, "m", kind)?;
            let dynamics = required(&e.dynamics, "expressions.dynamics", kind)?;
            if dynamics.len() != n {
                return Err(schema(format!(
                    "expressions.dynamics has {} entries, expected n = {n}",
                    dynamics.len()
                )));
            }
            let cost = required(&e.cost, "expressions.cost", kind)?;
            let vars = ControlProblem::variables(n, m);
            for (i, d) in dynamics.iter().enumerate() {
                expression(
                    &format!("expressions.dynamics[{i}]"),
                    herglotz::contact::parse_bound(d, &vars, &params),
                )?;
            }
            expression("expressions.cost", herglotz::contact::parse_bound(&cost, &vars, &params))?;
            let x_a = required(&b.x_a, "boundary.x_a", kind)?;
            let x_b = required(&b.x_b, "boundary.x_b", kind)?;
            check_len(&x_a, n, "boundary.x_a", "n")?;
            check_len(&x_b, n, "boundary.x_b", "n")?;
            let mu_guess = raw.solver.mu0_guess.clone().unwrap_or_else(|| vec![0.0; n]);
            check_len(&mu_guess, n, "solver.mu0_guess", "n")?;
            let u_guess = raw.solver.u_guess.clone().unwrap_or_else(|| vec![0.0; m]);
            check_len(&u_guess, m, "solver.u_guess", "m")?;
            let refs: Vec<&str> = dynamics.iter().map(String::as_str).collect();
            let bnd = ControlBoundary {
                x_a,
                x_b: Some(x_b),
                z0: b.z0,
                t_span,
            };
            let problem = ControlProblem::parse(n, m, &refs, &cost, &params, bnd)
                .map_err(|source| CliError::Expression { field: "expressions".into(), source })?;
            (
                m,
                0,
                Problem::Hocp {
                    problem,
                    mu_guess,
                    u_guess,
                },
            )
        }
    };

    Ok(ProblemFile {
        kind,
        n,
        m,
        k,
        problem,
        solver,
        csv: raw.output.csv,
        report: raw.output.report,
    })
}

fn settings(raw: &RawSolver) -> Result<SolverSettings, CliError> {
    let d = SolverSettings::default();
    let s = SolverSettings {
        dt: raw.dt.unwrap_or(d.dt),
        tol: raw.tol.unwrap_or(d.tol),
        max_iter: raw.max_iter.unwrap_or(d.max_iter),
    };
    if !(s.dt > 0.0 && s.dt.is_finite()) {
        return Err(schema(format!("solver.dt must be positive, got {}", s.dt)));
    }
    if !(s.tol > 0.0 && s.tol.is_finite()) {
        return Err(schema(format!("solver.tol must be positive, got {}", s.tol)));
    }
    if s.max_iter == 0 {
        return Err(schema("solver.max_iter must be at least 1"));
    }
    Ok(s)
}

fn bvp_guess(problem: &VakonomicProblem, raw: &RawSolver, n: usize, k: usize) -> Result<BvpGuess, CliError> {
    let mut guess = BvpGuess::straight_line(problem).map_err(CliError::Solver)?;
    if let Some(v0) = &raw.v0_guess {
        check_len(v0, n, "solver.v0_guess", "n")?;
        guess.v0 = v0.clone();
    }
    if let Some(mu0) = &raw.mu0_guess {
        check_len(mu0, k, "solver.mu0_guess", "k")?;
        guess.mu0 = mu0.clone();
    }
    Ok(guess)
}

#[cfg(test)]
mod tests {
    use super::*;

    const OSCILLATOR: &str = r#"
kind = "herglotz_ivp"
n = 1

[params]
w = 1.0
g = 0.1

[expressions]
lagrangian = "v1^2/2 - w^2*q1^2/2 - g*z"

[boundary]
t_span = [0.0, 10.0]
q0 = [1.0]
v0 = [0.0]
"#;

    #[test]
    fn minimal_ivp_file() {
        let pf = parse_problem(OSCILLATOR).unwrap();
        assert_eq!((pf.kind, pf.n, pf.k), (Kind::HerglotzIvp, 1, 0));
        assert_eq!(pf.solver, SolverSettings::default());
        assert!(matches!(pf.problem, Problem::HerglotzIvp { t_span: (0.0, 10.0), .. }));
    }

    #[test]
    fn undeclared_variable_names_field_and_variable() {
        let text = OSCILLATOR.replace("w = 1.0\n", "");
        let err = parse_problem(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expressions.lagrangian"), "{msg}");
        assert!(msg.contains("'w'"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn hocp_requires_final_state() {
        let text = r#"
kind = "hocp"
n = 1
m = 1
[expressions]
dynamics = ["u1"]
cost = "-u1^2/2"
[boundary]
t_span = [0.0, 1.0]
x_a = [0.0]
"#;
        let err = parse_problem(text).unwrap_err();
        assert!(err.to_string().contains("boundary.x_b required for kind=hocp"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_location() {
        let text = OSCILLATOR.replace("v1^2/2 - w^2", "v1^2/2 - (w^2");
        let msg = parse_problem(&text).unwrap_err().to_string();
        assert!(msg.contains("expressions.lagrangian") && msg.contains("offset"), "{msg}");
    }

    #[test]
    fn schema_errors() {
        let msg = parse_problem("n = 1").unwrap_err().to_string();
        assert!(msg.contains("kind"), "{msg}");
        let msg = parse_problem(&OSCILLATOR.replace("[boundary]", "[boundary]\nbogus = 1")).unwrap_err().to_string();
        assert!(msg.contains("bogus"), "{msg}");
        let msg = parse_problem(&OSCILLATOR.replace("q0 = [1.0]", "q0 = [1.0, 2.0]")).unwrap_err().to_string();
        assert!(msg.contains("boundary.q0 has 2 entries"), "{msg}");
        let msg = parse_problem(&OSCILLATOR.replace("v0 = [0.0]", "")).unwrap_err().to_string();
        assert!(msg.contains("boundary.v0 required"), "{msg}");
        let msg = parse_problem(&OSCILLATOR.replace("t_span = [0.0, 10.0]", "t_span = [1.0, 0.0]")).unwrap_err().to_string();
        assert!(msg.contains("t_span"), "{msg}");
    }

    #[test]
    fn constraints_need_vakonomic_kind() {
        let text = OSCILLATOR.replace("lagrangian = ", "constraints = [\"v1\"]\nlagrangian = ");
        let msg = parse_problem(&text).unwrap_err().to_string();
        assert!(msg.contains("constraints"), "{msg}");
    }

    #[test]
    fn vakonomic_ivp_and_bvp_are_distinguished() {
        let base = r#"
kind = "vakonomic"
n = 2
k = 1
[expressions]
lagrangian = "v1^2/2 + v2^2/2"
constraints = ["v2 - q1*v1"]
[boundary]
t_span = [0.0, 1.0]
q0 = [0.0, 0.0]
"#;
        let pf = parse_problem(&format!("{base}q1 = [1.0, 0.5]\n")).unwrap();
        assert!(matches!(pf.problem, Problem::VakonomicBvp { .. }));
        let pf = parse_problem(&format!("{base}v0 = [1.0, 0.0]\n")).unwrap();
        match pf.problem {
            Problem::VakonomicIvp { mu0, .. } => assert_eq!(mu0, vec![0.0]),
            other => panic!("{other:?}"),
        }
        let msg = parse_problem(&base.replace("k = 1", "k = 2")).unwrap_err().to_string();
        assert!(msg.contains("k = 2"), "{msg}");
        let msg = parse_problem(&format!("{base}q1 = [1.0, 0.5]\n").replace("q1*v1", "q3*v1")).unwrap_err().to_string();
        assert!(msg.contains("expressions.constraints[0]") && msg.contains("q3"), "{msg}");
    }

    #[test]
    fn parameter_shadowing_a_variable_is_rejected() {
        let text = OSCILLATOR.replace("w = 1.0", "w = 1.0\nq1 = 2.0");
        let msg = parse_problem(&text).unwrap_err().to_string();
        assert!(msg.contains("q1"), "{msg}");
    }
}

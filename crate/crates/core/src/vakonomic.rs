//! Contact Lagrangians subject to velocity constraints `ψ^α(q, v, z) = 0`.
//!
//! Critical points of the Herglotz action restricted to curves satisfying
//! the constraints are, in the normal case, the Herglotz curves of the
//! extended Lagrangian
//!
//! ```text
//! 𝓛(q, μ, v, μ̇, z) = L(q, v, z) − μ_α ψ^α(q, v, z)
//! ```
//!
//! with the multipliers `μ_α` adjoined as extra coordinates. Their own
//! Herglotz equations are just `ψ^α = 0`, so the system is a DAE. It is
//! integrated by differentiating the constraints once and solving for
//! `(v̇, μ̇)` jointly; constraint drift is measured, not corrected.
//!
//! A coordinate whose velocity appears neither in `L` nor in any `ψ` is
//! treated as algebraic: its Herglotz equation degenerates to
//! `∂𝓛/∂q_a = 0`, which is solved by Newton at every evaluation. This is
//! what makes optimal control problems (where controls carry no velocity)
//! fit the same machinery.
//!
//! The multiplier of the Herglotz constraint itself obeys
//! `λ̇₀ = −λ₀ ∂𝓛/∂z`, and the constraint multipliers are recovered as
//! `λ_α = μ_α λ₀`; see [`normal_multipliers`].

use crate::contact::{indexed_names, pack, parse_bound, ContactLagrangian, DiscretePath};
use crate::dynamics::{constrained_rates, multiplier_from_nodes};
use crate::expr::{BinaryOp, Env, Expr};
use crate::numkit::{
    fd_partial, inf_norm, newton_solve, rk4_integrate, FdConfig, NewtonConfig, NewtonStep, OdeConfig,
};
use crate::{Error, Result};

/// Multiplier norms above this are taken as a sign of an abnormal extremal.
pub const ABNORMAL_MU_NORM: f64 = 1e8;

/// Initial states must satisfy the constraints to this tolerance.
pub const CONSISTENCY_TOL: f64 = 1e-10;

/// Two-point boundary data. `q1` is only needed by the boundary value
/// solver.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    pub q0: Vec<f64>,
    pub q1: Option<Vec<f64>>,
    pub z0: f64,
    pub t_span: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VakonomicProblem {
    lagrangian: ContactLagrangian,
    constraints: Vec<Expr>,
    boundary: Boundary,
    extended: ContactLagrangian,
    dynamic: Vec<usize>,
    algebraic: Vec<usize>,
}

impl VakonomicProblem {
    /// `constraints` may only reference the variables of `lagrangian`.
    pub fn new(lagrangian: ContactLagrangian, constraints: Vec<Expr>, boundary: Boundary) -> Result<Self> {
        let vars = lagrangian.variables();
        let constraints = constraints
            .iter()
            .map(|c| c.relabel(&vars))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let n = lagrangian.dim();
        if boundary.q0.len() != n || boundary.q1.as_ref().is_some_and(|q1| q1.len() != n) {
            return Err(Error::Dimension(format!("boundary data does not have dimension {n}")));
        }
        let (t0, t1) = boundary.t_span;
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(Error::InvalidConfig(format!("invalid time span [{t0}, {t1}]")));
        }
        let extended = build_extended(&lagrangian, &constraints)?;
        let (dynamic, algebraic) = (0..n).partition(|&i| {
            let name = &lagrangian.velocities()[i];
            lagrangian.expr().references(name) || constraints.iter().any(|c| c.references(name))
        });
        Ok(Self {
            lagrangian,
            constraints,
            boundary,
            extended,
            dynamic,
            algebraic,
        })
    }

    /// Parse `L` and the constraints over `q1..qn`, `v1..vn`, `z`.
    pub fn parse(n: usize, lagrangian: &str, constraints: &[&str], params: &Env, boundary: Boundary) -> Result<Self> {
        let l = ContactLagrangian::parse(n, lagrangian, params)?;
        let generated: Vec<String> = indexed_names("mu", constraints.len())
            .into_iter()
            .chain(indexed_names("v_mu", constraints.len()))
            .collect();
        if let Some(clash) = generated.iter().find(|g| params.contains_key(*g)) {
            return Err(Error::NameCollision(clash.clone()));
        }
        let vars = l.variables();
        let psi = constraints
            .iter()
            .map(|src| parse_bound(src, &vars, params))
            .collect::<Result<Vec<_>>>()?;
        Self::new(l, psi, boundary)
    }

    pub fn lagrangian(&self) -> &ContactLagrangian {
        &self.lagrangian
    }

    /// Constraints, resolved against the evaluation slice of [`Self::lagrangian`].
    pub fn constraints(&self) -> &[Expr] {
        &self.constraints
    }

    pub fn boundary(&self) -> &Boundary {
        &self.boundary
    }

    pub fn dim(&self) -> usize {
        self.lagrangian.dim()
    }

    /// Number of constraints.
    pub fn k(&self) -> usize {
        self.constraints.len()
    }

    /// Coordinates with dynamics of their own.
    pub fn dynamic_coords(&self) -> &[usize] {
        &self.dynamic
    }

    /// Coordinates fixed at every instant by `∂𝓛/∂q_a = 0`.
    pub fn algebraic_coords(&self) -> &[usize] {
        &self.algebraic
    }

    /// `ψ^α(q, v, z)` for every constraint.
    pub fn constraint_values(&self, q: &[f64], v: &[f64], z: f64) -> Result<Vec<f64>> {
        let y = pack(q, v, z);
        Ok(self
            .constraints
            .iter()
            .map(|c| c.eval_slots(&y))
            .collect::<std::result::Result<Vec<_>, _>>()?)
    }

    fn extended_slice(&self, q: &[f64], mu: &[f64], v: &[f64], z: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * (q.len() + mu.len()) + 1);
        x.extend_from_slice(q);
        x.extend_from_slice(mu);
        x.extend_from_slice(v);
        x.extend(std::iter::repeat_n(0.0, mu.len()));
        x.push(z);
        x
    }

    /// Solve `∂𝓛/∂q_a = 0` for the algebraic coordinates, starting from the
    /// values in `q`.
    pub fn project_algebraic(&self, q: &[f64], v: &[f64], z: f64, mu: &[f64]) -> Result<Vec<f64>> {
        if self.algebraic.is_empty() {
            return Ok(q.to_vec());
        }
        let fd = FdConfig::default();
        let residual = |qa: &[f64]| -> Result<Vec<f64>> {
            let mut qq = q.to_vec();
            for (&i, &x) in self.algebraic.iter().zip(qa) {
                qq[i] = x;
            }
            let x = self.extended_slice(&qq, mu, v, z);
            self.algebraic
                .iter()
                .map(|&i| fd_partial(|p: &[f64]| self.extended.eval_slice(p), i, &x, &fd))
                .collect()
        };
        let start: Vec<f64> = self.algebraic.iter().map(|&i| q[i]).collect();
        let cfg = NewtonConfig {
            jacobian_step: fd.h2,
            ..NewtonConfig::default()
        };
        let sol = newton_solve(residual, &start, &cfg).map_err(|e| Error::Stationarity(Box::new(e)))?;
        let mut out = q.to_vec();
        for (&i, &x) in self.algebraic.iter().zip(&sol.x) {
            out[i] = x;
        }
        Ok(out)
    }

    fn check_state(&self, s: &ExtendedState) -> Result<()> {
        let n = self.dim();
        if s.q.len() != n || s.v.len() != n || s.mu.len() != self.k() {
            return Err(Error::Dimension(format!(
                "extended state has shape ({}, {}, {}), problem expects ({n}, {n}, {})",
                s.q.len(),
                s.v.len(),
                s.mu.len(),
                self.k()
            )));
        }
        let norm = inf_norm(&s.mu);
        if norm > ABNORMAL_MU_NORM {
            return Err(Error::AbnormalExtremal { norm });
        }
        Ok(())
    }

    /// Rates at `s` after projecting the algebraic coordinates; also returns
    /// the projected positions.
    fn rates(&self, s: &ExtendedState) -> Result<(Vec<f64>, VakonomicRates)> {
        self.check_state(s)?;
        let q = self.project_algebraic(&s.q, &s.v, s.z, &s.mu)?;
        let r = constrained_rates(
            &self.extended,
            &self.constraints,
            &self.dynamic,
            &self.algebraic,
            &q,
            &s.v,
            s.z,
            &s.mu,
            &FdConfig::default(),
        )?;
        let mut dq = s.v.clone();
        for (&i, &d) in self.algebraic.iter().zip(&r.qdot_algebraic) {
            dq[i] = d;
        }
        Ok((
            q,
            VakonomicRates {
                dq,
                dv: r.dv,
                dz: r.lagrangian,
                dmu: r.dmu,
            },
        ))
    }
}

fn build_extended(l: &ContactLagrangian, constraints: &[Expr]) -> Result<ContactLagrangian> {
    let k = constraints.len();
    if k == 0 {
        return Ok(l.clone());
    }
    let mu = indexed_names("mu", k);
    let v_mu = indexed_names("v_mu", k);
    let taken = l.variables();
    if let Some(clash) = mu.iter().chain(&v_mu).find(|g| taken.contains(g)) {
        return Err(Error::NameCollision(clash.clone()));
    }
    let penalty = constraints
        .iter()
        .zip(&mu)
        .map(|(psi, m)| Expr::binary(BinaryOp::Mul, Expr::var(m.clone(), 0), psi.clone()))
        .reduce(|a, b| Expr::binary(BinaryOp::Add, a, b))
        .expect("k > 0");
    let expr = Expr::binary(BinaryOp::Sub, l.expr().clone(), penalty);
    let coords = l.coords().iter().cloned().chain(mu).collect();
    let velocities = l.velocities().iter().cloned().chain(v_mu).collect();
    ContactLagrangian::from_expr(coords, velocities, l.action_name(), &expr)
}

/// The extended Lagrangian `L − μ_α ψ^α` over `(q, μ)`; `L` itself when there
/// are no constraints.
pub fn extended_lagrangian(p: &VakonomicProblem) -> ContactLagrangian {
    p.extended.clone()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub z: f64,
    pub mu: Vec<f64>,
}

impl ExtendedState {
    pub fn new(q: Vec<f64>, v: Vec<f64>, z: f64, mu: Vec<f64>) -> Self {
        Self { q, v, z, mu }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VakonomicRates {
    pub dq: Vec<f64>,
    pub dv: Vec<f64>,
    pub dz: f64,
    pub dmu: Vec<f64>,
}

/// Time derivative of the extended state. Algebraic coordinates in `s.q`
/// are only a starting point; they are re-solved before anything else.
pub fn vakonomic_rhs(p: &VakonomicProblem, s: &ExtendedState) -> Result<VakonomicRates> {
    Ok(p.rates(s)?.1)
}

fn unpack(y: &[f64], n: usize) -> ExtendedState {
    ExtendedState::new(y[..n].to_vec(), y[n..2 * n].to_vec(), y[2 * n], y[2 * n + 1..].to_vec())
}

fn pack_state(s: &ExtendedState) -> Vec<f64> {
    let mut y = pack(&s.q, &s.v, s.z);
    y.extend_from_slice(&s.mu);
    y
}

/// Project `s` and return it with its constraint residual.
fn consistent_start(p: &VakonomicProblem, s: &ExtendedState) -> Result<(ExtendedState, f64)> {
    p.check_state(s)?;
    let q = p.project_algebraic(&s.q, &s.v, s.z, &s.mu)?;
    let residual = inf_norm(&p.constraint_values(&q, &s.v, s.z)?);
    Ok((ExtendedState { q, ..s.clone() }, residual))
}

/// Integrate the index-reduced equations from `s0` with RK4.
///
/// `s0` must satisfy the constraints to [`CONSISTENCY_TOL`] (after the
/// algebraic coordinates are solved for). The returned path carries `z` and,
/// when there are constraints, `μ`. Use [`constraint_drift`] to measure how
/// far the result strays from the constraint surface.
pub fn integrate_vakonomic(p: &VakonomicProblem, s0: &ExtendedState, cfg: &OdeConfig) -> Result<DiscretePath> {
    let (start, residual) = consistent_start(p, s0)?;
    if residual > CONSISTENCY_TOL {
        return Err(Error::InconsistentInitialState { residual });
    }
    integrate_from(p, &start, cfg)
}

fn integrate_from(p: &VakonomicProblem, s0: &ExtendedState, cfg: &OdeConfig) -> Result<DiscretePath> {
    let n = p.dim();
    let traj = rk4_integrate(
        |_, y| {
            let r = vakonomic_rhs(p, &unpack(y, n))?;
            let mut out = pack(&r.dq, &r.dv, r.dz);
            out.extend_from_slice(&r.dmu);
            Ok(out)
        },
        &pack_state(s0),
        cfg,
    )?;
    let mut states: Vec<ExtendedState> = traj.states.iter().map(|y| unpack(y, n)).collect();
    if !p.algebraic.is_empty() {
        // the integrated values only track the solution to RK accuracy
        for s in &mut states {
            let (q, r) = p.rates(s)?;
            for &i in &p.algebraic {
                s.v[i] = r.dq[i];
            }
            s.q = q;
        }
    }
    let path = DiscretePath::new(
        traj.times,
        states.iter().map(|s| s.q.clone()).collect(),
        states.iter().map(|s| s.v.clone()).collect(),
    )?
    .with_z(states.iter().map(|s| s.z).collect())?;
    if p.k() > 0 {
        path.with_mu(states.into_iter().map(|s| s.mu).collect())
    } else {
        Ok(path)
    }
}

/// `max_α |ψ^α|` at every node of `path`.
pub fn constraint_drift(p: &VakonomicProblem, path: &DiscretePath) -> Result<Vec<f64>> {
    let z = path
        .z
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("constraint drift needs z along the path".into()))?;
    (0..path.len())
        .map(|i| Ok(inf_norm(&p.constraint_values(&path.q[i], &path.v[i], z[i])?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingConfig {
    pub dt: f64,
    pub newton: NewtonConfig,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            newton: NewtonConfig {
                step: NewtonStep::MinNorm { rcond: SHOOTING_RCOND },
                ..NewtonConfig::default()
            },
        }
    }
}

/// Singular values of the shooting Jacobian below this fraction of the
/// largest are treated as gauge directions. Holonomic constraints make the
/// constant part of their multiplier such a direction.
pub const SHOOTING_RCOND: f64 = 1e-4;

/// Starting point for shooting. Entries of `v0` belonging to algebraic
/// coordinates are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct BvpGuess {
    pub v0: Vec<f64>,
    pub mu0: Vec<f64>,
}

impl BvpGuess {
    /// Straight-line velocity between the endpoints and zero multipliers.
    pub fn straight_line(p: &VakonomicProblem) -> Result<Self> {
        let b = &p.boundary;
        let q1 = b.q1.as_ref().ok_or_else(missing_q1)?;
        let span = b.t_span.1 - b.t_span.0;
        Ok(Self {
            v0: b.q0.iter().zip(q1).map(|(a, c)| (c - a) / span).collect(),
            mu0: vec![0.0; p.k()],
        })
    }
}

fn missing_q1() -> Error {
    Error::InvalidConfig("boundary value problem needs a final position q1".into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvpSolution {
    pub path: DiscretePath,
    pub v0: Vec<f64>,
    pub mu0: Vec<f64>,
    pub iterations: usize,
    /// `‖q(t_end) − q1‖∞` over the dynamic coordinates, measured on `path`.
    pub endpoint_residual: f64,
    /// `max_t max_α |ψ^α|` along `path`.
    pub max_drift: f64,
}

/// Single shooting over the initial velocities and multipliers.
///
/// The unknowns are `v(t0)` for the dynamic coordinates and `μ(t0)`. The
/// residual stacks `q(t_end) − q1` over the dynamic coordinates with
/// `ψ(q0, v(t0), z0)`, so the system is square.
pub fn solve_vakonomic_bvp(p: &VakonomicProblem, guess: &BvpGuess, cfg: &ShootingConfig) -> Result<BvpSolution> {
    let b = &p.boundary;
    let q1 = b.q1.clone().ok_or_else(missing_q1)?;
    let (n, k) = (p.dim(), p.k());
    if guess.v0.len() != n || guess.mu0.len() != k {
        return Err(Error::Dimension(format!(
            "shooting guess has {} velocities and {} multipliers, problem has {n} and {k}",
            guess.v0.len(),
            guess.mu0.len()
        )));
    }
    let ode = OdeConfig::new(b.t_span.0, b.t_span.1, cfg.dt);
    ode.validate()?;
    let nd = p.dynamic.len();
    let start_of = |x: &[f64]| {
        let mut v0 = guess.v0.clone();
        for (&i, &vi) in p.dynamic.iter().zip(x) {
            v0[i] = vi;
        }
        ExtendedState::new(b.q0.clone(), v0, b.z0, x[nd..].to_vec())
    };
    let residual = |x: &[f64]| -> Result<Vec<f64>> {
        let (s0, _) = consistent_start(p, &start_of(x))?;
        let mut r = p.constraint_values(&s0.q, &s0.v, s0.z)?;
        let path = integrate_from(p, &s0, &ode)?;
        let end = path.q.last().unwrap();
        let mut out: Vec<f64> = p.dynamic.iter().map(|&i| end[i] - q1[i]).collect();
        out.append(&mut r);
        Ok(out)
    };
    let x0: Vec<f64> = p.dynamic.iter().map(|&i| guess.v0[i]).chain(guess.mu0.iter().copied()).collect();
    let sol = newton_solve(residual, &x0, &cfg.newton)?;

    let (s0, _) = consistent_start(p, &start_of(&sol.x))?;
    let path = integrate_from(p, &s0, &ode)?;
    let end = path.q.last().unwrap();
    let endpoint_residual = p.dynamic.iter().map(|&i| (end[i] - q1[i]).abs()).fold(0.0, f64::max);
    let max_drift = constraint_drift(p, &path)?.into_iter().fold(0.0, f64::max);
    Ok(BvpSolution {
        v0: s0.v,
        mu0: s0.mu,
        iterations: sol.iterations,
        endpoint_residual,
        max_drift,
        path,
    })
}

/// Run [`solve_vakonomic_bvp`] from every guess and keep the distinct
/// solutions (initial data differing by more than `1e-6`).
///
/// Fails with the error of the closest attempt if no guess converges.
pub fn solve_vakonomic_bvp_all(p: &VakonomicProblem, guesses: &[BvpGuess], cfg: &ShootingConfig) -> Result<Vec<BvpSolution>> {
    let mut found: Vec<BvpSolution> = Vec::new();
    let mut best_failure: Option<Error> = None;
    for g in guesses {
        match solve_vakonomic_bvp(p, g, cfg) {
            Ok(s) => {
                let dup = found.iter().any(|f| {
                    let dv = f.v0.iter().zip(&s.v0).map(|(a, b)| (a - b).abs());
                    let dm = f.mu0.iter().zip(&s.mu0).map(|(a, b)| (a - b).abs());
                    dv.chain(dm).fold(0.0, f64::max) <= 1e-6
                });
                if !dup {
                    found.push(s);
                }
            }
            Err(e) => {
                let closer = match (&best_failure, &e) {
                    (None, _) => true,
                    (Some(Error::NoConvergence { residual: old, .. }), Error::NoConvergence { residual, .. }) => residual < old,
                    _ => false,
                };
                if closer {
                    best_failure = Some(e);
                }
            }
        }
    }
    match (found.is_empty(), best_failure) {
        (true, Some(e)) => Err(e),
        (true, None) => Err(Error::InvalidConfig("no shooting guesses supplied".into())),
        _ => Ok(found),
    }
}

/// Multipliers of the unnormalised formulation along a solved path:
/// `λ₀` from `λ̇₀ = −λ₀ ∂𝓛/∂z`, `λ₀(t_end) = 1`, and `λ_α = μ_α λ₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMultipliers {
    pub times: Vec<f64>,
    pub lambda0: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
}

pub fn normal_multipliers(p: &VakonomicProblem, path: &DiscretePath) -> Result<NormalMultipliers> {
    path.validate()?;
    let z = path
        .z
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("multipliers need z along the path".into()))?;
    let k = p.k();
    let mu: Vec<Vec<f64>> = match &path.mu {
        Some(mu) => mu.clone(),
        None if k == 0 => vec![Vec::new(); path.len()],
        None => return Err(Error::InvalidConfig("multipliers need μ along the path".into())),
    };
    let nodes: Vec<Vec<f64>> = (0..path.len())
        .map(|i| p.extended_slice(&path.q[i], &mu[i], &path.v[i], z[i]))
        .collect();
    let curve = multiplier_from_nodes(&p.extended, &path.times, &nodes, path)?;
    let lambda = mu
        .iter()
        .zip(&curve.lambda)
        .map(|(m, l0)| m.iter().map(|x| x * l0).collect())
        .collect();
    Ok(NormalMultipliers {
        times: curve.times,
        lambda0: curve.lambda,
        lambda,
    })
}

/// Evaluate `∂𝓛/∂v` and `∂𝓛/∂q` for the original coordinates at a node.
pub fn extended_partials(
    p: &VakonomicProblem,
    q: &[f64],
    v: &[f64],
    z: f64,
    mu: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = p.dim();
    let x = p.extended_slice(q, mu, v, z);
    let fd = FdConfig::default();
    let f = |s: &[f64]| p.extended.eval_slice(s);
    let total = n + mu.len();
    let lv = (0..n).map(|i| fd_partial(f, total + i, &x, &fd)).collect::<Result<_>>()?;
    let lq = (0..n).map(|i| fd_partial(f, i, &x, &fd)).collect::<Result<_>>()?;
    Ok((lv, lq))
}

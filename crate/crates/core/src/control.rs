//! Herglotz optimal control: maximise `z(b)` subject to `ẋ = X(x, u, z)`,
//! `ż = F(x, u, z)`, `x(a) = x_a`, `x(b) = x_b`, `z(a) = z0`.
//!
//! Extremals satisfy
//!
//! ```text
//! ẋ^i = X^i
//! μ̇_i = μ_i ∂F/∂z − μ_j ∂X^j/∂x^i + ∂F/∂x^i − (∂X^j/∂z) μ_i μ_j
//! ż   = F
//! 0   = ∂F/∂u^a − μ_j ∂X^j/∂u^a
//! ```
//!
//! The same curves are the vakonomic Herglotz curves of `L = F` on the
//! `(x, u)` space with constraints `X^i − ẋ^i = 0`
//! ([`hocp_as_vakonomic`]), with `μ` playing the role of the constraint
//! multipliers.
//!
//! The problem is a maximisation. Minimise a cost by negating `F`.

use crate::contact::{indexed_names, parse_bound, ContactLagrangian, DiscretePath};
use crate::expr::{BinaryOp, Env, Expr};
use crate::numkit::{fd_partial, inf_norm, newton_solve, rk4_integrate, FdConfig, NewtonConfig, OdeConfig};
use crate::vakonomic::{Boundary, VakonomicProblem};
use crate::{Error, Result};

/// Residual required of a solved control.
pub const STATIONARITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlBoundary {
    pub x_a: Vec<f64>,
    pub x_b: Option<Vec<f64>>,
    pub z0: f64,
    pub t_span: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    n: usize,
    m: usize,
    dynamics: Vec<Expr>,
    cost: Expr,
    boundary: ControlBoundary,
}

impl ControlProblem {
    /// Variables in evaluation-slice order: `x1..xn, u1..um, z`.
    pub fn variables(n: usize, m: usize) -> Vec<String> {
        let mut vars = indexed_names("x", n);
        vars.extend(indexed_names("u", m));
        vars.push("z".into());
        vars
    }

    /// `dynamics` and `cost` may only reference [`Self::variables`].
    pub fn new(n: usize, m: usize, dynamics: Vec<Expr>, cost: Expr, boundary: ControlBoundary) -> Result<Self> {
        if dynamics.len() != n {
            return Err(Error::Dimension(format!("{} dynamics expressions for {n} states", dynamics.len())));
        }
        if boundary.x_a.len() != n || boundary.x_b.as_ref().is_some_and(|x| x.len() != n) {
            return Err(Error::Dimension(format!("boundary data does not have dimension {n}")));
        }
        let (a, b) = boundary.t_span;
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(Error::InvalidConfig(format!("invalid time span [{a}, {b}]")));
        }
        let vars = Self::variables(n, m);
        let dynamics = dynamics
            .iter()
            .map(|e| e.relabel(&vars))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let cost = cost.relabel(&vars)?;
        Ok(Self {
            n,
            m,
            dynamics,
            cost,
            boundary,
        })
    }

    pub fn parse(
        n: usize,
        m: usize,
        dynamics: &[&str],
        cost: &str,
        params: &Env,
        boundary: ControlBoundary,
    ) -> Result<Self> {
        let vars = Self::variables(n, m);
        let dynamics = dynamics
            .iter()
            .map(|src| parse_bound(src, &vars, params))
            .collect::<Result<Vec<_>>>()?;
        let cost = parse_bound(cost, &vars, params)?;
        Self::new(n, m, dynamics, cost, boundary)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dynamics(&self) -> &[Expr] {
        &self.dynamics
    }

    pub fn cost(&self) -> &Expr {
        &self.cost
    }

    pub fn boundary(&self) -> &ControlBoundary {
        &self.boundary
    }

    fn slice(&self, x: &[f64], u: &[f64], z: f64) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.n + self.m + 1);
        y.extend_from_slice(x);
        y.extend_from_slice(u);
        y.push(z);
        y
    }

    fn check(&self, x: &[f64], mu: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.n || mu.len() != self.n || u.len() != self.m {
            return Err(Error::Dimension(format!(
                "got ({}, {}, {}) states, costates and controls, problem has ({}, {}, {})",
                x.len(),
                mu.len(),
                u.len(),
                self.n,
                self.n,
                self.m
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlState {
    pub x: Vec<f64>,
    pub mu: Vec<f64>,
    pub z: f64,
    pub u: Vec<f64>,
}

impl ControlState {
    pub fn new(x: Vec<f64>, mu: Vec<f64>, z: f64, u: Vec<f64>) -> Self {
        Self { x, mu, z, u }
    }
}

/// `∂F/∂u^a − μ_j ∂X^j/∂u^a` for every control.
pub fn stationarity_residual(cp: &ControlProblem, x: &[f64], mu: &[f64], z: f64, u: &[f64]) -> Result<Vec<f64>> {
    cp.check(x, mu, u)?;
    let y = cp.slice(x, u, z);
    let fd = FdConfig::default();
    (0..cp.m)
        .map(|a| {
            let slot = cp.n + a;
            let mut r = fd_partial(|p: &[f64]| Ok(cp.cost.eval_slots(p)?), slot, &y, &fd)?;
            for (j, xj) in cp.dynamics.iter().enumerate() {
                r -= mu[j] * fd_partial(|p: &[f64]| Ok(xj.eval_slots(p)?), slot, &y, &fd)?;
            }
            Ok(r)
        })
        .collect()
}

/// Solve the stationarity conditions for `u` by Newton from `u_guess`.
pub fn stationarity_solve(cp: &ControlProblem, x: &[f64], mu: &[f64], z: f64, u_guess: &[f64]) -> Result<Vec<f64>> {
    cp.check(x, mu, u_guess)?;
    if cp.m == 0 {
        return Ok(Vec::new());
    }
    let cfg = NewtonConfig {
        abs_tol: STATIONARITY_TOL,
        jacobian_step: FdConfig::default().h2,
        ..NewtonConfig::default()
    };
    newton_solve(|u| stationarity_residual(cp, x, mu, z, u), u_guess, &cfg)
        .map(|s| s.x)
        .map_err(|e| Error::Stationarity(Box::new(e)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlRates {
    pub dx: Vec<f64>,
    pub dmu: Vec<f64>,
    pub dz: f64,
    /// The control the rates were evaluated at.
    pub u: Vec<f64>,
}

/// State, costate and action rates. `s.u` is the starting point for the
/// stationarity solve.
pub fn control_rhs(cp: &ControlProblem, s: &ControlState) -> Result<ControlRates> {
    let u = stationarity_solve(cp, &s.x, &s.mu, s.z, &s.u)?;
    let (n, mu) = (cp.n, &s.mu);
    let y = cp.slice(&s.x, &u, s.z);
    let fd = FdConfig::default();
    let zi = n + cp.m;
    let f = |p: &[f64]| -> Result<f64> { Ok(cp.cost.eval_slots(p)?) };
    let dx = cp
        .dynamics
        .iter()
        .map(|e| e.eval_slots(&y))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let fz = fd_partial(f, zi, &y, &fd)?;
    let mut xz = Vec::with_capacity(n);
    for xj in &cp.dynamics {
        xz.push(fd_partial(|p: &[f64]| Ok(xj.eval_slots(p)?), zi, &y, &fd)?);
    }
    let mut dmu = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = mu[i] * fz;
        for (j, xj) in cp.dynamics.iter().enumerate() {
            r -= mu[j] * fd_partial(|p: &[f64]| Ok(xj.eval_slots(p)?), i, &y, &fd)?;
        }
        r += fd_partial(f, i, &y, &fd)?;
        for j in 0..n {
            r -= xz[j] * mu[i] * mu[j];
        }
        dmu.push(r);
    }
    Ok(ControlRates {
        dx,
        dmu,
        dz: f(&y)?,
        u,
    })
}

/// The problem as a vakonomic one on the `(x, u)` space: coordinates
/// `x1..xn, u1..um`, velocities `v_x1.., v_u1..`, `L = F` and constraints
/// `X^i − v_xi`. The boundary controls are zero; they are only starting
/// points for the stationarity solve.
pub fn hocp_as_vakonomic(cp: &ControlProblem) -> Result<VakonomicProblem> {
    let xs = indexed_names("x", cp.n);
    let us = indexed_names("u", cp.m);
    let coords: Vec<String> = xs.iter().chain(&us).cloned().collect();
    let velocities: Vec<String> = coords.iter().map(|c| format!("v_{c}")).collect();
    let l = ContactLagrangian::from_expr(coords, velocities.clone(), "z", &cp.cost)?;
    let constraints = cp
        .dynamics
        .iter()
        .zip(&velocities)
        .map(|(x, v)| Expr::binary(BinaryOp::Sub, x.clone(), Expr::var(v.clone(), 0)))
        .collect();
    let b = &cp.boundary;
    let with_controls = |x: &[f64]| -> Vec<f64> { x.iter().copied().chain(std::iter::repeat_n(0.0, cp.m)).collect() };
    let boundary = Boundary {
        q0: with_controls(&b.x_a),
        q1: b.x_b.as_deref().map(with_controls),
        z0: b.z0,
        t_span: b.t_span,
    };
    VakonomicProblem::new(l, constraints, boundary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HocpConfig {
    pub dt: f64,
    pub newton: NewtonConfig,
    /// Starting control at `t = a`; zeros when empty.
    pub u_guess: Vec<f64>,
}

impl Default for HocpConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            newton: NewtonConfig::default(),
            u_guess: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HocpSolution {
    /// `q` holds `x`, `v` holds `ẋ = X`; `mu`, `u` and `z` are all set.
    pub path: DiscretePath,
    pub mu_a: Vec<f64>,
    pub iterations: usize,
    /// `‖x(b) − x_b‖∞` measured on `path`.
    pub endpoint_residual: f64,
    /// Largest stationarity residual over the grid nodes.
    pub max_stationarity: f64,
}

/// Integrate state, costate and action forward from `x_a`, `μ(a) = mu_a`,
/// solving for the control at every stage.
pub fn integrate_control(cp: &ControlProblem, mu_a: &[f64], cfg: &HocpConfig) -> Result<DiscretePath> {
    let (n, m) = (cp.n, cp.m);
    let b = &cp.boundary;
    let u0 = if cfg.u_guess.is_empty() { vec![0.0; m] } else { cfg.u_guess.clone() };
    cp.check(&b.x_a, mu_a, &u0)?;
    let ode = OdeConfig::new(b.t_span.0, b.t_span.1, cfg.dt);
    let mut y0 = b.x_a.clone();
    y0.extend_from_slice(mu_a);
    y0.push(b.z0);
    let mut warm = u0.clone();
    let traj = rk4_integrate(
        |_, y| {
            let s = ControlState::new(y[..n].to_vec(), y[n..2 * n].to_vec(), y[2 * n], warm.clone());
            let r = control_rhs(cp, &s)?;
            warm = r.u;
            let mut out = r.dx;
            out.extend(r.dmu);
            out.push(r.dz);
            Ok(out)
        },
        &y0,
        &ode,
    )?;

    let mut warm = u0;
    let (mut xs, mut vs, mut mus, mut us, mut zs) = (vec![], vec![], vec![], vec![], vec![]);
    for (t, y) in traj.times.iter().zip(&traj.states) {
        let (x, mu, z) = (&y[..n], &y[n..2 * n], y[2 * n]);
        let u = stationarity_solve(cp, x, mu, z, &warm).map_err(|e| Error::Integration {
            t: *t,
            source: Box::new(e),
        })?;
        let sl = cp.slice(x, &u, z);
        vs.push(
            cp.dynamics
                .iter()
                .map(|e| e.eval_slots(&sl))
                .collect::<std::result::Result<Vec<_>, _>>()?,
        );
        xs.push(x.to_vec());
        mus.push(mu.to_vec());
        zs.push(z);
        warm = u.clone();
        us.push(u);
    }
    DiscretePath::new(traj.times, xs, vs)?.with_z(zs)?.with_mu(mus)?.with_u(us)
}

/// Largest stationarity residual over the nodes of a control path.
pub fn max_stationarity(cp: &ControlProblem, path: &DiscretePath) -> Result<f64> {
    let missing = || Error::InvalidConfig("control path needs mu, u and z".into());
    let (mu, u, z) = (
        path.mu.as_ref().ok_or_else(missing)?,
        path.u.as_ref().ok_or_else(missing)?,
        path.z.as_ref().ok_or_else(missing)?,
    );
    let mut worst: f64 = 0.0;
    for i in 0..path.len() {
        worst = worst.max(inf_norm(&stationarity_residual(cp, &path.q[i], &mu[i], z[i], &u[i])?));
    }
    Ok(worst)
}

/// Single shooting over the initial costate `μ(a)`.
pub fn solve_hocp(cp: &ControlProblem, mu_guess: &[f64], cfg: &HocpConfig) -> Result<HocpSolution> {
    let x_b = cp
        .boundary
        .x_b
        .clone()
        .ok_or_else(|| Error::InvalidConfig("optimal control problem needs a final state x_b".into()))?;
    if mu_guess.len() != cp.n {
        return Err(Error::Dimension(format!("costate guess has {} entries, expected {}", mu_guess.len(), cp.n)));
    }
    let residual = |mu: &[f64]| -> Result<Vec<f64>> {
        let path = integrate_control(cp, mu, cfg)?;
        Ok(path.q.last().unwrap().iter().zip(&x_b).map(|(a, b)| a - b).collect())
    };
    let sol = newton_solve(residual, mu_guess, &cfg.newton)?;
    let path = integrate_control(cp, &sol.x, cfg)?;
    let endpoint_residual = inf_norm(&residual_of(&path, &x_b));
    let max_stationarity = max_stationarity(cp, &path)?;
    Ok(HocpSolution {
        path,
        mu_a: sol.x,
        iterations: sol.iterations,
        endpoint_residual,
        max_stationarity,
    })
}

fn residual_of(path: &DiscretePath, target: &[f64]) -> Vec<f64> {
    path.q.last().unwrap().iter().zip(target).map(|(a, b)| a - b).collect()
}

//! Contact Lagrangians, discretised curves, the action operator and the
//! contact action functional.
//!
//! Given a curve `c` with `c(t0) = q0`, `c(t_end) = q1` and a starting value
//! `z0`, the action operator produces `z(t)` solving `ż = L(c, ċ, z)`,
//! `z(t0) = z0`. The contact action is the increment `z(t_end) − z(t0)`;
//! its critical points are the solutions of the Herglotz equations, which
//! [`first_variation`] checks numerically.

use rand::Rng;

use crate::expr::{self, Env, Expr};
use crate::numkit::rk4_on_grid;
use crate::{Error, Result};

/// `["{prefix}1", …, "{prefix}n"]`.
pub fn indexed_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Parse `source` over `vars` plus the named constants in `params`, which
/// are substituted immediately.
pub fn parse_bound(source: &str, vars: &[String], params: &Env) -> Result<Expr> {
    let mut names: Vec<String> = params.keys().cloned().collect();
    names.sort();
    if let Some(clash) = names.iter().find(|p| vars.contains(p)) {
        return Err(Error::NameCollision(clash.clone()));
    }
    let mut allowed = vars.to_vec();
    allowed.extend(names);
    Ok(expr::parse(source, &allowed)?.bind(params))
}

/// A Lagrangian `L(q, v, z)` on `TQ × ℝ`.
///
/// Evaluation slices are laid out as `[q_1..q_n, v_1..v_n, z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactLagrangian {
    coords: Vec<String>,
    velocities: Vec<String>,
    action: String,
    expr: Expr,
}

impl ContactLagrangian {
    /// Lagrangian over `q1..qn`, `v1..vn`, `z`.
    pub fn parse(n: usize, source: &str, params: &Env) -> Result<Self> {
        Self::parse_named(indexed_names("q", n), indexed_names("v", n), "z", source, params)
    }

    pub fn parse_named(
        coords: Vec<String>,
        velocities: Vec<String>,
        action: &str,
        source: &str,
        params: &Env,
    ) -> Result<Self> {
        let layout = Self::layout_of(&coords, &velocities, action)?;
        let expr = parse_bound(source, &layout, params)?;
        Ok(Self {
            coords,
            velocities,
            action: action.to_string(),
            expr,
        })
    }

    /// Wrap an already-built expression, re-resolving its variables against
    /// the new layout.
    pub fn from_expr(
        coords: Vec<String>,
        velocities: Vec<String>,
        action: &str,
        expr: &Expr,
    ) -> Result<Self> {
        let layout = Self::layout_of(&coords, &velocities, action)?;
        let expr = expr.relabel(&layout)?;
        Ok(Self {
            coords,
            velocities,
            action: action.to_string(),
            expr,
        })
    }

    fn layout_of(coords: &[String], velocities: &[String], action: &str) -> Result<Vec<String>> {
        if coords.len() != velocities.len() {
            return Err(Error::Dimension(format!(
                "{} coordinates but {} velocities",
                coords.len(),
                velocities.len()
            )));
        }
        let mut layout: Vec<String> = coords.iter().chain(velocities).cloned().collect();
        layout.push(action.to_string());
        for (i, name) in layout.iter().enumerate() {
            if layout[..i].contains(name) {
                return Err(Error::NameCollision(name.clone()));
            }
        }
        Ok(layout)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn velocities(&self) -> &[String] {
        &self.velocities
    }

    pub fn action_name(&self) -> &str {
        &self.action
    }

    /// Variable names in evaluation-slice order.
    pub fn variables(&self) -> Vec<String> {
        let mut vars: Vec<String> = self.coords.iter().chain(&self.velocities).cloned().collect();
        vars.push(self.action.clone());
        vars
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    /// Index of `z` in the evaluation slice.
    pub fn action_slot(&self) -> usize {
        2 * self.dim()
    }

    pub fn eval_slice(&self, x: &[f64]) -> Result<f64> {
        Ok(self.expr.eval_slots(x)?)
    }

    pub fn eval(&self, q: &[f64], v: &[f64], z: f64) -> Result<f64> {
        self.eval_slice(&pack(q, v, z))
    }
}

/// `[q, v, z]` as one slice.
pub fn pack(q: &[f64], v: &[f64], z: f64) -> Vec<f64> {
    let mut x = Vec::with_capacity(q.len() + v.len() + 1);
    x.extend_from_slice(q);
    x.extend_from_slice(v);
    x.push(z);
    x
}

/// A curve sampled on a strictly increasing time grid.
///
/// `q` and `v` always have one row per grid point. `z`, `mu` and `u` are
/// filled by the solvers that produce them.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    pub times: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub z: Option<Vec<f64>>,
    pub mu: Option<Vec<Vec<f64>>>,
    pub u: Option<Vec<Vec<f64>>>,
}

impl DiscretePath {
    pub fn new(times: Vec<f64>, q: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Result<Self> {
        let path = Self {
            times,
            q,
            v,
            z: None,
            mu: None,
            u: None,
        };
        path.validate()?;
        Ok(path)
    }

    /// Build a path from positions only; velocities are second-order
    /// three-point differences (centred inside, one-sided at the ends).
    pub fn from_positions(times: Vec<f64>, q: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() < 3 {
            return Err(Error::Dimension(
                "at least three grid points are needed to difference positions".into(),
            ));
        }
        if q.len() != times.len() {
            return Err(Error::Dimension(format!(
                "{} positions on a grid of {} points",
                q.len(),
                times.len()
            )));
        }
        let v = differentiate(&times, &q);
        Self::new(times, q, v)
    }

    pub fn with_z(mut self, z: Vec<f64>) -> Result<Self> {
        if z.len() != self.times.len() {
            return Err(Error::Dimension(format!("z has {} samples, grid has {}", z.len(), self.times.len())));
        }
        self.z = Some(z);
        Ok(self)
    }

    pub fn with_mu(mut self, mu: Vec<Vec<f64>>) -> Result<Self> {
        check_rows("mu", &mu, self.times.len(), None)?;
        self.mu = Some(mu);
        Ok(self)
    }

    pub fn with_u(mut self, u: Vec<Vec<f64>>) -> Result<Self> {
        check_rows("u", &u, self.times.len(), None)?;
        self.u = Some(u);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() < 2 {
            return Err(Error::Dimension("a path needs at least two grid points".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("path times must be strictly increasing".into()));
        }
        let n = self.q[0].len();
        check_rows("q", &self.q, self.times.len(), Some(n))?;
        check_rows("v", &self.v, self.times.len(), Some(n))?;
        if let Some(z) = &self.z {
            if z.len() != self.times.len() {
                return Err(Error::Dimension("z length does not match the grid".into()));
            }
        }
        if let Some(mu) = &self.mu {
            check_rows("mu", mu, self.times.len(), None)?;
        }
        if let Some(u) = &self.u {
            check_rows("u", u, self.times.len(), None)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Configuration dimension.
    pub fn dim(&self) -> usize {
        self.q[0].len()
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Segment index and weight for linear interpolation at `t`.
    pub(crate) fn locate(&self, t: f64) -> (usize, f64) {
        let last = self.times.len() - 1;
        let i = self.times.partition_point(|&s| s <= t).saturating_sub(1).min(last - 1);
        let w = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        (i, w)
    }

    /// `(q(t), v(t))` by linear interpolation between grid points.
    pub fn sample(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let (i, w) = self.locate(t);
        (lerp(&self.q[i], &self.q[i + 1], w), lerp(&self.v[i], &self.v[i + 1], w))
    }
}

pub(crate) fn lerp(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect()
}

fn check_rows(name: &str, rows: &[Vec<f64>], len: usize, width: Option<usize>) -> Result<()> {
    if rows.len() != len {
        return Err(Error::Dimension(format!("{name} has {} rows, grid has {len}", rows.len())));
    }
    let width = width.unwrap_or_else(|| rows.first().map_or(0, Vec::len));
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Dimension(format!("{name} rows have inconsistent widths")));
    }
    Ok(())
}

/// Three-point derivative of `values` on a (possibly non-uniform) grid.
pub fn differentiate(times: &[f64], values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = times.len();
    let weights = |k: usize, at: usize| -> [f64; 3] {
        // Lagrange basis derivatives through times[k..k+3], evaluated at times[at]
        let (a, b, c) = (times[k], times[k + 1], times[k + 2]);
        let t = times[at];
        [
            ((t - b) + (t - c)) / ((a - b) * (a - c)),
            ((t - a) + (t - c)) / ((b - a) * (b - c)),
            ((t - a) + (t - b)) / ((c - a) * (c - b)),
        ]
    };
    (0..n)
        .map(|i| {
            let k = i.saturating_sub(1).min(n - 3);
            let w = weights(k, i);
            (0..values[i].len())
                .map(|d| w[0] * values[k][d] + w[1] * values[k + 1][d] + w[2] * values[k + 2][d])
                .collect()
        })
        .collect()
}

/// A displacement field along a path that vanishes at both endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Variation {
    dq: Vec<Vec<f64>>,
}

impl Variation {
    pub fn new(dq: Vec<Vec<f64>>) -> Result<Self> {
        if dq.len() < 2 {
            return Err(Error::Dimension("a variation needs at least two grid points".into()));
        }
        check_rows("variation", &dq, dq.len(), None)?;
        let ends = [&dq[0], dq.last().unwrap()];
        if ends.iter().any(|row| row.iter().any(|&x| x != 0.0)) {
            return Err(Error::InvalidConfig("variation must vanish at both endpoints".into()));
        }
        Ok(Self { dq })
    }

    pub fn zero(len: usize, n: usize) -> Self {
        Self { dq: vec![vec![0.0; n]; len] }
    }

    /// Random combination of the first `modes` sine modes of the interval
    /// in every component, scaled to unit sup-norm.
    pub fn random_smooth<R: Rng + ?Sized>(times: &[f64], n: usize, modes: usize, rng: &mut R) -> Self {
        let (t0, t1) = (times[0], *times.last().unwrap());
        let coeffs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..modes).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let last = times.len() - 1;
        let mut dq: Vec<Vec<f64>> = times
            .iter()
            .enumerate()
            .map(|(idx, &t)| {
                if idx == 0 || idx == last {
                    return vec![0.0; n];
                }
                let s = (t - t0) / (t1 - t0);
                coeffs
                    .iter()
                    .map(|c| {
                        c.iter()
                            .enumerate()
                            .map(|(k, a)| a * ((k + 1) as f64 * std::f64::consts::PI * s).sin())
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let peak = dq.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        if peak > 0.0 {
            dq.iter_mut().flatten().for_each(|x| *x /= peak);
        }
        Self { dq }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            dq: self.dq.iter().map(|r| r.iter().map(|x| a * x).collect()).collect(),
        }
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.dq
    }

    pub fn sup_norm(&self) -> f64 {
        self.dq.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }
}

fn check_lagrangian_fits(l: &ContactLagrangian, path: &DiscretePath) -> Result<()> {
    path.validate()?;
    if path.dim() != l.dim() {
        return Err(Error::Dimension(format!(
            "path has dimension {}, Lagrangian has {}",
            path.dim(),
            l.dim()
        )));
    }
    Ok(())
}

/// Solve `ż = L(q(t), v(t), z)`, `z(t0) = z0` along `path` with RK4 on the
/// path's own grid; `(q, v)` are linearly interpolated inside steps.
pub fn action_z(l: &ContactLagrangian, path: &DiscretePath, z0: f64) -> Result<DiscretePath> {
    check_lagrangian_fits(l, path)?;
    let traj = rk4_on_grid(
        |t, z| {
            let (q, v) = path.sample(t);
            Ok(vec![l.eval(&q, &v, z[0])?])
        },
        &[z0],
        &path.times,
    )?;
    let z = traj.states.into_iter().map(|s| s[0]).collect();
    path.clone().with_z(z)
}

/// The usual Herglotz action `z(t_end)`.
pub fn herglotz_action(l: &ContactLagrangian, path: &DiscretePath, z0: f64) -> Result<f64> {
    let solved = action_z(l, path, z0)?;
    Ok(*solved.z.as_ref().unwrap().last().unwrap())
}

/// Contact action `z(t_end) − z(t0)`.
pub fn contact_action(l: &ContactLagrangian, path: &DiscretePath, z0: f64) -> Result<f64> {
    Ok(herglotz_action(l, path, z0)? - z0)
}

/// Central difference of the contact action along `dir`:
/// `(A(q + ε δq) − A(q − ε δq)) / 2ε`, where each perturbed curve gets
/// velocities recomputed from its positions.
pub fn first_variation(
    l: &ContactLagrangian,
    path: &DiscretePath,
    z0: f64,
    dir: &Variation,
    eps: f64,
) -> Result<f64> {
    check_lagrangian_fits(l, path)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!("variation step must be positive, got {eps}")));
    }
    if dir.dq.len() != path.len() || dir.dq.iter().any(|r| r.len() != path.dim()) {
        return Err(Error::Dimension("variation does not match the path".into()));
    }
    let perturbed = |sign: f64| -> Result<f64> {
        let q: Vec<Vec<f64>> = path
            .q
            .iter()
            .zip(&dir.dq)
            .map(|(q, d)| q.iter().zip(d).map(|(a, b)| a + sign * eps * b).collect())
            .collect();
        let p = DiscretePath::from_positions(path.times.clone(), q)?;
        contact_action(l, &p, z0)
    };
    Ok((perturbed(1.0)? - perturbed(-1.0)?) / (2.0 * eps))
}

/// Default perturbation size for [`first_variation`] with unit-norm
/// directions.
pub const DEFAULT_VARIATION_EPS: f64 = 1e-5;

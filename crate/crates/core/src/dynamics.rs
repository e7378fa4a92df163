//! The Herglotz equations as an explicit initial value problem, and the
//! multiplier `λ(t)` of the constrained formulation.
//!
//! For a regular contact Lagrangian the equations
//! `d/dt ∂L/∂v − ∂L/∂q = (∂L/∂v)(∂L/∂z)` are expanded with the chain rule and
//! `ż = L` into
//!
//! ```text
//! M v̇ = ∂L/∂q − (∂²L/∂v∂q) v − (∂²L/∂v∂z) L + (∂L/∂v)(∂L/∂z),   M = ∂²L/∂v²
//! ```
//!
//! which is solved for `v̇` at every RK stage.

use nalgebra::DMatrix;

use crate::contact::{lerp, pack, ContactLagrangian, DiscretePath};
use crate::expr::Expr;
use crate::numkit::{fd_partial, fd_second_partial, rk4_integrate, rk4_on_grid, solve_linear, FdConfig, OdeConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ContactState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub z: f64,
}

impl ContactState {
    pub fn new(q: Vec<f64>, v: Vec<f64>, z: f64) -> Self {
        Self { q, v, z }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HerglotzRates {
    pub dq: Vec<f64>,
    pub dv: Vec<f64>,
    pub dz: f64,
}

/// Time derivative of `(q, v, z)` along the Herglotz flow.
pub fn herglotz_rhs(l: &ContactLagrangian, s: &ContactState) -> Result<HerglotzRates> {
    check_state(l, s)?;
    let all: Vec<usize> = (0..l.dim()).collect();
    let rates = constrained_rates(l, &[], &all, &[], &s.q, &s.v, s.z, &[], &FdConfig::default())?;
    Ok(HerglotzRates {
        dq: s.v.clone(),
        dv: rates.dv,
        dz: rates.lagrangian,
    })
}

fn check_state(l: &ContactLagrangian, s: &ContactState) -> Result<()> {
    if s.q.len() != l.dim() || s.v.len() != l.dim() {
        return Err(Error::Dimension(format!(
            "state has {} positions and {} velocities, Lagrangian has dimension {}",
            s.q.len(),
            s.v.len(),
            l.dim()
        )));
    }
    Ok(())
}

/// Integrate the Herglotz equations from `s0` with RK4.
pub fn integrate_herglotz(l: &ContactLagrangian, s0: &ContactState, cfg: &OdeConfig) -> Result<DiscretePath> {
    check_state(l, s0)?;
    let n = l.dim();
    let y0 = pack(&s0.q, &s0.v, s0.z);
    let traj = rk4_integrate(
        |_, y| {
            let s = ContactState::new(y[..n].to_vec(), y[n..2 * n].to_vec(), y[2 * n]);
            let r = herglotz_rhs(l, &s)?;
            Ok(pack(&r.dq, &r.dv, r.dz))
        },
        &y0,
        cfg,
    )?;
    split_path(traj.times, &traj.states, n)
}

fn split_path(times: Vec<f64>, states: &[Vec<f64>], n: usize) -> Result<DiscretePath> {
    let q = states.iter().map(|y| y[..n].to_vec()).collect();
    let v = states.iter().map(|y| y[n..2 * n].to_vec()).collect();
    let z = states.iter().map(|y| y[2 * n]).collect();
    DiscretePath::new(times, q, v)?.with_z(z)
}

/// Plain Euler–Lagrange acceleration `M v̇ = ∂L/∂q − (∂²L/∂v∂q) v`, with
/// the same finite-difference steps as [`herglotz_rhs`].
pub fn euler_lagrange_rhs(l: &ContactLagrangian, s: &ContactState) -> Result<Vec<f64>> {
    check_state(l, s)?;
    let n = l.dim();
    let fd = FdConfig::default();
    let x = pack(&s.q, &s.v, s.z);
    let f = |p: &[f64]| l.eval_slice(p);
    let mut mass = DMatrix::zeros(n, n);
    let mut force = vec![0.0; n];
    for i in 0..n {
        let mut fi = fd_partial(f, i, &x, &fd)?;
        for j in 0..n {
            fi -= fd_second_partial(f, n + i, j, &x, &fd)? * s.v[j];
        }
        force[i] = fi;
        for j in 0..n {
            mass[(i, j)] = fd_second_partial(f, n + i, n + j, &x, &fd)?;
        }
    }
    solve_linear(&mass, &force)
}

/// RK4 integration of the classical Euler–Lagrange equations; `z` is carried
/// along with `ż = L` so the output is comparable with
/// [`integrate_herglotz`].
pub fn integrate_euler_lagrange(l: &ContactLagrangian, s0: &ContactState, cfg: &OdeConfig) -> Result<DiscretePath> {
    check_state(l, s0)?;
    let n = l.dim();
    let traj = rk4_integrate(
        |_, y| {
            let s = ContactState::new(y[..n].to_vec(), y[n..2 * n].to_vec(), y[2 * n]);
            let dv = euler_lagrange_rhs(l, &s)?;
            let dz = l.eval_slice(y)?;
            Ok(pack(&s.v, &dv, dz))
        },
        &pack(&s0.q, &s0.v, s0.z),
        cfg,
    )?;
    split_path(traj.times, &traj.states, n)
}

/// Output of [`constrained_rates`].
#[derive(Debug, Clone)]
pub(crate) struct Rates {
    /// Accelerations; zero for algebraic coordinates.
    pub dv: Vec<f64>,
    pub dmu: Vec<f64>,
    /// Time derivatives of the algebraic coordinates, in `algebraic` order.
    pub qdot_algebraic: Vec<f64>,
    /// Value of the (extended) Lagrangian, i.e. `ż`.
    pub lagrangian: f64,
}

/// Herglotz equations of an extended Lagrangian `L − μ_α ψ^α`, index-reduced.
///
/// `ext` is laid out as `[q(n), μ(k), v(n), v_μ(k), z]`; the constraints as
/// `[q(n), v(n), z]`. Coordinates listed in `algebraic` must not have their
/// velocity appear anywhere. Their Herglotz rows degenerate to
/// `∂L/∂q_a = 0`; the caller is responsible for having solved those, and
/// their time derivative comes from differentiating that condition once.
/// The unknowns `(v̇_dyn, μ̇, q̇_alg)` solve
///
/// ```text
/// | W     −Bᵀ    C_a  | |v̇|   | r |
/// | B      0     P_a  | |μ̇| = | s |
/// | S_v   −P_aᵀ  S_a  | |q̇|   | σ |
/// ```
///
/// With no constraints and no algebraic coordinates this is exactly
/// `M v̇ = r` of [`herglotz_rhs`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn constrained_rates(
    ext: &ContactLagrangian,
    constraints: &[Expr],
    dynamic: &[usize],
    algebraic: &[usize],
    q: &[f64],
    v: &[f64],
    z: f64,
    mu: &[f64],
    fd: &FdConfig,
) -> Result<Rates> {
    let n = q.len();
    let k = mu.len();
    let total = n + k;
    debug_assert_eq!(ext.dim(), total);
    let (nd, na) = (dynamic.len(), algebraic.len());
    let vel = |i: usize| total + i;
    let zi = 2 * total;

    let mut x = Vec::with_capacity(2 * total + 1);
    x.extend_from_slice(q);
    x.extend_from_slice(mu);
    x.extend_from_slice(v);
    x.extend(std::iter::repeat_n(0.0, k));
    x.push(z);
    let f = |p: &[f64]| ext.eval_slice(p);

    let lval = f(&x)?;
    let lz = fd_partial(f, zi, &x, fd)?;

    let size = nd + k + na;
    let mut a = DMatrix::zeros(size, size);
    let mut b = vec![0.0; size];

    for (r, &i) in dynamic.iter().enumerate() {
        let lv = fd_partial(f, vel(i), &x, fd)?;
        let mut ri = fd_partial(f, i, &x, fd)?;
        for &j in dynamic {
            ri -= fd_second_partial(f, vel(i), j, &x, fd)? * v[j];
        }
        ri -= fd_second_partial(f, vel(i), zi, &x, fd)? * lval;
        ri += lv * lz;
        b[r] = ri;
        for (c, &j) in dynamic.iter().enumerate() {
            a[(r, c)] = fd_second_partial(f, vel(i), vel(j), &x, fd)?;
        }
        for (c, &j) in algebraic.iter().enumerate() {
            a[(r, nd + k + c)] = fd_second_partial(f, vel(i), j, &x, fd)?;
        }
    }

    if k > 0 {
        let y = pack(q, v, z);
        for (alpha, psi) in constraints.iter().enumerate() {
            let g = |p: &[f64]| -> Result<f64> { Ok(psi.eval_slots(p)?) };
            let row = nd + alpha;
            let mut s = -fd_partial(g, 2 * n, &y, fd)? * lval;
            for (c, &j) in dynamic.iter().enumerate() {
                let dpsi_dv = fd_partial(g, n + j, &y, fd)?;
                a[(row, c)] = dpsi_dv;
                a[(c, nd + alpha)] = -dpsi_dv;
                s -= fd_partial(g, j, &y, fd)? * v[j];
            }
            for (c, &j) in algebraic.iter().enumerate() {
                let dpsi_dq = fd_partial(g, j, &y, fd)?;
                a[(row, nd + k + c)] = dpsi_dq;
                a[(nd + k + c, nd + alpha)] = -dpsi_dq;
            }
            b[row] = s;
        }
    }

    for (r, &ia) in algebraic.iter().enumerate() {
        let row = nd + k + r;
        let mut sigma = -fd_second_partial(f, ia, zi, &x, fd)? * lval;
        for (c, &j) in dynamic.iter().enumerate() {
            a[(row, c)] = fd_second_partial(f, ia, vel(j), &x, fd)?;
            sigma -= fd_second_partial(f, ia, j, &x, fd)? * v[j];
        }
        for (c, &jb) in algebraic.iter().enumerate() {
            a[(row, nd + k + c)] = fd_second_partial(f, ia, jb, &x, fd)?;
        }
        b[row] = sigma;
    }

    let sol = solve_linear(&a, &b)?;
    let mut dv = vec![0.0; n];
    for (c, &i) in dynamic.iter().enumerate() {
        dv[i] = sol[c];
    }
    Ok(Rates {
        dv,
        dmu: sol[nd..nd + k].to_vec(),
        qdot_algebraic: sol[nd + k..].to_vec(),
        lagrangian: lval,
    })
}

/// The multiplier `λ` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierCurve {
    pub times: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Solve `λ̇ = −λ ∂L/∂z` backward from `λ(t_end) = 1` along a path that has
/// `q`, `v` and `z` on its grid.
pub fn multiplier_evolution(l: &ContactLagrangian, path: &DiscretePath) -> Result<MultiplierCurve> {
    path.validate()?;
    if path.dim() != l.dim() {
        return Err(Error::Dimension(format!(
            "path has dimension {}, Lagrangian has {}",
            path.dim(),
            l.dim()
        )));
    }
    let z = path
        .z
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("multiplier evolution needs z along the path".into()))?;
    let nodes: Vec<Vec<f64>> = (0..path.len()).map(|i| pack(&path.q[i], &path.v[i], z[i])).collect();
    multiplier_from_nodes(l, &path.times, &nodes, path)
}

/// Backward RK4 for `λ`, sampling the evaluation slice at stage times by
/// linear interpolation between `nodes`.
pub(crate) fn multiplier_from_nodes(
    l: &ContactLagrangian,
    times: &[f64],
    nodes: &[Vec<f64>],
    grid_owner: &DiscretePath,
) -> Result<MultiplierCurve> {
    let fd = FdConfig::default();
    let zi = l.action_slot();
    let f = |p: &[f64]| l.eval_slice(p);
    let backward: Vec<f64> = times.iter().rev().copied().collect();
    let traj = rk4_on_grid(
        |t, lam| {
            let (i, w) = grid_owner.locate(t);
            let x = lerp(&nodes[i], &nodes[i + 1], w);
            Ok(vec![-lam[0] * fd_partial(f, zi, &x, &fd)?])
        },
        &[1.0],
        &backward,
    )?;
    let lambda = traj.states.iter().rev().map(|s| s[0]).collect();
    Ok(MultiplierCurve {
        times: times.to_vec(),
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Env;

    fn params(pairs: &[(&str, f64)]) -> Env {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn linear_friction_rate() {
        let l = ContactLagrangian::parse(1, "v1^2/2 - g*z", &params(&[("g", 0.5)])).unwrap();
        let r = herglotz_rhs(&l, &ContactState::new(vec![0.0], vec![1.0], 0.0)).unwrap();
        assert!((r.dv[0] + 0.5).abs() < 1e-8, "{}", r.dv[0]);
        assert_eq!(r.dq, vec![1.0]);
        assert_eq!(r.dz, 0.5);
    }

    #[test]
    fn z_independent_reduces_to_euler_lagrange() {
        let l = ContactLagrangian::parse(1, "v1^2/2 - q1^2/2", &Env::new()).unwrap();
        for (q, v) in [(0.3, -1.2), (-2.0, 0.5), (1.0, 0.0)] {
            let s = ContactState::new(vec![q], vec![v], 0.4);
            let r = herglotz_rhs(&l, &s).unwrap();
            assert!((r.dv[0] + q).abs() < 1e-7, "{} vs {}", r.dv[0], -q);
            assert_eq!(r.dv, euler_lagrange_rhs(&l, &s).unwrap());
        }
    }

    #[test]
    fn damped_oscillator_rate() {
        let (w, g) = (1.3, 0.2);
        let l = ContactLagrangian::parse(1, "v1^2/2 - w^2*q1^2/2 - g*z", &params(&[("w", w), ("g", g)])).unwrap();
        for (q, v, z) in [(0.5, 0.1, 0.0), (-1.0, 2.0, 3.0), (0.0, -0.7, -1.0)] {
            let r = herglotz_rhs(&l, &ContactState::new(vec![q], vec![v], z)).unwrap();
            let exact = -w * w * q - g * v;
            assert!((r.dv[0] - exact).abs() < 1e-7, "{} vs {exact}", r.dv[0]);
        }
    }

    #[test]
    fn two_dimensional_coupled_lagrangian() {
        // L = (v1² + v1 v2 + v2²)/2 − q1 q2 − c z; mass [[1, ½], [½, 1]]
        let l = ContactLagrangian::parse(2, "(v1^2 + v1*v2 + v2^2)/2 - q1*q2 - c*z", &params(&[("c", 0.3)])).unwrap();
        let (q, v) = ([0.4, -0.2], [0.9, 0.1]);
        let r = herglotz_rhs(&l, &ContactState::new(q.to_vec(), v.to_vec(), 0.0)).unwrap();
        // rhs_i = ∂L/∂q_i + (∂L/∂v_i)(−c)
        let lv = [v[0] + 0.5 * v[1], 0.5 * v[0] + v[1]];
        let rhs = [-q[1] - 0.3 * lv[0], -q[0] - 0.3 * lv[1]];
        let det = 1.0 - 0.25;
        let exact = [(rhs[0] - 0.5 * rhs[1]) / det, (rhs[1] - 0.5 * rhs[0]) / det];
        for i in 0..2 {
            assert!((r.dv[i] - exact[i]).abs() < 1e-7, "{i}: {} vs {}", r.dv[i], exact[i]);
        }
    }

    #[test]
    fn singular_mass_matrix_is_rejected() {
        let l = ContactLagrangian::parse(1, "v1 - q1^2", &Env::new()).unwrap();
        let err = herglotz_rhs(&l, &ContactState::new(vec![0.0], vec![1.0], 0.0)).unwrap_err();
        assert!(matches!(err, Error::SingularMatrix { .. }), "{err:?}");
    }

    #[test]
    fn domain_errors_surface() {
        let l = ContactLagrangian::parse(1, "v1^2/2 - log(q1)", &Env::new()).unwrap();
        let err = herglotz_rhs(&l, &ContactState::new(vec![-1.0], vec![1.0], 0.0)).unwrap_err();
        assert!(matches!(err, Error::Expr(_)));
        let err = integrate_herglotz(
            &l,
            &ContactState::new(vec![0.5], vec![-1.0], 0.0),
            &OdeConfig::new(0.0, 2.0, 1e-2),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Integration { .. }), "{err:?}");
    }

    #[test]
    fn free_particle() {
        let l = ContactLagrangian::parse(1, "v1^2/2", &Env::new()).unwrap();
        let p = integrate_herglotz(&l, &ContactState::new(vec![0.0], vec![1.0], 0.0), &OdeConfig::new(0.0, 1.0, 1e-3)).unwrap();
        let z = p.z.as_ref().unwrap();
        for i in 0..p.len() {
            let t = p.times[i];
            assert!((p.q[i][0] - t).abs() < 1e-12);
            assert!((z[i] - t / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn velocities_match_position_slopes() {
        let l = ContactLagrangian::parse(1, "v1^2/2 - q1^2/2 - 0.1*z", &Env::new()).unwrap();
        let dt = 1e-2;
        let p = integrate_herglotz(&l, &ContactState::new(vec![1.0], vec![0.0], 0.0), &OdeConfig::new(0.0, 5.0, dt)).unwrap();
        for i in 1..p.len() - 1 {
            let slope = (p.q[i + 1][0] - p.q[i - 1][0]) / (p.times[i + 1] - p.times[i - 1]);
            assert!((slope - p.v[i][0]).abs() <= dt * dt, "{i}");
        }
    }

    #[test]
    fn multiplier_for_constant_friction() {
        let gamma = 0.5;
        let l = ContactLagrangian::parse(1, "v1^2/2 - g*z", &params(&[("g", gamma)])).unwrap();
        let p = integrate_herglotz(&l, &ContactState::new(vec![0.0], vec![1.0], 0.0), &OdeConfig::new(0.0, 1.0, 1e-3)).unwrap();
        let m = multiplier_evolution(&l, &p).unwrap();
        assert_eq!(*m.lambda.last().unwrap(), 1.0);
        assert!((m.lambda[0] - (-0.5f64).exp()).abs() <= 1e-8);
        assert!((m.lambda[0] - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn multiplier_is_one_without_z() {
        let l = ContactLagrangian::parse(1, "v1^2/2 - q1^2/2", &Env::new()).unwrap();
        let p = integrate_herglotz(&l, &ContactState::new(vec![1.0], vec![0.0], 0.0), &OdeConfig::new(0.0, 1.0, 1e-2)).unwrap();
        let m = multiplier_evolution(&l, &p).unwrap();
        assert!(m.lambda.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn multiplier_needs_z() {
        let l = ContactLagrangian::parse(1, "v1^2/2", &Env::new()).unwrap();
        let p = DiscretePath::new(vec![0.0, 1.0], vec![vec![0.0], vec![1.0]], vec![vec![1.0]; 2]).unwrap();
        assert!(multiplier_evolution(&l, &p).is_err());
    }
}

//! Numerical primitives shared by every solver: central finite differences,
//! fixed-step classical Runge–Kutta, damped Newton iteration and small dense
//! linear solves.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Condition estimates above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Finite-difference steps.
///
/// `h` is used for first partials. Second partials are nested central
/// differences with step `h2` at both levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub h: f64,
    pub h2: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { h: 1e-6, h2: 1e-4 }
    }
}

impl FdConfig {
    fn validate(&self) -> Result<()> {
        if self.h > 0.0 && self.h2 > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "finite-difference steps must be positive (h = {}, h2 = {})",
                self.h, self.h2
            )))
        }
    }
}

/// Central difference `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h`.
pub fn fd_partial<F>(f: F, i: usize, x: &[f64], cfg: &FdConfig) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    cfg.validate()?;
    central(&f, i, x, cfg.h)
}

fn central<F>(f: &F, i: usize, x: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut p = x.to_vec();
    p[i] = x[i] + h;
    let fp = f(&p)?;
    p[i] = x[i] - h;
    let fm = f(&p)?;
    Ok((fp - fm) / (2.0 * h))
}

/// `∂²f / ∂xᵢ∂xⱼ` by nested central differences (outer in `i`, inner in
/// `j`, both with step `h2`).
pub fn fd_second_partial<F>(f: F, i: usize, j: usize, x: &[f64], cfg: &FdConfig) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    cfg.validate()?;
    let h = cfg.h2;
    let mut p = x.to_vec();
    p[i] = x[i] + h;
    let dp = central(&f, j, &p, h)?;
    p[i] = x[i] - h;
    let dm = central(&f, j, &p, h)?;
    Ok((dp - dm) / (2.0 * h))
}

/// Central-difference Jacobian of a vector function, one column per input.
pub fn fd_jacobian<G>(mut g: G, x: &[f64], h: f64) -> Result<DMatrix<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut p = x.to_vec();
    let mut jac: Option<DMatrix<f64>> = None;
    for j in 0..x.len() {
        p[j] = x[j] + h;
        let gp = g(&p)?;
        p[j] = x[j] - h;
        let gm = g(&p)?;
        p[j] = x[j];
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(gp.len(), x.len()));
        for (r, (a, b)) in gp.iter().zip(&gm).enumerate() {
            jac[(r, j)] = (a - b) / (2.0 * h);
        }
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

/// Solve a square system by LU, rejecting matrices whose 1-norm condition
/// estimate exceeds [`MAX_CONDITION`].
pub fn solve_linear(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    if !a.is_square() || a.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "linear system {}x{} with right-hand side of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let lu = a.clone().lu();
    let inv = lu
        .try_inverse()
        .ok_or(Error::SingularMatrix { condition: f64::INFINITY })?;
    let condition = norm1(a) * norm1(&inv);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularMatrix { condition });
    }
    let x = lu
        .solve(&DVector::from_column_slice(b))
        .ok_or(Error::SingularMatrix { condition })?;
    Ok(x.as_slice().to_vec())
}

/// Minimum-norm least-squares solution via a truncated SVD. Singular values
/// below `rcond · σ_max` are discarded.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &[f64], rcond: f64) -> Result<Vec<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "least-squares system with {} rows and right-hand side of length {}",
            a.nrows(),
            b.len()
        )));
    }
    if a.ncols() == 0 {
        return Ok(Vec::new());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || !smax.is_finite() {
        return Err(Error::SingularMatrix { condition: f64::INFINITY });
    }
    let x = svd
        .solve(&DVector::from_column_slice(b), rcond * smax)
        .map_err(|_| Error::SingularMatrix { condition: f64::INFINITY })?;
    Ok(x.as_slice().to_vec())
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OdeMethod {
    #[default]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeConfig {
    pub method: OdeMethod,
    pub dt: f64,
    pub t_span: (f64, f64),
}

impl OdeConfig {
    pub fn new(t0: f64, t1: f64, dt: f64) -> Self {
        Self {
            method: OdeMethod::Rk4,
            dt,
            t_span: (t0, t1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (t0, t1) = self.t_span;
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::InvalidConfig(format!("empty time span [{t0}, {t1}]")));
        }
        Ok(())
    }

    /// `t0, t0 + dt, …` ending exactly on `t1`; the last step is shortened
    /// when `dt` does not divide the span.
    pub fn grid(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let (t0, t1) = self.t_span;
        let ratio = (t1 - t0) / self.dt;
        let nearest = ratio.round();
        let steps = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest
        } else {
            ratio.ceil()
        } as usize;
        let steps = steps.max(1);
        let mut grid: Vec<f64> = (0..steps).map(|i| t0 + i as f64 * self.dt).collect();
        grid.push(t1);
        Ok(grid)
    }
}

/// States sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

/// Classical RK4 on the uniform grid of `cfg`.
pub fn rk4_integrate<F>(rhs: F, y0: &[f64], cfg: &OdeConfig) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let grid = cfg.grid()?;
    rk4_on_grid(rhs, y0, &grid)
}

/// Classical RK4 over an explicit, strictly monotone grid. Decreasing grids
/// integrate backward in time.
pub fn rk4_on_grid<F>(mut rhs: F, y0: &[f64], grid: &[f64]) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty integration grid".into()));
    }
    let forward = grid.len() < 2 || grid[1] > grid[0];
    if grid
        .windows(2)
        .any(|w| if forward { !(w[1] > w[0]) } else { !(w[1] < w[0]) })
    {
        return Err(Error::InvalidConfig("integration grid is not strictly monotone".into()));
    }
    let dim = y0.len();
    let mut eval = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let dy = rhs(t, y).map_err(|e| Error::Integration { t, source: Box::new(e) })?;
        if dy.len() != dim {
            return Err(Error::Dimension(format!(
                "right-hand side returned {} components for a state of {dim}",
                dy.len()
            )));
        }
        Ok(dy)
    };
    let mut states = Vec::with_capacity(grid.len());
    let mut y = y0.to_vec();
    let mut stage = vec![0.0; dim];
    states.push(y.clone());
    for w in grid.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let h = t_next - t;
        let t_mid = t + 0.5 * h;
        let k1 = eval(t, &y)?;
        for (s, (yi, k)) in stage.iter_mut().zip(y.iter().zip(&k1)) {
            *s = yi + 0.5 * h * k;
        }
        let k2 = eval(t_mid, &stage)?;
        for (s, (yi, k)) in stage.iter_mut().zip(y.iter().zip(&k2)) {
            *s = yi + 0.5 * h * k;
        }
        let k3 = eval(t_mid, &stage)?;
        for (s, (yi, k)) in stage.iter_mut().zip(y.iter().zip(&k3)) {
            *s = yi + h * k;
        }
        let k4 = eval(t_next, &stage)?;
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        states.push(y.clone());
    }
    Ok(Trajectory {
        times: grid.to_vec(),
        states,
    })
}

/// How a Newton step is computed from the finite-difference Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NewtonStep {
    /// LU solve; a singular Jacobian is an error.
    Lu,
    /// Truncated-SVD minimum-norm step. Directions whose singular value is
    /// below `rcond · σ_max` are left untouched, which lets the iteration
    /// cope with gauge freedoms in the unknowns.
    MinNorm { rcond: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub abs_tol: f64,
    pub max_iter: usize,
    /// Initial step fraction; halved on every rejected trial step.
    pub damping: f64,
    /// Step used for the finite-difference Jacobian. The default is a power
    /// of two so that `x ± h` is exact for moderate `x`.
    pub jacobian_step: f64,
    pub step: NewtonStep,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            max_iter: 50,
            damping: 1.0,
            jacobian_step: DEFAULT_JACOBIAN_STEP,
            step: NewtonStep::Lu,
        }
    }
}

impl NewtonConfig {
    fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) {
            return Err(Error::InvalidConfig("Newton abs_tol must be positive".into()));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidConfig("Newton max_iter must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig("Newton damping must lie in (0, 1]".into()));
        }
        if !(self.jacobian_step > 0.0) {
            return Err(Error::InvalidConfig("Newton jacobian_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonSolution {
    pub x: Vec<f64>,
    /// `‖g(x)‖∞` at the returned point.
    pub residual: f64,
    pub iterations: usize,
}

const MAX_HALVINGS: usize = 30;

/// `2⁻²⁰ ≈ 9.5e-7`.
pub const DEFAULT_JACOBIAN_STEP: f64 = 1.0 / 1_048_576.0;

/// Damped Newton iteration for a square system `g(x) = 0`.
///
/// Each step starts at `cfg.damping` and is halved until the infinity norm
/// of the residual decreases. A point is only returned when
/// `‖g(x)‖∞ ≤ cfg.abs_tol`.
pub fn newton_solve<G>(mut g: G, x0: &[f64], cfg: &NewtonConfig) -> Result<NewtonSolution>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut x = x0.to_vec();
    let mut gx = g(&x)?;
    if gx.len() != x.len() {
        return Err(Error::Dimension(format!(
            "Newton system has {} unknowns but {} equations",
            x.len(),
            gx.len()
        )));
    }
    let mut res = inf_norm(&gx);
    for iter in 0..cfg.max_iter {
        if res <= cfg.abs_tol {
            return Ok(NewtonSolution { x, residual: res, iterations: iter });
        }
        let jac = fd_jacobian(&mut g, &x, cfg.jacobian_step)?;
        let step = match cfg.step {
            NewtonStep::Lu => solve_linear(&jac, &gx)?,
            NewtonStep::MinNorm { rcond } => min_norm_solve(&jac, &gx, rcond)?,
        };
        let mut alpha = cfg.damping;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(xi, s)| xi - alpha * s).collect();
            if let Ok(gt) = g(&trial) {
                let rt = inf_norm(&gt);
                if rt < res {
                    x = trial;
                    gx = gt;
                    res = rt;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations: iter + 1,
                residual: res,
                best: x,
            });
        }
    }
    if res <= cfg.abs_tol {
        Ok(NewtonSolution { x, residual: res, iterations: cfg.max_iter })
    } else {
        Err(Error::NoConvergence {
            iterations: cfg.max_iter,
            residual: res,
            best: x,
        })
    }
}

//! Solvers for contact (Herglotz) Lagrangian mechanics.
//!
//! A contact Lagrangian `L(q, v, z)` depends on the action `z` itself, which
//! evolves by `ż = L`. Its critical curves solve the Herglotz equations
//!
//! ```text
//! d/dt ∂L/∂v − ∂L/∂q = (∂L/∂v)(∂L/∂z)
//! ```
//!
//! The crate is organised bottom-up:
//!
//! * [`expr`]: the expression language every problem function is written in.
//! * [`numkit`]: finite differences, RK4, damped Newton, dense linear solves.
//! * [`contact`]: contact Lagrangians, discrete paths, the action operator,
//!   the contact action functional and its numerical first variation.
//! * [`dynamics`]: the Herglotz equations as an explicit ODE and the
//!   multiplier `λ(t)` with `λ̇ = −λ ∂L/∂z`, `λ(t_end) = 1`.
//! * [`vakonomic`]: velocity constraints handled through the extended
//!   Lagrangian `L − μ_α ψ^α`, integrated by index reduction, and two-point
//!   boundary problems solved by single shooting.
//! * [`control`]: Herglotz optimal control problems (maximise `z(b)` with
//!   `ż = F`, `ẋ = X`), solved either through the costate equations or by
//!   rewriting them as a vakonomic problem.
//!
//! All derivatives of user expressions are central finite differences.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod contact;
pub mod control;
pub mod dynamics;
pub mod expr;
pub mod numkit;
pub mod vakonomic;

use thiserror::Error;

pub use contact::{ContactLagrangian, DiscretePath, Variation};
pub use control::{ControlProblem, ControlState};
pub use dynamics::{ContactState, MultiplierCurve};
pub use expr::{Env, Expr, ExprError};
pub use numkit::{FdConfig, NewtonConfig, OdeConfig};
pub use vakonomic::{ExtendedState, VakonomicProblem};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("integration failed at t = {t}: {source}")]
    Integration {
        t: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("singular matrix (condition estimate {condition:.3e})")]
    SingularMatrix { condition: f64 },
    #[error("Newton iteration failed after {iterations} iterations (best residual {residual:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("inconsistent initial state: constraint residual {residual:.3e}")]
    InconsistentInitialState { residual: f64 },
    #[error("generated name '{0}' collides with a problem variable")]
    NameCollision(String),
    #[error("abnormal extremal suspected: multiplier norm {norm:.3e} exceeds 1e8")]
    AbnormalExtremal { norm: f64 },
    #[error("stationarity solve failed: {0}")]
    Stationarity(#[source] Box<Error>),
}

pub type Result<T> = std::result::Result<T, Error>;

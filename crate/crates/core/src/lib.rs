//! Fully discrete solver for the doubly nonlinear parabolic equation
//!
//! ```text
//! ∂t β(u) − ∂x μ(∂x u) = 0  on (0, ℓ),   n μ(∂x u) + α u = α u_∂  at x ∈ {0, ℓ}
//! ```
//!
//! discretized by lumped P1 finite elements and implicit Euler. Every step is
//! the minimizer of a strictly convex objective, solved by damped Newton with a
//! tridiagonal Jacobian. Around the solver sit the entropy / relative-entropy
//! diagnostics, the affine steady states, and experiment drivers that measure
//! uniform bounds, entropy dissipation, exponential relaxation and tracking of
//! quasi-steady states.
//!
//! * [`constitutive`]: the nonlinearities `β`, `μ` and derived functions.
//! * [`grid`]: mesh, lumped and exact inner products.
//! * [`stepper`]: scenarios, the step residual/objective/Jacobian, time marching.
//! * [`steady`]: analytic and discrete steady states.
//! * [`diagnostics`]: functionals, inequality checks, decay fits.
//! * [`experiments`]: relaxation, tracking and self-convergence studies.
//! * [`config`]: JSON scenario configuration used by the CLI.

// `!(x > 0.0)` style tests are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod constitutive;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod newton;
pub mod schedule;
pub mod steady;
pub mod stepper;
pub mod tridiag;

pub use constitutive::{BetaFamily, Bounds, ConstitutiveModel, Nonlinearity};
pub use error::{Error, Result};
pub use grid::{Grid, NodalVector};
pub use newton::SolverOptions;
pub use schedule::{BoundarySchedule, EndpointSchedule};
pub use steady::{steady_analytic, steady_discrete, SteadyState};
pub use stepper::{advance, newton_solve, Scenario, StepResult, Trajectory};

//! Damped Newton minimization of smooth strictly convex objectives whose
//! Hessian is tridiagonal.
//!
//! The step direction solves `J d = −∇L` with the (possibly regularized)
//! Hessian `J`; the step length is chosen by Armijo backtracking on `L`.
//!
//! Close to the minimizer the decrease of `L` drops below its rounding level
//! long before the gradient meets the tolerance, and for `p < 2` the tangent
//! model of a cell whose slope is near zero is accurate only within a radius
//! of the order of that slope. Once Armijo can no longer certify progress the
//! driver hands over to [`ConvexProblem::flux_step`] when the problem
//! provides it: Newton on the equivalent system with independent cell fluxes
//! `q` and the inverted law `s = μ⁻¹(q)`, which stays smooth at `q = 0`.
//! Without a flux form a step in the rounding regime is accepted when `L`
//! does not grow beyond rounding and the gradient norm shrinks.
//!
//! The M-matrix test is applied to the tangent Hessian of every iterate.

use serde::{Deserialize, Serialize};

use crate::diagnostics::check_m_matrix;
use crate::error::{Error, Result};
use crate::tridiag::Tridiagonal;

pub const ARMIJO_C: f64 = 1e-4;
pub const MAX_HALVINGS: usize = 40;
/// Flux steps without halving the best residual before it counts as stagnated.
pub const STAGNATION_STEPS: usize = 3;
/// A converged iterate whose residual exceeds `POLISH_RATIO · newton_tol`
/// gets one more step, kept if it lowers the residual. Without it the
/// discrete entropy identity, which holds up to `Σ u_i r_i`, can be off by
/// `N · newton_tol`, and a state whose residual sits just below the tolerance
/// is reproduced step after step.
pub const POLISH_RATIO: f64 = 1e-2;

/// Newton controls, exposed through the scenario configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Stop when `‖∇L‖_∞ ≤ newton_tol`.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Slope floor used in `μ'` when assembling the Jacobian.
    pub eps_reg: f64,
    /// When the flux refinement stagnates above `newton_tol` (the residual
    /// floor set by the spacing of representable slopes), return the best
    /// iterate flagged as not converged instead of failing.
    pub accept_rounding_floor: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            newton_max_iter: 50,
            eps_reg: 1e-8,
            accept_rounding_floor: false,
        }
    }
}

/// Objective with gradient and tridiagonal (approximate) Hessian.
pub trait ConvexProblem {
    fn value(&self, w: &[f64]) -> Result<f64>;
    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>>;
    fn hessian(&self, w: &[f64]) -> Result<Tridiagonal>;

    /// Solves for the step direction `d` with right-hand side `−∇L`; `None` if
    /// the system is singular. Problems may adjust `hess` first.
    fn direction(&self, _w: &[f64], rhs: &[f64], hess: Tridiagonal) -> Option<Vec<f64>> {
        hess.solve(rhs)
    }

    /// Cell fluxes consistent with `w`, if the problem has a flux form.
    fn flux_start(&self, _w: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Start in the flux form and take its steps undamped. For problems whose
    /// flux Newton converges from any start.
    fn flux_first(&self) -> bool {
        false
    }

    /// One Newton step on the flux form from `(w, q)`.
    fn flux_step(&self, _w: &[f64], _q: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub state: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub objective: f64,
    /// Objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    /// Number of iterates whose Jacobian failed the M-matrix test.
    pub m_matrix_violations: usize,
    /// `residual_norm ≤ newton_tol`; false only under `accept_rounding_floor`.
    pub converged: bool,
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn minimize<P: ConvexProblem>(problem: &P, start: Vec<f64>, opts: &SolverOptions) -> Result<NewtonOutcome> {
    let mut w = start;
    let mut value = problem.value(&w)?;
    let mut grad = problem.gradient(&w)?;
    let mut trace = vec![value];
    let mut violations = 0;
    let mut flux: Option<Vec<f64>> = None;
    let mut stagnation = Stagnation::default();
    let flux_first = problem.flux_first();
    if flux_first {
        flux = problem.flux_start(&w);
    }

    let fail = |iterations, residual_norm, reason, w: &[f64]| Error::NonConvergence {
        iterations,
        residual_norm,
        reason,
        last_iterate: w.to_vec(),
    };

    for iter in 0..=opts.newton_max_iter {
        let res = inf_norm(&grad);
        let hess = problem.hessian(&w);
        if let Ok(h) = &hess {
            if !check_m_matrix(h).is_m_matrix {
                violations += 1;
            }
        }
        let noise = 1e3 * f64::EPSILON * (1.0 + value.abs());
        if res <= opts.newton_tol {
            let mut iterations = iter;
            let mut residual_norm = res;
            if res > POLISH_RATIO * opts.newton_tol && iter < opts.newton_max_iter {
                let candidate = match (&flux, hess) {
                    (Some(q), _) => problem.flux_step(&w, q).map(|(next, _)| next),
                    (None, Ok(h)) => {
                        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
                        problem
                            .direction(&w, &rhs, h)
                            .map(|d| w.iter().zip(&d).map(|(x, d)| x + d).collect())
                    }
                    (None, Err(_)) => None,
                };
                let polished = candidate.and_then(|next| {
                    let v = problem.value(&next).ok().filter(|v| *v <= value + noise)?;
                    let r = inf_norm(&problem.gradient(&next).ok()?);
                    (r < res).then_some((next, v, r))
                });
                if let Some((next, v, r)) = polished {
                    w = next;
                    value = v;
                    residual_norm = r;
                    iterations += 1;
                    trace.push(value);
                }
            }
            return Ok(NewtonOutcome {
                state: w,
                iterations,
                residual_norm,
                objective: value,
                objective_trace: trace,
                m_matrix_violations: violations,
                converged: true,
            });
        }
        if iter == opts.newton_max_iter {
            break;
        }

        if let Some(q) = flux.take() {
            let (full_w, full_q) = problem
                .flux_step(&w, &q)
                .ok_or_else(|| fail(iter, res, "singular flux system", &w))?;
            // damped so that L stays within its rounding level
            let ceiling = if flux_first { f64::INFINITY } else { value + noise };
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let trial_w = lerp(&w, &full_w, t);
                if let Some(v) = problem.value(&trial_w).ok().filter(|v| *v <= ceiling) {
                    if let Ok(g) = problem.gradient(&trial_w) {
                        accepted = Some((trial_w, lerp(&q, &full_q, t), v, g));
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some((next_w, next_q, next_value, next_grad)) = accepted else {
                return Err(fail(iter, res, "flux refinement left the rounding neighbourhood", &w));
            };
            let moving = flux_first && (next_value - value).abs() > noise;
            w = next_w;
            value = next_value;
            grad = next_grad;
            flux = Some(next_q);
            trace.push(value);
            let reason = "residual stagnated at the rounding floor";
            if let Some(out) = stagnation.record(&w, value, &grad, opts, iter + 1, moving, reason) {
                return out.finish(trace, violations);
            }
            continue;
        }

        let hess = hess?;
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let dir = problem
            .direction(&w, &rhs, hess)
            .ok_or_else(|| fail(iter, res, "singular jacobian", &w))?;
        let slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            return Err(fail(iter, res, "jacobian direction is not a descent direction", &w));
        }

        let mut step = 1.0;
        let mut accepted = None;
        let mut certified = false;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = w.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
            if let Ok(trial_value) = problem.value(&trial) {
                if trial_value <= value + ARMIJO_C * step * slope {
                    certified = ARMIJO_C * step * slope.abs() > noise;
                    accepted = Some((trial, trial_value, None));
                    break;
                }
                if (step * slope).abs() <= noise && trial_value <= value + noise {
                    if let Ok(trial_grad) = problem.gradient(&trial) {
                        if inf_norm(&trial_grad) < res {
                            accepted = Some((trial, trial_value, Some(trial_grad)));
                            break;
                        }
                    }
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, trial_value, trial_grad)) => {
                w = trial;
                value = trial_value;
                grad = match trial_grad {
                    Some(g) => g,
                    None => problem.gradient(&w)?,
                };
                trace.push(value);
                if !certified {
                    flux = problem.flux_start(&w);
                    if flux.is_none() {
                        let reason = "residual stagnated at the rounding floor";
                        if let Some(out) = stagnation.record(&w, value, &grad, opts, iter + 1, false, reason) {
                            return out.finish(trace, violations);
                        }
                    }
                }
            }
            None => {
                flux = problem.flux_start(&w);
                if flux.is_none() {
                    stagnation.record(&w, value, &grad, opts, iter, false, "line search stalled");
                    return stagnation.give_up(iter, "line search stalled", opts).finish(trace, violations);
                }
            }
        }
    }
    Err(fail(opts.newton_max_iter, inf_norm(&grad), "iteration cap exceeded", &w))
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    if t == 1.0 {
        return b.to_vec();
    }
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// Best iterate of the rounding regime and the number of steps since the
/// residual was last halved. Steps that still move `L` beyond its rounding
/// level do not count.
#[derive(Default)]
struct Stagnation {
    best: Option<(Vec<f64>, f64, f64)>,
    stalled: usize,
}

enum Exit {
    Floor { state: Vec<f64>, value: f64, residual: f64, iterations: usize },
    Fail(Error),
}

impl Exit {
    fn finish(self, trace: Vec<f64>, violations: usize) -> Result<NewtonOutcome> {
        match self {
            Exit::Floor {
                state,
                value,
                residual,
                iterations,
            } => Ok(NewtonOutcome {
                state,
                iterations,
                residual_norm: residual,
                objective: value,
                objective_trace: trace,
                m_matrix_violations: violations,
                converged: false,
            }),
            Exit::Fail(e) => Err(e),
        }
    }
}

impl Stagnation {
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        w: &[f64],
        value: f64,
        grad: &[f64],
        opts: &SolverOptions,
        iterations: usize,
        moving: bool,
        reason: &'static str,
    ) -> Option<Exit> {
        let res = inf_norm(grad);
        match &self.best {
            Some((_, _, r)) if res >= 0.5 * r => {
                if !moving {
                    self.stalled += 1;
                }
            }
            _ => {
                self.best = Some((w.to_vec(), value, res));
                self.stalled = 0;
            }
        }
        (self.stalled >= STAGNATION_STEPS && res > opts.newton_tol).then(|| self.give_up(iterations, reason, opts))
    }

    fn give_up(&mut self, iterations: usize, reason: &'static str, opts: &SolverOptions) -> Exit {
        let (state, value, residual) = self.best.take().expect("best iterate recorded");
        if opts.accept_rounding_floor {
            Exit::Floor {
                state,
                value,
                residual,
                iterations,
            }
        } else {
            Exit::Fail(Error::NonConvergence {
                iterations,
                residual_norm: residual,
                reason,
                last_iterate: state,
            })
        }
    }
}

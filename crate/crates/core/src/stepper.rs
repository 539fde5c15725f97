//! Implicit Euler / lumped P1 scheme.
//!
//! Each step finds `u^k` with
//!
//! ```text
//! ⟨dτ β(u^k), v⟩_h + ⟨μ(∂x u^k), ∂x v⟩ + α⟨u^k, v⟩_∂ = α⟨u_∂(t^k), v⟩_∂   ∀ v ∈ V_h
//! ```
//!
//! as the unique minimizer of the strictly convex objective
//!
//! ```text
//! L(w) = (1/τ)⟨B(w) − β(u^{k−1}) w, 1⟩_h + ⟨M(∂x w), 1⟩ + α⟨½w² − u_∂(t^k) w, 1⟩_∂
//! ```
//!
//! whose nodal gradient is the step residual.

use crate::constitutive::{ConstitutiveModel, Nonlinearity};
use crate::diagnostics::{self, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::grid::{Grid, NodalVector};
use crate::newton::{self, ConvexProblem, SolverOptions};
use crate::schedule::BoundarySchedule;
use crate::steady;
use crate::tridiag::Tridiagonal;

/// Complete description of one time-dependent run.
#[derive(Debug, Clone)]
pub struct Scenario<M = ConstitutiveModel> {
    pub grid: Grid,
    pub model: M,
    pub alpha: f64,
    pub horizon: f64,
    pub step: f64,
    pub initial: NodalVector,
    pub boundary: BoundarySchedule,
    pub solver: SolverOptions,
}

impl<M: Nonlinearity> Scenario<M> {
    /// Builds a scenario and checks the data assumptions: `α, τ > 0`,
    /// `T ≥ τ`, and initial and boundary data inside the model bounds on `[0, T]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: Grid,
        model: M,
        alpha: f64,
        horizon: f64,
        step: f64,
        initial: NodalVector,
        boundary: BoundarySchedule,
        solver: SolverOptions,
    ) -> Result<Self> {
        let s = Self {
            grid,
            model,
            alpha,
            horizon,
            step,
            initial,
            boundary,
            solver,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::invalid("step", format!("must be > 0, got {}", self.step)));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.step) {
            return Err(Error::invalid(
                "horizon",
                format!("must be ≥ step {}, got {}", self.step, self.horizon),
            ));
        }
        if self.initial.len() != self.grid.node_count() {
            return Err(Error::invalid(
                "initial",
                format!("expected {} nodal values, got {}", self.grid.node_count(), self.initial.len()),
            ));
        }
        let b = self.model.bounds();
        if let Some(v) = self.initial.iter().find(|&&v| !b.contains(v)) {
            return Err(Error::invalid(
                "initial",
                format!("value {v} outside [{}, {}]", b.lower, b.upper),
            ));
        }
        let (lo, hi) = self.boundary.range(self.horizon);
        if !(b.contains(lo) && b.contains(hi)) {
            return Err(Error::invalid(
                "boundary",
                format!("range [{lo}, {hi}] outside [{}, {}]", b.lower, b.upper),
            ));
        }
        Ok(())
    }

    /// Number of steps `K = ⌊T/τ⌋`.
    pub fn step_count(&self) -> usize {
        let ratio = self.horizon / self.step;
        (ratio * (1.0 + 1e-12)).floor() as usize
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.step
    }
}

/// Outcome of one implicit Euler step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: NodalVector,
    pub newton_iterations: usize,
    pub final_residual_norm: f64,
    pub objective_value: f64,
    /// Objective along the accepted Newton iterates.
    pub objective_trace: Vec<f64>,
    /// Iterates at which the assembled Jacobian was not an M-matrix.
    pub m_matrix_violations: usize,
    /// Residual within `newton_tol`; see [`SolverOptions::accept_rounding_floor`].
    pub converged: bool,
}

/// Solver statistics kept per step of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub newton_iterations: usize,
    pub final_residual_norm: f64,
    pub m_matrix_violations: usize,
    pub objective_monotone: bool,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<NodalVector>,
    /// One record per stored state, `diagnostics[0]` describes `u^0`.
    pub diagnostics: Vec<DiagnosticsRecord>,
    /// Solver statistics for steps `1..=K` (`solves[k-1]` produced `states[k]`).
    pub solves: Vec<SolveStats>,
}

impl Trajectory {
    pub fn final_state(&self) -> &NodalVector {
        self.states.last().expect("trajectory holds u^0")
    }
}

struct StepProblem<'a, M> {
    scenario: &'a Scenario<M>,
    beta_prev: Vec<f64>,
    boundary: (f64, f64),
    eps_reg: f64,
}

impl<M: Nonlinearity> StepProblem<'_, M> {
    fn slopes(&self, w: &[f64]) -> Vec<f64> {
        let h = self.scenario.grid.spacing();
        w.windows(2).map(|p| (p[1] - p[0]) / h).collect()
    }
}

impl<M: Nonlinearity> ConvexProblem for StepProblem<'_, M> {
    fn value(&self, w: &[f64]) -> Result<f64> {
        let sc = self.scenario;
        let tau = sc.step;
        let h = sc.grid.spacing();
        let mut mass = 0.0;
        for ((wi, &u), bp) in sc.grid.weights().iter().zip(w).zip(&self.beta_prev) {
            mass += wi * (sc.model.beta_primitive(u)? - bp * u);
        }
        let stiffness: f64 = self.slopes(w).iter().map(|&s| h * sc.model.mu_primitive(s)).sum();
        let (ua, ub) = self.boundary;
        let (w0, wn) = (w[0], w[w.len() - 1]);
        let robin = sc.alpha * (0.5 * w0 * w0 - ua * w0 + 0.5 * wn * wn - ub * wn);
        Ok(mass / tau + stiffness + robin)
    }

    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        let sc = self.scenario;
        let tau = sc.step;
        let n = w.len();
        let mut r = Vec::with_capacity(n);
        for ((wi, &u), bp) in sc.grid.weights().iter().zip(w).zip(&self.beta_prev) {
            r.push(wi / tau * (sc.model.beta(u)? - bp));
        }
        for (j, s) in self.slopes(w).into_iter().enumerate() {
            let flux = sc.model.mu(s);
            r[j] -= flux;
            r[j + 1] += flux;
        }
        let (ua, ub) = self.boundary;
        r[0] += sc.alpha * (w[0] - ua);
        r[n - 1] += sc.alpha * (w[n - 1] - ub);
        Ok(r)
    }

    fn hessian(&self, w: &[f64]) -> Result<Tridiagonal> {
        let sc = self.scenario;
        let tau = sc.step;
        let h = sc.grid.spacing();
        let n = w.len();
        let mut jac = Tridiagonal::zeros(n);
        for (i, (wi, &u)) in sc.grid.weights().iter().zip(w).enumerate() {
            jac.diag[i] = wi / tau * sc.model.beta_prime(u)?;
        }
        for (j, s) in self.slopes(w).into_iter().enumerate() {
            let k = regularized_mu_prime(&sc.model, s, self.eps_reg)? / h;
            jac.diag[j] += k;
            jac.diag[j + 1] += k;
            jac.lower[j] = -k;
            jac.upper[j] = -k;
        }
        jac.diag[0] += sc.alpha;
        jac.diag[n - 1] += sc.alpha;
        Ok(jac)
    }

    fn direction(&self, w: &[f64], rhs: &[f64], hess: Tridiagonal) -> Option<Vec<f64>> {
        sign_safeguarded_direction(&self.scenario.model, self.scenario.grid.spacing(), w, rhs, hess)
    }

    fn flux_start(&self, w: &[f64]) -> Option<Vec<f64>> {
        Some(self.slopes(w).into_iter().map(|s| self.scenario.model.mu(s)).collect())
    }

    /// Newton on `F(w, q) = 0`, `G(w, q) = 0` with
    ///
    /// ```text
    /// F_i = (w_i/τ)(β(w_i) − β(u^{k−1}_i)) + q_{i−1} − q_i + α(w_i − u_∂,i)[i ∈ {0, N}]
    /// G_j = h μ⁻¹(q_j) − (w_{j+1} − w_j)
    /// ```
    ///
    /// The nodal block `A = ∂F/∂w` is diagonal thanks to mass lumping, so
    /// `δw` is eliminated and the fluxes solve the symmetric tridiagonal
    /// M-matrix system `(h diag μ⁻¹'(q) + Bᵀ A⁻¹ B) δq = −G − Bᵀ A⁻¹ F`.
    fn flux_step(&self, w: &[f64], q: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let sc = self.scenario;
        let model = &sc.model;
        let (tau, h) = (sc.step, sc.grid.spacing());
        let n = w.len();
        let (ua, ub) = self.boundary;
        let mut a = Vec::with_capacity(n);
        let mut f = Vec::with_capacity(n);
        for (i, ((wi, &u), bp)) in sc.grid.weights().iter().zip(w).zip(&self.beta_prev).enumerate() {
            a.push(wi / tau * model.beta_prime(u).ok()?);
            f.push(wi / tau * (model.beta(u).ok()? - bp));
            if i > 0 {
                f[i] += q[i - 1];
            }
            if i < n - 1 {
                f[i] -= q[i];
            }
        }
        a[0] += sc.alpha;
        a[n - 1] += sc.alpha;
        f[0] += sc.alpha * (w[0] - ua);
        f[n - 1] += sc.alpha * (w[n - 1] - ub);

        let cells = n - 1;
        let mut sys = Tridiagonal::zeros(cells);
        let mut rhs = Vec::with_capacity(cells);
        for j in 0..cells {
            let g = h * model.mu_inv(q[j]) - (w[j + 1] - w[j]);
            sys.diag[j] = h * model.mu_inv_prime(q[j]) + 1.0 / a[j] + 1.0 / a[j + 1];
            if j + 1 < cells {
                sys.upper[j] = -1.0 / a[j + 1];
                sys.lower[j] = -1.0 / a[j + 1];
            }
            rhs.push(-g - (f[j + 1] / a[j + 1] - f[j] / a[j]));
        }
        let dq = sys.solve(&rhs)?;
        let next_w: Vec<f64> = (0..n)
            .map(|i| {
                let mut bdq = 0.0;
                if i > 0 {
                    bdq += dq[i - 1];
                }
                if i < cells {
                    bdq -= dq[i];
                }
                w[i] - (f[i] + bdq) / a[i]
            })
            .collect();
        let next_q: Vec<f64> = q.iter().zip(&dq).map(|(x, d)| x + d).collect();
        next_w.iter().all(|x| x.is_finite()).then_some((next_w, next_q))
    }
}

/// Newton direction with a curvature safeguard for `p < 2`.
///
/// `μ` is concave on `s > 0` (convex on `s < 0`), so from a slope far from a
/// near-zero root the tangent model overshoots through zero and the iterates
/// flip sign cell by cell, converging only linearly. Every cell whose slope
/// would change sign under the current direction gets the weight `μ(s)/s`
/// instead of `μ'(s)`, and the system is solved again until no further cell
/// flips. `μ(s)/s ≥ μ'(s)` for `p ≤ 2`, with equality at `p = 2`, so the
/// matrix stays a symmetric M-matrix and the linear case is unchanged.
pub(crate) fn sign_safeguarded_direction<M: Nonlinearity>(
    model: &M,
    h: f64,
    w: &[f64],
    rhs: &[f64],
    mut hess: Tridiagonal,
) -> Option<Vec<f64>> {
    let cells = w.len() - 1;
    let mut raised = vec![false; cells];
    loop {
        let dir = hess.solve(rhs)?;
        let mut changed = false;
        for j in 0..cells {
            let s = (w[j + 1] - w[j]) / h;
            let next = s + (dir[j + 1] - dir[j]) / h;
            if raised[j] || s == 0.0 || s * next >= 0.0 {
                continue;
            }
            raised[j] = true;
            let secant = model.mu(s) / s / h;
            let extra = secant + hess.upper[j];
            if extra > 0.0 {
                hess.diag[j] += extra;
                hess.diag[j + 1] += extra;
                hess.lower[j] -= extra;
                hess.upper[j] -= extra;
                changed = true;
            }
        }
        if !changed {
            return Some(dir);
        }
    }
}

/// `μ'(sign(s) · max(|s|, eps))`; with `eps = 0` this is the exact derivative.
pub fn regularized_mu_prime<M: Nonlinearity>(model: &M, s: f64, eps: f64) -> Result<f64> {
    let floored = if s.abs() < eps {
        if s < 0.0 {
            -eps
        } else {
            eps
        }
    } else {
        s
    };
    model.mu_prime(floored)
}

fn problem<'a, M: Nonlinearity>(
    scenario: &'a Scenario<M>,
    u_prev: &NodalVector,
    t_k: f64,
    eps_reg: f64,
) -> Result<StepProblem<'a, M>> {
    assert_eq!(u_prev.len(), scenario.grid.node_count(), "u_prev does not conform to grid");
    let beta_prev = u_prev.iter().map(|&u| scenario.model.beta(u)).collect::<Result<Vec<_>>>()?;
    Ok(StepProblem {
        scenario,
        beta_prev,
        boundary: scenario.boundary.at(t_k),
        eps_reg,
    })
}

/// Step residual; its zero is the scheme's solution at `t_k`.
pub fn residual<M: Nonlinearity>(
    scenario: &Scenario<M>,
    u: &NodalVector,
    u_prev: &NodalVector,
    t_k: f64,
) -> Result<NodalVector> {
    assert_eq!(u.len(), scenario.grid.node_count(), "u does not conform to grid");
    problem(scenario, u_prev, t_k, 0.0)?.gradient(u.as_slice()).map(NodalVector)
}

/// Step objective `L(w)`.
pub fn objective<M: Nonlinearity>(
    scenario: &Scenario<M>,
    w: &NodalVector,
    u_prev: &NodalVector,
    t_k: f64,
) -> Result<f64> {
    assert_eq!(w.len(), scenario.grid.node_count(), "w does not conform to grid");
    problem(scenario, u_prev, t_k, 0.0)?.value(w.as_slice())
}

/// Tangent Jacobian `(1/τ) D + K + R` of the residual at `u`.
pub fn jacobian<M: Nonlinearity>(scenario: &Scenario<M>, u: &NodalVector, t_k: f64, eps_reg: f64) -> Result<Tridiagonal> {
    assert_eq!(u.len(), scenario.grid.node_count(), "u does not conform to grid");
    // The Jacobian does not depend on u_prev; any positive vector will do.
    let stub = StepProblem {
        scenario,
        beta_prev: vec![0.0; u.len()],
        boundary: scenario.boundary.at(t_k),
        eps_reg,
    };
    stub.hessian(u.as_slice())
}

/// One implicit Euler step from `u_prev` to time `t_k`, warm-started at `u_prev`.
pub fn newton_solve<M: Nonlinearity>(
    scenario: &Scenario<M>,
    u_prev: &NodalVector,
    t_k: f64,
    opts: &SolverOptions,
) -> Result<StepResult> {
    newton_solve_from(scenario, u_prev, u_prev.clone(), t_k, opts)
}

/// Same as [`newton_solve`] with an explicit initial guess.
pub fn newton_solve_from<M: Nonlinearity>(
    scenario: &Scenario<M>,
    u_prev: &NodalVector,
    guess: NodalVector,
    t_k: f64,
    opts: &SolverOptions,
) -> Result<StepResult> {
    let p = problem(scenario, u_prev, t_k, opts.eps_reg)?;
    let out = newton::minimize(&p, guess.0, opts)?;
    Ok(StepResult {
        state: NodalVector(out.state),
        newton_iterations: out.iterations,
        final_residual_norm: out.residual_norm,
        objective_value: out.objective,
        objective_trace: out.objective_trace,
        m_matrix_violations: out.m_matrix_violations,
        converged: out.converged,
    })
}

fn objective_monotone(trace: &[f64]) -> bool {
    trace
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e3 * f64::EPSILON * (1.0 + w[0].abs()))
}

/// Marches the scheme over `t^1, …, t^K` and records diagnostics per step.
///
/// The relative entropy in each record is measured against the quasi-steady
/// state of the boundary data at that time.
pub fn advance<M: Nonlinearity>(scenario: &Scenario<M>) -> Result<Trajectory> {
    scenario.validate()?;
    let steps = scenario.step_count();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut records = Vec::with_capacity(steps + 1);
    let mut solves = Vec::with_capacity(steps);

    let record = |k: usize, u: &NodalVector, prev: Option<&NodalVector>, iters: usize| -> Result<DiagnosticsRecord> {
        let t = scenario.time(k);
        let (ua, ub) = scenario.boundary.at(t);
        let reference = steady::steady_analytic(&scenario.model, scenario.alpha, scenario.grid.length(), ua, ub)?
            .sample(&scenario.grid);
        diagnostics::record(scenario, t, u, prev, &reference.nodal, iters)
    };

    times.push(0.0);
    records.push(record(0, &scenario.initial, None, 0)?);
    states.push(scenario.initial.clone());

    for k in 1..=steps {
        let t = scenario.time(k);
        let prev = &states[k - 1];
        let step = newton_solve(scenario, prev, t, &scenario.solver).map_err(|e| Error::Step {
            step: k,
            time: t,
            source: Box::new(e),
        })?;
        records.push(record(k, &step.state, Some(prev), step.newton_iterations)?);
        solves.push(SolveStats {
            newton_iterations: step.newton_iterations,
            final_residual_norm: step.final_residual_norm,
            m_matrix_violations: step.m_matrix_violations,
            objective_monotone: objective_monotone(&step.objective_trace),
            converged: step.converged,
        });
        times.push(t);
        states.push(step.state);
    }
    Ok(Trajectory {
        times,
        states,
        diagnostics: records,
        solves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{BetaFamily, Bounds};

    fn heat_scenario(cells: usize, length: f64, ua: f64, ub: f64) -> Scenario {
        let bounds = Bounds::new(0.5, 2.0).unwrap();
        Scenario::new(
            Grid::new(length, cells).unwrap(),
            ConstitutiveModel::heat(bounds),
            1.0,
            1.0,
            1.0,
            NodalVector::constant(cells + 1, 1.0),
            BoundarySchedule::constant(ua, ub),
            SolverOptions::default(),
        )
        .unwrap()
    }

    fn gas_scenario(cells: usize, tau: f64, ua: f64, ub: f64, u0: NodalVector) -> Scenario {
        let bounds = Bounds::new(0.5, 2.0).unwrap();
        Scenario::new(
            Grid::new(1.0, cells).unwrap(),
            ConstitutiveModel::gas(bounds),
            1.0,
            1.0,
            tau,
            u0,
            BoundarySchedule::constant(ua, ub),
            SolverOptions::default(),
        )
        .unwrap()
    }

    fn v(x: &[f64]) -> NodalVector {
        NodalVector(x.to_vec())
    }

    #[test]
    fn residual_vanishes_for_constant_state() {
        let sc = gas_scenario(8, 0.1, 1.3, 1.3, NodalVector::constant(9, 1.3));
        let r = residual(&sc, &sc.initial, &sc.initial, 0.1).unwrap();
        assert!(r.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn residual_hand_assembly() {
        let sc = heat_scenario(2, 2.0, 2.0, 1.0);
        let ones = v(&[1.0, 1.0, 1.0]);
        assert_eq!(residual(&sc, &ones, &ones, 1.0).unwrap(), v(&[-1.0, 0.0, 0.0]));
    }

    #[test]
    fn residual_zero_at_analytic_steady_state() {
        for p in [1.5, 2.0] {
            let bounds = Bounds::new(0.5, 2.0).unwrap();
            let model = ConstitutiveModel::new(BetaFamily::Power { kappa: 1.0, gamma: 2.0 }, p, bounds).unwrap();
            let grid = Grid::new(1.0, 16).unwrap();
            let steady = steady::steady_analytic(&model, 1.0, 1.0, 1.0, 2.0).unwrap().sample(&grid);
            let sc = Scenario::new(
                grid,
                model,
                1.0,
                1.0,
                0.01,
                steady.nodal.clone(),
                BoundarySchedule::constant(1.0, 2.0),
                SolverOptions::default(),
            )
            .unwrap();
            let r = residual(&sc, &steady.nodal, &steady.nodal, 0.01).unwrap();
            assert!(r.iter().all(|x| x.abs() < 1e-12), "{r:?}");
        }
    }

    #[test]
    fn residual_rejects_non_positive_state() {
        let sc = gas_scenario(2, 0.1, 1.0, 1.0, NodalVector::constant(3, 1.0));
        let bad = v(&[1.0, -0.1, 1.0]);
        assert!(matches!(
            residual(&sc, &bad, &sc.initial, 0.1),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn objective_hand_value() {
        let sc = heat_scenario(1, 1.0, 1.0, 1.0);
        let ones = v(&[1.0, 1.0]);
        assert!((objective(&sc, &ones, &ones, 1.0).unwrap() + 1.5).abs() < 1e-15);
    }

    #[test]
    fn objective_gradient_is_residual() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let prev = NodalVector((0..9).map(|_| rng.gen_range(0.6..1.9)).collect());
        let sc = gas_scenario(8, 0.05, 0.8, 1.7, prev.clone());
        for _ in 0..5 {
            let w = NodalVector((0..9).map(|_| rng.gen_range(0.6..1.9)).collect());
            let r = residual(&sc, &w, &prev, 0.05).unwrap();
            let d = 1e-6;
            for i in 0..9 {
                let mut plus = w.clone();
                plus.0[i] += d;
                let mut minus = w.clone();
                minus.0[i] -= d;
                let fd = (objective(&sc, &plus, &prev, 0.05).unwrap() - objective(&sc, &minus, &prev, 0.05).unwrap())
                    / (2.0 * d);
                assert!((fd - r[i]).abs() < 1e-6 * (1.0 + r[i].abs()), "node {i}: {fd} vs {}", r[i]);
            }
        }
    }

    #[test]
    fn jacobian_hand_assembly_is_m_matrix() {
        let sc = heat_scenario(2, 2.0, 2.0, 1.0);
        let j = jacobian(&sc, &v(&[1.0, 1.0, 1.0]), 1.0, 0.0).unwrap();
        assert_eq!(j.diag, vec![2.5, 3.0, 2.5]);
        assert_eq!(j.lower, vec![-1.0, -1.0]);
        assert_eq!(j.upper, vec![-1.0, -1.0]);
        assert!(diagnostics::check_m_matrix(&j).is_m_matrix);
        for i in 0..3 {
            assert!(j.row_sum(i) >= 0.0);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let prev = v(&[1.0, 1.1, 1.3, 1.6, 1.8]);
        let sc = gas_scenario(4, 0.05, 1.0, 2.0, prev.clone());
        let u = v(&[0.9, 1.2, 1.35, 1.5, 1.95]);
        let j = jacobian(&sc, &u, 0.05, 0.0).unwrap();
        let d = 1e-6;
        for col in 0..5 {
            let mut plus = u.clone();
            plus.0[col] += d;
            let mut minus = u.clone();
            minus.0[col] -= d;
            let rp = residual(&sc, &plus, &prev, 0.05).unwrap();
            let rm = residual(&sc, &minus, &prev, 0.05).unwrap();
            for row in 0..5 {
                let fd = (rp[row] - rm[row]) / (2.0 * d);
                assert!((fd - j.get(row, col)).abs() < 1e-5, "({row},{col}): {fd} vs {}", j.get(row, col));
            }
        }
    }

    #[test]
    fn jacobian_zero_slope_requires_regularization() {
        let sc = gas_scenario(2, 0.1, 1.0, 1.0, NodalVector::constant(3, 1.0));
        assert!(jacobian(&sc, &sc.initial, 0.1, 0.0).is_err());
        let j = jacobian(&sc, &sc.initial, 0.1, 1e-8).unwrap();
        assert!((j.upper[0] + 0.5 / 1e-4 / 0.5).abs() < 1e-9);
    }

    #[test]
    fn newton_constant_and_linear_cases() {
        let sc = gas_scenario(8, 0.1, 1.3, 1.3, NodalVector::constant(9, 1.3));
        let out = newton_solve(&sc, &sc.initial, 0.1, &sc.solver).unwrap();
        assert!(out.newton_iterations <= 1);
        assert!(out.state.max_abs_diff(&sc.initial) < 1e-14);

        let sc = heat_scenario(2, 2.0, 2.0, 1.0);
        let out = newton_solve(&sc, &sc.initial, 1.0, &sc.solver).unwrap();
        assert_eq!(out.newton_iterations, 1);
        assert!(out.final_residual_norm <= 1e-10);
    }

    #[test]
    fn newton_minimizer_is_unique() {
        let prev = v(&[1.0, 1.4, 0.7, 1.9, 1.2]);
        let sc = gas_scenario(4, 0.1, 0.6, 1.8, prev.clone());
        let a = newton_solve(&sc, &prev, 0.1, &sc.solver).unwrap();
        let b = newton_solve_from(&sc, &prev, NodalVector::constant(5, 1.9), 0.1, &sc.solver).unwrap();
        assert!(a.state.max_abs_diff(&b.state) < 1e-10);
        assert!(objective_monotone(&a.objective_trace));
        assert!(objective_monotone(&b.objective_trace));
    }

    #[test]
    fn single_cell_is_supported() {
        let sc = gas_scenario(1, 0.1, 1.0, 2.0, v(&[1.5, 1.5]));
        let traj = advance(&sc).unwrap();
        assert_eq!(traj.states.len(), 11);
        assert!(traj.solves.iter().all(|s| s.final_residual_norm <= 1e-10));
    }

    #[test]
    fn advance_constant_data_stays_constant() {
        let sc = gas_scenario(8, 0.1, 1.3, 1.3, NodalVector::constant(9, 1.3));
        let traj = advance(&sc).unwrap();
        assert_eq!(traj.times.len(), 11);
        for s in &traj.states {
            assert!(s.max_abs_diff(&sc.initial) < 1e-14);
        }
    }

    #[test]
    fn step_count_tolerates_rounding() {
        let mut sc = gas_scenario(4, 1e-3, 1.0, 1.0, NodalVector::constant(5, 1.0));
        sc.horizon = 5.0;
        assert_eq!(sc.step_count(), 5000);
        sc.horizon = 0.3;
        sc.step = 0.1;
        assert_eq!(sc.step_count(), 3);
    }

    #[test]
    fn scenario_rejects_out_of_range_data() {
        let bounds = Bounds::new(0.5, 2.0).unwrap();
        let grid = Grid::new(1.0, 2).unwrap();
        let bad_initial = Scenario::new(
            grid.clone(),
            ConstitutiveModel::gas(bounds),
            1.0,
            1.0,
            0.1,
            v(&[1.0, 0.4, 1.0]),
            BoundarySchedule::constant(1.0, 1.0),
            SolverOptions::default(),
        );
        assert!(bad_initial.is_err());
        let bad_alpha = Scenario::new(
            grid,
            ConstitutiveModel::gas(bounds),
            0.0,
            1.0,
            0.1,
            NodalVector::constant(3, 1.0),
            BoundarySchedule::constant(1.0, 1.0),
            SolverOptions::default(),
        );
        assert!(bad_alpha.is_err());
    }
}

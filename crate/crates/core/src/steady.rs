//! Stationary problem `−∂x μ(∂x û) = 0` with Robin data.
//!
//! Discrete and exact steady states coincide and are affine, so the slope
//! `s` solves the scalar monotone equation `2 μ(s) + α ℓ s = α (u_b − u_a)`
//! and `û(0) = u_a + μ(s)/α`. [`steady_analytic`] uses that reduction;
//! [`steady_discrete`] minimizes the stationary energy on the grid.

use crate::constitutive::Nonlinearity;
use crate::error::{Error, Result};
use crate::grid::{boundary_pairing, Grid, NodalVector};
use crate::newton::{self, ConvexProblem, SolverOptions};
use crate::stepper::{regularized_mu_prime, sign_safeguarded_direction};
use crate::tridiag::Tridiagonal;

/// Affine profile `û(x) = u_left + slope · x` on `[0, ℓ]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineProfile {
    pub u_left: f64,
    pub slope: f64,
    pub length: f64,
}

impl AffineProfile {
    pub fn value(&self, x: f64) -> f64 {
        self.u_left + self.slope * x
    }

    pub fn u_right(&self) -> f64 {
        self.value(self.length)
    }

    pub fn sample(&self, grid: &Grid) -> SteadyState {
        SteadyState {
            u_left: self.u_left,
            slope: self.slope,
            nodal: grid.interpolate(|x| self.value(x)),
        }
    }
}

/// Steady state sampled at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub u_left: f64,
    pub slope: f64,
    pub nodal: NodalVector,
}

const ROOT_RTOL: f64 = 4.0 * f64::EPSILON;
/// Far from the root Newton on `q^{1/(p−1)}` contracts by about `2 − p` per step.
const ROOT_MAX_ITER: usize = 100_000;

/// Closed-form / scalar-root steady state for boundary data `(ua, ub)`.
pub fn steady_analytic<M: Nonlinearity>(model: &M, alpha: f64, length: f64, ua: f64, ub: f64) -> Result<AffineProfile> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha", format!("must be > 0, got {alpha}")));
    }
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::invalid("length", format!("must be > 0, got {length}")));
    }
    let flux = steady_flux(model, alpha, length, ub - ua)?;
    Ok(AffineProfile {
        u_left: ua + flux / alpha,
        slope: model.mu_inv(flux),
        length,
    })
}

/// Flux `F = μ(s)` of the steady state: root of `φ(F) = ℓ μ⁻¹(F) + 2F/α − Δ`.
///
/// `φ` is increasing and convex on the side of `F = 0` that holds the root,
/// and `φ(αΔ/2)` has the sign of `Δ`, so Newton from `αΔ/2` moves
/// monotonically towards the root.
fn steady_flux<M: Nonlinearity>(model: &M, alpha: f64, length: f64, jump: f64) -> Result<f64> {
    if jump == 0.0 {
        return Ok(0.0);
    }
    let phi = |f: f64| length * model.mu_inv(f) + 2.0 * f / alpha - jump;
    let mut f = 0.5 * alpha * jump;
    for _ in 0..ROOT_MAX_ITER {
        let value = phi(f);
        let next = f - value / (length * model.mu_inv_prime(f) + 2.0 / alpha);
        // monotone iterates: stop once they no longer move towards the root
        if !((next - f) * jump < 0.0) || (next - f).abs() <= ROOT_RTOL * next.abs() {
            return Ok(if next * jump > 0.0 && phi(next).abs() < value.abs() { next } else { f });
        }
        f = next;
    }
    Err(Error::invalid(
        "steady state",
        format!("flux root not found for Δ = {jump} after {ROOT_MAX_ITER} iterations"),
    ))
}

struct StationaryProblem<'a, M> {
    grid: &'a Grid,
    model: &'a M,
    alpha: f64,
    data: (f64, f64),
    eps_reg: f64,
}

impl<M: Nonlinearity> StationaryProblem<'_, M> {
    fn slopes(&self, w: &[f64]) -> Vec<f64> {
        let h = self.grid.spacing();
        w.windows(2).map(|p| (p[1] - p[0]) / h).collect()
    }
}

impl<M: Nonlinearity> ConvexProblem for StationaryProblem<'_, M> {
    fn value(&self, w: &[f64]) -> Result<f64> {
        let h = self.grid.spacing();
        let energy: f64 = self.slopes(w).iter().map(|&s| h * self.model.mu_primitive(s)).sum();
        let (ua, ub) = self.data;
        let (w0, wn) = (w[0], w[w.len() - 1]);
        Ok(energy + self.alpha * (0.5 * w0 * w0 - ua * w0 + 0.5 * wn * wn - ub * wn))
    }

    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        let n = w.len();
        let mut r = vec![0.0; n];
        for (j, s) in self.slopes(w).into_iter().enumerate() {
            let flux = self.model.mu(s);
            r[j] -= flux;
            r[j + 1] += flux;
        }
        let (ua, ub) = self.data;
        r[0] += self.alpha * (w[0] - ua);
        r[n - 1] += self.alpha * (w[n - 1] - ub);
        Ok(r)
    }

    fn hessian(&self, w: &[f64]) -> Result<Tridiagonal> {
        let h = self.grid.spacing();
        let n = w.len();
        let mut jac = Tridiagonal::zeros(n);
        for (j, s) in self.slopes(w).into_iter().enumerate() {
            let k = regularized_mu_prime(self.model, s, self.eps_reg)? / h;
            jac.diag[j] += k;
            jac.diag[j + 1] += k;
            jac.lower[j] = -k;
            jac.upper[j] = -k;
        }
        jac.diag[0] += self.alpha;
        jac.diag[n - 1] += self.alpha;
        Ok(jac)
    }

    fn direction(&self, w: &[f64], rhs: &[f64], hess: Tridiagonal) -> Option<Vec<f64>> {
        sign_safeguarded_direction(self.model, self.grid.spacing(), w, rhs, hess)
    }

    fn flux_first(&self) -> bool {
        true
    }

    fn flux_start(&self, w: &[f64]) -> Option<Vec<f64>> {
        Some(self.slopes(w).into_iter().map(|s| self.model.mu(s)).collect())
    }

    /// Newton on `F(w, q) = 0`, `G(w, q) = 0` with
    ///
    /// ```text
    /// F_i = q_{i−1} − q_i + α(w_i − u_∂,i)[i ∈ {0, N}]
    /// G_j = h μ⁻¹(q_j) − (w_{j+1} − w_j)
    /// ```
    ///
    /// The interior rows of `F` fix every `δq_j` in terms of `δq_0`, the
    /// rows of `G` then fix `δw` by summation, and the last row of `F` is a
    /// scalar equation for `δq_0`. Once the interior balance holds the fluxes
    /// are equal and the step is scalar Newton on the monotone convex map
    /// `q ↦ ℓ μ⁻¹(q) + 2q/α`, which converges from any start.
    fn flux_step(&self, w: &[f64], q: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let h = self.grid.spacing();
        let (ua, ub) = self.data;
        let alpha = self.alpha;
        let n = w.len();
        let cells = n - 1;
        let f_first = -q[0] + alpha * (w[0] - ua);
        let f_last = q[cells - 1] + alpha * (w[n - 1] - ub);
        // δq_j = δq_0 + shift_j, δw_{j+1} − δw_j = c_j δq_j + g_j
        let mut shift = vec![0.0; cells];
        for j in 1..cells {
            shift[j] = shift[j - 1] + q[j - 1] - q[j];
        }
        let c: Vec<f64> = q.iter().map(|&qj| h * self.model.mu_inv_prime(qj)).collect();
        let g: Vec<f64> = (0..cells).map(|j| h * self.model.mu_inv(q[j]) - (w[j + 1] - w[j])).collect();
        let c_sum: f64 = c.iter().sum();
        let offset: f64 = (0..cells).map(|j| c[j] * shift[j] + g[j]).sum();
        let dq0 = (f_first - f_last - shift[cells - 1] - alpha * offset) / (2.0 + alpha * c_sum);
        if !dq0.is_finite() {
            return None;
        }
        let mut next_w = Vec::with_capacity(n);
        let mut dw = (dq0 - f_first) / alpha;
        next_w.push(w[0] + dw);
        let mut next_q = Vec::with_capacity(cells);
        for j in 0..cells {
            let dq = dq0 + shift[j];
            dw += c[j] * dq + g[j];
            next_q.push(q[j] + dq);
            next_w.push(w[j + 1] + dw);
        }
        Some((next_w, next_q))
    }
}

/// Default options for the stationary solve: the residual is `O(1)`-scaled,
/// so a tighter tolerance than the time stepper's is affordable. For `p`
/// near 1 and small slopes the spacing of representable slopes puts a floor
/// above it; the best iterate is returned then.
pub fn stationary_options() -> SolverOptions {
    SolverOptions {
        newton_tol: 1e-12,
        accept_rounding_floor: true,
        ..SolverOptions::default()
    }
}

/// Discrete steady state by damped Newton on the stationary energy
/// `⟨M(∂x w), 1⟩ + α⟨½w² − û_∂ w, 1⟩_∂`.
pub fn steady_discrete<M: Nonlinearity>(grid: &Grid, model: &M, alpha: f64, ua: f64, ub: f64) -> Result<SteadyState> {
    steady_discrete_with(grid, model, alpha, ua, ub, &stationary_options())
}

pub fn steady_discrete_with<M: Nonlinearity>(
    grid: &Grid,
    model: &M,
    alpha: f64,
    ua: f64,
    ub: f64,
    opts: &SolverOptions,
) -> Result<SteadyState> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha", format!("must be > 0, got {alpha}")));
    }
    let problem = StationaryProblem {
        grid,
        model,
        alpha,
        data: (ua, ub),
        eps_reg: opts.eps_reg,
    };
    let guess = grid.interpolate(|x| ua + (ub - ua) * x / grid.length());
    let out = newton::minimize(&problem, guess.0, opts)?;
    let nodal = NodalVector(out.state);
    let slopes = grid.piecewise_gradient(&nodal);
    let slope = slopes.iter().sum::<f64>() / slopes.len() as f64;
    Ok(SteadyState {
        u_left: nodal[0],
        slope,
        nodal,
    })
}

/// Sensitivity of the steady state to its boundary data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityGaps {
    /// `‖û − û′‖²_∂`.
    pub boundary_gap: f64,
    /// `‖û − û′‖²_{L²}`.
    pub domain_gap: f64,
    /// `‖u_∂ − u_∂′‖²_∂`.
    pub data_gap: f64,
}

impl StabilityGaps {
    /// `‖û − û′‖²_∂ ≤ ‖u_∂ − u_∂′‖²_∂` (with rounding slack).
    pub fn boundary_bound_holds(&self) -> bool {
        self.boundary_gap <= self.data_gap * (1.0 + 1e-9) + 1e-20
    }

    /// `‖û − û′‖²_{L²} ≤ (2/3) ℓ ‖u_∂ − u_∂′‖²_∂`.
    pub fn domain_bound_holds(&self, length: f64) -> bool {
        self.domain_gap <= 2.0 / 3.0 * length * self.data_gap * (1.0 + 1e-9) + 1e-20
    }
}

pub fn steady_data_stability<M: Nonlinearity>(
    model: &M,
    alpha: f64,
    grid: &Grid,
    data: (f64, f64),
    other: (f64, f64),
) -> Result<StabilityGaps> {
    let a = steady_discrete(grid, model, alpha, data.0, data.1)?;
    let b = steady_discrete(grid, model, alpha, other.0, other.1)?;
    let diff = a.nodal.sub(&b.nodal);
    let (da, db) = (data.0 - other.0, data.1 - other.1);
    Ok(StabilityGaps {
        boundary_gap: boundary_pairing(&diff, &diff),
        domain_gap: grid.exact_l2_norm_sq(&diff),
        data_gap: da * da + db * db,
    })
}

//! Entropy and dissipation functionals, relative entropy, the per-step
//! inequality checks and exponential-decay fits.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::constitutive::Nonlinearity;
use crate::error::{Error, Result};
use crate::grid::{boundary_pairing, Grid, NodalVector};
use crate::stepper::{Scenario, Trajectory};
use crate::tridiag::Tridiagonal;

/// Per-step diagnostics; one CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub time: f64,
    pub entropy: f64,
    pub dissipation: f64,
    pub relative_entropy: f64,
    pub min_u: f64,
    pub max_u: f64,
    /// `‖dτ u^k‖²_{L²}`, zero for the initial state.
    pub dtau_l2_sq: f64,
    /// `‖u^k − u_∂(t^k)‖²_∂`.
    pub boundary_mismatch: f64,
    pub newton_iterations: usize,
}

pub const CSV_HEADER: &str =
    "t,entropy,dissipation,rel_entropy,min_u,max_u,dtau_l2_sq,boundary_mismatch,newton_iters";

/// Fixed 17-significant-digit formatting used for every emitted float.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl DiagnosticsRecord {
    pub fn csv_row(&self) -> String {
        [
            self.time,
            self.entropy,
            self.dissipation,
            self.relative_entropy,
            self.min_u,
            self.max_u,
            self.dtau_l2_sq,
            self.boundary_mismatch,
        ]
        .iter()
        .map(|&x| fmt_f64(x))
        .chain(std::iter::once(self.newton_iterations.to_string()))
        .collect::<Vec<_>>()
        .join(",")
    }
}

pub fn write_csv<W: Write>(records: &[DiagnosticsRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// `E_h(u) = ⟨η(β(u)), 1⟩_h`.
pub fn entropy_h<M: Nonlinearity>(grid: &Grid, model: &M, u: &NodalVector) -> Result<f64> {
    assert_eq!(u.len(), grid.node_count(), "u does not conform to grid");
    let mut sum = 0.0;
    for (w, &x) in grid.weights().iter().zip(u.iter()) {
        sum += w * model.eta(model.beta(x)?)?;
    }
    Ok(sum)
}

/// `⟨μ(∂x u), ∂x u⟩`.
pub fn flux_dissipation<M: Nonlinearity>(grid: &Grid, model: &M, u: &NodalVector) -> f64 {
    let h = grid.spacing();
    grid.piecewise_gradient(u).iter().map(|&s| h * model.mu(s) * s).sum()
}

/// `D(u) = ⟨μ(∂x u), ∂x u⟩ + α⟨u, u⟩_∂`.
pub fn dissipation<M: Nonlinearity>(grid: &Grid, model: &M, alpha: f64, u: &NodalVector) -> f64 {
    flux_dissipation(grid, model, u) + alpha * boundary_pairing(u, u)
}

/// `H_h(β(u) | β(u_ref)) = ⟨η(ρ) − η(ρ̂) − η'(ρ̂)(ρ − ρ̂), 1⟩_h`.
pub fn relative_entropy<M: Nonlinearity>(grid: &Grid, model: &M, u: &NodalVector, u_ref: &NodalVector) -> Result<f64> {
    assert_eq!(u.len(), grid.node_count(), "u does not conform to grid");
    assert_eq!(u_ref.len(), grid.node_count(), "u_ref does not conform to grid");
    let mut sum = 0.0;
    for ((w, &x), &y) in grid.weights().iter().zip(u.iter()).zip(u_ref.iter()) {
        sum += w * model.bregman(model.beta(x)?, model.beta(y)?)?;
    }
    Ok(sum)
}

/// Constants of the sandwich `c1 ‖ρ − ρ̂‖² ≤ H_h ≤ c2 ‖ρ − ρ̂‖²` (exact L² norm):
/// `c1 = ½ min η''`, `c2 = (3/2) max η''` over `[β(u̲), β(ū)]`.
pub fn sandwich_constants<M: Nonlinearity>(model: &M) -> Result<(f64, f64)> {
    let b = model.bounds();
    let (lo, hi) = (model.beta(b.lower)?, model.beta(b.upper)?);
    let mut min = f64::INFINITY;
    let mut max: f64 = 0.0;
    const SAMPLES: usize = 256;
    for i in 0..=SAMPLES {
        let rho = lo + (hi - lo) * i as f64 / SAMPLES as f64;
        let e = model.eta_second(rho)?;
        min = min.min(e);
        max = max.max(e);
    }
    Ok((0.5 * min, 1.5 * max))
}

/// Builds the record for state `u` at time `t`.
pub fn record<M: Nonlinearity>(
    scenario: &Scenario<M>,
    t: f64,
    u: &NodalVector,
    prev: Option<&NodalVector>,
    reference: &NodalVector,
    newton_iterations: usize,
) -> Result<DiagnosticsRecord> {
    let grid = &scenario.grid;
    let model = &scenario.model;
    let (ua, ub) = scenario.boundary.at(t);
    let dtau_l2_sq = match prev {
        Some(p) => {
            let d = u.sub(p).map(|x| x / scenario.step);
            grid.exact_l2_norm_sq(&d)
        }
        None => 0.0,
    };
    let (m0, mn) = (u.first() - ua, u.last() - ub);
    Ok(DiagnosticsRecord {
        time: t,
        entropy: entropy_h(grid, model, u)?,
        dissipation: dissipation(grid, model, scenario.alpha, u),
        relative_entropy: relative_entropy(grid, model, u, reference)?,
        min_u: u.min(),
        max_u: u.max(),
        dtau_l2_sq,
        boundary_mismatch: m0 * m0 + mn * mn,
        newton_iterations,
    })
}

/// Slack of both forms of the discrete entropy inequality at step `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropySlack {
    pub step: usize,
    pub time: f64,
    /// `dτE_h + D(u^k) − α⟨u^k, u_∂(t^k)⟩_∂`.
    pub inflow: f64,
    /// `dτE_h + ⟨μ(∂x u), ∂x u⟩ + α‖u − u_∂‖²_∂ + α⟨u − u_∂, u_∂⟩_∂`.
    pub gap: f64,
    /// `1e-10 · max(|E_h(u^k)|, 1)`.
    pub tolerance: f64,
}

impl EntropySlack {
    pub fn holds(&self) -> bool {
        self.inflow <= self.tolerance && self.gap <= self.tolerance
    }
}

pub const ENTROPY_SLACK_REL_TOL: f64 = 1e-10;

/// Evaluates the entropy-dissipation inequality at every step of a trajectory.
pub fn check_entropy_dissipation<M: Nonlinearity>(
    trajectory: &Trajectory,
    scenario: &Scenario<M>,
) -> Result<Vec<EntropySlack>> {
    let grid = &scenario.grid;
    let model = &scenario.model;
    let alpha = scenario.alpha;
    let tau = scenario.step;
    let mut out = Vec::with_capacity(trajectory.states.len().saturating_sub(1));
    let mut prev_entropy = entropy_h(grid, model, &trajectory.states[0])?;
    for (k, u) in trajectory.states.iter().enumerate().skip(1) {
        let t = trajectory.times[k];
        let (ua, ub) = scenario.boundary.at(t);
        let entropy = entropy_h(grid, model, u)?;
        let rate = (entropy - prev_entropy) / tau;
        let (u0, un) = (u.first(), u.last());
        let inflow = rate + dissipation(grid, model, alpha, u) - alpha * (u0 * ua + un * ub);
        let (m0, mn) = (u0 - ua, un - ub);
        let gap = rate
            + flux_dissipation(grid, model, u)
            + alpha * (m0 * m0 + mn * mn)
            + alpha * (m0 * ua + mn * ub);
        out.push(EntropySlack {
            step: k,
            time: t,
            inflow,
            gap,
            tolerance: ENTROPY_SLACK_REL_TOL * entropy.abs().max(1.0),
        });
        prev_entropy = entropy;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MMatrixCheck {
    pub is_m_matrix: bool,
    pub first_violation: Option<usize>,
}

/// Positive diagonal, nonpositive off-diagonals and row sums `≥ −1e-12`.
pub fn check_m_matrix(j: &Tridiagonal) -> MMatrixCheck {
    let n = j.dim();
    for i in 0..n {
        let off_ok = (i == 0 || j.lower[i - 1] <= 0.0) && (i + 1 == n || j.upper[i] <= 0.0);
        if !(j.diag[i] > 0.0 && off_ok && j.row_sum(i) >= -1e-12) {
            return MMatrixCheck {
                is_m_matrix: false,
                first_violation: Some(i),
            };
        }
    }
    MMatrixCheck {
        is_m_matrix: true,
        first_violation: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    /// `−d ln(value)/dt` from least squares.
    pub rate: f64,
    pub r_squared: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Least-squares fit of `ln(values)` against `times`, ignoring samples with
/// `t < burn_in` or `value < floor`.
pub fn fit_decay_rate(times: &[f64], values: &[f64], burn_in: f64, floor: f64) -> Result<DecayFit> {
    assert_eq!(times.len(), values.len());
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|&(&t, &v)| t >= burn_in && v >= floor && v > 0.0 && v.is_finite())
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(pts.len()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(DecayFit {
        rate: -slope,
        r_squared,
        intercept,
        points: pts.len(),
    })
}

/// `Σ_k τ ‖dτ u^k‖²_{L²}` with the exact L² norm.
pub fn dtau_energy_sum(trajectory: &Trajectory, grid: &Grid) -> f64 {
    trajectory
        .states
        .windows(2)
        .zip(trajectory.times.windows(2))
        .map(|(s, t)| {
            let tau = t[1] - t[0];
            let d = s[1].sub(&s[0]).map(|x| x / tau);
            tau * grid.exact_l2_norm_sq(&d)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{Bounds, ConstitutiveModel};

    fn bounds() -> Bounds {
        Bounds::new(0.5, 2.0).unwrap()
    }

    fn v(x: &[f64]) -> NodalVector {
        NodalVector(x.to_vec())
    }

    #[test]
    fn entropy_examples() {
        let heat = ConstitutiveModel::heat(bounds());
        let gas = ConstitutiveModel::gas(bounds());
        for n in [1usize, 3, 10] {
            let g = Grid::new(1.0, n).unwrap();
            let e = entropy_h(&g, &heat, &NodalVector::constant(n + 1, 1.5)).unwrap();
            assert!((e - 1.125).abs() < 1e-14);
            let e = entropy_h(&g, &gas, &NodalVector::constant(n + 1, 4.0)).unwrap();
            assert!((e - 8.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn dissipation_examples() {
        let gas = ConstitutiveModel::gas(bounds());
        let g = Grid::new(1.0, 3).unwrap();
        assert_eq!(dissipation(&g, &gas, 1.0, &NodalVector::constant(4, 0.0)), 0.0);
        assert!((dissipation(&g, &gas, 0.7, &NodalVector::constant(4, 1.5)) - 2.0 * 0.7 * 2.25).abs() < 1e-15);
        let g = Grid::new(1.0, 1).unwrap();
        assert_eq!(dissipation(&g, &gas, 1.0, &v(&[0.0, 4.0])), 24.0);
    }

    #[test]
    fn relative_entropy_examples() {
        let heat = ConstitutiveModel::heat(bounds());
        let g = Grid::new(1.0, 4).unwrap();
        let u = v(&[1.0, 1.2, 0.7, 1.9, 1.1]);
        let r = v(&[1.1, 1.0, 1.0, 1.5, 1.1]);
        assert_eq!(relative_entropy(&g, &heat, &u, &u).unwrap(), 0.0);
        let d = u.sub(&r);
        let expected = 0.5 * g.lumped_inner(&d, &d);
        assert!((relative_entropy(&g, &heat, &u, &r).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn sandwich_bounds_hold_for_gas() {
        let gas = ConstitutiveModel::gas(bounds());
        let (c1, c2) = sandwich_constants(&gas).unwrap();
        assert!((c1 - 0.5 * 2.0 * 0.5f64.sqrt()).abs() < 1e-12);
        let g = Grid::new(1.0, 6).unwrap();
        let u = v(&[0.5, 0.9, 2.0, 1.3, 1.5, 0.8, 1.9]);
        let r = v(&[1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6]);
        let rho = u.map(|x| x.sqrt());
        let rho_hat = r.map(|x| x.sqrt());
        let d = rho.sub(&rho_hat);
        let l2 = g.exact_l2_norm_sq(&d);
        let h = relative_entropy(&g, &gas, &u, &r).unwrap();
        assert!(c1 * l2 <= h && h <= c2 * l2);
    }

    #[test]
    fn m_matrix_checks() {
        let j = Tridiagonal {
            lower: vec![-1.0, -1.0],
            diag: vec![2.5, 3.0, 2.5],
            upper: vec![-1.0, -1.0],
        };
        assert_eq!(
            check_m_matrix(&j),
            MMatrixCheck {
                is_m_matrix: true,
                first_violation: None
            }
        );
        let mut bad = j.clone();
        bad.upper[1] = 0.1;
        assert_eq!(check_m_matrix(&bad).first_violation, Some(1));
        assert!(check_m_matrix(&Tridiagonal::identity(4)).is_m_matrix);
        let mut weak = j;
        weak.diag[1] = 1.5;
        assert_eq!(check_m_matrix(&weak).first_violation, Some(1));
    }

    #[test]
    fn decay_fit_examples() {
        let t: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let v: Vec<f64> = t.iter().map(|t| (-3.0 * t).exp()).collect();
        let fit = fit_decay_rate(&t, &v, 0.0, 0.0).unwrap();
        assert!((fit.rate - 3.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let v: Vec<f64> = t.iter().map(|t| 5.0 * (-0.7 * t).exp()).collect();
        let fit = fit_decay_rate(&t, &v, 0.0, 0.0).unwrap();
        assert!((fit.rate - 0.7).abs() < 1e-12);
        assert!((fit.intercept - 5f64.ln()).abs() < 1e-12);
        assert!(matches!(
            fit_decay_rate(&t, &v, 0.95, 0.0),
            Err(Error::InsufficientData(1))
        ));
        let fit = fit_decay_rate(&t, &v, 0.0, 5.0 * (-0.7f64 * 0.55).exp()).unwrap();
        assert_eq!(fit.points, 6);
    }

    #[test]
    fn csv_layout() {
        let r = DiagnosticsRecord {
            time: 0.5,
            entropy: 1.0,
            dissipation: 2.0,
            relative_entropy: 0.0,
            min_u: 0.5,
            max_u: 2.0,
            dtau_l2_sq: 0.25,
            boundary_mismatch: 1e-20,
            newton_iterations: 3,
        };
        let mut buf = Vec::new();
        write_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let row = lines.next().unwrap();
        assert!(row.starts_with("5.0000000000000000e-1,1.0000000000000000e0,"));
        assert!(row.ends_with(",3"));
        assert_eq!(row.split(',').count(), 9);
    }
}

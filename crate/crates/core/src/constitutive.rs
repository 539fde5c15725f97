//! Constitutive nonlinearities `β` (storage) and `μ` (flux) together with the
//! derived scalar functions used by the scheme:
//!
//! * `B(u) = ∫₀ᵘ β`, `M(s) = ∫₀ˢ μ`, the convex potentials of the step objective;
//! * `η(ρ) = ∫₀^ρ β⁻¹`, the entropy density, with `η' = β⁻¹`.
//!
//! Two families ship built in: `β(u) = κ u^{1/γ}` (the isentropic gas case is
//! `γ = 2`) or `β(u) = u`, combined with `μ(s) = |s|^{p-2} s` for `1 < p ≤ 2`.
//! Anything implementing [`Nonlinearity`] can be plugged into the solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Admissible data range `0 < lower ≤ upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && lower > 0.0) {
            return Err(Error::invalid("lower_bound", format!("must be finite and > 0, got {lower}")));
        }
        if !(upper.is_finite() && upper >= lower) {
            return Err(Error::invalid(
                "upper_bound",
                format!("must be finite and ≥ lower bound {lower}, got {upper}"),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, u: f64) -> bool {
        self.lower <= u && u <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Storage nonlinearity family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum BetaFamily {
    /// `β(u) = κ u^{1/γ}`, defined for `u > 0`.
    Power { kappa: f64, gamma: f64 },
    /// `β(u) = u`.
    Linear,
}

/// Selector for [`Nonlinearity::primitive`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    B,
    M,
    Eta,
}

/// Selector for [`Nonlinearity::derivative`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    BetaPrime,
    MuPrime,
    EtaPrime,
}

/// The pair `(β, μ)` and everything the scheme derives from it.
///
/// Implementations must keep `β` strictly increasing, `μ` odd and strictly
/// increasing with `μ(0) = 0`, and the primitives consistent (`B' = β`,
/// `M' = μ`, `η' = β⁻¹`). Singular points are reported as [`Error::Domain`],
/// never as NaN.
pub trait Nonlinearity: Send + Sync {
    fn beta(&self, u: f64) -> Result<f64>;
    fn beta_prime(&self, u: f64) -> Result<f64>;
    fn beta_inv(&self, rho: f64) -> Result<f64>;
    /// `B(u) = ∫₀ᵘ β`.
    fn beta_primitive(&self, u: f64) -> Result<f64>;

    fn mu(&self, s: f64) -> f64;
    fn mu_prime(&self, s: f64) -> Result<f64>;
    /// `M(s) = ∫₀ˢ μ`.
    fn mu_primitive(&self, s: f64) -> f64;
    /// `μ⁻¹(q) = |q|^{(2−p)/(p−1)} q`; continuously differentiable for `p ≤ 2`.
    fn mu_inv(&self, q: f64) -> f64;
    fn mu_inv_prime(&self, q: f64) -> f64;

    fn eta(&self, rho: f64) -> Result<f64>;
    fn eta_second(&self, rho: f64) -> Result<f64>;

    /// Admissible data range of the model.
    fn bounds(&self) -> Bounds;

    fn eta_prime(&self, rho: f64) -> Result<f64> {
        self.beta_inv(rho)
    }

    /// Bregman divergence `η(ρ) − η(ρ̂) − η'(ρ̂)(ρ − ρ̂)`.
    ///
    /// Implementations should override the direct formula where cancellation
    /// matters; relative entropies are tracked down to ~1e-25.
    fn bregman(&self, rho: f64, rho_hat: f64) -> Result<f64> {
        Ok(self.eta(rho)? - self.eta(rho_hat)? - self.eta_prime(rho_hat)? * (rho - rho_hat))
    }

    fn primitive(&self, which: Primitive, x: f64) -> Result<f64> {
        match which {
            Primitive::B => self.beta_primitive(x),
            Primitive::M => Ok(self.mu_primitive(x)),
            Primitive::Eta => self.eta(x),
        }
    }

    fn derivative(&self, which: Derivative, x: f64) -> Result<f64> {
        match which {
            Derivative::BetaPrime => self.beta_prime(x),
            Derivative::MuPrime => self.mu_prime(x),
            Derivative::EtaPrime => self.eta_prime(x),
        }
    }
}

/// Built-in model: one of the [`BetaFamily`] storage laws with the power flux
/// `μ(s) = |s|^{p-2} s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstitutiveModel {
    pub beta: BetaFamily,
    pub p: f64,
    pub bounds: Bounds,
}

impl ConstitutiveModel {
    pub fn new(beta: BetaFamily, p: f64, bounds: Bounds) -> Result<Self> {
        if let BetaFamily::Power { kappa, gamma } = beta {
            if !(kappa.is_finite() && kappa > 0.0) {
                return Err(Error::invalid("kappa", format!("must be > 0, got {kappa}")));
            }
            if !(gamma.is_finite() && gamma >= 1.0) {
                return Err(Error::invalid("gamma", format!("must be ≥ 1, got {gamma}")));
            }
        }
        if !(p > 1.0 && p <= 2.0) {
            return Err(Error::invalid("p", format!("must lie in (1, 2], got {p}")));
        }
        Bounds::new(bounds.lower, bounds.upper)?;
        Ok(Self { beta, p, bounds })
    }

    /// Isentropic gas transport: `β(u) = √u`, `μ(s) = |s|^{-1/2} s`.
    pub fn gas(bounds: Bounds) -> Self {
        Self {
            beta: BetaFamily::Power {
                kappa: 1.0,
                gamma: 2.0,
            },
            p: 1.5,
            bounds,
        }
    }

    /// Heat equation with Robin data: `β(u) = u`, `μ(s) = s`.
    pub fn heat(bounds: Bounds) -> Self {
        Self {
            beta: BetaFamily::Linear,
            p: 2.0,
            bounds,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.beta, BetaFamily::Linear) && self.p == 2.0
    }

    fn positive(function: &'static str, x: f64) -> Result<()> {
        if x > 0.0 && x.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain { function, value: x })
        }
    }

    fn non_negative(function: &'static str, x: f64) -> Result<()> {
        if x >= 0.0 && x.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain { function, value: x })
        }
    }
}

/// `x^e` for `x ≥ 0`. Integer and half-integer exponents avoid `exp/ln`.
pub(crate) fn pow(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e == 1.0 {
        x
    } else if e == 2.0 {
        x * x
    } else if e == 0.5 {
        x.sqrt()
    } else if e == 1.5 {
        x * x.sqrt()
    } else if e == -0.5 {
        1.0 / x.sqrt()
    } else if e.fract() == 0.0 && e.abs() <= 32.0 {
        x.powi(e as i32)
    } else if (2.0 * e).fract() == 0.0 && e.abs() <= 32.0 {
        x.powi((e - 0.5) as i32) * x.sqrt()
    } else {
        x.powf(e)
    }
}

const BREGMAN_PANELS: usize = 4;

// 5-point Gauss–Legendre on [0, 1].
const GL5_NODES: [f64; 5] = [
    0.046_910_077_030_668_004,
    0.230_765_344_947_158_45,
    0.5,
    0.769_234_655_052_841_6,
    0.953_089_922_969_332,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.118_463_442_528_094_54,
    0.239_314_335_249_683_23,
    0.284_444_444_444_444_45,
    0.239_314_335_249_683_23,
    0.118_463_442_528_094_54,
];

impl Nonlinearity for ConstitutiveModel {
    fn beta(&self, u: f64) -> Result<f64> {
        match self.beta {
            BetaFamily::Linear => Ok(u),
            BetaFamily::Power { kappa, gamma } => {
                Self::positive("beta", u)?;
                Ok(kappa * pow(u, 1.0 / gamma))
            }
        }
    }

    fn beta_prime(&self, u: f64) -> Result<f64> {
        match self.beta {
            BetaFamily::Linear => Ok(1.0),
            BetaFamily::Power { kappa, gamma } => {
                Self::positive("beta_prime", u)?;
                Ok(kappa / gamma * pow(u, 1.0 / gamma - 1.0))
            }
        }
    }

    fn beta_inv(&self, rho: f64) -> Result<f64> {
        match self.beta {
            BetaFamily::Linear => Ok(rho),
            BetaFamily::Power { kappa, gamma } => {
                Self::non_negative("beta_inv", rho)?;
                Ok(pow(rho / kappa, gamma))
            }
        }
    }

    fn beta_primitive(&self, u: f64) -> Result<f64> {
        match self.beta {
            BetaFamily::Linear => Ok(0.5 * u * u),
            BetaFamily::Power { kappa, gamma } => {
                Self::positive("beta_primitive", u)?;
                let q = 1.0 + 1.0 / gamma;
                Ok(kappa * pow(u, q) / q)
            }
        }
    }

    fn mu(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        let magnitude = pow(s.abs(), self.p - 1.0);
        if s < 0.0 {
            -magnitude
        } else {
            magnitude
        }
    }

    fn mu_prime(&self, s: f64) -> Result<f64> {
        if self.p == 2.0 {
            return Ok(1.0);
        }
        if s == 0.0 || !s.is_finite() {
            return Err(Error::Domain {
                function: "mu_prime",
                value: s,
            });
        }
        Ok((self.p - 1.0) * pow(s.abs(), self.p - 2.0))
    }

    fn mu_primitive(&self, s: f64) -> f64 {
        pow(s.abs(), self.p) / self.p
    }

    fn mu_inv(&self, q: f64) -> f64 {
        let e = 1.0 / (self.p - 1.0);
        let magnitude = pow(q.abs(), e);
        if q < 0.0 {
            -magnitude
        } else {
            magnitude
        }
    }

    fn mu_inv_prime(&self, q: f64) -> f64 {
        let e = 1.0 / (self.p - 1.0);
        if e == 1.0 {
            return 1.0;
        }
        e * pow(q.abs(), e - 1.0)
    }

    fn eta(&self, rho: f64) -> Result<f64> {
        match self.beta {
            BetaFamily::Linear => Ok(0.5 * rho * rho),
            BetaFamily::Power { gamma, .. } => {
                Self::non_negative("eta", rho)?;
                Ok(rho * self.beta_inv(rho)? / (gamma + 1.0))
            }
        }
    }

    fn eta_second(&self, rho: f64) -> Result<f64> {
        match self.beta {
            BetaFamily::Linear => Ok(1.0),
            BetaFamily::Power { kappa, gamma } => {
                Self::non_negative("eta_second", rho)?;
                Ok(gamma / kappa * pow(rho / kappa, gamma - 1.0))
            }
        }
    }

    fn bounds(&self) -> Bounds {
        self.bounds
    }

    fn bregman(&self, rho: f64, rho_hat: f64) -> Result<f64> {
        let delta = rho - rho_hat;
        match self.beta {
            BetaFamily::Linear => Ok(0.5 * delta * delta),
            BetaFamily::Power { kappa, gamma } => {
                Self::non_negative("eta", rho)?;
                Self::non_negative("eta", rho_hat)?;
                if gamma.fract() == 0.0 && gamma <= 16.0 {
                    // ∫_{ρ̂}^{ρ} (s^γ − ρ̂^γ) ds expanded binomially in δ.
                    let n = gamma as i32;
                    let mut binom = 1.0;
                    let mut sum = 0.0;
                    for j in 1..=n {
                        binom *= f64::from(n - j + 1) / f64::from(j);
                        sum += binom * rho_hat.powi(n - j) * delta.powi(j + 1) / f64::from(j + 1);
                    }
                    Ok(sum / pow(kappa, gamma))
                } else {
                    let base = self.beta_inv(rho_hat)?;
                    let panel = 1.0 / BREGMAN_PANELS as f64;
                    let mut sum = 0.0;
                    for k in 0..BREGMAN_PANELS {
                        for (t, w) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
                            let s = (k as f64 + t) * panel;
                            sum += w * (self.beta_inv(rho_hat + s * delta)? - base);
                        }
                    }
                    Ok(sum * panel * delta)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> Bounds {
        Bounds::new(0.5, 2.0).unwrap()
    }

    fn power(kappa: f64, gamma: f64, p: f64) -> ConstitutiveModel {
        ConstitutiveModel::new(BetaFamily::Power { kappa, gamma }, p, bounds()).unwrap()
    }

    fn linear(p: f64) -> ConstitutiveModel {
        ConstitutiveModel::new(BetaFamily::Linear, p, bounds()).unwrap()
    }

    // Composite Simpson rule; independent of the closed-form primitives.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn beta_examples() {
        assert_eq!(power(1.0, 2.0, 1.5).beta(4.0).unwrap(), 2.0);
        assert_eq!(linear(2.0).beta(3.7).unwrap(), 3.7);
        assert_eq!(power(2.0, 2.0, 1.5).beta(9.0).unwrap(), 6.0);
    }

    #[test]
    fn beta_rejects_non_positive() {
        let m = power(1.0, 2.0, 1.5);
        assert!(matches!(m.beta(0.0), Err(Error::Domain { function: "beta", .. })));
        assert!(m.beta(-1.0).is_err());
        assert!(m.beta_prime(0.0).is_err());
    }

    #[test]
    fn mu_examples() {
        let m = power(1.0, 2.0, 1.5);
        assert_eq!(m.mu(4.0), 2.0);
        assert_eq!(m.mu(-4.0), -2.0);
        for p in [1.1, 1.5, 1.8, 2.0] {
            assert_eq!(linear(p).mu(0.0), 0.0);
        }
    }

    #[test]
    fn primitive_examples() {
        assert_eq!(linear(2.0).primitive(Primitive::M, 3.0).unwrap(), 4.5);
        assert_eq!(linear(2.0).primitive(Primitive::Eta, 2.0).unwrap(), 2.0);
        let m = power(1.0, 2.0, 1.5);
        let b = m.primitive(Primitive::B, 4.0).unwrap();
        let quad = simpson(|u| u.sqrt(), 0.0, 4.0, 20_000);
        assert!((quad - 16.0 / 3.0).abs() < 1e-5);
        assert!((b - 16.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(linear(2.0).derivative(Derivative::MuPrime, 7.0).unwrap(), 1.0);
        let m = power(1.0, 2.0, 1.5);
        let d = m.derivative(Derivative::MuPrime, 4.0).unwrap();
        let fd = (m.mu(4.0 + 1e-6) - m.mu(4.0 - 1e-6)) / 2e-6;
        assert!((fd - 0.25).abs() < 1e-8);
        assert_eq!(d, 0.25);
        assert_eq!(m.derivative(Derivative::EtaPrime, 2.0).unwrap(), 4.0);
    }

    #[test]
    fn mu_prime_singular_at_zero_for_p_below_two() {
        assert!(matches!(
            power(1.0, 2.0, 1.5).mu_prime(0.0),
            Err(Error::Domain { function: "mu_prime", .. })
        ));
        assert_eq!(linear(2.0).mu_prime(0.0).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ConstitutiveModel::new(BetaFamily::Linear, 2.5, bounds()).is_err());
        assert!(ConstitutiveModel::new(BetaFamily::Linear, 1.0, bounds()).is_err());
        let bad_kappa = BetaFamily::Power { kappa: 0.0, gamma: 2.0 };
        assert!(ConstitutiveModel::new(bad_kappa, 1.5, bounds()).is_err());
        let bad_gamma = BetaFamily::Power { kappa: 1.0, gamma: 0.5 };
        assert!(ConstitutiveModel::new(bad_gamma, 1.5, bounds()).is_err());
        assert!(Bounds::new(0.0, 1.0).is_err());
        assert!(Bounds::new(2.0, 1.0).is_err());
    }

    fn models() -> Vec<ConstitutiveModel> {
        vec![
            power(1.0, 2.0, 1.5),
            power(2.0, 2.0, 1.5),
            power(1.3, 3.0, 1.2),
            power(0.7, 1.7, 1.9),
            power(1.0, 1.0, 2.0),
            linear(2.0),
            linear(1.5),
        ]
    }

    #[test]
    fn finite_difference_consistency() {
        for m in models() {
            let b = m.bounds();
            for i in 0..=20 {
                let u = b.lower + b.width() * i as f64 / 20.0;
                for delta in [1e-4, 1e-5] {
                    let fd_b = (m.beta_primitive(u + delta).unwrap() - m.beta_primitive(u - delta).unwrap())
                        / (2.0 * delta);
                    assert!((fd_b - m.beta(u).unwrap()).abs() < 1e-7, "B' vs beta at {u}");
                    for s in [u - 0.4, 0.4 - u] {
                        let fd_m = (m.mu_primitive(s + delta) - m.mu_primitive(s - delta)) / (2.0 * delta);
                        assert!((fd_m - m.mu(s)).abs() < 1e-7, "M' vs mu at {s}");
                        let fd_mu = (m.mu(s + delta) - m.mu(s - delta)) / (2.0 * delta);
                        assert!((fd_mu - m.mu_prime(s).unwrap()).abs() < 1e-6);
                    }
                    let rho = m.beta(u).unwrap();
                    let fd_eta = (m.eta(rho + delta).unwrap() - m.eta(rho - delta).unwrap()) / (2.0 * delta);
                    assert!((fd_eta - m.beta_inv(rho).unwrap()).abs() < 1e-7, "eta' vs beta_inv");
                    let fd_beta = (m.beta(u + delta).unwrap() - m.beta(u - delta).unwrap()) / (2.0 * delta);
                    assert!((fd_beta - m.beta_prime(u).unwrap()).abs() < 1e-7);
                    let fd_eta2 = (m.eta_prime(rho + delta).unwrap() - m.eta_prime(rho - delta).unwrap())
                        / (2.0 * delta);
                    assert!((fd_eta2 - m.eta_second(rho).unwrap()).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn mu_inverse_round_trip_and_derivative() {
        for m in models() {
            for q in [-1.7, -0.3, -1e-6, 0.0, 2e-9, 0.05, 1.2] {
                let s = m.mu_inv(q);
                assert!((m.mu(s) - q).abs() <= 1e-14 * (1.0 + q.abs()), "mu(mu_inv({q}))");
                if q.abs() > 1e-3 {
                    let d = 1e-6;
                    let fd = (m.mu_inv(q + d) - m.mu_inv(q - d)) / (2.0 * d);
                    assert!((fd - m.mu_inv_prime(q)).abs() < 1e-6 * (1.0 + fd.abs()));
                    assert!((m.mu_inv_prime(q) * m.mu_prime(s).unwrap() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn beta_inverse_round_trip_and_convexity() {
        for m in models() {
            let b = m.bounds();
            let (lo, hi) = (m.beta(b.lower).unwrap(), m.beta(b.upper).unwrap());
            for i in 0..=100 {
                let u = b.lower + b.width() * i as f64 / 100.0;
                let back = m.beta_inv(m.beta(u).unwrap()).unwrap();
                assert!((back - u).abs() <= 1e-12 * u);
                if i > 0 {
                    let prev = b.lower + b.width() * (i - 1) as f64 / 100.0;
                    assert!(m.beta(prev).unwrap() < m.beta(u).unwrap());
                }
                let rho = lo + (hi - lo) * i as f64 / 100.0;
                let d = 1e-3;
                if rho - d > 0.0 {
                    let second = m.eta(rho - d).unwrap() - 2.0 * m.eta(rho).unwrap() + m.eta(rho + d).unwrap();
                    assert!(second >= 0.0);
                }
            }
        }
    }

    #[test]
    fn mu_is_bitwise_odd() {
        for m in models() {
            for s in [1e-12, 0.3, 1.0, 7.25, 1e6] {
                assert_eq!(m.mu(-s).to_bits(), (-m.mu(s)).to_bits());
            }
        }
    }

    #[test]
    fn stable_bregman_matches_direct_formula() {
        for m in models() {
            for (rho, rho_hat) in [(1.2, 1.0), (0.8, 1.3), (1.0, 1.0), (1.4, 0.75)] {
                let direct = m.eta(rho).unwrap() - m.eta(rho_hat).unwrap()
                    - m.eta_prime(rho_hat).unwrap() * (rho - rho_hat);
                let stable = m.bregman(rho, rho_hat).unwrap();
                assert!((direct - stable).abs() < 1e-13, "{m:?}: {direct} vs {stable}");
                assert!(stable >= 0.0);
            }
            // tiny perturbation: quadratic behaviour survives
            let rho_hat = 1.1;
            let d = 1e-9;
            let exact = 0.5 * m.eta_second(rho_hat).unwrap() * d * d;
            assert!((m.bregman(rho_hat + d, rho_hat).unwrap() - exact).abs() < 1e-6 * exact);
        }
    }

    #[test]
    fn model_json_shape() {
        let m: ConstitutiveModel = serde_json::from_str(
            r#"{"beta": {"family": "power", "kappa": 1.0, "gamma": 2.0}, "p": 1.5,
                "bounds": {"lower": 0.5, "upper": 2.0}}"#,
        )
        .unwrap();
        assert_eq!(m, ConstitutiveModel::gas(bounds()));
        let l: BetaFamily = serde_json::from_str(r#"{"family":"linear"}"#).unwrap();
        assert_eq!(l, BetaFamily::Linear);
    }
}

//! Time-dependent boundary data `t ↦ (u_∂(t, 0), u_∂(t, ℓ))`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Boundary value at one pipe end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EndpointSchedule {
    Constant { value: f64 },
    /// `before` for `t < at`, `after` from `at` on.
    Step { before: f64, after: f64, at: f64 },
    /// `base + amplitude · sin(omega · t)`.
    Sinusoid { base: f64, amplitude: f64, omega: f64 },
}

impl EndpointSchedule {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::Step { before, after, at } => {
                if t < at {
                    before
                } else {
                    after
                }
            }
            Self::Sinusoid {
                base,
                amplitude,
                omega,
            } => base + amplitude * (omega * t).sin(),
        }
    }

    /// Classical time derivative; a step contributes only away from its jump.
    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { .. } | Self::Step { .. } => 0.0,
            Self::Sinusoid { amplitude, omega, .. } => amplitude * omega * (omega * t).cos(),
        }
    }

    /// True unless the schedule jumps inside `(t0, t1]`.
    pub fn is_differentiable_on(&self, t0: f64, t1: f64) -> bool {
        match *self {
            Self::Step { before, after, at } => before == after || at <= t0 || at > t1,
            _ => true,
        }
    }

    /// Constant for all `t ≥ t0`.
    pub fn is_constant_after(&self, t0: f64) -> bool {
        match *self {
            Self::Constant { .. } => true,
            Self::Step { before, after, at } => at <= t0 || before == after,
            Self::Sinusoid { amplitude, omega, .. } => amplitude == 0.0 || omega == 0.0,
        }
    }

    /// Exact range of the schedule over `[0, t_end]`.
    pub fn range(&self, t_end: f64) -> (f64, f64) {
        match *self {
            Self::Constant { value } => (value, value),
            Self::Step { before, after, at } => {
                if at <= 0.0 {
                    (after, after)
                } else if at > t_end {
                    (before, before)
                } else {
                    (before.min(after), before.max(after))
                }
            }
            Self::Sinusoid {
                base,
                amplitude,
                omega,
            } => {
                let mut lo = self.value(0.0).min(self.value(t_end));
                let mut hi = self.value(0.0).max(self.value(t_end));
                let phase_end = (omega * t_end).abs();
                // extrema of sin at π/2 + kπ
                let mut k = 0.0;
                while PI / 2.0 + k * PI <= phase_end && k < 1e7 {
                    let v = base + amplitude * (omega.signum() * (PI / 2.0 + k * PI)).sin();
                    lo = lo.min(v);
                    hi = hi.max(v);
                    k += 1.0;
                }
                (lo, hi)
            }
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match *self {
            Self::Constant { value } => vec![value],
            Self::Step { before, after, .. } => vec![before, after],
            Self::Sinusoid { base, amplitude, .. } => vec![base - amplitude.abs(), base + amplitude.abs()],
        }
    }
}

/// Boundary data on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySchedule {
    pub left: EndpointSchedule,
    pub right: EndpointSchedule,
}

impl BoundarySchedule {
    pub fn constant(left: f64, right: f64) -> Self {
        Self {
            left: EndpointSchedule::Constant { value: left },
            right: EndpointSchedule::Constant { value: right },
        }
    }

    pub fn at(&self, t: f64) -> (f64, f64) {
        (self.left.value(t), self.right.value(t))
    }

    /// `‖∂t u_∂(t)‖²_∂`.
    pub fn derivative_norm_sq(&self, t: f64) -> f64 {
        let (a, b) = (self.left.derivative(t), self.right.derivative(t));
        a * a + b * b
    }

    pub fn is_constant_after(&self, t0: f64) -> bool {
        self.left.is_constant_after(t0) && self.right.is_constant_after(t0)
    }

    pub fn is_differentiable_on(&self, t0: f64, t1: f64) -> bool {
        self.left.is_differentiable_on(t0, t1) && self.right.is_differentiable_on(t0, t1)
    }

    /// Smallest and largest boundary value on `[0, t_end]`.
    pub fn range(&self, t_end: f64) -> (f64, f64) {
        let (a, b) = self.left.range(t_end);
        let (c, d) = self.right.range(t_end);
        (a.min(c), b.max(d))
    }
}

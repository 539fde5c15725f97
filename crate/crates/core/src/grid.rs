//! Uniform P1 mesh on `[0, ℓ]` with the lumped (trapezoidal) inner product.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform mesh `x_i = i h`, `h = ℓ / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    length: f64,
    cells: usize,
    spacing: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Nodal values of a continuous piecewise-linear function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodalVector(pub Vec<f64>);

impl NodalVector {
    pub fn constant(len: usize, value: f64) -> Self {
        Self(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn first(&self) -> f64 {
        self.0[0]
    }

    pub fn last(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &NodalVector) -> f64 {
        assert_eq!(self.len(), other.len(), "nodal vector length mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Componentwise `self - other`.
    pub fn sub(&self, other: &NodalVector) -> NodalVector {
        assert_eq!(self.len(), other.len(), "nodal vector length mismatch");
        NodalVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> NodalVector {
        NodalVector(self.0.iter().map(|&x| f(x)).collect())
    }

    pub fn try_map(&self, f: impl Fn(f64) -> Result<f64>) -> Result<NodalVector> {
        self.0.iter().map(|&x| f(x)).collect::<Result<Vec<_>>>().map(NodalVector)
    }
}

impl From<Vec<f64>> for NodalVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl std::ops::Index<usize> for NodalVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Grid {
    pub fn new(length: f64, cells: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::invalid("length", format!("must be > 0, got {length}")));
        }
        if cells == 0 {
            return Err(Error::invalid("cells", "need at least one cell"));
        }
        let spacing = length / cells as f64;
        let nodes = (0..=cells)
            .map(|i| if i == cells { length } else { i as f64 * spacing })
            .collect();
        let mut weights = vec![spacing; cells + 1];
        weights[0] = 0.5 * spacing;
        weights[cells] = 0.5 * spacing;
        Ok(Self {
            length,
            cells,
            spacing,
            nodes,
            weights,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn node_count(&self) -> usize {
        self.cells + 1
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Trapezoidal (lumped mass) weights: `h/2` at the ends, `h` inside.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodal interpolation `I_h f`.
    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> NodalVector {
        NodalVector(self.nodes.iter().map(|&x| f(x)).collect())
    }

    fn conform(&self, v: &NodalVector) {
        assert_eq!(
            v.len(),
            self.node_count(),
            "nodal vector has {} entries, grid has {} nodes",
            v.len(),
            self.node_count()
        );
    }

    /// `⟨a, b⟩_h = Σ w_i a_i b_i`.
    pub fn lumped_inner(&self, a: &NodalVector, b: &NodalVector) -> f64 {
        self.conform(a);
        self.conform(b);
        self.weights
            .iter()
            .zip(a.iter().zip(b.iter()))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    /// Exact `∫ a b dx` for piecewise-linear `a`, `b`.
    pub fn exact_l2_inner(&self, a: &NodalVector, b: &NodalVector) -> f64 {
        self.conform(a);
        self.conform(b);
        let (a, b) = (a.as_slice(), b.as_slice());
        let cell_sum: f64 = (0..self.cells)
            .map(|j| {
                2.0 * a[j] * b[j] + a[j] * b[j + 1] + a[j + 1] * b[j] + 2.0 * a[j + 1] * b[j + 1]
            })
            .sum();
        cell_sum * self.spacing / 6.0
    }

    pub fn exact_l2_norm_sq(&self, v: &NodalVector) -> f64 {
        self.exact_l2_inner(v, v)
    }

    /// Cell slopes `(u_{j+1} − u_j) / h`, one per cell.
    pub fn piecewise_gradient(&self, u: &NodalVector) -> Vec<f64> {
        self.conform(u);
        u.as_slice()
            .windows(2)
            .map(|w| (w[1] - w[0]) / self.spacing)
            .collect()
    }
}

/// `⟨f, g⟩_∂ = f(0) g(0) + f(ℓ) g(ℓ)`.
pub fn boundary_pairing(f: &NodalVector, g: &NodalVector) -> f64 {
    assert_eq!(f.len(), g.len(), "nodal vector length mismatch");
    f.first() * g.first() + f.last() * g.last()
}

//! Tridiagonal matrices and the Thomas algorithm.

/// Square tridiagonal matrix. `lower[i]` is entry `(i+1, i)`, `upper[i]` is
/// entry `(i, i+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1);
        Self {
            lower: vec![0.0; n - 1],
            diag: vec![0.0; n],
            upper: vec![0.0; n - 1],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        m.diag.iter_mut().for_each(|d| *d = 1.0);
        m
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if i == j + 1 {
            self.lower[j]
        } else if j == i + 1 {
            self.upper[i]
        } else {
            0.0
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        let n = self.dim();
        let mut s = self.diag[i];
        if i > 0 {
            s += self.lower[i - 1];
        }
        if i + 1 < n {
            s += self.upper[i];
        }
        s
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(x.len(), n);
        (0..n)
            .map(|i| {
                let mut y = self.diag[i] * x[i];
                if i > 0 {
                    y += self.lower[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    y += self.upper[i] * x[i + 1];
                }
                y
            })
            .collect()
    }

    /// Solves `A x = rhs` by the Thomas algorithm (no pivoting).
    ///
    /// Returns `None` on a zero pivot. Stable for the diagonally dominant
    /// M-matrices assembled by the stepper.
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.dim();
        assert_eq!(rhs.len(), n);
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut pivot = self.diag[0];
        if pivot == 0.0 || !pivot.is_finite() {
            return None;
        }
        if n > 1 {
            c[0] = self.upper[0] / pivot;
        }
        d[0] = rhs[0] / pivot;
        for i in 1..n {
            pivot = self.diag[i] - self.lower[i - 1] * c[i - 1];
            if pivot == 0.0 || !pivot.is_finite() {
                return None;
            }
            if i + 1 < n {
                c[i] = self.upper[i] / pivot;
            }
            d[i] = (rhs[i] - self.lower[i - 1] * d[i - 1]) / pivot;
        }
        for i in (0..n - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        Some(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let m = Tridiagonal {
            lower: vec![-1.0, -1.0],
            diag: vec![2.5, 3.0, 2.5],
            upper: vec![-1.0, -1.0],
        };
        let x = [1.0, -2.0, 0.5];
        let b = m.mul_vec(&x);
        let y = m.solve(&b).unwrap();
        for (a, e) in y.iter().zip(x) {
            assert!((a - e).abs() < 1e-14);
        }
        assert_eq!(m.row_sum(0), 1.5);
        assert_eq!(m.row_sum(1), 1.0);
        assert_eq!(m.get(2, 0), 0.0);
    }

    #[test]
    fn one_by_one_and_zero_pivot() {
        let m = Tridiagonal {
            lower: vec![],
            diag: vec![4.0],
            upper: vec![],
        };
        assert_eq!(m.solve(&[2.0]).unwrap(), vec![0.5]);
        assert!(Tridiagonal::zeros(3).solve(&[1.0, 1.0, 1.0]).is_none());
    }

    #[test]
    fn nonsymmetric_random_diagonally_dominant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in [2usize, 3, 10, 65] {
            let mut m = Tridiagonal::zeros(n);
            for i in 0..n - 1 {
                m.lower[i] = rng.gen_range(-1.0..0.0);
                m.upper[i] = rng.gen_range(-1.0..0.0);
            }
            for i in 0..n {
                m.diag[i] = 2.0 + rng.gen_range(0.0..1.0);
            }
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = m.solve(&m.mul_vec(&x)).unwrap();
            assert!(y.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }
}

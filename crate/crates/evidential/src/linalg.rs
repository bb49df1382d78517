//! Dense linear algebra for small symmetric positive definite matrices.
//!
//! Everything here targets the tiny dimensions (n ≤ ~8) that evidential
//! output heads produce; clarity wins over blocked algorithms. All scalars
//! are `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Pivot underflow guard in the Cholesky factorization. Near-singular inputs
/// indicate caller bugs: covariances in this crate are built from
/// exp-parametrized Cholesky factors and stay well away from singularity.
const PIVOT_TOL: f64 = 1e-300;

/// Number of entries in the lower triangle (diagonal included) of an n×n
/// matrix.
pub fn lower_tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// A symmetric matrix with finite entries, stored dense row-major.
///
/// Construction symmetrizes the input after checking that asymmetry is below
/// [`SYMMETRY_TOL`], so `get(i, j) == get(j, i)` holds exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Build from row-major entries, validating shape, finiteness and
    /// symmetry.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                actual: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("matrix entries must be finite"));
        }
        for i in 0..n {
            for j in 0..i {
                if (data[i * n + j] - data[j * n + i]).abs() > SYMMETRY_TOL {
                    return Err(Error::domain(format!(
                        "matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let mut m = SymMatrix { n, data };
        for i in 0..n {
            for j in 0..i {
                let avg = 0.5 * (m.data[i * n + j] + m.data[j * n + i]);
                m.data[i * n + j] = avg;
                m.data[j * n + i] = avg;
            }
        }
        Ok(m)
    }

    /// Build from a function of (row, col); only the lower triangle is
    /// evaluated and mirrored, so the result is symmetric by construction.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        SymMatrix { n, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Entrywise scaling by `s`.
    pub fn scaled(&self, s: f64) -> SymMatrix {
        SymMatrix {
            n: self.n,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// `self + c · v vᵀ`.
    pub fn add_outer(&self, c: f64, v: &[f64]) -> SymMatrix {
        assert_eq!(v.len(), self.n, "outer-product vector length");
        SymMatrix::from_fn(self.n, |i, j| self.get(i, j) + c * v[i] * v[j])
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.n, other.n, "matrix dimensions");
        SymMatrix::from_fn(self.n, |i, j| self.get(i, j) + other.get(i, j))
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n, "matrix-vector dimensions");
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// Largest absolute entrywise difference to `other`.
    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.n, other.n, "matrix dimensions");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// Cholesky factorization `A = L Lᵀ` with `L` lower triangular and a
    /// strictly positive diagonal. Fails with
    /// [`Error::NotPositiveDefinite`] when a pivot falls below the underflow
    /// guard, which signals an invalid covariance.
    pub fn cholesky(&self) -> Result<CholeskyFactor> {
        let n = self.n;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self.get(i, j);
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(sum > PIVOT_TOL) {
                        return Err(Error::NotPositiveDefinite {
                            index: i,
                            pivot: sum,
                        });
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Ok(CholeskyFactor { n, l })
    }
}

/// Lower-triangular Cholesky factor with strictly positive diagonal.
/// The upper triangle is exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CholeskyFactor {
    n: usize,
    l: Vec<f64>,
}

impl CholeskyFactor {
    /// Build directly from row-major lower-triangular entries (upper triangle
    /// ignored and zeroed). The diagonal must be strictly positive.
    pub fn from_lower(n: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                actual: entries.len(),
            });
        }
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                l[i * n + j] = entries[i * n + j];
            }
            if !(l[i * n + i] > 0.0) || !l[i * n + i].is_finite() {
                return Err(Error::NotPositiveDefinite {
                    index: i,
                    pivot: l[i * n + i],
                });
            }
        }
        Ok(CholeskyFactor { n, l })
    }

    pub fn identity(n: usize) -> Self {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            l[i * n + i] = 1.0;
        }
        CholeskyFactor { n, l }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    /// `L` scaled by `s > 0`; factors `s² · L Lᵀ`.
    pub fn scaled(&self, s: f64) -> CholeskyFactor {
        assert!(s > 0.0, "scale must be positive");
        CholeskyFactor {
            n: self.n,
            l: self.l.iter().map(|x| x * s).collect(),
        }
    }

    /// Reconstruct `L Lᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.n;
        SymMatrix::from_fn(n, |i, j| {
            (0..=j.min(i)).map(|k| self.get(i, k) * self.get(j, k)).sum()
        })
    }

    /// `log |L Lᵀ| = 2 Σ_j log L_jj`.
    pub fn logdet(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).ln()).sum::<f64>() * 2.0
    }

    /// Solve `L w = b` by forward substitution.
    pub fn forward_sub(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: b.len(),
            });
        }
        let mut w = vec![0.0; n];
        for i in 0..n {
            let mut sum = b[i];
            for k in 0..i {
                sum -= self.get(i, k) * w[k];
            }
            w[i] = sum / self.get(i, i);
        }
        Ok(w)
    }

    /// Solve `L Lᵀ x = b` by forward then back substitution.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let mut x = self.forward_sub(b)?;
        for i in (0..n).rev() {
            let mut sum = x[i];
            for k in (i + 1)..n {
                sum -= self.get(k, i) * x[k];
            }
            x[i] = sum / self.get(i, i);
        }
        Ok(x)
    }

    /// Quadratic form `vᵀ (L Lᵀ)⁻¹ v = ‖L⁻¹ v‖²`.
    pub fn inv_quad_form(&self, v: &[f64]) -> Result<f64> {
        let w = self.forward_sub(v)?;
        Ok(w.iter().map(|x| x * x).sum())
    }

    /// `log |Ψ + c v vᵀ|` for `Ψ = L Lᵀ` and `c ≥ 0`, evaluated as
    /// `log|Ψ| + log(1 + c vᵀ Ψ⁻¹ v)` without forming the updated matrix.
    pub fn sylvester_logdet_rank1(&self, c: f64, v: &[f64]) -> f64 {
        assert!(c >= 0.0, "rank-1 coefficient must be nonnegative");
        let quad = self
            .inv_quad_form(v)
            .expect("rank-1 vector length must match factor dimension");
        self.logdet() + (c * quad).ln_1p()
    }
}

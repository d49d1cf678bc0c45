//! Dense symmetric-matrix kernels: cyclic Jacobi eigendecomposition, PSD
//! projection by eigenvalue clamping, and symmetric (ZCA) square roots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default eigenvalue floor for unit-scale features.
pub const DEFAULT_EPS: f64 = 1e-6;

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// A real symmetric `c × c` matrix, stored row-major.
///
/// Construction stores `(S + Sᵀ)/2`, so `get(i, j) == get(j, i)` holds bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn new(dim: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: dim * dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                let m = 0.5 * (data[i * dim + j] + data[j * dim + i]);
                data[i * dim + j] = m;
                data[j * dim + i] = m;
            }
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Self::new(dim, rows.concat())
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut data = vec![0.0; dim * dim];
        for (i, &d) in diag.iter().enumerate() {
            data[i * dim + i] = d;
        }
        Self { dim, data }
    }

    /// `Q · diag(values) · Qᵀ` for `Q` given row-major with eigenvectors in columns.
    pub fn from_spectrum(vectors: &[f64], values: &[f64]) -> Result<Self> {
        let dim = values.len();
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                let mut acc = 0.0;
                for (k, &lam) in values.iter().enumerate() {
                    acc += vectors[i * dim + k] * lam * vectors[j * dim + k];
                }
                data[i * dim + j] = acc;
                data[j * dim + i] = acc;
            }
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks_exact(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// `out = self · x`
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        for (row, o) in self.data.chunks_exact(self.dim).zip(out.iter_mut()) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// Dense product `self · other`, returned row-major (not symmetric in general).
    pub fn matmul(&self, other: &SymMatrix) -> Vec<f64> {
        let c = self.dim;
        let mut out = vec![0.0; c * c];
        for i in 0..c {
            for k in 0..c {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..c {
                    out[i * c + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    /// `self · other · self`, symmetric whenever both factors are.
    pub fn sandwich(&self, other: &SymMatrix) -> Result<SymMatrix> {
        let left = self.matmul(other);
        let c = self.dim;
        let mut out = vec![0.0; c * c];
        for i in 0..c {
            for k in 0..c {
                let a = left[i * c + k];
                for j in 0..c {
                    out[i * c + j] += a * self.get(k, j);
                }
            }
        }
        SymMatrix::new(c, out)
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}

/// Eigenvalues in non-increasing order with matching orthonormal eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub values: Vec<f64>,
    /// Row-major `c × c`; column `k` is the eigenvector of `values[k]`.
    pub vectors: Vec<f64>,
}

impl EigenPair {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        let c = self.dim();
        (0..c).map(|i| self.vectors[i * c + k]).collect()
    }

    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::INFINITY)
    }

    /// Rebuilds `Q · f(Λ) · Qᵀ`.
    pub fn rebuild(&self, f: impl Fn(f64) -> f64) -> Result<SymMatrix> {
        let mapped: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        SymMatrix::from_spectrum(&self.vectors, &mapped)
    }
}

/// Cyclic Jacobi eigendecomposition.
///
/// Sweeps over all off-diagonal pairs until the off-diagonal Frobenius norm
/// drops below `1e-12 · ‖S‖_F` or 100 sweeps have run.
pub fn sym_eig(s: &SymMatrix) -> Result<EigenPair> {
    if let Some(pos) = s.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / s.dim,
            col: pos % s.dim,
        });
    }
    let c = s.dim;
    let mut a = s.data.clone();
    let mut q = SymMatrix::identity(c).data;
    let target = JACOBI_TOL * s.frobenius();

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&a, c) <= target {
            break;
        }
        for p in 0..c {
            for r in (p + 1)..c {
                let apr = a[p * c + r];
                if apr == 0.0 {
                    continue;
                }
                let app = a[p * c + p];
                let arr = a[r * c + r];
                // Rotation angle annihilating a[p][r] (Golub & Van Loan 8.4.2).
                let theta = (arr - app) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * cs;

                for k in 0..c {
                    let akp = a[k * c + p];
                    let akr = a[k * c + r];
                    a[k * c + p] = cs * akp - sn * akr;
                    a[k * c + r] = sn * akp + cs * akr;
                }
                for k in 0..c {
                    let apk = a[p * c + k];
                    let ark = a[r * c + k];
                    a[p * c + k] = cs * apk - sn * ark;
                    a[r * c + k] = sn * apk + cs * ark;
                }
                a[p * c + r] = 0.0;
                a[r * c + p] = 0.0;

                for k in 0..c {
                    let qkp = q[k * c + p];
                    let qkr = q[k * c + r];
                    q[k * c + p] = cs * qkp - sn * qkr;
                    q[k * c + r] = sn * qkp + cs * qkr;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&i, &j| a[j * c + j].total_cmp(&a[i * c + i]));
    let values = order.iter().map(|&k| a[k * c + k]).collect();
    let mut vectors = vec![0.0; c * c];
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..c {
            vectors[i * c + dst] = q[i * c + src];
        }
    }
    Ok(EigenPair { values, vectors })
}

fn off_diagonal_norm(a: &[f64], c: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..c {
        for j in 0..c {
            if i != j {
                acc += a[i * c + j] * a[i * c + j];
            }
        }
    }
    acc.sqrt()
}

/// Clamps every eigenvalue of `s` to at least `eps`. Returns `s` unchanged
/// when it already satisfies the floor.
pub fn psd_project(s: &SymMatrix, eps: f64) -> Result<SymMatrix> {
    Ok(psd_project_counted(s, eps)?.0)
}

/// As [`psd_project`], also returning how many eigenvalues were clamped.
pub fn psd_project_counted(s: &SymMatrix, eps: f64) -> Result<(SymMatrix, usize)> {
    let eig = sym_eig(s)?;
    let clamped = eig.values.iter().filter(|&&l| l < eps).count();
    if clamped == 0 {
        return Ok((s.clone(), 0));
    }
    Ok((eig.rebuild(|l| l.max(eps))?, clamped))
}

/// Symmetric inverse square root `Q · diag(1/√max(λ, eps)) · Qᵀ`.
pub fn inv_sqrt_psd(s: &SymMatrix, eps: f64) -> Result<SymMatrix> {
    sym_eig(s)?.rebuild(|l| 1.0 / l.max(eps).sqrt())
}

/// Symmetric square root `Q · diag(√max(λ, 0)) · Qᵀ`.
pub fn sqrt_psd(s: &SymMatrix) -> Result<SymMatrix> {
    sym_eig(s)?.rebuild(|l| l.max(0.0).sqrt())
}

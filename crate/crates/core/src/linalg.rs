//! Dense symmetric linear algebra: a cyclic Jacobi eigensolver, spectral
//! projectors `P_{i:j}(A) = sum_{k=i..j} u_k u_k^T` and order-statistic
//! selection on absolute values.

use crate::error::{Error, Result};

/// Gap below which two neighbouring eigenvalues are treated as one cluster
/// when a projector cut falls between them.
pub const DEGENERACY_GAP: f64 = 1e-8;

const JACOBI_REL_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `a + s * b`
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Dense symmetric `p x p` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds from row-major entries, symmetrizing as `(A + A^T) / 2`.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig(
                "matrix dimension must be positive".into(),
            ));
        }
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        let mut m = SymMatrix { dim, data };
        for i in 0..dim {
            for j in (i + 1)..dim {
                let s = 0.5 * (m.data[i * dim + j] + m.data[j * dim + i]);
                m.data[i * dim + j] = s;
                m.data[j * dim + i] = s;
            }
        }
        Ok(m)
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self::new(dim, data)
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m.data[i * values.len() + i] = *v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

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

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.dim)
            .map(|row| dot(row, x))
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }
}

/// Eigenpairs sorted so that `eigvals[0] >= eigvals[1] >= ...`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigvals: Vec<f64>,
    /// Row-major `p x p`; column `k` is the unit eigenvector of `eigvals[k]`.
    pub eigvecs: Vec<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigvals.len()
    }

    pub fn eigvec(&self, k: usize) -> Vec<f64> {
        let p = self.dim();
        (0..p).map(|r| self.eigvecs[r * p + k]).collect()
    }

    /// `||A V - V diag(eigvals)||_F`
    pub fn reconstruction_residual(&self, a: &SymMatrix) -> f64 {
        let p = self.dim();
        let mut acc = 0.0;
        for k in 0..p {
            let v = self.eigvec(k);
            let av = a.matvec(&v);
            for r in 0..p {
                let d = av[r] - self.eigvals[k] * v[r];
                acc += d * d;
            }
        }
        acc.sqrt()
    }

    /// `||V^T V - I||_F`
    pub fn orthonormality_residual(&self) -> f64 {
        let p = self.dim();
        let cols: Vec<Vec<f64>> = (0..p).map(|k| self.eigvec(k)).collect();
        let mut acc = 0.0;
        for i in 0..p {
            for j in 0..p {
                let target = if i == j { 1.0 } else { 0.0 };
                let d = dot(&cols[i], &cols[j]) - target;
                acc += d * d;
            }
        }
        acc.sqrt()
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps until the off-diagonal Frobenius norm drops below
/// `1e-12 * ||A||_F` (at most 100 sweeps).
pub fn sym_eigh(a: &SymMatrix) -> Result<EigenDecomposition> {
    if !a.is_finite() {
        return Err(Error::NonFinite("symmetric matrix"));
    }
    let n = a.dim();
    let mut m = a.data.clone();
    let mut v = SymMatrix::identity(n).data;
    let tol = JACOBI_REL_TOL * a.frobenius_norm();

    let off_norm = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&m) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sgn / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_norm(&m) > tol {
        return Err(Error::NonConvergence(format!(
            "Jacobi eigensolver exceeded {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let eigvals = order.iter().map(|&i| m[i * n + i]).collect();
    let mut eigvecs = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            eigvecs[r * n + new_col] = v[r * n + old_col];
        }
    }
    Ok(EigenDecomposition { eigvals, eigvecs })
}

/// Orthogonal projector onto the span of eigenvectors `i..=j` (1-based,
/// following the descending eigenvalue order).
#[derive(Debug, Clone)]
pub struct Projector {
    matrix: SymMatrix,
    range: (usize, usize),
}

impl Projector {
    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }

    pub fn range(&self) -> (usize, usize) {
        self.range
    }

    pub fn rank(&self) -> usize {
        self.range.1 + 1 - self.range.0
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }

    /// Spectral-norm bound `||P - Q||_2 <= ||P - Q||_F`; returns the Frobenius
    /// distance.
    pub fn distance(&self, other: &Projector) -> f64 {
        dist(self.matrix.as_slice(), other.matrix.as_slice())
    }
}

pub fn spectral_projector(e: &EigenDecomposition, i: usize, j: usize) -> Result<Projector> {
    let p = e.dim();
    if i < 1 || i > p {
        return Err(Error::IndexOutOfRange {
            what: "projector start",
            index: i,
            len: p,
        });
    }
    if j < i || j > p {
        return Err(Error::IndexOutOfRange {
            what: "projector end",
            index: j,
            len: p,
        });
    }
    if i > 1 && (e.eigvals[i - 2] - e.eigvals[i - 1]).abs() < DEGENERACY_GAP {
        log::warn!(
            "projector cut {}|{} splits a degenerate eigenvalue cluster ({} vs {})",
            i - 1,
            i,
            e.eigvals[i - 2],
            e.eigvals[i - 1]
        );
    }
    if j < p && (e.eigvals[j - 1] - e.eigvals[j]).abs() < DEGENERACY_GAP {
        log::warn!(
            "projector cut {}|{} splits a degenerate eigenvalue cluster ({} vs {})",
            j,
            j + 1,
            e.eigvals[j - 1],
            e.eigvals[j]
        );
    }
    let mut data = vec![0.0; p * p];
    for k in (i - 1)..j {
        let u = e.eigvec(k);
        for r in 0..p {
            for c in 0..p {
                data[r * p + c] += u[r] * u[c];
            }
        }
    }
    Ok(Projector {
        matrix: SymMatrix::new(p, data)?,
        range: (i, j),
    })
}

/// The `k`-th smallest entry of `|h|` (1-based, ties counted with
/// multiplicity).
pub fn kth_smallest_abs(h: &[f64], k: usize) -> Result<f64> {
    if k < 1 || k > h.len() {
        return Err(Error::IndexOutOfRange {
            what: "order statistic",
            index: k,
            len: h.len(),
        });
    }
    if !all_finite(h) {
        return Err(Error::NonFinite("order statistic input"));
    }
    let mut abs: Vec<f64> = h.iter().map(|x| x.abs()).collect();
    let (_, kth, _) = abs.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    Ok(*kth)
}

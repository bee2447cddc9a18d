//! Dense linear-algebra kernel shared by every engine.
//!
//! Householder QR with a nonnegative-diagonal sign convention, least squares
//! through that QR, singular values, and the principal angle distance between
//! column spaces. All functions are pure.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative singular-value cutoff below which a matrix is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// Tolerance on `‖QᵀQ − I‖_max` accepted by [`OrthonormalBasis::new`].
pub const ORTHO_TOL: f64 = 1e-10;

/// A `d × k` matrix (`d ≥ k`) with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis(Matrix);

impl OrthonormalBasis {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.nrows() < m.ncols() || m.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "orthonormal basis needs rows >= cols >= 1, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let deviation = orthonormality_deviation(&m);
        if !(deviation <= ORTHO_TOL) {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self(m))
    }

    /// Wraps a matrix that is orthonormal by construction (QR or SVD output).
    pub(crate) fn from_trusted(m: Matrix) -> Self {
        debug_assert!(orthonormality_deviation(&m) <= 1e-8);
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Ambient dimension `d`.
    pub fn ambient_dim(&self) -> usize {
        self.0.nrows()
    }

    /// Subspace dimension `k`.
    pub fn rank(&self) -> usize {
        self.0.ncols()
    }
}

impl AsRef<Matrix> for OrthonormalBasis {
    fn as_ref(&self) -> &Matrix {
        &self.0
    }
}

/// Thin QR factorization `a = q · r`.
#[derive(Debug, Clone, PartialEq)]
pub struct QrResult {
    pub q: OrthonormalBasis,
    pub r: Matrix,
}

/// Householder reflectors of a tall matrix; `r` already carries the sign fix.
struct Householder {
    reflectors: Vec<Vector>,
    r: Matrix,
    signs: Vec<f64>,
    rows: usize,
}

impl Householder {
    fn factor(a: &Matrix) -> Self {
        let (m, n) = a.shape();
        let mut work = a.clone();
        let mut reflectors = Vec::with_capacity(n);
        for j in 0..n {
            let x = work.view((j, j), (m - j, 1)).column(0).into_owned();
            let norm = x.norm();
            let mut v = x;
            if norm > 0.0 {
                let alpha = if v[0] >= 0.0 { -norm } else { norm };
                v[0] -= alpha;
                let vnorm = v.norm();
                if vnorm > 0.0 {
                    v /= vnorm;
                } else {
                    v.fill(0.0);
                }
            } else {
                v.fill(0.0);
            }
            if v.iter().any(|&e| e != 0.0) {
                let mut block = work.view_mut((j, j), (m - j, n - j));
                let proj = v.transpose() * &block;
                block -= 2.0 * &v * proj;
            }
            reflectors.push(v);
        }
        let mut r = work.view((0, 0), (n, n)).upper_triangle();
        let mut signs = vec![1.0; n];
        for (i, s) in signs.iter_mut().enumerate() {
            if r[(i, i)] < 0.0 {
                *s = -1.0;
                r.row_mut(i).neg_mut();
            }
        }
        Self {
            reflectors,
            r,
            signs,
            rows: m,
        }
    }

    /// `H_1 ⋯ H_n` applied to the first `cols` columns of the identity.
    fn q_columns(&self, cols: usize) -> Matrix {
        let m = self.rows;
        let mut q = Matrix::identity(m, cols);
        for (j, v) in self.reflectors.iter().enumerate().rev() {
            let mut block = q.view_mut((j, 0), (m - j, cols));
            let proj = v.transpose() * &block;
            block -= 2.0 * v * proj;
        }
        for (j, &s) in self.signs.iter().enumerate() {
            if s < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        q
    }
}

fn require_finite(a: &Matrix, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn require_full_rank(r: &Matrix, context: &str) -> Result<()> {
    let sv = singular_values(r);
    let max = sv.first().copied().unwrap_or(0.0);
    let min = sv.last().copied().unwrap_or(0.0);
    if max > 0.0 && min > RANK_TOL * max {
        Ok(())
    } else {
        Err(Error::rank_deficient(context))
    }
}

/// Householder QR of a tall, full-column-rank matrix with `diag(r) ≥ 0`.
pub fn qr_decompose(a: &Matrix) -> Result<QrResult> {
    let (m, n) = a.shape();
    if m < n || n == 0 {
        return Err(Error::DimensionMismatch(format!(
            "qr_decompose needs rows >= cols >= 1, got {m}x{n}"
        )));
    }
    require_finite(a, "qr_decompose input")?;
    let h = Householder::factor(a);
    require_full_rank(&h.r, "qr_decompose")?;
    Ok(QrResult {
        q: OrthonormalBasis::from_trusted(h.q_columns(n)),
        r: h.r,
    })
}

/// Orthonormal basis of the column space of `a` (the Q factor).
pub fn orthonormalize(a: &Matrix) -> Result<OrthonormalBasis> {
    qr_decompose(a).map(|qr| qr.q)
}

/// Solves `min_X ‖a·X − b‖_F` for full-column-rank `a`.
pub fn least_squares(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "least_squares: a has {} rows, b has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.nrows() < a.ncols() {
        return Err(Error::rank_deficient(format!(
            "least_squares: {} equations for {} unknowns",
            a.nrows(),
            a.ncols()
        )));
    }
    let QrResult { q, r } = qr_decompose(a)?;
    let rhs = q.matrix().transpose() * b;
    r.solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::rank_deficient("least_squares back substitution"))
}

/// Vector right-hand-side convenience wrapper around [`least_squares`].
pub fn least_squares_vec(a: &Matrix, b: &Vector) -> Result<Vector> {
    let rhs = Matrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = least_squares(a, &rhs)?;
    Ok(x.column(0).into_owned())
}

/// Minimum-norm least-squares solution via the pseudo-inverse.
///
/// Singular values below `RANK_TOL · σ_max` are treated as zero, so this never
/// fails on rank-deficient or underdetermined systems.
pub fn min_norm_least_squares(a: &Matrix, b: &Vector) -> Vector {
    let svd = a.clone().svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Vector::zeros(a.ncols()),
    };
    let sigma_max = svd.singular_values.max();
    let cutoff = RANK_TOL * sigma_max;
    let mut coeffs = u.transpose() * b;
    for (c, &s) in coeffs.iter_mut().zip(svd.singular_values.iter()) {
        *c = if s > cutoff && s > 0.0 { *c / s } else { 0.0 };
    }
    vt.transpose() * coeffs
}

/// Singular values in descending order; `min(rows, cols)` of them.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = a.singular_values().iter().map(|s| s.max(0.0)).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Largest singular value.
pub fn spectral_norm(a: &Matrix) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// `(σ_min, σ_max)` of a matrix.
pub fn extreme_singular_values(a: &Matrix) -> (f64, f64) {
    let sv = singular_values(a);
    (
        sv.last().copied().unwrap_or(0.0),
        sv.first().copied().unwrap_or(0.0),
    )
}

/// Orthonormal basis of `span(b)^⟂`.
pub fn orthonormal_complement(b: &OrthonormalBasis) -> Result<OrthonormalBasis> {
    let (d, k) = b.matrix().shape();
    if d == k {
        return Err(Error::DimensionMismatch(format!(
            "orthonormal complement of a {d}x{k} basis is empty"
        )));
    }
    let h = Householder::factor(b.matrix());
    let full = h.q_columns(d);
    Ok(OrthonormalBasis::from_trusted(
        full.columns(k, d - k).into_owned(),
    ))
}

/// Principal angle distance `‖B̂₁⟂ᵀ B̂₂‖₂` between the column spaces of two
/// full-rank `d × k` matrices. Inputs need not be orthonormal.
pub fn principal_angle_distance(b1: &Matrix, b2: &Matrix) -> Result<f64> {
    if b1.shape() != b2.shape() {
        return Err(Error::DimensionMismatch(format!(
            "principal_angle_distance: {:?} vs {:?}",
            b1.shape(),
            b2.shape()
        )));
    }
    let q1 = orthonormalize(b1)?;
    let q2 = orthonormalize(b2)?;
    if b1.nrows() == b1.ncols() {
        // both span the whole space
        return Ok(0.0);
    }
    let c1 = orthonormal_complement(&q1)?;
    let dist = spectral_norm(&(c1.matrix().transpose() * q2.matrix()));
    Ok(dist.clamp(0.0, 1.0))
}

/// `‖mᵀm − I‖_max`.
pub fn orthonormality_deviation(m: &Matrix) -> f64 {
    let gram = m.transpose() * m;
    let k = gram.nrows();
    max_abs(&(gram - Matrix::identity(k, k)))
}

/// Entrywise max-norm.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn is_upper_triangular(m: &Matrix) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols().min(i)).all(|j| m[(i, j)] == 0.0))
}

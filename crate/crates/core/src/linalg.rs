//! Symmetric eigendecompositions with a deterministic output convention.
//!
//! Eigenvalues come back in descending order. Each eigenvector is flipped so
//! its first nonzero component is positive, and eigenvalues closer than
//! [`TIE_GAP`] form a tied block whose vectors are ordered lexicographically.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues closer than this are treated as tied.
pub const TIE_GAP: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    /// Descending.
    pub values: DVector<f64>,
    /// Orthonormal columns matching `values`.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    /// Rebuilds `V diag(f(values)) V^T`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&self.values.map(f));
        &self.vectors * d * self.vectors.transpose()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map(|v| v)
    }

    /// Smallest eigenvalue must be strictly positive.
    pub fn check_positive(&self) -> Result<()> {
        let p = self.values.len();
        match self.values.iter().rposition(|&v| !(v > 0.0)) {
            Some(index) if p > 0 => Err(Error::NotPositiveDefinite {
                index,
                value: self.values[index],
                eigenvalues: self.values.iter().copied().collect(),
            }),
            _ => Ok(()),
        }
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() <= rel_tol * scale
}

fn canonical_sign(v: &mut DVector<f64>) {
    let tiny = 1e-12 * v.amax();
    if let Some(first) = v.iter().find(|x| x.abs() > tiny) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

fn lex_cmp(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match y.partial_cmp(x) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Eigendecomposition of the symmetric part of `m` in canonical form.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SymEigen> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let p = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut pairs: Vec<(f64, DVector<f64>)> = (0..p)
        .map(|j| {
            let mut v: DVector<f64> = eig.eigenvectors.column(j).into_owned();
            canonical_sign(&mut v);
            (eig.eigenvalues[j], v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    // within tied blocks, order by the canonicalized vectors (larger first)
    let mut start = 0;
    while start < p {
        let mut end = start + 1;
        while end < p && pairs[end - 1].0 - pairs[end].0 < TIE_GAP {
            end += 1;
        }
        if end - start > 1 {
            pairs[start..end].sort_by(|a, b| lex_cmp(&a.1, &b.1));
        }
        start = end;
    }

    let values = DVector::from_iterator(p, pairs.iter().map(|(v, _)| *v));
    let mut vectors = DMatrix::zeros(p, p);
    for (j, (_, v)) in pairs.iter().enumerate() {
        vectors.set_column(j, v);
    }
    Ok(SymEigen { values, vectors })
}

/// Eigendecomposition that also insists on positive definiteness.
pub fn pd_eigen(m: &DMatrix<f64>) -> Result<SymEigen> {
    let e = sym_eigen(m)?;
    e.check_positive()?;
    Ok(e)
}

/// Symmetric square root `G L^{1/2} G^T`.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(pd_eigen(m)?.map(f64::sqrt))
}

/// Symmetric inverse square root `G L^{-1/2} G^T`.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(pd_eigen(m)?.map(|v| 1.0 / v.sqrt()))
}

pub fn sym_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&pd_eigen(m)?.map(|v| 1.0 / v)))
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Angle between the subspaces spanned by two unit vectors, in [0, pi/2].
pub fn abs_angle(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.dot(b).abs().min(1.0).acos()
}

/// Largest principal angle between the column spans of two orthonormal bases.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let m = a.transpose() * b;
    let s = m.svd(false, false).singular_values;
    let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
    smin.clamp(0.0, 1.0).acos()
}

//! Robust functional PCA and outlier flagging for curves on a common grid.
//!
//! Curves are mapped to coefficients on a cubic B-spline basis that is
//! orthonormalized under the left-endpoint Riemann inner product
//! `<f, g> = sum_{l >= 2} f(t_l) g(t_l) (t_l - t_{l-1})`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;

use crate::data::DataMatrix;
use crate::depth_weights::{WeightKind, WeightSpec};
use crate::error::{Error, Result};
use crate::location::{weighted_spatial_median, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::scatter::{recover_eigenvalues, wscm, EigenvalueRecoverySpec};
use crate::stats;

/// Normal-consistency factor for the MAD.
pub const MAD_CONSISTENCY: f64 = 1.4826;

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    design_points: DVector<f64>,
    values: DMatrix<f64>,
}

impl CurveSet {
    pub fn new(design_points: DVector<f64>, values: DMatrix<f64>) -> Result<Self> {
        let m = design_points.len();
        if m < 4 {
            return Err(Error::invalid(format!("need at least 4 design points, got {m}")));
        }
        if values.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: values.ncols(),
            });
        }
        if design_points.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::invalid("design points must lie in [0, 1]"));
        }
        if design_points.as_slice().windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("design points must be strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("curve values must be finite"));
        }
        Ok(Self {
            design_points,
            values,
        })
    }

    pub fn design_points(&self) -> &DVector<f64> {
        &self.design_points
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }
}

/// Cubic B-splines on `[t_1, t_m]` with `p_basis - 4` equispaced interior
/// knots, evaluated at `t` (an `m x p_basis` matrix). Cox-de Boor recursion.
pub fn bspline_basis(t: &[f64], p_basis: usize) -> Result<DMatrix<f64>> {
    if p_basis < 4 {
        return Err(Error::invalid("a cubic spline basis needs at least 4 functions"));
    }
    let (a, b) = (t[0], t[t.len() - 1]);
    let interior = p_basis - 4;
    let mut knots = vec![a; 4];
    for k in 1..=interior {
        knots.push(a + (b - a) * k as f64 / (interior + 1) as f64);
    }
    knots.extend([b; 4]);
    let m = t.len();
    let mut out = DMatrix::zeros(m, p_basis);
    for (l, &x) in t.iter().enumerate() {
        // degree-0 indicator; the right end belongs to the last nonempty span
        let nk = knots.len();
        let mut basis: Vec<f64> = (0..nk - 1)
            .map(|j| {
                let inside = knots[j] <= x && x < knots[j + 1];
                let last = x == b && knots[j] < knots[j + 1] && knots[j + 1] == b;
                f64::from(u8::from(inside || last))
            })
            .collect();
        for deg in 1..=3 {
            for j in 0..nk - 1 - deg {
                let left = knots[j + deg] - knots[j];
                let right = knots[j + deg + 1] - knots[j + 1];
                let mut v = 0.0;
                if left > 0.0 {
                    v += (x - knots[j]) / left * basis[j];
                }
                if right > 0.0 {
                    v += (knots[j + deg + 1] - x) / right * basis[j + 1];
                }
                basis[j] = v;
            }
        }
        for j in 0..p_basis {
            out[(l, j)] = basis[j];
        }
    }
    Ok(out)
}

/// Left-endpoint Riemann weights: zero for the first point, `t_l - t_{l-1}`
/// afterwards.
pub fn riemann_weights(t: &[f64]) -> DVector<f64> {
    DVector::from_iterator(t.len(), (0..t.len()).map(|l| if l == 0 { 0.0 } else { t[l] - t[l - 1] }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisProjection {
    /// Orthonormalized basis at the design points, `m x p_basis`.
    pub basis_values: DMatrix<f64>,
    /// Coefficients `T`, `n x p_basis`.
    pub coeffs: DMatrix<f64>,
    pub p_basis: usize,
    pub weights: DVector<f64>,
}

pub fn project_curves(curves: &CurveSet, p_basis: usize) -> Result<BasisProjection> {
    let m = curves.design_points.len();
    if p_basis + 4 > m {
        return Err(Error::invalid(format!(
            "p_basis = {p_basis} is infeasible for {m} design points (need p_basis <= m - 4)"
        )));
    }
    let t = curves.design_points.as_slice();
    let raw = bspline_basis(t, p_basis)?;
    let w = riemann_weights(t);
    let wd = DMatrix::from_diagonal(&w);
    let gram = raw.transpose() * &wd * &raw;
    let chol = Cholesky::new(crate::linalg::symmetrize(&gram))
        .ok_or_else(|| Error::Degenerate("spline Gram matrix is singular on this design".into()))?;
    // delta = B L^{-T}
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(p_basis, p_basis))
        .ok_or_else(|| Error::Degenerate("spline Gram factor is singular".into()))?;
    let delta = &raw * l_inv.transpose();
    let coeffs = curves.values() * &wd * &delta;
    Ok(BasisProjection {
        basis_values: delta,
        coeffs,
        p_basis,
        weights: w,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpcaFit {
    pub mu_hat: DVector<f64>,
    /// `p_basis x q`.
    pub loadings: DMatrix<f64>,
    /// `n x q`.
    pub scores: DMatrix<f64>,
    pub lambda_hat: DVector<f64>,
}

/// Weighted spatial median center, weighted sign covariance loadings and
/// median-of-variances eigenvalues on the coefficient rows.
pub fn robust_fpca(proj: &BasisProjection, q: usize, spec: &WeightSpec, seed: u64) -> Result<FpcaFit> {
    if q == 0 || q >= proj.p_basis {
        return Err(Error::invalid(format!("need 1 <= q < p_basis = {}, got {q}", proj.p_basis)));
    }
    let t = DataMatrix::new(proj.coeffs.clone())?;
    let center = weighted_spatial_median(&t, spec, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let fit = wscm(&t, spec, &center.q_hat)?;
    let rec = EigenvalueRecoverySpec::default_for(t.nrows(), seed);
    let (lambda, _) = recover_eigenvalues(&t, &fit, &rec)?;
    let loadings = fit.leading(q);
    let mut centered = proj.coeffs.clone();
    for mut row in centered.row_iter_mut() {
        row -= center.q_hat.transpose();
    }
    let scores = centered * &loadings;
    Ok(FpcaFit {
        mu_hat: center.q_hat,
        loadings,
        scores,
        lambda_hat: lambda.rows(0, q).into_owned(),
    })
}

/// [`robust_fpca`] with a pilot standardization of the coefficient rows.
pub fn robust_fpca_kind(proj: &BasisProjection, q: usize, kind: WeightKind, seed: u64) -> Result<FpcaFit> {
    let t = DataMatrix::new(proj.coeffs.clone())?;
    let spec = WeightSpec::pilot(&t, kind)?;
    robust_fpca(proj, q, &spec, seed)
}

/// Degrees of freedom for the score distance cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum SdDegrees {
    /// The chi-square with 2 degrees of freedom regardless of `q`.
    #[default]
    Two,
    /// Degrees of freedom equal to the number of components.
    Components,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Flag {
    pub index: usize,
    pub by_od: bool,
    pub by_sd: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutlierReport {
    pub od: Vec<f64>,
    pub sd: Vec<f64>,
    pub od_cutoff: f64,
    pub sd_cutoff: f64,
    /// Flagged curves (0-based) in increasing index order.
    pub flagged: Vec<Flag>,
}

/// `sqrt` of the 0.975 chi-square quantile.
pub fn sd_cutoff(df: usize) -> f64 {
    stats::chi2_quantile(df as f64, 0.975).sqrt()
}

/// `[median(OD^{2/3}) + 1.4826 MAD(OD^{2/3}) z_{0.975}]^{3/2}`.
pub fn od_cutoff(od: &[f64]) -> f64 {
    let c: Vec<f64> = od.iter().map(|v| v.powf(2.0 / 3.0)).collect();
    let m = stats::median(&c);
    let s = MAD_CONSISTENCY * stats::mad(&c);
    (m + s * stats::normal_quantile(0.975)).max(0.0).powf(1.5)
}

pub fn outlier_report(proj: &BasisProjection, fit: &FpcaFit, df: SdDegrees) -> Result<OutlierReport> {
    if let Some(j) = fit.lambda_hat.iter().position(|&l| !(l > 0.0)) {
        return Err(Error::Degenerate(format!(
            "eigenvalue estimate {j} is not positive ({})",
            fit.lambda_hat[j]
        )));
    }
    let n = proj.coeffs.nrows();
    let q = fit.loadings.ncols();
    let mut od = Vec::with_capacity(n);
    let mut sd = Vec::with_capacity(n);
    for i in 0..n {
        let centered = proj.coeffs.row(i).transpose() - &fit.mu_hat;
        let s = fit.scores.row(i).transpose();
        od.push((&centered - &fit.loadings * &s).norm());
        sd.push(s.iter().zip(fit.lambda_hat.iter()).map(|(s, l)| s * s / l).sum::<f64>().sqrt());
    }
    let sd_cut = sd_cutoff(match df {
        SdDegrees::Two => 2,
        SdDegrees::Components => q,
    });
    let od_cut = od_cutoff(&od);
    let flagged = (0..n)
        .filter_map(|i| {
            let (by_od, by_sd) = (od[i] > od_cut, sd[i] > sd_cut);
            (by_od || by_sd).then_some(Flag { index: i, by_od, by_sd })
        })
        .collect();
    Ok(OutlierReport {
        od,
        sd,
        od_cutoff: od_cut,
        sd_cutoff: sd_cut,
        flagged,
    })
}

//! Scatter estimators built on (weighted) spatial signs.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::depth_weights::{spatial_sign, WeightFunction, WeightKind, WeightSpec, SIGN_GUARD};
use crate::elliptical::rng_for;
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, symmetrize};
use crate::stats;

pub const TYLER_TOL: f64 = 1e-10;
pub const TYLER_MAX_ITER: usize = 1000;
pub const ADCM_TOL: f64 = 1e-8;
pub const ADCM_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScatterEstimator {
    Scm,
    Tyler,
    Wscm,
    Adcm,
    Plugin,
    #[serde(rename = "cov")]
    SampleCov,
}

impl ScatterEstimator {
    pub fn label(self) -> &'static str {
        match self {
            ScatterEstimator::Scm => "scm",
            ScatterEstimator::Tyler => "tyler",
            ScatterEstimator::Wscm => "wscm",
            ScatterEstimator::Adcm => "adcm",
            ScatterEstimator::Plugin => "plugin",
            ScatterEstimator::SampleCov => "cov",
        }
    }
}

impl std::str::FromStr for ScatterEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scm" => Ok(Self::Scm),
            "tyler" => Ok(Self::Tyler),
            "wscm" => Ok(Self::Wscm),
            "adcm" => Ok(Self::Adcm),
            "plugin" => Ok(Self::Plugin),
            "cov" | "sample_cov" => Ok(Self::SampleCov),
            _ => Err(Error::invalid(format!("unknown estimator '{s}'"))),
        }
    }
}

/// Which of the M-estimation existence conditions hold for an ADCM fit,
/// with `u(r) = W^2(r)` and constant `v = c / p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HuberConditions {
    /// `u(r)/r^2` decreasing and `u > 0` on a radius grid.
    pub c1: bool,
    pub c2: bool,
    pub c3: bool,
    pub c4: bool,
    /// Necessary sample check: centered data has full rank and no point
    /// carries more mass than the hyperplane bounds allow.
    pub c5: bool,
    pub u0_over_v: f64,
}

impl HuberConditions {
    pub fn all(&self) -> bool {
        self.c1 && self.c2 && self.c3 && self.c4 && self.c5
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterFit {
    pub matrix: DMatrix<f64>,
    /// Columns in descending eigenvalue order.
    pub eigvecs: DMatrix<f64>,
    pub eigvals: DVector<f64>,
    pub estimator: ScatterEstimator,
    pub weight_spec: Option<WeightSpec>,
    pub iterations: Option<usize>,
    /// Final fixed-point residual for iterative estimators.
    pub residual: Option<f64>,
    pub residual_trace: Vec<f64>,
    pub conditions: Option<HuberConditions>,
}

impl ScatterFit {
    pub fn from_matrix(matrix: DMatrix<f64>, estimator: ScatterEstimator) -> Result<Self> {
        let matrix = symmetrize(&matrix);
        let e = sym_eigen(&matrix)?;
        Ok(Self {
            matrix,
            eigvecs: e.vectors,
            eigvals: e.values.map(|v| v.max(0.0)),
            estimator,
            weight_spec: None,
            iterations: None,
            residual: None,
            residual_trace: Vec::new(),
            conditions: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigvec(&self, i: usize) -> DVector<f64> {
        self.eigvecs.column(i).into_owned()
    }

    /// First `q` eigenvectors as columns.
    pub fn leading(&self, q: usize) -> DMatrix<f64> {
        self.eigvecs.columns(0, q).into_owned()
    }
}

fn check_mu(data: &DataMatrix, mu: &DVector<f64>) -> Result<()> {
    data.check_dim(mu)?;
    if mu.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("center must be finite"));
    }
    Ok(())
}

/// `n^{-1} sum_i w_i^2 S_i S_i^T`.
pub fn weighted_sign_covariance(x: &DMatrix<f64>, w: &[f64], mu: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = (x.nrows(), x.ncols());
    let mut acc = DMatrix::zeros(p, p);
    let mut any = false;
    for (row, &wi) in x.row_iter().zip(w) {
        let s = spatial_sign(&row.transpose(), mu);
        if s.iter().all(|v| *v == 0.0) {
            continue;
        }
        any = true;
        acc.ger(wi * wi, &s, &s, 1.0);
    }
    if !any {
        return Err(Error::Degenerate("every observation equals the center".into()));
    }
    Ok(symmetrize(&(acc / n as f64)))
}

/// Weighted sign covariance matrix with empirical weights from `spec`.
pub fn wscm(data: &DataMatrix, spec: &WeightSpec, mu_hat: &DVector<f64>) -> Result<ScatterFit> {
    check_mu(data, mu_hat)?;
    if data.nrows() < data.ncols() {
        return Err(Error::invalid("wscm needs n >= p"));
    }
    let w = WeightFunction::empirical(spec, data)?.eval_all(data);
    let m = weighted_sign_covariance(data.values(), &w, mu_hat)?;
    let mut fit = ScatterFit::from_matrix(m, ScatterEstimator::Wscm)?;
    fit.weight_spec = Some(spec.clone());
    Ok(fit)
}

pub fn scm(data: &DataMatrix, mu_hat: &DVector<f64>) -> Result<ScatterFit> {
    let mut fit = wscm(data, &WeightSpec::unit(data.ncols()), mu_hat)?;
    fit.estimator = ScatterEstimator::Scm;
    fit.weight_spec = None;
    Ok(fit)
}

/// Sample covariance with divisor `n - 1`.
pub fn sample_covariance(data: &DataMatrix) -> Result<ScatterFit> {
    let m = covariance_matrix(data.values())?;
    ScatterFit::from_matrix(m, ScatterEstimator::SampleCov)
}

pub fn covariance_matrix(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid("covariance needs at least two rows"));
    }
    let mean = x.row_mean();
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    Ok(symmetrize(&(c.transpose() * &c / (n as f64 - 1.0))))
}

fn centered_nonzero(x: &DMatrix<f64>, mu: &DVector<f64>) -> Vec<DVector<f64>> {
    x.row_iter()
        .map(|r| r.transpose() - mu)
        .filter(|d| d.norm() >= SIGN_GUARD)
        .collect()
}

fn mahalanobis_sq(chol: &Cholesky<f64, nalgebra::Dyn>, d: &DVector<f64>) -> f64 {
    let y = chol.l().solve_lower_triangular(d).expect("nonsingular factor");
    y.norm_squared()
}

fn cholesky(sigma: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(symmetrize(sigma))
        .ok_or_else(|| Error::Degenerate(format!("{what} iterate lost positive definiteness")))
}

/// Right-hand side of Tyler's equation, `(p/n) sum d d^T / (d^T S^{-1} d)`.
fn tyler_map(ds: &[DVector<f64>], sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    let chol = cholesky(sigma, "Tyler")?;
    let mut acc = DMatrix::zeros(p, p);
    for d in ds {
        let r2 = mahalanobis_sq(&chol, d);
        acc.ger(1.0 / r2, d, d, 1.0);
    }
    Ok(symmetrize(&(acc * (p as f64 / ds.len() as f64))))
}

fn relative_residual(sigma: &DMatrix<f64>, image: &DMatrix<f64>) -> f64 {
    (image - sigma).norm() / sigma.norm()
}

/// Tyler shape around a known center, trace normalized to `p`. Returns the
/// matrix, the iteration count and the final residual.
pub fn tyler_shape(
    x: &DMatrix<f64>,
    mu: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DMatrix<f64>, usize, f64)> {
    let (trace, _) = tyler_iterate(x, mu, tol, max_iter)?;
    let last = trace.last().expect("at least one iterate");
    Ok((last.0.clone(), trace.len() - 1, last.1))
}

fn tyler_iterate(
    x: &DMatrix<f64>,
    mu: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<(DMatrix<f64>, f64)>, ())> {
    let p = x.ncols();
    let ds = centered_nonzero(x, mu);
    if ds.len() <= p {
        return Err(Error::Degenerate(format!(
            "Tyler needs more than p = {p} observations away from the center"
        )));
    }
    let mut sigma = DMatrix::identity(p, p);
    let mut trace = Vec::new();
    for _ in 0..=max_iter {
        let image = tyler_map(&ds, &sigma)?;
        let res = relative_residual(&sigma, &image);
        if !res.is_finite() {
            return Err(Error::Degenerate("Tyler iteration produced non-finite values".into()));
        }
        trace.push((sigma.clone(), res));
        if res <= tol {
            return Ok((trace, ()));
        }
        let tr = image.trace();
        sigma = image * (p as f64 / tr);
    }
    let (best, res) = trace.pop().expect("nonempty");
    Err(Error::NoConvergence {
        what: "Tyler shape",
        iterations: max_iter,
        residual: res,
        best: Some(best.iter().copied().collect()),
    })
}

pub fn tyler(data: &DataMatrix, mu_hat: &DVector<f64>, tol: f64, max_iter: usize) -> Result<ScatterFit> {
    check_mu(data, mu_hat)?;
    let (trace, _) = tyler_iterate(data.values(), mu_hat, tol, max_iter)?;
    let residual_trace = trace.iter().map(|t| t.1).collect();
    let (sigma, res) = trace.last().cloned().expect("nonempty");
    let mut fit = ScatterFit::from_matrix(sigma, ScatterEstimator::Tyler)?;
    fit.iterations = Some(trace.len() - 1);
    fit.residual = Some(res);
    fit.residual_trace = residual_trace;
    Ok(fit)
}

/// Relative Frobenius residual of Tyler's equation at `sigma`.
pub fn tyler_residual(data: &DataMatrix, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let ds = centered_nonzero(data.values(), mu);
    Ok(relative_residual(sigma, &tyler_map(&ds, sigma)?))
}

/// The ADCM fixed-point map with its weight profile and normalizer fixed.
struct AdcmMap {
    ds: Vec<DVector<f64>>,
    n: usize,
    weights: WeightFunction,
    normalizer: f64,
}

impl AdcmMap {
    fn new(data: &DataMatrix, spec: &WeightSpec, mu: &DVector<f64>) -> Result<Self> {
        if !spec.kind().is_depth() {
            return Err(Error::invalid(format!(
                "adcm needs a depth weight (hsd, mhd or pd), got {}",
                spec.kind().label()
            )));
        }
        let weights = WeightFunction::empirical(spec, data)?;
        let w0 = weights.eval_all(data);
        if stats::variance(&w0) < 1e-12 {
            return Err(Error::Degenerate("weights are nearly constant".into()));
        }
        let normalizer = w0.iter().map(|w| w * w).sum::<f64>() / w0.len() as f64;
        Ok(Self {
            ds: centered_nonzero(data.values(), mu),
            n: data.nrows(),
            weights,
            normalizer,
        })
    }

    fn apply(&self, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let p = sigma.nrows();
        let chol = cholesky(sigma, "ADCM")?;
        let mut acc = DMatrix::zeros(p, p);
        for d in &self.ds {
            let r2 = mahalanobis_sq(&chol, d);
            let w = self.weights.profile(r2.sqrt());
            acc.ger(w * w / r2, d, d, 1.0);
        }
        Ok(symmetrize(&(acc * (p as f64 / (self.normalizer * self.n as f64)))))
    }

    fn conditions(&self, p: usize, data: &DataMatrix) -> HuberConditions {
        let u = |r: f64| self.weights.profile(r).powi(2);
        let v = self.normalizer / p as f64;
        let grid: Vec<f64> = (1..=2000).map(|k| k as f64 * 0.005).collect();
        let c1 = grid.iter().all(|&r| u(r) > 0.0)
            && grid.windows(2).all(|g| u(g[1]) / (g[1] * g[1]) <= u(g[0]) / (g[0] * g[0]));
        let bound = self.weights.upper_bound().powi(2);
        let c3 = grid.iter().all(|&r| u(r).is_finite() && u(r) <= bound * (1.0 + 1e-12));
        let u0_over_v = u(0.0) / v;
        let c4 = u0_over_v < p as f64;
        // heaviest single point mass versus the hyperplane bounds
        let mut rows: Vec<Vec<f64>> = data.rows().map(|r| r.iter().copied().collect()).collect();
        rows.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
        let mut heaviest = 0usize;
        let mut run = 0usize;
        for k in 0..rows.len() {
            run = if k > 0 && rows[k] == rows[k - 1] { run + 1 } else { 1 };
            heaviest = heaviest.max(run);
        }
        let mass = heaviest as f64 / rows.len() as f64;
        let full_rank = covariance_matrix(data.values())
            .ok()
            .and_then(|c| sym_eigen(&c).ok())
            .map(|e| e.values[p - 1] > 1e-12 * e.values[0].max(f64::MIN_POSITIVE))
            .unwrap_or(false);
        let u_inf = u(1e12);
        let c5 = full_rank && mass <= 1.0 / p as f64 && mass < 1.0 - p as f64 * v / u_inf;
        HuberConditions {
            c1,
            c2: v > 0.0,
            c3,
            c4,
            c5,
            u0_over_v,
        }
    }
}

/// Affine equivariant depth-weighted M-estimator of scatter.
///
/// Solves `S = (p/c) n^{-1} sum_i W^2(r_i) d_i d_i^T / r_i^2` with
/// `d_i = X_i - mu`, `r_i^2 = d_i^T S^{-1} d_i`. The weight profile `W(r)` and
/// the normalizer `c` (mean squared pilot weight) are fixed from `spec`; the
/// iteration starts at the spec's shape.
pub fn adcm(
    data: &DataMatrix,
    spec: &WeightSpec,
    mu_hat: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<ScatterFit> {
    check_mu(data, mu_hat)?;
    let p = data.ncols();
    if data.nrows() <= p {
        return Err(Error::invalid("adcm needs n > p"));
    }
    let map = AdcmMap::new(data, spec, mu_hat)?;
    let conditions = map.conditions(p, data);
    let mut sigma = spec.shape().clone();
    let mut residuals = Vec::new();
    for it in 0..=max_iter {
        let image = map.apply(&sigma)?;
        let res = relative_residual(&sigma, &image);
        if !res.is_finite() {
            return Err(Error::Degenerate("ADCM iteration produced non-finite values".into()));
        }
        residuals.push(res);
        if res <= tol {
            let mut fit = ScatterFit::from_matrix(sigma, ScatterEstimator::Adcm)?;
            fit.weight_spec = Some(spec.clone());
            fit.iterations = Some(it);
            fit.residual = Some(res);
            fit.residual_trace = residuals;
            fit.conditions = Some(conditions);
            return Ok(fit);
        }
        sigma = image;
    }
    Err(Error::NoConvergence {
        what: "ADCM",
        iterations: max_iter,
        residual: *residuals.last().expect("nonempty"),
        best: Some(sigma.iter().copied().collect()),
    })
}

/// Relative Frobenius residual of the ADCM equation at `sigma`.
pub fn adcm_residual(
    data: &DataMatrix,
    spec: &WeightSpec,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<f64> {
    let map = AdcmMap::new(data, spec, mu)?;
    Ok(relative_residual(sigma, &map.apply(sigma)?))
}

/// Grouping for the median-of-variances eigenvalue repair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenvalueRecoverySpec {
    pub k_groups: usize,
    #[serde(default)]
    pub seed: u64,
}

impl EigenvalueRecoverySpec {
    /// `k = floor(sqrt(n))`.
    pub fn default_for(n: usize, seed: u64) -> Self {
        Self {
            k_groups: ((n as f64).sqrt().floor() as usize).max(2),
            seed,
        }
    }
}

/// Eigenvalues as medians of group-wise variances along the base
/// eigenvectors, and the matrix `G diag(lambda) G^T` they define.
///
/// Rows are put in lexicographic order, shuffled and cut into `k` groups of
/// `floor(n/k)`; leftovers are dropped. Variances use divisor `|G_j|` around the group mean.
pub fn recover_eigenvalues(
    data: &DataMatrix,
    base: &ScatterFit,
    rec: &EigenvalueRecoverySpec,
) -> Result<(DVector<f64>, ScatterFit)> {
    let (n, p) = (data.nrows(), data.ncols());
    if base.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: base.dim(),
        });
    }
    let k = rec.k_groups;
    if k < 2 || k > n / 2 {
        return Err(Error::invalid(format!(
            "k_groups must lie in [2, n/2] = [2, {}], got {k}",
            n / 2
        )));
    }
    let gamma = &base.eigvecs;
    let s = data.values() * gamma;
    // canonical row order first, so the grouping ignores input order
    let x = data.values();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        (0..p)
            .map(|j| x[(a, j)].total_cmp(&x[(b, j)]))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx.shuffle(&mut rng_for(rec.seed, 0));
    let size = n / k;
    let mut per_coord = vec![Vec::with_capacity(k); p];
    for g in idx.chunks_exact(size).take(k) {
        for (i, col) in per_coord.iter_mut().enumerate() {
            let vals: Vec<f64> = g.iter().map(|&l| s[(l, i)]).collect();
            let m = stats::mean(&vals);
            col.push(vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / size as f64);
        }
    }
    let lambda = DVector::from_iterator(p, per_coord.iter().map(|c| stats::median(c)));
    let matrix = gamma * DMatrix::from_diagonal(&lambda) * gamma.transpose();
    let mut fit = ScatterFit::from_matrix(matrix, ScatterEstimator::Plugin)?;
    fit.weight_spec = base.weight_spec.clone();
    Ok((lambda, fit))
}

/// Convenience used by [`WeightKind`] aware callers: unit kind maps to scm.
pub fn sign_scatter(data: &DataMatrix, spec: &WeightSpec, mu: &DVector<f64>) -> Result<ScatterFit> {
    match spec.kind() {
        WeightKind::Unit => scm(data, mu),
        _ => wscm(data, spec, mu),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(rows: &[&[f64]]) -> DataMatrix {
        DataMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn scm_trace_and_rank_one() {
        let d = data(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let fit = scm(&d, &DVector::zeros(2)).unwrap();
        let mut want = DMatrix::zeros(2, 2);
        want[(0, 0)] = 1.0;
        assert_eq!(fit.matrix, want);
        assert!((fit.matrix.trace() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn all_rows_at_center() {
        let d = data(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        assert!(matches!(
            scm(&d, &DVector::from_vec(vec![1.0, 1.0])),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn tyler_on_symmetric_directions() {
        let d = data(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0], &[2.0, 0.0], &[0.0, -3.0]]);
        let fit = tyler(&d, &DVector::zeros(2), 1e-12, 100).unwrap();
        assert!((&fit.matrix - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);
        assert!(fit.residual.unwrap() <= 1e-12);
    }

    #[test]
    fn recovery_by_hand() {
        // two groups, each holding one copy of {+-2 e1, +-e2}
        let d = data(&[
            &[2.0, 0.0], &[-2.0, 0.0], &[0.0, 1.0], &[0.0, -1.0],
            &[2.0, 0.0], &[-2.0, 0.0], &[0.0, 1.0], &[0.0, -1.0],
        ]);
        let base = ScatterFit::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0])), ScatterEstimator::Scm).unwrap();
        let (lambda, fit) = recover_eigenvalues(&d, &base, &EigenvalueRecoverySpec { k_groups: 2, seed: 3 }).unwrap();
        let total: f64 = lambda.iter().sum();
        assert!(total > 0.0);
        assert!((fit.matrix.trace() - total).abs() < 1e-12);
        assert!(recover_eigenvalues(&d, &base, &EigenvalueRecoverySpec { k_groups: 5, seed: 3 }).is_err());
    }
}

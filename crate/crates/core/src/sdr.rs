//! Robust sufficient dimension reduction with a kernel-type predictor.
//!
//! The reduction `G1` holds the top `d` eigenvectors of a scatter estimate.
//! Predictions average training responses with weights
//! `exp(-|G1^T (x - x_i)|^2 / sigma2)`.

use nalgebra::{DMatrix, DVector};

use crate::data::DataMatrix;
use crate::depth_weights::{WeightFunction, WeightKind, WeightSpec};
use crate::error::{Error, Result};
use crate::location::{self, solve_weighted_median};
use crate::scatter::{self, sample_covariance};
use crate::stats;

const UNDERFLOW: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct SdrModel {
    pub gamma1_hat: DMatrix<f64>,
    pub sigma2_hat: f64,
    pub train_x: DMatrix<f64>,
    pub train_y: DVector<f64>,
    pub d: usize,
    projected: DMatrix<f64>,
}

impl SdrModel {
    /// Assembles a model from its parts; `gamma1_hat` must have orthonormal
    /// columns.
    pub fn new(gamma1_hat: DMatrix<f64>, sigma2_hat: f64, train_x: DMatrix<f64>, train_y: DVector<f64>) -> Result<Self> {
        let (p, d) = gamma1_hat.shape();
        if train_x.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: train_x.ncols(),
            });
        }
        if train_y.len() != train_x.nrows() || train_y.is_empty() {
            return Err(Error::invalid("train_y must have one response per training row"));
        }
        if (gamma1_hat.transpose() * &gamma1_hat - DMatrix::<f64>::identity(d, d)).amax() > 1e-10 {
            return Err(Error::invalid("gamma1_hat columns are not orthonormal"));
        }
        if !(sigma2_hat > 0.0 && sigma2_hat.is_finite()) {
            return Err(Error::Degenerate(format!("sigma2_hat must be positive, got {sigma2_hat}")));
        }
        let projected = &train_x * &gamma1_hat;
        Ok(Self {
            gamma1_hat,
            sigma2_hat,
            train_x,
            train_y,
            d,
            projected,
        })
    }

    /// Weighted average of training responses; falls back to the nearest
    /// training point when every weight underflows.
    pub fn predict(&self, x_new: &DVector<f64>) -> f64 {
        let z = self.gamma1_hat.transpose() * x_new;
        let dist2: Vec<f64> = self
            .projected
            .row_iter()
            .map(|r| (r.transpose() - &z).norm_squared())
            .collect();
        let w: Vec<f64> = dist2.iter().map(|d| (-d / self.sigma2_hat).exp()).collect();
        let total: f64 = w.iter().sum();
        if total < UNDERFLOW {
            let nearest = (0..dist2.len())
                .min_by(|&a, &b| dist2[a].total_cmp(&dist2[b]))
                .expect("nonempty training set");
            return self.train_y[nearest];
        }
        w.iter().zip(self.train_y.iter()).map(|(w, y)| w * y).sum::<f64>() / total
    }

    pub fn predict_all(&self, x: &DMatrix<f64>) -> Vec<f64> {
        x.row_iter().map(|r| self.predict(&r.transpose())).collect()
    }
}

/// Indices sorted by `y`, cut into `ceil(sqrt(n))` bins whose sizes differ by
/// at most one.
pub fn slices(y: &[f64]) -> Vec<Vec<usize>> {
    let n = y.len();
    let h = ((n as f64).sqrt().ceil() as usize).max(1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let (base, extra) = (n / h, n % h);
    let mut out = Vec::with_capacity(h);
    let mut start = 0;
    for s in 0..h {
        let len = base + usize::from(s < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    out
}

fn check_inputs(x: &DataMatrix, y: &DVector<f64>, d: usize) -> Result<()> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if d == 0 || d >= p {
        return Err(Error::invalid(format!("need 1 <= d < p, got d = {d}, p = {p}")));
    }
    if n <= p {
        return Err(Error::invalid(format!("need n > p, got n = {n}, p = {p}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("responses must be finite"));
    }
    Ok(())
}

fn check_slices(sl: &[Vec<usize>]) -> Result<()> {
    if let Some(s) = sl.iter().position(|s| s.len() < 2) {
        return Err(Error::Degenerate(format!("slice {s} has fewer than two observations")));
    }
    Ok(())
}

/// Robust fit: weighted spatial median center, weighted sign covariance
/// directions, and `sigma2` from slice-wise weighted spatial medians.
///
/// `sigma2` is the median over slices of the median squared distance between
/// projected observations and their slice's weighted spatial median, divided
/// by the chi-square median with `d` degrees of freedom. A within-slice mean
/// would let a handful of outliers spread over most slices inflate it.
/// Slice medians reuse the weights computed on the full sample.
pub fn fit_sdr(x: &DataMatrix, y: &DVector<f64>, d: usize, spec: &WeightSpec) -> Result<SdrModel> {
    check_inputs(x, y, d)?;
    let w = WeightFunction::empirical(spec, x)?.eval_all(x);
    let center = location::weighted_spatial_median_with_weights(x, &w, location::DEFAULT_TOL, location::DEFAULT_MAX_ITER)?;
    let fit = scatter::wscm(x, spec, &center.q_hat)?;
    let gamma = fit.leading(d);
    let sl = slices(y.as_slice());
    check_slices(&sl)?;
    let proj = x.values() * &gamma;
    let spreads = sl
        .iter()
        .map(|s| {
            let pts = DMatrix::from_fn(s.len(), d, |a, b| proj[(s[a], b)]);
            let mut ws: Vec<f64> = s.iter().map(|&i| w[i]).collect();
            if ws.iter().sum::<f64>() <= 0.0 {
                ws = vec![1.0; s.len()];
            }
            let m = match solve_weighted_median(&pts, &ws, location::DEFAULT_TOL, location::DEFAULT_MAX_ITER) {
                Ok(sol) => sol.point,
                Err(Error::NoConvergence { best: Some(b), .. }) => DVector::from_vec(b),
                Err(e) => return Err(e),
            };
            let sq: Vec<f64> = pts.row_iter().map(|r| (r.transpose() - &m).norm_squared()).collect();
            Ok(stats::median(&sq))
        })
        .collect::<Result<Vec<f64>>>()?;
    let sigma2 = stats::median(&spreads) / stats::chi2_quantile(d as f64, 0.5);
    SdrModel::new(gamma, sigma2, x.values().clone(), y.clone())
}

/// Robust fit with a pilot standardization of the given weight kind.
pub fn fit_sdr_kind(x: &DataMatrix, y: &DVector<f64>, d: usize, kind: WeightKind) -> Result<SdrModel> {
    check_inputs(x, y, d)?;
    let spec = WeightSpec::pilot(x, kind)?;
    fit_sdr(x, y, d, &spec)
}

/// Classical counterpart: sample covariance directions and the isotropic
/// maximum likelihood `sigma2`, the pooled within-slice squared deviation
/// from slice means over all `p` coordinates, `sum |x_i - xbar_h|^2 / (n p)`.
pub fn fit_sdr_classical(x: &DataMatrix, y: &DVector<f64>, d: usize) -> Result<SdrModel> {
    check_inputs(x, y, d)?;
    let gamma = sample_covariance(x)?.leading(d);
    let sl = slices(y.as_slice());
    check_slices(&sl)?;
    let (n, p) = (x.nrows(), x.ncols());
    let xv = x.values();
    let mut ss = 0.0;
    for s in &sl {
        let pts = DMatrix::from_fn(s.len(), p, |a, b| xv[(s[a], b)]);
        let mean = pts.row_mean();
        ss += pts.row_iter().map(|r| (r - &mean).norm_squared()).sum::<f64>();
    }
    let sigma2 = ss / (n * p) as f64;
    if !(sigma2 > 0.0) {
        return Err(Error::Degenerate("within-slice spread is zero".into()));
    }
    SdrModel::new(gamma, sigma2, xv.clone(), y.clone())
}

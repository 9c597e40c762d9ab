//! Weighted spatial median: the minimizer of `sum_i W_i |X_i - q|`.

use nalgebra::{DMatrix, DVector};

use crate::data::DataMatrix;
use crate::depth_weights::{WeightFunction, WeightSpec};
use crate::error::{Error, Result};
use crate::linalg::{pd_eigen, symmetrize, sym_inverse};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 500;

/// Observations closer than this to `q` are left out of the Hessian.
const HESSIAN_GUARD: f64 = 1e-8;

/// Raw solver output.
#[derive(Debug, Clone, PartialEq)]
pub struct MedianSolution {
    pub point: DVector<f64>,
    pub iterations: usize,
    /// Norm of the minimum-norm subgradient divided by the total weight.
    pub gradient_norm: f64,
    /// Objective value after each iterate, starting with the initial point.
    pub objective_trace: Vec<f64>,
}

pub fn objective(x: &DMatrix<f64>, w: &[f64], q: &DVector<f64>) -> f64 {
    x.row_iter()
        .zip(w)
        .map(|(row, wi)| wi * (row.transpose() - q).norm())
        .sum()
}

struct Gradient {
    // sum over non-coincident points of w_i (x_i - q)/|x_i - q|
    pull: DVector<f64>,
    // total weight of points sitting on q
    anchored: f64,
    // Weiszfeld target and its normalizer
    num: DVector<f64>,
    den: f64,
}

fn gradient(x: &DMatrix<f64>, w: &[f64], q: &DVector<f64>, guard: f64) -> Gradient {
    let p = x.ncols();
    let mut g = Gradient {
        pull: DVector::zeros(p),
        anchored: 0.0,
        num: DVector::zeros(p),
        den: 0.0,
    };
    for (row, &wi) in x.row_iter().zip(w) {
        let d = row.transpose() - q;
        let dist = d.norm();
        if dist <= guard {
            g.anchored += wi;
            continue;
        }
        g.pull.axpy(wi / dist, &d, 1.0);
        g.num.axpy(wi / dist, &row.transpose(), 1.0);
        g.den += wi / dist;
    }
    g
}

/// Minimizes `sum_i w_i |x_i - q|` over `q`.
///
/// Weiszfeld iteration with the Vardi-Zhang correction at data points. When
/// an iterate lands on an observation the subgradient test
/// `|sum_{i != k} w_i S(x_i; x_k)| <= w_k` decides whether that observation is
/// the minimizer. Converges when the subgradient norm falls to
/// `tol * mean(w)` per observation.
pub fn solve_weighted_median(
    x: &DMatrix<f64>,
    w: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<MedianSolution> {
    let (n, p) = (x.nrows(), x.ncols());
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: w.len(),
        });
    }
    if n == 0 || p == 0 {
        return Err(Error::invalid("empty data"));
    }
    if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all weights are zero".into()));
    }
    let mean_w = total / n as f64;
    let threshold = tol * mean_w;
    let spread = x.row_iter().map(|r| r.amax()).fold(0.0, f64::max).max(1.0);
    let guard = 1e-10 * spread;

    // start at the weighted mean
    let mut q = DVector::zeros(p);
    for (row, &wi) in x.row_iter().zip(w) {
        q.axpy(wi / total, &row.transpose(), 1.0);
    }
    let mut trace = vec![objective(x, w, &q)];
    let mut gnorm = f64::INFINITY;

    for it in 0..=max_iter {
        let g = gradient(x, w, &q, guard);
        let rnorm = g.pull.norm();
        gnorm = (rnorm - g.anchored).max(0.0) / n as f64;
        if gnorm <= threshold {
            return Ok(MedianSolution {
                point: q,
                iterations: it,
                gradient_norm: gnorm / mean_w,
                objective_trace: trace,
            });
        }
        if it == max_iter || !(g.den > 0.0) {
            break;
        }
        let target = &g.num / g.den;
        let mut next = if g.anchored > 0.0 {
            let gamma = (g.anchored / rnorm).min(1.0);
            &target * (1.0 - gamma) + &q * gamma
        } else {
            target
        };
        // near an observation: if the subgradient test passes there, it is
        // the minimizer (Weiszfeld only creeps toward such points)
        if let Some(k) = nearest_within(x, &next, 1e-6 * spread) {
            let xk: DVector<f64> = x.row(k).transpose();
            let gk = gradient(x, w, &xk, guard);
            if gk.pull.norm() <= gk.anchored {
                next = xk;
            }
        }
        let f = objective(x, w, &next);
        q = next;
        trace.push(f);
    }
    Err(Error::NoConvergence {
        what: "weighted spatial median",
        iterations: max_iter,
        residual: gnorm / mean_w,
        best: Some(q.iter().copied().collect()),
    })
}

fn nearest_within(x: &DMatrix<f64>, q: &DVector<f64>, radius: f64) -> Option<usize> {
    let (mut best, mut bd) = (None, radius);
    for (i, row) in x.row_iter().enumerate() {
        let d = (row.transpose() - q).norm();
        if d <= bd {
            best = Some(i);
            bd = d;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationFit {
    pub q_hat: DVector<f64>,
    pub iterations: usize,
    /// Subgradient norm relative to the mean weight.
    pub final_gradient_norm: f64,
    pub tol: f64,
    pub objective_trace: Vec<f64>,
    pub weights: Vec<f64>,
    pub psi1w_hat: DMatrix<f64>,
    pub psi2w_hat: DMatrix<f64>,
    /// `Psi2^{-1} Psi1 Psi2^{-1}`. `None` when the Hessian estimate is
    /// singular, which is always the case for `p = 1`.
    pub avar_hat: Option<DMatrix<f64>>,
}

/// Fits with empirical weights computed once from `spec`.
pub fn weighted_spatial_median(
    data: &DataMatrix,
    spec: &WeightSpec,
    tol: f64,
    max_iter: usize,
) -> Result<LocationFit> {
    let w = WeightFunction::empirical(spec, data)?.eval_all(data);
    weighted_spatial_median_with_weights(data, &w, tol, max_iter)
}

pub fn weighted_spatial_median_with_weights(
    data: &DataMatrix,
    w: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<LocationFit> {
    let (n, p) = (data.nrows(), data.ncols());
    if n < p + 1 {
        return Err(Error::invalid(format!(
            "need at least p + 1 = {} observations, got {n}",
            p + 1
        )));
    }
    let x = data.values();
    let sol = solve_weighted_median(x, w, tol, max_iter)?;
    let (psi1, psi2) = psi_hat(x, w, &sol.point);
    let avar = sym_inverse(&psi2).ok().map(|inv| symmetrize(&(&inv * &psi1 * &inv)));
    Ok(LocationFit {
        q_hat: sol.point,
        iterations: sol.iterations,
        final_gradient_norm: sol.gradient_norm,
        tol,
        objective_trace: sol.objective_trace,
        weights: w.to_vec(),
        psi1w_hat: psi1,
        psi2w_hat: psi2,
        avar_hat: avar,
    })
}

/// Plug-in gradient outer product and Hessian at `q`.
pub fn psi_hat(x: &DMatrix<f64>, w: &[f64], q: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, p) = (x.nrows(), x.ncols());
    let mut psi1 = DMatrix::zeros(p, p);
    let mut psi2 = DMatrix::zeros(p, p);
    let eye = DMatrix::<f64>::identity(p, p);
    for (row, &wi) in x.row_iter().zip(w) {
        let d = row.transpose() - q;
        let dist = d.norm();
        if dist < crate::depth_weights::SIGN_GUARD {
            continue;
        }
        let s = &d / dist;
        let ss = &s * s.transpose();
        psi1 += &ss * (wi * wi);
        if dist > HESSIAN_GUARD {
            psi2 += (&eye - &ss) * (wi / dist);
        }
    }
    (symmetrize(&(psi1 / n as f64)), symmetrize(&(psi2 / n as f64)))
}

/// `(det V_1 / det V_W)^{1/p}` from an unweighted and a weighted fit.
pub fn median_are(weighted: &LocationFit, unweighted: &LocationFit) -> Result<f64> {
    match (&weighted.avar_hat, &unweighted.avar_hat) {
        (Some(a), Some(b)) => are_from_avar(a, b),
        _ => Err(Error::Degenerate("Hessian estimate is singular (data collinear through q_hat?)".into())),
    }
}

pub fn are_from_avar(v_w: &DMatrix<f64>, v_1: &DMatrix<f64>) -> Result<f64> {
    let p = v_w.nrows();
    if v_1.nrows() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: v_1.nrows(),
        });
    }
    let lw = pd_eigen(v_w)?.values;
    let l1 = pd_eigen(v_1)?.values;
    // ratio of determinants through log-eigenvalues for stability
    let log: f64 = l1.iter().map(|v| v.ln()).sum::<f64>() - lw.iter().map(|v| v.ln()).sum::<f64>();
    Ok((log / p as f64).exp())
}

/// `lmin(Psi1) lmin(Psi2W)^2 / (W_max lmax(Psi1W) lmax(Psi2)^2)`.
pub fn are_lower_bound(
    psi1: &DMatrix<f64>,
    psi1w: &DMatrix<f64>,
    psi2: &DMatrix<f64>,
    psi2w: &DMatrix<f64>,
    w_max: f64,
) -> Result<f64> {
    if !(w_max > 0.0 && w_max.is_finite()) {
        return Err(Error::invalid("w_max must be positive and finite"));
    }
    let e1 = pd_eigen(psi1)?.values;
    let e1w = pd_eigen(psi1w)?.values;
    let e2 = pd_eigen(psi2)?.values;
    let e2w = pd_eigen(psi2w)?.values;
    let last = |v: &DVector<f64>| v[v.len() - 1];
    Ok(last(&e1) * last(&e2w).powi(2) / (w_max * e1w[0] * e2[0].powi(2)))
}

//! Influence functions and asymptotic efficiencies of eigenvector estimates.
//!
//! Population expectations are Monte-Carlo averages over draws of the
//! spherical core `Z`. Draws are generated in fixed-size chunks, each with its
//! own stream of the seeded generator, and reduced in chunk order, so every
//! result is a deterministic function of the seed. Standard errors are
//! delete-one-chunk jackknife estimates.
//!
//! Coordinates: for a model with `Sigma = G L G^T`, a draw `z` maps to
//! eigenbasis coordinates `y = L^{1/2} z` and to the sample space as
//! `x = mu + G y`.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::depth_weights::{spatial_sign, WeightFunction, WeightKind, WeightSpec};
use crate::elliptical::{rng_for, EllipticalModel};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, symmetrize, TIE_GAP};

const CHUNK: usize = 1 << 14;

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Per-chunk sums of a vector of statistics.
struct McSums {
    chunks: Vec<(usize, Vec<f64>)>,
    total: Vec<f64>,
    n: usize,
}

impl McSums {
    fn mean(&self) -> Vec<f64> {
        self.total.iter().map(|s| s / self.n as f64).collect()
    }

    /// Value of `g(means)` and its delete-one-chunk jackknife standard error.
    fn jackknife(&self, g: impl Fn(&[f64]) -> f64) -> Estimate {
        let value = g(&self.mean());
        let b = self.chunks.len();
        if b < 2 {
            return Estimate {
                value,
                std_error: f64::NAN,
            };
        }
        let loo: Vec<f64> = self
            .chunks
            .iter()
            .map(|(len, sums)| {
                let m = (self.n - len) as f64;
                let means: Vec<f64> = self.total.iter().zip(sums).map(|(t, s)| (t - s) / m).collect();
                g(&means)
            })
            .collect();
        let bar = loo.iter().sum::<f64>() / b as f64;
        let var = loo.iter().map(|v| (v - bar) * (v - bar)).sum::<f64>() * (b as f64 - 1.0) / b as f64;
        Estimate {
            value,
            std_error: var.sqrt(),
        }
    }

    fn std_errors(&self) -> Vec<f64> {
        (0..self.total.len())
            .map(|j| self.jackknife(|m| m[j]).std_error)
            .collect()
    }
}

/// Sums `k` statistics of `mc` spherical draws of `model`.
fn mc_sums<F>(model: &EllipticalModel, mc: usize, seed: u64, k: usize, stat: F) -> McSums
where
    F: Fn(&DVector<f64>, &mut [f64]) + Sync,
{
    let p = model.dim();
    let family = model.family();
    let nchunks = mc.div_ceil(CHUNK);
    let chunks: Vec<(usize, Vec<f64>)> = (0..nchunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, c as u64);
            let len = CHUNK.min(mc - c * CHUNK);
            let mut sums = vec![0.0; k];
            let mut buf = vec![0.0; k];
            for _ in 0..len {
                let z = family.draw_spherical(p, &mut rng);
                stat(&z, &mut buf);
                for (s, b) in sums.iter_mut().zip(&buf) {
                    *s += b;
                }
            }
            (len, sums)
        })
        .collect();
    let mut total = vec![0.0; k];
    for (_, sums) in &chunks {
        for (t, s) in total.iter_mut().zip(sums) {
            *t += s;
        }
    }
    McSums {
        chunks,
        total,
        n: mc,
    }
}

/// Population weight function standardized by the model itself, keeping the
/// kind and scale of `spec`.
pub fn population_weights(model: &EllipticalModel, spec: &WeightSpec) -> Result<WeightFunction> {
    let s = WeightSpec::for_model(spec.kind(), model).with_scale(spec.scale())?;
    match spec.kind() {
        WeightKind::Hsd | WeightKind::Pd => WeightFunction::population(&s, model),
        _ => WeightFunction::free(&s),
    }
}

/// Weight of the sample-space point behind eigenbasis coordinates `y`.
fn weight_at(wf: &WeightFunction, model: &EllipticalModel, z: &DVector<f64>, y: &DVector<f64>) -> f64 {
    match wf.kind() {
        WeightKind::Distance => wf.spec().scale() * y.norm(),
        WeightKind::Unit => wf.spec().scale(),
        _ => {
            let _ = model;
            wf.profile(z.norm())
        }
    }
}

fn sqrt_lambda(model: &EllipticalModel) -> DVector<f64> {
    model.eigen().values.map(f64::sqrt)
}

fn check_index(model: &EllipticalModel, i: usize) -> Result<()> {
    if i >= model.dim() {
        return Err(Error::invalid(format!(
            "eigenvector index {i} out of range for p = {}",
            model.dim()
        )));
    }
    Ok(())
}

fn check_distinct(values: &[f64], what: &str) -> Result<()> {
    for a in 0..values.len() {
        for b in a + 1..values.len() {
            if (values[a] - values[b]).abs() < TIE_GAP {
                return Err(Error::Degenerate(format!(
                    "{what} {a} and {b} coincide ({:e}); eigenvectors are not identified",
                    values[a]
                )));
            }
        }
    }
    Ok(())
}

/// `E[W^2(X) lambda_i z_i^2 / sum_j lambda_j z_j^2]`: the eigenvalues of the
/// population weighted sign covariance matrix, in the model's eigen order.
pub fn wscm_eigenvalues(model: &EllipticalModel, spec: &WeightSpec, mc: usize, seed: u64) -> Result<Vec<Estimate>> {
    let wf = population_weights(model, spec)?;
    let sl = sqrt_lambda(model);
    let p = model.dim();
    let sums = mc_sums(model, mc, seed, p, |z, out| {
        let y = z.component_mul(&sl);
        let q = y.norm_squared();
        let w = weight_at(&wf, model, z, &y);
        for (o, yi) in out.iter_mut().zip(y.iter()) {
            *o = if q > 0.0 { w * w * yi * yi / q } else { 0.0 };
        }
    });
    let se = sums.std_errors();
    Ok(sums
        .mean()
        .into_iter()
        .zip(se)
        .map(|(value, std_error)| Estimate { value, std_error })
        .collect())
}

/// `sum_{k != i} c_k gamma_k` in sample-space coordinates, where
/// `c_k = coef(k, y_k)`.
fn combine(model: &EllipticalModel, i: usize, coef: impl Fn(usize) -> f64) -> DVector<f64> {
    let g = &model.eigen().vectors;
    let mut out = DVector::zeros(model.dim());
    for k in 0..model.dim() {
        if k != i {
            out.axpy(coef(k), &g.column(k), 1.0);
        }
    }
    out
}

/// Influence function of the `i`-th (0-based) eigenvector of the weighted
/// sign covariance matrix:
/// `sum_{k != i} W^2(x0) (gamma_k^T S(x0) gamma_i) / (lt_i - lt_k) gamma_k`.
pub fn if_wscm_eigenvector(
    x0: &DVector<f64>,
    i: usize,
    model: &EllipticalModel,
    spec: &WeightSpec,
    mc: usize,
    seed: u64,
) -> Result<DVector<f64>> {
    check_index(model, i)?;
    // tied population eigenvalues tie the weighted ones, whatever the noise says
    check_distinct(model.eigen().values.as_slice(), "covariance eigenvalues")?;
    let lt: Vec<f64> = wscm_eigenvalues(model, spec, mc, seed)?.iter().map(|e| e.value).collect();
    check_distinct(&lt, "weighted sign covariance eigenvalues")?;
    let wf = population_weights(model, spec)?;
    let w = wf.eval(x0);
    let s = model.eigen().vectors.transpose() * spatial_sign(x0, model.mu());
    Ok(combine(model, i, |k| w * w * s[k] * s[i] / (lt[i] - lt[k])))
}

/// Influence function of the `i`-th spatial sign covariance eigenvector,
/// with `lambda_{S,i} = E[lambda_i z_i^2 / sum_j lambda_j z_j^2]` by Monte-Carlo.
pub fn if_scm_eigenvector(x0: &DVector<f64>, i: usize, model: &EllipticalModel, mc: usize, seed: u64) -> Result<DVector<f64>> {
    if_wscm_eigenvector(x0, i, model, &WeightSpec::unit(model.dim()), mc, seed)
}

/// Influence function of the `i`-th eigenvector of Tyler's shape matrix,
/// `(p+2) sum_{k != i} sqrt(l_i l_k)/(l_i - l_k) S_ik(z0) gamma_k`.
pub fn if_tyler_eigenvector(x0: &DVector<f64>, i: usize, model: &EllipticalModel) -> Result<DVector<f64>> {
    check_index(model, i)?;
    let l = model.eigen().values.as_slice().to_vec();
    check_distinct(&l, "covariance eigenvalues")?;
    let p = model.dim() as f64;
    let u = spatial_sign(&model.standardize(x0), &DVector::zeros(model.dim()));
    Ok(combine(model, i, |k| {
        (p + 2.0) * (l[i] * l[k]).sqrt() / (l[i] - l[k]) * u[i] * u[k]
    }))
}

/// Influence function of the `i`-th sample covariance eigenvector,
/// `sum_{k != i} (gamma_k^T x x^T gamma_i)/(l_i - l_k) gamma_k` with `x = x0 - mu`.
pub fn if_sample_cov_eigenvector(x0: &DVector<f64>, i: usize, model: &EllipticalModel) -> Result<DVector<f64>> {
    check_index(model, i)?;
    let l = model.eigen().values.as_slice().to_vec();
    check_distinct(&l, "covariance eigenvalues")?;
    let y = model.eigen().vectors.transpose() * (x0 - model.mu());
    Ok(combine(model, i, |k| y[k] * y[i] / (l[i] - l[k])))
}

/// Estimators whose eigenvector influence functions are available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EigenEstimator {
    SampleCov,
    Scm,
    Tyler,
    Wscm(WeightKind),
    Adcm(WeightKind),
}

impl EigenEstimator {
    pub fn label(self) -> String {
        match self {
            EigenEstimator::SampleCov => "cov".into(),
            EigenEstimator::Scm => "scm".into(),
            EigenEstimator::Tyler => "tyler".into(),
            EigenEstimator::Wscm(k) => format!("wscm-{}", k.label()),
            EigenEstimator::Adcm(k) => format!("adcm-{}", k.label()),
        }
    }
}

impl FromStr for EigenEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.split_once(['-', ':']) {
            Some(("wscm", k)) => Ok(EigenEstimator::Wscm(k.parse()?)),
            Some(("adcm", k)) => Ok(EigenEstimator::Adcm(k.parse()?)),
            _ => match lower.as_str() {
                "cov" | "sample_cov" => Ok(EigenEstimator::SampleCov),
                "scm" => Ok(EigenEstimator::Scm),
                "tyler" => Ok(EigenEstimator::Tyler),
                _ => Err(Error::invalid(format!("unknown influence estimator '{s}'"))),
            },
        }
    }
}

/// Settings for the contamination-based influence function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericIfConfig {
    pub eps: f64,
    pub mc: usize,
    pub seed: u64,
    /// Number of disjoint sub-pools used for the standard error.
    pub batches: usize,
}

impl Default for NumericIfConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            mc: 200_000,
            seed: 1,
            batches: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericIf {
    pub value: DVector<f64>,
    pub norm: f64,
    /// Standard error of `norm` from the sub-pool spread.
    pub std_error: f64,
}

/// A scatter functional evaluated on a weighted pool of centered points.
enum Functional {
    /// `E[f(d)]` with `f(d) = w(d)^2 S(d) S(d)^T` or `d d^T`.
    Linear(Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Sync>),
    Tyler,
    Adcm { wf: WeightFunction, c: f64 },
}

/// Centered pool points `x - mu` as rows of a matrix.
struct Pool {
    d: Vec<DVector<f64>>,
}

const FP_TOL: f64 = 1e-14;
const FP_MAX_ITER: usize = 5000;

impl Functional {
    fn linear_mean(&self, pool: &[DVector<f64>]) -> DMatrix<f64> {
        let Functional::Linear(f) = self else { unreachable!() };
        let p = pool[0].len();
        let parts: Vec<DMatrix<f64>> = pool
            .par_chunks(CHUNK)
            .map(|c| c.iter().fold(DMatrix::zeros(p, p), |acc, d| acc + f(d)))
            .collect();
        parts.into_iter().fold(DMatrix::zeros(p, p), |a, b| a + b) / pool.len() as f64
    }

    /// `sum_j omega d_j d_j^T u(r_j)/r_j^2 + eps d0 d0^T u(r0)/r0^2`, scaled.
    fn fixed_point_map(&self, pool: &[DVector<f64>], extra: Option<(&DVector<f64>, f64)>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let p = sigma.nrows();
        let chol = nalgebra::Cholesky::new(symmetrize(sigma))
            .ok_or_else(|| Error::Degenerate("fixed-point iterate lost positive definiteness".into()))?;
        let inv = chol.inverse();
        let term = |d: &DVector<f64>| -> Option<f64> {
            let r2 = d.dot(&(&inv * d));
            if !(r2 > 0.0) {
                return None;
            }
            let u = match self {
                Functional::Tyler => 1.0,
                Functional::Adcm { wf, .. } => wf.profile(r2.sqrt()).powi(2),
                Functional::Linear(_) => unreachable!(),
            };
            Some(u / r2)
        };
        let eps = extra.map_or(0.0, |e| e.1);
        let parts: Vec<DMatrix<f64>> = pool
            .par_chunks(CHUNK)
            .map(|c| {
                let mut acc = DMatrix::zeros(p, p);
                for d in c {
                    if let Some(a) = term(d) {
                        acc.ger(a, d, d, 1.0);
                    }
                }
                acc
            })
            .collect();
        let mut m = parts.into_iter().fold(DMatrix::zeros(p, p), |a, b| a + b) * ((1.0 - eps) / pool.len() as f64);
        if let Some((d0, e)) = extra {
            if let Some(a) = term(d0) {
                m.ger(e * a, d0, d0, 1.0);
            }
        }
        let scale = match self {
            Functional::Tyler => p as f64,
            Functional::Adcm { c, .. } => p as f64 / c,
            Functional::Linear(_) => unreachable!(),
        };
        Ok(symmetrize(&(m * scale)))
    }

    fn solve(&self, pool: &[DVector<f64>], extra: Option<(&DVector<f64>, f64)>, start: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut sigma = start.clone();
        for _ in 0..FP_MAX_ITER {
            let mut next = self.fixed_point_map(pool, extra, &sigma)?;
            if matches!(self, Functional::Tyler) {
                let p = next.nrows() as f64;
                next *= p / next.trace();
            }
            let res = (&next - &sigma).norm() / sigma.norm();
            sigma = next;
            if res <= FP_TOL {
                return Ok(sigma);
            }
        }
        Err(Error::NoConvergence {
            what: "population fixed point",
            iterations: FP_MAX_ITER,
            residual: f64::NAN,
            best: None,
        })
    }

    /// Functional at the pool, and at the pool contaminated by `eps` at `d0`.
    fn pair(&self, pool: &[DVector<f64>], base: &DMatrix<f64>, d0: &DVector<f64>, eps: f64) -> Result<DMatrix<f64>> {
        match self {
            Functional::Linear(f) => Ok(base * (1.0 - eps) + f(d0) * eps),
            _ => self.solve(pool, Some((d0, eps)), base),
        }
    }

    fn base(&self, pool: &[DVector<f64>], model: &EllipticalModel) -> Result<DMatrix<f64>> {
        match self {
            Functional::Linear(_) => Ok(self.linear_mean(pool)),
            _ => self.solve(pool, None, model.sigma()),
        }
    }
}

fn functional_for(est: EigenEstimator, model: &EllipticalModel, scale: f64, pool: &[DVector<f64>]) -> Result<Functional> {
    let unit = |kind: WeightKind| -> Result<WeightFunction> {
        let spec = WeightSpec::for_model(kind, model).with_scale(scale)?;
        population_weights(model, &spec)
    };
    Ok(match est {
        EigenEstimator::SampleCov => Functional::Linear(Box::new(|d: &DVector<f64>| d * d.transpose())),
        EigenEstimator::Scm => Functional::Linear(Box::new(|d: &DVector<f64>| {
            let s = spatial_sign(d, &DVector::zeros(d.len()));
            &s * s.transpose()
        })),
        EigenEstimator::Wscm(kind) => {
            let wf = unit(kind)?;
            let mu = model.mu().clone();
            Functional::Linear(Box::new(move |d: &DVector<f64>| {
                let w = wf.eval(&(d + &mu));
                let s = spatial_sign(d, &DVector::zeros(d.len()));
                &s * s.transpose() * (w * w)
            }))
        }
        EigenEstimator::Tyler => Functional::Tyler,
        EigenEstimator::Adcm(kind) => {
            if !kind.is_depth() {
                return Err(Error::invalid("adcm needs a depth weight"));
            }
            let wf = unit(kind)?;
            let mu = model.mu();
            let c = pool.iter().map(|d| wf.eval(&(d + mu)).powi(2)).sum::<f64>() / pool.len() as f64;
            Functional::Adcm { wf, c }
        }
    })
}

fn aligned_eigvec(m: &DMatrix<f64>, i: usize, reference: &DVector<f64>) -> Result<DVector<f64>> {
    let e = sym_eigen(m)?;
    let mut v: DVector<f64> = e.vectors.column(i).into_owned();
    let dot = v.dot(reference);
    if dot < 0.0 {
        v.neg_mut();
    }
    if dot.abs() < 0.5 {
        return Err(Error::Degenerate(format!(
            "eigenvector {i} cannot be aligned with the population eigenvector (|dot| = {:.3})",
            dot.abs()
        )));
    }
    Ok(v)
}

/// Prepared pools and base functionals, reusable across many `x0`.
pub struct NumericIfEngine {
    model: EllipticalModel,
    est: EigenEstimator,
    cfg: NumericIfConfig,
    full: Pool,
    batches: Vec<Pool>,
    functional_full: Functional,
    functional_batches: Vec<Functional>,
    base_full: DMatrix<f64>,
    base_batches: Vec<DMatrix<f64>>,
}

impl NumericIfEngine {
    pub fn new(est: EigenEstimator, model: &EllipticalModel, scale: f64, cfg: NumericIfConfig) -> Result<Self> {
        if !(1e-5..=1e-2).contains(&cfg.eps) {
            return Err(Error::invalid(format!("eps must lie in [1e-5, 1e-2], got {}", cfg.eps)));
        }
        if cfg.batches < 2 || cfg.mc < cfg.batches * 100 {
            return Err(Error::invalid("need at least two batches of 100 draws"));
        }
        let p = model.dim();
        let nchunks = cfg.mc.div_ceil(CHUNK);
        let sqrt = model.sigma_sqrt().clone();
        let d: Vec<DVector<f64>> = (0..nchunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut rng = rng_for(cfg.seed, c as u64);
                let len = CHUNK.min(cfg.mc - c * CHUNK);
                let fam = model.family();
                let sqrt = &sqrt;
                (0..len)
                    .map(move |_| sqrt * fam.draw_spherical(p, &mut rng))
                    .collect::<Vec<_>>()
            })
            .collect();
        let size = d.len() / cfg.batches;
        let batches: Vec<Pool> = (0..cfg.batches)
            .map(|b| Pool {
                d: d[b * size..(b + 1) * size].to_vec(),
            })
            .collect();
        let full = Pool { d };
        let functional_full = functional_for(est, model, scale, &full.d)?;
        let base_full = functional_full.base(&full.d, model)?;
        let mut functional_batches = Vec::new();
        let mut base_batches = Vec::new();
        for b in &batches {
            let f = functional_for(est, model, scale, &b.d)?;
            base_batches.push(f.base(&b.d, model)?);
            functional_batches.push(f);
        }
        Ok(Self {
            model: model.clone(),
            est,
            cfg,
            full,
            batches,
            functional_full,
            functional_batches,
            base_full,
            base_batches,
        })
    }

    pub fn estimator(&self) -> EigenEstimator {
        self.est
    }

    fn one(&self, f: &Functional, pool: &[DVector<f64>], base: &DMatrix<f64>, x0: &DVector<f64>, i: usize) -> Result<DVector<f64>> {
        let reference = self.model.eigen().vectors.column(i).into_owned();
        let d0 = x0 - self.model.mu();
        let eps = self.cfg.eps;
        let contaminated = f.pair(pool, base, &d0, eps)?;
        let g0 = aligned_eigvec(base, i, &reference)?;
        let g1 = aligned_eigvec(&contaminated, i, &reference)?;
        Ok((g1 - g0) / eps)
    }

    /// `(gamma_i(F_eps) - gamma_i(F)) / eps` on the full pool, with the
    /// spread over sub-pools as standard error.
    pub fn eval(&self, x0: &DVector<f64>, i: usize) -> Result<NumericIf> {
        check_index(&self.model, i)?;
        if x0.len() != self.model.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.model.dim(),
                found: x0.len(),
            });
        }
        let value = self.one(&self.functional_full, &self.full.d, &self.base_full, x0, i)?;
        let norms: Vec<f64> = self
            .batches
            .iter()
            .zip(&self.functional_batches)
            .zip(&self.base_batches)
            .map(|((b, f), base)| self.one(f, &b.d, base, x0, i).map(|v| v.norm()))
            .collect::<Result<_>>()?;
        let b = norms.len() as f64;
        let mean = norms.iter().sum::<f64>() / b;
        let var = norms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (b - 1.0);
        Ok(NumericIf {
            norm: value.norm(),
            value,
            std_error: (var / b).sqrt(),
        })
    }
}

/// Contamination-based influence function of the `i`-th eigenvector of the
/// affine equivariant weighted M-estimator.
pub fn if_adcm_eigenvector_numeric(
    x0: &DVector<f64>,
    i: usize,
    model: &EllipticalModel,
    spec: &WeightSpec,
    eps: f64,
    mc: usize,
    seed: u64,
) -> Result<NumericIf> {
    let cfg = NumericIfConfig {
        eps,
        mc,
        seed,
        ..Default::default()
    };
    NumericIfEngine::new(EigenEstimator::Adcm(spec.kind()), model, spec.scale(), cfg)?.eval(x0, i)
}

/// Influence function norms of several estimators over a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceGrid {
    pub grid_points: Vec<DVector<f64>>,
    pub estimators: Vec<EigenEstimator>,
    /// `if_norms[e][g]` for estimator `e` at grid point `g`.
    pub if_norms: Vec<Vec<f64>>,
}

impl InfluenceGrid {
    fn column(&self, est: EigenEstimator) -> Option<&Vec<f64>> {
        self.estimators.iter().position(|e| *e == est).map(|k| &self.if_norms[k])
    }

    /// Index of the largest norm; near-ties (relative 1e-12) go to the point
    /// closest to the model center.
    pub fn argmax(&self, est: EigenEstimator, center: &DVector<f64>) -> Option<usize> {
        let norms = self.column(est)?;
        let top = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-12 * top.abs();
        (0..norms.len())
            .filter(|&g| norms[g] >= top - tol)
            .min_by(|&a, &b| {
                let ra = (&self.grid_points[a] - center).norm();
                let rb = (&self.grid_points[b] - center).norm();
                ra.total_cmp(&rb)
            })
    }

    pub fn norms(&self, est: EigenEstimator) -> Option<&[f64]> {
        self.column(est).map(|v| v.as_slice())
    }
}

/// Square 2-D grid with `steps` points per axis on `[lo, hi]^2`.
pub fn cartesian_grid(lo: f64, hi: f64, steps: usize) -> Vec<DVector<f64>> {
    let h = if steps > 1 { (hi - lo) / (steps - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(steps * steps);
    for a in 0..steps {
        for b in 0..steps {
            out.push(DVector::from_vec(vec![lo + a as f64 * h, lo + b as f64 * h]));
        }
    }
    out
}

/// Points `r (cos t, sin t)` for every radius and `angles` equally spaced
/// directions.
pub fn polar_grid(radii: &[f64], angles: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(radii.len() * angles);
    for &r in radii {
        for k in 0..angles {
            let t = 2.0 * std::f64::consts::PI * k as f64 / angles as f64;
            out.push(DVector::from_vec(vec![r * t.cos(), r * t.sin()]));
        }
    }
    out
}

/// Evaluates eigenvector influence norms on a grid. Exact formulas are used
/// where available; ADCM uses the contamination engine.
pub fn influence_grid(
    model: &EllipticalModel,
    estimators: &[EigenEstimator],
    grid: &[DVector<f64>],
    i: usize,
    mc: usize,
    seed: u64,
) -> Result<InfluenceGrid> {
    check_index(model, i)?;
    let mut if_norms = Vec::with_capacity(estimators.len());
    for &est in estimators {
        let norms: Vec<f64> = match est {
            EigenEstimator::SampleCov => grid
                .iter()
                .map(|x| if_sample_cov_eigenvector(x, i, model).map(|v| v.norm()))
                .collect::<Result<_>>()?,
            EigenEstimator::Tyler => grid
                .iter()
                .map(|x| if_tyler_eigenvector(x, i, model).map(|v| v.norm()))
                .collect::<Result<_>>()?,
            EigenEstimator::Scm | EigenEstimator::Wscm(_) => {
                check_distinct(model.eigen().values.as_slice(), "covariance eigenvalues")?;
                let spec = match est {
                    EigenEstimator::Wscm(k) => WeightSpec::for_model(k, model),
                    _ => WeightSpec::unit(model.dim()),
                };
                let lt: Vec<f64> = wscm_eigenvalues(model, &spec, mc, seed)?.iter().map(|e| e.value).collect();
                check_distinct(&lt, "weighted sign covariance eigenvalues")?;
                let wf = population_weights(model, &spec)?;
                grid.iter()
                    .map(|x0| {
                        let w = wf.eval(x0);
                        let s = model.eigen().vectors.transpose() * spatial_sign(x0, model.mu());
                        combine(model, i, |k| w * w * s[k] * s[i] / (lt[i] - lt[k])).norm()
                    })
                    .collect()
            }
            EigenEstimator::Adcm(_) => {
                let cfg = NumericIfConfig {
                    mc,
                    seed,
                    eps: 1e-3,
                    batches: 2,
                };
                let engine = NumericIfEngine::new(est, model, 1.0, cfg)?;
                let reference = model.eigen().vectors.column(i).into_owned();
                grid.iter()
                    .map(|x0| {
                        let d0 = x0 - model.mu();
                        let c = engine.functional_full.pair(&engine.full.d, &engine.base_full, &d0, cfg.eps)?;
                        let g0 = aligned_eigvec(&engine.base_full, i, &reference)?;
                        let g1 = aligned_eigvec(&c, i, &reference)?;
                        Ok(((g1 - g0) / cfg.eps).norm())
                    })
                    .collect::<Result<_>>()?
            }
        };
        if_norms.push(norms);
    }
    Ok(InfluenceGrid {
        grid_points: grid.to_vec(),
        estimators: estimators.to_vec(),
        if_norms,
    })
}

/// Limiting covariance structure of weighted sign covariance eigenvectors
/// and eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticEigenReport {
    /// `evec_var_blocks[i][j]`: limiting `Cov(sqrt(n) g_i, sqrt(n) g_j)`.
    pub evec_var_blocks: Vec<Vec<DMatrix<f64>>>,
    pub eval_cov: DMatrix<f64>,
    /// Eigenvalues of the population weighted sign covariance matrix.
    pub lambda_tilde: Vec<Estimate>,
    /// `E[W^4 S_ik^2]` for all `i, k`.
    pub fourth_moments: DMatrix<f64>,
    pub fourth_moment_errors: DMatrix<f64>,
    /// Cross moments the limit theory sets to zero, `E[W^4 S_ab S_cd]` for
    /// distinct index pairs, labelled by their indices. Only for `p <= 8`.
    pub vanishing_moments: Vec<((usize, usize, usize, usize), Estimate)>,
    pub mc_samples: usize,
}

fn vanishing_index_sets(p: usize) -> Vec<(usize, usize, usize, usize)> {
    if p > 8 {
        return Vec::new();
    }
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|a| (a + 1..p).map(move |b| (a, b))).collect();
    let mut out = Vec::new();
    for (x, &(a, b)) in pairs.iter().enumerate() {
        for &(c, d) in &pairs[x + 1..] {
            out.push((a, b, c, d));
        }
        for c in 0..p {
            out.push((a, b, c, c));
        }
    }
    out
}

pub fn eigen_asymptotic_report(model: &EllipticalModel, spec: &WeightSpec, mc: usize, seed: u64) -> Result<AsymptoticEigenReport> {
    let p = model.dim();
    let wf = population_weights(model, spec)?;
    let sl = sqrt_lambda(model);
    let vanish = vanishing_index_sets(p);
    // layout: lambda_tilde (p) | fourth moments (p*p) | vanishing
    let k = p + p * p + vanish.len();
    let sums = mc_sums(model, mc, seed, k, |z, out| {
        let y = z.component_mul(&sl);
        let q = y.norm_squared();
        if !(q > 0.0) {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let w2 = weight_at(&wf, model, z, &y).powi(2);
        let s = |a: usize, b: usize| y[a] * y[b] / q;
        for a in 0..p {
            out[a] = w2 * s(a, a);
        }
        for a in 0..p {
            for b in 0..p {
                out[p + a * p + b] = w2 * w2 * s(a, b).powi(2);
            }
        }
        for (x, &(a, b, c, d)) in vanish.iter().enumerate() {
            out[p + p * p + x] = w2 * w2 * s(a, b) * s(c, d);
        }
    });
    let mean = sums.mean();
    let se = sums.std_errors();
    let lt: Vec<f64> = mean[..p].to_vec();
    check_distinct(&lt, "weighted sign covariance eigenvalues")?;
    let m = DMatrix::from_fn(p, p, |a, b| mean[p + a * p + b]);
    let m_se = DMatrix::from_fn(p, p, |a, b| se[p + a * p + b]);
    let g = &model.eigen().vectors;
    let mut blocks = vec![vec![DMatrix::zeros(p, p); p]; p];
    for i in 0..p {
        for j in 0..p {
            if i == j {
                for kk in (0..p).filter(|&kk| kk != i) {
                    let gk = g.column(kk);
                    blocks[i][i] += &gk * gk.transpose() * (m[(i, kk)] / (lt[i] - lt[kk]).powi(2));
                }
            } else {
                // Cov(g_i, g_j) = E[g_i g_j^T] puts gamma_j on the left
                blocks[i][j] = -(g.column(j) * g.column(i).transpose()) * (m[(i, j)] / (lt[i] - lt[j]).powi(2));
            }
        }
    }
    let eval_cov = DMatrix::from_fn(p, p, |a, b| m[(a, b)] - lt[a] * lt[b]);
    Ok(AsymptoticEigenReport {
        evec_var_blocks: blocks,
        eval_cov,
        lambda_tilde: lt
            .iter()
            .zip(&se[..p])
            .map(|(&value, &std_error)| Estimate { value, std_error })
            .collect(),
        fourth_moments: m,
        fourth_moment_errors: m_se,
        vanishing_moments: vanish
            .iter()
            .enumerate()
            .map(|(x, &idx)| {
                (
                    idx,
                    Estimate {
                        value: mean[p + p * p + x],
                        std_error: se[p + p * p + x],
                    },
                )
            })
            .collect(),
        mc_samples: mc,
    })
}

/// An efficiency relative to the sample covariance, under two baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AreEstimate {
    /// Against the normal-theory variance of sample covariance eigenvectors.
    pub normal_theory: Estimate,
    /// Against the sample covariance variance at the model, which carries
    /// the factor `1 + kappa` for kurtosis `kappa`.
    pub kurtosis_adjusted: Estimate,
    pub kurtosis: f64,
}

/// `sum_{k != i} l_i l_k / (l_i - l_k)^2`.
pub fn sample_cov_evec_variance(model: &EllipticalModel, i: usize) -> Result<f64> {
    check_index(model, i)?;
    let l = &model.eigen().values;
    check_distinct(l.as_slice(), "covariance eigenvalues")?;
    Ok((0..model.dim())
        .filter(|&k| k != i)
        .map(|k| l[i] * l[k] / (l[i] - l[k]).powi(2))
        .sum())
}

/// Ratio of traces of the limiting eigenvector covariances, sample
/// covariance over weighted sign covariance.
pub fn evec_are_wscm(model: &EllipticalModel, spec: &WeightSpec, i: usize, mc: usize, seed: u64) -> Result<AreEstimate> {
    let classical = sample_cov_evec_variance(model, i)?;
    let p = model.dim();
    let wf = population_weights(model, spec)?;
    let sl = sqrt_lambda(model);
    // layout: lambda_tilde (p) | E[W^4 S_ik^2] for k (p)
    let sums = mc_sums(model, mc, seed, 2 * p, |z, out| {
        let y = z.component_mul(&sl);
        let q = y.norm_squared();
        if !(q > 0.0) {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let w2 = weight_at(&wf, model, z, &y).powi(2);
        for a in 0..p {
            out[a] = w2 * y[a] * y[a] / q;
            out[p + a] = w2 * w2 * (y[i] * y[a] / q).powi(2);
        }
    });
    let lt = sums.mean();
    check_distinct(&lt[..p], "weighted sign covariance eigenvalues")?;
    let robust = |m: &[f64]| -> f64 {
        (0..p)
            .filter(|&k| k != i)
            .map(|k| m[p + k] / (m[i] - m[k]).powi(2))
            .sum()
    };
    let kappa = model.kurtosis();
    let normal = sums.jackknife(|m| classical / robust(m));
    Ok(AreEstimate {
        normal_theory: normal,
        kurtosis_adjusted: Estimate {
            value: normal.value * (1.0 + kappa),
            std_error: normal.std_error * (1.0 + kappa),
        },
        kurtosis: kappa,
    })
}

/// Eigenvector efficiency of the affine equivariant M-estimator,
/// `[E(p u + u' |Z|)]^2 / (p^2 (p+2)^2 E u^2 E S_12^2)` with `u = W^2` as a
/// function of `|Z|` and `u'` a central difference with step `1e-5 |Z|`.
pub fn evec_are_adcm(model: &EllipticalModel, spec: &WeightSpec, mc: usize, seed: u64) -> Result<AreEstimate> {
    let p = model.dim();
    if p < 2 {
        return Err(Error::invalid("eigenvector efficiency needs p >= 2"));
    }
    if !spec.kind().is_depth() {
        return Err(Error::invalid("adcm needs a depth weight"));
    }
    let wf = population_weights(model, spec)?;
    let u = |r: f64| wf.profile(r).powi(2);
    let sums = mc_sums(model, mc, seed, 3, |z, out| {
        let r = z.norm();
        let h = 1e-5 * r;
        let du = if h > 0.0 { (u(r + h) - u(r - h)) / (2.0 * h) } else { 0.0 };
        out[0] = p as f64 * u(r) + du * r;
        out[1] = u(r).powi(2);
        out[2] = if r > 0.0 { (z[0] * z[1] / (r * r)).powi(2) } else { 0.0 };
    });
    let pf = p as f64;
    let normal = sums.jackknife(|m| m[0] * m[0] / (pf * pf * (pf + 2.0).powi(2) * m[1] * m[2]));
    let kappa = model.kurtosis();
    Ok(AreEstimate {
        normal_theory: normal,
        kurtosis_adjusted: Estimate {
            value: normal.value * (1.0 + kappa),
            std_error: normal.std_error * (1.0 + kappa),
        },
        kurtosis: kappa,
    })
}

/// Population `Psi_1W = E[W^2 S S^T]` and `Psi_2W = E[W (I - S S^T)/|X - mu|]`
/// at the center of symmetry.
pub fn location_psi(model: &EllipticalModel, spec: &WeightSpec, mc: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = model.dim();
    let wf = population_weights(model, spec)?;
    let sl = sqrt_lambda(model);
    let g = model.eigen().vectors.clone();
    let sums = mc_sums(model, mc, seed, 2 * p * p, |z, out| {
        let y = z.component_mul(&sl);
        let d = &g * &y;
        let dist = d.norm();
        let w = weight_at(&wf, model, z, &y);
        if !(dist > 0.0) {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let s = &d / dist;
        for a in 0..p {
            for b in 0..p {
                let ss = s[a] * s[b];
                out[a * p + b] = w * w * ss;
                out[p * p + a * p + b] = w * ((a == b) as u8 as f64 - ss) / dist;
            }
        }
    });
    let m = sums.mean();
    let psi1 = DMatrix::from_fn(p, p, |a, b| m[a * p + b]);
    let psi2 = DMatrix::from_fn(p, p, |a, b| m[p * p + a * p + b]);
    Ok((symmetrize(&psi1), symmetrize(&psi2)))
}

//! Monte-Carlo benchmarks: finite-sample efficiency of first-eigenvector
//! estimates and the out-of-sample error of robust versus classical SDR.
//!
//! Every replication draws from its own RNG stream, so results depend only on
//! the seed and not on thread scheduling.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::EigenEstimator;
use crate::data::DataMatrix;
use crate::depth_weights::{WeightKind, WeightSpec};
use crate::elliptical::{rng_for, EllipticalModel};
use crate::error::{Error, Result};
use crate::location::{self, weighted_spatial_median};
use crate::scatter::{self, ScatterFit};
use crate::sdr;
use crate::stats;

/// `acos |<a, b>|` for unit vectors.
pub fn prediction_angle(gamma_true: &DVector<f64>, gamma_hat: &DVector<f64>) -> Result<f64> {
    if gamma_true.len() != gamma_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: gamma_true.len(),
            found: gamma_hat.len(),
        });
    }
    for (name, v) in [("gamma_true", gamma_true), ("gamma_hat", gamma_hat)] {
        if (v.norm() - 1.0).abs() > 1e-8 {
            return Err(Error::invalid(format!("{name} is not a unit vector (norm {})", v.norm())));
        }
    }
    Ok(gamma_true.dot(gamma_hat).abs().clamp(0.0, 1.0).acos())
}

#[derive(Debug, Clone)]
pub struct FseExperiment {
    pub model: EllipticalModel,
    pub n_list: Vec<usize>,
    pub reps: usize,
    /// The sample covariance is always fitted as the baseline, listed or not.
    pub estimators: Vec<EigenEstimator>,
    pub seed: u64,
}

impl FseExperiment {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 100 {
            return Err(Error::invalid(format!("reps must be at least 100, got {}", self.reps)));
        }
        let p = self.model.dim();
        if let Some(&n) = self.n_list.iter().find(|&&n| n <= p + 1) {
            return Err(Error::invalid(format!("sample size {n} is too small for p = {p}")));
        }
        if self.n_list.is_empty() {
            return Err(Error::invalid("n_list is empty"));
        }
        let ev = &self.model.eigen().values;
        if ev.as_slice().windows(2).any(|w| w[0] - w[1] < 1e-8 * w[0]) {
            return Err(Error::invalid("the model needs distinct eigenvalues"));
        }
        for e in &self.estimators {
            if let EigenEstimator::Wscm(k) | EigenEstimator::Adcm(k) = e {
                if !k.is_depth() {
                    return Err(Error::invalid(format!("{} needs a depth weight", e.label())));
                }
            }
        }
        Ok(())
    }

    fn all_estimators(&self) -> Vec<EigenEstimator> {
        let mut out = vec![EigenEstimator::SampleCov];
        for e in &self.estimators {
            if !out.contains(e) {
                out.push(*e);
            }
        }
        out
    }
}

/// Results keyed by estimator label, then sample size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FseResult {
    pub mspa: BTreeMap<String, BTreeMap<usize, f64>>,
    pub fse: BTreeMap<String, BTreeMap<usize, f64>>,
    pub mspa_standard_errors: BTreeMap<String, BTreeMap<usize, f64>>,
    /// Delete-one jackknife standard errors of the FSE ratios.
    pub mc_standard_errors: BTreeMap<String, BTreeMap<usize, f64>>,
    /// Replications kept per sample size.
    pub kept: BTreeMap<usize, usize>,
    /// Failures per estimator label and sample size; a failure drops the
    /// whole replication.
    pub failures: BTreeMap<String, BTreeMap<usize, usize>>,
}

impl FseResult {
    pub fn fse_of(&self, est: EigenEstimator, n: usize) -> Option<(f64, f64)> {
        let l = est.label();
        Some((*self.fse.get(&l)?.get(&n)?, *self.mc_standard_errors.get(&l)?.get(&n)?))
    }
}

fn leading(fit: &ScatterFit) -> DVector<f64> {
    fit.eigvec(0)
}

fn median_with(data: &DataMatrix, spec: &WeightSpec) -> Result<DVector<f64>> {
    match weighted_spatial_median(data, spec, location::DEFAULT_TOL, location::DEFAULT_MAX_ITER) {
        Ok(f) => Ok(f.q_hat),
        Err(Error::NoConvergence { best: Some(b), .. }) => Ok(DVector::from_vec(b)),
        Err(e) => Err(e),
    }
}

/// Fits every estimator on one sample; an error names the first estimator
/// that failed.
fn fit_replication(data: &DataMatrix, ests: &[EigenEstimator]) -> std::result::Result<Vec<DVector<f64>>, usize> {
    let p = data.ncols();
    let mut pilots: BTreeMap<&'static str, (WeightSpec, DVector<f64>)> = BTreeMap::new();
    let mut unit_center: Option<DVector<f64>> = None;
    let mut out = Vec::with_capacity(ests.len());
    for (k, est) in ests.iter().enumerate() {
        let fit = (|| -> Result<DVector<f64>> {
            match *est {
                EigenEstimator::SampleCov => Ok(leading(&scatter::sample_covariance(data)?)),
                EigenEstimator::Scm | EigenEstimator::Tyler => {
                    if unit_center.is_none() {
                        unit_center = Some(median_with(data, &WeightSpec::unit(p))?);
                    }
                    let mu = unit_center.as_ref().expect("set above");
                    if *est == EigenEstimator::Scm {
                        Ok(leading(&scatter::scm(data, mu)?))
                    } else {
                        Ok(leading(&scatter::tyler(data, mu, scatter::TYLER_TOL, scatter::TYLER_MAX_ITER)?))
                    }
                }
                EigenEstimator::Wscm(kind) | EigenEstimator::Adcm(kind) => {
                    if !pilots.contains_key(kind.label()) {
                        let spec = WeightSpec::pilot(data, kind)?;
                        let mu = median_with(data, &spec)?;
                        pilots.insert(kind.label(), (spec, mu));
                    }
                    let (spec, mu) = &pilots[kind.label()];
                    if matches!(est, EigenEstimator::Wscm(_)) {
                        Ok(leading(&scatter::wscm(data, spec, mu)?))
                    } else {
                        Ok(leading(&scatter::adcm(data, spec, mu, scatter::ADCM_TOL, scatter::ADCM_MAX_ITER)?))
                    }
                }
            }
        })();
        match fit {
            Ok(v) => out.push(v),
            Err(_) => return Err(k),
        }
    }
    Ok(out)
}

/// Delete-one jackknife standard error of `sum(a) / sum(b)`.
fn jackknife_ratio_se(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return f64::NAN;
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let loo: Vec<f64> = (0..n).map(|i| (sa - a[i]) / (sb - b[i])).collect();
    let m = stats::mean(&loo);
    let ss: f64 = loo.iter().map(|v| (v - m).powi(2)).sum();
    ((n - 1) as f64 / n as f64 * ss).sqrt()
}

pub fn run_fse(exp: &FseExperiment) -> Result<FseResult> {
    exp.validate()?;
    let ests = exp.all_estimators();
    let labels: Vec<String> = ests.iter().map(|e| e.label()).collect();
    let gamma = exp.model.eigen().vectors.column(0).into_owned();
    let mut res = FseResult {
        mspa: BTreeMap::new(),
        fse: BTreeMap::new(),
        mspa_standard_errors: BTreeMap::new(),
        mc_standard_errors: BTreeMap::new(),
        kept: BTreeMap::new(),
        failures: BTreeMap::new(),
    };
    for (ni, &n) in exp.n_list.iter().enumerate() {
        let outcomes: Vec<std::result::Result<Vec<f64>, usize>> = (0..exp.reps)
            .into_par_iter()
            .map(|rep| {
                let stream = ((ni as u64) << 32) | rep as u64;
                let mut rng = rng_for(exp.seed, stream);
                let data = DataMatrix::from_matrix_unchecked(exp.model.sample_with(n, &mut rng));
                let fits = fit_replication(&data, &ests)?;
                Ok(fits
                    .iter()
                    .map(|g| {
                        let v = g / g.norm();
                        prediction_angle(&gamma, &v).map_or(f64::NAN, |a| a * a)
                    })
                    .collect())
            })
            .collect();
        let mut sq: Vec<Vec<f64>> = vec![Vec::new(); ests.len()];
        let mut fails = vec![0usize; ests.len()];
        for o in outcomes {
            match o {
                Ok(v) if v.iter().all(|a| a.is_finite()) => {
                    for (k, a) in v.into_iter().enumerate() {
                        sq[k].push(a);
                    }
                }
                Ok(_) => fails[0] += 1,
                Err(k) => fails[k] += 1,
            }
        }
        let kept = sq[0].len();
        res.kept.insert(n, kept);
        if kept < 2 {
            return Err(Error::Degenerate(format!("only {kept} replications succeeded at n = {n}")));
        }
        for (k, label) in labels.iter().enumerate() {
            let mspa = stats::mean(&sq[k]);
            res.mspa.entry(label.clone()).or_default().insert(n, mspa);
            res.mspa_standard_errors
                .entry(label.clone())
                .or_default()
                .insert(n, stats::std_error(&sq[k]));
            res.fse.entry(label.clone()).or_default().insert(n, stats::mean(&sq[0]) / mspa);
            res.mc_standard_errors
                .entry(label.clone())
                .or_default()
                .insert(n, jackknife_ratio_se(&sq[0], &sq[k]));
            res.failures.entry(label.clone()).or_default().insert(n, fails[k]);
        }
    }
    Ok(res)
}

/// Out-of-sample squared error of robust and classical SDR for one `p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdrBenchRow {
    pub p: usize,
    pub robust_mse: f64,
    pub classical_mse: f64,
    pub robust_se: f64,
    pub classical_se: f64,
    pub kept: usize,
    pub failures: usize,
}

pub const SDR_P_CHOICES: [usize; 8] = [5, 10, 25, 50, 75, 100, 125, 150];

/// Draws `(X, Y)` with `Y ~ N(0, 1)` and
/// `X | Y ~ N((Y + Y^2 + Y^3) 1_p, 25 I_p)`.
pub fn sdr_sample<R: rand::Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> (DMatrix<f64>, DVector<f64>) {
    let y = DVector::from_iterator(n, (0..n).map(|_| -> f64 { StandardNormal.sample(rng) }));
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let m = y[i] + y[i].powi(2) + y[i].powi(3);
        for j in 0..p {
            let z: f64 = StandardNormal.sample(rng);
            x[(i, j)] = m + 5.0 * z;
        }
    }
    (x, y)
}

/// Adds 100 to the first `p / 5` coordinates of the first 10 rows.
pub fn contaminate(x: &mut DMatrix<f64>) {
    let cols = x.ncols() / 5;
    for i in 0..x.nrows().min(10) {
        for j in 0..cols {
            x[(i, j)] += 100.0;
        }
    }
}

fn mse(model: &sdr::SdrModel, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let pred = model.predict_all(x);
    pred.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
}

/// Training and test sets both have `n` rows; contamination touches only the
/// training covariates. The robust fit uses projection-depth weights with a
/// pilot standardization; both fits use `d = 1`.
pub fn run_sdr_benchmark(p_list: &[usize], n: usize, reps: usize, outliers: bool, seed: u64) -> Result<Vec<SdrBenchRow>> {
    if reps == 0 {
        return Err(Error::invalid("reps must be positive"));
    }
    if let Some(p) = p_list.iter().find(|p| !SDR_P_CHOICES.contains(p)) {
        return Err(Error::invalid(format!("p = {p} is not one of {SDR_P_CHOICES:?}")));
    }
    p_list
        .iter()
        .enumerate()
        .map(|(pi, &p)| {
            if n <= p + 1 {
                return Err(Error::invalid(format!("n = {n} is too small for p = {p}")));
            }
            let runs: Vec<Option<(f64, f64)>> = (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = rng_for(seed, ((pi as u64) << 32) | rep as u64);
                    let (mut xtr, ytr) = sdr_sample(n, p, &mut rng);
                    let (xte, yte) = sdr_sample(n, p, &mut rng);
                    if outliers {
                        contaminate(&mut xtr);
                    }
                    let train = DataMatrix::from_matrix_unchecked(xtr);
                    let robust = sdr::fit_sdr_kind(&train, &ytr, 1, WeightKind::Pd).ok()?;
                    let classical = sdr::fit_sdr_classical(&train, &ytr, 1).ok()?;
                    Some((mse(&robust, &xte, &yte), mse(&classical, &xte, &yte)))
                })
                .collect();
            let ok: Vec<(f64, f64)> = runs.iter().flatten().copied().collect();
            if ok.is_empty() {
                return Err(Error::Degenerate(format!("every SDR replication failed at p = {p}")));
            }
            let (r, c): (Vec<f64>, Vec<f64>) = ok.iter().copied().unzip();
            Ok(SdrBenchRow {
                p,
                robust_mse: stats::mean(&r),
                classical_mse: stats::mean(&c),
                robust_se: if r.len() > 1 { stats::std_error(&r) } else { f64::NAN },
                classical_se: if c.len() > 1 { stats::std_error(&c) } else { f64::NAN },
                kept: ok.len(),
                failures: reps - ok.len(),
            })
        })
        .collect()
}

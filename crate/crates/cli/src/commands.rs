use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use wsign_core::asymptotics::{cartesian_grid, evec_are_adcm, evec_are_wscm, influence_grid, polar_grid, AreEstimate};
use wsign_core::bench::{run_fse, run_sdr_benchmark, FseExperiment, SdrBenchRow};
use wsign_core::fdata::{outlier_report, project_curves, robust_fpca_kind, CurveSet, SdDegrees};
use wsign_core::location::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use wsign_core::scatter::{
    self, recover_eigenvalues, sign_scatter, EigenvalueRecoverySpec, ScatterFit, ADCM_MAX_ITER, ADCM_TOL, TYLER_MAX_ITER,
    TYLER_TOL,
};
use wsign_core::sdr::{fit_sdr_classical, fit_sdr_kind, SdrModel};
use wsign_core::{weighted_spatial_median, DataMatrix, EllipticalModel, WeightKind, WeightSpec};

use crate::config::{self, AreConfig, AreEstimator, Baseline, FseConfig, GridConfig, InfluenceConfig};
use crate::error::{CliError, Result};
use crate::io::{fmt, numeric_headers, read_json, read_table, write_matrix, Sink};

fn load_data(path: &Path) -> Result<DataMatrix> {
    let t = read_table(path)?;
    Ok(DataMatrix::with_columns(t.values, t.headers)?)
}

/// Pilot weights of `kind` and the weighted spatial median under them.
fn robust_center(data: &DataMatrix, kind: WeightKind) -> Result<(WeightSpec, DVector<f64>)> {
    let spec = WeightSpec::pilot(data, kind)?;
    let mu = weighted_spatial_median(data, &spec, DEFAULT_TOL, DEFAULT_MAX_ITER)?.q_hat;
    Ok((spec, mu))
}

#[derive(Serialize)]
struct LocationReport<'a> {
    weight: &'a str,
    columns: &'a [String],
    q_hat: Vec<f64>,
    iterations: usize,
    final_gradient_norm: f64,
    /// `null` when the Hessian estimate is singular.
    avar: Option<Vec<Vec<f64>>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn estimate_location(input: &Path, kind: WeightKind, tol: f64, max_iter: usize, out: Option<&Path>) -> Result<()> {
    if !(tol > 0.0) {
        return Err(CliError::validation(format!("tol must be positive, got {tol}")));
    }
    let data = load_data(input)?;
    let spec = WeightSpec::pilot(&data, kind)?;
    let fit = weighted_spatial_median(&data, &spec, tol, max_iter)?;
    let mut sink = Sink::open(out)?;
    sink.json(&LocationReport {
        weight: kind.label(),
        columns: data.columns(),
        q_hat: fit.q_hat.iter().copied().collect(),
        iterations: fit.iterations,
        final_gradient_norm: fit.final_gradient_norm,
        avar: fit.avar_hat.as_ref().map(rows_of),
    })?;
    sink.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ScatterChoice {
    Wscm,
    Adcm,
    Plugin,
    Scm,
    Tyler,
    Cov,
}

fn recovery(n: usize, k: Option<usize>, seed: u64) -> EigenvalueRecoverySpec {
    match k {
        Some(k_groups) => EigenvalueRecoverySpec { k_groups, seed },
        None => EigenvalueRecoverySpec::default_for(n, seed),
    }
}

fn fit_scatter(data: &DataMatrix, est: ScatterChoice, kind: WeightKind, k: Option<usize>, seed: u64) -> Result<ScatterFit> {
    let p = data.ncols();
    let unit_center = || -> Result<DVector<f64>> {
        Ok(weighted_spatial_median(data, &WeightSpec::unit(p), DEFAULT_TOL, DEFAULT_MAX_ITER)?.q_hat)
    };
    Ok(match est {
        ScatterChoice::Cov => scatter::sample_covariance(data)?,
        ScatterChoice::Scm => scatter::scm(data, &unit_center()?)?,
        ScatterChoice::Tyler => scatter::tyler(data, &unit_center()?, TYLER_TOL, TYLER_MAX_ITER)?,
        ScatterChoice::Wscm => {
            let (spec, mu) = robust_center(data, kind)?;
            sign_scatter(data, &spec, &mu)?
        }
        ScatterChoice::Adcm => {
            if !kind.is_depth() {
                return Err(CliError::validation("adcm needs --weight hsd, mhd or pd"));
            }
            let (spec, mu) = robust_center(data, kind)?;
            scatter::adcm(data, &spec, &mu, ADCM_TOL, ADCM_MAX_ITER)?
        }
        ScatterChoice::Plugin => {
            let (spec, mu) = robust_center(data, kind)?;
            let base = sign_scatter(data, &spec, &mu)?;
            recover_eigenvalues(data, &base, &recovery(data.nrows(), k, seed))?.1
        }
    })
}

pub fn estimate_scatter(
    input: &Path,
    est: ScatterChoice,
    kind: WeightKind,
    k: Option<usize>,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let data = load_data(input)?;
    let fit = fit_scatter(&data, est, kind, k, seed)?;
    let mut sink = Sink::open(out)?;
    write_matrix(&mut sink, &fit.matrix)?;
    sink.finish()
}

/// One row per eigenpair of the repaired plug-in estimate, largest first.
pub fn eigenvalues(input: &Path, kind: WeightKind, k: Option<usize>, seed: u64, out: Option<&Path>) -> Result<()> {
    let data = load_data(input)?;
    let (spec, mu) = robust_center(&data, kind)?;
    let base = sign_scatter(&data, &spec, &mu)?;
    let (lambda, _) = recover_eigenvalues(&data, &base, &recovery(data.nrows(), k, seed))?;
    let mut sink = Sink::open(out)?;
    let mut header = vec!["index".to_string(), "eigenvalue".to_string()];
    header.extend(data.columns().iter().map(|c| format!("v_{c}")));
    sink.line(&header)?;
    for i in 0..lambda.len() {
        let mut fields = vec![i.to_string(), fmt(lambda[i])];
        fields.extend(base.eigvecs.column(i).iter().map(|v| fmt(*v)));
        sink.line(&fields)?;
    }
    sink.finish()
}

fn grid_points(g: &GridConfig, p: usize) -> Result<Vec<DVector<f64>>> {
    let pts = match g {
        GridConfig::Cartesian { lo, hi, steps } => {
            if *steps == 0 || !(lo <= hi) {
                return Err(CliError::validation("cartesian grid needs steps > 0 and lo <= hi"));
            }
            cartesian_grid(*lo, *hi, *steps)
        }
        GridConfig::Polar { radii, angles } => {
            if *angles == 0 || radii.iter().any(|r| !(*r >= 0.0)) {
                return Err(CliError::validation("polar grid needs angles > 0 and nonnegative radii"));
            }
            polar_grid(radii, *angles)
        }
        GridConfig::Points { points } => points.iter().map(|v| DVector::from_column_slice(v)).collect(),
    };
    if !matches!(g, GridConfig::Points { .. }) && p != 2 {
        return Err(CliError::validation(format!("cartesian and polar grids are 2-D; the model has p = {p}")));
    }
    if let Some(k) = pts.iter().position(|v| v.len() != p) {
        return Err(CliError::validation(format!("grid point {k} has {} coordinates, expected {p}", pts[k].len())));
    }
    if pts.is_empty() {
        return Err(CliError::validation("the grid is empty"));
    }
    Ok(pts)
}

pub fn influence(cfg_path: &Path, seed_flag: Option<u64>, out: Option<&Path>) -> Result<()> {
    let cfg: InfluenceConfig = read_json(cfg_path)?;
    let model = config::model(&cfg.model)?;
    let ests = config::estimators(&cfg.estimators)?;
    let pts = grid_points(&cfg.grid, model.dim())?;
    let seed = config::seed(seed_flag, cfg.seed);
    let g = influence_grid(&model, &ests, &pts, cfg.eigen_index, cfg.mc, seed)?;
    let mut sink = Sink::open(out)?;
    let mut header = vec!["estimator".to_string()];
    header.extend((1..=model.dim()).map(|j| format!("x0_{j}")));
    header.push("if_norm".into());
    sink.line(&header)?;
    for (e, est) in g.estimators.iter().enumerate() {
        for (x, norm) in g.grid_points.iter().zip(&g.if_norms[e]) {
            let mut fields = vec![est.label()];
            fields.extend(x.iter().map(|v| fmt(*v)));
            fields.push(fmt(*norm));
            sink.line(&fields)?;
        }
    }
    sink.finish()
}

pub fn are(cfg_path: &Path, seed_flag: Option<u64>, out: Option<&Path>) -> Result<()> {
    let cfg: AreConfig = read_json(cfg_path)?;
    let seed = config::seed(seed_flag, cfg.seed);
    if cfg.families.is_empty() || cfg.dims.is_empty() || cfg.weights.is_empty() {
        return Err(CliError::validation("families, dims and weights must be nonempty"));
    }
    if let Some(k) = cfg.weights.iter().find(|k| !k.is_depth()) {
        return Err(CliError::validation(format!("ARE needs depth weights, got {}", k.label())));
    }
    if let Some(p) = cfg.dims.iter().find(|&&p| p < 2) {
        return Err(CliError::validation(format!("dims must be at least 2, got {p}")));
    }
    let mut header = vec!["distribution".to_string()];
    let cells: Vec<(WeightKind, usize)> = cfg
        .weights
        .iter()
        .flat_map(|&k| cfg.dims.iter().map(move |&p| (k, p)))
        .collect();
    header.extend(cells.iter().map(|(k, p)| format!("{}_p{p}", k.label().to_uppercase())));
    header.extend(cells.iter().map(|(k, p)| format!("{}_p{p}_se", k.label().to_uppercase())));
    let mut lines = vec![header];
    for fam in &cfg.families {
        let family = fam.family()?;
        let mut vals = Vec::with_capacity(cells.len());
        let mut ses = Vec::with_capacity(cells.len());
        for &(kind, p) in &cells {
            let diag: Vec<f64> = (0..p).map(|i| (p - i) as f64).collect();
            let model = EllipticalModel::diagonal(family, &diag)?;
            let spec = WeightSpec::for_model(kind, &model);
            let a: AreEstimate = match cfg.estimator {
                AreEstimator::Adcm => evec_are_adcm(&model, &spec, cfg.mc, seed)?,
                AreEstimator::Wscm => evec_are_wscm(&model, &spec, cfg.eigen_index, cfg.mc, seed)?,
            };
            let e = match cfg.baseline {
                Baseline::NormalTheory => a.normal_theory,
                Baseline::KurtosisAdjusted => a.kurtosis_adjusted,
            };
            vals.push(fmt(e.value));
            ses.push(fmt(e.std_error));
        }
        let mut fields = vec![config::family_label(family)];
        fields.extend(vals);
        fields.extend(ses);
        lines.push(fields);
    }
    let mut sink = Sink::open(out)?;
    for l in &lines {
        sink.line(l)?;
    }
    sink.finish()
}

/// Columns: `n`, the FSE of each listed estimator, their standard errors,
/// then the kept replication count.
pub fn simulate_fse(cfg_path: &Path, seed_flag: Option<u64>, out: Option<&Path>) -> Result<()> {
    let cfg: FseConfig = read_json(cfg_path)?;
    let exp = FseExperiment {
        model: config::model(&cfg.model)?,
        n_list: cfg.n_list.clone(),
        reps: cfg.reps,
        estimators: config::estimators(&cfg.estimators)?,
        seed: config::seed(seed_flag, cfg.seed),
    };
    let res = run_fse(&exp)?;
    let labels: Vec<String> = exp.estimators.iter().map(|e| e.label()).collect();
    let mut header = vec!["n".to_string()];
    header.extend(labels.iter().cloned());
    header.extend(labels.iter().map(|l| format!("{l}_se")));
    header.push("kept".into());
    let mut sink = Sink::open(out)?;
    sink.line(&header)?;
    for &n in &exp.n_list {
        let mut fields = vec![n.to_string()];
        let mut ses = Vec::new();
        for &e in &exp.estimators {
            let (fse, se) = res
                .fse_of(e, n)
                .ok_or_else(|| CliError::validation(format!("no result for {} at n = {n}", e.label())))?;
            fields.push(fmt(fse));
            ses.push(fmt(se));
        }
        fields.extend(ses);
        fields.push(res.kept[&n].to_string());
        sink.line(&fields)?;
    }
    sink.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SdrSetting {
    Clean,
    Contaminated,
    Both,
}

pub fn simulate_sdr(p_list: &[usize], n: usize, reps: usize, setting: SdrSetting, seed: u64, out: Option<&Path>) -> Result<()> {
    let runs: Vec<(&str, bool)> = match setting {
        SdrSetting::Clean => vec![("clean", false)],
        SdrSetting::Contaminated => vec![("contaminated", true)],
        SdrSetting::Both => vec![("clean", false), ("contaminated", true)],
    };
    let mut results = Vec::new();
    for (name, outliers) in runs {
        let rows: Vec<SdrBenchRow> = run_sdr_benchmark(p_list, n, reps, outliers, seed)?;
        results.extend(rows.into_iter().map(|r| (name, r)));
    }
    let mut sink = Sink::open(out)?;
    sink.line(
        &["setting", "p", "robust_mse", "classical_mse", "robust_se", "classical_se", "kept", "failures"].map(String::from),
    )?;
    for (name, r) in results {
        sink.line(&[
            name.to_string(),
            r.p.to_string(),
            fmt(r.robust_mse),
            fmt(r.classical_mse),
            fmt(r.robust_se),
            fmt(r.classical_se),
            r.kept.to_string(),
            r.failures.to_string(),
        ])?;
    }
    sink.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdrMethod {
    Robust,
    Classical,
}

/// Everything `sdr predict` needs, as written by `sdr fit`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdrModelFile {
    pub method: SdrMethod,
    pub columns: Vec<String>,
    pub d: usize,
    pub gamma1_hat: Vec<Vec<f64>>,
    pub sigma2_hat: f64,
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<f64>,
}

fn matrix_from_rows(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::validation(format!("{what} must be a nonempty matrix with {cols} columns")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn sdr_fit(
    train: &Path,
    response: &str,
    d: usize,
    method: SdrMethod,
    kind: WeightKind,
    out: Option<&Path>,
) -> Result<()> {
    let t = read_table(train)?;
    let yc = t
        .column(response)
        .ok_or_else(|| CliError::validation(format!("{}: no response column {response:?}", train.display())))?;
    let xcols: Vec<usize> = (0..t.headers.len()).filter(|&j| j != yc).collect();
    if xcols.is_empty() {
        return Err(CliError::validation("no predictor columns"));
    }
    let x = t.values.select_columns(&xcols);
    let y = t.values.column(yc).into_owned();
    let names: Vec<String> = xcols.iter().map(|&j| t.headers[j].clone()).collect();
    let data = DataMatrix::with_columns(x, names.clone())?;
    let m = match method {
        SdrMethod::Robust => fit_sdr_kind(&data, &y, d, kind)?,
        SdrMethod::Classical => fit_sdr_classical(&data, &y, d)?,
    };
    let file = SdrModelFile {
        method,
        columns: names,
        d: m.d,
        gamma1_hat: rows_of(&m.gamma1_hat),
        sigma2_hat: m.sigma2_hat,
        train_x: rows_of(&m.train_x),
        train_y: m.train_y.iter().copied().collect(),
    };
    let mut sink = Sink::open(out)?;
    sink.json(&file)?;
    sink.finish()
}

/// Predictor columns are matched by name; other columns are ignored.
pub fn sdr_predict(model_path: &Path, test: &Path, out: Option<&Path>) -> Result<()> {
    let f: SdrModelFile = read_json(model_path)?;
    let p = f.columns.len();
    let model = SdrModel::new(
        matrix_from_rows(&f.gamma1_hat, f.d, "gamma1_hat")?,
        f.sigma2_hat,
        matrix_from_rows(&f.train_x, p, "train_x")?,
        DVector::from_vec(f.train_y),
    )?;
    let t = read_table(test)?;
    let idx: Vec<usize> = f
        .columns
        .iter()
        .map(|c| {
            t.column(c)
                .ok_or_else(|| CliError::validation(format!("{}: missing predictor column {c:?}", test.display())))
        })
        .collect::<Result<_>>()?;
    let x = t.values.select_columns(&idx);
    let mut sink = Sink::open(out)?;
    sink.line(&["row".to_string(), "prediction".to_string()])?;
    for (i, v) in model.predict_all(&x).into_iter().enumerate() {
        sink.line(&[i.to_string(), fmt(v)])?;
    }
    sink.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SdDf {
    Two,
    Components,
}

/// Maps increasing design points onto `[0, 1]`. Flags do not change: score
/// distances are scale free and orthogonal distances scale with their cutoff.
fn unit_interval(t: &[f64]) -> Result<DVector<f64>> {
    if t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(CliError::validation("design points in the header must be strictly increasing"));
    }
    let (lo, hi) = (t[0], t[t.len() - 1]);
    if !(hi > lo) {
        return Err(CliError::validation("need at least two distinct design points"));
    }
    let mut u = DVector::from_iterator(t.len(), t.iter().map(|v| (v - lo) / (hi - lo)));
    let last = u.len() - 1;
    u[0] = 0.0;
    u[last] = 1.0;
    Ok(u)
}

/// One row per curve (0-based) with both distances, both cutoffs and flags.
pub fn fpca_outliers(curves: &Path, q: usize, kind: WeightKind, p_basis: usize, df: SdDf, seed: u64, out: Option<&Path>) -> Result<()> {
    let t = read_table(curves)?;
    let design = unit_interval(&numeric_headers(curves, &t.headers)?)?;
    let set = CurveSet::new(design, t.values)?;
    let proj = project_curves(&set, p_basis)?;
    let fit = robust_fpca_kind(&proj, q, kind, seed)?;
    let df = match df {
        SdDf::Two => SdDegrees::Two,
        SdDf::Components => SdDegrees::Components,
    };
    let r = outlier_report(&proj, &fit, df)?;
    let mut sink = Sink::open(out)?;
    sink.line(&["curve", "od", "sd", "od_cutoff", "sd_cutoff", "od_flag", "sd_flag", "outlier"].map(String::from))?;
    for i in 0..r.od.len() {
        let (by_od, by_sd) = (r.od[i] > r.od_cutoff, r.sd[i] > r.sd_cutoff);
        sink.line(&[
            i.to_string(),
            fmt(r.od[i]),
            fmt(r.sd[i]),
            fmt(r.od_cutoff),
            fmt(r.sd_cutoff),
            u8::from(by_od).to_string(),
            u8::from(by_sd).to_string(),
            u8::from(by_od || by_sd).to_string(),
        ])?;
    }
    sink.finish()
}

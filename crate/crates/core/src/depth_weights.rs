//! Spatial signs and depth-based peripherality weights.
//!
//! Every depth kind is a function of the standardized radius
//! `r = |shape^{-1/2} (x - center)|`. Population weights use the model's
//! marginal law `F_{Z1}`. Empirical weights use the marginal law implied by
//! the sample radii under sphericity,
//!
//! ```text
//! F_hat(r) = (1/n) sum_i G_p(r / R_i)
//! ```
//!
//! where `G_p` is the CDF of one coordinate of a uniform direction in `R^p`.
//! In one dimension this is the symmetrized empirical CDF.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::elliptical::{EllipticalModel, Family};
use crate::error::{Error, Result};
use crate::linalg::pd_eigen;
use crate::location::solve_weighted_median;
use crate::scatter::tyler_shape;
use crate::stats;

/// Below this norm a difference counts as zero.
pub const SIGN_GUARD: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightKind {
    #[serde(rename = "UNIT", alias = "unit")]
    Unit,
    #[serde(rename = "HSD", alias = "hsd")]
    Hsd,
    #[serde(rename = "MHD", alias = "mhd")]
    Mhd,
    #[serde(rename = "PD", alias = "pd")]
    Pd,
    /// `W(x) = |x - center|`, which turns weighted signs back into centered
    /// observations. Only useful for checks; not a depth.
    #[serde(skip)]
    Distance,
}

impl WeightKind {
    pub const DEPTHS: [WeightKind; 3] = [WeightKind::Hsd, WeightKind::Mhd, WeightKind::Pd];

    pub fn is_depth(self) -> bool {
        matches!(self, WeightKind::Hsd | WeightKind::Mhd | WeightKind::Pd)
    }

    pub fn label(self) -> &'static str {
        match self {
            WeightKind::Unit => "unit",
            WeightKind::Hsd => "hsd",
            WeightKind::Mhd => "mhd",
            WeightKind::Pd => "pd",
            WeightKind::Distance => "distance",
        }
    }
}

impl std::str::FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unit" => Ok(WeightKind::Unit),
            "hsd" => Ok(WeightKind::Hsd),
            "mhd" => Ok(WeightKind::Mhd),
            "pd" => Ok(WeightKind::Pd),
            _ => Err(Error::invalid(format!("unknown weight kind '{s}'"))),
        }
    }
}

/// JSON form `{"kind": "PD", "scale": 1.0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    pub kind: WeightKind,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

/// A weight kind together with the standardization it is computed under.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSpec {
    kind: WeightKind,
    center: DVector<f64>,
    shape: DMatrix<f64>,
    scale: f64,
    // inverse Cholesky factor of `shape`; radii are |l_inv (x - center)|
    l_inv: DMatrix<f64>,
}

impl WeightSpec {
    pub fn new(
        kind: WeightKind,
        center: DVector<f64>,
        shape: DMatrix<f64>,
        scale: f64,
    ) -> Result<Self> {
        let p = center.len();
        if shape.nrows() != p || shape.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: shape.nrows(),
            });
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("weight scale must be positive, got {scale}")));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("weight center must be finite"));
        }
        pd_eigen(&shape)?;
        let chol = nalgebra::Cholesky::new(crate::linalg::symmetrize(&shape))
            .ok_or_else(|| Error::Degenerate("shape Cholesky factorization failed".into()))?;
        let l_inv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(p, p))
            .ok_or_else(|| Error::Degenerate("shape Cholesky factor is singular".into()))?;
        Ok(Self {
            kind,
            center,
            shape,
            scale,
            l_inv,
        })
    }

    /// Unit weights in dimension `p`.
    pub fn unit(p: usize) -> Self {
        Self::new(WeightKind::Unit, DVector::zeros(p), DMatrix::identity(p, p), 1.0)
            .expect("identity is positive definite")
    }

    /// Weights standardized by a model's own location and covariance.
    pub fn for_model(kind: WeightKind, model: &EllipticalModel) -> Self {
        Self::new(kind, model.mu().clone(), model.sigma().clone(), 1.0)
            .expect("model covariance is positive definite")
    }

    /// Robust standardization estimated from the data: coordinatewise median
    /// and Tyler shape, refined once around the weighted spatial median.
    pub fn pilot(data: &DataMatrix, kind: WeightKind) -> Result<Self> {
        let (n, p) = (data.nrows(), data.ncols());
        if n <= p {
            return Err(Error::invalid(format!(
                "pilot standardization needs n > p (n = {n}, p = {p})"
            )));
        }
        let x = data.values();
        let c0 = DVector::from_iterator(
            p,
            (0..p).map(|j| stats::median(x.column(j).as_slice())),
        );
        let s0 = consistent_tyler(x, &c0)?;
        let first = Self::new(kind, c0, s0, 1.0)?;
        if kind == WeightKind::Unit {
            return Ok(first);
        }
        let w = WeightFunction::empirical(&first, data)?.eval_all(data);
        let q1 = solve_weighted_median(x, &w, 1e-9, 500)
            .map(|s| s.point)
            .or_else(|e| match e {
                Error::NoConvergence { best: Some(b), .. } => Ok(DVector::from_vec(b)),
                e => Err(e),
            })?;
        let s1 = consistent_tyler(x, &q1)?;
        Self::new(kind, q1, s1, 1.0)
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("weight scale must be positive, got {scale}")));
        }
        self.scale = scale;
        Ok(self)
    }

    pub fn with_kind(mut self, kind: WeightKind) -> Self {
        self.kind = kind;
        self
    }

    /// The spec seen through `x -> a x + b`.
    pub fn transformed(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        Self::new(
            self.kind,
            a * &self.center + b,
            a * &self.shape * a.transpose(),
            self.scale,
        )
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Standardized radius of `x`.
    pub fn radius(&self, x: &DVector<f64>) -> f64 {
        (&self.l_inv * (x - &self.center)).norm()
    }

    pub fn radii(&self, data: &DataMatrix) -> Vec<f64> {
        let x = data.values();
        (0..x.nrows())
            .into_par_iter()
            .map(|i| self.radius(&x.row(i).transpose()))
            .collect()
    }

    fn check(&self, p: usize) -> Result<()> {
        if self.dim() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: self.dim(),
            });
        }
        Ok(())
    }
}

/// Tyler shape around `center`, scaled so the median squared radius matches
/// the chi-square median.
const PILOT_TYLER_SLACK: f64 = 1e-6;

fn consistent_tyler(x: &DMatrix<f64>, center: &DVector<f64>) -> Result<DMatrix<f64>> {
    let p = x.ncols();
    // a pilot only standardizes, so a nearly converged shape is accepted
    let s = match tyler_shape(x, center, 1e-10, 1000) {
        Ok((s, _, _)) => s,
        Err(Error::NoConvergence {
            residual,
            best: Some(b),
            ..
        }) if residual <= PILOT_TYLER_SLACK => DMatrix::from_column_slice(p, p, &b),
        Err(e) => return Err(e),
    };
    let inv = crate::linalg::sym_inverse(&s)?;
    let r2: Vec<f64> = x
        .row_iter()
        .map(|row| {
            let d = row.transpose() - center;
            d.dot(&(&inv * &d))
        })
        .collect();
    let med = stats::median(&r2);
    if !(med > 0.0) {
        return Err(Error::Degenerate(
            "more than half the observations sit at the pilot center".into(),
        ));
    }
    Ok(s * (med / stats::chi2_quantile(p as f64, 0.5)))
}

/// CDF of one coordinate of a uniformly distributed unit vector in `R^p`,
/// for `t >= 0`.
///
/// With `t = sin(phi)` the density is proportional to `cos^{p-2}(phi)`, whose
/// integral obeys `I_k = cos^{k-1} sin / k + (k-1)/k I_{k-2}`.
pub fn sphere_coordinate_cdf(p: usize, t: f64) -> f64 {
    if t >= 1.0 {
        return 1.0;
    }
    if p == 1 {
        return 0.5;
    }
    let t = t.max(0.0);
    let k = p - 2;
    let phi = t.asin();
    let c = (1.0 - t * t).sqrt();
    cos_power_integral(k, phi, t, c) / cos_power_integral(k, FRAC_PI_2, 1.0, 0.0) * 0.5 + 0.5
}

fn cos_power_integral(k: usize, phi: f64, s: f64, c: f64) -> f64 {
    let (mut acc, mut cpow, start) = if k % 2 == 0 { (phi, c, 2) } else { (s, c * c, 3) };
    // acc holds I_{j-2}; cpow holds cos^{j-1}
    let mut j = start;
    while j <= k {
        let jf = j as f64;
        acc = cpow * s / jf + (jf - 1.0) / jf * acc;
        cpow *= c * c;
        j += 2;
    }
    acc
}

/// Radial law of the standardized sample, stored as sorted radii.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMarginal {
    p: usize,
    radii: Vec<f64>,
    // (node, F_hat(node)) for fast evaluation on large samples
    nodes: Option<Vec<(f64, f64)>>,
}

const EXACT_LIMIT: usize = 4096;
const NODE_COUNT: usize = 2048;

impl EmpiricalMarginal {
    pub fn new(p: usize, mut radii: Vec<f64>) -> Self {
        radii.sort_by(f64::total_cmp);
        let mut out = Self {
            p,
            radii,
            nodes: None,
        };
        if out.radii.len() > EXACT_LIMIT {
            let n = out.radii.len();
            let mut xs: Vec<f64> = (0..=NODE_COUNT)
                .map(|k| out.radii[(k * (n - 1)) / NODE_COUNT])
                .collect();
            xs.insert(0, 0.0);
            xs.dedup();
            let nodes = xs.par_iter().map(|&r| (r, out.cdf_exact(r))).collect();
            out.nodes = Some(nodes);
        }
        out
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn cdf_exact(&self, r: f64) -> f64 {
        let n = self.radii.len() as f64;
        let r = r.max(0.0);
        // radii <= r contribute G = 1
        let below = self.radii.partition_point(|&ri| ri <= r);
        let rest: f64 = self.radii[below..]
            .iter()
            .map(|&ri| sphere_coordinate_cdf(self.p, r / ri))
            .sum();
        (below as f64 + rest) / n
    }

    pub fn cdf(&self, r: f64) -> f64 {
        let Some(nodes) = &self.nodes else {
            return self.cdf_exact(r);
        };
        let last = nodes[nodes.len() - 1];
        if r >= last.0 {
            return 1.0;
        }
        let r = r.max(0.0);
        let k = nodes.partition_point(|&(x, _)| x <= r);
        let (x0, y0) = nodes[k - 1];
        let (x1, y1) = nodes[k];
        y0 + (y1 - y0) * (r - x0) / (x1 - x0)
    }

    /// Smallest `r` with `F_hat(r) >= prob`, by bisection.
    pub fn quantile(&self, prob: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, self.radii.last().copied().unwrap_or(0.0));
        if self.cdf(lo) >= prob {
            return 0.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) >= prob {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        hi
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Law {
    Population(Family),
    Empirical(EmpiricalMarginal),
    Free,
}

/// A weight spec bound to the law it is evaluated under.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFunction {
    spec: WeightSpec,
    law: Law,
    pd_m: f64,
}

impl WeightFunction {
    /// Weights `W(x, F)` under a known model.
    pub fn population(spec: &WeightSpec, model: &EllipticalModel) -> Result<Self> {
        spec.check(model.dim())?;
        let family = model.family();
        Ok(Self {
            spec: spec.clone(),
            law: Law::Population(family),
            pd_m: family.marginal_mad(),
        })
    }

    /// Plug-in weights `W(x, F_n)` from the sample itself.
    pub fn empirical(spec: &WeightSpec, data: &DataMatrix) -> Result<Self> {
        spec.check(data.ncols())?;
        if data.nrows() == 0 {
            return Err(Error::invalid("empirical weights need at least one observation"));
        }
        if !matches!(spec.kind, WeightKind::Hsd | WeightKind::Pd) {
            return Self::free(spec);
        }
        let law = EmpiricalMarginal::new(spec.dim(), spec.radii(data));
        let pd_m = law.quantile(0.75);
        if spec.kind == WeightKind::Pd && !(pd_m > 0.0) {
            return Err(Error::Degenerate("MAD of standardized radii is zero".into()));
        }
        Ok(Self {
            spec: spec.clone(),
            law: Law::Empirical(law),
            pd_m,
        })
    }

    /// Kinds that need no reference law (UNIT, MHD, distance).
    pub fn free(spec: &WeightSpec) -> Result<Self> {
        if matches!(spec.kind, WeightKind::Hsd | WeightKind::Pd) {
            return Err(Error::invalid(format!(
                "{} weights need a model or a sample",
                spec.kind.label()
            )));
        }
        Ok(Self {
            spec: spec.clone(),
            law: Law::Free,
            pd_m: f64::NAN,
        })
    }

    pub fn spec(&self) -> &WeightSpec {
        &self.spec
    }

    pub fn kind(&self) -> WeightKind {
        self.spec.kind
    }

    /// The PD normalizer `MAD(Z1)`.
    pub fn pd_constant(&self) -> f64 {
        self.pd_m
    }

    fn marginal_cdf(&self, r: f64) -> f64 {
        match &self.law {
            Law::Population(f) => f.marginal_cdf(r),
            Law::Empirical(e) => e.cdf(r),
            Law::Free => f64::NAN,
        }
    }

    /// Weight as a function of the standardized radius.
    pub fn profile(&self, r: f64) -> f64 {
        let raw = match self.spec.kind {
            WeightKind::Unit => 1.0,
            WeightKind::Mhd => r * r / (1.0 + r * r),
            WeightKind::Pd => r / (1.0 + r / self.pd_m),
            WeightKind::Hsd => self.marginal_cdf(r),
            // only meaningful on the identity standardization
            WeightKind::Distance => r,
        };
        self.spec.scale * raw
    }

    /// Central difference of `profile` with step `1e-5 r`.
    pub fn profile_derivative(&self, r: f64) -> f64 {
        let h = 1e-5 * r.max(1e-8);
        (self.profile(r + h) - self.profile((r - h).max(0.0))) / (r + h - (r - h).max(0.0))
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match self.spec.kind {
            WeightKind::Distance => self.spec.scale * (x - &self.spec.center).norm(),
            _ => self.profile(self.spec.radius(x)),
        }
    }

    pub fn eval_all(&self, data: &DataMatrix) -> Vec<f64> {
        let x = data.values();
        (0..x.nrows())
            .into_par_iter()
            .map(|i| self.eval(&x.row(i).transpose()))
            .collect()
    }

    /// Supremum of the weight (infinite for the distance kind).
    pub fn upper_bound(&self) -> f64 {
        match self.spec.kind {
            WeightKind::Unit | WeightKind::Mhd | WeightKind::Hsd => self.spec.scale,
            WeightKind::Pd => self.spec.scale * self.pd_m,
            WeightKind::Distance => f64::INFINITY,
        }
    }
}

/// `(x - mu)/|x - mu|`, or zero when `x` coincides with `mu`.
pub fn spatial_sign(x: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
    let d = x - mu;
    // rescale first: squaring tiny offsets underflows
    let m = d.amax();
    if !(m > 0.0) {
        return DVector::zeros(d.len());
    }
    let u = &d / m;
    if m * u.norm() < SIGN_GUARD {
        DVector::zeros(d.len())
    } else {
        &u / u.norm()
    }
}

/// Single weight evaluation. HSD and PD need `model`; without one they are
/// only available through [`WeightFunction::empirical`].
pub fn weight(spec: &WeightSpec, x: &DVector<f64>, model: Option<&EllipticalModel>) -> Result<f64> {
    spec.check(x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("point must be finite"));
    }
    let f = match model {
        Some(m) => WeightFunction::population(spec, m)?,
        None => WeightFunction::free(spec)?,
    };
    Ok(f.eval(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSign {
    pub sign: DVector<f64>,
    pub weight: f64,
    pub product: DVector<f64>,
}

/// Rowwise `W(X_i, F_n) S(X_i; mu)`.
pub fn weighted_signs(data: &DataMatrix, spec: &WeightSpec, mu: &DVector<f64>) -> Result<Vec<WeightedSign>> {
    data.check_dim(mu)?;
    let w = WeightFunction::empirical(spec, data)?.eval_all(data);
    Ok(data
        .rows()
        .zip(w)
        .map(|(x, weight)| {
            let sign = spatial_sign(&x, mu);
            let product = &sign * weight;
            WeightedSign {
                sign,
                weight,
                product,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn signs() {
        assert_eq!(spatial_sign(&v(&[3.0, 4.0]), &v(&[0.0, 0.0])), v(&[0.6, 0.8]));
        assert_eq!(spatial_sign(&v(&[5.0, 5.0]), &v(&[5.0, 5.0])), v(&[0.0, 0.0]));
    }

    #[test]
    fn sphere_cdf_closed_forms() {
        for &t in &[0.0, 0.1, 0.5, 0.9, 0.999] {
            let p2 = 0.5 + f64::asin(t) / std::f64::consts::PI;
            assert!((sphere_coordinate_cdf(2, t) - p2).abs() < 1e-14);
            assert!((sphere_coordinate_cdf(3, t) - (1.0 + t) / 2.0).abs() < 1e-14);
            // p = 4: density (2/pi) sqrt(1 - t^2)
            let p4 = 0.5 + (t * (1.0 - t * t).sqrt() + t.asin()) / std::f64::consts::PI;
            assert!((sphere_coordinate_cdf(4, t) - p4).abs() < 1e-14);
        }
        assert_eq!(sphere_coordinate_cdf(1, 0.3), 0.5);
        assert_eq!(sphere_coordinate_cdf(7, 1.0), 1.0);
    }

    #[test]
    fn sphere_cdf_matches_incomplete_beta() {
        use statrs::function::beta::beta_reg;
        for p in [5usize, 10, 37, 150] {
            for &t in &[0.05, 0.2, 0.6] {
                let want = 0.5 + 0.5 * beta_reg(0.5, (p as f64 - 1.0) / 2.0, t * t);
                assert!((sphere_coordinate_cdf(p, t) - want).abs() < 1e-10, "p={p} t={t}");
            }
        }
    }

    #[test]
    fn scalar_weights() {
        let spec = WeightSpec::unit(2).with_kind(WeightKind::Mhd);
        assert_eq!(weight(&spec, &v(&[0.0, 0.0]), None).unwrap(), 0.0);
        assert_eq!(weight(&spec, &v(&[1.0, 0.0]), None).unwrap(), 0.5);
        let model = EllipticalModel::diagonal(Family::Normal, &[1.0, 1.0]).unwrap();
        let hsd = WeightSpec::for_model(WeightKind::Hsd, &model);
        assert_eq!(weight(&hsd, &v(&[0.0, 0.0]), Some(&model)).unwrap(), 0.5);
        assert!(weight(&hsd, &v(&[0.0, 0.0]), None).is_err());
        let pd = WeightSpec::for_model(WeightKind::Pd, &model);
        let f = WeightFunction::population(&pd, &model).unwrap();
        assert!((f.pd_constant() - 0.6744897501960817).abs() < 1e-9);
    }

    #[test]
    fn rejects_indefinite_shape() {
        let shape = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let err = WeightSpec::new(WeightKind::Mhd, v(&[0.0, 0.0]), shape, 1.0).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { index: 1, .. }));
    }

    #[test]
    fn large_sample_interpolation_is_close() {
        let radii: Vec<f64> = (1..=6000).map(|i| (i as f64 / 6000.0) * 3.0).collect();
        let law = EmpiricalMarginal::new(3, radii);
        for &r in &[0.01, 0.4, 1.3, 2.2, 2.999] {
            let err = (law.cdf(r) - law.cdf_exact(r)).abs();
            assert!(err < 1e-5, "r={r} err={err:e}");
        }
    }
}

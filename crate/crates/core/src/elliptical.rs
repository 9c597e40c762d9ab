//! Elliptical generative models.
//!
//! A model draws `X = mu + Sigma^{1/2} Z` where `Z` is spherical with identity
//! covariance. The square root used for sampling is the symmetric one,
//! `G L^{1/2} G^T`. Standardization in the other direction uses
//! `L^{-1/2} G^T (x - mu)`, which lands in the eigenbasis of `Sigma`; both
//! conventions differ only by the rotation `G`, to which every estimator here
//! is equivariant.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, pd_eigen, SymEigen};

/// Seeded generator for replication `stream` of an experiment.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Normal,
    StudentT(u32),
}

impl Family {
    fn validate(self) -> Result<()> {
        match self {
            Family::StudentT(dof) if dof < 3 => Err(Error::invalid(format!(
                "Student-t degrees of freedom must be at least 3, got {dof}"
            ))),
            _ => Ok(()),
        }
    }

    /// Kurtosis parameter `E R^4 / (p (p + 2)) - 1` (infinite for t with dof <= 4).
    pub fn kurtosis(self) -> f64 {
        match self {
            Family::Normal => 0.0,
            Family::StudentT(nu) if nu > 4 => 2.0 / (nu as f64 - 4.0),
            Family::StudentT(_) => f64::INFINITY,
        }
    }

    /// CDF of one coordinate of the standardized spherical law.
    pub fn marginal_cdf(self, t: f64) -> f64 {
        match self {
            Family::Normal => Normal::new(0.0, 1.0).expect("standard normal").cdf(t),
            Family::StudentT(nu) => student(nu).cdf(t / t_scale(nu)),
        }
    }

    pub fn marginal_quantile(self, prob: f64) -> f64 {
        match self {
            Family::Normal => Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(prob),
            Family::StudentT(nu) => t_scale(nu) * student(nu).inverse_cdf(prob),
        }
    }

    /// Unscaled MAD of one standardized coordinate, i.e. its 0.75 quantile.
    pub fn marginal_mad(self) -> f64 {
        self.marginal_quantile(0.75)
    }

    /// One draw of the spherical core with identity covariance.
    pub fn draw_spherical<R: Rng + ?Sized>(self, p: usize, rng: &mut R) -> DVector<f64> {
        let g = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        match self {
            Family::Normal => g,
            Family::StudentT(nu) => {
                let chi = ChiSquared::new(nu as f64).expect("positive dof").sample(rng);
                let mix = t_scale(nu) / (chi / nu as f64).sqrt();
                g * mix
            }
        }
    }
}

fn student(nu: u32) -> StudentsT {
    StudentsT::new(0.0, 1.0, nu as f64).expect("valid dof")
}

/// Multiplier that turns a standard t variate into a unit-variance one.
fn t_scale(nu: u32) -> f64 {
    ((nu as f64 - 2.0) / nu as f64).sqrt()
}

/// A spherical draw split into radius and direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalSample {
    pub z: DVector<f64>,
    pub r: f64,
    pub u: DVector<f64>,
}

impl SphericalSample {
    /// At the origin the direction is taken as the first axis.
    pub fn from_z(z: DVector<f64>) -> Self {
        let r = z.norm();
        let u = if r > 0.0 {
            &z / r
        } else {
            let mut e = DVector::zeros(z.len());
            if !z.is_empty() {
                e[0] = 1.0;
            }
            e
        };
        Self { z, r, u }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticalModel {
    family: Family,
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    eigen: SymEigen,
    sqrt: DMatrix<f64>,
}

impl EllipticalModel {
    pub fn new(family: Family, mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        family.validate()?;
        if sigma.nrows() != mu.len() || sigma.ncols() != mu.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                found: sigma.nrows(),
            });
        }
        if mu.is_empty() {
            return Err(Error::invalid("model dimension must be positive"));
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        if !is_symmetric(&sigma, 1e-12) {
            return Err(Error::invalid("sigma is not symmetric"));
        }
        let eigen = pd_eigen(&sigma)?;
        let sqrt = eigen.map(f64::sqrt);
        Ok(Self {
            family,
            mu,
            sigma,
            eigen,
            sqrt,
        })
    }

    /// Centered at zero with diagonal covariance.
    pub fn diagonal(family: Family, diag: &[f64]) -> Result<Self> {
        let p = diag.len();
        Self::new(
            family,
            DVector::zeros(p),
            DMatrix::from_diagonal(&DVector::from_row_slice(diag)),
        )
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Eigenvalues (descending) and eigenvectors of sigma.
    pub fn eigen(&self) -> &SymEigen {
        &self.eigen
    }

    pub fn sigma_sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    pub fn kurtosis(&self) -> f64 {
        self.family.kurtosis()
    }

    /// F_{Z1}(r): the standardized marginal CDF, meant for r >= 0.
    pub fn radial_cdf(&self, r: f64) -> f64 {
        self.family.marginal_cdf(r)
    }

    /// Eigenbasis coordinates `L^{-1/2} G^T (x - mu)`.
    pub fn standardize(&self, x: &DVector<f64>) -> DVector<f64> {
        let c = self.eigen.vectors.transpose() * (x - &self.mu);
        c.component_div(&self.eigen.values.map(f64::sqrt))
    }

    /// Maps eigenbasis coordinates back: `mu + G L^{1/2} z`.
    pub fn from_standard(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.mu + &self.eigen.vectors * z.component_mul(&self.eigen.values.map(f64::sqrt))
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = self.family.draw_spherical(self.dim(), rng);
        &self.mu + &self.sqrt * z
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let p = self.dim();
        let mut out = DMatrix::zeros(n, p);
        for i in 0..n {
            let x = self.draw(rng);
            out.set_row(i, &x.transpose());
        }
        out
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<DataMatrix> {
        if n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        let mut rng = rng_for(seed, 0);
        DataMatrix::new(self.sample_with(n, &mut rng))
    }

    /// `n` draws of the spherical core, one per row.
    pub fn spherical_pool<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let p = self.dim();
        let mut out = DMatrix::zeros(n, p);
        for i in 0..n {
            out.set_row(i, &self.family.draw_spherical(p, rng).transpose());
        }
        out
    }
}

/// Serializable form of a model, as used in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: FamilyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof: Option<u32>,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Normal,
    StudentT,
}

impl TryFrom<&ModelConfig> for EllipticalModel {
    type Error = Error;

    fn try_from(c: &ModelConfig) -> Result<Self> {
        let family = match (c.family, c.dof) {
            (FamilyName::Normal, None) => Family::Normal,
            (FamilyName::Normal, Some(_)) => {
                return Err(Error::invalid("dof is only valid for student_t"))
            }
            (FamilyName::StudentT, Some(d)) => Family::StudentT(d),
            (FamilyName::StudentT, None) => return Err(Error::invalid("student_t requires dof")),
        };
        let p = c.mu.len();
        if c.sigma.len() != p || c.sigma.iter().any(|r| r.len() != p) {
            return Err(Error::invalid(format!("sigma must be {p} x {p}")));
        }
        let sigma = DMatrix::from_fn(p, p, |i, j| c.sigma[i][j]);
        EllipticalModel::new(family, DVector::from_vec(c.mu.clone()), sigma)
    }
}

impl From<&EllipticalModel> for ModelConfig {
    fn from(m: &EllipticalModel) -> Self {
        let (family, dof) = match m.family {
            Family::Normal => (FamilyName::Normal, None),
            Family::StudentT(d) => (FamilyName::StudentT, Some(d)),
        };
        let p = m.dim();
        ModelConfig {
            family,
            dof,
            mu: m.mu.iter().copied().collect(),
            sigma: (0..p).map(|i| (0..p).map(|j| m.sigma[(i, j)]).collect()).collect(),
        }
    }
}

//! JSON experiment configs. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use wsign_core::asymptotics::EigenEstimator;
use wsign_core::elliptical::{FamilyName, ModelConfig};
use wsign_core::{EllipticalModel, Family, WeightKind};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FseConfig {
    pub model: ModelConfig,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub estimators: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "snake_case")]
pub enum GridConfig {
    Cartesian { lo: f64, hi: f64, steps: usize },
    Polar { radii: Vec<f64>, angles: usize },
    Points { points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluenceConfig {
    pub model: ModelConfig,
    pub estimators: Vec<String>,
    pub grid: GridConfig,
    #[serde(default)]
    pub eigen_index: usize,
    #[serde(default = "default_mc")]
    pub mc: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AreEstimator {
    Adcm,
    Wscm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    NormalTheory,
    KurtosisAdjusted,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub family: FamilyName,
    #[serde(default)]
    pub dof: Option<u32>,
}

impl FamilySpec {
    pub fn family(&self) -> Result<Family> {
        match (self.family, self.dof) {
            (FamilyName::Normal, None) => Ok(Family::Normal),
            (FamilyName::StudentT, Some(d)) if d > 2 => Ok(Family::StudentT(d)),
            (FamilyName::StudentT, Some(d)) => Err(CliError::validation(format!("student_t needs dof > 2, got {d}"))),
            (FamilyName::StudentT, None) => Err(CliError::validation("student_t requires dof")),
            (FamilyName::Normal, Some(_)) => Err(CliError::validation("dof is only valid for student_t")),
        }
    }
}

/// Rows are families, columns are weight kinds crossed with dimensions.
/// Each cell uses `Sigma = diag(p, ..., 1)`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreConfig {
    pub estimator: AreEstimator,
    pub families: Vec<FamilySpec>,
    pub dims: Vec<usize>,
    pub weights: Vec<WeightKind>,
    #[serde(default = "default_are_mc")]
    pub mc: usize,
    #[serde(default)]
    pub eigen_index: usize,
    #[serde(default)]
    pub baseline: Baseline,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_mc() -> usize {
    200_000
}

fn default_are_mc() -> usize {
    1_000_000
}

pub fn model(c: &ModelConfig) -> Result<EllipticalModel> {
    Ok(EllipticalModel::try_from(c)?)
}

pub fn estimators(labels: &[String]) -> Result<Vec<EigenEstimator>> {
    if labels.is_empty() {
        return Err(CliError::validation("estimators is empty"));
    }
    labels.iter().map(|l| Ok(l.parse()?)).collect()
}

/// The `--seed` flag wins over a seed in the config; the default is 0.
pub fn seed(flag: Option<u64>, config: Option<u64>) -> u64 {
    flag.or(config).unwrap_or(0)
}

pub fn family_label(f: Family) -> String {
    match f {
        Family::Normal => "MVN".into(),
        Family::StudentT(d) => format!("t{d}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_seed_wins() {
        assert_eq!(seed(Some(3), Some(9)), 3);
        assert_eq!(seed(None, Some(9)), 9);
        assert_eq!(seed(None, None), 0);
    }

    #[test]
    fn family_specs() {
        let t: FamilySpec = serde_json::from_str(r#"{"family": "student_t", "dof": 5}"#).unwrap();
        assert_eq!(t.family().unwrap(), Family::StudentT(5));
        let bad: FamilySpec = serde_json::from_str(r#"{"family": "normal", "dof": 5}"#).unwrap();
        assert!(bad.family().is_err());
        assert!(serde_json::from_str::<FamilySpec>(r#"{"family": "normal", "df": 5}"#).is_err());
    }

    #[test]
    fn grid_variants() {
        let g: GridConfig = serde_json::from_str(r#"{"type": "polar", "radii": [1, 2], "angles": 8}"#).unwrap();
        assert!(matches!(g, GridConfig::Polar { angles: 8, .. }));
        assert!(serde_json::from_str::<GridConfig>(r#"{"type": "polar", "radii": [1], "angles": 8, "x": 1}"#).is_err());
    }
}

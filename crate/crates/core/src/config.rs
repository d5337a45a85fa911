//! Experiment configuration: a flat TOML document with typed keys.
//!
//! ```toml
//! dimension = 2
//! kappa = 2.0
//! law = "two_point"
//! seed = 1
//! lambda = [0.1]
//! estimators = ["speed"]
//! ```
//!
//! Every optional key is filled in by [`parse_config`], so serializing the
//! returned spec echoes the defaults back.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::LabError;
use crate::estimators::RunSpec;
use crate::lattice::{BiasSpec, ConductanceField, Law};
use crate::walk::LocalFunction;

pub const LAMBDA_MAX: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Syntax(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] LabError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawName {
    TwoPoint,
    Uniform,
    LogUniform,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Speed,
    SpeedRegen,
    Sigma,
    Einstein,
    SteadyTimeavg,
    SteadyRegen,
    SteadyTorus,
    LambdaF,
    Girsanov,
    Expansion,
    Probes,
    VarianceDecay,
    Maxima,
    Regen,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Speed => "speed",
            EstimatorKind::SpeedRegen => "speed_regen",
            EstimatorKind::Sigma => "sigma",
            EstimatorKind::Einstein => "einstein",
            EstimatorKind::SteadyTimeavg => "steady_timeavg",
            EstimatorKind::SteadyRegen => "steady_regen",
            EstimatorKind::SteadyTorus => "steady_torus",
            EstimatorKind::LambdaF => "lambda_f",
            EstimatorKind::Girsanov => "girsanov",
            EstimatorKind::Expansion => "expansion",
            EstimatorKind::Probes => "probes",
            EstimatorKind::VarianceDecay => "variance_decay",
            EstimatorKind::Maxima => "maxima",
            EstimatorKind::Regen => "regen",
        }
    }

    /// Estimators whose horizon is measured in units of 1/lambda^2.
    pub fn lambda_scaled(&self) -> bool {
        !matches!(
            self,
            EstimatorKind::Sigma | EstimatorKind::SteadyTorus | EstimatorKind::VarianceDecay
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionId {
    /// omega(offset, offset + e_axis)
    Bond,
    IncidentSum,
    Q0Density,
    Constant,
}

/// LocalFunction by id and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub id: FunctionId,
    #[serde(default)]
    pub axis: usize,
    #[serde(default)]
    pub offset: Vec<i64>,
    #[serde(default)]
    pub value: f64,
    /// Subtract the exact Q_0 mean.
    #[serde(default)]
    pub centered: bool,
}

impl Default for FunctionSpec {
    fn default() -> Self {
        Self {
            id: FunctionId::Bond,
            axis: 0,
            offset: Vec::new(),
            value: 0.0,
            centered: false,
        }
    }
}

impl FunctionSpec {
    pub fn build(&self, field: &ConductanceField) -> LocalFunction {
        let f = match self.id {
            FunctionId::Bond => LocalFunction::BondReadout {
                offset: self.offset.clone(),
                axis: self.axis,
            },
            FunctionId::IncidentSum => LocalFunction::IncidentSum,
            FunctionId::Q0Density => LocalFunction::q0_density(field),
            FunctionId::Constant => LocalFunction::Constant { value: self.value },
        };
        if self.centered {
            let m = f.q0_mean(field);
            f.centered(m)
        } else {
            f
        }
    }
}

fn default_name() -> String {
    "experiment".into()
}
fn default_l0() -> u32 {
    2
}
fn default_replicas() -> usize {
    1000
}
fn default_horizon_scale() -> f64 {
    10.0
}
fn default_torus_period() -> usize {
    3
}
fn default_girsanov_t() -> Vec<f64> {
    vec![1.0]
}
fn default_probe_levels() -> u32 {
    6
}
fn default_probe_times() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}
fn default_probe_powers() -> Vec<u32> {
    vec![1, 2, 4]
}
fn default_probe_c() -> f64 {
    32.0
}
fn default_moment_c() -> f64 {
    0.5
}
fn default_variance_times() -> Vec<usize> {
    vec![8, 16, 32, 64, 128]
}
fn default_inner_walks() -> usize {
    64
}
fn default_maxima_n() -> Vec<u32> {
    vec![1, 2, 4, 8]
}
fn default_slab_cross() -> usize {
    4
}
fn default_slab_levels() -> usize {
    24
}
fn default_slab_backstop() -> i64 {
    2
}
fn default_beta_fraction() -> f64 {
    0.9
}

/// Validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub dimension: usize,
    pub kappa: f64,
    pub law: LawName,
    /// two_point: P(omega = kappa); constant: the value. Unused otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law_param: Option<f64>,
    pub seed: u64,
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub ell: Vec<f64>,
    #[serde(default = "default_l0")]
    pub l0: u32,
    /// Walk length; defaults to max over positive lambda of 10/lambda^2.
    #[serde(default)]
    pub horizon: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub function: FunctionSpec,
    /// Lambda-scaled horizons are max(horizon, horizon_scale / lambda^2).
    #[serde(default = "default_horizon_scale")]
    pub horizon_scale: f64,
    /// Horizon of the lambda = 0 runs; defaults to `horizon`.
    #[serde(default)]
    pub sigma_horizon: usize,
    #[serde(default = "default_torus_period")]
    pub torus_period: usize,
    #[serde(default = "default_girsanov_t")]
    pub girsanov_t: Vec<f64>,
    #[serde(default = "default_probe_levels")]
    pub probe_levels: u32,
    #[serde(default = "default_probe_times")]
    pub probe_times: Vec<f64>,
    #[serde(default = "default_probe_powers")]
    pub probe_powers: Vec<u32>,
    /// Level-time probe threshold: P(T_n >= probe_c n / lambda^2).
    #[serde(default = "default_probe_c")]
    pub probe_c: f64,
    #[serde(default = "default_variance_times")]
    pub variance_times: Vec<usize>,
    #[serde(default = "default_inner_walks")]
    pub inner_walks: usize,
    #[serde(default = "default_maxima_n")]
    pub maxima_n: Vec<u32>,
    #[serde(default = "default_slab_cross")]
    pub slab_cross: usize,
    #[serde(default = "default_slab_levels")]
    pub slab_levels: usize,
    #[serde(default = "default_slab_backstop")]
    pub slab_backstop: i64,
    /// Exponent c of the block moments E[exp(c lambda dx)], E[exp(c lambda^2 dtau)].
    #[serde(default = "default_moment_c")]
    pub moment_c: f64,
    /// beta = beta_fraction * beta_max on exact-coin slabs.
    #[serde(default = "default_beta_fraction")]
    pub beta_fraction: f64,
}

/// Parses, fills defaults and validates.
pub fn parse_config(text: &str) -> Result<ExperimentSpec, ConfigError> {
    let mut spec: ExperimentSpec = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.message().to_string()))?;
    spec.resolve()?;
    Ok(spec)
}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl ExperimentSpec {
    fn resolve(&mut self) -> Result<(), ConfigError> {
        if self.estimators.is_empty() {
            return Err(bad("estimator list is empty"));
        }
        self.estimators.sort();
        self.estimators.dedup();
        if self.lambda.is_empty() {
            return Err(bad("lambda list is empty"));
        }
        for &l in &self.lambda {
            if !(0.0..=LAMBDA_MAX).contains(&l) {
                return Err(bad(format!("lambda {l} outside [0, {LAMBDA_MAX}]")));
            }
        }
        if self.ell.is_empty() {
            self.ell = vec![0.0; self.dimension];
            if let Some(e) = self.ell.first_mut() {
                *e = 1.0;
            }
        }
        self.law_param = match self.law {
            LawName::TwoPoint => Some(self.law_param.unwrap_or(0.5)),
            LawName::Constant => Some(self.law_param.unwrap_or(1.0)),
            _ => None,
        };
        let min_scaled = self
            .lambda
            .iter()
            .filter(|&&l| l > 0.0)
            .map(|l| (1.0 / (l * l)).ceil() as usize)
            .max();
        if self.horizon == 0 {
            self.horizon = self
                .lambda
                .iter()
                .filter(|&&l| l > 0.0)
                .map(|l| (10.0 / (l * l)).ceil() as usize)
                .max()
                .unwrap_or(10_000);
        }
        if let Some(min) = min_scaled {
            if self.estimators.iter().any(|e| e.lambda_scaled()) && self.horizon < min {
                return Err(bad(format!(
                    "horizon {} is shorter than 1/lambda^2 = {min}",
                    self.horizon
                )));
            }
        }
        if self.sigma_horizon == 0 {
            self.sigma_horizon = self.horizon;
        }
        if self.replicas == 0 {
            return Err(bad("replicas must be >= 1"));
        }
        if !(self.beta_fraction > 0.0 && self.beta_fraction <= 1.0) {
            return Err(bad("beta_fraction outside (0, 1]"));
        }
        if self.inner_walks < 2 {
            return Err(bad("inner_walks must be >= 2"));
        }
        self.field()?;
        self.bias(self.lambda[0])?;
        Ok(())
    }

    pub fn law(&self) -> Law {
        match self.law {
            LawName::TwoPoint => Law::TwoPoint {
                p: self.law_param.unwrap_or(0.5),
            },
            LawName::Uniform => Law::Uniform,
            LawName::LogUniform => Law::LogUniform,
            LawName::Constant => Law::Constant {
                value: self.law_param.unwrap_or(1.0),
            },
        }
    }

    pub fn field(&self) -> Result<ConductanceField, LabError> {
        ConductanceField::new(self.dimension, self.kappa, self.law(), self.seed)
    }

    pub fn bias(&self, lambda: f64) -> Result<BiasSpec, LabError> {
        BiasSpec::new(lambda, &self.ell, self.l0)
    }

    pub fn run_spec(&self, lambda: f64) -> Result<RunSpec, LabError> {
        RunSpec::new(self.field()?, self.bias(lambda)?, self.horizon, self.replicas, self.seed)
    }

    pub fn local_function(&self) -> Result<LocalFunction, LabError> {
        Ok(self.function.build(&self.field()?))
    }

    pub fn positive_lambdas(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lambda.iter().copied().filter(|&l| l > 0.0).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
        v
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// SHA-256 of the canonical serialization, first 8 bytes.
    pub fn config_hash(&self) -> u64 {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("spec serializes"));
        u64::from_be_bytes(digest[..8].try_into().unwrap())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
dimension = 2
kappa = 2.0
law = "two_point"
seed = 1
lambda = [0.1]
estimators = ["speed"]
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let s = parse_config(MINIMAL).unwrap();
        assert_eq!(s.l0, 2);
        assert_eq!(s.replicas, 1000);
        assert_eq!(s.ell, vec![1.0, 0.0]);
        assert_eq!(s.law_param, Some(0.5));
        assert_eq!(s.horizon, 1000);
    }

    #[test]
    fn out_of_range_lambda_is_rejected() {
        let text = MINIMAL.replace("[0.1]", "[0.9]");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("outside [0, 0.5]"), "{err}");
    }

    #[test]
    fn missing_and_unknown_keys_are_rejected() {
        let err = parse_config(&MINIMAL.replace("kappa = 2.0", "")).unwrap_err();
        assert!(err.to_string().contains("kappa"), "{err}");
        let err = parse_config(&format!("{MINIMAL}\nfoo = 3\n")).unwrap_err();
        assert!(err.to_string().contains("foo"), "{err}");
        assert!(parse_config(&MINIMAL.replace("[\"speed\"]", "[]")).is_err());
    }

    #[test]
    fn short_horizon_is_rejected_for_scaled_estimators() {
        let text = format!("{MINIMAL}horizon = 50\n");
        assert!(parse_config(&text).is_err());
        let text = text.replace("[\"speed\"]", "[\"sigma\"]");
        assert!(parse_config(&text).is_ok());
    }

    #[test]
    fn round_trip_is_hash_equal() {
        let s = parse_config(MINIMAL).unwrap();
        let again = parse_config(&s.to_toml()).unwrap();
        assert_eq!(s, again);
        assert_eq!(s.config_hash(), again.config_hash());
        assert_ne!(s.config_hash(), s.with_seed(2).config_hash());
    }
}

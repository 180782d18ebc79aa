//! Nonlinear mixed-effects estimation: SAEM, importance-sampling
//! likelihood, AIC and multi-start orchestration.

mod likelihood;
mod multistart;
pub mod optim;
mod persist;
mod problem;
mod saem;

pub use likelihood::log_likelihood_is;
pub use multistart::{
    likelihood_seed, multi_start, rank_fits, sample_initial_estimates, start_seed, Bounds, MultiStartOutcome,
    StartFailure,
};
pub use persist::{read_fit_dir, write_fit_dir};
pub use saem::saem_fit;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::ModelError;
use crate::ode::IntegratorConfig;
use crate::population::{DatasetError, PopulationDistribution};

/// Named linear-scale values, e.g. initial typical values.
pub type NamedValues = BTreeMap<String, f64>;

/// Residual standard deviation as a function of the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ErrorModel {
    /// `sd = a`; for the TIV model the observation is already log10.
    #[serde(alias = "additive_on_log10")]
    Additive { a: f64 },
    /// `sd = b·|f|`.
    Proportional { b: f64 },
}

impl ErrorModel {
    pub fn value(&self) -> f64 {
        match *self {
            ErrorModel::Additive { a } => a,
            ErrorModel::Proportional { b } => b,
        }
    }

    pub fn with_value(&self, v: f64) -> Self {
        match self {
            ErrorModel::Additive { .. } => ErrorModel::Additive { a: v },
            ErrorModel::Proportional { .. } => ErrorModel::Proportional { b: v },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ErrorModel::Additive { .. } => "additive",
            ErrorModel::Proportional { .. } => "proportional",
        }
    }

    pub fn param_name(&self) -> &'static str {
        match self {
            ErrorModel::Additive { .. } => "a",
            ErrorModel::Proportional { .. } => "b",
        }
    }

    pub fn sd(&self, f: f64) -> f64 {
        match *self {
            ErrorModel::Additive { a } => a,
            ErrorModel::Proportional { b } => b * f.abs(),
        }
    }

    /// Residual scaled so that its mean square is the error variance.
    pub fn scaled_residual(&self, y: f64, f: f64) -> f64 {
        match self {
            ErrorModel::Additive { .. } => y - f,
            ErrorModel::Proportional { .. } => (y - f) / f,
        }
    }

    /// `log N(y; f, sd(f)²)`; `-inf` when the density is degenerate.
    pub fn log_density(&self, y: f64, f: f64) -> f64 {
        let sd = self.sd(f);
        if !(sd > 0.0 && sd.is_finite() && f.is_finite()) {
            return f64::NEG_INFINITY;
        }
        crate::stats::normal_logpdf(y, f, sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatModelSpec {
    pub structural: crate::models::ModelSpec,
    /// Estimated parameters; `spread > 0` declares a random effect and
    /// gives its initial spread, `spread = 0` a fixed effect without IIV.
    pub fitted_params: Vec<PopulationDistribution>,
    #[serde(default)]
    pub fixed_constants: NamedValues,
    /// Error model with its initial parameter value.
    pub error_model: ErrorModel,
}

impl StatModelSpec {
    /// Fitted and fixed names must partition the structural parameters.
    pub fn validate(&self) -> Result<(), NlmeError> {
        let names = self.structural.param_names();
        for n in names {
            let fitted = self.fitted_params.iter().filter(|d| d.name == *n).count();
            let fixed = usize::from(self.fixed_constants.contains_key(*n));
            if fitted + fixed != 1 {
                return Err(NlmeError::Input(format!(
                    "parameter {n} must be either fitted or fixed exactly once (fitted {fitted}, fixed {fixed})"
                )));
            }
        }
        for d in &self.fitted_params {
            if !names.contains(&d.name.as_str()) {
                return Err(NlmeError::Input(format!("unknown fitted parameter {}", d.name)));
            }
            d.validate().map_err(|e| NlmeError::Input(e.to_string()))?;
        }
        for n in self.fixed_constants.keys() {
            if !names.contains(&n.as_str()) {
                return Err(NlmeError::Input(format!("unknown fixed constant {n}")));
            }
        }
        if !(self.error_model.value() > 0.0) {
            return Err(NlmeError::Input("initial error parameter must be > 0".into()));
        }
        Ok(())
    }

    pub fn n_random_effects(&self) -> usize {
        self.fitted_params.iter().filter(|d| d.has_iiv()).count()
    }

    /// Locations of every fitted parameter, spreads of the random effects
    /// and the error parameter.
    pub fn n_estimated(&self) -> usize {
        self.fitted_params.len() + self.n_random_effects() + 1
    }
}

/// Missing fields take their [`Default`] values when deserialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaemConfig {
    pub n_burnin_iters: usize,
    pub n_smoothing_iters: usize,
    pub mcmc_steps_per_iter: usize,
    pub step_size_exponent: f64,
    pub seed: u64,
    /// Importance samples per individual for the likelihood.
    pub n_is_samples: usize,
    /// Variances may shrink by at most this factor per burn-in iteration.
    pub annealing: f64,
    /// Lower bound for the error parameter.
    pub error_floor: f64,
    pub integrator: IntegratorConfig,
}

impl Default for SaemConfig {
    fn default() -> Self {
        Self {
            n_burnin_iters: 300,
            n_smoothing_iters: 200,
            mcmc_steps_per_iter: 5,
            step_size_exponent: 0.7,
            seed: 1,
            n_is_samples: 5000,
            annealing: 0.95,
            error_floor: 1e-3,
            integrator: IntegratorConfig::estimation(),
        }
    }
}

impl SaemConfig {
    pub fn validate(&self) -> Result<(), NlmeError> {
        if self.n_burnin_iters == 0 || self.n_smoothing_iters == 0 || self.mcmc_steps_per_iter == 0 {
            return Err(NlmeError::Input("iteration and MCMC counts must be >= 1".into()));
        }
        if !(self.step_size_exponent > 0.5 && self.step_size_exponent <= 1.0) {
            return Err(NlmeError::Input("step_size_exponent must lie in (0.5, 1]".into()));
        }
        if !(self.annealing > 0.0 && self.annealing <= 1.0) {
            return Err(NlmeError::Input("annealing must lie in (0, 1]".into()));
        }
        if !(self.error_floor >= 0.0) {
            return Err(NlmeError::Input("error_floor must be >= 0".into()));
        }
        if self.n_is_samples == 0 {
            return Err(NlmeError::Input("n_is_samples must be >= 1".into()));
        }
        self.integrator.validate().map_err(|e| NlmeError::Input(e.to_string()))
    }
}

/// Conditional mode of one individual, linear scale, ordered like
/// `FitResult::population`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualEstimate {
    pub id: u64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodEstimate {
    pub minus2ll: f64,
    pub mc_se: f64,
    pub n_is_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: String,
    pub population: Vec<PopulationDistribution>,
    pub error_model: ErrorModel,
    pub individual_estimates: Vec<IndividualEstimate>,
    pub likelihood: Option<LikelihoodEstimate>,
    pub n_estimated: usize,
    pub start_index: usize,
    pub seed: u64,
    /// Column names of `trace`: locations, spreads of random effects, error.
    pub trace_names: Vec<String>,
    pub trace: Vec<Vec<f64>>,
    pub numerical_rejections: u64,
}

impl FitResult {
    pub fn minus2ll(&self) -> Option<f64> {
        self.likelihood.map(|l| l.minus2ll)
    }

    pub fn aic(&self) -> Option<f64> {
        self.likelihood.map(|l| aic(l.minus2ll, self.n_estimated))
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.population.iter().position(|d| d.name == name)
    }
}

/// `minus2ll + 2·n_estimated`.
pub fn aic(minus2ll: f64, n_estimated: usize) -> f64 {
    minus2ll + 2.0 * n_estimated as f64
}

#[derive(Debug, Error)]
pub enum NlmeError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed fit file {path}: {message}")]
    Format { path: String, message: String },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;
    use crate::population::Transform;

    #[test]
    fn aic_examples() {
        assert_eq!(aic(100.0, 5), 110.0);
        assert_eq!(aic(-1392.4, 7), -1392.4 + 14.0);
        assert!(aic(10.0, 3) < aic(12.0, 3));
    }

    #[test]
    fn spec_partition_is_checked() {
        let mut spec = StatModelSpec {
            structural: ModelSpec::ExpGrowth,
            fitted_params: vec![PopulationDistribution::new("a", Transform::Log, 0.0, 0.3)],
            fixed_constants: [("b".to_string(), 0.0), ("x0".to_string(), 1.0)].into(),
            error_model: ErrorModel::Additive { a: 0.1 },
        };
        spec.validate().unwrap();
        assert_eq!(spec.n_estimated(), 3);
        spec.fixed_constants.insert("a".into(), 1.0);
        assert!(spec.validate().is_err());
        spec.fixed_constants.remove("a");
        spec.fixed_constants.remove("x0");
        assert!(spec.validate().is_err());
    }

    #[test]
    fn error_model_densities() {
        let e = ErrorModel::Proportional { b: 0.1 };
        assert_eq!(e.sd(-2.0), 0.2);
        assert_eq!(e.log_density(1.0, 0.0), f64::NEG_INFINITY);
        let a = ErrorModel::Additive { a: 1.0 };
        assert!((a.log_density(0.0, 0.0) + 0.5 * crate::stats::LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn error_model_serde_accepts_log10_alias() {
        let e: ErrorModel = serde_json::from_str(r#"{"kind":"additive_on_log10","a":0.1}"#).unwrap();
        assert_eq!(e, ErrorModel::Additive { a: 0.1 });
    }
}

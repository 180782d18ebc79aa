//! Run configuration: one JSON file per experiment.

use std::collections::BTreeMap;
use std::path::Path;

use popident::appendix::Sampler;
use popident::models::ZalypsisPkParams;
use popident::nlme::{Bounds, ErrorModel, NamedValues, SaemConfig, StatModelSpec};
use popident::population::Noise;
use popident::{DoseEvent, IntegratorConfig, ModelSpec, PopulationDistribution, StudyDesign, Transform};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Friberg,
    Tiv,
    Expgrowth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pk: Option<PkConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitting: Option<FittingConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appendix: Option<AppendixConfig>,
}

/// Zalypsis PK rates, bolus amount and the equation-correction switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PkConfig {
    pub params: ZalypsisPkParams,
    pub dose_amount: f64,
    #[serde(default)]
    pub pk_literal: bool,
}

/// A parameter law. Give either `typical` (linear scale) or `location`
/// (transformed scale); `spread = 0` fixes the parameter for everyone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamLaw {
    pub name: String,
    #[serde(default = "default_transform")]
    pub transform: Transform,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typical: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<f64>,
    #[serde(default)]
    pub spread: f64,
}

fn default_transform() -> Transform {
    Transform::Log
}

impl ParamLaw {
    pub fn to_distribution(&self) -> Result<PopulationDistribution, CliError> {
        let location = match (self.typical, self.location) {
            (Some(v), None) => self.transform.forward(v),
            (None, Some(l)) => l,
            _ => {
                return Err(CliError::config(format!(
                    "parameter {}: give exactly one of `typical` or `location`",
                    self.name
                )))
            }
        };
        let d = PopulationDistribution::new(self.name.clone(), self.transform, location, self.spread);
        d.validate().map_err(|e| CliError::config(format!("parameter {}: {e}", self.name)))?;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub horizon: f64,
    pub obs_times: Vec<f64>,
    /// Bolus times; the amount comes from `pk.dose_amount`.
    #[serde(default)]
    pub dose_times: Vec<f64>,
    pub noise: Noise,
    pub n_individuals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub seed: u64,
    pub population: Vec<ParamLaw>,
    pub design: DesignConfig,
    #[serde(default = "IntegratorConfig::generation")]
    pub integrator: IntegratorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittingConfig {
    /// Estimated parameters with their initial laws; `spread > 0` adds a random effect.
    pub fitted: Vec<ParamLaw>,
    #[serde(default)]
    pub fixed: NamedValues,
    pub error_model: ErrorModel,
    #[serde(default)]
    pub saem: SaemConfig,
    /// Linear-scale sampling interval of initial estimates.
    #[serde(default)]
    pub bounds: Bounds,
    #[serde(default = "default_n_starts")]
    pub n_starts: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_n_starts() -> usize {
    100
}

fn default_top_k() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Points per density curve in `density.csv`.
    #[serde(default = "default_density_points")]
    pub density_points: usize,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_density_points() -> usize {
    201
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { top_k: default_top_k(), alpha: default_alpha(), density_points: default_density_points() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendixConfig {
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: Vec<usize>,
    pub mu_a: f64,
    pub mu_b: f64,
    #[serde(default = "default_x0")]
    pub x0: f64,
    pub sigma2: f64,
    #[serde(default = "popident::appendix::default_times")]
    pub times: Vec<f64>,
    pub sampler: Sampler,
    #[serde(default = "default_n_points")]
    pub n_points: usize,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default = "default_top_fraction")]
    pub top_fraction: f64,
}

fn default_replicates() -> Vec<usize> {
    vec![5, 20, 50, 200]
}

fn default_x0() -> f64 {
    1.0
}

fn default_n_points() -> usize {
    800
}

fn default_n_mc() -> usize {
    10_000
}

fn default_top_fraction() -> f64 {
    0.05
}

/// Parses a config, reporting the JSON path of the offending field.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(format!("at `{path}`: {}", e.into_inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a config; also returns the raw bytes for hashing.
pub fn load_config(path: &Path) -> Result<(RunConfig, Vec<u8>), CliError> {
    let raw = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let text = std::str::from_utf8(&raw)
        .map_err(|e| CliError::config(format!("{}: not UTF-8: {e}", path.display())))?;
    let cfg = parse_config(text).map_err(|e| e.context(path.display().to_string()))?;
    Ok((cfg, raw))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        match (self.model, &self.pk) {
            (ModelKind::Friberg, None) => return Err(CliError::config("`pk` is required for the friberg model")),
            (ModelKind::Tiv | ModelKind::Expgrowth, Some(_)) => {
                return Err(CliError::config("`pk` is only valid for the friberg model"))
            }
            _ => {}
        }
        if let Some(pk) = &self.pk {
            pk.params.validate().map_err(|e| CliError::config(format!("pk.params: {e}")))?;
            if !(pk.dose_amount >= 0.0 && pk.dose_amount.is_finite()) {
                return Err(CliError::config("pk.dose_amount must be finite and >= 0"));
            }
        }
        if self.generation.is_some() {
            self.population()?;
            self.design()?;
        }
        if let Some(f) = &self.fitting {
            let spec = self.stat_spec()?;
            f.saem.validate().map_err(|e| CliError::config(format!("fitting.saem: {e}")))?;
            for name in f.bounds.keys() {
                if !spec.fitted_params.iter().any(|d| &d.name == name) {
                    return Err(CliError::config(format!("fitting.bounds: {name} is not a fitted parameter")));
                }
            }
            if f.n_starts == 0 || f.top_k == 0 {
                return Err(CliError::config("fitting.n_starts and fitting.top_k must be >= 1"));
            }
        }
        if !(self.analysis.alpha > 0.0 && self.analysis.alpha < 1.0) {
            return Err(CliError::config("analysis.alpha must lie in (0, 1)"));
        }
        if self.analysis.top_k < 2 || self.analysis.density_points < 2 {
            return Err(CliError::config("analysis.top_k and analysis.density_points must be >= 2"));
        }
        if let Some(a) = &self.appendix {
            if a.replicates.is_empty() || a.replicates.contains(&0) {
                return Err(CliError::config("appendix.replicates must be a non-empty list of counts >= 1"));
            }
            if !(a.sigma2 > 0.0) || !(a.mu_a > 0.0) || !(a.mu_b > 0.0) {
                return Err(CliError::config("appendix: sigma2, mu_a and mu_b must be > 0"));
            }
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        match self.model {
            ModelKind::Friberg => {
                let pk = self.pk.as_ref().expect("validated");
                ModelSpec::Friberg { pk: pk.params, pk_literal: pk.pk_literal }
            }
            ModelKind::Tiv => ModelSpec::Tiv,
            ModelKind::Expgrowth => ModelSpec::ExpGrowth,
        }
    }

    pub fn generation(&self) -> Result<&GenerationConfig, CliError> {
        self.generation.as_ref().ok_or_else(|| CliError::config("missing `generation` section"))
    }

    pub fn fitting(&self) -> Result<&FittingConfig, CliError> {
        self.fitting.as_ref().ok_or_else(|| CliError::config("missing `fitting` section"))
    }

    pub fn appendix(&self) -> Result<&AppendixConfig, CliError> {
        self.appendix.as_ref().ok_or_else(|| CliError::config("missing `appendix` section"))
    }

    /// Generating laws, one per structural parameter, in model order.
    pub fn population(&self) -> Result<Vec<PopulationDistribution>, CliError> {
        let g = self.generation()?;
        let model = self.model_spec();
        let mut by_name = BTreeMap::new();
        for law in &g.population {
            let d = law.to_distribution()?;
            if by_name.insert(d.name.clone(), d).is_some() {
                return Err(CliError::config(format!("generation.population: {} given twice", law.name)));
            }
        }
        let mut out = Vec::new();
        for n in model.param_names() {
            out.push(by_name.remove(*n).ok_or_else(|| {
                CliError::config(format!("generation.population: missing parameter {n} of model {}", model.name()))
            })?);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(CliError::config(format!("generation.population: unknown parameter {extra}")));
        }
        Ok(out)
    }

    pub fn design(&self) -> Result<StudyDesign, CliError> {
        let g = self.generation()?;
        let d = &g.design;
        let doses = if d.dose_times.is_empty() {
            vec![]
        } else {
            let pk = self
                .pk
                .as_ref()
                .ok_or_else(|| CliError::config("generation.design.dose_times needs a `pk` section"))?;
            d.dose_times.iter().map(|&time| DoseEvent { time, amount: pk.dose_amount, target: 0 }).collect()
        };
        let design = StudyDesign {
            horizon: d.horizon,
            obs_times: d.obs_times.clone(),
            doses,
            noise: d.noise,
            n_individuals: d.n_individuals,
        };
        design.validate().map_err(|e| CliError::config(format!("generation.design: {e}")))?;
        Ok(design)
    }

    pub fn stat_spec(&self) -> Result<StatModelSpec, CliError> {
        let f = self.fitting()?;
        let fitted_params = f.fitted.iter().map(ParamLaw::to_distribution).collect::<Result<Vec<_>, _>>()?;
        let spec = StatModelSpec {
            structural: self.model_spec(),
            fitted_params,
            fixed_constants: f.fixed.clone(),
            error_model: f.error_model,
        };
        spec.validate().map_err(|e| CliError::config(format!("fitting: {e}")))?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = r#"{
        "model": "expgrowth",
        "generation": {
            "seed": 1,
            "population": [
                {"name": "a", "typical": 1.0, "spread": 0.2},
                {"name": "b", "transform": "identity", "typical": 0.0},
                {"name": "x0", "typical": 1.0}
            ],
            "design": {"horizon": 1, "obs_times": [0, 0.5, 1], "noise": {"kind": "none"}, "n_individuals": 3}
        }
    }"#;

    #[test]
    fn parses_and_orders_population() {
        let cfg = parse_config(MINI).unwrap();
        let pop = cfg.population().unwrap();
        assert_eq!(pop.iter().map(|d| d.name.as_str()).collect::<Vec<_>>(), vec!["a", "b", "x0"]);
        assert_eq!(pop[0].location, 0.0);
        assert_eq!(cfg.analysis.top_k, 10);
        assert_eq!(cfg.analysis.alpha, 0.05);
    }

    #[test]
    fn unknown_field_reports_path() {
        let bad = MINI.replace("\"n_individuals\"", "\"n_individual\"");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("generation.design"), "{err}");
        assert!(err.contains("n_individual"), "{err}");
    }

    #[test]
    fn wrong_type_reports_path() {
        let bad = MINI.replace("\"seed\": 1", "\"seed\": \"one\"");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("generation.seed"), "{err}");
    }

    #[test]
    fn missing_parameter_is_named() {
        let bad = MINI.replace(r#"{"name": "x0", "typical": 1.0}"#, r#"{"name": "z", "typical": 1.0}"#);
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("x0"), "{err}");
    }

    #[test]
    fn friberg_requires_pk() {
        let bad = MINI.replace("\"expgrowth\"", "\"friberg\"");
        assert!(parse_config(&bad).unwrap_err().to_string().contains("pk"));
    }
}

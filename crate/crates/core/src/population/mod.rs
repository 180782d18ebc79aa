//! Population laws, virtual populations and synthetic trial data.

mod dataset;

pub use dataset::{DatasetError, DatasetMeta, ObservationRow, Subject, TrialDataset};

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ModelError, ModelSpec};
use crate::ode::{DoseEvent, IntegratorConfig};
use crate::rng::{derive_seed, substream};

/// Scale on which a parameter is normally distributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Log,
    Log10,
    Identity,
}

impl Transform {
    /// Linear scale to transformed scale.
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Transform::Log => x.ln(),
            Transform::Log10 => x.log10(),
            Transform::Identity => x,
        }
    }

    /// Transformed scale to linear scale.
    pub fn inverse(self, z: f64) -> f64 {
        match self {
            Transform::Log => z.exp(),
            Transform::Log10 => 10f64.powf(z),
            Transform::Identity => z,
        }
    }

    /// `dz/dx` of the forward map, for change-of-variables densities.
    pub fn forward_derivative(self, x: f64) -> f64 {
        match self {
            Transform::Log => 1.0 / x,
            Transform::Log10 => 1.0 / (x * std::f64::consts::LN_10),
            Transform::Identity => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Transform::Log => "log",
            Transform::Log10 => "log10",
            Transform::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "log" => Some(Transform::Log),
            "log10" => Some(Transform::Log10),
            "identity" => Some(Transform::Identity),
            _ => None,
        }
    }
}

/// `z = location + ψ`, `ψ ~ N(0, spread²)` on the transformed scale; the
/// linear-scale value is the inverse transform of `z`. A zero spread means
/// the parameter is shared by every individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationDistribution {
    pub name: String,
    pub transform: Transform,
    pub location: f64,
    pub spread: f64,
}

impl PopulationDistribution {
    pub fn new(name: impl Into<String>, transform: Transform, location: f64, spread: f64) -> Self {
        Self { name: name.into(), transform, location, spread }
    }

    /// Law whose typical (median) linear-scale value is `value`.
    pub fn from_typical(name: impl Into<String>, transform: Transform, value: f64, spread: f64) -> Self {
        Self::new(name, transform, transform.forward(value), spread)
    }

    pub fn fixed(name: impl Into<String>, value: f64) -> Self {
        Self::new(name, Transform::Identity, value, 0.0)
    }

    pub fn typical_value(&self) -> f64 {
        self.transform.inverse(self.location)
    }

    pub fn has_iiv(&self) -> bool {
        self.spread > 0.0
    }

    pub fn validate(&self) -> Result<(), PopulationError> {
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(PopulationError::Invalid(format!("{}: spread must be finite and >= 0", self.name)));
        }
        if !self.location.is_finite() {
            return Err(PopulationError::Invalid(format!("{}: location must be finite", self.name)));
        }
        Ok(())
    }
}

/// Linear-scale parameter value for random effect `psi`.
pub fn individual_param(dist: &PopulationDistribution, psi: f64) -> f64 {
    dist.transform.inverse(dist.location + psi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub id: u64,
    pub params: BTreeMap<String, f64>,
    pub random_effects: BTreeMap<String, f64>,
}

impl Individual {
    /// Parameter vector in the order of `model.param_names()`.
    pub fn param_vector(&self, model: &ModelSpec) -> Result<Vec<f64>, PopulationError> {
        model
            .param_names()
            .iter()
            .map(|n| {
                self.params
                    .get(*n)
                    .copied()
                    .ok_or_else(|| PopulationError::MissingParameter { id: self.id, name: (*n).to_string() })
            })
            .collect()
    }
}

/// Observation noise added to model predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Noise {
    None,
    /// `y = f + sd·e`; the TIV observation is already on the log10 scale.
    #[serde(alias = "additive_on_log10")]
    Additive { sd: f64 },
    /// `y = f·(1 + b·e)`.
    Proportional { b: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyDesign {
    pub horizon: f64,
    pub obs_times: Vec<f64>,
    /// Dose times and amounts; the model decides the target compartment.
    #[serde(default)]
    pub doses: Vec<DoseEvent>,
    pub noise: Noise,
    pub n_individuals: usize,
}

impl StudyDesign {
    /// 15 individuals, neutrophils every 3 days from 0 to 63, doses on days
    /// 0, 21, 42 and 63, noiseless observations.
    pub fn friberg(dose_amount: f64) -> Self {
        Self {
            horizon: 65.0,
            obs_times: (0..22).map(|k| 3.0 * k as f64).collect(),
            doses: [0.0, 21.0, 42.0, 63.0]
                .iter()
                .map(|&time| DoseEvent { time, amount: dose_amount, target: 0 })
                .collect(),
            noise: Noise::None,
            n_individuals: 15,
        }
    }

    /// 15 individuals, log10 viral load on days 0, 8, 12, ..., 64 with
    /// additive noise of 0.1 log10.
    pub fn tiv() -> Self {
        let mut obs_times = vec![0.0];
        obs_times.extend((2..=16).map(|k| 4.0 * k as f64));
        Self { horizon: 65.0, obs_times, doses: vec![], noise: Noise::Additive { sd: 0.1 }, n_individuals: 15 }
    }

    pub fn validate(&self) -> Result<(), PopulationError> {
        if self.n_individuals == 0 {
            return Err(PopulationError::Invalid("n_individuals must be >= 1".into()));
        }
        if self.obs_times.iter().any(|t| !(*t >= 0.0 && *t <= self.horizon)) {
            return Err(PopulationError::Invalid("observation times must lie in [0, horizon]".into()));
        }
        if self.obs_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(PopulationError::Invalid("observation times must be strictly increasing".into()));
        }
        if self.doses.iter().any(|d| !(d.time >= 0.0 && d.time <= self.horizon && d.amount >= 0.0)) {
            return Err(PopulationError::Invalid("doses must lie in [0, horizon] with amount >= 0".into()));
        }
        match self.noise {
            Noise::Additive { sd } if !(sd >= 0.0) => Err(PopulationError::Invalid("noise sd must be >= 0".into())),
            Noise::Proportional { b } if !(b >= 0.0) => Err(PopulationError::Invalid("noise b must be >= 0".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum PopulationError {
    #[error("invalid population input: {0}")]
    Invalid(String),
    #[error("individual {id} has no value for parameter {name}")]
    MissingParameter { id: u64, name: String },
    #[error("simulation failed for individual {id}: {source}")]
    Simulation { id: u64, source: ModelError },
    #[error("individual {id} has non-positive prediction {value} at t = {time} under proportional noise")]
    NonPositivePrediction { id: u64, time: f64, value: f64 },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

const NOISE_STREAM_TAG: u64 = 0x6e6f_6973_65;

/// Draws `n` individuals with ids `1..=n`. Individual `id` uses substream
/// `id` of `seed`, drawing one standard normal per law in order.
pub fn sample_population(
    dists: &[PopulationDistribution],
    n: usize,
    seed: u64,
) -> Result<Vec<Individual>, PopulationError> {
    if n == 0 {
        return Err(PopulationError::Invalid("population size must be >= 1".into()));
    }
    for d in dists {
        d.validate()?;
    }
    Ok((1..=n as u64)
        .map(|id| {
            let mut rng = substream(seed, id);
            let mut params = BTreeMap::new();
            let mut random_effects = BTreeMap::new();
            for d in dists {
                let e: f64 = rng.sample(StandardNormal);
                let psi = d.spread * e;
                params.insert(d.name.clone(), individual_param(d, psi));
                random_effects.insert(d.name.clone(), psi);
            }
            Individual { id, params, random_effects }
        })
        .collect())
}

/// Simulates each individual under `design` and applies the design's noise.
pub fn generate_synthetic(
    model: &ModelSpec,
    individuals: &[Individual],
    design: &StudyDesign,
    seed: u64,
    cfg: &IntegratorConfig,
) -> Result<TrialDataset, PopulationError> {
    design.validate()?;
    let doses: Vec<DoseEvent> = match model.dose_target() {
        Some(target) => design.doses.iter().map(|d| DoseEvent { target, ..*d }).collect(),
        None if design.doses.is_empty() => vec![],
        None => {
            return Err(PopulationError::Invalid(format!("model {} does not accept doses", model.name())))
        }
    };
    let noise_seed = derive_seed(seed, NOISE_STREAM_TAG);
    let per_individual: Vec<Result<Vec<ObservationRow>, PopulationError>> = individuals
        .par_iter()
        .map(|ind| {
            let params = ind.param_vector(model)?;
            let pred = model
                .predict(&params, &doses, &design.obs_times, cfg)
                .map_err(|source| PopulationError::Simulation { id: ind.id, source })?;
            let mut rng = substream(noise_seed, ind.id);
            design
                .obs_times
                .iter()
                .zip(pred)
                .map(|(&time, f)| {
                    let y = match design.noise {
                        Noise::None => f,
                        Noise::Additive { sd } => {
                            let e: f64 = rng.sample(StandardNormal);
                            f + sd * e
                        }
                        Noise::Proportional { b } => {
                            if !(f > 0.0) {
                                return Err(PopulationError::NonPositivePrediction { id: ind.id, time, value: f });
                            }
                            let e: f64 = rng.sample(StandardNormal);
                            f * (1.0 + b * e)
                        }
                    };
                    Ok(ObservationRow { id: ind.id, time, y })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_individual {
        rows.extend(r?);
    }
    let dose_map = individuals.iter().map(|ind| (ind.id, doses.clone())).collect();
    let meta = DatasetMeta { seed: Some(seed), design: Some(design.clone()) };
    Ok(TrialDataset::new(rows, dose_map, meta)?)
}

//! Evaluation context shared by SAEM and the likelihood: maps transformed
//! fitted parameters to model parameters and scores individuals.

use crate::models::ModelSpec;
use crate::ode::{DoseEvent, IntegratorConfig};
use crate::population::{PopulationDistribution, Subject, TrialDataset};
use crate::stats::LN_2PI;

use super::{ErrorModel, NlmeError, StatModelSpec};

#[derive(Debug, Clone, Copy)]
enum Slot {
    Fitted(usize),
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub model: ModelSpec,
    pub subjects: Vec<Subject>,
    pub fitted: Vec<PopulationDistribution>,
    /// Positions in `fitted` of parameters with random effects.
    pub iiv: Vec<usize>,
    /// Positions in `fitted` of parameters without random effects.
    pub fixed_effects: Vec<usize>,
    pub n_obs: usize,
    slots: Vec<Slot>,
    cfg: IntegratorConfig,
}

impl Problem {
    pub fn new(data: &TrialDataset, spec: &StatModelSpec, cfg: &IntegratorConfig) -> Result<Self, NlmeError> {
        spec.validate()?;
        let mut subjects = data.subjects();
        subjects.retain(|s| !s.times.is_empty());
        if subjects.is_empty() {
            return Err(NlmeError::Input("dataset has no observations".into()));
        }
        let target = spec.structural.dose_target();
        for s in &mut subjects {
            match target {
                Some(t) => s.doses.iter_mut().for_each(|d: &mut DoseEvent| d.target = t),
                None if !s.doses.is_empty() => {
                    return Err(NlmeError::Input(format!(
                        "subject {} has doses but model {} takes none",
                        s.id,
                        spec.structural.name()
                    )))
                }
                None => {}
            }
        }
        let slots = spec
            .structural
            .param_names()
            .iter()
            .map(|n| match spec.fitted_params.iter().position(|d| d.name == *n) {
                Some(k) => Slot::Fitted(k),
                None => Slot::Fixed(spec.fixed_constants[*n]),
            })
            .collect();
        let iiv = (0..spec.fitted_params.len()).filter(|&k| spec.fitted_params[k].has_iiv()).collect();
        let fixed_effects = (0..spec.fitted_params.len()).filter(|&k| !spec.fitted_params[k].has_iiv()).collect();
        let n_obs = subjects.iter().map(|s| s.times.len()).sum();
        Ok(Self {
            model: spec.structural.clone(),
            subjects,
            fitted: spec.fitted_params.clone(),
            iiv,
            fixed_effects,
            n_obs,
            slots,
            cfg: *cfg,
        })
    }

    pub fn n_iiv(&self) -> usize {
        self.iiv.len()
    }

    /// Full transformed vector from population locations and an
    /// individual's random-effect coordinates.
    pub fn assemble(&self, locations: &[f64], z_iiv: &[f64]) -> Vec<f64> {
        let mut z = locations.to_vec();
        for (&k, &v) in self.iiv.iter().zip(z_iiv) {
            z[k] = v;
        }
        z
    }

    pub fn model_params(&self, z: &[f64]) -> Vec<f64> {
        self.slots
            .iter()
            .map(|s| match *s {
                Slot::Fitted(k) => self.fitted[k].transform.inverse(z[k]),
                Slot::Fixed(v) => v,
            })
            .collect()
    }

    /// Predictions for subject `i` at transformed fitted values `z`.
    pub fn predict(&self, i: usize, z: &[f64]) -> Option<Vec<f64>> {
        let s = &self.subjects[i];
        let params = self.model_params(z);
        if params.iter().any(|v| !v.is_finite()) {
            return None;
        }
        self.model.predict(&params, &s.doses, &s.times, &self.cfg).ok()
    }

    pub fn obs_loglik(&self, i: usize, pred: &[f64], err: &ErrorModel) -> f64 {
        self.subjects[i].y.iter().zip(pred).map(|(&y, &f)| err.log_density(y, f)).sum()
    }

    /// `Σ_j scaled_residual²` for subject `i`.
    pub fn residual_ss(&self, i: usize, pred: &[f64], err: &ErrorModel) -> f64 {
        self.subjects[i].y.iter().zip(pred).map(|(&y, &f)| err.scaled_residual(y, f).powi(2)).sum()
    }
}

/// `Σ_k log N(z_k; mu_k, omega_k²)`.
pub(crate) fn log_prior(z: &[f64], mu: &[f64], omega: &[f64]) -> f64 {
    z.iter()
        .zip(mu)
        .zip(omega)
        .map(|((&z, &m), &w)| {
            let u = (z - m) / w;
            -0.5 * LN_2PI - w.ln() - 0.5 * u * u
        })
        .sum()
}

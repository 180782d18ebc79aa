//! Structural models: right-hand sides, initial conditions and observation maps.
//!
//! Every model exposes a flat, named parameter layout so that the
//! population and estimation layers can address parameters by name.

mod expgrowth;
mod friberg;
mod pk;
mod tiv;

pub use expgrowth::{expgrowth_log_solution, expgrowth_solution, ExpGrowthParams};
pub use friberg::{friberg_initial_state, friberg_rhs, FribergParams, FribergSystem};
pub use pk::{emax_effect, zalypsis_pk_rhs, ZalypsisPkParams};
pub use tiv::{tiv_derived_inits, tiv_rhs, TivParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::{integrate, DoseEvent, IntegratorConfig, OdeError, StateVector, Trajectory};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite observation at t = {t}")]
    NonFiniteObservation { t: f64 },
    #[error(transparent)]
    Ode(#[from] OdeError),
}

pub const FRIBERG_PARAMS: &[&str] = &["N0", "EC50", "k_tr", "k_prol", "gamma", "k_circ", "Emax"];
pub const TIV_PARAMS: &[&str] = &["beta", "p", "delta", "T0", "V0", "d_T", "c"];
pub const EXPGROWTH_PARAMS: &[&str] = &["a", "b", "x0"];
pub const CONSTANT_PARAMS: &[&str] = &["theta"];

/// A structural model together with its dose semantics.
///
/// * `friberg`: neutrophils `N(t)` under Zalypsis PK; doses are boluses into plasma.
/// * `tiv`: `log10 V(t)` of the target cell limited model; no doses.
/// * `exp_growth`: `log x(t)` of two-rate exponential growth (closed form).
/// * `constant`: `f(t) = theta`, used for linear-Gaussian checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Friberg {
        pk: ZalypsisPkParams,
        #[serde(default)]
        pk_literal: bool,
    },
    Tiv,
    ExpGrowth,
    Constant,
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Friberg { .. } => "friberg",
            ModelSpec::Tiv => "tiv",
            ModelSpec::ExpGrowth => "exp_growth",
            ModelSpec::Constant => "constant",
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            ModelSpec::Friberg { .. } => FRIBERG_PARAMS,
            ModelSpec::Tiv => TIV_PARAMS,
            ModelSpec::ExpGrowth => EXPGROWTH_PARAMS,
            ModelSpec::Constant => CONSTANT_PARAMS,
        }
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names().iter().position(|n| *n == name)
    }

    /// Compartment receiving bolus doses, if the model accepts doses.
    pub fn dose_target(&self) -> Option<usize> {
        match self {
            ModelSpec::Friberg { .. } => Some(FribergSystem::PLASMA),
            _ => None,
        }
    }

    pub fn friberg_params(params: &[f64]) -> FribergParams {
        FribergParams {
            n0: params[0],
            ec50: params[1],
            k_tr: params[2],
            k_prol: params[3],
            gamma: params[4],
            k_circ: params[5],
            emax: params[6],
        }
    }

    pub fn tiv_params(params: &[f64]) -> Result<TivParams, ModelError> {
        TivParams::with_derived_inits(params[0], params[1], params[2], params[6], params[5], params[3], params[4])
    }

    /// Simulates the model for one individual. `params` follows [`Self::param_names`].
    pub fn simulate(
        &self,
        params: &[f64],
        doses: &[DoseEvent],
        obs_times: &[f64],
        cfg: &IntegratorConfig,
    ) -> Result<Trajectory, ModelError> {
        let names = self.param_names();
        if params.len() != names.len() {
            return Err(ModelError::InvalidParams(format!(
                "{} expects {} parameters, got {}",
                self.name(),
                names.len(),
                params.len()
            )));
        }
        if !doses.is_empty() && self.dose_target().is_none() {
            return Err(ModelError::InvalidParams(format!("model {} does not accept doses", self.name())));
        }
        if obs_times.is_empty() {
            return Ok(Trajectory::default());
        }
        let end = obs_times
            .iter()
            .chain(doses.iter().map(|d| &d.time))
            .fold(0.0f64, |m, t| m.max(*t));
        let span = (0.0, end);
        let traj = match self {
            ModelSpec::Friberg { pk, pk_literal } => {
                let pd = Self::friberg_params(params);
                pd.validate()?;
                pk.validate()?;
                let sys = FribergSystem { pd, pk: *pk, pk_literal: *pk_literal };
                let init = sys.initial_state()?;
                integrate(&sys, &init, span, doses, obs_times, cfg)?
            }
            ModelSpec::Tiv => {
                let p = Self::tiv_params(params)?;
                integrate(&p, &p.initial_state(), span, doses, obs_times, cfg)?
            }
            ModelSpec::ExpGrowth => {
                let p = ExpGrowthParams { a: params[0], b: params[1], x0: params[2] };
                p.validate()?;
                closed_form(obs_times, |t| expgrowth_solution(&p, t), |t| expgrowth_log_solution(&p, t))
            }
            ModelSpec::Constant => closed_form(obs_times, |_| params[0], |_| params[0]),
        };
        if let Some((t, _)) = traj.times.iter().zip(&traj.observations).find(|(_, y)| !y.is_finite()) {
            return Err(ModelError::NonFiniteObservation { t: *t });
        }
        Ok(traj)
    }

    /// Model predictions (observation scale) at `obs_times`.
    pub fn predict(
        &self,
        params: &[f64],
        doses: &[DoseEvent],
        obs_times: &[f64],
        cfg: &IntegratorConfig,
    ) -> Result<Vec<f64>, ModelError> {
        Ok(self.simulate(params, doses, obs_times, cfg)?.observations)
    }
}

fn closed_form(obs_times: &[f64], state: impl Fn(f64) -> f64, observe: impl Fn(f64) -> f64) -> Trajectory {
    Trajectory {
        times: obs_times.to_vec(),
        states: obs_times.iter().map(|&t| StateVector::new(vec![state(t)])).collect(),
        observations: obs_times.iter().map(|&t| observe(t)).collect(),
    }
}

use std::collections::BTreeMap;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{log_likelihood_is, saem_fit, FitResult, NamedValues, NlmeError, SaemConfig, StatModelSpec};
use crate::population::{PopulationDistribution, Transform, TrialDataset};
use crate::rng::{derive_seed, substream};

/// Linear-scale sampling interval `[lower, upper]` per parameter.
pub type Bounds = BTreeMap<String, (f64, f64)>;

const INIT_TAG: u64 = 0x696e_6974;
const LL_TAG: u64 = 0x6c6c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartFailure {
    pub start_index: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct MultiStartOutcome {
    /// Completed fits, ascending AIC, ties by start index.
    pub fits: Vec<FitResult>,
    pub failures: Vec<StartFailure>,
}

/// `n` initial estimates; draw `k` uses substream `k` of `seed`. Parameters
/// on a log scale are drawn log-uniformly, others uniformly. Fitted
/// parameters without bounds keep the spec's value.
pub fn sample_initial_estimates(
    params: &[PopulationDistribution],
    bounds: &Bounds,
    n: usize,
    seed: u64,
) -> Result<Vec<NamedValues>, NlmeError> {
    for (name, &(lo, hi)) in bounds {
        let p = params
            .iter()
            .find(|p| &p.name == name)
            .ok_or_else(|| NlmeError::Input(format!("bounds given for unknown parameter {name}")))?;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(NlmeError::Input(format!("{name}: invalid interval [{lo}, {hi}]")));
        }
        if p.transform != Transform::Identity && lo <= 0.0 {
            return Err(NlmeError::Input(format!("{name}: log-scale interval must be positive, got [{lo}, {hi}]")));
        }
    }
    Ok((0..n as u64)
        .map(|k| {
            let mut rng = substream(seed, k);
            params
                .iter()
                .filter_map(|p| {
                    let &(lo, hi) = bounds.get(&p.name)?;
                    let u: f64 = rng.random();
                    let v = if lo == hi {
                        lo
                    } else if p.transform == Transform::Identity {
                        lo + u * (hi - lo)
                    } else {
                        (lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(lo, hi)
                    };
                    Some((p.name.clone(), v))
                })
                .collect()
        })
        .collect())
}

/// Seed of start `k` under a multi-start seed.
pub fn start_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, k as u64)
}

/// Seed of the likelihood evaluation of a fit with SAEM seed `fit_seed`.
pub fn likelihood_seed(fit_seed: u64) -> u64 {
    derive_seed(fit_seed, LL_TAG)
}

/// Ascending AIC, ties broken by start index.
pub fn rank_fits(fits: &mut [FitResult]) {
    fits.sort_by(|a, b| {
        let (x, y) = (a.aic().unwrap_or(f64::INFINITY), b.aic().unwrap_or(f64::INFINITY));
        x.total_cmp(&y).then(a.start_index.cmp(&b.start_index))
    });
}

/// Fits from `n_starts` random initial estimates in parallel, scores each
/// by importance sampling and ranks by AIC.
pub fn multi_start(
    data: &TrialDataset,
    spec: &StatModelSpec,
    bounds: &Bounds,
    n_starts: usize,
    cfg: &SaemConfig,
) -> Result<MultiStartOutcome, NlmeError> {
    if n_starts == 0 {
        return Err(NlmeError::Input("n_starts must be >= 1".into()));
    }
    cfg.validate()?;
    let inits = sample_initial_estimates(&spec.fitted_params, bounds, n_starts, derive_seed(cfg.seed, INIT_TAG))?;
    let results: Vec<Result<FitResult, NlmeError>> = inits
        .par_iter()
        .enumerate()
        .map(|(k, init)| {
            let run_cfg = SaemConfig { seed: start_seed(cfg.seed, k), ..cfg.clone() };
            let mut fit = saem_fit(data, spec, init, &run_cfg)?;
            fit.start_index = k;
            let ll = log_likelihood_is(
                &fit,
                data,
                spec,
                cfg.n_is_samples,
                likelihood_seed(run_cfg.seed),
                &cfg.integrator,
            )?;
            fit.likelihood = Some(ll);
            Ok(fit)
        })
        .collect();
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(f) => fits.push(f),
            Err(e) => {
                warn!("start {k} failed: {e}");
                failures.push(StartFailure { start_index: k, message: e.to_string() });
            }
        }
    }
    if fits.is_empty() {
        return Err(NlmeError::Numerical(format!("all {n_starts} starts failed")));
    }
    rank_fits(&mut fits);
    Ok(MultiStartOutcome { fits, failures })
}

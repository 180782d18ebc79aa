use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::optim::fd_gradient_hessian;
use super::problem::{log_prior, Problem};
use super::saem::{conditional_mode, score, Pop};
use super::{FitResult, LikelihoodEstimate, NlmeError, StatModelSpec};
use crate::ode::IntegratorConfig;
use crate::population::TrialDataset;
use crate::rng::{derive_seed, substream};
use crate::stats::{log_sum_exp, LN_2PI};

const IS_TAG: u64 = 0x6973_6c6c;
/// Proposal covariance is the inverse curvature at the mode times this.
const COVARIANCE_INFLATION: f64 = 1.5;

struct Individual {
    log_lik: f64,
    var: f64,
}

/// `−2·Σ_i log ∫ p(y_i | ψ) p(ψ) dψ` by importance sampling around each
/// individual's conditional mode, with its Monte Carlo standard error.
pub fn log_likelihood_is(
    fit: &FitResult,
    data: &TrialDataset,
    spec: &StatModelSpec,
    n_is_samples: usize,
    seed: u64,
    integrator: &IntegratorConfig,
) -> Result<LikelihoodEstimate, NlmeError> {
    if n_is_samples == 0 {
        return Err(NlmeError::Input("n_is_samples must be >= 1".into()));
    }
    let names: Vec<&str> = fit.population.iter().map(|d| d.name.as_str()).collect();
    let spec_names: Vec<&str> = spec.fitted_params.iter().map(|d| d.name.as_str()).collect();
    if names != spec_names {
        return Err(NlmeError::Input(format!("fit parameters {names:?} do not match spec {spec_names:?}")));
    }
    let fitted_spec = StatModelSpec {
        fitted_params: fit.population.clone(),
        error_model: fit.error_model,
        ..spec.clone()
    };
    let problem = Problem::new(data, &fitted_spec, integrator)?;
    let mu: Vec<f64> = fit.population.iter().map(|d| d.location).collect();
    let omega: Vec<f64> = problem.iiv.iter().map(|&k| fit.population[k].spread).collect();
    let pop = Pop::new(&problem, &mu, &omega, fit.error_model);
    let is_seed = derive_seed(seed, IS_TAG);

    let parts: Vec<Result<Individual, NlmeError>> = (0..problem.subjects.len())
        .into_par_iter()
        .map(|i| {
            let id = problem.subjects[i].id;
            if problem.n_iiv() == 0 {
                let (_, ll) = score(&problem, i, &pop, &[])
                    .ok_or_else(|| NlmeError::Numerical(format!("cannot simulate individual {id}")))?;
                return Ok(Individual { log_lik: ll, var: 0.0 });
            }
            let start: Vec<f64> = fit
                .individual_estimates
                .iter()
                .find(|e| e.id == id)
                .map(|e| problem.iiv.iter().map(|&k| fit.population[k].transform.forward(e.values[k])).collect())
                .filter(|z: &Vec<f64>| z.iter().all(|v| v.is_finite()))
                .unwrap_or_else(|| pop.mu_iiv.clone());
            individual_is(&problem, i, &pop, &start, n_is_samples, substream(is_seed, id))
        })
        .collect();
    let mut total = 0.0;
    let mut var = 0.0;
    for p in parts {
        let p = p?;
        total += p.log_lik;
        var += p.var;
    }
    Ok(LikelihoodEstimate { minus2ll: -2.0 * total, mc_se: 2.0 * var.sqrt(), n_is_samples, seed })
}

/// Cholesky factor of the proposal covariance from the curvature of the
/// log posterior at its mode; `None` if the curvature is not negative
/// definite.
fn laplace_proposal(problem: &Problem, i: usize, pop: &Pop, mode: &[f64]) -> Option<DMatrix<f64>> {
    let log_post = |z: &[f64]| match score(problem, i, pop, z) {
        Some((_, ll)) => ll + log_prior(z, &pop.mu_iiv, pop.omega),
        None => f64::NAN,
    };
    let mut h: Vec<f64> = pop.omega.iter().map(|w| 1e-2 * w).collect();
    let mut curvature = None;
    for _ in 0..3 {
        let (_, hess) = fd_gradient_hessian(&log_post, mode, &h)?;
        let neg = -hess;
        // Refine the step when it is large against the posterior width.
        let widths: Vec<f64> = (0..mode.len()).map(|k| 1.0 / neg[(k, k)].max(1e-300).sqrt()).collect();
        let refined: Vec<f64> = h.iter().zip(&widths).map(|(&hk, &w)| if hk > 0.1 * w { 0.05 * w } else { hk }).collect();
        curvature = Some(neg);
        if refined == h {
            break;
        }
        h = refined;
    }
    let cov = curvature?.cholesky()?.inverse() * COVARIANCE_INFLATION;
    cov.cholesky().map(|c| c.l())
}

fn individual_is(
    problem: &Problem,
    i: usize,
    pop: &Pop,
    start: &[f64],
    m: usize,
    mut rng: crate::rng::StreamRng,
) -> Result<Individual, NlmeError> {
    let d = start.len();
    let id = problem.subjects[i].id;
    let mode = conditional_mode(problem, i, pop, start);
    let (mean, chol) = match laplace_proposal(problem, i, pop, &mode) {
        Some(l) => (DVector::from_vec(mode), l),
        None => {
            warn!("individual {id}: degenerate proposal covariance, sampling from the population law");
            (DVector::from_vec(pop.mu_iiv.clone()), DMatrix::from_diagonal(&DVector::from_vec(pop.omega.to_vec())))
        }
    };
    let log_det: f64 = (0..d).map(|k| chol[(k, k)].ln()).sum();
    let weights: Vec<f64> = (0..m)
        .map(|_| {
            let eps = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let z = &mean + &chol * &eps;
            let log_q = -0.5 * d as f64 * LN_2PI - log_det - 0.5 * eps.norm_squared();
            match score(problem, i, pop, z.as_slice()) {
                Some((_, ll)) => ll + log_prior(z.as_slice(), &pop.mu_iiv, pop.omega) - log_q,
                None => f64::NEG_INFINITY,
            }
        })
        .collect();
    let top = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(NlmeError::Numerical(format!("individual {id}: every importance sample failed")));
    }
    let log_lik = log_sum_exp(&weights) - (m as f64).ln();
    let scaled: Vec<f64> = weights.iter().map(|w| (w - top).exp()).collect();
    let m1 = scaled.iter().sum::<f64>() / m as f64;
    let m2 = scaled.iter().map(|v| v * v).sum::<f64>() / m as f64;
    // Delta method: Var(log L̂) ≈ Var(w) / (m · E[w]²).
    let var = ((m2 / (m1 * m1) - 1.0) / m as f64).max(0.0);
    Ok(Individual { log_lik, var })
}

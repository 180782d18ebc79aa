use log::{debug, warn};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::optim::{fd_gradient_hessian, nelder_mead};
use super::problem::{log_prior, Problem};
use super::{ErrorModel, FitResult, IndividualEstimate, NamedValues, NlmeError, SaemConfig, StatModelSpec};
use crate::population::{PopulationDistribution, TrialDataset};
use crate::rng::{derive_seed, substream, StreamRng};

const ESTEP_TAG: u64 = 0x7361_656d;
const TARGET_ACCEPT: f64 = 0.3;
const MIN_SPREAD: f64 = 1e-6;
/// Largest fixed-effect move per iteration on the transformed scale.
const MAX_NEWTON_STEP: f64 = 0.5;
const FD_STEP: f64 = 1e-2;

struct Chain {
    z: Vec<f64>,
    pred: Vec<f64>,
    ll: f64,
    rng: StreamRng,
}

#[derive(Default, Clone)]
struct StepStats {
    prior: (u64, u64),
    comp: Vec<(u64, u64)>,
    block: (u64, u64),
    proposals: u64,
    failures: u64,
}

impl StepStats {
    fn merge(mut self, o: &StepStats) -> Self {
        self.prior.0 += o.prior.0;
        self.prior.1 += o.prior.1;
        if self.comp.len() < o.comp.len() {
            self.comp.resize(o.comp.len(), (0, 0));
        }
        for (a, b) in self.comp.iter_mut().zip(&o.comp) {
            a.0 += b.0;
            a.1 += b.1;
        }
        self.block.0 += o.block.0;
        self.block.1 += o.block.1;
        self.proposals += o.proposals;
        self.failures += o.failures;
        self
    }
}

struct Scales {
    comp: Vec<f64>,
    block: f64,
}

fn adapt(scale: &mut f64, (acc, tot): (u64, u64)) {
    if tot > 0 {
        let rate = acc as f64 / tot as f64;
        *scale = (*scale * (1.0 + 0.4 * (rate - TARGET_ACCEPT))).clamp(1e-4, 10.0);
    }
}

/// Current population state on the transformed scale.
pub(crate) struct Pop<'a> {
    pub mu: &'a [f64],
    pub mu_iiv: Vec<f64>,
    pub omega: &'a [f64],
    pub err: ErrorModel,
}

impl<'a> Pop<'a> {
    pub fn new(problem: &Problem, mu: &'a [f64], omega: &'a [f64], err: ErrorModel) -> Self {
        Self { mu, mu_iiv: problem.iiv.iter().map(|&k| mu[k]).collect(), omega, err }
    }
}

/// Evaluates a proposal: `None` for numerical failure.
pub(crate) fn score(problem: &Problem, i: usize, pop: &Pop, z_iiv: &[f64]) -> Option<(Vec<f64>, f64)> {
    let pred = problem.predict(i, &problem.assemble(pop.mu, z_iiv))?;
    let ll = problem.obs_loglik(i, &pred, &pop.err);
    if ll.is_nan() {
        return None;
    }
    Some((pred, ll))
}

/// One MH decision; `prior_diff` gives the non-data part of the log ratio.
fn propose(
    problem: &Problem,
    i: usize,
    pop: &Pop,
    chain: &mut Chain,
    zp: Vec<f64>,
    prior_diff: impl Fn(&[f64], &[f64]) -> f64,
    counter: &mut (u64, u64),
    stats: &mut StepStats,
) {
    stats.proposals += 1;
    counter.1 += 1;
    let Some((pred, ll)) = score(problem, i, pop, &zp) else {
        stats.failures += 1;
        return;
    };
    let log_ratio = ll - chain.ll + prior_diff(&zp, &chain.z);
    let u: f64 = chain.rng.random();
    if log_ratio.is_finite() && u.ln() < log_ratio || (chain.ll == f64::NEG_INFINITY && ll > f64::NEG_INFINITY) {
        chain.z = zp;
        chain.pred = pred;
        chain.ll = ll;
        counter.0 += 1;
    }
}

fn advance(problem: &Problem, i: usize, pop: &Pop, chain: &mut Chain, scales: &Scales, steps: usize) -> StepStats {
    let d = problem.n_iiv();
    let mut stats = StepStats { comp: vec![(0, 0); d], ..Default::default() };
    let prior = |z: &[f64]| log_prior(z, &pop.mu_iiv, pop.omega);
    for _ in 0..steps {
        // Independent draw from the population law: only the data term counts.
        let zp: Vec<f64> = (0..d)
            .map(|k| {
                let e: f64 = chain.rng.sample(StandardNormal);
                pop.mu_iiv[k] + pop.omega[k] * e
            })
            .collect();
        let mut c = stats.prior;
        propose(problem, i, pop, chain, zp, |_, _| 0.0, &mut c, &mut stats);
        stats.prior = c;

        for k in 0..d {
            let mut zp = chain.z.clone();
            let e: f64 = chain.rng.sample(StandardNormal);
            zp[k] += scales.comp[k] * pop.omega[k] * e;
            let mut c = stats.comp[k];
            propose(problem, i, pop, chain, zp, |a, b| prior(a) - prior(b), &mut c, &mut stats);
            stats.comp[k] = c;
        }

        let zp: Vec<f64> = (0..d)
            .map(|k| {
                let e: f64 = chain.rng.sample(StandardNormal);
                chain.z[k] + scales.block * pop.omega[k] * e
            })
            .collect();
        let mut c = stats.block;
        propose(problem, i, pop, chain, zp, |a, b| prior(a) - prior(b), &mut c, &mut stats);
        stats.block = c;
    }
    stats
}

fn init_chain(problem: &Problem, i: usize, pop: &Pop, seed: u64) -> Result<Chain, NlmeError> {
    let id = problem.subjects[i].id;
    let mut rng = substream(derive_seed(seed, ESTEP_TAG), id);
    let mut z = pop.mu_iiv.clone();
    for _ in 0..100 {
        if let Some((pred, ll)) = score(problem, i, pop, &z) {
            return Ok(Chain { z, pred, ll, rng });
        }
        z = pop
            .mu_iiv
            .iter()
            .zip(pop.omega)
            .map(|(m, w)| {
                let e: f64 = rng.sample(StandardNormal);
                m + w * e
            })
            .collect();
    }
    Err(NlmeError::Numerical(format!("cannot simulate individual {id} near the initial estimates")))
}

/// Sequential sum so results do not depend on the thread count.
fn ordered_sum(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |a, b| a + b)
}

/// Runs SAEM from `init` (linear-scale typical values of every fitted
/// parameter; missing names fall back to the spec's locations).
pub fn saem_fit(
    data: &TrialDataset,
    spec: &StatModelSpec,
    init: &NamedValues,
    cfg: &SaemConfig,
) -> Result<FitResult, NlmeError> {
    cfg.validate()?;
    let problem = Problem::new(data, spec, &cfg.integrator)?;
    let n = problem.subjects.len();
    let d = problem.n_iiv();

    let mut mu: Vec<f64> = spec
        .fitted_params
        .iter()
        .map(|p| match init.get(&p.name) {
            Some(&v) => {
                let z = p.transform.forward(v);
                if z.is_finite() {
                    Ok(z)
                } else {
                    Err(NlmeError::Input(format!("initial value {v} for {} is outside its domain", p.name)))
                }
            }
            None => Ok(p.location),
        })
        .collect::<Result<_, _>>()?;
    let mut omega: Vec<f64> = problem.iiv.iter().map(|&k| spec.fitted_params[k].spread).collect();
    let mut err = spec.error_model.with_value(spec.error_model.value().max(cfg.error_floor));

    let mut chains: Vec<Chain> = {
        let pop = Pop::new(&problem, &mu, &omega, err);
        (0..n).into_par_iter().map(|i| init_chain(&problem, i, &pop, cfg.seed)).collect::<Result<_, _>>()?
    };

    let mut scales = Scales { comp: vec![1.0; d], block: 0.5 };
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![0.0; d];
    let mut s_err = 0.0;
    let total = cfg.n_burnin_iters + cfg.n_smoothing_iters;
    let mut trace = Vec::with_capacity(total);
    let mut rejections = 0u64;

    for k in 1..=total {
        let burn = k <= cfg.n_burnin_iters;
        let pop = Pop::new(&problem, &mu, &omega, err);

        if d > 0 {
            let stats: Vec<StepStats> = chains
                .par_iter_mut()
                .enumerate()
                .map(|(i, c)| advance(&problem, i, &pop, c, &scales, cfg.mcmc_steps_per_iter))
                .collect();
            let agg = stats.iter().fold(StepStats::default(), |a, s| a.merge(s));
            rejections += agg.failures;
            if agg.proposals > 0 && agg.failures * 2 > agg.proposals {
                return Err(NlmeError::Numerical(format!(
                    "iteration {k}: {} of {} proposals failed to simulate",
                    agg.failures, agg.proposals
                )));
            }
            adapt(&mut scales.block, agg.block);
            for (s, c) in scales.comp.iter_mut().zip(&agg.comp) {
                adapt(s, *c);
            }
        }

        let gamma = if burn { 1.0 } else { ((k - cfg.n_burnin_iters) as f64).powf(-cfg.step_size_exponent) };
        for j in 0..d {
            let t1 = ordered_sum(chains.iter().map(|c| c.z[j]));
            let t2 = ordered_sum(chains.iter().map(|c| c.z[j] * c.z[j]));
            s1[j] += gamma * (t1 - s1[j]);
            s2[j] += gamma * (t2 - s2[j]);
        }
        let t_err = ordered_sum(chains.iter().enumerate().map(|(i, c)| problem.residual_ss(i, &c.pred, &err)));
        s_err += gamma * (t_err - s_err);

        // M-step.
        for j in 0..d {
            let m = s1[j] / n as f64;
            let mut var = (s2[j] / n as f64 - m * m).max(0.0);
            if burn {
                var = var.max(cfg.annealing * omega[j] * omega[j]);
            }
            mu[problem.iiv[j]] = m;
            omega[j] = var.sqrt().max(MIN_SPREAD);
        }
        let mut var_err = s_err / problem.n_obs as f64;
        if burn {
            var_err = var_err.max(cfg.annealing * err.value().powi(2));
        }
        err = err.with_value(var_err.sqrt().max(cfg.error_floor));

        if !problem.fixed_effects.is_empty() {
            newton_step(&problem, &mut mu, &mut chains, &err, gamma);
        }
        for (i, c) in chains.iter_mut().enumerate() {
            c.ll = problem.obs_loglik(i, &c.pred, &err);
        }

        let mut row = mu.clone();
        row.extend(&omega);
        row.push(err.value());
        trace.push(row);
        if k % 50 == 0 {
            debug!("saem seed {} iter {k}: mu {:?} omega {:?} err {}", cfg.seed, mu, omega, err.value());
        }
    }
    if rejections > 0 {
        warn!("saem seed {}: {rejections} proposals rejected for numerical reasons", cfg.seed);
    }

    // Conditional modes under the final population estimates.
    let pop = Pop::new(&problem, &mu, &omega, err);
    let modes: Vec<Vec<f64>> = chains
        .par_iter()
        .enumerate()
        .map(|(i, c)| conditional_mode(&problem, i, &pop, &c.z))
        .collect();

    let mut population: Vec<PopulationDistribution> = spec.fitted_params.clone();
    for (k, p) in population.iter_mut().enumerate() {
        p.location = mu[k];
        p.spread = problem.iiv.iter().position(|&j| j == k).map_or(0.0, |j| omega[j]);
    }
    let individual_estimates = problem
        .subjects
        .iter()
        .zip(&modes)
        .map(|(s, z)| {
            let full = problem.assemble(&mu, z);
            IndividualEstimate {
                id: s.id,
                values: full.iter().zip(&population).map(|(v, p)| p.transform.inverse(*v)).collect(),
            }
        })
        .collect();
    let mut trace_names: Vec<String> = population.iter().map(|p| format!("mu_{}", p.name)).collect();
    trace_names.extend(problem.iiv.iter().map(|&k| format!("omega_{}", population[k].name)));
    trace_names.push(err.param_name().to_string());

    Ok(FitResult {
        model: spec.structural.name().to_string(),
        population,
        error_model: err,
        individual_estimates,
        likelihood: None,
        n_estimated: spec.n_estimated(),
        start_index: 0,
        seed: cfg.seed,
        trace_names,
        trace,
        numerical_rejections: rejections,
    })
}

/// Maximizes the conditional posterior of one individual's random effects.
pub(crate) fn conditional_mode(problem: &Problem, i: usize, pop: &Pop, start: &[f64]) -> Vec<f64> {
    if start.is_empty() {
        return vec![];
    }
    let neg_post = |z: &[f64]| match score(problem, i, pop, z) {
        Some((_, ll)) => -(ll + log_prior(z, &pop.mu_iiv, pop.omega)),
        None => f64::INFINITY,
    };
    let step: Vec<f64> = pop.omega.iter().map(|w| 0.2 * w).collect();
    let mut best = nelder_mead(&neg_post, start, &step, 300 * (start.len() + 1), 1e-10);
    // One restart from the result guards against a collapsed simplex.
    let step: Vec<f64> = pop.omega.iter().map(|w| 0.05 * w).collect();
    let again = nelder_mead(&neg_post, &best.x, &step, 150 * (start.len() + 1), 1e-12);
    if again.value <= best.value {
        best = again;
    }
    if best.value.is_finite() {
        best.x
    } else {
        start.to_vec()
    }
}


/// Damped Newton ascent on `Σ_i ll_i` over parameters without IIV, at the
/// current chain states. Reverts if the new point cannot be simulated.
fn newton_step(problem: &Problem, mu: &mut [f64], chains: &mut [Chain], err: &ErrorModel, gamma: f64) {
    let fe = &problem.fixed_effects;
    let base: Vec<f64> = fe.iter().map(|&k| mu[k]).collect();
    let objective = |theta: &[f64]| -> f64 {
        let mut m = mu.to_vec();
        for (&k, &t) in fe.iter().zip(theta) {
            m[k] = t;
        }
        let parts: Vec<f64> = chains
            .par_iter()
            .enumerate()
            .map(|(i, c)| match problem.predict(i, &problem.assemble(&m, &c.z)) {
                Some(pred) => problem.obs_loglik(i, &pred, err),
                None => f64::NAN,
            })
            .collect();
        ordered_sum(parts.into_iter())
    };
    let h = vec![FD_STEP; fe.len()];
    let Some((g, hess)) = fd_gradient_hessian(objective, &base, &h) else {
        return;
    };
    let neg_h = -hess;
    let delta: DVector<f64> = match neg_h.clone().cholesky() {
        Some(ch) => ch.solve(&g),
        None => {
            let norm = g.norm();
            if norm == 0.0 || !norm.is_finite() {
                return;
            }
            &g * (0.1 / norm)
        }
    };
    let mut m = mu.to_vec();
    for (j, &k) in fe.iter().enumerate() {
        let step = delta[j].clamp(-MAX_NEWTON_STEP, MAX_NEWTON_STEP);
        if !step.is_finite() {
            return;
        }
        m[k] = base[j] + gamma * step;
    }
    let preds: Vec<Option<Vec<f64>>> =
        chains.par_iter().enumerate().map(|(i, c)| problem.predict(i, &problem.assemble(&m, &c.z))).collect();
    if preds.iter().any(Option::is_none) {
        return;
    }
    for (c, p) in chains.iter_mut().zip(preds) {
        c.pred = p.unwrap_or_default();
    }
    mu.copy_from_slice(&m);
}

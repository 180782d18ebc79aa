//! Monte Carlo population likelihood of the two-rate exponential growth
//! model over the means `(mu_a, mu_b)` of exponentially distributed rates.
//!
//! Reported log-likelihoods drop the Gaussian normalizing constant
//! `−(n_times/2)·log(2π σ²)` per replicate; only differences are meaningful.

use rand::Rng;
use rand_distr::{Distribution, Exp, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, substream};

#[derive(Debug, Error)]
pub enum AppendixError {
    #[error("invalid input: {0}")]
    Input(String),
}

/// Default observation times `0, 0.2, ..., 1`.
pub fn default_times() -> Vec<f64> {
    (0..6).map(|k| 0.2 * k as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpGrowthDataset {
    pub n: usize,
    pub times: Vec<f64>,
    /// `n × times.len()` log-observations.
    pub y: Vec<Vec<f64>>,
    pub x0: f64,
    pub sigma2: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodSample {
    pub mu_a: f64,
    pub mu_b: f64,
    pub loglik: f64,
    pub mc_se: f64,
    /// Set when some replicate's integrand underflowed everywhere.
    pub degenerate: bool,
}

/// `a_i ~ Exp(mean mu_a)`, `b_i ~ Exp(mean mu_b)`,
/// `y_ij = log x0 + (a_i + b_i)·t_j + ε_ij`, `ε ~ N(0, σ²)`.
pub fn generate_expgrowth_data(
    n: usize,
    mu_a: f64,
    mu_b: f64,
    x0: f64,
    sigma2: f64,
    seed: u64,
) -> Result<ExpGrowthDataset, AppendixError> {
    generate_expgrowth_data_at(n, mu_a, mu_b, x0, sigma2, &default_times(), seed)
}

pub fn generate_expgrowth_data_at(
    n: usize,
    mu_a: f64,
    mu_b: f64,
    x0: f64,
    sigma2: f64,
    times: &[f64],
    seed: u64,
) -> Result<ExpGrowthDataset, AppendixError> {
    if n == 0 {
        return Err(AppendixError::Input("replicate count must be >= 1".into()));
    }
    if !(mu_a > 0.0 && mu_b > 0.0 && x0 > 0.0 && sigma2 > 0.0) {
        return Err(AppendixError::Input("means, x0 and sigma2 must be > 0".into()));
    }
    let (ea, eb) = (exp_with_mean(mu_a)?, exp_with_mean(mu_b)?);
    let sd = sigma2.sqrt();
    let y = (0..n as u64)
        .map(|i| {
            let mut rng = substream(seed, i);
            let r = ea.sample(&mut rng) + eb.sample(&mut rng);
            times
                .iter()
                .map(|&t| {
                    let e: f64 = rng.sample(StandardNormal);
                    x0.ln() + r * t + sd * e
                })
                .collect()
        })
        .collect();
    Ok(ExpGrowthDataset { n, times: times.to_vec(), y, x0, sigma2, seed })
}

fn exp_with_mean(mu: f64) -> Result<Exp<f64>, AppendixError> {
    Exp::new(1.0 / mu).map_err(|e| AppendixError::Input(format!("exponential with mean {mu}: {e}")))
}

/// `SS(r) = Σ_j (y_j − log x0 − r t_j)² = c0 − 2 c1 r + c2 r²` per replicate.
#[derive(Debug, Clone, Copy)]
struct Quadratic {
    c0: f64,
    c1: f64,
    c2: f64,
}

fn quadratics(data: &ExpGrowthDataset) -> Vec<Quadratic> {
    let lx0 = data.x0.ln();
    data.y
        .iter()
        .map(|row| {
            let mut q = Quadratic { c0: 0.0, c1: 0.0, c2: 0.0 };
            for (&y, &t) in row.iter().zip(&data.times) {
                let d = y - lx0;
                q.c0 += d * d;
                q.c1 += d * t;
                q.c2 += t * t;
            }
            q
        })
        .collect()
}

/// Common random numbers: per replicate, `n_pairs` pairs of unit
/// exponentials. Each pair is used twice, as `(mu_a·E1, mu_b·E2)` and
/// `(mu_a·E2, mu_b·E1)`, which makes estimates exactly symmetric under
/// exchanging `mu_a` and `mu_b`.
struct Crn {
    pairs: Vec<Vec<(f64, f64)>>,
}

const CRN_TAG: u64 = 0x6372_6e;
const POINTS_TAG: u64 = 0x7074_73;

impl Crn {
    fn new(n_replicates: usize, n_mc: usize, seed: u64) -> Self {
        let n_pairs = n_mc.div_ceil(2);
        let base = derive_seed(seed, CRN_TAG);
        let pairs = (0..n_replicates as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = substream(base, i);
                (0..n_pairs)
                    .map(|_| {
                        let e1: f64 = rng.sample(Exp1);
                        let e2: f64 = rng.sample(Exp1);
                        (e1, e2)
                    })
                    .collect()
            })
            .collect();
        Self { pairs }
    }
}

fn replicate_estimate(q: &Quadratic, pairs: &[(f64, f64)], mu_a: f64, mu_b: f64, sigma2: f64) -> (f64, f64) {
    let scale = -0.5 / sigma2;
    let term = |r: f64| scale * (q.c0 - 2.0 * q.c1 * r + q.c2 * r * r);
    // Exponent of each pair's mean, symmetric in the pair's two members.
    let pair_logs: Vec<f64> = pairs
        .iter()
        .map(|&(e1, e2)| {
            let (u, v) = (term(mu_a * e1 + mu_b * e2), term(mu_a * e2 + mu_b * e1));
            let m = u.max(v);
            m + (0.5 * ((u - m).exp() + (v - m).exp())).ln()
        })
        .collect();
    let top = pair_logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let scaled: Vec<f64> = pair_logs.iter().map(|l| (l - top).exp()).collect();
    let k = scaled.len() as f64;
    let m1 = scaled.iter().sum::<f64>() / k;
    let m2 = scaled.iter().map(|v| v * v).sum::<f64>() / k;
    let var_log = if k > 1.0 { ((m2 - m1 * m1) * k / (k - 1.0)).max(0.0) / (k * m1 * m1) } else { 0.0 };
    (top + m1.ln(), var_log)
}

fn evaluate(data: &ExpGrowthDataset, quads: &[Quadratic], crn: &Crn, mu_a: f64, mu_b: f64) -> LikelihoodSample {
    let mut loglik = 0.0;
    let mut var = 0.0;
    let mut degenerate = false;
    for (q, pairs) in quads.iter().zip(&crn.pairs) {
        let (l, v) = replicate_estimate(q, pairs, mu_a, mu_b, data.sigma2);
        if !l.is_finite() {
            degenerate = true;
        }
        loglik += l;
        var += v;
    }
    LikelihoodSample { mu_a, mu_b, loglik, mc_se: var.sqrt(), degenerate }
}

fn check_point(mu_a: f64, mu_b: f64) -> Result<(), AppendixError> {
    if !(mu_a > 0.0 && mu_b > 0.0 && mu_a.is_finite() && mu_b.is_finite()) {
        return Err(AppendixError::Input(format!("means must be finite and > 0, got ({mu_a}, {mu_b})")));
    }
    Ok(())
}

/// `Σ_i log P̂(y_i | mu_a, mu_b)` with `n_mc` prior draws per replicate.
pub fn mc_loglik(
    data: &ExpGrowthDataset,
    mu_a: f64,
    mu_b: f64,
    n_mc: usize,
    seed: u64,
) -> Result<LikelihoodSample, AppendixError> {
    if n_mc < 100 {
        return Err(AppendixError::Input(format!("n_mc must be >= 100, got {n_mc}")));
    }
    check_point(mu_a, mu_b)?;
    let crn = Crn::new(data.n, n_mc, seed);
    Ok(evaluate(data, &quadratics(data), &crn, mu_a, mu_b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sampler {
    UniformBox { mu_a: (f64, f64), mu_b: (f64, f64) },
    Grid { mu_a: Vec<f64>, mu_b: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    pub samples: Vec<LikelihoodSample>,
    /// 1 for the highest log-likelihood.
    pub ranks: Vec<usize>,
    pub flagged: Vec<bool>,
}

impl Landscape {
    pub fn top(&self) -> Vec<&LikelihoodSample> {
        self.samples.iter().zip(&self.flagged).filter(|(_, &f)| f).map(|(s, _)| s).collect()
    }
}

/// Evaluates the likelihood at sampled points, all with the same common
/// random numbers, and flags the best `top_fraction` of them.
pub fn likelihood_landscape(
    data: &ExpGrowthDataset,
    sampler: &Sampler,
    n_points: usize,
    n_mc: usize,
    top_fraction: f64,
    seed: u64,
) -> Result<Landscape, AppendixError> {
    if n_mc < 100 {
        return Err(AppendixError::Input(format!("n_mc must be >= 100, got {n_mc}")));
    }
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(AppendixError::Input("top fraction must lie in (0, 1]".into()));
    }
    let points: Vec<(f64, f64)> = match sampler {
        Sampler::UniformBox { mu_a, mu_b } => {
            for &(lo, hi) in [mu_a, mu_b] {
                if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                    return Err(AppendixError::Input(format!("box side [{lo}, {hi}] must lie in (0, inf)")));
                }
            }
            let mut rng = substream(derive_seed(seed, POINTS_TAG), 0);
            (0..n_points)
                .map(|_| {
                    let (u, v): (f64, f64) = (rng.random(), rng.random());
                    (mu_a.0 + u * (mu_a.1 - mu_a.0), mu_b.0 + v * (mu_b.1 - mu_b.0))
                })
                .collect()
        }
        Sampler::Grid { mu_a, mu_b } => mu_a.iter().flat_map(|&a| mu_b.iter().map(move |&b| (a, b))).collect(),
    };
    for &(a, b) in &points {
        check_point(a, b)?;
    }
    let crn = Crn::new(data.n, n_mc, seed);
    let quads = quadratics(data);
    let samples: Vec<LikelihoodSample> =
        points.par_iter().map(|&(a, b)| evaluate(data, &quads, &crn, a, b)).collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&i, &j| samples[j].loglik.total_cmp(&samples[i].loglik).then(i.cmp(&j)));
    let mut ranks = vec![0; samples.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    let n_top = ((top_fraction * samples.len() as f64).ceil() as usize).max(1);
    let flagged = ranks.iter().map(|&r| r <= n_top).collect();
    Ok(Landscape { samples, ranks, flagged })
}

/// Largest pairwise distance on the `(mu_a, mu_b)` plane.
pub fn diameter(points: &[&LikelihoodSample]) -> f64 {
    let mut d: f64 = 0.0;
    for (k, p) in points.iter().enumerate() {
        for q in &points[k + 1..] {
            d = d.max((p.mu_a - q.mu_a).hypot(p.mu_b - q.mu_b));
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_rows_are_lines() {
        let d = generate_expgrowth_data(4, 1.0, 0.1, 2.0, 1e-12, 3).unwrap();
        for row in &d.y {
            let slope = (row[5] - row[0]) / 1.0;
            assert!((row[0] - 2f64.ln()).abs() < 1e-5);
            for (y, t) in row.iter().zip(&d.times) {
                assert!((y - (2f64.ln() + slope * t)).abs() < 1e-5);
            }
        }
        assert!(generate_expgrowth_data(0, 1.0, 0.1, 1.0, 0.025, 1).is_err());
    }

    #[test]
    fn swapping_means_gives_identical_value() {
        let d = generate_expgrowth_data(20, 1.0, 0.1, 1.0, 0.025, 8).unwrap();
        for (a, b) in [(1.0, 0.1), (0.3, 1.7), (0.05, 0.6)] {
            let x = mc_loglik(&d, a, b, 1000, 4).unwrap();
            let y = mc_loglik(&d, b, a, 1000, 4).unwrap();
            assert_eq!(x.loglik, y.loglik);
            assert_eq!(x.mc_se, y.mc_se);
        }
    }

    #[test]
    fn agrees_with_tensor_quadrature() {
        let d = generate_expgrowth_data(3, 1.0, 0.1, 1.0, 0.025, 12).unwrap();
        let mut rng = substream(77, 0);
        for _ in 0..5 {
            let (mu_a, mu_b): (f64, f64) = (0.3 + 1.2 * rng.random::<f64>(), 0.1 + 0.8 * rng.random::<f64>());
            // Midpoint rule on a 400 × 400 grid over [0, 5]².
            let h = 5.0 / 400.0;
            let quad: f64 = d
                .y
                .iter()
                .map(|row| {
                    let mut s = 0.0;
                    for i in 0..400 {
                        let a = (i as f64 + 0.5) * h;
                        for j in 0..400 {
                            let b = (j as f64 + 0.5) * h;
                            let ss: f64 = row.iter().zip(&d.times).map(|(y, t)| (y - (a + b) * t).powi(2)).sum();
                            let prior = (-a / mu_a).exp() / mu_a * (-b / mu_b).exp() / mu_b;
                            s += (-ss / (2.0 * d.sigma2)).exp() * prior * h * h;
                        }
                    }
                    s.ln()
                })
                .sum();
            let mc = mc_loglik(&d, mu_a, mu_b, 1_000_000, 5).unwrap();
            assert!((mc.loglik - quad).abs() < 3.0 * mc.mc_se, "({mu_a}, {mu_b}): {} vs {quad} (se {})", mc.loglik, mc.mc_se);
        }
    }

    #[test]
    fn truth_beats_tenfold_means() {
        let wins = (0..100u64)
            .filter(|&seed| {
                // One replicate, slope exactly mu_a + mu_b, tiny noise.
                let times = default_times();
                let y = vec![times.iter().map(|t| 1.1 * t).collect()];
                let d = ExpGrowthDataset { n: 1, times, y, x0: 1.0, sigma2: 1e-4, seed };
                let truth = mc_loglik(&d, 1.0, 0.1, 10_000, seed).unwrap();
                let far = mc_loglik(&d, 10.0, 1.0, 10_000, seed).unwrap();
                truth.loglik > far.loglik
            })
            .count();
        assert!(wins >= 99, "{wins}");
    }

    #[test]
    fn estimates_are_consistent_in_sample_count() {
        let d = generate_expgrowth_data(5, 1.0, 0.1, 1.0, 0.025, 2).unwrap();
        let mut close = 0;
        let mut se_small = 0.0;
        let mut se_large = 0.0;
        for trial in 0..100u64 {
            let a = mc_loglik(&d, 0.8, 0.3, 2000, 2 * trial).unwrap();
            let b = mc_loglik(&d, 0.8, 0.3, 8000, 2 * trial + 1).unwrap();
            assert!(!a.loglik.is_nan() && !b.loglik.is_nan());
            if (a.loglik - b.loglik).abs() < 3.0 * a.mc_se {
                close += 1;
            }
            se_small += a.mc_se;
            se_large += b.mc_se;
        }
        assert!(close >= 95, "{close}");
        assert!(se_large < 0.6 * se_small);
    }

    #[test]
    fn landscape_is_symmetric_under_axis_swap() {
        let d = generate_expgrowth_data(10, 1.0, 0.1, 1.0, 0.025, 6).unwrap();
        let axis = vec![0.1, 0.4, 0.9, 1.5];
        let g = Sampler::Grid { mu_a: axis.clone(), mu_b: axis.clone() };
        let l = likelihood_landscape(&d, &g, 0, 500, 0.25, 9).unwrap();
        for s in &l.samples {
            let t = l.samples.iter().find(|t| t.mu_a == s.mu_b && t.mu_b == s.mu_a).unwrap();
            assert_eq!(s.loglik, t.loglik);
        }
        assert_eq!(l.top().len(), 4);
    }

    #[test]
    fn landscape_point_count_and_ranks() {
        let d = generate_expgrowth_data(5, 1.0, 0.1, 1.0, 0.025, 1).unwrap();
        let s = Sampler::UniformBox { mu_a: (0.01, 2.0), mu_b: (0.01, 2.0) };
        let l = likelihood_landscape(&d, &s, 800, 200, 0.05, 3).unwrap();
        assert_eq!(l.samples.len(), 800);
        assert_eq!(l.top().len(), 40);
        let mut r = l.ranks.clone();
        r.sort_unstable();
        assert_eq!(r, (1..=800).collect::<Vec<_>>());
        assert!(l.samples.iter().all(|s| s.loglik.is_finite()));
    }
}

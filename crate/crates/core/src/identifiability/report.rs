use serde::{Deserialize, Serialize};

use super::{ks_two_sample, overlap_index, DensitySpec, IdentError, KsMethod, SampleSet};
use crate::nlme::FitResult;
use crate::population::Transform;

/// The verdict rule, printed verbatim with every analysis.
pub const DECISION_RULE: &str = "\
Fits of equal quality are those whose AIC is within max(2, 3 x combined Monte Carlo SE) of the best AIC.
Clusters connect fits i and j when KS p > alpha and overlap > 0.5; clusters are connected components.
NON-IDENTIFIABLE: some pair of equal-quality fits has overlap < 0.5.
IDENTIFIABLE: at least two equal-quality fits, every pair of them has overlap > 0.5 and KS p > alpha.
INCONCLUSIVE: anything else (fewer than two equal-quality fits, or significant KS pairs with overlap > 0.5).";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum Verdict {
    Identifiable,
    NonIdentifiable,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Identifiable => "IDENTIFIABLE",
            Verdict::NonIdentifiable => "NON-IDENTIFIABLE",
            Verdict::Inconclusive => "INCONCLUSIVE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVerdict {
    pub verdict: Verdict,
    pub reason: String,
}

/// What the comparison needs from one fit: a label, its quality and, per
/// parameter with inter-individual variability, the fitted density and the
/// individual estimates on the transformed scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FitView {
    pub label: usize,
    pub aic: Option<f64>,
    pub mc_se: Option<f64>,
    pub params: Vec<(String, DensitySpec, SampleSet)>,
}

impl FitView {
    pub fn from_fit(fit: &FitResult) -> Result<Self, IdentError> {
        let mut params = Vec::new();
        for (k, d) in fit.population.iter().enumerate() {
            if !d.has_iiv() {
                continue;
            }
            let values = fit.individual_estimates.iter().map(|ind| d.transform.forward(ind.values[k])).collect();
            params.push((
                d.name.clone(),
                DensitySpec::new(d.transform, d.location, d.spread)?,
                SampleSet::new(d.name.clone(), values)?,
            ));
        }
        Ok(Self {
            label: fit.start_index,
            aic: fit.aic(),
            mc_se: fit.likelihood.as_ref().map(|l| l.mc_se),
            params,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterReport {
    pub name: String,
    pub transform: Transform,
    pub ks_p: Vec<Vec<f64>>,
    pub ks_d: Vec<Vec<f64>>,
    pub overlap: Vec<Vec<f64>>,
    pub ks_method: KsMethod,
    /// Connected components, as positions into the report's `labels`.
    pub clusters: Vec<Vec<usize>>,
    pub verdict: ParameterVerdict,
}

impl ParameterReport {
    pub fn k(&self) -> usize {
        self.overlap.len()
    }

    /// Upper-triangle index pairs `(i, j)`, `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let k = self.k();
        (0..k).flat_map(move |i| (i + 1..k).map(move |j| (i, j)))
    }

    pub fn mean_overlap(&self) -> f64 {
        mean(self.pairs().map(|(i, j)| self.overlap[i][j]))
    }

    pub fn min_overlap(&self) -> f64 {
        self.pairs().map(|(i, j)| self.overlap[i][j]).fold(f64::INFINITY, f64::min)
    }

    /// Mean overlap over pairs that share a cluster; `None` if every
    /// cluster is a singleton.
    pub fn mean_overlap_within_clusters(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .clusters
            .iter()
            .flat_map(|c| c.iter().enumerate().flat_map(move |(a, &i)| c[a + 1..].iter().map(move |&j| (i, j))))
            .map(|(i, j)| self.overlap[i][j])
            .collect();
        (!vals.is_empty()).then(|| mean(vals.into_iter()))
    }

    pub fn significant_pairs(&self, alpha: f64) -> Vec<(usize, usize)> {
        self.pairs().filter(|&(i, j)| self.ks_p[i][j] <= alpha).collect()
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub alpha: f64,
    /// Bonferroni-adjusted level `alpha / (K(K−1)/2)`, for the reader.
    pub alpha_bonferroni: f64,
    /// Start index of each compared fit, in comparison order.
    pub labels: Vec<usize>,
    /// Positions into `labels` of the fits of equal quality.
    pub equal_quality: Vec<usize>,
    pub parameters: Vec<ParameterReport>,
}

impl ComparisonReport {
    pub fn parameter(&self, name: &str) -> Option<&ParameterReport> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

pub fn pairwise_report(fits: &[FitResult], alpha: f64) -> Result<ComparisonReport, IdentError> {
    let views = fits.iter().map(FitView::from_fit).collect::<Result<Vec<_>, _>>()?;
    pairwise_report_views(&views, alpha)
}

/// Positions of fits whose AIC is within `max(2, 3·sqrt(se_i² + se_best²))`
/// of the best. Without likelihoods every fit counts as equal quality.
pub fn equal_quality_set(views: &[FitView]) -> Vec<usize> {
    let quality: Option<Vec<(f64, f64)>> =
        views.iter().map(|v| v.aic.map(|a| (a, v.mc_se.unwrap_or(0.0)))).collect();
    let Some(q) = quality else {
        return (0..views.len()).collect();
    };
    let Some((best, &(best_aic, best_se))) = q.iter().enumerate().min_by(|a, b| a.1 .0.total_cmp(&b.1 .0)) else {
        return vec![];
    };
    let mut set: Vec<usize> = q
        .iter()
        .enumerate()
        .filter(|(_, &(aic, se))| aic - best_aic <= 2f64.max(3.0 * (se * se + best_se * best_se).sqrt()))
        .map(|(k, _)| k)
        .collect();
    if !set.contains(&best) {
        set.push(best);
        set.sort_unstable();
    }
    set
}

pub fn pairwise_report_views(views: &[FitView], alpha: f64) -> Result<ComparisonReport, IdentError> {
    let k = views.len();
    if k < 2 {
        return Err(IdentError::Input(format!("need at least 2 fits to compare, got {k}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(IdentError::Input(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let names: Vec<&str> = views[0].params.iter().map(|p| p.0.as_str()).collect();
    for v in &views[1..] {
        let other: Vec<&str> = v.params.iter().map(|p| p.0.as_str()).collect();
        if other != names {
            return Err(IdentError::Input(format!(
                "fit {} has parameters {other:?}, fit {} has {names:?}",
                v.label, views[0].label
            )));
        }
        if v.params.iter().zip(&views[0].params).any(|(a, b)| a.1.transform != b.1.transform) {
            return Err(IdentError::Input(format!("fit {} uses different transforms", v.label)));
        }
    }
    let equal_quality = equal_quality_set(views);
    let mut parameters = Vec::with_capacity(names.len());
    for (pi, name) in names.iter().enumerate() {
        let mut ks_p = vec![vec![1.0; k]; k];
        let mut ks_d = vec![vec![0.0; k]; k];
        let mut overlap = vec![vec![1.0; k]; k];
        let mut method = KsMethod::Exact;
        for i in 0..k {
            for j in i + 1..k {
                let (_, di, si) = &views[i].params[pi];
                let (_, dj, sj) = &views[j].params[pi];
                let ks = ks_two_sample(si, sj)?;
                if ks.method == KsMethod::Asymptotic {
                    method = KsMethod::Asymptotic;
                }
                let o = overlap_index(di, dj)?;
                ks_p[i][j] = ks.p;
                ks_p[j][i] = ks.p;
                ks_d[i][j] = ks.d;
                ks_d[j][i] = ks.d;
                overlap[i][j] = o;
                overlap[j][i] = o;
            }
        }
        let clusters = components(k, |i, j| ks_p[i][j] > alpha && overlap[i][j] > 0.5);
        let verdict = decide(&equal_quality, &ks_p, &overlap, alpha);
        parameters.push(ParameterReport {
            name: name.to_string(),
            transform: views[0].params[pi].1.transform,
            ks_p,
            ks_d,
            overlap,
            ks_method: method,
            clusters,
            verdict,
        });
    }
    let n_pairs = (k * (k - 1) / 2) as f64;
    Ok(ComparisonReport {
        alpha,
        alpha_bonferroni: alpha / n_pairs,
        labels: views.iter().map(|v| v.label).collect(),
        equal_quality,
        parameters,
    })
}

fn decide(set: &[usize], ks_p: &[Vec<f64>], overlap: &[Vec<f64>], alpha: f64) -> ParameterVerdict {
    if set.len() < 2 {
        return ParameterVerdict {
            verdict: Verdict::Inconclusive,
            reason: "fewer than two fits of equal quality".into(),
        };
    }
    let pairs: Vec<(usize, usize)> =
        set.iter().enumerate().flat_map(|(a, &i)| set[a + 1..].iter().map(move |&j| (i, j))).collect();
    let min_o = pairs.iter().map(|&(i, j)| overlap[i][j]).fold(f64::INFINITY, f64::min);
    let n_sig = pairs.iter().filter(|&&(i, j)| ks_p[i][j] <= alpha).count();
    let (verdict, reason) = if min_o < 0.5 {
        (Verdict::NonIdentifiable, format!("minimum overlap {min_o:.3e} < 0.5 among {} equal-quality fits", set.len()))
    } else if n_sig == 0 {
        (Verdict::Identifiable, format!("all {} equal-quality pairs have overlap > 0.5 and KS p > alpha", pairs.len()))
    } else {
        (Verdict::Inconclusive, format!("overlaps > 0.5 but {n_sig} of {} pairs are KS-significant", pairs.len()))
    };
    ParameterVerdict { verdict, reason }
}

/// Connected components of the graph on `0..k` with edges where `linked`.
fn components(k: usize, linked: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut comp = vec![usize::MAX; k];
    let mut out = Vec::new();
    for start in 0..k {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![start];
        comp[start] = id;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for v in 0..k {
                if comp[v] == usize::MAX && linked(u, v) {
                    comp[v] = id;
                    members.push(v);
                    stack.push(v);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

/// Clusters of `parameter` in `report`; positions index `report.labels`.
pub fn cluster_fits(report: &ComparisonReport, parameter: &str) -> Result<Vec<Vec<usize>>, IdentError> {
    report
        .parameter(parameter)
        .map(|p| p.clusters.clone())
        .ok_or_else(|| IdentError::Input(format!("no parameter {parameter} in report")))
}

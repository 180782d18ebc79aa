use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use popident::appendix::{generate_expgrowth_data_at, likelihood_landscape};
use popident::identifiability::{pairwise_report, ComparisonReport, IdentError, DECISION_RULE};
use popident::nlme::{multi_start, rank_fits, read_fit_dir, write_fit_dir, NlmeError};
use popident::population::{generate_synthetic, sample_population, PopulationError};
use popident::rng::derive_seed;
use popident::{FitResult, TrialDataset};
use serde::{Deserialize, Serialize};

use crate::config::{load_config, RunConfig};
use crate::error::{CliError, EXIT_PARTIAL};
use crate::manifest::RunManifest;
use crate::output::{landscape_svg, write_landscape, write_matrix, write_rows};

/// What a successful command reports back to `main`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    pub summary: String,
}

impl Outcome {
    fn ok(summary: String) -> Self {
        Self { exit_code: 0, summary }
    }
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_config(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let p = dir.join("config.json");
    let text = serde_json::to_string_pretty(cfg).expect("serializable");
    fs::write(&p, text + "\n").map_err(|e| CliError::io(&p, e))
}

fn population_error(e: PopulationError) -> CliError {
    match e {
        PopulationError::Invalid(_) | PopulationError::MissingParameter { .. } | PopulationError::Dataset(_) => {
            CliError::config(e.to_string())
        }
        PopulationError::Simulation { .. } | PopulationError::NonPositivePrediction { .. } => {
            CliError::numerical(e.to_string())
        }
    }
}

fn nlme_error(e: NlmeError) -> CliError {
    match e {
        NlmeError::Input(_) | NlmeError::Dataset(_) | NlmeError::Io { .. } | NlmeError::Format { .. } => {
            CliError::config(e.to_string())
        }
        NlmeError::Numerical(_) | NlmeError::Model(_) => CliError::numerical(e.to_string()),
    }
}

fn ident_error(e: IdentError) -> CliError {
    CliError::config(e.to_string())
}

/// Writes `data.csv`, `truth.csv`, `config.json` and `manifest.json`.
pub fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<Outcome, CliError> {
    let (mut cfg, raw) = load_config(config)?;
    if let (Some(s), Some(g)) = (seed, cfg.generation.as_mut()) {
        g.seed = s;
    }
    let g = cfg.generation()?.clone();
    let model = cfg.model_spec();
    let laws = cfg.population()?;
    let design = cfg.design()?;
    create_out(out)?;
    let mut manifest = RunManifest::new("simulate", Some(&raw), Some(&cfg));
    manifest.seeds.insert("generation".into(), g.seed);

    let individuals = manifest
        .time("sample_population", || sample_population(&laws, design.n_individuals, g.seed))
        .map_err(population_error)?;
    let data = manifest
        .time("generate_synthetic", || generate_synthetic(&model, &individuals, &design, g.seed, &g.integrator))
        .map_err(population_error)?;

    let p = out.join("data.csv");
    let f = fs::File::create(&p).map_err(|e| CliError::io(&p, e))?;
    data.write_csv(std::io::BufWriter::new(f)).map_err(|e| CliError::io(&p, e))?;

    let names = model.param_names();
    let mut header = vec!["ID"];
    header.extend(names.iter().copied());
    let rows: Vec<Vec<String>> = individuals
        .iter()
        .map(|ind| {
            std::iter::once(ind.id.to_string()).chain(names.iter().map(|n| ind.params[*n].to_string())).collect()
        })
        .collect();
    write_rows(&out.join("truth.csv"), &header, &rows)?;
    write_config(&cfg, out)?;
    manifest.param("n_individuals", design.n_individuals);
    manifest.param("n_observations", data.n_observations());
    manifest.write(out)?;
    Ok(Outcome::ok(format!(
        "simulated {} individuals, {} observations into {}",
        design.n_individuals,
        data.n_observations(),
        out.display()
    )))
}

pub fn read_dataset(path: &Path) -> Result<TrialDataset, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    TrialDataset::read_csv(std::io::BufReader::new(f)).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn fit_dir_name(start_index: usize) -> String {
    format!("fit_{start_index:03}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestEntry {
    pub rank: usize,
    pub start_index: usize,
    pub dir: String,
    pub aic: f64,
    pub minus2ll: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestFits {
    pub top_k: usize,
    pub fits: Vec<BestEntry>,
}

/// Multi-start fit of `data`; one directory per completed start plus
/// `summary.csv` (ascending AIC) and `best.json`.
pub fn fit(
    config: &Path,
    data_path: &Path,
    out: &Path,
    seed: Option<u64>,
    n_starts: Option<usize>,
    top_k: Option<usize>,
) -> Result<Outcome, CliError> {
    let (mut cfg, raw) = load_config(config)?;
    if let Some(f) = cfg.fitting.as_mut() {
        if let Some(s) = seed {
            f.saem.seed = s;
        }
        if let Some(n) = n_starts {
            f.n_starts = n;
        }
        if let Some(k) = top_k {
            f.top_k = k;
        }
    }
    cfg.validate()?;
    let f = cfg.fitting()?.clone();
    let spec = cfg.stat_spec()?;
    let data = read_dataset(data_path)?;
    if data.n_observations() == 0 {
        return Err(CliError::config(format!("{}: no observation rows", data_path.display())));
    }
    create_out(out)?;
    let mut manifest = RunManifest::new("fit", Some(&raw), Some(&cfg));
    manifest.seeds.insert("saem".into(), f.saem.seed);
    manifest.param("data", data_path.display().to_string());
    manifest.param("n_starts", f.n_starts);
    manifest.param("top_k", f.top_k);

    let outcome =
        manifest.time("multi_start", || multi_start(&data, &spec, &f.bounds, f.n_starts, &f.saem)).map_err(nlme_error)?;

    let mut rows = Vec::new();
    let mut best = BestFits { top_k: f.top_k, fits: vec![] };
    for (r, fit) in outcome.fits.iter().enumerate() {
        let dir = fit_dir_name(fit.start_index);
        write_fit_dir(fit, &out.join(&dir)).map_err(nlme_error)?;
        let ll = fit.likelihood.expect("multi-start scores every fit");
        let aic = fit.aic().expect("scored");
        rows.push(vec![
            (r + 1).to_string(),
            fit.start_index.to_string(),
            dir.clone(),
            ll.minus2ll.to_string(),
            ll.mc_se.to_string(),
            aic.to_string(),
            fit.n_estimated.to_string(),
            fit.seed.to_string(),
        ]);
        if r < f.top_k {
            best.fits.push(BestEntry {
                rank: r + 1,
                start_index: fit.start_index,
                dir,
                aic,
                minus2ll: ll.minus2ll,
                mc_se: ll.mc_se,
            });
        }
    }
    write_rows(
        &out.join("summary.csv"),
        &["rank", "start_index", "dir", "minus2ll", "mc_se", "aic", "n_estimated", "seed"],
        &rows,
    )?;
    let p = out.join("best.json");
    fs::write(&p, serde_json::to_string_pretty(&best).expect("serializable") + "\n").map_err(|e| CliError::io(&p, e))?;
    let frows: Vec<Vec<String>> =
        outcome.failures.iter().map(|x| vec![x.start_index.to_string(), x.message.clone()]).collect();
    if !frows.is_empty() {
        write_rows(&out.join("failures.csv"), &["start_index", "message"], &frows)?;
    }
    write_config(&cfg, out)?;
    manifest.param("n_completed", outcome.fits.len());
    manifest.param("n_failed", outcome.failures.len());
    manifest.write(out)?;

    let summary = format!(
        "{} of {} starts completed; best AIC {:.4} (start {})",
        outcome.fits.len(),
        f.n_starts,
        outcome.fits[0].aic().unwrap_or(f64::NAN),
        outcome.fits[0].start_index
    );
    if outcome.failures.is_empty() {
        Ok(Outcome::ok(summary))
    } else {
        warn!("{} starts failed, see failures.csv", outcome.failures.len());
        Ok(Outcome { exit_code: EXIT_PARTIAL, summary })
    }
}

/// Reads every `fit_*` directory under `dir`, ranked by AIC.
pub fn read_fits(dir: &Path) -> Result<Vec<FitResult>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("fit_")))
        .collect();
    paths.sort();
    let mut fits = paths.iter().map(|p| read_fit_dir(p).map_err(nlme_error)).collect::<Result<Vec<_>, _>>()?;
    rank_fits(&mut fits);
    Ok(fits)
}

/// Comparison of the `top_k` best fits under `fits_dir`.
pub fn analyze(
    fits_dir: &Path,
    out: &Path,
    config: Option<&Path>,
    alpha: Option<f64>,
    top_k: Option<usize>,
) -> Result<Outcome, CliError> {
    let (cfg, raw) = match config {
        Some(p) => {
            let (c, r) = load_config(p)?;
            (Some(c), Some(r))
        }
        None => (None, None),
    };
    let defaults = cfg.as_ref().map(|c| c.analysis.clone()).unwrap_or_default();
    let alpha = alpha.unwrap_or(defaults.alpha);
    let top_k = top_k.unwrap_or(defaults.top_k);
    if top_k < 2 {
        return Err(CliError::config("top_k must be >= 2"));
    }
    let mut fits = read_fits(fits_dir)?;
    if fits.len() < 2 {
        return Err(CliError::config(format!("{}: need at least 2 fits, found {}", fits_dir.display(), fits.len())));
    }
    fits.truncate(top_k);
    create_out(out)?;
    let mut manifest = RunManifest::new("analyze", raw.as_deref(), cfg.as_ref());
    manifest.param("fits", fits_dir.display().to_string());
    manifest.param("alpha", alpha);
    manifest.param("top_k", top_k);
    let report = manifest.time("pairwise_report", || pairwise_report(&fits, alpha)).map_err(ident_error)?;
    write_report(&report, &fits, out, defaults.density_points)?;
    manifest.write(out)?;

    let verdicts: Vec<String> =
        report.parameters.iter().map(|p| format!("{}: {}", p.name, p.verdict.verdict.as_str())).collect();
    Ok(Outcome::ok(format!("compared {} fits; {}", fits.len(), verdicts.join(", "))))
}

#[derive(Serialize)]
struct ClustersFile<'a> {
    labels: &'a [usize],
    equal_quality: Vec<usize>,
    parameters: BTreeMap<&'a str, Vec<Vec<usize>>>,
}

fn write_report(report: &ComparisonReport, fits: &[FitResult], out: &Path, density_points: usize) -> Result<(), CliError> {
    let labels = &report.labels;
    let mut tidy = Vec::new();
    for p in &report.parameters {
        let dir = out.join(&p.name);
        create_out(&dir)?;
        write_matrix(&dir.join("ks_p.csv"), labels, &p.ks_p)?;
        write_matrix(&dir.join("ks_D.csv"), labels, &p.ks_d)?;
        write_matrix(&dir.join("overlap.csv"), labels, &p.overlap)?;
        let mut cluster_of = vec![0; labels.len()];
        for (c, members) in p.clusters.iter().enumerate() {
            for &m in members {
                cluster_of[m] = c;
            }
        }
        for (i, j) in p.pairs() {
            tidy.push(vec![
                p.name.clone(),
                labels[i].to_string(),
                labels[j].to_string(),
                (i + 1).to_string(),
                (j + 1).to_string(),
                p.ks_p[i][j].to_string(),
                p.ks_d[i][j].to_string(),
                p.overlap[i][j].to_string(),
                (p.ks_p[i][j] <= report.alpha).to_string(),
                (cluster_of[i] == cluster_of[j]).to_string(),
            ]);
        }
    }
    write_rows(
        &out.join("report.csv"),
        &["parameter", "start_i", "start_j", "rank_i", "rank_j", "ks_p", "ks_D", "overlap", "ks_significant", "same_cluster"],
        &tidy,
    )?;

    let clusters = ClustersFile {
        labels,
        equal_quality: report.equal_quality.iter().map(|&k| labels[k]).collect(),
        parameters: report
            .parameters
            .iter()
            .map(|p| (p.name.as_str(), p.clusters.iter().map(|c| c.iter().map(|&k| labels[k]).collect()).collect()))
            .collect(),
    };
    let p = out.join("clusters.json");
    fs::write(&p, serde_json::to_string_pretty(&clusters).expect("serializable") + "\n")
        .map_err(|e| CliError::io(&p, e))?;
    let p = out.join("report.json");
    fs::write(&p, serde_json::to_string_pretty(report).expect("serializable") + "\n").map_err(|e| CliError::io(&p, e))?;

    // Individual estimates (violin data) and population densities, both on
    // the transformed scale.
    let mut violin = Vec::new();
    let mut density = Vec::new();
    for p in &report.parameters {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for fit in fits {
            let d = &fit.population[fit.param_index(&p.name).expect("reported parameter")];
            lo = lo.min(d.location - 4.0 * d.spread);
            hi = hi.max(d.location + 4.0 * d.spread);
        }
        for (rank, fit) in fits.iter().enumerate() {
            let k = fit.param_index(&p.name).expect("reported parameter");
            let d = &fit.population[k];
            for ind in &fit.individual_estimates {
                violin.push(vec![
                    p.name.clone(),
                    (rank + 1).to_string(),
                    fit.start_index.to_string(),
                    ind.id.to_string(),
                    d.transform.forward(ind.values[k]).to_string(),
                    ind.values[k].to_string(),
                ]);
            }
            for s in 0..density_points {
                let z = lo + (hi - lo) * s as f64 / (density_points - 1) as f64;
                let f = popident::stats::normal_pdf(z, d.location, d.spread);
                density.push(vec![p.name.clone(), (rank + 1).to_string(), fit.start_index.to_string(), z.to_string(), f.to_string()]);
            }
        }
    }
    write_rows(&out.join("violin.csv"), &["parameter", "rank", "start_index", "id", "transformed", "linear"], &violin)?;
    write_rows(&out.join("density.csv"), &["parameter", "rank", "start_index", "z", "density"], &density)?;

    let p = out.join("verdict.txt");
    fs::write(&p, verdict_text(report)).map_err(|e| CliError::io(&p, e))
}

pub fn verdict_text(report: &ComparisonReport) -> String {
    let mut s = String::new();
    s.push_str("Decision rule\n");
    s.push_str(DECISION_RULE);
    s.push_str("\n\n");
    s.push_str(&format!(
        "alpha = {} (Bonferroni-adjusted {:.3e}); fits compared by start index: {:?}\n",
        report.alpha, report.alpha_bonferroni, report.labels
    ));
    let eq: Vec<usize> = report.equal_quality.iter().map(|&k| report.labels[k]).collect();
    s.push_str(&format!("equal-quality fits: {eq:?}\n\n"));
    for p in &report.parameters {
        let clusters: Vec<Vec<usize>> =
            p.clusters.iter().map(|c| c.iter().map(|&k| report.labels[k]).collect()).collect();
        s.push_str(&format!(
            "{:<10} {:<17} mean overlap (all pairs) {:.4}  mean overlap (within clusters) {}  min overlap {:.3e}  KS-significant pairs {}  clusters {:?}\n           {}\n",
            p.name,
            p.verdict.verdict.as_str(),
            p.mean_overlap(),
            p.mean_overlap_within_clusters().map_or("n/a".to_string(), |v| format!("{v:.4}")),
            p.min_overlap(),
            p.significant_pairs(report.alpha).len(),
            clusters,
            p.verdict.reason
        ));
    }
    s
}

/// Likelihood landscapes, one `n_XXX/` directory per replicate count.
pub fn appendix(config: &Path, out: &Path, seed: Option<u64>) -> Result<Outcome, CliError> {
    let (mut cfg, raw) = load_config(config)?;
    if let (Some(s), Some(a)) = (seed, cfg.appendix.as_mut()) {
        a.seed = s;
    }
    let a = cfg.appendix()?.clone();
    create_out(out)?;
    let mut manifest = RunManifest::new("appendix", Some(&raw), Some(&cfg));
    manifest.seeds.insert("appendix".into(), a.seed);
    manifest.param("loglik_constant", "the term -(n_times/2)*log(2*pi*sigma2) per replicate is omitted");
    let mut lines = Vec::new();
    for &n in &a.replicates {
        let data_seed = derive_seed(a.seed, n as u64);
        let data = generate_expgrowth_data_at(n, a.mu_a, a.mu_b, a.x0, a.sigma2, &a.times, data_seed)
            .map_err(|e| CliError::config(e.to_string()))?;
        let landscape = manifest
            .time(&format!("landscape_n{n}"), || {
                likelihood_landscape(&data, &a.sampler, a.n_points, a.n_mc, a.top_fraction, data_seed)
            })
            .map_err(|e| CliError::config(e.to_string()))?;
        let dir = out.join(format!("n_{n:03}"));
        create_out(&dir)?;
        write_landscape(&dir.join("landscape.csv"), &landscape)?;
        let svg = landscape_svg(&landscape, (a.mu_a, a.mu_b), &format!("n = {n}"));
        let p = dir.join("landscape.svg");
        fs::write(&p, svg).map_err(|e| CliError::io(&p, e))?;
        manifest.seeds.insert(format!("n_{n}"), data_seed);
        let top = landscape.top();
        info!("n = {n}: top {} points, diameter {:.3}", top.len(), popident::appendix::diameter(&top));
        lines.push(format!("n = {n}: {} points", landscape.samples.len()));
    }
    write_config(&cfg, out)?;
    manifest.write(out)?;
    Ok(Outcome::ok(lines.join("; ")))
}

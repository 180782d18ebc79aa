//! End-to-end acceptance checks. Each test writes one `criterion N: PASS|FAIL`
//! line straight to stderr, so the line shows even when output is captured.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use popident::appendix::diameter;
use popident::identifiability::{linear_scale_pdf, overlap_by_quadrature, Verdict};
use popident::identifiability::{ks_two_sample_values, overlap_index};
use popident::models::ModelSpec;
use popident::nlme::{log_likelihood_is, saem_fit, IndividualEstimate, NamedValues};
use popident::population::{generate_synthetic, sample_population, Noise};
use popident::ode::integrate;
use popident::rng::substream;
use popident::{
    ComparisonReport, DensitySpec, ErrorModel, FitResult, IntegratorConfig, PopulationDistribution, StatModelSpec,
    StudyDesign, Transform, TrialDataset,
};
use popident_cli::commands;
use popident_cli::config::{load_config, RunConfig};
use popident_cli::output::read_landscape;
use rand::Rng;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn config(name: &str) -> RunConfig {
    load_config(&config_path(name)).unwrap().0
}

fn verdict(n: u32, pass: bool, elapsed: Duration, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {n}: {tag} ({:.1} s) {detail}\n", elapsed.as_secs_f64());
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

#[test]
fn criterion_01_friberg_equilibrium() {
    let t0 = Instant::now();
    let cfg = config("friberg.example.json");
    let model = cfg.model_spec();
    let inds = sample_population(&cfg.population().unwrap(), 100, 2024).unwrap();
    let times: Vec<f64> = (0..=130).map(|k| 0.5 * k as f64).collect();
    let mut worst: f64 = 0.0;
    for ind in &inds {
        let params = ind.param_vector(&model).unwrap();
        let tr = model.simulate(&params, &[], &times, &IntegratorConfig::generation()).unwrap();
        let base = &tr.states[0];
        for s in &tr.states {
            for k in 0..base.dim() {
                let dev = if base[k] == 0.0 { s[k].abs() } else { ((s[k] - base[k]) / base[k]).abs() };
                worst = worst.max(dev);
            }
        }
    }
    let el = t0.elapsed();
    let pass = worst <= 1e-6 && el < Duration::from_secs(10);
    verdict(1, pass, el, &format!("100 draws, max relative deviation {worst:.2e}"));
}

#[test]
fn criterion_02_tiv_extinction_and_growth() {
    let t0 = Instant::now();
    let cfg = config("tiv.example.json");
    let dists = cfg.population().unwrap();
    let model = ModelSpec::Tiv;
    let times: Vec<f64> = (0..=400).map(|k| 0.5 * k as f64).collect();
    let integ = IntegratorConfig::generation();
    let mut rng = substream(99, 0);
    // States only: log10 V is undefined once V decays through zero.
    let viral_load = |v: &[f64]| -> Vec<f64> {
        let p = ModelSpec::tiv_params(v).unwrap();
        let tr = integrate(&p, &p.initial_state(), (0.0, 200.0), &[], &times, &integ).unwrap();
        tr.states.iter().map(|s| s[2]).collect()
    };

    // R0 < 1: beta rescaled so R0 is uniform on [0.05, 0.5].
    let mut extinct = 0;
    for ind in sample_population(&dists, 100, 11).unwrap() {
        let mut v = ind.param_vector(&model).unwrap();
        let r0 = ModelSpec::tiv_params(&v).unwrap().r0();
        let target: f64 = rng.random_range(0.05..0.5);
        v[0] *= target / r0;
        let v_end = *viral_load(&v).last().unwrap();
        if v_end < 1e-3 * v[4] {
            extinct += 1;
        }
    }

    // R0 > 1 from V0 = 0.01: interior peak above V0.
    let mut peaked = 0;
    let mut drawn = 0;
    for ind in sample_population(&dists, 300, 12).unwrap() {
        let mut v = ind.param_vector(&model).unwrap();
        v[4] = 0.01;
        if ModelSpec::tiv_params(&v).unwrap().r0() <= 1.0 {
            continue;
        }
        drawn += 1;
        let vs = viral_load(&v);
        let (k_max, v_max) = vs.iter().enumerate().fold((0, f64::MIN), |b, (k, &x)| if x > b.1 { (k, x) } else { b });
        if v_max > v[4] && k_max > 0 && k_max < vs.len() - 1 {
            peaked += 1;
        }
        if drawn == 100 {
            break;
        }
    }
    let el = t0.elapsed();
    let pass = extinct == 100 && drawn == 100 && peaked == 100 && el < Duration::from_secs(30);
    verdict(2, pass, el, &format!("R0<1 extinct {extinct}/100, R0>1 interior peak {peaked}/{drawn}"));
}

/// Integer KS gap `max |cx·m − cy·n|` over the distinct pooled values.
fn brute_gap(pooled: &[f64], in_x: &[bool], n: u64, m: u64) -> u64 {
    let mut distinct = pooled.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    distinct
        .iter()
        .map(|&t| {
            let cx = pooled.iter().zip(in_x).filter(|(v, &x)| x && **v <= t).count() as u64;
            let cy = pooled.iter().zip(in_x).filter(|(v, &x)| !x && **v <= t).count() as u64;
            (cx * m).abs_diff(cy * n)
        })
        .max()
        .unwrap()
}

#[test]
fn criterion_03_ks_exact_matches_enumeration() {
    let t0 = Instant::now();
    let mut rng = substream(3, 0);
    let mut mismatches = Vec::new();
    let mut cases = 0;
    for n in 2..=8usize {
        for m in 2..=8usize {
            let len = n + m;
            let splits: Vec<Vec<bool>> = (0u32..1 << len)
                .filter(|mask| mask.count_ones() as usize == n)
                .map(|mask| (0..len).map(|k| mask >> k & 1 == 1).collect())
                .collect();
            for _ in 0..500 {
                let levels = [3, 6, 1000][rng.random_range(0..3)];
                let pooled: Vec<f64> = (0..len).map(|_| rng.random_range(0..levels) as f64).collect();
                let (x, y) = (&pooled[..n], &pooled[n..]);
                let observed: Vec<bool> = (0..len).map(|k| k < n).collect();
                let d_obs = brute_gap(&pooled, &observed, n as u64, m as u64);
                let hits = splits.iter().filter(|s| brute_gap(&pooled, s, n as u64, m as u64) >= d_obs).count();
                let p_brute = hits as f64 / splits.len() as f64;
                let r = ks_two_sample_values(x, y).unwrap();
                let d_brute = d_obs as f64 / (n * m) as f64;
                cases += 1;
                if r.p != p_brute || r.d != d_brute {
                    mismatches.push((n, m, r.p, p_brute));
                }
            }
        }
    }
    let el = t0.elapsed();
    let pass = mismatches.is_empty() && el < Duration::from_secs(60);
    let first = mismatches.first().map(|m| format!(", first {m:?}")).unwrap_or_default();
    verdict(3, pass, el, &format!("{cases} datasets, n, m in 2..=8, {} mismatches{first}", mismatches.len()));
}

/// Composite Simpson rule with `k` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, k: usize) -> f64 {
    let h = (b - a) / k as f64;
    let inner: f64 = (1..k).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Upper normal tail by quadrature of the density.
fn upper_tail(x: f64) -> f64 {
    simpson(phi, x, x + 40.0, 40_000)
}

#[test]
fn criterion_04_overlap() {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for delta in [0.0, 0.5, 1.0, 2.0, 5.0] {
        let a = DensitySpec::new(Transform::Identity, 0.0, 1.0).unwrap();
        let b = DensitySpec::new(Transform::Identity, delta, 1.0).unwrap();
        let expected = 2.0 * upper_tail(delta / 2.0);
        worst = worst.max((overlap_index(&a, &b).unwrap() - expected).abs());
    }
    let pairs = [((0.0, 0.3), (0.2, 0.3)), ((0.0, 0.5), (1.0, 0.2)), ((-1.0, 1.0), (0.5, 0.4)), ((2.0, 0.1), (2.0, 0.6))];
    let mut worst_scale: f64 = 0.0;
    let mut worst_tv: f64 = 0.0;
    for ((m1, s1), (m2, s2)) in pairs {
        let a = DensitySpec::new(Transform::Log, m1, s1).unwrap();
        let b = DensitySpec::new(Transform::Log, m2, s2).unwrap();
        let o_log = overlap_index(&a, &b).unwrap();
        // Geometric pieces on the linear scale keep narrow peaks resolved.
        let (z_lo, z_hi) = ((m1 - 12.0 * s1).min(m2 - 12.0 * s2), (m1 + 12.0 * s1).max(m2 + 12.0 * s2));
        let o_lin: f64 = (0..400)
            .map(|k| {
                let (l, r) = ((z_lo + (z_hi - z_lo) * k as f64 / 400.0).exp(), (z_lo + (z_hi - z_lo) * (k + 1) as f64 / 400.0).exp());
                overlap_by_quadrature(|x| linear_scale_pdf(&a, x), |x| linear_scale_pdf(&b, x), l, r, 1e-12)
            })
            .sum();
        worst_scale = worst_scale.max((o_log - o_lin).abs());
        let tv = 0.5 * simpson(|z| (a.pdf(z) - b.pdf(z)).abs(), z_lo, z_hi, 200_000);
        worst_tv = worst_tv.max((o_log + tv - 1.0).abs());
    }
    let el = t0.elapsed();
    let pass = worst <= 1e-6 && worst_scale <= 1e-6 && worst_tv <= 1e-6 && el < Duration::from_secs(5);
    verdict(
        4,
        pass,
        el,
        &format!("normal {worst:.1e}, log vs linear {worst_scale:.1e}, o + TV - 1 {worst_tv:.1e}"),
    );
}

/// `−2 log p(y)` for `y_j = θ + e_j`, `θ ~ N(mu, ω²)`, `e_j ~ N(0, a²)`, by
/// sequential Gaussian conditioning on each observation in turn.
fn sequential_minus2ll(data: &TrialDataset, mu: f64, omega: f64, a: f64) -> f64 {
    let mut total = 0.0;
    for s in data.subjects() {
        let (mut m, mut v) = (mu, omega * omega);
        for &y in &s.y {
            let pred_var = v + a * a;
            total += (2.0 * std::f64::consts::PI * pred_var).ln() + (y - m).powi(2) / pred_var;
            let gain = v / pred_var;
            m += gain * (y - m);
            v *= 1.0 - gain;
        }
    }
    total
}

#[test]
fn criterion_05_importance_sampling_oracle() {
    let t0 = Instant::now();
    let (mu, omega, a) = (1.5, 0.7, 0.4);
    let spec = StatModelSpec {
        structural: ModelSpec::Constant,
        fitted_params: vec![PopulationDistribution::new("theta", Transform::Identity, mu, omega)],
        fixed_constants: NamedValues::new(),
        error_model: ErrorModel::Additive { a },
    };
    let design = StudyDesign {
        horizon: 3.0,
        obs_times: vec![0.0, 1.0, 2.0, 3.0],
        doses: vec![],
        noise: Noise::Additive { sd: a },
        n_individuals: 20,
    };
    let mut within = 0;
    let mut worst_z: f64 = 0.0;
    for seed in 0..100u64 {
        let inds = sample_population(&spec.fitted_params, design.n_individuals, seed).unwrap();
        let data = generate_synthetic(&ModelSpec::Constant, &inds, &design, seed, &IntegratorConfig::default()).unwrap();
        let fit = FitResult {
            model: "constant".into(),
            population: spec.fitted_params.clone(),
            error_model: spec.error_model,
            individual_estimates: data.subject_ids().into_iter().map(|id| IndividualEstimate { id, values: vec![mu] }).collect(),
            likelihood: None,
            n_estimated: spec.n_estimated(),
            start_index: 0,
            seed,
            trace_names: vec![],
            trace: vec![],
            numerical_rejections: 0,
        };
        let r = log_likelihood_is(&fit, &data, &spec, 2000, seed, &IntegratorConfig::default()).unwrap();
        let z = (r.minus2ll - sequential_minus2ll(&data, mu, omega, a)).abs() / r.mc_se;
        worst_z = worst_z.max(z);
        if z <= 3.0 {
            within += 1;
        }
    }
    let el = t0.elapsed();
    let pass = within >= 95 && el < Duration::from_secs(120);
    verdict(5, pass, el, &format!("{within}/100 seeds within 3 MC standard errors (largest |z| {worst_z:.2})"));
}

#[test]
fn criterion_06_saem_recovery() {
    let t0 = Instant::now();
    let cfg = config("expgrowth.example.json");
    let dists = cfg.population().unwrap();
    let truth = dists.iter().find(|d| d.name == "a").unwrap().clone();
    let design = cfg.design().unwrap();
    let spec = cfg.stat_spec().unwrap();
    let fitting = cfg.fitting().unwrap();
    let init: NamedValues = spec.fitted_params.iter().map(|d| (d.name.clone(), d.typical_value())).collect();
    let mut ok = 0;
    let mut rows = Vec::new();
    for seed in 1..=10u64 {
        let inds = sample_population(&dists, 50, seed).unwrap();
        let data = generate_synthetic(&ModelSpec::ExpGrowth, &inds, &design, seed, &IntegratorConfig::generation()).unwrap();
        let saem = popident::SaemConfig { seed, ..fitting.saem.clone() };
        let fit = saem_fit(&data, &spec, &init, &saem).unwrap();
        let est = &fit.population[fit.param_index("a").unwrap()];
        let loc_err = est.typical_value() / truth.typical_value() - 1.0;
        let spread_err = est.spread / truth.spread - 1.0;
        if loc_err.abs() <= 0.05 && spread_err.abs() <= 0.25 {
            ok += 1;
        }
        rows.push(format!("{:+.3}/{:+.3}", loc_err, spread_err));
    }
    let el = t0.elapsed();
    let pass = ok >= 9 && el < Duration::from_secs(600);
    verdict(6, pass, el, &format!("{ok}/10 seeds recover a (relative errors typical/spread: {})", rows.join(" ")));
}

#[test]
fn criterion_07_appendix_landscape() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    commands::appendix(&config_path("expgrowth.example.json"), dir.path(), None).unwrap();
    let cfg = config("expgrowth.example.json");
    let a = cfg.appendix().unwrap();
    let n_top = (a.top_fraction * a.n_points as f64).ceil() as usize;
    let top = |n: usize| -> Vec<(f64, f64)> {
        let rows = read_landscape(&dir.path().join(format!("n_{n:03}/landscape.csv"))).unwrap();
        rows.into_iter().filter(|r| r.4 <= n_top).map(|r| (r.0, r.1)).collect()
    };
    let far = |(x, y): (f64, f64)| {
        let d1 = (x - a.mu_a).hypot(y - a.mu_b);
        let d2 = (x - a.mu_b).hypot(y - a.mu_a);
        d1.min(d2)
    };
    let top200 = top(200);
    let max_dist = top200.iter().map(|&p| far(p)).fold(0.0, f64::max);
    let top5 = top(5);
    let samples: Vec<popident::appendix::LikelihoodSample> = top5
        .iter()
        .map(|&(mu_a, mu_b)| popident::appendix::LikelihoodSample { mu_a, mu_b, loglik: 0.0, mc_se: 0.0, degenerate: false })
        .collect();
    let diam = diameter(&samples.iter().collect::<Vec<_>>());
    let el = t0.elapsed();
    let pass = top200.len() == n_top && max_dist <= 0.35 && diam > 1.0 && el < Duration::from_secs(900);
    verdict(
        7,
        pass,
        el,
        &format!("n=200 top {} points within {max_dist:.3} of the truth or its swap; n=5 top diameter {diam:.3}", top200.len()),
    );
}

/// simulate → fit → analyze with library calls; returns the report.
fn run_pipeline(config_name: &str, n_starts: usize, top_k: usize, dir: &Path) -> ComparisonReport {
    let cfg = config_path(config_name);
    commands::simulate(&cfg, &dir.join("sim"), None).unwrap();
    let fit = commands::fit(&cfg, &dir.join("sim/data.csv"), &dir.join("fit"), None, Some(n_starts), Some(top_k)).unwrap();
    let _ = std::io::stderr().write_all(format!("  fit: {}\n", fit.summary).as_bytes());
    commands::analyze(&dir.join("fit"), &dir.join("analysis"), Some(&cfg), None, Some(top_k)).unwrap();
    let text = std::fs::read_to_string(dir.join("analysis/report.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn describe(report: &ComparisonReport, names: &[&str]) -> String {
    names
        .iter()
        .map(|n| {
            let p = report.parameter(n).unwrap();
            format!(
                "{n}: {} mean o {:.3} min o {:.2e} KS-significant {}",
                p.verdict.verdict.as_str(),
                p.mean_overlap(),
                p.min_overlap(),
                p.significant_pairs(report.alpha).len()
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

#[test]
fn criterion_08_tiv_pipeline() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline("tiv.example.json", 25, 10, dir.path());
    let is = |n: &str, v: Verdict| report.parameter(n).unwrap().verdict.verdict == v;
    let pass = is("beta", Verdict::Identifiable)
        && is("delta", Verdict::Identifiable)
        && is("T0", Verdict::NonIdentifiable)
        && is("p", Verdict::NonIdentifiable);
    let el = t0.elapsed();
    let detail = format!(
        "{} equal-quality fits; {}",
        report.equal_quality.len(),
        describe(&report, &["beta", "delta", "T0", "p", "V0"])
    );
    verdict(8, pass && el < Duration::from_secs(7200), el, &detail);
}

#[test]
#[ignore = "slow: ten Friberg fits take about half an hour on one core"]
fn criterion_09_friberg_pipeline() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline("friberg.example.json", 10, 10, dir.path());
    let mut pass = true;
    for name in ["N0", "k_tr"] {
        let p = report.parameter(name).unwrap();
        let eq = &report.equal_quality;
        let sig_in_best = p.significant_pairs(report.alpha).iter().filter(|(i, j)| eq.contains(i) && eq.contains(j)).count();
        pass &= p.mean_overlap() > 0.7 && sig_in_best == 0;
    }
    let clusters: BTreeMap<&str, usize> =
        ["k_prol", "EC50"].iter().map(|n| (*n, report.parameter(n).unwrap().clusters.len())).collect();
    let el = t0.elapsed();
    let detail = format!("{}; clusters {clusters:?}", describe(&report, &["N0", "k_tr", "k_prol", "EC50"]));
    verdict(9, pass && el < Duration::from_secs(4 * 3600), el, &detail);
}

fn run_cli(dir: &Path, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_popident")).args(args).current_dir(dir).env("RUST_LOG", "warn").stdout(std::process::Stdio::null()).status().unwrap();
    assert!(status.success(), "popident {args:?} failed with {status}");
}

/// Relative path → contents; manifests lose their wall-clock timings.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let mut bytes = std::fs::read(&p).unwrap();
            if p.file_name().unwrap() == "manifest.json" {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v["timings_ms"] = serde_json::Value::Null;
                bytes = serde_json::to_vec(&v).unwrap();
            }
            out.insert(p.strip_prefix(root).unwrap().to_path_buf(), bytes);
        }
    }
    out
}

#[test]
fn criterion_10_mini_pipeline_is_deterministic() {
    let t0 = Instant::now();
    let runs: Vec<_> = ["1", "3"]
        .iter()
        .map(|workers| {
            let dir = tempfile::tempdir().unwrap();
            std::fs::copy(config_path("mini.json"), dir.path().join("mini.json")).unwrap();
            let w = ["--workers", workers];
            run_cli(dir.path(), &[&["simulate", "--config", "mini.json", "--out", "sim"][..], &w].concat());
            run_cli(dir.path(), &[&["fit", "--config", "mini.json", "--data", "sim/data.csv", "--out", "fit"][..], &w].concat());
            run_cli(dir.path(), &[&["analyze", "--fits", "fit", "--config", "mini.json", "--out", "analysis"][..], &w].concat());
            let snap = snapshot(dir.path());
            (dir, snap)
        })
        .collect();
    let (a, b) = (&runs[0].1, &runs[1].1);
    let differing: Vec<_> = a.keys().chain(b.keys()).filter(|k| a.get(*k) != b.get(*k)).collect();
    let el = t0.elapsed();
    let pass = differing.is_empty() && a.contains_key(Path::new("analysis/report.csv")) && el < Duration::from_secs(300);
    verdict(10, pass, el, &format!("{} files compared across 1 and 3 workers, differing: {differing:?}", a.len()));
}

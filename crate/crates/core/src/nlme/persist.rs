//! Fit directories: `population.csv`, `individuals.csv`, `ll.json`,
//! `trace.csv`.

use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ErrorModel, FitResult, IndividualEstimate, LikelihoodEstimate, NlmeError};
use crate::population::{PopulationDistribution, Transform};

#[derive(Debug, Serialize, Deserialize)]
struct LlFile {
    model: String,
    minus2ll: Option<f64>,
    mc_se: Option<f64>,
    aic: Option<f64>,
    n_estimated: usize,
    seed: u64,
    start_index: usize,
    error_model: String,
    error_param: f64,
    n_is_samples: Option<usize>,
    ll_seed: Option<u64>,
    numerical_rejections: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NlmeError + '_ {
    move |source| NlmeError::Io { path: path.display().to_string(), source }
}

fn fmt_err(path: &Path, message: impl ToString) -> NlmeError {
    NlmeError::Format { path: path.display().to_string(), message: message.to_string() }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, NlmeError> {
    let f = File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(f))
}

pub fn write_fit_dir(fit: &FitResult, dir: &Path) -> Result<(), NlmeError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let p = dir.join("population.csv");
    let mut w = csv_writer(&p)?;
    let wr = |e: csv::Error| fmt_err(&p, e);
    w.write_record(["name", "transform", "location", "spread"]).map_err(wr)?;
    for d in &fit.population {
        w.write_record([d.name.clone(), d.transform.as_str().into(), d.location.to_string(), d.spread.to_string()])
            .map_err(|e| fmt_err(&p, e))?;
    }
    w.flush().map_err(io_err(&p))?;

    let p = dir.join("individuals.csv");
    let mut w = csv_writer(&p)?;
    let mut header = vec!["id".to_string()];
    header.extend(fit.population.iter().map(|d| d.name.clone()));
    w.write_record(&header).map_err(|e| fmt_err(&p, e))?;
    for ind in &fit.individual_estimates {
        let mut rec = vec![ind.id.to_string()];
        rec.extend(ind.values.iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| fmt_err(&p, e))?;
    }
    w.flush().map_err(io_err(&p))?;

    let p = dir.join("trace.csv");
    let mut w = csv_writer(&p)?;
    let mut header = vec!["iter".to_string()];
    header.extend(fit.trace_names.iter().cloned());
    w.write_record(&header).map_err(|e| fmt_err(&p, e))?;
    for (k, row) in fit.trace.iter().enumerate() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| fmt_err(&p, e))?;
    }
    w.flush().map_err(io_err(&p))?;

    let p = dir.join("ll.json");
    let ll = LlFile {
        model: fit.model.clone(),
        minus2ll: fit.minus2ll(),
        mc_se: fit.likelihood.map(|l| l.mc_se),
        aic: fit.aic(),
        n_estimated: fit.n_estimated,
        seed: fit.seed,
        start_index: fit.start_index,
        error_model: fit.error_model.name().into(),
        error_param: fit.error_model.value(),
        n_is_samples: fit.likelihood.map(|l| l.n_is_samples),
        ll_seed: fit.likelihood.map(|l| l.seed),
        numerical_rejections: fit.numerical_rejections,
    };
    let text = serde_json::to_string_pretty(&ll).map_err(|e| fmt_err(&p, e))?;
    fs::write(&p, text + "\n").map_err(io_err(&p))
}

fn parse_f64(path: &Path, s: &str) -> Result<f64, NlmeError> {
    s.parse().map_err(|e| fmt_err(path, format!("{s:?}: {e}")))
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), NlmeError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(f);
    let header = r.headers().map_err(|e| fmt_err(path, e))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| fmt_err(path, e))?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

pub fn read_fit_dir(dir: &Path) -> Result<FitResult, NlmeError> {
    let p = dir.join("population.csv");
    let (header, rows) = read_table(&p)?;
    if header != ["name", "transform", "location", "spread"] {
        return Err(fmt_err(&p, format!("unexpected header {header:?}")));
    }
    let population = rows
        .iter()
        .map(|r| {
            Ok(PopulationDistribution {
                name: r[0].clone(),
                transform: Transform::parse(&r[1]).ok_or_else(|| fmt_err(&p, format!("transform {:?}", r[1])))?,
                location: parse_f64(&p, &r[2])?,
                spread: parse_f64(&p, &r[3])?,
            })
        })
        .collect::<Result<Vec<_>, NlmeError>>()?;

    let p = dir.join("individuals.csv");
    let (header, rows) = read_table(&p)?;
    let names: Vec<&str> = population.iter().map(|d| d.name.as_str()).collect();
    if header.first().map(String::as_str) != Some("id") || header[1..] != names[..] {
        return Err(fmt_err(&p, format!("header {header:?} does not match parameters {names:?}")));
    }
    let individual_estimates = rows
        .iter()
        .map(|r| {
            Ok(IndividualEstimate {
                id: r[0].parse().map_err(|e| fmt_err(&p, format!("id {:?}: {e}", r[0])))?,
                values: r[1..].iter().map(|v| parse_f64(&p, v)).collect::<Result<_, _>>()?,
            })
        })
        .collect::<Result<Vec<_>, NlmeError>>()?;

    let p = dir.join("trace.csv");
    let (header, rows) = read_table(&p)?;
    let trace_names = header.iter().skip(1).cloned().collect();
    let trace = rows
        .iter()
        .map(|r| r[1..].iter().map(|v| parse_f64(&p, v)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;

    let p = dir.join("ll.json");
    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
    let ll: LlFile = serde_json::from_str(&text).map_err(|e| fmt_err(&p, e))?;
    let error_model = match ll.error_model.as_str() {
        "additive" => ErrorModel::Additive { a: ll.error_param },
        "proportional" => ErrorModel::Proportional { b: ll.error_param },
        other => return Err(fmt_err(&p, format!("unknown error model {other:?}"))),
    };
    let likelihood = match (ll.minus2ll, ll.mc_se, ll.n_is_samples, ll.ll_seed) {
        (Some(minus2ll), Some(mc_se), Some(n_is_samples), Some(seed)) => {
            Some(LikelihoodEstimate { minus2ll, mc_se, n_is_samples, seed })
        }
        _ => None,
    };
    Ok(FitResult {
        model: ll.model,
        population,
        error_model,
        individual_estimates,
        likelihood,
        n_estimated: ll.n_estimated,
        start_index: ll.start_index,
        seed: ll.seed,
        trace_names,
        trace,
        numerical_rejections: ll.numerical_rejections,
    })
}

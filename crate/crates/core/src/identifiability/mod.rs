//! Nonparametric comparison of multi-start fits: pairwise KS tests on
//! individual estimates, overlap of population densities, clustering and
//! per-parameter verdicts.

mod ks;
mod overlap;
mod report;

pub use ks::{kolmogorov_sf, ks_one_sample, ks_two_sample, ks_two_sample_values, KsMethod, KsResult, EXACT_LIMIT};
pub use overlap::{adaptive_simpson, linear_scale_pdf, normal_overlap, overlap_by_quadrature, overlap_index};
pub use report::{
    cluster_fits, equal_quality_set, pairwise_report, pairwise_report_views, ComparisonReport, FitView,
    ParameterReport, ParameterVerdict, Verdict, DECISION_RULE,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::population::Transform;
use crate::stats::normal_pdf;

#[derive(Debug, Error)]
pub enum IdentError {
    #[error("invalid input: {0}")]
    Input(String),
}

/// Individual estimates of one parameter from one fit, transformed scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub name: String,
    pub values: Vec<f64>,
}

impl SampleSet {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self, IdentError> {
        let s = Self { name: name.into(), values };
        if s.values.len() < 2 || s.values.iter().any(|v| !v.is_finite()) {
            return Err(IdentError::Input(format!("{}: need at least 2 finite values", s.name)));
        }
        Ok(s)
    }
}

/// A normal density on the transformed scale of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySpec {
    pub transform: Transform,
    pub location: f64,
    pub spread: f64,
}

impl DensitySpec {
    pub fn new(transform: Transform, location: f64, spread: f64) -> Result<Self, IdentError> {
        let d = Self { transform, location, spread };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), IdentError> {
        if !(self.spread > 0.0 && self.spread.is_finite() && self.location.is_finite()) {
            return Err(IdentError::Input(format!(
                "density needs finite location and spread > 0, got ({}, {})",
                self.location, self.spread
            )));
        }
        Ok(())
    }

    pub fn pdf(&self, z: f64) -> f64 {
        normal_pdf(z, self.location, self.spread)
    }
}

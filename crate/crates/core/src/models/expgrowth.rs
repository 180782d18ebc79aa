//! Two-rate exponential growth `dx/dt = (a + b)·x`.

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpGrowthParams {
    pub a: f64,
    pub b: f64,
    pub x0: f64,
}

impl ExpGrowthParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.a.is_finite() && self.b.is_finite()) {
            return Err(ModelError::InvalidParams("growth rates must be finite".into()));
        }
        if !(self.x0.is_finite() && self.x0 > 0.0) {
            return Err(ModelError::InvalidParams(format!("x0 must be > 0, got {}", self.x0)));
        }
        Ok(())
    }
}

/// Closed-form solution `x0·exp((a + b)·t)`.
pub fn expgrowth_solution(p: &ExpGrowthParams, t: f64) -> f64 {
    p.x0 * ((p.a + p.b) * t).exp()
}

/// Observation map: `log x(t)`.
pub fn expgrowth_log_solution(p: &ExpGrowthParams, t: f64) -> f64 {
    p.x0.ln() + (p.a + p.b) * t
}

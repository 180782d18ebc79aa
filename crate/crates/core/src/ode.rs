//! Adaptive explicit Runge–Kutta integration with bolus dose events.
//!
//! The integrator is the Dormand–Prince 5(4) pair with a PI step-size
//! controller. Integration is always stopped exactly at every dose time and
//! every requested observation time; doses are applied as instantaneous
//! impulses once the state has reached the dose time, never stepped over.
//!
//! Observations that share a time with a dose record the pre-dose state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failure of a right-hand side or observation map to evaluate at a state.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{0}")]
pub struct DomainError(pub String);

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OdeError {
    #[error("integration did not converge at t = {t}: {reason}")]
    NonConvergence { t: f64, reason: String },
    #[error("model evaluation failed at t = {t}: {message}")]
    ModelEvaluation { t: f64, message: String },
    #[error("dose target {target} out of range for state of dimension {dim}")]
    DoseTarget { target: usize, dim: usize },
    #[error("invalid integration input: {0}")]
    InvalidInput(String),
}

/// Ordered state of an ODE system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for StateVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Instantaneous bolus of `amount` into compartment `target` at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseEvent {
    pub time: f64,
    pub amount: f64,
    #[serde(default)]
    pub target: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    pub min_step: f64,
}

impl IntegratorConfig {
    /// Tolerances used when generating synthetic data.
    pub fn generation() -> Self {
        Self { rel_tol: 1e-8, abs_tol: 1e-10, max_steps: 200_000, min_step: 1e-12 }
    }

    /// Tolerances used inside the estimator. The step cap is low so that
    /// proposals landing in stiff regions are rejected quickly.
    pub fn estimation() -> Self {
        Self { rel_tol: 1e-6, abs_tol: 1e-9, max_steps: 5_000, min_step: 1e-12 }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(OdeError::InvalidInput("rel_tol must be finite and > 0".into()));
        }
        if !(self.abs_tol > 0.0 && self.abs_tol.is_finite()) {
            return Err(OdeError::InvalidInput("abs_tol must be finite and > 0".into()));
        }
        if self.max_steps == 0 {
            return Err(OdeError::InvalidInput("max_steps must be > 0".into()));
        }
        if !(self.min_step > 0.0) {
            return Err(OdeError::InvalidInput("min_step must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self::estimation()
    }
}

/// States and observations sampled on the requested observation grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    pub observations: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// A first-order ODE system `dy/dt = f(t, y)` with a scalar observation map.
pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), DomainError>;

    fn observe(&self, y: &[f64]) -> f64;
}

/// Adds the dose amount to its target compartment.
pub fn apply_dose(state: &StateVector, dose: &DoseEvent) -> Result<StateVector, OdeError> {
    if dose.target >= state.dim() {
        return Err(OdeError::DoseTarget { target: dose.target, dim: state.dim() });
    }
    let mut out = state.clone();
    out.0[dose.target] += dose.amount;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dormand–Prince 5(4) tableau
// ---------------------------------------------------------------------------

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// PI controller constants.
const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - BETA * 0.75;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

struct Workspace {
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    err: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            ytmp: vec![0.0; n],
            ynew: vec![0.0; n],
            err: vec![0.0; n],
        }
    }
}

fn eval<S: OdeSystem + ?Sized>(sys: &S, t: f64, y: &[f64], out: &mut [f64]) -> Result<(), String> {
    sys.rhs(t, y, out).map_err(|e| e.0)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err("non-finite derivative".into());
    }
    Ok(())
}

fn error_norm(y0: &[f64], y1: &[f64], err: &[f64], cfg: &IntegratorConfig) -> f64 {
    let n = y0.len() as f64;
    let sum: f64 = y0
        .iter()
        .zip(y1)
        .zip(err)
        .map(|((a, b), e)| {
            let sc = cfg.abs_tol + cfg.rel_tol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Hairer's starting step heuristic.
fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    f0: &[f64],
    span: f64,
    cfg: &IntegratorConfig,
    ws: &mut Workspace,
) -> f64 {
    let n = y.len() as f64;
    let sc: Vec<f64> = y.iter().map(|v| cfg.abs_tol + cfg.rel_tol * v.abs()).collect();
    let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span);
    for i in 0..y.len() {
        ws.ytmp[i] = y[i] + h0 * f0[i];
    }
    let d2 = match sys.rhs(t + h0, &ws.ytmp, &mut ws.k[1]) {
        Ok(()) if ws.k[1].iter().all(|v| v.is_finite()) => {
            (ws.k[1].iter().zip(f0).zip(&sc).map(|((a, b), s)| ((a - b) / s).powi(2)).sum::<f64>()
                / n)
                .sqrt()
                / h0
        }
        _ => return h0 * 1e-3,
    };
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Integrates `sys` from `span.0`, reporting the state at each of
/// `obs_times` and applying `doses` at their times.
///
/// `obs_times` must be non-decreasing and inside `span`; `doses` must be
/// sorted by time and inside `span`.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    init: &StateVector,
    span: (f64, f64),
    doses: &[DoseEvent],
    obs_times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory, OdeError> {
    if obs_times.is_empty() {
        return Ok(Trajectory::default());
    }
    cfg.validate()?;
    let n = sys.dim();
    if init.dim() != n {
        return Err(OdeError::InvalidInput(format!(
            "initial state has dimension {}, system expects {n}",
            init.dim()
        )));
    }
    if !init.is_finite() {
        return Err(OdeError::InvalidInput("initial state is not finite".into()));
    }
    let (t0, t_end) = span;
    if !(t0.is_finite() && t_end.is_finite() && t_end >= t0) {
        return Err(OdeError::InvalidInput(format!("invalid span [{t0}, {t_end}]")));
    }
    if obs_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(OdeError::InvalidInput("observation times must be strictly increasing".into()));
    }
    if obs_times[0] < t0 || obs_times[obs_times.len() - 1] > t_end {
        return Err(OdeError::InvalidInput("observation times outside span".into()));
    }
    if doses.windows(2).any(|w| w[1].time < w[0].time) {
        return Err(OdeError::InvalidInput("doses must be sorted by time".into()));
    }
    for d in doses {
        if d.time < t0 || d.time > t_end || !d.time.is_finite() {
            return Err(OdeError::InvalidInput(format!("dose at t = {} outside span", d.time)));
        }
        if !(d.amount >= 0.0) {
            return Err(OdeError::InvalidInput(format!("negative dose amount {}", d.amount)));
        }
        if d.target >= n {
            return Err(OdeError::DoseTarget { target: d.target, dim: n });
        }
    }

    let t_last = obs_times[obs_times.len() - 1];
    let mut traj = Trajectory {
        times: Vec::with_capacity(obs_times.len()),
        states: Vec::with_capacity(obs_times.len()),
        observations: Vec::with_capacity(obs_times.len()),
    };
    let mut ws = Workspace::new(n);
    let mut y = init.0.clone();
    let mut t = t0;
    let mut h = 0.0;
    let mut fac_old: f64 = 1e-4;
    let mut steps = 0usize;
    let mut fsal_valid = false;
    let mut next_obs = 0usize;
    let mut next_dose = 0usize;

    loop {
        // Record observations and apply doses that sit exactly at t.
        while next_obs < obs_times.len() && obs_times[next_obs] <= t {
            traj.times.push(obs_times[next_obs]);
            traj.observations.push(sys.observe(&y));
            traj.states.push(StateVector(y.clone()));
            next_obs += 1;
        }
        if next_obs == obs_times.len() {
            break;
        }
        while next_dose < doses.len() && doses[next_dose].time <= t {
            let d = doses[next_dose];
            y[d.target] += d.amount;
            fsal_valid = false;
            next_dose += 1;
        }
        // Doses after the last observation cannot affect the trajectory.
        let target = match doses.get(next_dose) {
            Some(d) if d.time < obs_times[next_obs] => d.time,
            _ => obs_times[next_obs],
        };
        debug_assert!(target <= t_last);

        if !fsal_valid {
            let (k0, _) = ws.k.split_at_mut(1);
            eval(sys, t, &y, &mut k0[0])
                .map_err(|message| OdeError::ModelEvaluation { t, message })?;
            fsal_valid = true;
        }
        if h == 0.0 {
            let f0 = ws.k[0].clone();
            h = initial_step(sys, t, &y, &f0, target - t, cfg, &mut ws);
        }

        // Advance to `target`.
        while t < target {
            let remaining = target - t;
            if remaining <= 1e-13 * t.abs().max(1.0) {
                t = target;
                break;
            }
            let mut landing = false;
            let mut h_try = h;
            if h_try >= remaining {
                h_try = remaining;
                landing = true;
            } else if h_try > 0.5 * remaining && h_try < remaining {
                // Avoid leaving a sliver before the target.
                h_try = 0.5 * remaining;
            }
            if h_try < cfg.min_step && !landing {
                return Err(OdeError::NonConvergence { t, reason: format!("step size {h_try:e} below minimum") });
            }
            steps += 1;
            if steps > cfg.max_steps {
                return Err(OdeError::NonConvergence { t, reason: format!("exceeded {} steps", cfg.max_steps) });
            }
            match dopri_step(sys, t, &y, h_try, &mut ws) {
                Ok(()) => {
                    let err = error_norm(&y, &ws.ynew, &ws.err, cfg);
                    let fac11 = err.powf(EXPO);
                    if err <= 1.0 {
                        let mut fac = fac11 / fac_old.powf(BETA);
                        fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                        fac_old = err.max(1e-4);
                        t = if landing { target } else { t + h_try };
                        std::mem::swap(&mut y, &mut ws.ynew);
                        // FSAL: k7 is f(t + h, y_new).
                        ws.k.swap(0, 6);
                        let h_new = h_try / fac;
                        // Do not let a short landing step shrink the next step.
                        h = if landing { h.max(h_new) } else { h_new };
                    } else {
                        h = h_try / (1.0 / FAC_MIN).min(fac11 / SAFETY);
                    }
                }
                Err(_) => {
                    // Trial stage left the model's domain; retry with a smaller step.
                    h = 0.1 * h_try;
                }
            }
        }
    }
    Ok(traj)
}

fn dopri_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    h: f64,
    ws: &mut Workspace,
) -> Result<(), String> {
    let n = y.len();
    let Workspace { k, ytmp, ynew, err } = ws;
    for i in 0..n {
        ytmp[i] = y[i] + h * A21 * k[0][i];
    }
    eval(sys, t + C2 * h, ytmp, &mut k[1])?;
    for i in 0..n {
        ytmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
    }
    eval(sys, t + C3 * h, ytmp, &mut k[2])?;
    for i in 0..n {
        ytmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
    }
    eval(sys, t + C4 * h, ytmp, &mut k[3])?;
    for i in 0..n {
        ytmp[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
    }
    eval(sys, t + C5 * h, ytmp, &mut k[4])?;
    for i in 0..n {
        ytmp[i] = y[i]
            + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
    }
    eval(sys, t + h, ytmp, &mut k[5])?;
    for i in 0..n {
        ynew[i] = y[i]
            + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
    }
    eval(sys, t + h, ynew, &mut k[6])?;
    for i in 0..n {
        err[i] = h
            * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
    }
    Ok(())
}

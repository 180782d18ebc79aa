//! Friberg transit-compartment model of neutrophil production, coupled to
//! the Zalypsis PK model through an Emax inhibition of proliferation.

use crate::ode::{DomainError, OdeSystem, StateVector};

use super::pk::{emax_effect, zalypsis_pk_rhs, ZalypsisPkParams};
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FribergParams {
    pub k_prol: f64,
    pub k_tr: f64,
    pub k_circ: f64,
    pub gamma: f64,
    pub n0: f64,
    pub ec50: f64,
    pub emax: f64,
}

impl FribergParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let rates = [self.k_prol, self.k_tr, self.k_circ];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(ModelError::InvalidParams("Friberg rates must be > 0".into()));
        }
        if !(self.n0.is_finite() && self.n0 > 0.0) {
            return Err(ModelError::InvalidParams(format!("N0 must be > 0, got {}", self.n0)));
        }
        if !(self.ec50.is_finite() && self.ec50 > 0.0) {
            return Err(ModelError::InvalidParams(format!("EC50 must be > 0, got {}", self.ec50)));
        }
        if !(0.0..=1.0).contains(&self.emax) {
            return Err(ModelError::InvalidParams(format!("Emax must lie in [0, 1], got {}", self.emax)));
        }
        if !self.gamma.is_finite() {
            return Err(ModelError::InvalidParams("gamma must be finite".into()));
        }
        Ok(())
    }
}

/// Derivatives of `(P, T1, T2, T3, N)` under proliferation inhibition
/// `drug_effect ∈ [0, 1]`.
pub fn friberg_rhs(state: &[f64; 5], p: &FribergParams, drug_effect: f64) -> Result<[f64; 5], ModelError> {
    let [prol, t1, t2, t3, n] = *state;
    if !(n > 0.0) {
        return Err(ModelError::Domain(format!("circulating neutrophils must be > 0, got {n}")));
    }
    let feedback = (p.n0 / n).powf(p.gamma);
    Ok([
        ((1.0 - drug_effect) * feedback - 1.0) * p.k_prol * prol,
        p.k_prol * prol - p.k_tr * t1,
        p.k_tr * t1 - p.k_tr * t2,
        p.k_tr * t2 - p.k_tr * t3,
        p.k_tr * t3 - p.k_circ * n,
    ])
}

/// Steady state of the untreated system: `N = N0`, `T_i = k_circ·N0/k_tr`,
/// `P = k_circ·N0/k_prol`.
pub fn friberg_initial_state(p: &FribergParams) -> Result<StateVector, ModelError> {
    p.validate()?;
    let flux = p.k_circ * p.n0;
    let t = flux / p.k_tr;
    Ok(StateVector::new(vec![flux / p.k_prol, t, t, t, p.n0]))
}

/// The nine-state PK-PD system `(C_p, C_f, C_sl1, C_sl2, P, T1, T2, T3, N)`.
#[derive(Debug, Clone, Copy)]
pub struct FribergSystem {
    pub pd: FribergParams,
    pub pk: ZalypsisPkParams,
    pub pk_literal: bool,
}

impl FribergSystem {
    pub const DIM: usize = 9;
    pub const PLASMA: usize = 0;
    pub const NEUTROPHILS: usize = 8;

    pub fn initial_state(&self) -> Result<StateVector, ModelError> {
        let pd = friberg_initial_state(&self.pd)?;
        let mut y = vec![0.0; 4];
        y.extend_from_slice(pd.as_slice());
        Ok(StateVector::new(y))
    }
}

impl OdeSystem for FribergSystem {
    fn dim(&self) -> usize {
        Self::DIM
    }

    fn rhs(&self, _t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), DomainError> {
        let pk = zalypsis_pk_rhs(&[y[0], y[1], y[2], y[3]], &self.pk, self.pk_literal);
        let effect = emax_effect(y[0].max(0.0), self.pd.emax, self.pd.ec50)
            .map_err(|e| DomainError(e.to_string()))?
            .clamp(0.0, 1.0);
        let pd = friberg_rhs(&[y[4], y[5], y[6], y[7], y[8]], &self.pd, effect)
            .map_err(|e| DomainError(e.to_string()))?;
        dydt[..4].copy_from_slice(&pk);
        dydt[4..].copy_from_slice(&pd);
        Ok(())
    }

    fn observe(&self, y: &[f64]) -> f64 {
        y[Self::NEUTROPHILS]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    pub(crate) fn table_means() -> FribergParams {
        FribergParams { k_prol: 0.87, k_tr: 1.08, k_circ: 1.15, gamma: 0.16, n0: 5.03, ec50: 0.14, emax: 1.0 }
    }

    #[test]
    fn initial_state_from_table_means() {
        let y = friberg_initial_state(&table_means()).unwrap();
        // 1.15·5.03/0.87 and 1.15·5.03/1.08
        assert_relative_eq!(y[0], 6.648850574712644, max_relative = 1e-14);
        for i in 1..4 {
            assert_relative_eq!(y[i], 5.356018518518518, max_relative = 1e-14);
        }
        assert_eq!(y[4], 5.03);
    }

    #[test]
    fn equal_rates_collapse_to_baseline() {
        let p = FribergParams { k_prol: 0.9, k_tr: 0.9, k_circ: 0.9, ..table_means() };
        let y = friberg_initial_state(&p).unwrap();
        assert!(y.0.iter().all(|v| (v - 5.03).abs() < 1e-14));
    }

    #[test]
    fn zero_baseline_rejected() {
        let p = FribergParams { n0: 0.0, ..table_means() };
        assert!(friberg_initial_state(&p).is_err());
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let p = table_means();
        let y = friberg_initial_state(&p).unwrap();
        let d = friberg_rhs(&[y[0], y[1], y[2], y[3], y[4]], &p, 0.0).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-12), "{d:?}");
    }

    #[test]
    fn full_inhibition_blocks_proliferation() {
        let p = table_means();
        let n0 = p.n0;
        let d = friberg_rhs(&[1.0, n0, n0, n0, n0], &p, 1.0).unwrap();
        assert_relative_eq!(d[0], -p.k_prol, max_relative = 1e-15);
    }

    #[test]
    fn nonpositive_neutrophils_are_a_domain_error() {
        let p = table_means();
        assert!(friberg_rhs(&[1.0, 1.0, 1.0, 1.0, 0.0], &p, 0.0).is_err());
        assert!(friberg_rhs(&[1.0, 1.0, 1.0, 1.0, -1.0], &p, 0.0).is_err());
    }

    #[test]
    fn observation_is_circulating_neutrophils() {
        let sys = FribergSystem { pd: table_means(), pk: ZalypsisPkParams::placeholder(), pk_literal: false };
        let y: Vec<f64> = (0..9).map(|i| i as f64 + 0.5).collect();
        assert_eq!(sys.observe(&y), 8.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn initial_state_is_equilibrium_for_random_params(
            k_prol in 0.05f64..5.0, k_tr in 0.05f64..5.0, k_circ in 0.05f64..5.0,
            gamma in 0.0f64..1.0, n0 in 0.1f64..20.0, ec50 in 0.01f64..5.0, emax in 0.0f64..=1.0,
        ) {
            let p = FribergParams { k_prol, k_tr, k_circ, gamma, n0, ec50, emax };
            let y = friberg_initial_state(&p).unwrap();
            let d = friberg_rhs(&[y[0], y[1], y[2], y[3], y[4]], &p, 0.0).unwrap();
            let scale = 1.0 + y.0.iter().map(|v| v.abs()).fold(0.0, f64::max) * (k_prol + k_tr + k_circ);
            prop_assert!(d.iter().all(|v| v.abs() <= 1e-13 * scale), "{:?}", d);
        }
    }
}

//! Four-compartment Zalypsis PK model and the Emax drug-effect link.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Inter-compartment rate constants (1/day). `k_ab` moves drug from `a` to `b`.
///
/// Compartments: plasma (p), fast-exchanging tissue (f), and two
/// slow-exchanging tissues (sl1, sl2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZalypsisPkParams {
    pub k_fp: f64,
    pub k_pf: f64,
    pub k_sl1p: f64,
    pub k_psl1: f64,
    pub k_sl2f: f64,
    pub k_psl2: f64,
    pub k_fsl2: f64,
    pub k_cl: f64,
}

impl ZalypsisPkParams {
    /// Placeholder rates used by tests and example configs.
    ///
    /// These are NOT published population estimates for Zalypsis; they only
    /// give a plausible multi-exponential disposition with a slow terminal
    /// phase.
    pub fn placeholder() -> Self {
        Self {
            k_fp: 12.0,
            k_pf: 18.0,
            k_sl1p: 0.8,
            k_psl1: 3.0,
            k_sl2f: 0.4,
            k_psl2: 1.5,
            k_fsl2: 2.0,
            k_cl: 25.0,
        }
    }

    pub fn zeros() -> Self {
        Self {
            k_fp: 0.0,
            k_pf: 0.0,
            k_sl1p: 0.0,
            k_psl1: 0.0,
            k_sl2f: 0.0,
            k_psl2: 0.0,
            k_fsl2: 0.0,
            k_cl: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [
            self.k_fp, self.k_pf, self.k_sl1p, self.k_psl1, self.k_sl2f, self.k_psl2, self.k_fsl2, self.k_cl,
        ];
        if all.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(ModelError::InvalidParams("PK rate constants must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Derivatives of `(C_p, C_f, C_sl1, C_sl2)`.
///
/// The fast-tissue inflow is always `k_pf·C_p + k_sl2f·C_sl2`. With
/// `literal = false` every outflow reappears as an inflow: plasma loses drug
/// to `sl2` at rate `k_psl2` and the `k_fsl2` outflow of the fast tissue
/// enters `sl2`, so total drug is conserved when `k_cl = 0`. With
/// `literal = true` neither term is added (the originally published form).
///
/// Dosing enters through [`crate::ode::DoseEvent`]s, not through this function.
pub fn zalypsis_pk_rhs(state: &[f64; 4], k: &ZalypsisPkParams, literal: bool) -> [f64; 4] {
    let [cp, cf, csl1, csl2] = *state;
    let (plasma_out, sl2_from_f) = if literal {
        (k.k_pf + k.k_psl1 + k.k_cl, 0.0)
    } else {
        (k.k_pf + k.k_psl1 + k.k_psl2 + k.k_cl, k.k_fsl2 * cf)
    };
    [
        k.k_fp * cf + k.k_sl1p * csl1 - plasma_out * cp,
        k.k_pf * cp + k.k_sl2f * csl2 - (k.k_fp + k.k_fsl2) * cf,
        k.k_psl1 * cp - k.k_sl1p * csl1,
        k.k_psl2 * cp + sl2_from_f - k.k_sl2f * csl2,
    ]
}

/// Emax drug effect `Emax·C/(EC50 + C)`.
pub fn emax_effect(conc: f64, emax: f64, ec50: f64) -> Result<f64, ModelError> {
    if !(ec50 > 0.0) {
        return Err(ModelError::Domain(format!("EC50 must be > 0, got {ec50}")));
    }
    Ok(emax * conc / (ec50 + conc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_rates_give_zero_derivative() {
        let d = zalypsis_pk_rhs(&[1.0, 2.0, 3.0, 4.0], &ZalypsisPkParams::zeros(), false);
        assert_eq!(d, [0.0; 4]);
    }

    #[test]
    fn pure_elimination() {
        let k = ZalypsisPkParams { k_cl: 1.0, ..ZalypsisPkParams::zeros() };
        assert_eq!(zalypsis_pk_rhs(&[1.0, 0.0, 0.0, 0.0], &k, false), [-1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn literal_form_leaks_mass_through_sl2() {
        let k = ZalypsisPkParams { k_psl2: 1.0, k_fsl2: 0.5, ..ZalypsisPkParams::zeros() };
        let d = zalypsis_pk_rhs(&[1.0, 1.0, 0.0, 0.0], &k, true);
        assert_eq!(d, [0.0, -0.5, 0.0, 1.0]);
        assert_eq!(d.iter().sum::<f64>(), 0.5);
        let d = zalypsis_pk_rhs(&[1.0, 1.0, 0.0, 0.0], &k, false);
        assert_eq!(d, [-1.0, -0.5, 0.0, 1.5]);
        assert_eq!(d.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn emax_examples() {
        assert_eq!(emax_effect(0.0, 1.0, 0.14).unwrap(), 0.0);
        assert_relative_eq!(emax_effect(0.14, 0.8, 0.14).unwrap(), 0.4, max_relative = 1e-15);
        assert_relative_eq!(emax_effect(9.0 * 0.14, 1.0, 0.14).unwrap(), 0.9, max_relative = 1e-15);
        assert!(emax_effect(1.0, 1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn mass_balance_without_clearance(
            state in prop::array::uniform4(0.0f64..100.0),
            rates in prop::array::uniform7(0.0f64..50.0),
        ) {
            let k = ZalypsisPkParams {
                k_fp: rates[0], k_pf: rates[1], k_sl1p: rates[2], k_psl1: rates[3],
                k_sl2f: rates[4], k_psl2: rates[5], k_fsl2: rates[6], k_cl: 0.0,
            };
            let d = zalypsis_pk_rhs(&state, &k, false);
            let scale: f64 = 1.0 + d.iter().map(|v| v.abs()).sum::<f64>();
            prop_assert!(d.iter().sum::<f64>().abs() <= 1e-12 * scale);
        }

        #[test]
        fn emax_bounded(c in 0.0f64..1e6, emax in 0.0f64..=1.0, ec50 in 1e-6f64..1e3) {
            let e = emax_effect(c, emax, ec50).unwrap();
            prop_assert!((0.0..=emax).contains(&e));
        }
    }
}

//! Target cell / infected cell / virus model of viral dynamics.

use crate::ode::{DomainError, OdeSystem, StateVector};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TivParams {
    pub beta: f64,
    pub p: f64,
    pub delta: f64,
    pub c: f64,
    pub d_t: f64,
    pub lambda: f64,
    pub t0: f64,
    pub v0: f64,
    pub i0: f64,
}

impl TivParams {
    /// Builds the parameter set with `λ = T0·d_T` and `I0 = c·V0/p`.
    pub fn with_derived_inits(beta: f64, p: f64, delta: f64, c: f64, d_t: f64, t0: f64, v0: f64) -> Result<Self, ModelError> {
        let (lambda, i0) = tiv_derived_inits(t0, v0, p, c, d_t)?;
        let out = Self { beta, p, delta, c, d_t, lambda, t0, v0, i0 };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let rates = [self.beta, self.p, self.delta, self.c, self.d_t, self.lambda, self.t0];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(ModelError::InvalidParams("TIV parameters must be finite and > 0".into()));
        }
        if !(self.v0.is_finite() && self.v0 >= 0.0 && self.i0.is_finite() && self.i0 >= 0.0) {
            return Err(ModelError::InvalidParams("TIV initial virus and infected cells must be >= 0".into()));
        }
        Ok(())
    }

    /// Basic reproduction number `λβp/(d_T·δ·c)`.
    pub fn r0(&self) -> f64 {
        self.lambda * self.beta * self.p / (self.d_t * self.delta * self.c)
    }

    pub fn initial_state(&self) -> StateVector {
        StateVector::new(vec![self.t0, self.i0, self.v0])
    }
}

/// Returns `(λ, I0) = (T0·d_T, c·V0/p)`.
pub fn tiv_derived_inits(t0: f64, v0: f64, p: f64, c: f64, d_t: f64) -> Result<(f64, f64), ModelError> {
    if p == 0.0 {
        return Err(ModelError::Domain("viral production rate p must be non-zero".into()));
    }
    Ok((t0 * d_t, c * v0 / p))
}

/// Derivatives of `(T, I, V)`.
pub fn tiv_rhs(state: &[f64; 3], p: &TivParams) -> [f64; 3] {
    let [t, i, v] = *state;
    let infection = p.beta * v * t;
    [p.lambda - infection - p.d_t * t, infection - p.delta * i, p.p * i - p.c * v]
}

impl OdeSystem for TivParams {
    fn dim(&self) -> usize {
        3
    }

    fn rhs(&self, _t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), DomainError> {
        dydt.copy_from_slice(&tiv_rhs(&[y[0], y[1], y[2]], self));
        Ok(())
    }

    /// log10 viral load.
    fn observe(&self, y: &[f64]) -> f64 {
        y[2].log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table_means() -> TivParams {
        TivParams::with_derived_inits(8e-7, 3500.0, 0.25, 23.0, 0.01, 1.5e6, 10.0).unwrap()
    }

    #[test]
    fn derived_inits() {
        let (lambda, _) = tiv_derived_inits(1.5e6, 10.0, 3500.0, 23.0, 0.01).unwrap();
        assert_relative_eq!(lambda, 1.5e4, max_relative = 1e-15);
        let (_, i0) = tiv_derived_inits(1.5e6, 10.0, 3500.0, 23.0, 0.01).unwrap();
        assert_relative_eq!(i0, 0.06571428571428571, max_relative = 1e-14);
        assert_eq!(tiv_derived_inits(1.5e6, 0.0, 3500.0, 23.0, 0.01).unwrap().1, 0.0);
        assert!(tiv_derived_inits(1.5e6, 10.0, 0.0, 23.0, 0.01).is_err());
    }

    #[test]
    fn uninfected_steady_state() {
        let p = table_means();
        let d = tiv_rhs(&[p.lambda / p.d_t, 0.0, 0.0], &p);
        assert_eq!(d, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn no_infection_decouples() {
        let p = TivParams { beta: 0.0, ..table_means() };
        let d = tiv_rhs(&[1e6, 2.0, 50.0], &p);
        assert_relative_eq!(d[1], -p.delta * 2.0);
        assert_relative_eq!(d[0], p.lambda - p.d_t * 1e6);
    }

    #[test]
    fn derived_infected_cells_balance_virus() {
        let p = table_means();
        let d = tiv_rhs(&[1.5e6, p.i0, 10.0], &p);
        assert!(d[2].abs() < 1e-12);
    }

    #[test]
    fn observation_is_log10_virus() {
        let p = table_means();
        assert_relative_eq!(p.observe(&[1.0, 1.0, 1000.0]), 3.0, max_relative = 1e-15);
    }

    #[test]
    fn table_means_r0() {
        // 1.5e4·8e-7·3500/(0.01·0.25·23)
        assert_relative_eq!(table_means().r0(), 730.4347826086956, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn uninfected_equilibrium_for_random_params(
            beta in 1e-9f64..1e-5, pp in 10.0f64..1e5, delta in 0.01f64..2.0,
            c in 1.0f64..50.0, d_t in 1e-3f64..0.1, t0 in 1e4f64..1e7,
        ) {
            let p = TivParams::with_derived_inits(beta, pp, delta, c, d_t, t0, 1.0).unwrap();
            let d = tiv_rhs(&[p.lambda / p.d_t, 0.0, 0.0], &p);
            prop_assert!(d.iter().all(|v| v.abs() <= 1e-9 * p.lambda));
        }
    }
}

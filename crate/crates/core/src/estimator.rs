//! Output-feedback velocity estimator. Reconstructs the velocity from
//! position measurements and the applied input via a dynamic filter; no
//! operation in this module reads the plant velocity.
//!
//! The filter state η obeys `η̇ = -βη - kr - αq̃`, which involves the
//! unmeasurable velocity error. It is realized here in integral form through
//! the auxiliary state `z` with
//!
//! ```text
//! ż = -(β + k) η - k α p̃,    η = z - (k + α) p̃,
//! ```
//!
//! which needs no differentiation of the position error.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::plant::SystemModel;

/// Filter gains. All must be positive and `beta > alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorGains {
    pub alpha: f64,
    pub k: f64,
    pub beta: f64,
}

impl EstimatorGains {
    pub fn new(alpha: f64, k: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && k > 0.0 && beta > 0.0) {
            return Err(Error::InvalidConfig(
                "estimator gains alpha, k, beta must be strictly positive".into(),
            ));
        }
        if beta <= alpha {
            return Err(Error::InvalidConfig(format!(
                "estimator.beta ({beta}) must exceed estimator.alpha ({alpha})"
            )));
        }
        Ok(Self { alpha, k, beta })
    }
}

/// Estimator state: position estimate, velocity estimate, and the auxiliary
/// integrator `z` realizing the filter output `η = z - (k + α) p̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub p_hat: DVector<f64>,
    pub q_hat: DVector<f64>,
    pub z_aux: DVector<f64>,
}

impl EstimatorState {
    /// Initializes from an initial state estimate and the measured position,
    /// choosing `z = (k + α) p̃` so that `η = 0` at start time for arbitrary
    /// initial estimation error.
    pub fn init(
        xhat0: &DVector<f64>,
        p_measured: &DVector<f64>,
        gains: &EstimatorGains,
    ) -> Result<Self> {
        if !xhat0.len().is_multiple_of(2) {
            return Err(Error::ShapeMismatch {
                what: "initial estimate",
                expected: 2 * p_measured.len(),
                actual: xhat0.len(),
            });
        }
        let n = xhat0.len() / 2;
        if p_measured.len() != n {
            return Err(Error::ShapeMismatch {
                what: "position measurement",
                expected: n,
                actual: p_measured.len(),
            });
        }
        let p_hat = xhat0.rows(0, n).into_owned();
        let q_hat = xhat0.rows(n, n).into_owned();
        let p_tilde = p_measured - &p_hat;
        let z_aux = (gains.k + gains.alpha) * p_tilde;
        Ok(Self {
            p_hat,
            q_hat,
            z_aux,
        })
    }

    /// Full state estimate `[p̂; q̂]`.
    pub fn x_hat(&self) -> DVector<f64> {
        let n = self.p_hat.len();
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&self.p_hat);
        x.rows_mut(n, n).copy_from(&self.q_hat);
        x
    }
}

/// The measurable realization of the filter output, `η = z - (k + α) p̃`.
pub fn eta_of(
    state: &EstimatorState,
    gains: &EstimatorGains,
    p_tilde: &DVector<f64>,
) -> DVector<f64> {
    &state.z_aux - (gains.k + gains.alpha) * p_tilde
}

#[derive(Debug, Clone)]
pub struct EstimatorDerivatives {
    pub p_hat_dot: DVector<f64>,
    pub q_hat_dot: DVector<f64>,
    pub z_aux_dot: DVector<f64>,
}

/// Time derivatives of the estimator state given the measured position and
/// the applied input:
///
/// ```text
/// p̂̇ = q̂
/// q̂̇ = f(x̂) + g(x̂) u + ν,    ν = α² p̃ - (k + α + β) η
/// ż  = -(β + k) η - k α p̃
/// ```
pub fn estimator_derivatives(
    state: &EstimatorState,
    gains: &EstimatorGains,
    model: &SystemModel,
    p_measured: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<EstimatorDerivatives> {
    let n = model.n();
    if p_measured.len() != n {
        return Err(Error::ShapeMismatch {
            what: "position measurement",
            expected: n,
            actual: p_measured.len(),
        });
    }
    let x_hat = state.x_hat();
    let f = model.eval_drift(&x_hat)?;
    let g = model.eval_effectiveness(&x_hat)?;
    let p_tilde = p_measured - &state.p_hat;
    let eta = eta_of(state, gains, &p_tilde);
    let nu = gains.alpha * gains.alpha * &p_tilde - (gains.k + gains.alpha + gains.beta) * &eta;
    Ok(EstimatorDerivatives {
        p_hat_dot: state.q_hat.clone(),
        q_hat_dot: f + g * u + nu,
        z_aux_dot: -(gains.beta + gains.k) * eta - gains.k * gains.alpha * p_tilde,
    })
}

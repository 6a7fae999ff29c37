//! Online actor-critic learning driven by Bellman-error extrapolation over a
//! designer-chosen point set: least-squares critic update with forgetting
//! factor, gradient-following actor update, and the minimum-eigenvalue
//! excitation monitor that replaces persistence of excitation along the
//! trajectory.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::approximator::Basis;
use crate::error::{Error, Result};
use crate::plant::{CostSpec, SystemModel};

/// Critic weights and the time-varying least-squares gain matrix Γ.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticState {
    pub wc: DVector<f64>,
    pub gamma: DMatrix<f64>,
}

impl CriticState {
    pub fn new(wc: DVector<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        let l = wc.len();
        if gamma.nrows() != l || gamma.ncols() != l {
            return Err(Error::ShapeMismatch {
                what: "least-squares gain matrix",
                expected: l * l,
                actual: gamma.nrows() * gamma.ncols(),
            });
        }
        if (&gamma - gamma.transpose()).norm() > 1e-9 * (1.0 + gamma.norm()) {
            return Err(Error::InvalidConfig("gamma0 must be symmetric".into()));
        }
        if gamma.clone().cholesky().is_none() {
            return Err(Error::InvalidConfig(
                "gamma0 must be positive definite".into(),
            ));
        }
        Ok(Self { wc, gamma })
    }
}

/// Actor (policy) weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorState {
    pub wa: DVector<f64>,
}

/// Learning gains. `negate_actor_sum` flips the sign of the actor coupling
/// term for sensitivity studies; the default follows the update law as
/// printed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerGains {
    pub kc: f64,
    pub ka1: f64,
    pub ka2: f64,
    pub gamma1: f64,
    pub beta_forget: f64,
    pub negate_actor_sum: bool,
}

impl LearnerGains {
    pub fn new(kc: f64, ka1: f64, ka2: f64, gamma1: f64, beta_forget: f64) -> Result<Self> {
        for (name, v) in [
            ("kc", kc),
            ("ka1", ka1),
            ("ka2", ka2),
            ("gamma1", gamma1),
            ("beta_forget", beta_forget),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "learner.{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(Self {
            kc,
            ka1,
            ka2,
            gamma1,
            beta_forget,
            negate_actor_sum: false,
        })
    }
}

/// The static states at which the Bellman error is extrapolated.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrapolationSet {
    points: Vec<DVector<f64>>,
}

impl ExtrapolationSet {
    pub fn new(points: Vec<DVector<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidConfig(
                "extrapolation set must contain at least one point".into(),
            ));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "extrapolation point",
                    point_index: Some(i),
                });
            }
        }
        Ok(Self { points })
    }

    /// Uniform grid of `per_axis^dim` points over `[-extent, extent]^dim`.
    /// A single point per axis degenerates to the center.
    pub fn grid(extent: f64, per_axis: usize, dim: usize) -> Result<Self> {
        if per_axis == 0 || dim == 0 {
            return Err(Error::InvalidConfig(
                "grid per_axis and dimension must be positive".into(),
            ));
        }
        if !(extent > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "grid extent must be positive, got {extent}"
            )));
        }
        let axis: Vec<f64> = if per_axis == 1 {
            vec![0.0]
        } else {
            (0..per_axis)
                .map(|i| -extent + 2.0 * extent * i as f64 / (per_axis - 1) as f64)
                .collect()
        };
        let mut points = Vec::with_capacity(per_axis.pow(dim as u32));
        let mut idx = vec![0usize; dim];
        loop {
            points.push(DVector::from_iterator(dim, idx.iter().map(|&i| axis[i])));
            let mut d = 0;
            loop {
                idx[d] += 1;
                if idx[d] < per_axis {
                    break;
                }
                idx[d] = 0;
                d += 1;
                if d == dim {
                    return Self::new(points);
                }
            }
        }
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Precomputes everything about the set that does not depend on the
    /// weights. Points are static, so this happens once per run.
    pub fn prepare(
        &self,
        model: &SystemModel,
        cost: &CostSpec,
        basis: &Basis,
    ) -> Result<Vec<PreparedPoint>> {
        self.points
            .iter()
            .map(|x| PreparedPoint::new(model, cost, basis, x))
            .collect()
    }
}

/// Weight-independent quantities of one extrapolation point. The regressor
/// and Bellman error are affine in the actor weights through the policy, so
/// everything else can be cached.
#[derive(Debug, Clone)]
pub struct PreparedPoint {
    /// σ_p(x) q + σ_q(x) f(x) — the actor-independent part of ω.
    omega_base: DVector<f64>,
    /// σ_q(x) g(x), so ω = omega_base + input_map · û.
    input_map: DMatrix<f64>,
    /// -½ R⁻¹ gᵀ(x) σ_qᵀ(x), so û = policy_dir · Wa.
    policy_dir: DMatrix<f64>,
    /// σ_x(x) [0; g] R⁻¹ [0; g]ᵀ σ_xᵀ(x) = σ_q g R⁻¹ gᵀ σ_qᵀ.
    gain_outer: DMatrix<f64>,
    /// R.
    penalty: DMatrix<f64>,
    /// Q(x).
    state_cost: f64,
}

impl PreparedPoint {
    pub fn new(
        model: &SystemModel,
        cost: &CostSpec,
        basis: &Basis,
        x: &DVector<f64>,
    ) -> Result<Self> {
        model.check_state_dim(x)?;
        if basis.dim() != model.state_dim() {
            return Err(Error::ShapeMismatch {
                what: "basis dimension",
                expected: model.state_dim(),
                actual: basis.dim(),
            });
        }
        let n = model.n();
        let jac = basis.jacobian(x)?;
        let sigma_p = jac.columns(0, n).into_owned();
        let sigma_q = jac.columns(n, n).into_owned();
        let f = model.eval_drift(x)?;
        let g = model.eval_effectiveness(x)?;
        let q = x.rows(n, n).into_owned();
        let input_map = &sigma_q * &g;
        let policy_dir = -0.5 * cost.penalty_inv() * g.transpose() * sigma_q.transpose();
        let gain_outer = &input_map * cost.penalty_inv() * input_map.transpose();
        Ok(Self {
            omega_base: &sigma_p * q + &sigma_q * f,
            input_map,
            policy_dir,
            gain_outer,
            penalty: cost.penalty().clone(),
            state_cost: cost.state_cost(x),
        })
    }

    /// û(x, Wa).
    pub fn policy(&self, wa: &DVector<f64>) -> DVector<f64> {
        &self.policy_dir * wa
    }

    /// ω(x, Wa) = σ_p q + σ_q (f + g û) and ρ = 1 + γ₁ ωᵀω.
    pub fn regressor(&self, wa: &DVector<f64>, gamma1: f64) -> (DVector<f64>, f64) {
        let omega = &self.omega_base + &self.input_map * self.policy(wa);
        let rho = 1.0 + gamma1 * omega.norm_squared();
        (omega, rho)
    }

    /// δ(x, Wc, Wa) = Wcᵀω + Q(x) + ûᵀRû.
    pub fn bellman_error(&self, wc: &DVector<f64>, wa: &DVector<f64>) -> f64 {
        let u = self.policy(wa);
        let omega = &self.omega_base + &self.input_map * &u;
        wc.dot(&omega) + self.state_cost + (u.transpose() * &self.penalty * &u)[(0, 0)]
    }

    pub fn gain_outer(&self) -> &DMatrix<f64> {
        &self.gain_outer
    }
}

/// Regressor at a single state: `ω = σ_p(x) q + σ_q(x)(f(x) + g(x) û(x, Wa))`
/// and its normalization `ρ = 1 + γ₁ ωᵀω`.
pub fn regressor(
    model: &SystemModel,
    cost: &CostSpec,
    basis: &Basis,
    wa: &DVector<f64>,
    x: &DVector<f64>,
    gamma1: f64,
) -> Result<(DVector<f64>, f64)> {
    Ok(PreparedPoint::new(model, cost, basis, x)?.regressor(wa, gamma1))
}

/// Bellman error `δ = Wcᵀω(x, Wa) + Q(x) + û(x, Wa)ᵀ R û(x, Wa)`, the HJB
/// residual of the weight parametrization expanded through the basis.
pub fn bellman_error(
    model: &SystemModel,
    cost: &CostSpec,
    basis: &Basis,
    wc: &DVector<f64>,
    wa: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<f64> {
    check_weight_len(basis, wc)?;
    check_weight_len(basis, wa)?;
    Ok(PreparedPoint::new(model, cost, basis, x)?.bellman_error(wc, wa))
}

/// All weight rates in one pass over the point set:
///
/// ```text
/// Ẇc = -(kc/N) Γ Σᵢ (ωᵢ/ρᵢ) δᵢ
/// Γ̇  = β Γ - (kc/N) Γ (Σᵢ ωᵢωᵢᵀ/ρᵢ²) Γ
/// Ẇa = -ka1 (Wa - Wc) - ka2 Wa + Σᵢ kc (Gᵢᵀ Wa)(ωᵢᵀ Wc) / (4 N ρᵢ)
/// ```
///
/// The reduction is a fixed-order sequential sum, so runs are reproducible
/// bit for bit.
#[derive(Debug, Clone)]
pub struct LearnerRates {
    pub wc_dot: DVector<f64>,
    pub gamma_dot: DMatrix<f64>,
    pub wa_dot: DVector<f64>,
}

pub fn learning_rates(
    critic: &CriticState,
    actor: &ActorState,
    gains: &LearnerGains,
    points: &[PreparedPoint],
) -> Result<LearnerRates> {
    let l = critic.wc.len();
    let n_points = points.len() as f64;
    let mut weighted_residual = DVector::zeros(l);
    let mut outer_sum = DMatrix::zeros(l, l);
    let mut actor_sum = DVector::zeros(l);

    for (i, point) in points.iter().enumerate() {
        let (omega, rho) = point.regressor(&actor.wa, gains.gamma1);
        let delta = point.bellman_error(&critic.wc, &actor.wa);
        if !delta.is_finite() || !omega.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "bellman error extrapolation",
                point_index: Some(i),
            });
        }
        weighted_residual.axpy(delta / rho, &omega, 1.0);
        outer_sum.ger(1.0 / (rho * rho), &omega, &omega, 1.0);
        let coupling = point.gain_outer().transpose() * &actor.wa;
        actor_sum.axpy(
            gains.kc * omega.dot(&critic.wc) / (4.0 * n_points * rho),
            &coupling,
            1.0,
        );
    }

    let wc_dot = -(gains.kc / n_points) * &critic.gamma * weighted_residual;
    let gamma_dot = gains.beta_forget * &critic.gamma
        - (gains.kc / n_points) * &critic.gamma * &outer_sum * &critic.gamma;
    let sum_sign = if gains.negate_actor_sum { -1.0 } else { 1.0 };
    let wa_dot =
        -gains.ka1 * (&actor.wa - &critic.wc) - gains.ka2 * &actor.wa + sum_sign * actor_sum;
    Ok(LearnerRates {
        wc_dot,
        gamma_dot,
        wa_dot,
    })
}

/// Critic rates `(Ẇc, Γ̇)` over an extrapolation set.
pub fn critic_derivatives(
    critic: &CriticState,
    actor: &ActorState,
    gains: &LearnerGains,
    set: &ExtrapolationSet,
    model: &SystemModel,
    cost: &CostSpec,
    basis: &Basis,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let points = set.prepare(model, cost, basis)?;
    learning_rates(critic, actor, gains, &points).map(|r| (r.wc_dot, r.gamma_dot))
}

/// Actor rate `Ẇa` over an extrapolation set.
pub fn actor_derivative(
    critic: &CriticState,
    actor: &ActorState,
    gains: &LearnerGains,
    set: &ExtrapolationSet,
    model: &SystemModel,
    cost: &CostSpec,
    basis: &Basis,
) -> Result<DVector<f64>> {
    let points = set.prepare(model, cost, basis)?;
    learning_rates(critic, actor, gains, &points).map(|r| r.wa_dot)
}

/// The excitation matrix `(1/N) Σᵢ ωᵢωᵢᵀ/ρᵢ²`, whose smallest eigenvalue is
/// the instantaneous excitation level of the point set under the current
/// actor weights.
pub fn excitation_matrix(points: &[PreparedPoint], wa: &DVector<f64>, gamma1: f64) -> DMatrix<f64> {
    let l = wa.len();
    let mut m = DMatrix::zeros(l, l);
    for point in points {
        let (omega, rho) = point.regressor(wa, gamma1);
        m.ger(1.0 / (rho * rho), &omega, &omega, 1.0);
    }
    m / points.len() as f64
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(sym: &DMatrix<f64>) -> f64 {
    sym.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Instantaneous excitation level λ_min((1/N) Σ ωᵢωᵢᵀ/ρᵢ²).
pub fn excitation_lambda_min(
    set: &ExtrapolationSet,
    actor: &ActorState,
    model: &SystemModel,
    cost: &CostSpec,
    basis: &Basis,
    gains: &LearnerGains,
) -> Result<f64> {
    let points = set.prepare(model, cost, basis)?;
    Ok(lambda_min(&excitation_matrix(
        &points,
        &actor.wa,
        gains.gamma1,
    )))
}

/// Sliding-window accumulator for the integral excitation condition:
/// trapezoidal integral of the excitation matrix over the trailing window of
/// length `horizon`, reported through its smallest eigenvalue.
#[derive(Debug, Clone)]
pub struct ExcitationWindow {
    horizon: f64,
    samples: VecDeque<(f64, DMatrix<f64>)>,
}

impl ExcitationWindow {
    pub fn new(horizon: f64) -> Self {
        Self {
            horizon,
            samples: VecDeque::new(),
        }
    }

    pub fn push(&mut self, t: f64, excitation: DMatrix<f64>) {
        self.samples.push_back((t, excitation));
        while let Some(&(t0, _)) = self.samples.front() {
            if t - t0 > self.horizon && self.samples.len() > 2 {
                self.samples.pop_front();
            } else {
                break;
            }
        }
    }

    /// λ_min of the windowed integral, or None until two samples exist.
    pub fn windowed_lambda_min(&self) -> Option<f64> {
        if self.samples.len() < 2 {
            return None;
        }
        let l = self.samples[0].1.nrows();
        let mut integral = DMatrix::zeros(l, l);
        for pair in self.samples.iter().zip(self.samples.iter().skip(1)) {
            let ((t0, m0), (t1, m1)) = pair;
            integral += (m0 + m1) * (0.5 * (t1 - t0));
        }
        Some(lambda_min(&integral))
    }

    pub fn span(&self) -> f64 {
        match (self.samples.front(), self.samples.back()) {
            (Some(&(t0, _)), Some(&(t1, _))) => t1 - t0,
            _ => 0.0,
        }
    }
}

fn check_weight_len(basis: &Basis, w: &DVector<f64>) -> Result<()> {
    if w.len() != basis.len() {
        return Err(Error::ShapeMismatch {
            what: "weight vector",
            expected: basis.len(),
            actual: w.len(),
        });
    }
    Ok(())
}

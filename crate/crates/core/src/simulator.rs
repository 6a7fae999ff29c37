//! Fixed-step integration of the coupled closed loop: plant under the
//! output-feedback policy û(x̂, Wa), velocity estimator, and actor-critic
//! weight dynamics, advanced together by classical fourth-order Runge-Kutta
//! on the full state bundle. Runs are deterministic: identical configurations
//! produce bit-identical traces.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::approximator::Basis;
use crate::error::{Error, Result};
use crate::estimator::{estimator_derivatives, eta_of, EstimatorGains, EstimatorState};
use crate::learner::{
    excitation_matrix, lambda_min, learning_rates, ActorState, CriticState, ExtrapolationSet,
    LearnerGains, PreparedPoint,
};
use crate::plant::{CostSpec, SystemModel};

/// Fully resolved simulation configuration. Construct directly for library
/// use; scenario files resolve into this via [`crate::scenario::Scenario`].
#[derive(Clone)]
pub struct SimConfig {
    pub model: SystemModel,
    pub cost: CostSpec,
    pub basis: Basis,
    pub set: ExtrapolationSet,
    pub estimator_gains: EstimatorGains,
    pub learner_gains: LearnerGains,
    pub t_final: f64,
    pub dt: f64,
    pub x0: DVector<f64>,
    pub xhat0: DVector<f64>,
    pub wc0: DVector<f64>,
    pub wa0: DVector<f64>,
    pub gamma0: DMatrix<f64>,
    pub log_stride: usize,
}

/// One point of the coupled state bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub x: DVector<f64>,
    pub estimator: EstimatorState,
    pub critic: CriticState,
    pub actor: ActorState,
}

/// Prepared closed-loop vector field plus the RK4 stepper over it.
pub struct Engine {
    model: SystemModel,
    cost: CostSpec,
    basis: Basis,
    estimator_gains: EstimatorGains,
    learner_gains: LearnerGains,
    points: Vec<PreparedPoint>,
    dt: f64,
    n: usize,
    l: usize,
}

impl Engine {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        let n = cfg.model.n();
        let l = cfg.basis.len();
        if !(cfg.dt > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dt must be positive, got {}",
                cfg.dt
            )));
        }
        if cfg.t_final < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "t_final must be nonnegative, got {}",
                cfg.t_final
            )));
        }
        if cfg.log_stride == 0 {
            return Err(Error::InvalidConfig("log_stride must be at least 1".into()));
        }
        if cfg.basis.dim() != 2 * n {
            return Err(Error::InvalidConfig(format!(
                "basis dimension {} does not match state dimension {}",
                cfg.basis.dim(),
                2 * n
            )));
        }
        if cfg.cost.control_dim() != cfg.model.m() {
            return Err(Error::InvalidConfig(
                "control penalty dimension does not match model input dimension".into(),
            ));
        }
        for (name, v, want) in [
            ("x0", cfg.x0.len(), 2 * n),
            ("xhat0", cfg.xhat0.len(), 2 * n),
            ("wc0", cfg.wc0.len(), l),
            ("wa0", cfg.wa0.len(), l),
        ] {
            if v != want {
                return Err(Error::InvalidConfig(format!(
                    "{name} has length {v}, expected {want}"
                )));
            }
        }
        if cfg.gamma0.nrows() != l || cfg.gamma0.ncols() != l {
            return Err(Error::InvalidConfig(format!("gamma0 must be {l}x{l}")));
        }
        let steps = n_steps(cfg.t_final, cfg.dt);
        if !steps.is_multiple_of(cfg.log_stride) {
            return Err(Error::InvalidConfig(format!(
                "log_stride {} must divide the step count {steps} to keep the trace grid uniform",
                cfg.log_stride
            )));
        }
        let points = cfg.set.prepare(&cfg.model, &cfg.cost, &cfg.basis)?;
        Ok(Self {
            model: cfg.model.clone(),
            cost: cfg.cost.clone(),
            basis: cfg.basis.clone(),
            estimator_gains: cfg.estimator_gains,
            learner_gains: cfg.learner_gains,
            points,
            dt: cfg.dt,
            n,
            l,
        })
    }

    /// Initial bundle with the filter state chosen so η(0) = 0.
    pub fn initial_state(&self, cfg: &SimConfig) -> Result<SimState> {
        let p0 = cfg.x0.rows(0, self.n).into_owned();
        let estimator = EstimatorState::init(&cfg.xhat0, &p0, &self.estimator_gains)?;
        Ok(SimState {
            t: 0.0,
            x: cfg.x0.clone(),
            estimator,
            critic: CriticState {
                wc: cfg.wc0.clone(),
                gamma: cfg.gamma0.clone(),
            },
            actor: ActorState {
                wa: cfg.wa0.clone(),
            },
        })
    }

    /// The applied control û(x̂, Wa). This is the only control path in the
    /// loop; it sees the state estimate and the actor weights, never the
    /// plant velocity.
    pub fn control(&self, x_hat: &DVector<f64>, wa: &DVector<f64>) -> Result<DVector<f64>> {
        crate::approximator::policy_hat(&self.model, &self.cost, &self.basis, wa, x_hat)
    }

    pub fn points(&self) -> &[PreparedPoint] {
        &self.points
    }

    pub fn flat_dim(&self) -> usize {
        5 * self.n + 2 * self.l + self.l * self.l
    }

    /// Bundle layout: `[x | p̂ | q̂ | z | Wc | Wa | Γ (row-major)]`.
    pub fn pack(&self, s: &SimState) -> DVector<f64> {
        let (n, l) = (self.n, self.l);
        let mut y = DVector::zeros(self.flat_dim());
        y.rows_mut(0, 2 * n).copy_from(&s.x);
        y.rows_mut(2 * n, n).copy_from(&s.estimator.p_hat);
        y.rows_mut(3 * n, n).copy_from(&s.estimator.q_hat);
        y.rows_mut(4 * n, n).copy_from(&s.estimator.z_aux);
        y.rows_mut(5 * n, l).copy_from(&s.critic.wc);
        y.rows_mut(5 * n + l, l).copy_from(&s.actor.wa);
        for (idx, v) in s.critic.gamma.transpose().iter().enumerate() {
            y[5 * n + 2 * l + idx] = *v;
        }
        y
    }

    pub fn unpack(&self, t: f64, y: &DVector<f64>) -> SimState {
        let (n, l) = (self.n, self.l);
        let gamma_flat = y.rows(5 * n + 2 * l, l * l);
        let mut gamma = DMatrix::zeros(l, l);
        for r in 0..l {
            for c in 0..l {
                gamma[(r, c)] = gamma_flat[r * l + c];
            }
        }
        SimState {
            t,
            x: y.rows(0, 2 * n).into_owned(),
            estimator: EstimatorState {
                p_hat: y.rows(2 * n, n).into_owned(),
                q_hat: y.rows(3 * n, n).into_owned(),
                z_aux: y.rows(4 * n, n).into_owned(),
            },
            critic: CriticState {
                wc: y.rows(5 * n, l).into_owned(),
                gamma,
            },
            actor: ActorState {
                wa: y.rows(5 * n + l, l).into_owned(),
            },
        }
    }

    /// The coupled vector field on the flat bundle. Shared by the main RK4
    /// stepper and the verifier's low-order reference integrator.
    pub fn derivative(&self, t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.unpack(t, y);
        let x_hat = s.estimator.x_hat();
        let u = self.control(&x_hat, &s.actor.wa)?;

        let f = self.model.eval_drift(&s.x)?;
        let g = self.model.eval_effectiveness(&s.x)?;
        let qdot = f + g * &u;

        let p_measured = s.x.rows(0, self.n).into_owned();
        let est = estimator_derivatives(
            &s.estimator,
            &self.estimator_gains,
            &self.model,
            &p_measured,
            &u,
        )?;
        let learn = learning_rates(&s.critic, &s.actor, &self.learner_gains, &self.points)?;

        let (n, l) = (self.n, self.l);
        let mut dy = DVector::zeros(self.flat_dim());
        dy.rows_mut(0, n).copy_from(&s.x.rows(n, n).into_owned());
        dy.rows_mut(n, n).copy_from(&qdot);
        dy.rows_mut(2 * n, n).copy_from(&est.p_hat_dot);
        dy.rows_mut(3 * n, n).copy_from(&est.q_hat_dot);
        dy.rows_mut(4 * n, n).copy_from(&est.z_aux_dot);
        dy.rows_mut(5 * n, l).copy_from(&learn.wc_dot);
        dy.rows_mut(5 * n + l, l).copy_from(&learn.wa_dot);
        for (idx, v) in learn.gamma_dot.transpose().iter().enumerate() {
            dy[5 * n + 2 * l + idx] = *v;
        }

        if let Some(name) = self.nonfinite_block(&dy) {
            return Err(Error::Divergence {
                time: t,
                subsystem: name,
            });
        }
        Ok(dy)
    }

    /// Advances the bundle by one RK4 step. The gain matrix is re-symmetrized
    /// afterwards to keep floating-point asymmetry from accumulating.
    pub fn step(&self, s: &SimState) -> Result<SimState> {
        let y = self.pack(s);
        let mut field = |t: f64, y: &DVector<f64>| self.derivative(t, y);
        let y_next = rk4_step(&mut field, s.t, &y, self.dt)?;
        let mut next = self.unpack(s.t + self.dt, &y_next);
        let sym = (&next.critic.gamma + next.critic.gamma.transpose()) * 0.5;
        next.critic.gamma = sym;
        if let Some(name) = self.nonfinite_block(&self.pack(&next)) {
            return Err(Error::Divergence {
                time: next.t,
                subsystem: name,
            });
        }
        Ok(next)
    }

    fn nonfinite_block(&self, y: &DVector<f64>) -> Option<&'static str> {
        let (n, l) = (self.n, self.l);
        let blocks: [(usize, usize, &'static str); 5] = [
            (0, 2 * n, "plant"),
            (2 * n, 3 * n, "estimator"),
            (5 * n, l, "critic"),
            (5 * n + l, l, "actor"),
            (5 * n + 2 * l, l * l, "gain matrix"),
        ];
        for (start, len, name) in blocks {
            if !y.rows(start, len).iter().all(|v| v.is_finite()) {
                return Some(name);
            }
        }
        None
    }
}

/// One classical RK4 step of `ẏ = field(t, y)`.
pub fn rk4_step<F>(field: &mut F, t: f64, y: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = field(t, y)?;
    let k2 = field(t + 0.5 * h, &(y + 0.5 * h * &k1))?;
    let k3 = field(t + 0.5 * h, &(y + 0.5 * h * &k2))?;
    let k4 = field(t + h, &(y + h * &k3))?;
    Ok(y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// One explicit Euler step; the verifier's reference scheme.
pub fn euler_step<F>(field: &mut F, t: f64, y: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    Ok(y + h * field(t, y)?)
}

fn n_steps(t_final: f64, dt: f64) -> usize {
    (t_final / dt).round() as usize
}

/// Time-indexed record of a run. All columns share one uniform time grid.
/// The filter output η is logged alongside the CSV columns so analysis
/// signals can be reconstructed offline.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub x_hat: Vec<DVector<f64>>,
    pub eta: Vec<DVector<f64>>,
    pub wc: Vec<DVector<f64>>,
    pub wa: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub delta_t: Vec<f64>,
    pub lambda_min: Vec<f64>,
    pub gamma_min: Vec<f64>,
    pub gamma_max: Vec<f64>,
    pub cost: Vec<f64>,
}

impl SimulationTrace {
    fn with_capacity(samples: usize) -> Self {
        Self {
            t: Vec::with_capacity(samples),
            x: Vec::with_capacity(samples),
            x_hat: Vec::with_capacity(samples),
            eta: Vec::with_capacity(samples),
            wc: Vec::with_capacity(samples),
            wa: Vec::with_capacity(samples),
            u: Vec::with_capacity(samples),
            delta_t: Vec::with_capacity(samples),
            lambda_min: Vec::with_capacity(samples),
            gamma_min: Vec::with_capacity(samples),
            gamma_max: Vec::with_capacity(samples),
            cost: Vec::with_capacity(samples),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn last_index(&self) -> usize {
        self.t.len().saturating_sub(1)
    }

    /// Writes the trace as CSV with a header row. Floats are printed with
    /// Rust's shortest round-trip formatting, so equal traces produce equal
    /// bytes.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let dim = self.x.first().map_or(0, |v| v.len());
        let l = self.wc.first().map_or(0, |v| v.len());
        let m = self.u.first().map_or(0, |v| v.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=dim).map(|i| format!("x{i}")));
        header.extend((1..=dim).map(|i| format!("xhat{i}")));
        header.extend((1..=l).map(|i| format!("wc{i}")));
        header.extend((1..=l).map(|i| format!("wa{i}")));
        if m == 1 {
            header.push("u".into());
        } else {
            header.extend((1..=m).map(|i| format!("u{i}")));
        }
        header.extend(
            ["delta_t", "lam_min", "gamma_min", "gamma_max", "J"]
                .iter()
                .map(|s| s.to_string()),
        );
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row: Vec<String> = Vec::with_capacity(header.len());
            row.push(format!("{}", self.t[k]));
            row.extend(self.x[k].iter().map(|v| format!("{v}")));
            row.extend(self.x_hat[k].iter().map(|v| format!("{v}")));
            row.extend(self.wc[k].iter().map(|v| format!("{v}")));
            row.extend(self.wa[k].iter().map(|v| format!("{v}")));
            row.extend(self.u[k].iter().map(|v| format!("{v}")));
            row.push(format!("{}", self.delta_t[k]));
            row.push(format!("{}", self.lambda_min[k]));
            row.push(format!("{}", self.gamma_min[k]));
            row.push(format!("{}", self.gamma_max[k]));
            row.push(format!("{}", self.cost[k]));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Runs the full closed loop over `[0, t_final]` and returns the trace.
/// `t_final` is rounded to the nearest multiple of `dt`.
pub fn run(cfg: &SimConfig) -> Result<SimulationTrace> {
    let engine = Engine::new(cfg)?;
    let steps = n_steps(cfg.t_final, cfg.dt);
    let mut trace = SimulationTrace::with_capacity(steps / cfg.log_stride + 1);
    let mut state = engine.initial_state(cfg)?;

    let mut accumulated = 0.0;
    let mut prev_rate = log_sample(&engine, cfg, &state, accumulated, &mut trace)?;

    for k in 0..steps {
        state = engine.step(&state)?;
        state.t = (k + 1) as f64 * cfg.dt;
        let u = engine.control(&state.estimator.x_hat(), &state.actor.wa)?;
        let rate = cfg.cost.running_cost(&state.x, &u)?;
        accumulated += 0.5 * (prev_rate + rate) * cfg.dt;
        prev_rate = rate;
        if (k + 1) % cfg.log_stride == 0 {
            log_sample(&engine, cfg, &state, accumulated, &mut trace)?;
        }
    }
    Ok(trace)
}

fn log_sample(
    engine: &Engine,
    cfg: &SimConfig,
    state: &SimState,
    accumulated: f64,
    trace: &mut SimulationTrace,
) -> Result<f64> {
    let x_hat = state.estimator.x_hat();
    let u = engine.control(&x_hat, &state.actor.wa)?;
    let delta = crate::learner::bellman_error(
        &cfg.model,
        &cfg.cost,
        &cfg.basis,
        &state.critic.wc,
        &state.actor.wa,
        &x_hat,
    )?;
    let excitation = excitation_matrix(engine.points(), &state.actor.wa, cfg.learner_gains.gamma1);
    let gamma_eigs = state.critic.gamma.clone().symmetric_eigen().eigenvalues;
    let p_measured = state.x.rows(0, cfg.model.n()).into_owned();
    let p_tilde = &p_measured - &state.estimator.p_hat;
    let rate = cfg.cost.running_cost(&state.x, &u)?;

    trace.t.push(state.t);
    trace.x.push(state.x.clone());
    trace.x_hat.push(x_hat);
    trace
        .eta
        .push(eta_of(&state.estimator, &cfg.estimator_gains, &p_tilde));
    trace.wc.push(state.critic.wc.clone());
    trace.wa.push(state.actor.wa.clone());
    trace.u.push(u);
    trace.delta_t.push(delta);
    trace.lambda_min.push(lambda_min(&excitation));
    trace
        .gamma_min
        .push(gamma_eigs.iter().cloned().fold(f64::INFINITY, f64::min));
    trace
        .gamma_max
        .push(gamma_eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    trace.cost.push(accumulated);
    Ok(rate)
}

/// Trapezoidal quadrature of the running cost over a logged trace.
pub fn accumulate_cost(trace: &SimulationTrace, cost: &CostSpec) -> Result<f64> {
    let mut total = 0.0;
    for k in 1..trace.len() {
        let r0 = cost.running_cost(&trace.x[k - 1], &trace.u[k - 1])?;
        let r1 = cost.running_cost(&trace.x[k], &trace.u[k])?;
        total += 0.5 * (r0 + r1) * (trace.t[k] - trace.t[k - 1]);
    }
    Ok(total)
}

/// Estimator testbench trace: plant driven by an externally supplied input
/// (a function of time and the current state estimate), estimator running
/// alongside, no learning.
#[derive(Debug, Clone)]
pub struct EstimatorRun {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub x_hat: Vec<DVector<f64>>,
    pub eta: Vec<DVector<f64>>,
    pub p_tilde: Vec<DVector<f64>>,
}

/// Integrates plant + estimator only, with the control given by
/// `input(t, x̂)`. The input closure sees the estimate, never the plant
/// state, so the output-feedback discipline is preserved.
pub fn run_estimator_only(
    model: &SystemModel,
    gains: &EstimatorGains,
    x0: &DVector<f64>,
    xhat0: &DVector<f64>,
    input: &dyn Fn(f64, &DVector<f64>) -> DVector<f64>,
    t_final: f64,
    dt: f64,
) -> Result<EstimatorRun> {
    let n = model.n();
    model.check_state_dim(x0)?;
    model.check_state_dim(xhat0)?;
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig("dt must be positive".into()));
    }
    let p0 = x0.rows(0, n).into_owned();
    let est0 = EstimatorState::init(xhat0, &p0, gains)?;

    // Flat layout: [x | p̂ | q̂ | z].
    let dim = 5 * n;
    let mut y = DVector::zeros(dim);
    y.rows_mut(0, 2 * n).copy_from(x0);
    y.rows_mut(2 * n, n).copy_from(&est0.p_hat);
    y.rows_mut(3 * n, n).copy_from(&est0.q_hat);
    y.rows_mut(4 * n, n).copy_from(&est0.z_aux);

    let mut field = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let x = y.rows(0, 2 * n).into_owned();
        let est = EstimatorState {
            p_hat: y.rows(2 * n, n).into_owned(),
            q_hat: y.rows(3 * n, n).into_owned(),
            z_aux: y.rows(4 * n, n).into_owned(),
        };
        let u = input(t, &est.x_hat());
        let f = model.eval_drift(&x)?;
        let g = model.eval_effectiveness(&x)?;
        let p_measured = x.rows(0, n).into_owned();
        let d = estimator_derivatives(&est, gains, model, &p_measured, &u)?;
        let mut dy = DVector::zeros(dim);
        dy.rows_mut(0, n).copy_from(&x.rows(n, n).into_owned());
        dy.rows_mut(n, n).copy_from(&(f + g * u));
        dy.rows_mut(2 * n, n).copy_from(&d.p_hat_dot);
        dy.rows_mut(3 * n, n).copy_from(&d.q_hat_dot);
        dy.rows_mut(4 * n, n).copy_from(&d.z_aux_dot);
        if !dy.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                time: t,
                subsystem: "estimator testbench",
            });
        }
        Ok(dy)
    };

    let steps = n_steps(t_final, dt);
    let mut out = EstimatorRun {
        t: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        x_hat: Vec::with_capacity(steps + 1),
        eta: Vec::with_capacity(steps + 1),
        p_tilde: Vec::with_capacity(steps + 1),
    };
    let log = |t: f64, y: &DVector<f64>, out: &mut EstimatorRun| {
        let x = y.rows(0, 2 * n).into_owned();
        let est = EstimatorState {
            p_hat: y.rows(2 * n, n).into_owned(),
            q_hat: y.rows(3 * n, n).into_owned(),
            z_aux: y.rows(4 * n, n).into_owned(),
        };
        let p_tilde = x.rows(0, n).into_owned() - &est.p_hat;
        out.t.push(t);
        out.x.push(x);
        out.x_hat.push(est.x_hat());
        out.eta.push(eta_of(&est, gains, &p_tilde));
        out.p_tilde.push(p_tilde);
    };
    log(0.0, &y, &mut out);
    for k in 0..steps {
        let t = k as f64 * dt;
        y = rk4_step(&mut field, t, &y, dt)?;
        log((k + 1) as f64 * dt, &y, &mut out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::vamvoudakis2d;
    use std::sync::Arc;

    fn benchmark_config() -> SimConfig {
        let (model, cost) = vamvoudakis2d();
        SimConfig {
            model,
            cost,
            basis: Basis::quadratic2d(),
            set: ExtrapolationSet::grid(1.0, 5, 2).unwrap(),
            estimator_gains: EstimatorGains::new(0.2, 5.0, 5.0).unwrap(),
            learner_gains: LearnerGains::new(0.2, 100.0, 0.1, 1.0, 3.0).unwrap(),
            t_final: 1.0,
            dt: 1e-3,
            x0: DVector::from_vec(vec![1.0, 1.0]),
            xhat0: DVector::from_vec(vec![-1.0, -1.0]),
            wc0: DVector::from_element(3, 0.5),
            wa0: DVector::from_element(3, 0.5),
            gamma0: DMatrix::identity(3, 3) * 50.0,
            log_stride: 1,
        }
    }

    fn zero_model(n: usize, m: usize) -> SystemModel {
        SystemModel::new(
            n,
            m,
            Arc::new(move |_: &DVector<f64>| DVector::zeros(n)),
            Arc::new(move |_: &DVector<f64>| DMatrix::zeros(n, m)),
        )
        .unwrap()
    }

    fn zero_config(x0: DVector<f64>) -> SimConfig {
        let model = zero_model(1, 1);
        let cost = CostSpec::new(
            Arc::new(|x: &DVector<f64>| x[1] * x[1]),
            DMatrix::identity(1, 1),
            crate::plant::AssumptionCase::PositiveDefinite,
            2,
        )
        .unwrap();
        SimConfig {
            model,
            cost,
            basis: Basis::quadratic2d(),
            set: ExtrapolationSet::grid(1.0, 3, 2).unwrap(),
            estimator_gains: EstimatorGains {
                alpha: 0.0,
                k: 0.0,
                beta: 0.0,
            },
            learner_gains: LearnerGains {
                kc: 0.0,
                ka1: 0.0,
                ka2: 0.0,
                gamma1: 1.0,
                beta_forget: 0.0,
                negate_actor_sum: false,
            },
            t_final: 0.5,
            dt: 1e-2,
            x0: x0.clone(),
            xhat0: x0,
            wc0: DVector::zeros(3),
            wa0: DVector::zeros(3),
            gamma0: DMatrix::zeros(3, 3),
            log_stride: 1,
        }
    }

    #[test]
    fn zero_dynamics_leaves_bundle_unchanged() {
        // Zero drift, zero effectiveness, zero gains, zero velocity: nothing
        // moves except time.
        let cfg = zero_config(DVector::from_vec(vec![0.7, 0.0]));
        let engine = Engine::new(&cfg).unwrap();
        let s0 = engine.initial_state(&cfg).unwrap();
        let s1 = engine.step(&s0).unwrap();
        assert_eq!(s1.x, s0.x);
        assert_eq!(s1.estimator, s0.estimator);
        assert_eq!(s1.critic, s0.critic);
        assert_eq!(s1.actor, s0.actor);
        assert!((s1.t - cfg.dt).abs() < 1e-15);
    }

    #[test]
    fn zero_config_from_origin_gives_zero_trace() {
        let cfg = zero_config(DVector::zeros(2));
        let trace = run(&cfg).unwrap();
        assert_eq!(trace.len(), 51);
        for k in 0..trace.len() {
            assert_eq!(trace.x[k].norm(), 0.0);
            assert_eq!(trace.x_hat[k].norm(), 0.0);
            assert_eq!(trace.wc[k].norm(), 0.0);
            assert_eq!(trace.wa[k].norm(), 0.0);
            assert_eq!(trace.u[k].norm(), 0.0);
            assert_eq!(trace.delta_t[k], 0.0);
            assert_eq!(trace.lambda_min[k], 0.0);
            assert_eq!(trace.cost[k], 0.0);
        }
    }

    #[test]
    fn single_step_is_consistent_with_local_slope() {
        let cfg = benchmark_config();
        let engine = Engine::new(&cfg).unwrap();
        let s0 = engine.initial_state(&cfg).unwrap();
        let s1 = engine.step(&s0).unwrap();
        let u0 = engine.control(&s0.estimator.x_hat(), &s0.actor.wa).unwrap();
        let f0 = cfg.model.eval_drift(&s0.x).unwrap();
        let g0 = cfg.model.eval_effectiveness(&s0.x).unwrap();
        let q0 = s0.x.rows(1, 1).into_owned();
        let slope = q0.norm() + (f0 + g0 * u0).norm();
        let dx = (&s1.x - &s0.x).norm();
        assert!(
            dx <= cfg.dt * slope * 1.05,
            "dx {dx}, bound {}",
            cfg.dt * slope
        );
        assert!(s1.x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn t_final_zero_yields_single_sample() {
        let mut cfg = benchmark_config();
        cfg.t_final = 0.0;
        let trace = run(&cfg).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace.t[0], 0.0);
        assert_eq!(trace.x[0], cfg.x0);
    }

    #[test]
    fn runs_are_bit_identical() {
        let cfg = benchmark_config();
        let t1 = run(&cfg).unwrap();
        let t2 = run(&cfg).unwrap();
        assert_eq!(t1, t2);
        let mut csv1 = Vec::new();
        let mut csv2 = Vec::new();
        t1.write_csv(&mut csv1).unwrap();
        t2.write_csv(&mut csv2).unwrap();
        assert_eq!(csv1, csv2);
    }

    #[test]
    fn csv_header_matches_benchmark_shape() {
        let mut cfg = benchmark_config();
        cfg.t_final = 0.01;
        let trace = run(&cfg).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "t,x1,x2,xhat1,xhat2,wc1,wc2,wc3,wa1,wa2,wa3,u,delta_t,lam_min,gamma_min,gamma_max,J"
        );
        assert_eq!(text.lines().count(), trace.len() + 1);
    }

    #[test]
    fn control_path_cannot_see_plant_velocity() {
        // Two bundles identical except for the plant velocity: every
        // derivative block other than the plant's own must match exactly.
        let cfg = benchmark_config();
        let engine = Engine::new(&cfg).unwrap();
        let s = engine.initial_state(&cfg).unwrap();
        let mut s_perturbed = s.clone();
        s_perturbed.x[1] += 17.0;
        let d1 = engine.derivative(0.0, &engine.pack(&s)).unwrap();
        let d2 = engine.derivative(0.0, &engine.pack(&s_perturbed)).unwrap();
        let n = 1;
        let l = 3;
        // Estimator, critic, actor, and gain blocks agree; only the plant
        // block responds to its own velocity.
        assert_eq!(
            d1.rows(2 * n, 3 * n + 2 * l + l * l).into_owned(),
            d2.rows(2 * n, 3 * n + 2 * l + l * l).into_owned()
        );
        assert_ne!(d1.rows(0, 1).into_owned(), d2.rows(0, 1).into_owned());
    }

    #[test]
    fn gamma_stays_positive_definite_over_short_run() {
        let cfg = benchmark_config();
        let trace = run(&cfg).unwrap();
        for k in 0..trace.len() {
            assert!(
                trace.gamma_min[k] > 0.0,
                "gamma lost definiteness at sample {k}: {}",
                trace.gamma_min[k]
            );
        }
    }

    #[test]
    fn accumulate_cost_examples() {
        let (_, cost) = vamvoudakis2d();
        // Constant x = [0, 1], u = 0 held for 1 s: integral of q^2 is 1.
        let samples = 101;
        let mut trace = SimulationTrace::with_capacity(samples);
        for k in 0..samples {
            trace.t.push(k as f64 * 0.01);
            trace.x.push(DVector::from_vec(vec![0.0, 1.0]));
            trace.x_hat.push(DVector::zeros(2));
            trace.eta.push(DVector::zeros(1));
            trace.wc.push(DVector::zeros(3));
            trace.wa.push(DVector::zeros(3));
            trace.u.push(DVector::zeros(1));
            trace.delta_t.push(0.0);
            trace.lambda_min.push(0.0);
            trace.gamma_min.push(0.0);
            trace.gamma_max.push(0.0);
            trace.cost.push(0.0);
        }
        let j = accumulate_cost(&trace, &cost).unwrap();
        assert!((j - 1.0).abs() < 1e-12);

        let empty = SimulationTrace::with_capacity(0);
        assert_eq!(accumulate_cost(&empty, &cost).unwrap(), 0.0);
    }

    #[test]
    fn in_loop_cost_matches_trace_quadrature_at_stride_one() {
        let cfg = benchmark_config();
        let trace = run(&cfg).unwrap();
        let j = accumulate_cost(&trace, &cfg.cost).unwrap();
        let logged = trace.cost[trace.last_index()];
        assert!((j - logged).abs() < 1e-9, "{j} vs {logged}");
    }

    #[test]
    fn divergence_is_reported_with_time_and_subsystem() {
        let mut cfg = benchmark_config();
        // A step size far beyond the stability region blows the loop up.
        cfg.dt = 50.0;
        cfg.t_final = 500.0;
        match run(&cfg) {
            Err(Error::Divergence { time, subsystem }) => {
                assert!(time >= 0.0);
                assert!(!subsystem.is_empty());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn stride_must_divide_steps() {
        let mut cfg = benchmark_config();
        cfg.log_stride = 7; // 1000 steps not divisible by 7
        assert!(matches!(run(&cfg), Err(Error::InvalidConfig(_))));
        cfg.log_stride = 10;
        let trace = run(&cfg).unwrap();
        assert_eq!(trace.len(), 101);
        let dt_logged = trace.t[1] - trace.t[0];
        assert!((dt_logged - 0.01).abs() < 1e-12);
    }

    #[test]
    fn closed_loop_with_frozen_weights_tracks_velocity() {
        // The estimator-only scenario inside the full loop: adaptation gains
        // at the zero limit freeze the weights at the ideal values, and the
        // estimator must still identify the velocity.
        let mut cfg = benchmark_config();
        cfg.learner_gains = LearnerGains {
            kc: 0.0,
            ka1: 0.0,
            ka2: 0.0,
            gamma1: 1.0,
            beta_forget: 0.0,
            negate_actor_sum: false,
        };
        cfg.wc0 = DVector::from_vec(vec![1.0, 0.0, 1.0]);
        cfg.wa0 = DVector::from_vec(vec![1.0, 0.0, 1.0]);
        cfg.t_final = 10.0;
        let trace = run(&cfg).unwrap();
        let last = trace.last_index();
        assert_eq!(trace.wa[last], cfg.wa0);
        let q_err = (trace.x[last][1] - trace.x_hat[last][1]).abs();
        assert!(q_err < 1e-2, "velocity error at 10 s: {q_err}");
    }

    #[test]
    fn estimator_only_run_tracks_velocity() {
        let (model, _) = vamvoudakis2d();
        let gains = EstimatorGains::new(0.2, 5.0, 5.0).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let xhat0 = DVector::from_vec(vec![-1.0, -1.0]);
        // Stabilizing output-feedback policy at the ideal weights plus a
        // probing sinusoid keeps the trajectory bounded and the input rich.
        let g_of = |x1: f64| (2.0 * x1).cos() + 2.0;
        let input = move |t: f64, x_hat: &DVector<f64>| {
            DVector::from_element(1, -g_of(x_hat[0]) * x_hat[1] + 0.5 * t.sin())
        };
        let out = run_estimator_only(&model, &gains, &x0, &xhat0, &input, 10.0, 1e-3).unwrap();
        let last = out.t.len() - 1;
        let q_err = (out.x[last][1] - out.x_hat[last][1]).abs();
        assert!(q_err < 1e-2, "velocity error at 10 s: {q_err}");
        // Filter output starts at exactly zero.
        assert_eq!(out.eta[0].norm(), 0.0);
    }

    #[test]
    fn integral_form_matches_filter_ode() {
        // The logged η must satisfy the integral realization
        // η(t) = z(0) - ∫(β+k)η - ∫kα p̃ - (k+α) p̃(t)
        // (cumulative Simpson quadrature on the logged grid). The constant
        // z(0) = (k+α) p̃(0) is what makes η(0) = 0 hold for a nonzero
        // initial estimation error.
        let (model, _) = vamvoudakis2d();
        let gains = EstimatorGains::new(0.2, 5.0, 5.0).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let xhat0 = DVector::from_vec(vec![-1.0, -1.0]);
        let g_of = |x1: f64| (2.0 * x1).cos() + 2.0;
        let input = move |t: f64, x_hat: &DVector<f64>| {
            DVector::from_element(1, -g_of(x_hat[0]) * x_hat[1] + 0.5 * t.sin())
        };
        let out = run_estimator_only(&model, &gains, &x0, &xhat0, &input, 10.0, 1e-3).unwrap();
        let dt = out.t[1] - out.t[0];
        let integrand: Vec<f64> = (0..out.t.len())
            .map(|k| {
                -(gains.beta + gains.k) * out.eta[k][0] - gains.k * gains.alpha * out.p_tilde[k][0]
            })
            .collect();
        let z0 = (gains.k + gains.alpha) * out.p_tilde[0][0];
        for &end in &[2500usize, 5000, 7500, 10000] {
            let mut integral = 0.0;
            let mut k = 0;
            while k + 2 <= end {
                integral += dt / 3.0 * (integrand[k] + 4.0 * integrand[k + 1] + integrand[k + 2]);
                k += 2;
            }
            let eta_quad = z0 + integral - (gains.k + gains.alpha) * out.p_tilde[end][0];
            let err = (eta_quad - out.eta[end][0]).abs();
            assert!(
                err <= 1e-6,
                "integral-form mismatch at t={}: {err}",
                out.t[end]
            );
        }
    }
}

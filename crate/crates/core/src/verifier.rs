//! Independent oracles and monitors: HJB residual sweeps, finite-difference
//! gradient checks, a low-order reference integrator for bounding the main
//! scheme's error, offline reconstruction of filter diagnostics, and
//! weight-convergence reports. Everything here is pure over immutable inputs.

use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::approximator::Basis;
use crate::error::{Error, Result};
use crate::estimator::EstimatorGains;
use crate::plant::{CostSpec, SystemModel, ValueFunction};
use crate::simulator::{euler_step, Engine, SimConfig, SimState, SimulationTrace};

/// One named check with its measured value and explicit tolerance. Soft
/// checks are advisory: they are reported but do not fail verification.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub id: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub hard: bool,
    pub detail: String,
}

impl CheckResult {
    fn hard(id: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            id: id.into(),
            passed: measured <= tolerance,
            measured,
            tolerance,
            hard: true,
            detail,
        }
    }

    fn soft(id: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            hard: false,
            ..Self::hard(id, measured, tolerance, detail)
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn push(&mut self, check: CheckResult) {
        self.checks.push(check);
    }

    pub fn all_hard_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.hard)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl std::fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "[{}] {:<28} measured {:>12.4e}  tol {:>8.1e}{}  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.id,
                c.measured,
                c.tolerance,
                if c.hard { "" } else { "  (advisory)" },
                c.detail
            )?;
        }
        Ok(())
    }
}

/// A rectangular grid, `per_axis` points per axis over `[min, max]^dim`.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub per_axis: usize,
    pub dim: usize,
}

impl GridSpec {
    pub fn points(&self) -> Vec<DVector<f64>> {
        let axis: Vec<f64> = if self.per_axis == 1 {
            vec![0.5 * (self.min + self.max)]
        } else {
            (0..self.per_axis)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (self.per_axis - 1) as f64)
                .collect()
        };
        let mut points = Vec::new();
        let mut idx = vec![0usize; self.dim];
        'outer: loop {
            points.push(DVector::from_iterator(
                self.dim,
                idx.iter().map(|&i| axis[i]),
            ));
            let mut d = 0;
            loop {
                idx[d] += 1;
                if idx[d] < self.per_axis {
                    break;
                }
                idx[d] = 0;
                d += 1;
                if d == self.dim {
                    break 'outer;
                }
            }
        }
        points
    }
}

/// Max |HJB residual| of `v` over the grid.
pub fn hjb_sweep(
    model: &SystemModel,
    cost: &CostSpec,
    v: &dyn ValueFunction,
    grid: &GridSpec,
    tolerance: f64,
) -> Result<CheckResult> {
    let mut worst = 0.0_f64;
    for x in grid.points() {
        let r = crate::approximator::hjb_residual(model, cost, v, &x)?.abs();
        worst = worst.max(r);
    }
    Ok(CheckResult::hard(
        "hjb_residual_sweep",
        worst,
        tolerance,
        format!(
            "max |residual| over {}^{} grid on [{}, {}]",
            grid.per_axis, grid.dim, grid.min, grid.max
        ),
    ))
}

/// Central finite-difference gradient of a scalar function.
pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(f: &F, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut grad = DVector::zeros(x.len());
    let mut xp = x.clone();
    let mut xm = x.clone();
    for i in 0..x.len() {
        let step = h * (1.0 + x[i].abs());
        xp[i] = x[i] + step;
        xm[i] = x[i] - step;
        grad[i] = (f(&xp) - f(&xm)) / (2.0 * step);
        xp[i] = x[i];
        xm[i] = x[i];
    }
    grad
}

const FD_STEP: f64 = 1e-5;

/// Deterministic sample of states with norm at most `radius`.
pub fn sample_states(dim: usize, radius: f64, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v = DVector::from_iterator(dim, (0..dim).map(|_| rng.gen_range(-1.0..1.0)));
            let scale = rng.gen_range(0.0..1.0_f64);
            if v.norm() > 0.0 {
                &v * (radius * scale / v.norm())
            } else {
                v
            }
        })
        .collect()
}

/// Worst mixed absolute/relative deviation of the basis Jacobian from
/// central differences of the basis itself, over the given points.
pub fn gradient_check_basis(
    basis: &Basis,
    points: &[DVector<f64>],
    tolerance: f64,
) -> Result<CheckResult> {
    let mut worst = 0.0_f64;
    for x in points {
        let jac = basis.jacobian(x)?;
        for j in 0..basis.len() {
            let row = j;
            let f = |y: &DVector<f64>| basis.eval(y).map(|s| s[row]).unwrap_or(f64::NAN);
            let fd = fd_gradient(&f, x, FD_STEP);
            for i in 0..basis.dim() {
                let denom = 1.0_f64.max(jac[(j, i)].abs());
                worst = worst.max((fd[i] - jac[(j, i)]).abs() / denom);
            }
        }
    }
    Ok(CheckResult::hard(
        "basis_gradient_fd",
        worst,
        tolerance,
        format!("central differences at {} points", points.len()),
    ))
}

/// Same check for any differentiable scalar function.
pub fn gradient_check_value(
    v: &dyn ValueFunction,
    points: &[DVector<f64>],
    tolerance: f64,
    id: &str,
) -> CheckResult {
    let mut worst = 0.0_f64;
    for x in points {
        let grad = v.gradient(x);
        let f = |y: &DVector<f64>| v.value(y);
        let fd = fd_gradient(&f, x, FD_STEP);
        for i in 0..x.len() {
            let denom = 1.0_f64.max(grad[i].abs());
            worst = worst.max((fd[i] - grad[i]).abs() / denom);
        }
    }
    CheckResult::hard(
        id,
        worst,
        tolerance,
        format!("central differences at {} points", points.len()),
    )
}

/// Integrates the same closed-loop vector field as the simulator with
/// explicit Euler at step `dt / refinement`; the low-order oracle for the
/// main integrator.
pub fn reference_integrate(cfg: &SimConfig, refinement: u32) -> Result<SimState> {
    if refinement == 0 {
        return Err(Error::InvalidConfig("refinement must be positive".into()));
    }
    let engine = Engine::new(cfg)?;
    let h = cfg.dt / refinement as f64;
    let steps = (cfg.t_final / h).round() as usize;
    let mut y = engine.pack(&engine.initial_state(cfg)?);
    let mut field = |t: f64, y: &DVector<f64>| engine.derivative(t, y);
    for k in 0..steps {
        y = euler_step(&mut field, k as f64 * h, &y, h)?;
    }
    Ok(engine.unpack(steps as f64 * h, &y))
}

/// Norm over the dynamical part of the bundle (plant, estimator, weights).
/// The gain matrix is excluded: it equilibrates at magnitudes thousands of
/// times larger than the states, so it is compared separately and relatively.
pub fn dynamical_distance(a: &SimState, b: &SimState) -> f64 {
    let mut sq = (&a.x - &b.x).norm_squared();
    sq += (&a.estimator.p_hat - &b.estimator.p_hat).norm_squared();
    sq += (&a.estimator.q_hat - &b.estimator.q_hat).norm_squared();
    sq += (&a.estimator.z_aux - &b.estimator.z_aux).norm_squared();
    sq += (&a.critic.wc - &b.critic.wc).norm_squared();
    sq += (&a.actor.wa - &b.actor.wa).norm_squared();
    sq.sqrt()
}

/// Relative Frobenius distance between the gain matrices of two bundles.
pub fn gamma_relative_distance(a: &SimState, b: &SimState) -> f64 {
    (&a.critic.gamma - &b.critic.gamma).norm() / a.critic.gamma.norm().max(1.0)
}

/// Offline reconstruction of the filter diagnostic `r = q̃ + α p̃ + η` from a
/// logged trace. Needs the plant velocity, so it only exists off-line.
pub fn reconstruct_filter_signal(
    trace: &SimulationTrace,
    gains: &EstimatorGains,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let n = trace.eta.first().map_or(0, |e| e.len());
    let mut r = Vec::with_capacity(trace.len());
    let mut eta = Vec::with_capacity(trace.len());
    for k in 0..trace.len() {
        let p_tilde = trace.x[k].rows(0, n).into_owned() - trace.x_hat[k].rows(0, n).into_owned();
        let q_tilde = trace.x[k].rows(n, n).into_owned() - trace.x_hat[k].rows(n, n).into_owned();
        r.push(q_tilde + gains.alpha * p_tilde + &trace.eta[k]);
        eta.push(trace.eta[k].clone());
    }
    (r, eta)
}

/// Final weight errors against the ideal weights and the first time each
/// weight vector enters the threshold band.
#[derive(Debug, Clone, Serialize)]
pub struct WeightConvergence {
    pub final_wc_error: f64,
    pub final_wa_error: f64,
    pub threshold: f64,
    pub wc_first_passage: Option<f64>,
    pub wa_first_passage: Option<f64>,
}

pub fn monitor_weight_convergence(
    trace: &SimulationTrace,
    w_ideal: &DVector<f64>,
    threshold: f64,
) -> WeightConvergence {
    let inf = |v: &DVector<f64>| v.iter().map(|x| x.abs()).fold(0.0_f64, f64::max);
    let last = trace.last_index();
    let first_passage = |series: &Vec<DVector<f64>>| {
        series
            .iter()
            .position(|w| inf(&(w - w_ideal)) <= threshold)
            .map(|k| trace.t[k])
    };
    WeightConvergence {
        final_wc_error: inf(&(&trace.wc[last] - w_ideal)),
        final_wa_error: inf(&(&trace.wa[last] - w_ideal)),
        threshold,
        wc_first_passage: first_passage(&trace.wc),
        wa_first_passage: first_passage(&trace.wa),
    }
}

/// Advisory monotone-decrease diagnostic: past the transient window, the
/// surrogate `V*(x(t)) + ½|W̃c|² + ½|W̃a|²` should not increase by more than
/// `tol` between consecutive samples.
pub fn lyapunov_surrogate_check(
    trace: &SimulationTrace,
    v_star: &dyn ValueFunction,
    w_ideal: &DVector<f64>,
    transient: f64,
    tol: f64,
) -> CheckResult {
    let surrogate: Vec<f64> = (0..trace.len())
        .map(|k| {
            v_star.value(&trace.x[k])
                + 0.5 * (&trace.wc[k] - w_ideal).norm_squared()
                + 0.5 * (&trace.wa[k] - w_ideal).norm_squared()
        })
        .collect();
    let mut worst_rise = 0.0_f64;
    for k in 1..trace.len() {
        if trace.t[k - 1] < transient {
            continue;
        }
        worst_rise = worst_rise.max(surrogate[k] - surrogate[k - 1]);
    }
    CheckResult::soft(
        "lyapunov_surrogate_decrease",
        worst_rise,
        tol,
        format!("max per-sample rise after {transient} s transient"),
    )
}

/// The full verification suite for a resolved configuration: HJB sweep of
/// the weight expansion, gradient oracles, integrator cross-check over a
/// short horizon, and the excitation monitor at the initial actor weights.
pub fn run_suite(
    cfg: &SimConfig,
    analytic_weights: Option<&DVector<f64>>,
) -> Result<VerificationReport> {
    let mut report = VerificationReport::default();
    let dim = cfg.model.state_dim();
    let sample = sample_states(dim, 2.0, 100, 0x0f_0b_ad_01);

    // Gradient oracles.
    report.push(gradient_check_basis(&cfg.basis, &sample, 1e-6)?);
    if let Some(v) = cfg.model.analytic_value() {
        report.push(gradient_check_value(
            v.as_ref(),
            &sample,
            1e-6,
            "analytic_value_gradient_fd",
        ));
    }

    // HJB residual of the basis expansion at the claimed ideal weights.
    let weights = analytic_weights
        .cloned()
        .or_else(|| cfg.model.analytic_weights().cloned());
    if let Some(w) = weights {
        let grid = GridSpec {
            min: -2.0,
            max: 2.0,
            per_axis: 21,
            dim,
        };
        let expansion = crate::approximator::BasisValue {
            basis: cfg.basis.clone(),
            weights: w.clone(),
        };
        report.push(
            hjb_sweep(&cfg.model, &cfg.cost, &expansion, &grid, 1e-9).map(|mut c| {
                c.id = "hjb_residual_ideal_weights".into();
                c
            })?,
        );

        // Exact-basis Bellman identity at the same weights.
        let mut worst = 0.0_f64;
        for x in cfg.set.points().iter().chain(sample.iter()) {
            let d = crate::learner::bellman_error(&cfg.model, &cfg.cost, &cfg.basis, &w, &w, x)?;
            worst = worst.max(d.abs());
        }
        report.push(CheckResult::hard(
            "bellman_identity_ideal_weights",
            worst,
            1e-9,
            format!(
                "max |delta(W, W, x)| over {} grid + {} sampled states",
                cfg.set.len(),
                sample.len()
            ),
        ));
    }

    // Integrator oracle over a short horizon of the scenario.
    let mut short = cfg.clone();
    short.t_final = cfg.t_final.min(10.0);
    short.log_stride = 1;
    let engine = Engine::new(&short)?;
    let mut state = engine.initial_state(&short)?;
    let steps = (short.t_final / short.dt).round() as usize;
    for _ in 0..steps {
        state = engine.step(&state)?;
    }
    let reference = reference_integrate(&short, 10)?;
    report.push(CheckResult::hard(
        "integrator_oracle_agreement",
        dynamical_distance(&state, &reference),
        1e-3,
        format!(
            "RK4 vs Euler (refinement 10) over {} s; gain-matrix relative gap {:.2e}",
            short.t_final,
            gamma_relative_distance(&state, &reference)
        ),
    ));

    // Excitation of the extrapolation set at the initial actor weights.
    let lam = crate::learner::excitation_lambda_min(
        &cfg.set,
        &crate::learner::ActorState {
            wa: cfg.wa0.clone(),
        },
        &cfg.model,
        &cfg.cost,
        &cfg.basis,
        &cfg.learner_gains,
    )?;
    let mut excitation = CheckResult::soft(
        "excitation_lambda_min",
        0.0,
        0.0,
        format!(
            "lambda_min {:.3e} of the {}-point set at the initial actor weights",
            lam,
            cfg.set.len()
        ),
    );
    excitation.passed = lam > 0.0;
    excitation.measured = lam;
    report.push(excitation);

    Ok(report)
}

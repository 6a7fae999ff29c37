//! Second-order control-affine plants `ṗ = q, q̇ = f(x) + g(x)u, y = p`,
//! the running cost `r(x, u) = Q(x) + uᵀRu`, and the bundled 2-state
//! benchmark with a known quadratic optimal value function.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A continuously differentiable scalar field on the state space, queried for
/// both its value and its gradient. Implemented by analytic value functions
/// and by basis expansions.
pub trait ValueFunction: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
}

pub type ScalarFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
pub type GradientFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// Analytic value function given as a closure pair.
pub struct AnalyticValue {
    pub value: Box<ScalarFn>,
    pub gradient: Box<GradientFn>,
}

impl ValueFunction for AnalyticValue {
    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }
}

type DriftFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type EffectivenessFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A plant of the class above: `n` position/velocity coordinates, `m` inputs,
/// drift `f: R^{2n} -> R^n` and control effectiveness `g: R^{2n} -> R^{n×m}`.
/// Evaluation closures must be pure; the model is freely shareable across
/// threads.
#[derive(Clone)]
pub struct SystemModel {
    n: usize,
    m: usize,
    drift: Arc<DriftFn>,
    effectiveness: Arc<EffectivenessFn>,
    analytic_value: Option<Arc<dyn ValueFunction>>,
    analytic_weights: Option<DVector<f64>>,
}

impl SystemModel {
    /// Registers a model. Fails if `f(0) != 0` or the closures return the
    /// wrong shapes at the origin.
    pub fn new(
        n: usize,
        m: usize,
        drift: Arc<DriftFn>,
        effectiveness: Arc<EffectivenessFn>,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidConfig(
                "model dimensions n and m must be positive".into(),
            ));
        }
        let model = Self {
            n,
            m,
            drift,
            effectiveness,
            analytic_value: None,
            analytic_weights: None,
        };
        let origin = DVector::zeros(2 * n);
        let f0 = model.eval_drift(&origin)?;
        if f0.norm() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "drift must vanish at the origin, got |f(0)| = {:.3e}",
                f0.norm()
            )));
        }
        model.eval_effectiveness(&origin)?;
        Ok(model)
    }

    /// Attaches a known optimal value function and, when the basis is exact,
    /// the ideal weight vector. Both are used only by verification oracles.
    pub fn with_analytic(
        mut self,
        value: Arc<dyn ValueFunction>,
        weights: Option<DVector<f64>>,
    ) -> Self {
        self.analytic_value = Some(value);
        self.analytic_weights = weights;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Full state dimension, `2n`.
    pub fn state_dim(&self) -> usize {
        2 * self.n
    }

    pub fn analytic_value(&self) -> Option<&Arc<dyn ValueFunction>> {
        self.analytic_value.as_ref()
    }

    pub fn analytic_weights(&self) -> Option<&DVector<f64>> {
        self.analytic_weights.as_ref()
    }

    /// Evaluates the drift `f(x)`.
    pub fn eval_drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state_dim(x)?;
        let f = (self.drift)(x);
        if f.len() != self.n {
            return Err(Error::ShapeMismatch {
                what: "drift output",
                expected: self.n,
                actual: f.len(),
            });
        }
        Ok(f)
    }

    /// Evaluates the control effectiveness `g(x)`.
    pub fn eval_effectiveness(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_state_dim(x)?;
        let g = (self.effectiveness)(x);
        if g.nrows() != self.n || g.ncols() != self.m {
            return Err(Error::ShapeMismatch {
                what: "effectiveness output",
                expected: self.n * self.m,
                actual: g.nrows() * g.ncols(),
            });
        }
        Ok(g)
    }

    pub(crate) fn check_state_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != 2 * self.n {
            return Err(Error::ShapeMismatch {
                what: "state vector",
                expected: 2 * self.n,
                actual: x.len(),
            });
        }
        Ok(())
    }
}

/// Which clause of the cost-positivity assumption the state cost claims to
/// satisfy. `PositionDefinite` means `Q` is positive whenever `p != 0`;
/// `VelocityDefinite` means `Q` is positive whenever `q != 0` and the drift
/// on the zero-velocity slice is nonzero for `p != 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssumptionCase {
    PositiveDefinite,
    PositionDefinite,
    VelocityDefinite,
}

/// Running-cost specification `r(x, u) = Q(x) + uᵀRu`.
#[derive(Clone)]
pub struct CostSpec {
    state_cost: Arc<ScalarFn>,
    penalty: DMatrix<f64>,
    penalty_inv: DMatrix<f64>,
    pub assumption_case: AssumptionCase,
}

impl CostSpec {
    /// Builds a cost. `penalty` must be symmetric positive definite and
    /// `Q(0)` must vanish.
    pub fn new(
        state_cost: Arc<ScalarFn>,
        penalty: DMatrix<f64>,
        assumption_case: AssumptionCase,
        state_dim: usize,
    ) -> Result<Self> {
        if penalty.nrows() != penalty.ncols() {
            return Err(Error::InvalidConfig(
                "control penalty must be square".into(),
            ));
        }
        let asym = (&penalty - penalty.transpose()).norm();
        if asym > 1e-12 * (1.0 + penalty.norm()) {
            return Err(Error::InvalidConfig(
                "control penalty must be symmetric".into(),
            ));
        }
        let penalty_inv = penalty
            .clone()
            .cholesky()
            .ok_or_else(|| {
                Error::InvalidConfig("control penalty must be positive definite".into())
            })?
            .inverse();
        let q0 = (state_cost)(&DVector::zeros(state_dim));
        if q0.abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "state cost must vanish at the origin, got Q(0) = {q0:.3e}"
            )));
        }
        Ok(Self {
            state_cost,
            penalty,
            penalty_inv,
            assumption_case,
        })
    }

    pub fn state_cost(&self, x: &DVector<f64>) -> f64 {
        (self.state_cost)(x)
    }

    /// The control penalty matrix R.
    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    /// Cached R⁻¹.
    pub fn penalty_inv(&self) -> &DMatrix<f64> {
        &self.penalty_inv
    }

    pub fn control_dim(&self) -> usize {
        self.penalty.nrows()
    }

    /// Running cost `Q(x) + uᵀRu`.
    pub fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        if u.len() != self.penalty.nrows() {
            return Err(Error::ShapeMismatch {
                what: "control vector",
                expected: self.penalty.nrows(),
                actual: u.len(),
            });
        }
        Ok(self.state_cost(x) + (u.transpose() * &self.penalty * u)[(0, 0)])
    }
}

/// Outcome of the sampled cost-positivity check. `violations` pairs each
/// failing sample with the clause it broke.
#[derive(Debug)]
pub struct AssumptionReport {
    pub case: AssumptionCase,
    pub samples_checked: usize,
    pub violations: Vec<(DVector<f64>, String)>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the declared positivity clause of the cost on a sample set. The
/// check is sample-based: it reports counterexamples rather than proving
/// definiteness. For the velocity-definite case the drift condition is
/// evaluated on the zero-velocity slice `f([p; 0])`, which is the slice the
/// stability argument actually uses.
pub fn check_assumption1(
    cost: &CostSpec,
    model: &SystemModel,
    samples: &[DVector<f64>],
) -> Result<AssumptionReport> {
    let n = model.n();
    let mut violations = Vec::new();
    for x in samples {
        model.check_state_dim(x)?;
        let q_val = cost.state_cost(x);
        let p = x.rows(0, n).into_owned();
        let q = x.rows(n, n).into_owned();
        if q_val < 0.0 {
            violations.push((x.clone(), format!("Q(x) = {q_val:.3e} < 0")));
            continue;
        }
        match cost.assumption_case {
            AssumptionCase::PositiveDefinite => {
                if x.norm() > 0.0 && q_val <= 0.0 {
                    violations.push((x.clone(), "Q(x) = 0 at a nonzero state".into()));
                }
            }
            AssumptionCase::PositionDefinite => {
                if p.norm() > 0.0 && q_val <= 0.0 {
                    violations.push((x.clone(), "Q(x) = 0 with p != 0".into()));
                }
            }
            AssumptionCase::VelocityDefinite => {
                if q.norm() > 0.0 && q_val <= 0.0 {
                    violations.push((x.clone(), "Q(x) = 0 with q != 0".into()));
                    continue;
                }
                if p.norm() > 0.0 {
                    let mut rest = DVector::zeros(2 * n);
                    rest.rows_mut(0, n).copy_from(&p);
                    let f_rest = model.eval_drift(&rest)?;
                    if f_rest.norm() == 0.0 {
                        violations.push((x.clone(), "f([p; 0]) = 0 with p != 0".into()));
                    }
                }
            }
        }
    }
    Ok(AssumptionReport {
        case: cost.assumption_case,
        samples_checked: samples.len(),
        violations,
    })
}

/// The bundled 2-state benchmark, addressable as `"vamvoudakis2d"` in
/// scenario files:
///
/// ```text
/// f(x) = -x1 - x2 (1 - (cos(2 x1) + 2)^2) / 2,   g(x) = cos(2 x1) + 2,
/// Q(x) = x2^2,  R = 1,
/// ```
///
/// whose optimal value function is exactly `V*(x) = x1^2 + x2^2`, so the
/// quadratic basis `[x1^2, x1 x2, x2^2]` is exact with weights `[1, 0, 1]`.
pub fn vamvoudakis2d() -> (SystemModel, CostSpec) {
    let drift = Arc::new(|x: &DVector<f64>| {
        let (x1, x2) = (x[0], x[1]);
        let g = (2.0 * x1).cos() + 2.0;
        DVector::from_element(1, -x1 - 0.5 * x2 * (1.0 - g * g))
    });
    let effectiveness =
        Arc::new(|x: &DVector<f64>| DMatrix::from_element(1, 1, (2.0 * x[0]).cos() + 2.0));
    let analytic = Arc::new(AnalyticValue {
        value: Box::new(|x: &DVector<f64>| x[0] * x[0] + x[1] * x[1]),
        gradient: Box::new(|x: &DVector<f64>| DVector::from_vec(vec![2.0 * x[0], 2.0 * x[1]])),
    });
    let model = SystemModel::new(1, 1, drift, effectiveness)
        .expect("benchmark drift vanishes at the origin")
        .with_analytic(analytic, Some(DVector::from_vec(vec![1.0, 0.0, 1.0])));
    let cost = CostSpec::new(
        Arc::new(|x: &DVector<f64>| x[1] * x[1]),
        DMatrix::identity(1, 1),
        AssumptionCase::VelocityDefinite,
        2,
    )
    .expect("benchmark cost is well formed");
    (model, cost)
}

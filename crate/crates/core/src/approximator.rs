//! Parametric value-function and policy approximators over a pluggable basis
//! `σ: R^{2n} -> R^L` with analytic Jacobians, plus the pointwise
//! Hamilton-Jacobi-Bellman residual used as a verification oracle.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::plant::{CostSpec, SystemModel, ValueFunction};

type EvalFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacobianFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A basis of `L` scalar functions on the `dim`-dimensional state space.
/// `jacobian` returns the `L×dim` matrix whose rows are the gradients of the
/// basis functions; it must agree with finite differences of `eval`
/// (checked by the verifier, not here).
#[derive(Clone)]
pub struct Basis {
    l: usize,
    dim: usize,
    eval: Arc<EvalFn>,
    jacobian: Arc<JacobianFn>,
}

impl Basis {
    pub fn new(l: usize, dim: usize, eval: Arc<EvalFn>, jacobian: Arc<JacobianFn>) -> Result<Self> {
        if l == 0 || dim == 0 {
            return Err(Error::InvalidConfig(
                "basis size and state dimension must be positive".into(),
            ));
        }
        Ok(Self {
            l,
            dim,
            eval,
            jacobian,
        })
    }

    /// Monomial basis from exponent rows: `σ_j(x) = Π_i x_i^{e[j][i]}`.
    /// Each row must have one exponent per state coordinate.
    pub fn monomial(exponents: Vec<Vec<u32>>, dim: usize) -> Result<Self> {
        if exponents.is_empty() {
            return Err(Error::InvalidConfig("basis: empty exponent list".into()));
        }
        for (j, row) in exponents.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidConfig(format!(
                    "basis: exponent row {j} has {} entries, state dimension is {dim}",
                    row.len()
                )));
            }
        }
        let l = exponents.len();
        let exps = Arc::new(exponents);
        let exps_eval = Arc::clone(&exps);
        let eval = Arc::new(move |x: &DVector<f64>| {
            DVector::from_iterator(
                exps_eval.len(),
                exps_eval.iter().map(|row| {
                    row.iter()
                        .zip(x.iter())
                        .map(|(&e, &xi)| xi.powi(e as i32))
                        .product::<f64>()
                }),
            )
        });
        let jacobian = Arc::new(move |x: &DVector<f64>| {
            let mut jac = DMatrix::zeros(exps.len(), x.len());
            for (j, row) in exps.iter().enumerate() {
                for i in 0..x.len() {
                    if row[i] == 0 {
                        continue;
                    }
                    let mut term = row[i] as f64 * x[i].powi(row[i] as i32 - 1);
                    for (k, &e) in row.iter().enumerate() {
                        if k != i {
                            term *= x[k].powi(e as i32);
                        }
                    }
                    jac[(j, i)] = term;
                }
            }
            jac
        });
        Self::new(l, dim, eval, jacobian)
    }

    /// The quadratic monomial basis `[x1², x1 x2, x2²]` on a 2-dimensional
    /// state, addressable as `"quadratic2d"` in scenario files. Exact for the
    /// bundled benchmark.
    pub fn quadratic2d() -> Self {
        Self::monomial(vec![vec![2, 0], vec![1, 1], vec![0, 2]], 2)
            .expect("quadratic2d exponents are well formed")
    }

    pub fn len(&self) -> usize {
        self.l
    }

    pub fn is_empty(&self) -> bool {
        self.l == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// σ(x).
    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let s = (self.eval)(x);
        if s.len() != self.l {
            return Err(Error::ShapeMismatch {
                what: "basis output",
                expected: self.l,
                actual: s.len(),
            });
        }
        Ok(s)
    }

    /// σ_x(x), the `L×dim` Jacobian.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let jac = (self.jacobian)(x);
        if jac.nrows() != self.l || jac.ncols() != self.dim {
            return Err(Error::ShapeMismatch {
                what: "basis jacobian",
                expected: self.l * self.dim,
                actual: jac.nrows() * jac.ncols(),
            });
        }
        Ok(jac)
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch {
                what: "basis input",
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }
}

/// Position-block (first n columns) and velocity-block (last n columns) of a
/// basis Jacobian, written σ_p and σ_q.
pub fn jacobian_blocks(jac: &DMatrix<f64>, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        jac.columns(0, n).into_owned(),
        jac.columns(n, n).into_owned(),
    )
}

/// V̂(x, Wc) = Wcᵀ σ(x).
pub fn value_hat(basis: &Basis, wc: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    check_weights(basis, wc)?;
    Ok(wc.dot(&basis.eval(x)?))
}

/// û(x, Wa) = -½ R⁻¹ gᵀ(x) σ_qᵀ(x) Wa, where σ_q is the velocity block of the
/// basis Jacobian. The input map of the plant class is `[0; g]`, so only the
/// velocity block of the Jacobian enters the policy.
pub fn policy_hat(
    model: &SystemModel,
    cost: &CostSpec,
    basis: &Basis,
    wa: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_weights(basis, wa)?;
    let g = model.eval_effectiveness(x)?;
    let jac = basis.jacobian(x)?;
    let sigma_q = jac.columns(model.n(), model.n());
    Ok(-0.5 * cost.penalty_inv() * g.transpose() * sigma_q.transpose() * wa)
}

/// Pointwise Hamilton-Jacobi-Bellman residual of a differentiable scalar
/// function `V` at `x`:
///
/// ```text
/// V_p(x)·q + V_q(x)·(f(x) + g(x) u*(x)) + Q(x) + u*(x)ᵀ R u*(x),
/// u*(x) = -½ R⁻¹ gᵀ(x) V_qᵀ(x).
/// ```
///
/// Zero everywhere iff `V` is the optimal value function.
pub fn hjb_residual(
    model: &SystemModel,
    cost: &CostSpec,
    v: &dyn ValueFunction,
    x: &DVector<f64>,
) -> Result<f64> {
    model.check_state_dim(x)?;
    let n = model.n();
    let grad = v.gradient(x);
    if grad.len() != 2 * n {
        return Err(Error::ShapeMismatch {
            what: "value gradient",
            expected: 2 * n,
            actual: grad.len(),
        });
    }
    let v_p = grad.rows(0, n);
    let v_q = grad.rows(n, n).into_owned();
    let q = x.rows(n, n);
    let f = model.eval_drift(x)?;
    let g = model.eval_effectiveness(x)?;
    let u_star = -0.5 * cost.penalty_inv() * g.transpose() * &v_q;
    let qdot = f + &g * &u_star;
    Ok(v_p.dot(&q.into_owned()) + v_q.dot(&qdot) + cost.running_cost(x, &u_star)?)
}

/// A basis expansion viewed as a differentiable scalar function, so the same
/// HJB oracle tests analytic and approximated value functions.
pub struct BasisValue {
    pub basis: Basis,
    pub weights: DVector<f64>,
}

impl ValueFunction for BasisValue {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.weights.dot(&(self.basis.eval)(x))
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.basis.jacobian)(x).transpose() * &self.weights
    }
}

fn check_weights(basis: &Basis, w: &DVector<f64>) -> Result<()> {
    if w.len() != basis.len() {
        return Err(Error::ShapeMismatch {
            what: "weight vector",
            expected: basis.len(),
            actual: w.len(),
        });
    }
    Ok(())
}

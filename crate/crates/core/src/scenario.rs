//! JSON scenario files. Unknown keys are rejected; missing keys fall back to
//! the documented benchmark defaults, so `{}` parses to the bundled
//! `vamvoudakis2d` replication scenario.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::approximator::Basis;
use crate::error::{Error, Result};
use crate::estimator::EstimatorGains;
use crate::learner::{ExtrapolationSet, LearnerGains};
use crate::plant::{CostSpec, SystemModel};
use crate::simulator::SimConfig;

/// Initial least-squares gain: either `s` (meaning `s·I`) or a full matrix
/// given as rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gamma0 {
    Scaled(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BasisSpec {
    /// A registered basis name; `"quadratic2d"` is bundled.
    Named(String),
    /// Monomial exponent rows, one entry per state coordinate.
    Monomials(Vec<Vec<u32>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default = "default_est_k")]
    pub k: f64,
    #[serde(default = "default_est_alpha")]
    pub alpha: f64,
    #[serde(default = "default_est_beta")]
    pub beta: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            k: default_est_k(),
            alpha: default_est_alpha(),
            beta: default_est_beta(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_grid_extent")]
    pub extent: f64,
    #[serde(default = "default_grid_per_axis")]
    pub per_axis: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            extent: default_grid_extent(),
            per_axis: default_grid_per_axis(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    #[serde(default = "default_kc")]
    pub kc: f64,
    #[serde(default = "default_ka1")]
    pub ka1: f64,
    #[serde(default = "default_ka2")]
    pub ka2: f64,
    #[serde(default = "default_gamma1")]
    pub gamma1: f64,
    #[serde(default = "default_beta_forget")]
    pub beta_forget: f64,
    #[serde(default)]
    pub grid: GridSection,
    /// Accepted but unused; a warning is emitted when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    /// Flips the sign of the actor coupling term for sensitivity studies.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub negate_actor_sum: bool,
}

impl Default for LearnerSection {
    fn default() -> Self {
        Self {
            kc: default_kc(),
            ka1: default_ka1(),
            ka2: default_ka2(),
            gamma1: default_gamma1(),
            beta_forget: default_beta_forget(),
            grid: GridSection::default(),
            nu: None,
            negate_actor_sum: false,
        }
    }
}

/// A complete scenario. Every field has a benchmark default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_model")]
    pub cost: String,
    #[serde(default = "default_basis")]
    pub basis: BasisSpec,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_x0")]
    pub x0: Vec<f64>,
    #[serde(default = "default_xhat0")]
    pub xhat0: Vec<f64>,
    #[serde(default = "default_w0")]
    pub wc0: Vec<f64>,
    #[serde(default = "default_w0")]
    pub wa0: Vec<f64>,
    #[serde(default = "default_gamma0")]
    pub gamma0: Gamma0,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub learner: LearnerSection,
    #[serde(default = "default_log_stride")]
    pub log_stride: usize,
    /// Floor below which the excitation monitor warns.
    #[serde(default = "default_excitation_floor")]
    pub excitation_floor: f64,
    /// Overrides the model's ideal weights in verification reports; useful
    /// for deliberately wrong baselines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic_weights: Option<Vec<f64>>,
    /// Default output directory for `run`; the CLI `--out` flag wins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

fn default_model() -> String {
    "vamvoudakis2d".into()
}
fn default_basis() -> BasisSpec {
    BasisSpec::Named("quadratic2d".into())
}
fn default_t_final() -> f64 {
    100.0
}
fn default_dt() -> f64 {
    1e-3
}
fn default_x0() -> Vec<f64> {
    vec![1.0, 1.0]
}
fn default_xhat0() -> Vec<f64> {
    vec![-1.0, -1.0]
}
fn default_w0() -> Vec<f64> {
    vec![0.5, 0.5, 0.5]
}
fn default_gamma0() -> Gamma0 {
    Gamma0::Scaled(50.0)
}
fn default_est_k() -> f64 {
    5.0
}
fn default_est_alpha() -> f64 {
    0.2
}
fn default_est_beta() -> f64 {
    5.0
}
fn default_kc() -> f64 {
    0.2
}
fn default_ka1() -> f64 {
    100.0
}
fn default_ka2() -> f64 {
    0.1
}
fn default_gamma1() -> f64 {
    1.0
}
fn default_beta_forget() -> f64 {
    3.0
}
fn default_grid_extent() -> f64 {
    1.0
}
fn default_grid_per_axis() -> usize {
    5
}
fn default_log_stride() -> usize {
    1
}
fn default_excitation_floor() -> f64 {
    1e-8
}

impl Default for Scenario {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty scenario parses to defaults")
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_final >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "t_final must be nonnegative, got {}",
                self.t_final
            )));
        }
        if self.log_stride == 0 {
            return Err(Error::InvalidConfig("log_stride must be at least 1".into()));
        }
        for (name, v) in [
            ("x0", &self.x0),
            ("xhat0", &self.xhat0),
            ("wc0", &self.wc0),
            ("wa0", &self.wa0),
        ] {
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    /// Warnings that do not block the run (currently only the unused `nu`
    /// gain).
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if let Some(nu) = self.learner.nu {
            w.push(format!(
                "learner.nu = {nu} is accepted for compatibility but not used by any update law"
            ));
        }
        w
    }

    fn resolve_model(&self) -> Result<(SystemModel, CostSpec)> {
        if self.model != self.cost {
            return Err(Error::InvalidConfig(format!(
                "cost `{}` does not match model `{}`; registered costs are bound to their model",
                self.cost, self.model
            )));
        }
        match self.model.as_str() {
            "vamvoudakis2d" => Ok(crate::plant::vamvoudakis2d()),
            other => Err(Error::InvalidConfig(format!(
                "model: unknown identifier `{other}` (registered: vamvoudakis2d)"
            ))),
        }
    }

    fn resolve_basis(&self, state_dim: usize) -> Result<Basis> {
        match &self.basis {
            BasisSpec::Named(name) => match name.as_str() {
                "quadratic2d" => {
                    if state_dim != 2 {
                        return Err(Error::InvalidConfig(
                            "basis quadratic2d requires a 2-dimensional state".into(),
                        ));
                    }
                    Ok(Basis::quadratic2d())
                }
                other => Err(Error::InvalidConfig(format!(
                    "basis: unknown identifier `{other}` (registered: quadratic2d; \
                     or give monomial exponent rows)"
                ))),
            },
            BasisSpec::Monomials(rows) => Basis::monomial(rows.clone(), state_dim),
        }
    }

    /// Resolves identifiers and validates gains, producing a runnable
    /// configuration.
    pub fn resolve(&self) -> Result<SimConfig> {
        self.validate()?;
        let (model, cost) = self.resolve_model()?;
        let basis = self.resolve_basis(model.state_dim())?;
        let l = basis.len();
        for (name, v, want) in [
            ("x0", self.x0.len(), model.state_dim()),
            ("xhat0", self.xhat0.len(), model.state_dim()),
            ("wc0", self.wc0.len(), l),
            ("wa0", self.wa0.len(), l),
        ] {
            if v != want {
                return Err(Error::InvalidConfig(format!(
                    "{name} has length {v}, expected {want}"
                )));
            }
        }
        let gamma0 = match &self.gamma0 {
            Gamma0::Scaled(s) => {
                if !(*s > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "gamma0 scale must be positive, got {s}"
                    )));
                }
                DMatrix::identity(l, l) * *s
            }
            Gamma0::Matrix(rows) => {
                if rows.len() != l || rows.iter().any(|r| r.len() != l) {
                    return Err(Error::InvalidConfig(format!("gamma0 must be {l}x{l}")));
                }
                DMatrix::from_fn(l, l, |r, c| rows[r][c])
            }
        };
        let estimator_gains =
            EstimatorGains::new(self.estimator.alpha, self.estimator.k, self.estimator.beta)?;
        let mut learner_gains = LearnerGains::new(
            self.learner.kc,
            self.learner.ka1,
            self.learner.ka2,
            self.learner.gamma1,
            self.learner.beta_forget,
        )?;
        learner_gains.negate_actor_sum = self.learner.negate_actor_sum;
        let set = ExtrapolationSet::grid(
            self.learner.grid.extent,
            self.learner.grid.per_axis,
            model.state_dim(),
        )?;
        // Reject gamma0 that is not positive definite up front.
        crate::learner::CriticState::new(DVector::from_vec(self.wc0.clone()), gamma0.clone())?;
        Ok(SimConfig {
            model,
            cost,
            basis,
            set,
            estimator_gains,
            learner_gains,
            t_final: self.t_final,
            dt: self.dt,
            x0: DVector::from_vec(self.x0.clone()),
            xhat0: DVector::from_vec(self.xhat0.clone()),
            wc0: DVector::from_vec(self.wc0.clone()),
            wa0: DVector::from_vec(self.wa0.clone()),
            gamma0,
            log_stride: self.log_stride,
        })
    }

    /// The scenario's ideal-weight override as a vector, if any.
    pub fn analytic_weights_vec(&self) -> Option<DVector<f64>> {
        self.analytic_weights
            .as_ref()
            .map(|w| DVector::from_vec(w.clone()))
    }
}

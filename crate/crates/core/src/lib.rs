//! Simulation library for online optimal control of second-order nonlinear
//! systems from position measurements alone. A dynamic filter reconstructs
//! velocities, an actor-critic pair learns the value function and policy
//! online by extrapolating the Bellman error over a designer-chosen point
//! set, and a verification layer checks the results against analytic
//! oracles on a benchmark whose optimal value function is known exactly.
//!
//! The crate ships a CLI (`ofrl run` / `ofrl verify`) driven by JSON
//! scenario files; see the README for usage.
//!
//! ```
//! use ofrl::scenario::Scenario;
//! use ofrl::simulator::run;
//!
//! // The empty scenario is the bundled benchmark; shorten it for a smoke run.
//! let mut scenario = Scenario::default();
//! scenario.t_final = 0.1;
//! let trace = run(&scenario.resolve()?)?;
//! assert_eq!(trace.len(), 101);
//! # Ok::<(), ofrl::Error>(())
//! ```

// Gain validation uses `!(v > 0.0)` so that NaN is rejected along with
// nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approximator;
pub mod error;
pub mod estimator;
pub mod learner;
pub mod plant;
pub mod scenario;
pub mod simulator;
pub mod verifier;

pub use error::{Error, Result};

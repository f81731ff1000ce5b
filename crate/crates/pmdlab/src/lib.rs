//! Desk-scale laboratory for policy mirror descent on finite discounted
//! MDPs over convex policy classes.
//!
//! The crate has three jobs:
//! 1. exact algorithm runs: policy evaluation by linear solve, mirror
//!    steps with certified subproblem accuracy, no sampling noise unless
//!    explicitly injected;
//! 2. numerical certification: every identity and inequality the method's
//!    analysis relies on is checkable on concrete instances, with slacks
//!    reported;
//! 3. reproduction of the small counterexample models that separate
//!    restricted-class mirror descent from log-linear natural-gradient
//!    baselines and show where smoothness constants are tight.
//!
//! Module map: [`mdp`] owns models and exact evaluation; [`geometry`] owns
//! norms, regularizers and mirror steps; [`policy`] owns policy classes;
//! [`prox`] is the generic inexact Bregman proximal-point loop; [`pmd`]
//! instantiates it on MDPs; [`verify`] is the certification suite;
//! [`bench`] generates instances, fits rates and drives experiments.

pub mod bench;
pub mod error;
pub mod geometry;
pub mod mdp;
pub mod pmd;
pub mod policy;
pub mod prox;
pub mod tol;
pub mod verify;

pub use error::{Error, Result};
pub use tol::Tolerances;

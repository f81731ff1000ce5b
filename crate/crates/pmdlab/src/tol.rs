//! Numerical tolerances, all in one place.
//!
//! Every fixed epsilon used by validators, solver postconditions and the
//! verification suite lives in this record so the whole tolerance budget is
//! auditable at a glance. Functions take `&Tolerances` (usually via
//! `Tolerances::default()`) instead of burying magic numbers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Transition rows and start distributions must sum to 1 within this.
    pub row_sum: f64,
    /// Costs may undershoot 0 / overshoot 1 by at most this.
    pub cost_range: f64,
    /// Policy rows must sum to 1 within this; entries may be negative by
    /// at most this before validation rejects them.
    pub policy_row: f64,
    /// Max Bellman residual accepted from the value solver.
    pub bellman: f64,
    /// Occupancy must sum to 1 within this after the linear solve.
    pub occupancy_sum: f64,
    /// Slack allowed on hard lower bounds (occupancy floor, min action
    /// probability) that hold exactly in real arithmetic.
    pub floor_slack: f64,
    /// Exact identities (value difference, Q-value difference, closed
    /// forms) must reproduce within this.
    pub identity: f64,
    /// Inequalities from the analysis are asserted with slack >= -this.
    pub lemma_slack: f64,
    /// Agreement required between two independent computation paths
    /// (generic hull solver vs per-state closed form, and similar).
    pub cross_check: f64,
    /// Relative error allowed between analytic gradients and central
    /// finite differences.
    pub fd_rel: f64,
    /// Agreement required against brute-force oracles that are themselves
    /// iterative (projected-ascent dual-norm maximizer, grid searches).
    pub brute_force: f64,
    /// Default Frank-Wolfe gap at which the prox subproblem stops.
    pub inner_tol: f64,
    /// Slope recovered from a synthetic power-law series must match the
    /// exponent within this.
    pub rate_fit: f64,
    /// Gaps at or below this are treated as exactly converged and excluded
    /// from rate fits.
    pub gap_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            row_sum: 1e-12,
            cost_range: 1e-12,
            policy_row: 1e-10,
            bellman: 1e-10,
            occupancy_sum: 1e-10,
            floor_slack: 1e-12,
            identity: 1e-9,
            lemma_slack: 1e-8,
            cross_check: 1e-7,
            fd_rel: 1e-5,
            brute_force: 1e-6,
            inner_tol: 1e-10,
            rate_fit: 1e-6,
            gap_floor: 1e-12,
        }
    }
}

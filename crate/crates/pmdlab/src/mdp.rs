//! Finite discounted MDPs with exact (linear-solve) evaluation.
//!
//! Conventions used throughout the crate:
//! * costs, not rewards: `r(s,a)` lies in `[0,1]` and policies try to
//!   minimize value. Inputs declared with `convention: "reward"` are
//!   converted to costs via `r <- 1 - r` at load time.
//! * `h = 1/(1-gamma)` is the effective horizon.
//! * the occupancy measure is normalized: `mu = (1-gamma) * rho0^T
//!   (I - gamma P_pi)^{-1}`, so it sums to 1 and `mu(s) >= (1-gamma)
//!   rho0(s)`.
//! * value functions solve `(I - gamma P_pi) v = r_pi` by LU with partial
//!   pivoting; no iterative approximation anywhere in the evaluation path.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tol::Tolerances;

/// A finite MDP with cost semantics. Construction validates everything, so
/// a `Mdp` value can be trusted downstream.
#[derive(Debug, Clone)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rho0: Vec<f64>,
    cost: Vec<Vec<f64>>,
    /// trans[s][a] is the distribution over next states.
    trans: Vec<Vec<Vec<f64>>>,
    /// Set when the source data was declared as rewards and flipped.
    from_reward: bool,
}

/// Stochastic policy table, one distribution over actions per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy {
    rows: Vec<Vec<f64>>,
}

/// State values `v(s)` for a fixed policy.
#[derive(Debug, Clone)]
pub struct ValueVector(pub Vec<f64>);

/// State-action values `q(s,a)` for a fixed policy.
#[derive(Debug, Clone)]
pub struct QFunction(pub Vec<Vec<f64>>);

/// Normalized discounted state-visitation measure together with the start
/// distribution it was computed from.
#[derive(Debug, Clone)]
pub struct Occupancy {
    pub mu: Vec<f64>,
    pub start: Vec<f64>,
}

fn check_distribution(p: &[f64], what: &str, tol: f64) -> Result<()> {
    for (i, &x) in p.iter().enumerate() {
        if !x.is_finite() || x < -tol {
            return Err(Error::InvalidDistribution(format!(
                "{what} has entry {x} at index {i}"
            )));
        }
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::InvalidDistribution(format!(
            "{what} sums to {sum} (expected 1 within {tol})"
        )));
    }
    Ok(())
}

impl Mdp {
    pub fn new(
        gamma: f64,
        rho0: Vec<f64>,
        cost: Vec<Vec<f64>>,
        trans: Vec<Vec<Vec<f64>>>,
        tol: &Tolerances,
    ) -> Result<Mdp> {
        let n_states = rho0.len();
        if n_states == 0 {
            return Err(Error::InvalidModel("no states".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidModel(format!(
                "gamma = {gamma} outside [0, 1)"
            )));
        }
        if cost.len() != n_states || trans.len() != n_states {
            return Err(Error::DimensionMismatch(format!(
                "rho0 has {n_states} states, cost has {}, transitions have {}",
                cost.len(),
                trans.len()
            )));
        }
        let n_actions = cost[0].len();
        if n_actions == 0 {
            return Err(Error::InvalidModel("no actions".into()));
        }
        check_distribution(&rho0, "start distribution", tol.row_sum)?;
        for s in 0..n_states {
            if cost[s].len() != n_actions || trans[s].len() != n_actions {
                return Err(Error::DimensionMismatch(format!(
                    "state {s} has {} cost entries and {} transition rows (expected {n_actions})",
                    cost[s].len(),
                    trans[s].len()
                )));
            }
            for a in 0..n_actions {
                let c = cost[s][a];
                if !c.is_finite() || c < -tol.cost_range || c > 1.0 + tol.cost_range {
                    return Err(Error::InvalidModel(format!(
                        "cost (s={s}, a={a}) is {c}, outside [0, 1]"
                    )));
                }
                if trans[s][a].len() != n_states {
                    return Err(Error::DimensionMismatch(format!(
                        "transition row (s={s}, a={a}) has {} entries (expected {n_states})",
                        trans[s][a].len()
                    )));
                }
                check_distribution(&trans[s][a], &format!("transition row (s={s}, a={a})"), tol.row_sum)?;
            }
        }
        Ok(Mdp {
            n_states,
            n_actions,
            gamma,
            rho0,
            cost,
            trans,
            from_reward: false,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Effective horizon `1/(1-gamma)`.
    pub fn horizon(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    pub fn rho0(&self) -> &[f64] {
        &self.rho0
    }

    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.cost[s][a]
    }

    /// Next-state distribution for the pair `(s, a)`.
    pub fn next(&self, s: usize, a: usize) -> &[f64] {
        &self.trans[s][a]
    }

    pub fn from_reward(&self) -> bool {
        self.from_reward
    }

    /// Transition matrix under `pi`, `p[s][s'] = sum_a pi(a|s) P(s'|s,a)`.
    pub fn policy_transition(&self, pi: &Policy) -> DMatrix<f64> {
        let n = self.n_states;
        let mut p = DMatrix::zeros(n, n);
        for s in 0..n {
            for a in 0..self.n_actions {
                let w = pi.rows[s][a];
                if w == 0.0 {
                    continue;
                }
                for sp in 0..n {
                    p[(s, sp)] += w * self.trans[s][a][sp];
                }
            }
        }
        p
    }

    /// Expected one-step cost under `pi`.
    pub fn policy_cost(&self, pi: &Policy) -> DVector<f64> {
        DVector::from_iterator(
            self.n_states,
            (0..self.n_states).map(|s| {
                (0..self.n_actions)
                    .map(|a| pi.rows[s][a] * self.cost[s][a])
                    .sum()
            }),
        )
    }
}

impl Policy {
    pub fn new(rows: Vec<Vec<f64>>, tol: &Tolerances) -> Result<Policy> {
        if rows.is_empty() {
            return Err(Error::InvalidPolicy("no states".into()));
        }
        let n_actions = rows[0].len();
        for (s, row) in rows.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::InvalidPolicy(format!(
                    "state {s} has {} action probabilities (expected {n_actions})",
                    row.len()
                )));
            }
            check_distribution(row, &format!("policy row (s={s})"), tol.policy_row)
                .map_err(|e| Error::InvalidPolicy(e.to_string()))?;
        }
        Ok(Policy { rows })
    }

    /// Construct without re-validating. For internal paths that produce
    /// rows which are distributions by construction (projections, convex
    /// mixes of valid rows).
    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Policy {
        Policy { rows }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Policy {
        Policy {
            rows: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    /// Deterministic policy taking `choice[s]` in state `s`.
    pub fn deterministic(n_actions: usize, choice: &[usize]) -> Policy {
        let rows = choice
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Policy { rows }
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn n_actions(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.rows[s]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.rows[s][a]
    }

    /// Smallest action probability over all states.
    pub fn min_prob(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// Convex combination `(1-t) self + t other`, valid for `t` in [0,1].
    pub fn mix(&self, other: &Policy, t: f64) -> Policy {
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect())
            .collect();
        Policy { rows }
    }

    /// `sum_s mu(s) * ||self_s - other_s||_1`, the occupancy-weighted L1
    /// policy distance.
    pub fn weighted_l1_distance(&self, other: &Policy, mu: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&other.rows)
            .zip(mu)
            .map(|((a, b), &w)| {
                w * a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).abs())
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Entrywise inner product of two state-action tables.
pub fn table_dot(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(xr, yr)| xr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

fn check_shapes(mdp: &Mdp, pi: &Policy) -> Result<()> {
    if pi.n_states() != mdp.n_states || pi.n_actions() != mdp.n_actions {
        return Err(Error::DimensionMismatch(format!(
            "policy is {}x{}, model is {}x{}",
            pi.n_states(),
            pi.n_actions(),
            mdp.n_states,
            mdp.n_actions
        )));
    }
    Ok(())
}

/// Exact policy evaluation: solves `(I - gamma P_pi) v = r_pi`.
pub fn evaluate_value(mdp: &Mdp, pi: &Policy, tol: &Tolerances) -> Result<ValueVector> {
    check_shapes(mdp, pi)?;
    let n = mdp.n_states;
    let p = mdp.policy_transition(pi);
    let r = mdp.policy_cost(pi);
    let a = DMatrix::identity(n, n) - mdp.gamma * &p;
    let v = a
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::Singular("value system (I - gamma P_pi)".into()))?;

    let residual = (&r + mdp.gamma * &p * &v - &v).amax();
    if residual > tol.bellman {
        return Err(Error::CheckFailed(format!(
            "Bellman residual {residual} exceeds {}",
            tol.bellman
        )));
    }
    let h = mdp.horizon();
    // Range check gets slack proportional to the horizon: values of size h
    // accumulate roundoff at scale h * machine epsilon.
    let slack = tol.floor_slack * (1.0 + h);
    for (s, &vs) in v.iter().enumerate() {
        if !(-slack..=h + slack).contains(&vs) {
            return Err(Error::CheckFailed(format!(
                "value v({s}) = {vs} outside [0, {h}]"
            )));
        }
    }
    Ok(ValueVector(v.iter().copied().collect()))
}

/// State-action values: `q(s,a) = r(s,a) + gamma <P(.|s,a), v>`.
pub fn evaluate_q(mdp: &Mdp, pi: &Policy, tol: &Tolerances) -> Result<QFunction> {
    let v = evaluate_value(mdp, pi, tol)?;
    let q = q_from_value(mdp, &v);
    // v must be the pi-average of q; this ties the two solves together.
    for s in 0..mdp.n_states {
        let avg: f64 = (0..mdp.n_actions)
            .map(|a| pi.rows[s][a] * q.0[s][a])
            .sum();
        if (avg - v.0[s]).abs() > tol.bellman {
            return Err(Error::CheckFailed(format!(
                "q/v consistency residual {} at state {s}",
                (avg - v.0[s]).abs()
            )));
        }
    }
    Ok(q)
}

/// Q-table induced by an arbitrary state-value vector.
pub fn q_from_value(mdp: &Mdp, v: &ValueVector) -> QFunction {
    let q = (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| {
                    let cont: f64 = mdp.trans[s][a]
                        .iter()
                        .zip(&v.0)
                        .map(|(p, vs)| p * vs)
                        .sum();
                    mdp.cost[s][a] + mdp.gamma * cont
                })
                .collect()
        })
        .collect();
    QFunction(q)
}

/// Normalized discounted occupancy of `pi` from `start`.
pub fn occupancy(mdp: &Mdp, pi: &Policy, start: &[f64], tol: &Tolerances) -> Result<Occupancy> {
    check_shapes(mdp, pi)?;
    if start.len() != mdp.n_states {
        return Err(Error::DimensionMismatch(format!(
            "start distribution has {} entries, model has {} states",
            start.len(),
            mdp.n_states
        )));
    }
    check_distribution(start, "start distribution", tol.row_sum)?;
    let n = mdp.n_states;
    let p = mdp.policy_transition(pi);
    let a = DMatrix::identity(n, n) - mdp.gamma * p.transpose();
    let b = DVector::from_iterator(n, start.iter().map(|&x| (1.0 - mdp.gamma) * x));
    let mu = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("occupancy system (I - gamma P_pi^T)".into()))?;

    let sum: f64 = mu.iter().sum();
    if (sum - 1.0).abs() > tol.occupancy_sum {
        return Err(Error::CheckFailed(format!(
            "occupancy sums to {sum} (expected 1 within {})",
            tol.occupancy_sum
        )));
    }
    for (s, &m) in mu.iter().enumerate() {
        if m < (1.0 - mdp.gamma) * start[s] - tol.floor_slack {
            return Err(Error::CheckFailed(format!(
                "occupancy mu({s}) = {m} below its floor (1-gamma) start({s}) = {}",
                (1.0 - mdp.gamma) * start[s]
            )));
        }
    }
    Ok(Occupancy {
        mu: mu.iter().copied().collect(),
        start: start.to_vec(),
    })
}

/// Occupancies from every basis start `delta_{s'}`, sharing one
/// factorization. Row `s'` of the result is `mu` started from `s'`.
fn occupancy_basis(mdp: &Mdp, pi: &Policy) -> Result<Vec<Vec<f64>>> {
    let n = mdp.n_states;
    let p = mdp.policy_transition(pi);
    let a = DMatrix::identity(n, n) - mdp.gamma * p.transpose();
    let lu = a.lu();
    let mut rows = Vec::with_capacity(n);
    for s0 in 0..n {
        let mut b = DVector::zeros(n);
        b[s0] = 1.0 - mdp.gamma;
        let mu = lu
            .solve(&b)
            .ok_or_else(|| Error::Singular("occupancy system (I - gamma P_pi^T)".into()))?;
        rows.push(mu.iter().copied().collect());
    }
    Ok(rows)
}

/// Exact policy gradient table for the start-value objective:
/// `g(s,a) = h * mu_pi(s) * q_pi(s,a)`.
pub fn policy_gradient(mdp: &Mdp, pi: &Policy, tol: &Tolerances) -> Result<Vec<Vec<f64>>> {
    let occ = occupancy(mdp, pi, &mdp.rho0.clone(), tol)?;
    let q = evaluate_q(mdp, pi, tol)?;
    let h = mdp.horizon();
    Ok((0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| h * occ.mu[s] * q.0[s][a])
                .collect()
        })
        .collect())
}

/// Start value `<start, v>`.
pub fn scalar_value(v: &ValueVector, start: &[f64]) -> f64 {
    v.0.iter().zip(start).map(|(a, b)| a * b).sum()
}

/// Evaluates the exact value-difference identity
/// `V_start(pi_tilde) - V_start(pi) = h * E_{s ~ mu_pi} <q_tilde_s,
/// pi_tilde_s - pi_s>` and returns the right-hand side. Note the mixed
/// arguments: occupancy of the second policy, Q-values of the first.
pub fn value_difference(
    mdp: &Mdp,
    pi_tilde: &Policy,
    pi: &Policy,
    start: &[f64],
    tol: &Tolerances,
) -> Result<f64> {
    let occ = occupancy(mdp, pi, start, tol)?;
    let q_tilde = evaluate_q(mdp, pi_tilde, tol)?;
    let h = mdp.horizon();
    Ok((0..mdp.n_states)
        .map(|s| {
            let inner: f64 = (0..mdp.n_actions)
                .map(|a| q_tilde.0[s][a] * (pi_tilde.rows[s][a] - pi.rows[s][a]))
                .sum();
            h * occ.mu[s] * inner
        })
        .sum())
}

/// Max-abs residual of the per-pair Q-difference identity
/// `q_tilde(s,a) - q(s,a) = gamma * h * E_{s' ~ mu_pi started at P(.|s,a)}
/// <q_tilde_{s'}, pi_tilde_{s'} - pi_{s'}>` over all `(s,a)`.
pub fn q_difference_identity(
    mdp: &Mdp,
    pi_tilde: &Policy,
    pi: &Policy,
    tol: &Tolerances,
) -> Result<f64> {
    check_shapes(mdp, pi)?;
    check_shapes(mdp, pi_tilde)?;
    let q_tilde = evaluate_q(mdp, pi_tilde, tol)?;
    let q = evaluate_q(mdp, pi, tol)?;
    let basis = occupancy_basis(mdp, pi)?;
    let h = mdp.horizon();

    // Per-state advantage of pi_tilde over pi measured by q_tilde.
    let adv: Vec<f64> = (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| q_tilde.0[s][a] * (pi_tilde.rows[s][a] - pi.rows[s][a]))
                .sum()
        })
        .collect();

    let mut worst = 0.0f64;
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            // mu started from the next-state distribution is the
            // transition-weighted mix of basis occupancies.
            let expected: f64 = (0..mdp.n_states)
                .map(|s0| {
                    mdp.trans[s][a][s0]
                        * basis[s0]
                            .iter()
                            .zip(&adv)
                            .map(|(m, d)| m * d)
                            .sum::<f64>()
                })
                .sum();
            let lhs = q_tilde.0[s][a] - q.0[s][a];
            worst = worst.max((lhs - mdp.gamma * h * expected).abs());
        }
    }
    Ok(worst)
}

/// Exact optimal policy for the unrestricted class, found by policy
/// iteration on the cost objective. Ties in the greedy step go to the
/// lowest action index, which also makes the result deterministic.
pub fn optimal_policy(mdp: &Mdp, tol: &Tolerances) -> Result<Policy> {
    let mut choice = vec![0usize; mdp.n_states];
    // Policy iteration on a finite MDP terminates; the 1 + |S| * |A| cap
    // is a generous bound used only to surface a bug as an error.
    let cap = 2 + mdp.n_states * mdp.n_actions * 4;
    for _ in 0..cap {
        let pi = Policy::deterministic(mdp.n_actions, &choice);
        let v = evaluate_value(mdp, &pi, tol)?;
        let q = q_from_value(mdp, &v);
        let mut next = Vec::with_capacity(mdp.n_states);
        for s in 0..mdp.n_states {
            let mut best = 0usize;
            for a in 1..mdp.n_actions {
                if q.0[s][a] < q.0[s][best] - tol.floor_slack {
                    best = a;
                }
            }
            next.push(best);
        }
        if next == choice {
            return Ok(pi);
        }
        choice = next;
    }
    Err(Error::CheckFailed(
        "policy iteration failed to settle".into(),
    ))
}

/// Serialized form of an MDP, including the cost/reward convention flag.
#[derive(Debug, Serialize, Deserialize)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub rho0: Vec<f64>,
    pub cost: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    #[serde(default = "default_convention")]
    pub convention: String,
}

fn default_convention() -> String {
    "cost".into()
}

/// Parses and validates an MDP from JSON text. Reward-convention inputs
/// are flipped to costs; the returned model remembers the conversion so
/// run logs can record it.
pub fn load_mdp_json(text: &str, tol: &Tolerances) -> Result<Mdp> {
    let file: MdpFile = serde_json::from_str(text)?;
    if file.rho0.len() != file.n_states {
        return Err(Error::DimensionMismatch(format!(
            "n_states = {} but rho0 has {} entries",
            file.n_states,
            file.rho0.len()
        )));
    }
    let mut cost = file.cost;
    let from_reward = match file.convention.as_str() {
        "cost" => false,
        "reward" => {
            for row in &mut cost {
                for c in row.iter_mut() {
                    *c = 1.0 - *c;
                }
            }
            true
        }
        other => {
            return Err(Error::InvalidModel(format!(
                "convention must be \"cost\" or \"reward\", got \"{other}\""
            )))
        }
    };
    let mut mdp = Mdp::new(file.gamma, file.rho0, cost, file.transitions, tol)?;
    if mdp.n_actions != file.n_actions {
        return Err(Error::DimensionMismatch(format!(
            "n_actions = {} but cost rows have {} entries",
            file.n_actions, mdp.n_actions
        )));
    }
    mdp.from_reward = from_reward;
    Ok(mdp)
}

/// Serializes an MDP back to the JSON form (always cost convention).
pub fn mdp_to_json(mdp: &Mdp) -> Result<String> {
    let file = MdpFile {
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        gamma: mdp.gamma,
        rho0: mdp.rho0.clone(),
        cost: mdp.cost.clone(),
        transitions: mdp.trans.clone(),
        convention: "cost".into(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

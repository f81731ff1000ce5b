//! Policy mirror descent as an instance of the proximal-point machinery.
//!
//! Each iteration evaluates the current policy exactly, estimates its
//! Q-function (optionally with seeded noise of an exact target
//! magnitude), and solves the occupancy-weighted subproblem
//! `min_pi E_{s~mu^k}[ H <Qhat_s, pi_s> + (1/eta) B_R(pi_s, pi^k_s) ]`
//! over the (exploration-wrapped) policy class. The mapping to the
//! optimizer view is literal: the subproblem gradient is H mu o Qhat,
//! the regularizer is the mu-weighted state aggregate, and the identity
//! between the two formulations is re-verified on probe policies at
//! every single iteration rather than trusted.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{ActionNorm, Regularizer};
use crate::mdp::{
    evaluate_q, evaluate_value, occupancy, policy_gradient, scalar_value, Mdp, Occupancy,
    Policy, QFunction,
};
use crate::policy::{FeatureMap, Member, PolicyClass};
use crate::prox::{
    check_descent, prox_step, stationarity_bound, DecisionSet, LocalGeometry, Objective,
};
use crate::tol::Tolerances;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Configuration of one PMD run. Fields left `None` fall back to the
/// theory-driven defaults (`eta = 1/(2 beta_hat)`, exploration level by
/// regularizer-specific tuning).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PmdConfig {
    #[serde(default)]
    pub eta: Option<f64>,
    pub k_iters: usize,
    #[serde(default = "default_reg")]
    pub regularizer: Regularizer,
    /// Exploration mix applied on top of the class; `None` tunes it from
    /// `k_iters`, `Some(0.0)` disables wrapping.
    #[serde(default)]
    pub eps_expl: Option<f64>,
    /// Target weighted critic error `E_{s~mu}||Qhat_s - Q_s||_2^2`;
    /// zero for the exact oracle.
    #[serde(default)]
    pub critic_noise: f64,
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    #[serde(default)]
    pub seed: u64,
    /// Starting member, in the coordinates of the unwrapped class.
    #[serde(default)]
    pub initial: Option<Member>,
    /// Best-in-class value to report gaps against; refined downward if
    /// the run visits something better.
    #[serde(default)]
    pub reference_value: Option<f64>,
}

fn default_reg() -> Regularizer {
    Regularizer::Euclidean
}

fn default_inner_tol() -> f64 {
    Tolerances::default().inner_tol
}

impl PmdConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Config(format!("eta = {eta} must be positive")));
            }
        }
        if let Some(e) = self.eps_expl {
            if !(0.0..1.0).contains(&e) {
                return Err(Error::Config(format!("eps_expl = {e} outside [0, 1)")));
            }
        }
        if self.critic_noise < 0.0 || self.inner_tol < 0.0 {
            return Err(Error::Config(
                "critic_noise and inner_tol must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Exploration tuning used when the config leaves `eps_expl` unset:
/// `K^{-2/3}` under the Euclidean regularizer, `K^{-2/7} A^{2/5}` under
/// entropy. Returns the level and whether the [0, 1) clip was binding.
pub fn tuned_eps_expl(reg: &Regularizer, k_iters: usize, n_actions: usize) -> (f64, bool) {
    let k = k_iters.max(1) as f64;
    let raw = match reg {
        Regularizer::Euclidean => k.powf(-2.0 / 3.0),
        Regularizer::NegEntropy { .. } => {
            k.powf(-2.0 / 7.0) * (n_actions as f64).powf(2.0 / 5.0)
        }
    };
    if raw < 1.0 {
        (raw, false)
    } else {
        // The tuning balances asymptotic terms; at small K it can exceed
        // the feasible range, in which case we pin just below 1 and flag.
        (1.0 - 1e-6, true)
    }
}

/// Local smoothness constant of the value function over a class whose
/// members keep every action probability at or above the class floor:
/// `2 H^3 / sqrt(eps)` in the (L2(mu), l1) geometry and
/// `2 A H^3 / sqrt(eps)` in the (L2(mu), l2) geometry. The leading 2
/// converts the linearization bound into the half-quadratic form the
/// step-size rule `eta <= 1/(2 beta)` is stated for.
pub fn smoothness_constant(
    class: &PolicyClass,
    mdp: &Mdp,
    action_norm: ActionNorm,
) -> Result<f64> {
    let eps = class.min_action_prob(mdp.n_actions());
    if eps <= 0.0 {
        return Err(Error::Domain(
            "class reaches zero action probability; smoothness constant unbounded \
             (wrap with eps_expl > 0)"
                .into(),
        ));
    }
    let h = mdp.horizon();
    let base = 2.0 * h * h * h / eps.sqrt();
    Ok(match action_norm {
        ActionNorm::L1 => base,
        ActionNorm::L2 => mdp.n_actions() as f64 * base,
    })
}

/// Q-function oracle specification.
#[derive(Debug, Clone, Copy)]
pub enum CriticNoise {
    Exact,
    /// Seeded Gaussian perturbation, rescaled so the occupancy-weighted
    /// squared error equals `eps_crit` exactly. States outside the
    /// support of mu stay untouched.
    Seeded { eps_crit: f64, seed: u64 },
}

/// Returns the Q estimate together with the realized weighted error
/// `E_{s~mu^pi} ||Qhat_s - Q_s||_2^2`.
pub fn critic(
    mdp: &Mdp,
    pi: &Policy,
    spec: CriticNoise,
    tol: &Tolerances,
) -> Result<(QFunction, f64)> {
    let q = evaluate_q(mdp, pi, tol)?;
    let (eps_crit, seed) = match spec {
        CriticNoise::Exact => return Ok((q, 0.0)),
        CriticNoise::Seeded { eps_crit, seed } => (eps_crit, seed),
    };
    if eps_crit == 0.0 {
        return Ok((q, 0.0));
    }
    let occ = occupancy(mdp, pi, mdp.rho0(), tol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut direction = vec![vec![0.0; mdp.n_actions()]; mdp.n_states()];
    let mut weighted_sq = 0.0;
    for s in 0..mdp.n_states() {
        // Draw for every state so the stream position does not depend on
        // the support, then zero out unvisited states.
        let draws: Vec<f64> = (0..mdp.n_actions()).map(|_| gaussian(&mut rng)).collect();
        if occ.mu[s] == 0.0 {
            continue;
        }
        let sq: f64 = draws.iter().map(|d| d * d).sum();
        weighted_sq += occ.mu[s] * sq;
        direction[s] = draws;
    }
    if weighted_sq <= 0.0 {
        return Err(Error::Domain(
            "degenerate critic perturbation draw (zero weighted mass)".into(),
        ));
    }
    let scale = (eps_crit / weighted_sq).sqrt();
    let mut q_hat = q.0.clone();
    let mut realized = 0.0;
    for s in 0..mdp.n_states() {
        let mut sq = 0.0;
        for a in 0..mdp.n_actions() {
            let d = scale * direction[s][a];
            q_hat[s][a] += d;
            sq += d * d;
        }
        realized += occ.mu[s] * sq;
    }
    Ok((QFunction(q_hat), realized))
}

/// Start-weighted scalar value of a policy.
pub fn policy_value(mdp: &Mdp, pi: &Policy, tol: &Tolerances) -> Result<f64> {
    Ok(scalar_value(&evaluate_value(mdp, pi, tol)?, mdp.rho0()))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; clamping the uniform away from 0 keeps the log finite.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

pub fn unflatten(x: &[f64], n_actions: usize) -> Vec<Vec<f64>> {
    x.chunks(n_actions).map(<[f64]>::to_vec).collect()
}

/// Feasible region for optimizing over a class: hull classes become
/// vertex hulls, the (possibly wrapped) complete class becomes a product
/// of truncated simplices. The log-linear class has no convex region.
pub fn decision_set_for(class: &PolicyClass, mdp: &Mdp) -> Result<DecisionSet> {
    let (base, eps_total) = class.unwrap_eps();
    match base {
        PolicyClass::Complete => Ok(DecisionSet::SimplexProduct {
            blocks: mdp.n_states(),
            block_len: mdp.n_actions(),
            lo: eps_total / mdp.n_actions() as f64,
        }),
        PolicyClass::ConvexHull { .. } => {
            let vertices = class
                .hull_vertices()
                .expect("hull base class always yields vertices");
            Ok(DecisionSet::Hull {
                vertices: vertices.iter().map(|p| flatten(p.rows())).collect(),
            })
        }
        PolicyClass::LogLinear { .. } => Err(Error::Unsupported(
            "the log-linear class is not convex; use the natural-gradient baseline".into(),
        )),
        PolicyClass::EpsGreedy { .. } => unreachable!("unwrap_eps strips wrappers"),
    }
}

/// Geometry constants for the PMD subproblem at occupancy `mu`:
/// diameter 2 (any two policies differ by at most 2 per state in l1,
/// and l2 <= l1), exact-gradient bound H^2 sqrt(A) (l2 dual) or H^2
/// (l-infinity dual), regularizer gradient Lipschitz constant 1 or
/// 1/floor on the truncated simplex.
pub fn pmd_geometry(
    mdp: &Mdp,
    class: &PolicyClass,
    reg: &Regularizer,
    mu: Vec<f64>,
) -> Result<LocalGeometry> {
    let floor = class.min_action_prob(mdp.n_actions());
    let h = mdp.horizon();
    let (lip, grad_bound) = match reg {
        Regularizer::Euclidean => (1.0, h * h * (mdp.n_actions() as f64).sqrt()),
        Regularizer::NegEntropy { .. } => {
            let lip = if floor > 0.0 { 1.0 / floor } else { f64::INFINITY };
            (lip, h * h)
        }
    };
    // A zero class floor leaves the subproblem well posed but admits no
    // finite smoothness constant; descent certification is then off the
    // table (eta <= 1/(2 beta) unsatisfiable) while everything else works.
    let beta = smoothness_constant(class, mdp, reg.natural_norm()).unwrap_or(f64::INFINITY);
    LocalGeometry::new(mu, *reg, lip, 2.0, grad_bound, beta)
}

/// One PMD update: solves the weighted subproblem over the class and
/// certifies the first-order optimality violation actually achieved.
pub fn pmd_subproblem(
    mdp: &Mdp,
    class: &PolicyClass,
    pi_k: &Policy,
    q_hat: &QFunction,
    occ: &Occupancy,
    eta: f64,
    reg: &Regularizer,
    inner_tol: f64,
    tol: &Tolerances,
) -> Result<SubproblemOutcome> {
    let set = decision_set_for(class, mdp)?;
    let geom = pmd_geometry(mdp, class, reg, occ.mu.clone())?;
    let h = mdp.horizon();
    let grad: Vec<f64> = (0..mdp.n_states())
        .flat_map(|s| {
            let w = h * occ.mu[s];
            q_hat.0[s].iter().map(move |&q| w * q).collect::<Vec<_>>()
        })
        .collect();
    let obj = FixedGradient { g: grad };
    let x = flatten(pi_k.rows());
    let out = prox_step(&obj, &geom, &set, &x, eta, inner_tol, tol)?;
    Ok(SubproblemOutcome {
        pi_next: Policy::from_rows_unchecked(unflatten(&out.x_plus, mdp.n_actions())),
        hull_coords: out.hull_coords,
        eps_act: out.cert.eps_opt,
        grad_mapping_norm: out.cert.grad_mapping_norm,
        hit_cap: out.cert.hit_cap,
    })
}

#[derive(Debug, Clone)]
pub struct SubproblemOutcome {
    pub pi_next: Policy,
    pub hull_coords: Option<Vec<f64>>,
    pub eps_act: f64,
    pub grad_mapping_norm: f64,
    pub hit_cap: bool,
}

/// Subproblem oracle: the gradient is fixed at the prox center (PMD
/// linearizes there), so value queries are never needed.
struct FixedGradient {
    g: Vec<f64>,
}

impl Objective for FixedGradient {
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn grad(&self, _x: &[f64]) -> Vec<f64> {
        self.g.clone()
    }
}

/// Exact-evaluation objective over flattened policy tables, with the
/// iteration's sampled Q estimate standing in for the gradient oracle.
struct PmdStepObjective<'a> {
    mdp: &'a Mdp,
    tol: &'a Tolerances,
    grad_hat_flat: Vec<f64>,
    eps_grad: f64,
}

impl Objective for PmdStepObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let pi = Policy::from_rows_unchecked(unflatten(x, self.mdp.n_actions()));
        policy_value(self.mdp, &pi, self.tol).expect("evaluation of an in-class iterate")
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let pi = Policy::from_rows_unchecked(unflatten(x, self.mdp.n_actions()));
        let g = policy_gradient(self.mdp, &pi, self.tol)
            .expect("gradient of an in-class iterate");
        flatten(&g)
    }
    fn grad_hat(&self, _x: &[f64]) -> Vec<f64> {
        self.grad_hat_flat.clone()
    }
    fn eps_grad(&self) -> f64 {
        self.eps_grad
    }
}

/// Per-iterate diagnostics. The final record (k = K) describes the last
/// policy only; its step fields (`eps_act`, `eps_crit_realized`,
/// `grad_mapping_norm`) are NaN since no step leaves it.
#[derive(Debug, Clone)]
pub struct IterateRecord {
    pub k: usize,
    pub policy: Policy,
    pub hull_coords: Option<Vec<f64>>,
    pub value: f64,
    pub gap: f64,
    pub eps_act: f64,
    pub eps_crit_realized: f64,
    pub grad_mapping_norm: f64,
    /// `max_{pi_tilde in class} <grad V(pi_k), pi_k - pi_tilde>`.
    pub advantage: f64,
    pub min_prob: f64,
}

#[derive(Debug, Clone)]
pub struct PmdRun {
    pub records: Vec<IterateRecord>,
    /// Class the run actually optimized over (after exploration wrap).
    pub wrapped_class: PolicyClass,
    pub eta: f64,
    pub eps_expl: f64,
    pub eps_expl_clipped: bool,
    pub beta_hat: f64,
    /// Reference value the gaps are measured against, after refinement.
    pub reference_value: f64,
    /// Set when a visited iterate beat the supplied reference and the
    /// gaps were re-based onto the better value.
    pub reference_refined: bool,
    /// Descent-lemma certification only applies in the eta <= 1/(2 beta)
    /// regime; outside it the run proceeds but flags that it skipped it.
    pub descent_certified: bool,
    pub warned_inner: bool,
}

impl PmdRun {
    pub fn final_gap(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.gap)
    }
    pub fn gap_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.gap).collect()
    }
}

/// Runs K iterations of on-policy PMD over `class` (wrapped with the
/// configured exploration level). Asserts, every iteration: the
/// subproblem-vs-prox identity on three probe policies, the stationarity
/// bound, and (within the sound step-size regime) the descent bound.
pub fn run_pmd(
    mdp: &Mdp,
    class: &PolicyClass,
    config: &PmdConfig,
    tol: &Tolerances,
) -> Result<PmdRun> {
    config.validate()?;
    class.validate(mdp.n_states(), mdp.n_actions(), tol)?;

    let (eps_expl, eps_expl_clipped) = match config.eps_expl {
        Some(e) => (e, false),
        None => tuned_eps_expl(&config.regularizer, config.k_iters, mdp.n_actions()),
    };
    let wrapped: PolicyClass = if eps_expl > 0.0 {
        PolicyClass::EpsGreedy {
            inner: Box::new(class.clone()),
            eps: eps_expl,
        }
    } else {
        class.clone()
    };

    // Entropy iterates must stay inside the class floor; wiring the floor
    // into the regularizer makes any escape a hard domain error.
    let floor = wrapped.min_action_prob(mdp.n_actions());
    let reg = match config.regularizer {
        Regularizer::Euclidean => Regularizer::Euclidean,
        Regularizer::NegEntropy { .. } => Regularizer::NegEntropy { domain_floor: floor },
    };

    let beta_hat = smoothness_constant(&wrapped, mdp, reg.natural_norm())?;
    let eta = config.eta.unwrap_or(1.0 / (2.0 * beta_hat));
    let descent_certified = eta <= (1.0 + 1e-12) / (2.0 * beta_hat);
    let set = decision_set_for(&wrapped, mdp)?;

    let mut pi = match &config.initial {
        Some(member) => wrapped.materialize(member, tol)?,
        None => match wrapped.unwrap_eps().0 {
            PolicyClass::ConvexHull { bases } => {
                let m = bases.len();
                wrapped.materialize(&Member::Hull(vec![1.0 / m as f64; m]), tol)?
            }
            _ => Policy::uniform(mdp.n_states(), mdp.n_actions()),
        },
    };
    let mut coords: Option<Vec<f64>> = None;

    let h = mdp.horizon();
    let mut records = Vec::with_capacity(config.k_iters + 1);
    let mut warned_inner = false;
    let mut values = Vec::with_capacity(config.k_iters + 1);

    for k in 0..=config.k_iters {
        let value = policy_value(mdp, &pi, tol)?;
        values.push(value);
        let occ = occupancy(mdp, &pi, mdp.rho0(), tol)?;
        let grad_exact_table = policy_gradient(mdp, &pi, tol)?;
        let (_, lmo_val) = wrapped.linear_min_oracle(&grad_exact_table)?;
        let advantage = crate::mdp::table_dot(&grad_exact_table, pi.rows()) - lmo_val;
        let min_prob = pi.min_prob();

        if k == config.k_iters {
            records.push(IterateRecord {
                k,
                policy: pi.clone(),
                hull_coords: coords.clone(),
                value,
                gap: f64::NAN,
                eps_act: f64::NAN,
                eps_crit_realized: f64::NAN,
                grad_mapping_norm: f64::NAN,
                advantage,
                min_prob,
            });
            break;
        }

        let noise = if config.critic_noise > 0.0 {
            CriticNoise::Seeded {
                eps_crit: config.critic_noise,
                seed: config.seed.wrapping_add(k as u64),
            }
        } else {
            CriticNoise::Exact
        };
        let (q_hat, eps_crit_realized) = critic(mdp, &pi, noise, tol)?;
        let q_exact = evaluate_q(mdp, &pi, tol)?;

        // Realized gradient-error bound in the dual norm: the estimate's
        // deviation is H mu o (Qhat - Q), whose dual norm collapses to
        // H sqrt(E_mu ||Qhat_s - Q_s||_dual^2).
        let dual = reg.natural_norm();
        let eps_grad = h * (0..mdp.n_states())
            .map(|s| {
                let d: Vec<f64> = q_hat.0[s]
                    .iter()
                    .zip(&q_exact.0[s])
                    .map(|(a, b)| a - b)
                    .collect();
                let n = dual.dual(&d);
                occ.mu[s] * n * n
            })
            .sum::<f64>()
            .sqrt();

        let geom = pmd_geometry(mdp, &wrapped, &reg, occ.mu.clone())?;
        probe_subproblem_identity(mdp, &wrapped, &pi, &q_exact, &occ, &geom, eta, k, tol)?;

        let grad_hat_flat: Vec<f64> = (0..mdp.n_states())
            .flat_map(|s| {
                let w = h * occ.mu[s];
                q_hat.0[s].iter().map(move |&q| w * q).collect::<Vec<_>>()
            })
            .collect();
        let obj = PmdStepObjective {
            mdp,
            tol,
            grad_hat_flat,
            eps_grad,
        };
        let x = flatten(pi.rows());
        let out = prox_step(&obj, &geom, &set, &x, eta, config.inner_tol, tol)?;
        warned_inner |= out.cert.hit_cap;

        if descent_certified {
            let slack = check_descent(&obj, &geom, &x, &out.x_plus, &out.cert, eta)?;
            if slack < -tol.lemma_slack {
                return Err(Error::CheckFailed(format!(
                    "descent bound violated by {slack} at iteration {k}"
                )));
            }
        }
        stationarity_bound(&obj, &geom, &set, &x, &out.cert, eta, tol)?;

        records.push(IterateRecord {
            k,
            policy: pi.clone(),
            hull_coords: coords.clone(),
            value,
            gap: f64::NAN,
            eps_act: out.cert.eps_opt,
            eps_crit_realized,
            grad_mapping_norm: out.cert.grad_mapping_norm,
            advantage,
            min_prob,
        });

        pi = Policy::from_rows_unchecked(unflatten(&out.x_plus, mdp.n_actions()));
        coords = out.hull_coords;
    }

    // Gap reference: the supplied best-in-class value, tightened by the
    // best value this run visited (a valid upper bound on the optimum).
    let best_seen = values.iter().copied().fold(f64::INFINITY, f64::min);
    let supplied = config.reference_value.unwrap_or(f64::INFINITY);
    let reference_value = supplied.min(best_seen);
    let reference_refined = best_seen < supplied;
    for rec in &mut records {
        rec.gap = rec.value - reference_value;
    }

    Ok(PmdRun {
        records,
        wrapped_class: wrapped,
        eta,
        eps_expl,
        eps_expl_clipped,
        beta_hat,
        reference_value,
        reference_refined,
        descent_certified,
        warned_inner,
    })
}

/// The displayed PMD subproblem and its prox-step reformulation must be
/// the same function of the candidate policy up to an additive constant;
/// with the exact Q-function the constant is zero. Verified on three
/// probe policies spread over the class.
#[allow(clippy::too_many_arguments)]
fn probe_subproblem_identity(
    mdp: &Mdp,
    class: &PolicyClass,
    pi_k: &Policy,
    q: &QFunction,
    occ: &Occupancy,
    geom: &LocalGeometry,
    eta: f64,
    k: usize,
    tol: &Tolerances,
) -> Result<()> {
    let h = mdp.horizon();
    let grad_flat: Vec<f64> = (0..mdp.n_states())
        .flat_map(|s| {
            let w = h * occ.mu[s];
            q.0[s].iter().map(move |&qq| w * qq).collect::<Vec<_>>()
        })
        .collect();
    let x = flatten(pi_k.rows());

    let uniform_in_class = match class.unwrap_eps().0 {
        PolicyClass::ConvexHull { bases } => {
            let m = bases.len();
            class.materialize(&Member::Hull(vec![1.0 / m as f64; m]), tol)?
        }
        _ => {
            let (base, eps_total) = class.unwrap_eps();
            debug_assert!(matches!(base, PolicyClass::Complete));
            let _ = eps_total;
            Policy::uniform(mdp.n_states(), mdp.n_actions())
        }
    };
    let (lmo_vertex, _) = class.linear_min_oracle(q.0.as_slice())?;
    let probes = [
        uniform_in_class.clone(),
        lmo_vertex,
        pi_k.mix(&uniform_in_class, 0.5),
    ];

    for probe in &probes {
        // Displayed form: expectation over states of the weighted linear
        // term plus the per-state divergence.
        let mut lhs = 0.0;
        for s in 0..mdp.n_states() {
            if occ.mu[s] == 0.0 {
                continue;
            }
            let linear: f64 = q.0[s]
                .iter()
                .zip(probe.row(s))
                .map(|(qq, p)| qq * p)
                .sum();
            lhs += occ.mu[s]
                * (h * linear + geom.reg.bregman(probe.row(s), pi_k.row(s), tol)? / eta);
        }
        // Prox form: <grad V, probe> + (1/eta) B_{R_mu}(probe, pi_k).
        let probe_flat = flatten(probe.rows());
        let rhs = grad_flat
            .iter()
            .zip(&probe_flat)
            .map(|(g, p)| g * p)
            .sum::<f64>()
            + geom.bregman(&probe_flat, &x, tol)? / eta;
        // Scale by the compared magnitudes: at certified step sizes the
        // 1/eta Bregman terms reach 1e6 and up, where a flat absolute
        // tolerance would flag plain roundoff.
        let scale = 1.0 + lhs.abs().max(rhs.abs());
        if (lhs - rhs).abs() > tol.identity * scale {
            return Err(Error::CheckFailed(format!(
                "subproblem/prox identity off by {} at iteration {k} (scale {scale:.3e})",
                lhs - rhs
            )));
        }
    }
    Ok(())
}

/// One record of the log-linear natural-gradient baseline.
#[derive(Debug, Clone)]
pub struct NpgRecord {
    pub k: usize,
    pub theta: Vec<f64>,
    pub value: f64,
    /// In-distribution least-squares error of the critic fit leaving
    /// this iterate (NaN on the final record).
    pub fit_mse: f64,
    pub ridge_used: bool,
}

/// Natural policy gradient on the softmax-of-features class: repeated
/// least-squares critic fits and parameter steps `theta - eta w`.
pub fn run_npg_loglinear(
    mdp: &Mdp,
    features: &FeatureMap,
    theta0: &[f64],
    eta: f64,
    k_iters: usize,
    tol: &Tolerances,
) -> Result<Vec<NpgRecord>> {
    let mut theta = theta0.to_vec();
    let mut records = Vec::with_capacity(k_iters + 1);
    for k in 0..=k_iters {
        let pi = crate::policy::softmax_policy(features, &theta);
        let value = policy_value(mdp, &pi, tol)?;
        if k == k_iters {
            records.push(NpgRecord {
                k,
                theta: theta.clone(),
                value,
                fit_mse: f64::NAN,
                ridge_used: false,
            });
            break;
        }
        let step = crate::policy::loglinear_npg_step(mdp, features, &theta, eta, tol)?;
        records.push(NpgRecord {
            k,
            theta: theta.clone(),
            value,
            fit_mse: step.fit_mse,
            ridge_used: step.ridge_used,
        });
        theta = step.theta;
    }
    Ok(records)
}

/// Per-run CSV: one row per iterate, step fields blank on the final row.
pub fn write_pmd_csv(run: &PmdRun, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "k",
        "value",
        "gap",
        "eps_act",
        "eps_crit_realized",
        "grad_map",
        "advantage",
        "min_prob",
    ])?;
    let fmt = |v: f64| {
        if v.is_nan() {
            String::new()
        } else {
            format!("{v:.17e}")
        }
    };
    for rec in &run.records {
        w.write_record([
            rec.k.to_string(),
            fmt(rec.value),
            fmt(rec.gap),
            fmt(rec.eps_act),
            fmt(rec.eps_crit_realized),
            fmt(rec.grad_mapping_norm),
            fmt(rec.advantage),
            fmt(rec.min_prob),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Mdp;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn small_mdp() -> Mdp {
        Mdp::new(
            0.9,
            vec![0.5, 0.5],
            vec![vec![0.8, 0.1], vec![0.2, 0.9]],
            vec![
                vec![vec![0.7, 0.3], vec![0.2, 0.8]],
                vec![vec![0.4, 0.6], vec![0.9, 0.1]],
            ],
            &tol(),
        )
        .unwrap()
    }

    #[test]
    fn exact_critic_returns_the_true_q() {
        let mdp = small_mdp();
        let pi = Policy::uniform(2, 2);
        let (q_hat, realized) = critic(&mdp, &pi, CriticNoise::Exact, &tol()).unwrap();
        let q = evaluate_q(&mdp, &pi, &tol()).unwrap();
        assert_eq!(q_hat.0, q.0);
        assert_eq!(realized, 0.0);
    }

    #[test]
    fn noisy_critic_hits_its_target_error_exactly() {
        let mdp = small_mdp();
        let pi = Policy::uniform(2, 2);
        let spec = CriticNoise::Seeded {
            eps_crit: 0.01,
            seed: 7,
        };
        let (q_hat, realized) = critic(&mdp, &pi, spec, &tol()).unwrap();
        assert!((realized - 0.01).abs() < 1e-10, "realized {realized}");

        // Independent recomputation of the weighted error.
        let q = evaluate_q(&mdp, &pi, &tol()).unwrap();
        let occ = occupancy(&mdp, &pi, mdp.rho0(), &tol()).unwrap();
        let mut err = 0.0;
        for s in 0..2 {
            for a in 0..2 {
                let d = q_hat.0[s][a] - q.0[s][a];
                err += occ.mu[s] * d * d;
            }
        }
        assert!((err - 0.01).abs() < 1e-10);

        // A different seed perturbs differently but lands on the same
        // error magnitude.
        let (q_hat2, realized2) = critic(
            &mdp,
            &pi,
            CriticNoise::Seeded {
                eps_crit: 0.01,
                seed: 8,
            },
            &tol(),
        )
        .unwrap();
        assert!((realized2 - 0.01).abs() < 1e-10);
        assert!(q_hat.0 != q_hat2.0);
    }

    #[test]
    fn noisy_critic_leaves_unvisited_states_exact() {
        // rho0 concentrated on state 0 and no way back from it.
        let mdp = Mdp::new(
            0.5,
            vec![1.0, 0.0],
            vec![vec![0.3, 0.7], vec![0.1, 0.2]],
            vec![
                vec![vec![1.0, 0.0], vec![1.0, 0.0]],
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            ],
            &tol(),
        )
        .unwrap();
        let pi = Policy::uniform(2, 2);
        let (q_hat, _) = critic(
            &mdp,
            &pi,
            CriticNoise::Seeded {
                eps_crit: 0.5,
                seed: 3,
            },
            &tol(),
        )
        .unwrap();
        let q = evaluate_q(&mdp, &pi, &tol()).unwrap();
        assert_eq!(q_hat.0[1], q.0[1]);
        assert!(q_hat.0[0] != q.0[0]);
    }

    #[test]
    fn smoothness_constant_formula_values() {
        // H = 10, A = 2, eps_expl = 0.5 wrapped over a deterministic
        // base: floor 0.25, l1 constant 2 * 1000 / 0.5 = 4000.
        let mdp = Mdp::new(
            0.9,
            vec![1.0],
            vec![vec![0.0, 0.0]],
            vec![vec![vec![1.0], vec![1.0]]],
            &tol(),
        )
        .unwrap();
        let det = PolicyClass::ConvexHull {
            bases: vec![Policy::deterministic(2, &[0])],
        };
        let wrapped = PolicyClass::EpsGreedy {
            inner: Box::new(det.clone()),
            eps: 0.5,
        };
        let b1 = smoothness_constant(&wrapped, &mdp, ActionNorm::L1).unwrap();
        assert!((b1 - 4000.0).abs() < 1e-9);
        let b2 = smoothness_constant(&wrapped, &mdp, ActionNorm::L2).unwrap();
        assert!((b2 - 8000.0).abs() < 1e-9);
        // Unwrapped deterministic base: floor 0, unbounded.
        assert!(smoothness_constant(&det, &mdp, ActionNorm::L1).is_err());
        // Single action: floor 1, constant 2 H^3.
        let single = PolicyClass::ConvexHull {
            bases: vec![Policy::deterministic(1, &[0])],
        };
        let b = smoothness_constant(&single, &mdp, ActionNorm::L1).unwrap();
        assert!((b - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn subproblem_closed_form_agrees_with_hull_solver() {
        let mdp = small_mdp();
        let pi = Policy::new(vec![vec![0.6, 0.4], vec![0.3, 0.7]], &tol()).unwrap();
        let occ = occupancy(&mdp, &pi, mdp.rho0(), &tol()).unwrap();
        let (q_hat, _) = critic(&mdp, &pi, CriticNoise::Exact, &tol()).unwrap();
        let eta = 0.05;

        let complete = PolicyClass::Complete;
        let a = pmd_subproblem(
            &mdp,
            &complete,
            &pi,
            &q_hat,
            &occ,
            eta,
            &Regularizer::Euclidean,
            1e-12,
            &tol(),
        )
        .unwrap();

        // The same feasible set presented as the hull of all four
        // deterministic policies; the generic solver must agree.
        let dets = PolicyClass::ConvexHull {
            bases: vec![
                Policy::deterministic(2, &[0, 0]),
                Policy::deterministic(2, &[0, 1]),
                Policy::deterministic(2, &[1, 0]),
                Policy::deterministic(2, &[1, 1]),
            ],
        };
        let b = pmd_subproblem(
            &mdp,
            &dets,
            &pi,
            &q_hat,
            &occ,
            eta,
            &Regularizer::Euclidean,
            1e-13,
            &tol(),
        )
        .unwrap();
        for s in 0..2 {
            for ac in 0..2 {
                assert!(
                    (a.pi_next.prob(s, ac) - b.pi_next.prob(s, ac)).abs() < 1e-7,
                    "state {s} action {ac}"
                );
            }
        }
        assert!(a.eps_act <= 1e-12);
    }

    #[test]
    fn vanishing_step_size_keeps_the_policy() {
        let mdp = small_mdp();
        let pi = Policy::new(vec![vec![0.6, 0.4], vec![0.3, 0.7]], &tol()).unwrap();
        let occ = occupancy(&mdp, &pi, mdp.rho0(), &tol()).unwrap();
        let (q_hat, _) = critic(&mdp, &pi, CriticNoise::Exact, &tol()).unwrap();
        let out = pmd_subproblem(
            &mdp,
            &PolicyClass::Complete,
            &pi,
            &q_hat,
            &occ,
            1e-9,
            &Regularizer::Euclidean,
            1e-14,
            &tol(),
        )
        .unwrap();
        let drift: f64 = (0..2)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| (out.pi_next.prob(s, a) - pi.prob(s, a)).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-6, "drift {drift}");
    }

    #[test]
    fn action_indifferent_q_fixes_the_policy() {
        let mdp = small_mdp();
        let pi = Policy::new(vec![vec![0.6, 0.4], vec![0.3, 0.7]], &tol()).unwrap();
        let occ = occupancy(&mdp, &pi, mdp.rho0(), &tol()).unwrap();
        let q_const = QFunction(vec![vec![2.5, 2.5], vec![1.0, 1.0]]);
        for reg in [
            Regularizer::Euclidean,
            Regularizer::NegEntropy { domain_floor: 0.0 },
        ] {
            let out = pmd_subproblem(
                &mdp,
                &PolicyClass::Complete,
                &pi,
                &q_const,
                &occ,
                0.2,
                &reg,
                1e-13,
                &tol(),
            )
            .unwrap();
            for s in 0..2 {
                for a in 0..2 {
                    assert!(
                        (out.pi_next.prob(s, a) - pi.prob(s, a)).abs() < 1e-12,
                        "{reg:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_iteration_run_reports_the_initial_policy() {
        let mdp = small_mdp();
        let config = PmdConfig {
            eta: Some(0.01),
            k_iters: 0,
            regularizer: Regularizer::Euclidean,
            eps_expl: Some(0.1),
            critic_noise: 0.0,
            inner_tol: 1e-10,
            seed: 0,
            initial: None,
            reference_value: None,
        };
        let run = run_pmd(&mdp, &PolicyClass::Complete, &config, &tol()).unwrap();
        assert_eq!(run.records.len(), 1);
        assert!(run.records[0].eps_act.is_nan());
        assert!((run.records[0].gap - 0.0).abs() < 1e-15);
    }

    #[test]
    fn default_step_size_certifies_descent_each_iteration() {
        let mdp = small_mdp();
        let config = PmdConfig {
            eta: None,
            k_iters: 15,
            regularizer: Regularizer::Euclidean,
            eps_expl: Some(0.2),
            critic_noise: 0.0,
            inner_tol: 1e-11,
            seed: 0,
            initial: None,
            reference_value: None,
        };
        let run = run_pmd(&mdp, &PolicyClass::Complete, &config, &tol()).unwrap();
        assert!(run.descent_certified);
        assert!((run.eta - 1.0 / (2.0 * run.beta_hat)).abs() < 1e-18);
        // Exact oracles: value never increases beyond the actor error.
        for pair in run.records.windows(2) {
            assert!(pair[1].value <= pair[0].value + pair[0].eps_act + 1e-9);
        }
        assert_eq!(run.records.len(), 16);
    }

    #[test]
    fn practical_step_size_makes_visible_progress() {
        let mdp = small_mdp();
        let config = PmdConfig {
            eta: Some(0.5),
            k_iters: 60,
            regularizer: Regularizer::Euclidean,
            eps_expl: Some(0.05),
            critic_noise: 0.0,
            inner_tol: 1e-11,
            seed: 0,
            initial: None,
            reference_value: None,
        };
        let run = run_pmd(&mdp, &PolicyClass::Complete, &config, &tol()).unwrap();
        assert!(!run.descent_certified);
        let first = run.records.first().unwrap().value;
        let last = run.records.last().unwrap().value;
        assert!(
            last < first - 1e-3,
            "no progress: first {first}, last {last}"
        );
        // Gap is re-based on the best visited value, hence nonnegative.
        assert!(run.records.iter().all(|r| r.gap >= -1e-15));
        assert!(run.reference_refined);
    }

    #[test]
    fn entropy_run_respects_the_exploration_floor() {
        let mdp = small_mdp();
        let config = PmdConfig {
            eta: None,
            k_iters: 12,
            regularizer: Regularizer::NegEntropy { domain_floor: 0.0 },
            eps_expl: Some(0.2),
            critic_noise: 0.0,
            inner_tol: 1e-11,
            seed: 0,
            initial: None,
            reference_value: None,
        };
        let run = run_pmd(&mdp, &PolicyClass::Complete, &config, &tol()).unwrap();
        for rec in &run.records {
            assert!(rec.min_prob >= 0.1 - 1e-12);
        }
    }

    #[test]
    fn noisy_run_records_the_realized_critic_error() {
        let mdp = small_mdp();
        let config = PmdConfig {
            eta: None,
            k_iters: 8,
            regularizer: Regularizer::Euclidean,
            eps_expl: Some(0.1),
            critic_noise: 1e-4,
            inner_tol: 1e-11,
            seed: 42,
            initial: None,
            reference_value: None,
        };
        let run = run_pmd(&mdp, &PolicyClass::Complete, &config, &tol()).unwrap();
        for rec in &run.records[..8] {
            assert!((rec.eps_crit_realized - 1e-4).abs() < 1e-12);
        }
    }

    #[test]
    fn hull_run_tracks_hull_coordinates() {
        let mdp = small_mdp();
        let class = PolicyClass::ConvexHull {
            bases: vec![
                Policy::deterministic(2, &[0, 0]),
                Policy::deterministic(2, &[1, 1]),
                Policy::uniform(2, 2),
            ],
        };
        let config = PmdConfig {
            eta: None,
            k_iters: 10,
            regularizer: Regularizer::Euclidean,
            eps_expl: Some(0.1),
            critic_noise: 0.0,
            inner_tol: 1e-11,
            seed: 0,
            initial: None,
            reference_value: None,
        };
        let run = run_pmd(&mdp, &class, &config, &tol()).unwrap();
        // Records past the first carry the coordinates that produced them.
        for rec in &run.records[1..] {
            let lambda = rec.hull_coords.as_ref().expect("hull run keeps coords");
            assert!((lambda.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn exploration_tuning_matches_the_formulas() {
        let (e, clipped) = tuned_eps_expl(&Regularizer::Euclidean, 1000, 3);
        assert!((e - 0.01).abs() < 1e-12);
        assert!(!clipped);
        let (e, clipped) = tuned_eps_expl(&Regularizer::NegEntropy { domain_floor: 0.0 }, 128, 2);
        assert!((e - 128.0f64.powf(-2.0 / 7.0) * 2.0f64.powf(0.4)).abs() < 1e-12);
        assert!(!clipped);
        // Small K with many actions pushes the entropy tuning past 1.
        let (e, clipped) = tuned_eps_expl(&Regularizer::NegEntropy { domain_floor: 0.0 }, 1, 4);
        assert!(clipped);
        assert!(e < 1.0);
    }

    #[test]
    fn npg_baseline_descends_on_a_tabular_instance() {
        let mdp = small_mdp();
        let features = FeatureMap::one_hot(2, 2);
        let records =
            run_npg_loglinear(&mdp, &features, &[0.0; 4], 0.5, 20, &tol()).unwrap();
        assert_eq!(records.len(), 21);
        let first = records.first().unwrap().value;
        let last = records.last().unwrap().value;
        assert!(last < first);
        // One-hot features fit exactly.
        for rec in &records[..20] {
            assert!(rec.fit_mse < 1e-16);
        }
    }

    #[test]
    fn pmd_csv_lists_every_iterate() {
        let mdp = small_mdp();
        let config = PmdConfig {
            eta: None,
            k_iters: 5,
            regularizer: Regularizer::Euclidean,
            eps_expl: Some(0.1),
            critic_noise: 0.0,
            inner_tol: 1e-10,
            seed: 0,
            initial: None,
            reference_value: None,
        };
        let run = run_pmd(&mdp, &PolicyClass::Complete, &config, &tol()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        write_pmd_csv(&run, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 6);
        assert!(text.lines().nth(1).unwrap().starts_with("0,"));
    }
}

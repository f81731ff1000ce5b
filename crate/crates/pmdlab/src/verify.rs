//! Numerical certification of the analysis. Every checker recomputes one
//! stated inequality from exact linear-solve quantities and reports the
//! measured slack; batteries sweep checkers over seeded random instances
//! and reduce to the worst case. Nothing here trusts the optimizer: all
//! certified quantities are re-derived at the reported points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{
    builtin_instance, fig1_constant_policy, fig1_mdp, fig1_occupancy, fig1_q_table, fig1_value,
    fig2_mdp, fig2_occupancy_closed_form, fig2_policy_pair, random_mdp, random_hull_class,
    random_interior_policy,
};
use crate::error::{Error, Result};
use crate::geometry::{mirror_step, weighted_dual_norm, ActionNorm, Regularizer, WeightedNorm};
use crate::mdp::{
    evaluate_q, evaluate_value, occupancy, optimal_policy, policy_gradient, q_difference_identity,
    scalar_value, table_dot, value_difference, Mdp, Policy, QFunction,
};
use crate::pmd::{critic, pmd_subproblem, policy_value, CriticNoise};
use crate::policy::{eps_greedy_wrap, loglinear_npg_step, softmax_policy, FeatureMap, PolicyClass};
use crate::tol::Tolerances;

/// Default slack tolerance below which a report fails.
pub const REPORT_TOL: f64 = 1e-8;

/// One certified inequality: `lhs <= rhs` up to `tolerance`.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaReport {
    pub lemma_id: String,
    /// Human-readable description of the instance the check ran on.
    pub instance: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`; negative means the inequality is violated.
    pub slack: f64,
    pub pass: bool,
    pub tolerance: f64,
}

impl LemmaReport {
    pub fn new(lemma_id: &str, instance: String, lhs: f64, rhs: f64) -> LemmaReport {
        LemmaReport::with_tolerance(lemma_id, instance, lhs, rhs, REPORT_TOL)
    }

    pub fn with_tolerance(
        lemma_id: &str,
        instance: String,
        lhs: f64,
        rhs: f64,
        tolerance: f64,
    ) -> LemmaReport {
        let slack = rhs - lhs;
        LemmaReport {
            lemma_id: lemma_id.into(),
            instance,
            lhs,
            rhs,
            slack,
            // NaN slack must fail rather than sneak through a comparison.
            pass: slack >= -tolerance,
            tolerance,
        }
    }
}

/// Picks the worse of two reports (smaller slack). Used by batteries to
/// reduce many instances to the single binding case.
fn worse(a: LemmaReport, b: LemmaReport) -> LemmaReport {
    // NaN loses to everything: treat it as the binding case.
    if !b.slack.is_finite() && b.slack.is_nan() {
        return b;
    }
    if !a.slack.is_finite() && a.slack.is_nan() {
        return a;
    }
    if b.slack < a.slack {
        b
    } else {
        a
    }
}

fn mdp_descriptor(mdp: &Mdp) -> String {
    format!(
        "S={} A={} gamma={}",
        mdp.n_states(),
        mdp.n_actions(),
        mdp.gamma()
    )
}

fn policy_diff(pi_tilde: &Policy, pi: &Policy) -> Vec<Vec<f64>> {
    pi_tilde
        .rows()
        .iter()
        .zip(pi.rows())
        .map(|(t, p)| t.iter().zip(p).map(|(a, b)| a - b).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// Local smoothness
// ---------------------------------------------------------------------------

/// Certifies the two local-norm smoothness bounds at the pair (pi,
/// pi_tilde): the linearization error of the value at pi is at most
/// (H^3/sqrt(floor)) ||pi_tilde - pi||^2_{L2(mu),1} and
/// (A H^3/sqrt(floor)) ||pi_tilde - pi||^2_{L2(mu),2}, where floor is the
/// smallest action probability of pi.
pub fn check_local_smoothness(
    mdp: &Mdp,
    pi: &Policy,
    pi_tilde: &Policy,
    tol: &Tolerances,
) -> Result<[LemmaReport; 2]> {
    let floor = pi.min_prob();
    if floor <= 0.0 {
        return Err(Error::Domain(
            "smoothness bound needs a strictly positive action floor at the base policy".into(),
        ));
    }
    let h = mdp.horizon();
    let v = policy_value(mdp, pi, tol)?;
    let v_tilde = policy_value(mdp, pi_tilde, tol)?;
    let grad = policy_gradient(mdp, pi, tol)?;
    let diff = policy_diff(pi_tilde, pi);
    let linear: f64 = table_dot(&grad, &diff);
    let lhs = (v_tilde - v - linear).abs();

    let occ = occupancy(mdp, pi, mdp.rho0(), tol)?;
    let n1 = WeightedNorm::new(occ.mu.clone(), 2, ActionNorm::L1)?.apply(&diff)?;
    let n2 = WeightedNorm::new(occ.mu, 2, ActionNorm::L2)?.apply(&diff)?;
    let coeff = h.powi(3) / floor.sqrt();
    let a = mdp.n_actions() as f64;
    let instance = format!("{} floor={floor:.4}", mdp_descriptor(mdp));
    Ok([
        LemmaReport::new("local_smoothness_l1", instance.clone(), lhs, coeff * n1 * n1),
        LemmaReport::new("local_smoothness_l2", instance, lhs, a * coeff * n2 * n2),
    ])
}

/// Linearization-error to squared-local-norm ratio on the two-state chain
/// probe pair with exploration eps = p^2. The smoothness bound's 1/sqrt(eps)
/// dependence is tight up to constants: this ratio grows like 1/sqrt(eps).
pub fn fig2_tightness_ratio(p: f64, tol: &Tolerances) -> Result<f64> {
    if !(0.0 < p && p < 0.5) {
        return Err(Error::Domain(format!("move probability p = {p} outside (0, 1/2)")));
    }
    let eps = p * p;
    let mdp = fig2_mdp(tol)?;
    let (pi, pi_tilde) = fig2_policy_pair(p, eps, tol)?;
    let v = policy_value(&mdp, &pi, tol)?;
    let v_tilde = policy_value(&mdp, &pi_tilde, tol)?;
    let grad = policy_gradient(&mdp, &pi, tol)?;
    let diff = policy_diff(&pi_tilde, &pi);
    let lin_err = (v_tilde - v - table_dot(&grad, &diff)).abs();
    let occ = occupancy(&mdp, &pi, mdp.rho0(), tol)?;
    let norm = WeightedNorm::new(occ.mu, 2, ActionNorm::L1)?.apply(&diff)?;
    Ok(lin_err / (norm * norm))
}

// ---------------------------------------------------------------------------
// VGD estimation
// ---------------------------------------------------------------------------

/// Reference the suboptimality gaps are measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VStarMode {
    /// Best value attainable inside the class (found by search; the
    /// reported value upper-bounds the true optimum, making gaps
    /// conservative).
    InClass,
    /// Optimal value over all policies, via exact policy iteration.
    Global,
}

#[derive(Debug, Clone, Serialize)]
pub struct VgdSample {
    #[serde(skip)]
    pub policy: Policy,
    pub value: f64,
    /// `value - reference`.
    pub gap: f64,
    /// `max_{pi_tilde in class} <grad V, pi - pi_tilde>`, clamped at zero.
    pub advantage: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub c: f64,
    pub eps_vgd: f64,
}

/// Best in-class point found by `best_in_class_value`.
#[derive(Debug, Clone, Serialize)]
pub struct BestInClass {
    pub value: f64,
    #[serde(skip)]
    pub policy: Policy,
    /// Hull coordinates of the minimizer when the class is a hull.
    pub coords: Option<Vec<f64>>,
}

/// Sampled estimate of the gradient-dominance tradeoff: for each constant
/// C, `eps_vgd(C) = max_i (gap_i - C * adv_i)` is the smallest floor that
/// makes the class (C, eps)-dominated on the sample.
#[derive(Debug, Clone, Serialize)]
pub struct VgdEstimate {
    pub mode: VStarMode,
    pub reference_value: f64,
    pub best_in_class: BestInClass,
    pub samples: Vec<VgdSample>,
    pub curve: Vec<CurvePoint>,
    /// No sampled point is first-order stationary over the class; the
    /// curve can then dip below zero for large C.
    pub sampling_missed_minimizer: bool,
}

impl VgdEstimate {
    pub fn eps_vgd_at(&self, c: f64) -> f64 {
        self.samples
            .iter()
            .map(|s| s.gap - c * s.advantage)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// A (C, eps_vgd) pair valid for every sample: C is the largest
    /// gap-to-advantage ratio (at least 1), eps the residual floor.
    pub fn measured_pair(&self) -> (f64, f64) {
        let mut c_star = 1.0f64;
        for s in &self.samples {
            if s.advantage > 1e-12 * (1.0 + s.gap.abs()) {
                c_star = c_star.max(s.gap / s.advantage);
            }
        }
        let eps = self.eps_vgd_at(c_star).max(0.0);
        (c_star, eps)
    }
}

/// All barycentric grids with coordinates in {0, 1/res, ..., 1} summing
/// to one. Sized res^(m-1)-ish, so callers cap m.
fn lambda_grid(m: usize, res: usize) -> Vec<Vec<f64>> {
    fn rec(m: usize, left: usize, res: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if m == 1 {
            let mut lam = prefix.clone();
            lam.push(left);
            out.push(lam.iter().map(|&k| k as f64 / res as f64).collect());
            return;
        }
        for k in 0..=left {
            prefix.push(k);
            rec(m - 1, left - k, res, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(m, res, res, &mut Vec::new(), &mut out);
    out
}

fn hull_member(vertices: &[Policy], lambda: &[f64]) -> Policy {
    let n_states = vertices[0].n_states();
    let n_actions = vertices[0].n_actions();
    let mut rows = vec![vec![0.0; n_actions]; n_states];
    for (v, &w) in vertices.iter().zip(lambda) {
        for s in 0..n_states {
            for a in 0..n_actions {
                rows[s][a] += w * v.prob(s, a);
            }
        }
    }
    Policy::from_rows_unchecked(rows)
}

/// Minimizes the value over a hull by coordinate search: every vertex, a
/// 1/50 barycentric grid when the hull has at most three vertices, and
/// twenty projected-gradient descents from random starts otherwise. The
/// result upper-bounds the true class optimum.
fn best_over_hull(
    mdp: &Mdp,
    vertices: &[Policy],
    seed: u64,
    tol: &Tolerances,
) -> Result<BestInClass> {
    let m = vertices.len();
    let eval = |lambda: &[f64]| -> Result<f64> {
        policy_value(mdp, &hull_member(vertices, lambda), tol)
    };

    let mut best_lambda = vec![1.0 / m as f64; m];
    let mut best_value = eval(&best_lambda)?;
    let consider = |lam: Vec<f64>, val: f64, best_l: &mut Vec<f64>, best_v: &mut f64| {
        if val < *best_v {
            *best_v = val;
            *best_l = lam;
        }
    };

    for j in 0..m {
        let mut lam = vec![0.0; m];
        lam[j] = 1.0;
        let val = eval(&lam)?;
        consider(lam, val, &mut best_lambda, &mut best_value);
    }

    if m <= 3 {
        for lam in lambda_grid(m, 50) {
            let val = eval(&lam)?;
            consider(lam, val, &mut best_lambda, &mut best_value);
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut starts: Vec<Vec<f64>> = (0..m)
            .map(|j| {
                let mut corner = vec![0.0; m];
                corner[j] = 1.0;
                corner
            })
            .collect();
        starts.push(vec![1.0 / m as f64; m]);
        starts.extend((0..20).map(|_| crate::bench::dirichlet_flat(&mut rng, m)));
        for start in starts {
            let mut lam = start;
            let mut val = eval(&lam)?;
            for _ in 0..400 {
                let pi = hull_member(vertices, &lam);
                let grad_table = policy_gradient(mdp, &pi, tol)?;
                let score: Vec<f64> = vertices
                    .iter()
                    .map(|v| table_dot(&grad_table, v.rows()))
                    .collect();
                let scale = score.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
                if scale <= 1e-14 {
                    break;
                }
                // Projected-gradient step, taking the best point on a
                // geometric step-size ladder. Greedier than a first-hit
                // backtracking rule, which creeps on narrow valleys.
                let mut best_trial: Option<(Vec<f64>, f64)> = None;
                let mut t = 4.0 / scale;
                for _ in 0..40 {
                    let trial: Vec<f64> = crate::geometry::simplex_project(
                        &lam.iter().zip(&score).map(|(l, s)| l - t * s).collect::<Vec<_>>(),
                    );
                    let tv = eval(&trial)?;
                    if best_trial.as_ref().is_none_or(|(_, bv)| tv < *bv) {
                        best_trial = Some((trial, tv));
                    }
                    t *= 0.5;
                }
                match best_trial {
                    Some((trial, tv)) if tv < val - 1e-14 => {
                        lam = trial;
                        val = tv;
                    }
                    _ => break,
                }
            }
            consider(lam, val, &mut best_lambda, &mut best_value);
        }
    }

    Ok(BestInClass {
        value: best_value,
        policy: hull_member(vertices, &best_lambda),
        coords: Some(best_lambda),
    })
}

/// Best value attainable within the class. Complete classes (wrapped or
/// not) are solved exactly: an eps-greedy wrap is absorbed into the MDP
/// (mixing every transition row and cost toward their action average),
/// policy iteration solves the absorbed model, and the result is wrapped
/// back. Hulls are searched per `best_over_hull`.
pub fn best_in_class_value(
    mdp: &Mdp,
    class: &PolicyClass,
    seed: u64,
    tol: &Tolerances,
) -> Result<BestInClass> {
    let (inner, eps_total) = class.unwrap_eps();
    match inner {
        PolicyClass::Complete => {
            let solve_on = if eps_total > 0.0 {
                let n_actions = mdp.n_actions();
                let mut cost = Vec::with_capacity(mdp.n_states());
                let mut trans = Vec::with_capacity(mdp.n_states());
                for s in 0..mdp.n_states() {
                    let avg_cost: f64 =
                        (0..n_actions).map(|a| mdp.cost(s, a)).sum::<f64>() / n_actions as f64;
                    let mut avg_row = vec![0.0; mdp.n_states()];
                    for a in 0..n_actions {
                        for (dst, p) in mdp.next(s, a).iter().enumerate() {
                            avg_row[dst] += p / n_actions as f64;
                        }
                    }
                    cost.push(
                        (0..n_actions)
                            .map(|a| (1.0 - eps_total) * mdp.cost(s, a) + eps_total * avg_cost)
                            .collect::<Vec<_>>(),
                    );
                    trans.push(
                        (0..n_actions)
                            .map(|a| {
                                mdp.next(s, a)
                                    .iter()
                                    .zip(&avg_row)
                                    .map(|(p, avg)| (1.0 - eps_total) * p + eps_total * avg)
                                    .collect::<Vec<_>>()
                            })
                            .collect::<Vec<_>>(),
                    );
                }
                Mdp::new(mdp.gamma(), mdp.rho0().to_vec(), cost, trans, tol)?
            } else {
                mdp.clone()
            };
            let inner_opt = optimal_policy(&solve_on, tol)?;
            let policy = if eps_total > 0.0 {
                eps_greedy_wrap(&inner_opt, eps_total)
            } else {
                inner_opt
            };
            let value = policy_value(mdp, &policy, tol)?;
            Ok(BestInClass { value, policy, coords: None })
        }
        PolicyClass::ConvexHull { .. } => {
            let vertices = class
                .hull_vertices()
                .expect("hull class exposes its vertices");
            best_over_hull(mdp, &vertices, seed, tol)
        }
        PolicyClass::EpsGreedy { .. } => unreachable!("unwrap_eps strips every wrap"),
        PolicyClass::LogLinear { .. } => Err(Error::Unsupported(
            "best-in-class search needs a convex class; log-linear families are handled through their hull image".into(),
        )),
    }
}

/// Samples the class and measures the gradient-dominance tradeoff. The
/// best point found by `best_in_class_value` is prepended as sample zero
/// so the curve always sees a (near-)stationary point; the reference is
/// re-based onto any sampled value that beats the search.
pub fn estimate_vgd(
    mdp: &Mdp,
    class: &PolicyClass,
    n_samples: usize,
    mode: VStarMode,
    seed: u64,
    tol: &Tolerances,
) -> Result<VgdEstimate> {
    if n_samples == 0 {
        return Err(Error::Config("VGD estimate needs at least one sample".into()));
    }
    if matches!(class.unwrap_eps().0, PolicyClass::LogLinear { .. }) {
        return Err(Error::Unsupported(
            "VGD estimation requires a convex class".into(),
        ));
    }
    class.validate(mdp.n_states(), mdp.n_actions(), tol)?;

    let best = best_in_class_value(mdp, class, seed, tol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut policies = vec![best.policy.clone()];
    for _ in 0..n_samples {
        policies.push(class.sample_member(&mut rng, mdp.n_states(), mdp.n_actions())?);
    }

    let values: Vec<f64> = policies
        .iter()
        .map(|pi| policy_value(mdp, pi, tol))
        .collect::<Result<_>>()?;
    let reference_value = match mode {
        VStarMode::InClass => values.iter().copied().fold(best.value, f64::min),
        VStarMode::Global => {
            let opt = optimal_policy(mdp, tol)?;
            policy_value(mdp, &opt, tol)?
        }
    };

    let mut samples = Vec::with_capacity(policies.len());
    for (pi, value) in policies.into_iter().zip(values) {
        let grad = policy_gradient(mdp, &pi, tol)?;
        let (_, lmo_val) = class.linear_min_oracle(&grad)?;
        let advantage = (table_dot(&grad, pi.rows()) - lmo_val).max(0.0);
        samples.push(VgdSample {
            policy: pi,
            value,
            gap: value - reference_value,
            advantage,
        });
    }

    let est = VgdEstimate {
        mode,
        reference_value,
        best_in_class: best,
        curve: (0..=24)
            .map(|j| {
                let c = 10f64.powf(j as f64 / 4.0);
                CurvePoint { c, eps_vgd: f64::NAN }
            })
            .collect(),
        sampling_missed_minimizer: samples.iter().all(|s| s.advantage > 1e-9),
        samples,
    };
    let mut est = est;
    for point in &mut est.curve {
        point.eps_vgd = est
            .samples
            .iter()
            .map(|s| s.gap - point.c * s.advantage)
            .fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(est)
}

// ---------------------------------------------------------------------------
// eps-greedy degradation and closure
// ---------------------------------------------------------------------------

/// Verifies that wrapping the class with eps-greedy exploration degrades
/// gradient dominance by at most the additive term 12 eps C* H^2 A: for
/// every sampled base policy pi with measured pair (C*, eps_vgd),
/// `V(pi^eps) - V*(wrapped) <= C* adv_wrapped + eps_vgd + 12 eps C* H^2 A`.
/// Returns the binding sample's report.
pub fn check_epsgreedy_vgd(
    mdp: &Mdp,
    class: &PolicyClass,
    eps_expl: f64,
    vgd: &VgdEstimate,
    seed: u64,
    tol: &Tolerances,
) -> Result<LemmaReport> {
    if !(0.0..1.0).contains(&eps_expl) {
        return Err(Error::Domain(format!(
            "exploration mix {eps_expl} outside [0, 1)"
        )));
    }
    let (c_star, eps_vgd) = vgd.measured_pair();
    let wrapped = if eps_expl > 0.0 {
        PolicyClass::EpsGreedy { inner: Box::new(class.clone()), eps: eps_expl }
    } else {
        class.clone()
    };
    let mut v_star = best_in_class_value(mdp, &wrapped, seed, tol)?.value;
    let wrapped_policies: Vec<Policy> = vgd
        .samples
        .iter()
        .map(|s| eps_greedy_wrap(&s.policy, eps_expl))
        .collect();
    let values: Vec<f64> = wrapped_policies
        .iter()
        .map(|pi| policy_value(mdp, pi, tol))
        .collect::<Result<_>>()?;
    // The samples are class members too; fold them into the reference so
    // a search miss can only make the verified inequality harder.
    for &v in &values {
        v_star = v_star.min(v);
    }

    let h = mdp.horizon();
    let degrade = 12.0 * eps_expl * c_star * h * h * mdp.n_actions() as f64;
    let mut report: Option<LemmaReport> = None;
    for (pi, value) in wrapped_policies.iter().zip(values) {
        let grad = policy_gradient(mdp, pi, tol)?;
        let (_, lmo_val) = wrapped.linear_min_oracle(&grad)?;
        let advantage = (table_dot(&grad, pi.rows()) - lmo_val).max(0.0);
        let lhs = value - v_star;
        let rhs = c_star * advantage + eps_vgd + degrade;
        let next = LemmaReport::new(
            "epsgreedy_vgd",
            format!(
                "{} eps={eps_expl} C*={c_star:.4} eps_vgd={eps_vgd:.3e} n={}",
                mdp_descriptor(mdp),
                vgd.samples.len()
            ),
            lhs,
            rhs,
        );
        report = Some(match report {
            None => next,
            Some(prev) => worse(prev, next),
        });
    }
    Ok(report.expect("estimate holds at least one sample"))
}

/// Sampling distribution over state-action pairs used by the closure
/// audit's second moments.
#[derive(Debug, Clone)]
pub enum VSampling {
    /// `v(s, a) = mu_pi(s) pi(a|s)`, the on-policy pair distribution.
    CurrentPair,
    /// `v(s, a) = mu_star(s) / A`: optimal-occupancy states, uniform
    /// actions.
    StarUniform,
    Custom(Vec<Vec<f64>>),
}

/// Everything the closure-to-dominance reduction measures at one policy.
#[derive(Debug, Clone, Serialize)]
pub struct ClosureReport {
    pub instance: String,
    pub eta: f64,
    pub regularizer: String,
    /// Proximal update restricted to the class.
    #[serde(skip)]
    pub in_class_update: Policy,
    /// The same update over the complete class.
    #[serde(skip)]
    pub complete_update: Policy,
    /// `L2(mu)` distance (with the regularizer's action norm) between the
    /// two updates.
    pub closure_error: f64,
    /// Worst second moment of `mu_tilde o pi_tilde / v` over the six
    /// (policy, occupancy) combinations the reduction touches.
    pub c_v: f64,
    /// `E_v (Qhat - Q)^2`.
    pub eps_approx: f64,
    /// Greedification gap of the class best response under Qhat.
    pub eps_greedy: f64,
    /// `max_s mu_star(s) / mu_pi(s)`; infinite when the current policy
    /// misses optimal-occupancy states (reported, never asserted).
    pub nu_star: f64,
    pub value_gap: f64,
    /// `max_{pi_tilde in class} <grad V, pi - pi_tilde>`.
    pub advantage: f64,
    /// `nu_star * advantage + H nu_star (eps_greedy + 4 sqrt(C_v eps_approx))`.
    pub bound: f64,
    pub slack: f64,
    /// False when an infinite ratio made the conclusion vacuous.
    pub asserted: bool,
}

impl ClosureReport {
    pub fn to_lemma_report(&self) -> LemmaReport {
        LemmaReport::new("closure_vgd", self.instance.clone(), self.value_gap, self.bound)
    }
}

/// Measures every quantity in the closure-implies-dominance reduction at
/// `pi` and evaluates its conclusion:
/// `V(pi) - V* <= nu* adv + H nu* (eps_greedy + 4 sqrt(C_v eps_approx))`.
/// `q_hat` is the critic estimate the class best-responds to (exact Q
/// when absent); `v` weights the second moments.
pub fn closure_audit(
    mdp: &Mdp,
    class: &PolicyClass,
    pi: &Policy,
    q_hat: Option<&QFunction>,
    eta: f64,
    reg: &Regularizer,
    v: VSampling,
    tol: &Tolerances,
) -> Result<ClosureReport> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::StepSize(format!("eta = {eta} must be positive")));
    }
    class.validate(mdp.n_states(), mdp.n_actions(), tol)?;
    let n_states = mdp.n_states();
    let n_actions = mdp.n_actions();
    let h = mdp.horizon();

    let occ = occupancy(mdp, pi, mdp.rho0(), tol)?;
    let q_exact = evaluate_q(mdp, pi, tol)?;
    let q_used = q_hat.unwrap_or(&q_exact);
    if q_used.0.len() != n_states || q_used.0.iter().any(|r| r.len() != n_actions) {
        return Err(Error::DimensionMismatch("critic table shape".into()));
    }

    let pi_star = optimal_policy(mdp, tol)?;
    let mu_star = occupancy(mdp, &pi_star, mdp.rho0(), tol)?;
    let v_star = policy_value(mdp, &pi_star, tol)?;

    let weights: Vec<Vec<f64>> = match v {
        VSampling::CurrentPair => (0..n_states)
            .map(|s| (0..n_actions).map(|a| occ.mu[s] * pi.prob(s, a)).collect())
            .collect(),
        VSampling::StarUniform => (0..n_states)
            .map(|s| vec![mu_star.mu[s] / n_actions as f64; n_actions])
            .collect(),
        VSampling::Custom(w) => {
            if w.len() != n_states || w.iter().any(|r| r.len() != n_actions) {
                return Err(Error::DimensionMismatch("sampling weights shape".into()));
            }
            let total: f64 = w.iter().flatten().sum();
            if w.iter().flatten().any(|&x| !(x >= 0.0) || !x.is_finite())
                || (total - 1.0).abs() > tol.policy_row
            {
                return Err(Error::InvalidDistribution(format!(
                    "sampling weights sum to {total}"
                )));
            }
            w
        }
    };

    let eps_approx: f64 = (0..n_states)
        .map(|s| {
            (0..n_actions)
                .map(|a| weights[s][a] * (q_used.0[s][a] - q_exact.0[s][a]).powi(2))
                .sum::<f64>()
        })
        .sum();

    // Class best response under the critic estimate: the linear oracle
    // with per-pair weights mu(s) Qhat(s, a).
    let response_grad: Vec<Vec<f64>> = (0..n_states)
        .map(|s| (0..n_actions).map(|a| occ.mu[s] * q_used.0[s][a]).collect())
        .collect();
    let (pi_plus, response_val) = class.linear_min_oracle(&response_grad)?;
    let pointwise_min: f64 = (0..n_states)
        .map(|s| {
            occ.mu[s]
                * q_used.0[s]
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min)
        })
        .sum();
    let eps_greedy = (response_val - pointwise_min).max(0.0);

    let ratio_sq = |mu_t: &[f64], pi_t: &Policy| -> f64 {
        let mut total = 0.0;
        for s in 0..n_states {
            for a in 0..n_actions {
                let num = mu_t[s] * pi_t.prob(s, a);
                if num == 0.0 {
                    continue;
                }
                if weights[s][a] <= 0.0 {
                    return f64::INFINITY;
                }
                total += num * num / weights[s][a];
            }
        }
        total
    };
    let mut c_v = 0.0f64;
    for pi_t in [pi, &pi_plus, &pi_star] {
        for mu_t in [&occ.mu, &mu_star.mu] {
            c_v = c_v.max(ratio_sq(mu_t, pi_t));
        }
    }

    let nu_star = (0..n_states)
        .map(|s| {
            if mu_star.mu[s] == 0.0 {
                0.0
            } else if occ.mu[s] <= 0.0 {
                f64::INFINITY
            } else {
                mu_star.mu[s] / occ.mu[s]
            }
        })
        .fold(0.0f64, f64::max);

    let grad = policy_gradient(mdp, pi, tol)?;
    let (_, lmo_val) = class.linear_min_oracle(&grad)?;
    let advantage = (table_dot(&grad, pi.rows()) - lmo_val).max(0.0);
    let value_gap = policy_value(mdp, pi, tol)? - v_star;

    let in_class = pmd_subproblem(mdp, class, pi, q_used, &occ, eta, reg, tol.inner_tol, tol)?;
    let complete = pmd_subproblem(
        mdp,
        &PolicyClass::Complete,
        pi,
        q_used,
        &occ,
        eta,
        reg,
        tol.inner_tol,
        tol,
    )?;
    let update_diff = policy_diff(&in_class.pi_next, &complete.pi_next);
    let closure_error =
        WeightedNorm::new(occ.mu.clone(), 2, reg.natural_norm())?.apply(&update_diff)?;

    // 0 * inf would poison the bound; no approximation error means the
    // concentrability factor is irrelevant.
    let moment_term = if eps_approx <= 0.0 {
        0.0
    } else {
        4.0 * (c_v * eps_approx).sqrt()
    };
    let bound = nu_star * advantage + h * nu_star * (eps_greedy + moment_term);
    let slack = bound - value_gap;
    let asserted = nu_star.is_finite() && c_v.is_finite();

    Ok(ClosureReport {
        instance: format!("{} eta={eta}", mdp_descriptor(mdp)),
        eta,
        regularizer: match reg {
            Regularizer::Euclidean => "euclidean".into(),
            Regularizer::NegEntropy { .. } => "neg_entropy".into(),
        },
        in_class_update: in_class.pi_next,
        complete_update: complete.pi_next,
        closure_error,
        c_v,
        eps_approx,
        eps_greedy,
        nu_star,
        value_gap,
        advantage,
        bound,
        slack,
        asserted,
    })
}

// ---------------------------------------------------------------------------
// Scalar lemmas: soft-min, mirror greedification, entropy smoothness
// ---------------------------------------------------------------------------

/// Soft-min approximation: with temperature tau = log(d)/delta, the
/// softmax-weighted mean of x exceeds min(x) by at most delta.
pub fn check_softmax_approx(x: &[f64], delta: f64) -> Result<LemmaReport> {
    if x.len() < 2 {
        return Err(Error::Domain("soft-min needs at least two entries".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta = {delta} must be positive")));
    }
    let d = x.len() as f64;
    let tau = d.ln() / delta;
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let mut num = 0.0;
    let mut den = 0.0;
    for &xi in x {
        let w = (-(tau * (xi - min))).exp();
        num += w * (xi - min);
        den += w;
    }
    let gap = num / den;
    Ok(LemmaReport::new(
        "softmax_min",
        format!("d={} delta={delta} tau={tau:.4}", x.len()),
        gap,
        delta,
    ))
}

/// Greedification via one mirror step: with a Bregman divergence bounded
/// by B over the simplex and eta = B/epsilon, the mirror update against g
/// lands within epsilon of min(g). Only the Euclidean regularizer has a
/// bounded divergence on the closed simplex (B = 2).
pub fn check_omd_to_greedy(
    reg: &Regularizer,
    g: &[f64],
    x: &[f64],
    epsilon: f64,
    tol: &Tolerances,
) -> Result<LemmaReport> {
    if matches!(reg, Regularizer::NegEntropy { .. }) {
        return Err(Error::Unsupported(
            "entropy Bregman divergence is unbounded on the closed simplex; the greedification bound needs a bounded divergence".into(),
        ));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon = {epsilon} must be positive")));
    }
    if g.len() != x.len() || g.is_empty() {
        return Err(Error::DimensionMismatch("scores and point differ in length".into()));
    }
    let total: f64 = x.iter().sum();
    if x.iter().any(|&p| p < -tol.policy_row) || (total - 1.0).abs() > tol.policy_row {
        return Err(Error::InvalidDistribution(format!(
            "start point sums to {total}"
        )));
    }
    const EUCLIDEAN_SIMPLEX_BREGMAN_BOUND: f64 = 2.0;
    let eta = EUCLIDEAN_SIMPLEX_BREGMAN_BOUND / epsilon;
    let x_plus = mirror_step(x, g, eta, reg)?;
    let lhs: f64 = g.iter().zip(&x_plus).map(|(gi, pi)| gi * pi).sum();
    let min = g.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LemmaReport::new(
        "mirror_greedy",
        format!("d={} epsilon={epsilon} eta={eta:.3}", g.len()),
        lhs,
        min + epsilon,
    ))
}

/// Gradient Lipschitz bound for negative entropy on the floored simplex:
/// `||grad h(p) - grad h(q)||_inf <= (1/floor) ||p - q||_1`.
pub fn check_negent_smooth(
    p: &[f64],
    q: &[f64],
    eps_floor: f64,
    tol: &Tolerances,
) -> Result<LemmaReport> {
    if !(eps_floor > 0.0) {
        return Err(Error::Domain(format!("floor = {eps_floor} must be positive")));
    }
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::DimensionMismatch("points differ in length".into()));
    }
    for (name, v) in [("first", p), ("second", q)] {
        let total: f64 = v.iter().sum();
        if (total - 1.0).abs() > tol.policy_row {
            return Err(Error::InvalidDistribution(format!(
                "{name} point sums to {total}"
            )));
        }
        if v.iter().any(|&x| x < eps_floor - tol.floor_slack) {
            return Err(Error::Domain(format!(
                "{name} point leaves the floor-{eps_floor} simplex"
            )));
        }
    }
    let lhs = p
        .iter()
        .zip(q)
        .map(|(a, b)| (a.ln() - b.ln()).abs())
        .fold(0.0f64, f64::max);
    let l1: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    Ok(LemmaReport::new(
        "negent_lipschitz",
        format!("d={} floor={eps_floor}", p.len()),
        lhs,
        l1 / eps_floor,
    ))
}

// ---------------------------------------------------------------------------
// Log-linear baseline floor certificate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct NpgFloorRecord {
    pub k: usize,
    pub value: f64,
    /// Residual of the fitted linear critic under the reference
    /// state-uniform action distribution.
    pub eps_bias: f64,
    /// `H nu0 sqrt(A * eps_bias)` with `nu0 = ||mu_ref / rho0||_inf`; the
    /// concentrability factor is set to its lower bound 1, so this
    /// understates the bound such analyses would report.
    pub floor: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NpgFloorCertificate {
    pub records: Vec<NpgFloorRecord>,
    pub min_floor: f64,
    pub horizon: f64,
    pub nu0: f64,
}

/// Runs the log-linear natural-gradient baseline and certifies, at every
/// iterate, the error floor a realizability-based analysis would carry:
/// the best linear critic's residual keeps the bias term above the
/// returned floor. A floor above H makes such guarantees vacuous on this
/// instance (values live in [0, H]).
pub fn npg_floor_certificate(
    mdp: &Mdp,
    features: &FeatureMap,
    theta0: &[f64],
    eta: f64,
    k_iters: usize,
    pi_ref: &Policy,
    tol: &Tolerances,
) -> Result<NpgFloorCertificate> {
    features.validate(mdp.n_states(), mdp.n_actions())?;
    let mu_ref = occupancy(mdp, pi_ref, mdp.rho0(), tol)?;
    let nu0 = (0..mdp.n_states())
        .map(|s| {
            if mu_ref.mu[s] == 0.0 {
                0.0
            } else if mdp.rho0()[s] <= 0.0 {
                f64::INFINITY
            } else {
                mu_ref.mu[s] / mdp.rho0()[s]
            }
        })
        .fold(0.0f64, f64::max);
    let h = mdp.horizon();
    let a = mdp.n_actions() as f64;

    let mut theta = theta0.to_vec();
    let mut records = Vec::with_capacity(k_iters + 1);
    for k in 0..=k_iters {
        let pi = softmax_policy(features, &theta);
        let value = policy_value(mdp, &pi, tol)?;
        let q = evaluate_q(mdp, &pi, tol)?;
        let step = loglinear_npg_step(mdp, features, &theta, eta, tol)?;
        let mut eps_bias = 0.0;
        for s in 0..mdp.n_states() {
            for act in 0..mdp.n_actions() {
                let fitted: f64 = features.phi[s][act]
                    .iter()
                    .zip(&step.w)
                    .map(|(f, w)| f * w)
                    .sum();
                eps_bias += mu_ref.mu[s] / a * (fitted - q.0[s][act]).powi(2);
            }
        }
        let floor = h * nu0 * (a * eps_bias).sqrt();
        records.push(NpgFloorRecord { k, value, eps_bias, floor });
        theta = step.theta;
    }
    let min_floor = records.iter().map(|r| r.floor).fold(f64::INFINITY, f64::min);
    Ok(NpgFloorCertificate { records, min_floor, horizon: h, nu0 })
}

// ---------------------------------------------------------------------------
// Built-in counterexample computations
// ---------------------------------------------------------------------------

/// Reproduces the built-in instances' worked computations:
/// (a) closed forms vs. solver on the three-state cycle over a 101-point
///     mixing grid, (b) the near-(1/2, 1/4, 1/4) optimal occupancy,
/// (c) the linear critic's bias floor 1/32 at the balanced policy,
/// (d) the implied closure-analysis error floor above 10H, and
/// (e) the two-state chain occupancies plus the smoothness-ratio growth.
pub fn counterexample_suite(tol: &Tolerances) -> Result<Vec<LemmaReport>> {
    let mut reports = Vec::new();
    let gamma = 0.99;
    let p = 0.01;
    let mdp = fig1_mdp(tol);

    // (a) closed forms across the mixing grid.
    let mut dev = 0.0f64;
    for i in 0..=100 {
        let alpha = i as f64 / 100.0;
        let pi = fig1_constant_policy(alpha)?;
        let v = evaluate_value(&mdp, &pi, tol)?;
        dev = dev.max((scalar_value(&v, mdp.rho0()) - fig1_value(gamma, p, alpha)).abs());
        let occ = occupancy(&mdp, &pi, mdp.rho0(), tol)?;
        let mu_form = fig1_occupancy(gamma, p, alpha);
        let q = evaluate_q(&mdp, &pi, tol)?;
        let q_form = fig1_q_table(gamma, alpha);
        for s in 0..3 {
            dev = dev.max((occ.mu[s] - mu_form[s]).abs());
            for a in 0..2 {
                dev = dev.max((q.0[s][a] - q_form[s][a]).abs());
            }
        }
    }
    reports.push(LemmaReport::with_tolerance(
        "cycle_closed_forms",
        "three-state cycle, 101-point mixing grid".into(),
        dev,
        1e-9,
        0.0,
    ));

    // (b) balanced-policy occupancy approximations.
    let pi_half = fig1_constant_policy(0.5)?;
    let mu_star = occupancy(&mdp, &pi_half, mdp.rho0(), tol)?;
    let occ_dev = (mu_star.mu[0] - 0.5)
        .abs()
        .max((mu_star.mu[1] - 0.25).abs())
        .max((mu_star.mu[2] - 0.25).abs());
    reports.push(LemmaReport::with_tolerance(
        "cycle_occupancy_approx",
        "three-state cycle, balanced policy".into(),
        occ_dev,
        0.01,
        0.0,
    ));

    // (c) linear critic bias at the balanced policy. The fit distribution
    // (current occupancy, on-policy actions) coincides with the
    // evaluation distribution (reference occupancy, uniform actions)
    // because the balanced policy is uniform and optimal in class.
    let built = builtin_instance("fig1", tol)?;
    let features = built.features.expect("cycle instance carries features");
    let step = loglinear_npg_step(&mdp, &features, &[0.0, 0.0], 1.0, tol)?;
    let q_half = evaluate_q(&mdp, &pi_half, tol)?;
    let mut eps_bias = 0.0;
    for s in 0..3 {
        for a in 0..2 {
            let fitted: f64 = features.phi[s][a]
                .iter()
                .zip(&step.w)
                .map(|(f, w)| f * w)
                .sum();
            eps_bias += mu_star.mu[s] / 2.0 * (fitted - q_half.0[s][a]).powi(2);
        }
    }
    reports.push(LemmaReport::with_tolerance(
        "critic_bias_floor",
        format!("three-state cycle, balanced policy, eps_bias={eps_bias:.6}"),
        1.0 / 32.0,
        eps_bias,
        1e-6,
    ));

    // (d) the implied error floor of a realizability-based analysis,
    // with the concentrability factor at its lower bound 1.
    let nu0 = (0..3)
        .map(|s| mu_star.mu[s] / mdp.rho0()[s])
        .fold(0.0f64, f64::max);
    let floor = mdp.horizon() * nu0 * (2.0 * eps_bias).sqrt();
    reports.push(LemmaReport::with_tolerance(
        "closure_floor",
        format!("three-state cycle, nu0={nu0:.4}"),
        10.0 * mdp.horizon(),
        floor,
        0.0,
    ));

    // (e) chain occupancies against their closed forms...
    let chain = fig2_mdp(tol)?;
    let mut chain_dev = 0.0f64;
    for &eps in &[0.1, 0.01] {
        let (pi, _) = fig2_policy_pair(0.3, eps, tol)?;
        let occ = occupancy(&chain, &pi, chain.rho0(), tol)?;
        let (mu0, scaled_mu1) = fig2_occupancy_closed_form(chain.gamma(), eps);
        chain_dev = chain_dev.max((occ.mu[0] - mu0).abs());
        chain_dev = chain_dev.max((occ.mu[1] * chain.horizon() - scaled_mu1).abs());
    }
    reports.push(LemmaReport::with_tolerance(
        "chain_occupancy",
        "two-state chain, eps in {0.1, 0.01}".into(),
        chain_dev,
        1e-9,
        0.0,
    ));

    // ... and the smoothness-ratio growth as the exploration floor drops
    // by 4x (a 1/sqrt(eps) dependence would double the ratio).
    let ratio_coarse = fig2_tightness_ratio(0.1, tol)?;
    let ratio_fine = fig2_tightness_ratio(0.05, tol)?;
    reports.push(LemmaReport::with_tolerance(
        "smoothness_ratio_growth",
        format!("two-state chain, ratios {ratio_coarse:.1} -> {ratio_fine:.1}"),
        1.5,
        ratio_fine / ratio_coarse,
        0.0,
    ));

    Ok(reports)
}

// ---------------------------------------------------------------------------
// Random-instance batteries
// ---------------------------------------------------------------------------

fn random_small_mdp(rng: &mut ChaCha8Rng, tol: &Tolerances) -> Result<Mdp> {
    let n_states = rng.random_range(2..=5);
    let n_actions = rng.random_range(2..=5);
    let gamma = if rng.random::<f64>() < 0.5 { 0.9 } else { 0.95 };
    random_mdp(n_states, n_actions, gamma, rng, tol)
}

/// Worst case over `n` random instances of the seven exact identities:
/// value difference, Q-difference, gradient vs. finite differences,
/// occupancy L1 perturbation, the weighted dual-norm formula, Pinsker,
/// and the entropy gradient Lipschitz bound.
pub fn identity_battery(n: usize, seed: u64, tol: &Tolerances) -> Result<Vec<LemmaReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: [Option<LemmaReport>; 7] = Default::default();
    let push = |slot: &mut Option<LemmaReport>, next: LemmaReport| {
        *slot = Some(match slot.take() {
            None => next,
            Some(prev) => worse(prev, next),
        });
    };

    for _ in 0..n {
        let mdp = random_small_mdp(&mut rng, tol)?;
        let n_states = mdp.n_states();
        let n_actions = mdp.n_actions();
        let pi = random_interior_policy(n_states, n_actions, 0.1 / n_actions as f64, &mut rng, tol)?;
        let pi_tilde = random_interior_policy(n_states, n_actions, 0.05 / n_actions as f64, &mut rng, tol)?;
        let descr = mdp_descriptor(&mdp);

        // Value difference: H E_{mu_pi} <Q_tilde, pi_tilde - pi> equals
        // the actual value change.
        let identity = value_difference(&mdp, &pi_tilde, &pi, mdp.rho0(), tol)?;
        let actual = policy_value(&mdp, &pi_tilde, tol)? - policy_value(&mdp, &pi, tol)?;
        push(
            &mut worst[0],
            LemmaReport::with_tolerance(
                "value_difference",
                descr.clone(),
                (identity - actual).abs(),
                tol.identity,
                0.0,
            ),
        );

        push(
            &mut worst[1],
            LemmaReport::with_tolerance(
                "q_difference",
                descr.clone(),
                q_difference_identity(&mdp, &pi_tilde, &pi, tol)?,
                tol.identity,
                0.0,
            ),
        );

        // Gradient against a central finite difference along an in-class
        // direction (the segment from pi to a second interior policy).
        let grad = policy_gradient(&mdp, &pi, tol)?;
        let dir = policy_diff(&pi_tilde, &pi);
        let analytic = table_dot(&grad, &dir);
        let fd_h = 1e-5;
        let at = |t: f64| -> Result<f64> {
            policy_value(&mdp, &pi.mix(&pi_tilde, t), tol)
        };
        let numeric = (at(fd_h)? - at(-fd_h)?) / (2.0 * fd_h);
        let rel = (numeric - analytic).abs() / analytic.abs().max(1.0);
        push(
            &mut worst[2],
            LemmaReport::with_tolerance("policy_gradient_fd", descr.clone(), rel, tol.fd_rel, 0.0),
        );

        // Occupancy perturbation: total-variation shift of the occupancy
        // is at most gamma H times the mu-weighted policy L1 distance.
        let occ = occupancy(&mdp, &pi, mdp.rho0(), tol)?;
        let occ_tilde = occupancy(&mdp, &pi_tilde, mdp.rho0(), tol)?;
        let tv: f64 = occ
            .mu
            .iter()
            .zip(&occ_tilde.mu)
            .map(|(a, b)| (a - b).abs())
            .sum();
        let rhs = mdp.gamma() * mdp.horizon() * pi_tilde.weighted_l1_distance(&pi, &occ.mu);
        push(
            &mut worst[3],
            LemmaReport::new("occupancy_l1", descr.clone(), tv, rhs),
        );

        // Weighted dual norm: the closed form must dominate random probes
        // and be attained by the constructed maximizer.
        let z: Vec<Vec<f64>> = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        let action_norm = if rng.random::<f64>() < 0.5 { ActionNorm::L1 } else { ActionNorm::L2 };
        let formula = weighted_dual_norm(&z, &occ.mu, action_norm)?;
        let primal = WeightedNorm::new(occ.mu.clone(), 2, action_norm)?;
        let mut dev = 0.0f64;
        for _ in 0..20 {
            let u: Vec<Vec<f64>> = (0..n_states)
                .map(|_| (0..n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect())
                .collect();
            let norm = primal.apply(&u)?;
            if norm > 1e-12 {
                dev = dev.max(table_dot(&z, &u) / norm - formula);
            }
        }
        // Maximizer: per state, the dual-achieving action direction
        // scaled by (dual of z_s) / mu(s).
        let u_star: Vec<Vec<f64>> = (0..n_states)
            .map(|s| {
                if occ.mu[s] <= 0.0 {
                    return vec![0.0; n_actions];
                }
                let dir: Vec<f64> = match action_norm {
                    ActionNorm::L2 => {
                        let n = ActionNorm::L2.apply(&z[s]).max(1e-300);
                        z[s].iter().map(|x| x / n).collect()
                    }
                    ActionNorm::L1 => {
                        let (best, _) = z[s]
                            .iter()
                            .enumerate()
                            .fold((0usize, -1.0f64), |(bi, bv), (i, x)| {
                                if x.abs() > bv { (i, x.abs()) } else { (bi, bv) }
                            });
                        let mut e = vec![0.0; n_actions];
                        e[best] = z[s][best].signum();
                        e
                    }
                };
                let scale = action_norm.dual(&z[s]) / occ.mu[s];
                dir.into_iter().map(|x| scale * x).collect()
            })
            .collect();
        let norm_star = primal.apply(&u_star)?;
        if norm_star > 1e-12 {
            dev = dev.max((table_dot(&z, &u_star) / norm_star - formula).abs());
        }
        push(
            &mut worst[4],
            LemmaReport::with_tolerance("dual_norm_formula", descr.clone(), dev, tol.brute_force, 0.0),
        );

        // Pinsker: entropy Bregman dominates half the squared L1 distance.
        let u = crate::bench::dirichlet_flat(&mut rng, n_actions);
        let v: Vec<f64> = crate::bench::dirichlet_flat(&mut rng, n_actions)
            .into_iter()
            .map(|x| 0.9 * x + 0.1 / n_actions as f64)
            .collect();
        let l1: f64 = u.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        let bregman = Regularizer::NegEntropy { domain_floor: 0.0 }.bregman(&u, &v, tol)?;
        push(
            &mut worst[5],
            LemmaReport::new("pinsker", descr.clone(), 0.5 * l1 * l1, bregman),
        );

        let floor = 0.05;
        let squeeze = |row: Vec<f64>| -> Vec<f64> {
            let m = floor * n_actions as f64;
            row.into_iter().map(|x| (1.0 - m) * x + floor).collect()
        };
        let p_f = squeeze(crate::bench::dirichlet_flat(&mut rng, n_actions));
        let q_f = squeeze(crate::bench::dirichlet_flat(&mut rng, n_actions));
        push(&mut worst[6], check_negent_smooth(&p_f, &q_f, floor, tol)?);
    }

    Ok(worst.into_iter().map(|r| r.expect("battery ran")).collect())
}

/// Worst case of the two smoothness bounds over `n` random triples with
/// interior base policies (floor at least 0.05).
pub fn smoothness_battery(n: usize, seed: u64, tol: &Tolerances) -> Result<[LemmaReport; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Option<[LemmaReport; 2]> = None;
    for _ in 0..n {
        let n_states = rng.random_range(2..=6);
        let n_actions = rng.random_range(2..=6);
        let gamma = if rng.random::<f64>() < 0.5 { 0.9 } else { 0.95 };
        let mdp = random_mdp(n_states, n_actions, gamma, &mut rng, tol)?;
        let pi = random_interior_policy(n_states, n_actions, 0.05, &mut rng, tol)?;
        let pi_tilde = random_interior_policy(n_states, n_actions, 0.05, &mut rng, tol)?;
        let [l1, l2] = check_local_smoothness(&mdp, &pi, &pi_tilde, tol)?;
        worst = Some(match worst.take() {
            None => [l1, l2],
            Some([w1, w2]) => [worse(w1, l1), worse(w2, l2)],
        });
    }
    worst.ok_or_else(|| Error::Config("smoothness battery needs n >= 1".into()))
}

/// Worst case of the soft-min bound over random score vectors.
pub fn softmax_battery(n: usize, seed: u64) -> Result<LemmaReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Option<LemmaReport> = None;
    for _ in 0..n {
        let d = rng.random_range(2..=10);
        let scale = 10f64.powi(rng.random_range(-2..=2));
        let x: Vec<f64> = (0..d).map(|_| scale * rng.random::<f64>()).collect();
        let delta = [0.01, 0.1, 1.0][rng.random_range(0..3)];
        let report = check_softmax_approx(&x, delta)?;
        worst = Some(match worst.take() {
            None => report,
            Some(prev) => worse(prev, report),
        });
    }
    worst.ok_or_else(|| Error::Config("soft-min battery needs n >= 1".into()))
}

/// Worst case of the mirror greedification bound over random scores and
/// start points (Euclidean regularizer).
pub fn mirror_greedy_battery(n: usize, seed: u64, tol: &Tolerances) -> Result<LemmaReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Option<LemmaReport> = None;
    for _ in 0..n {
        let d = rng.random_range(2..=8);
        let g: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let x = crate::bench::dirichlet_flat(&mut rng, d);
        let epsilon = [0.05, 0.2, 1.0][rng.random_range(0..3)];
        let report = check_omd_to_greedy(&Regularizer::Euclidean, &g, &x, epsilon, tol)?;
        worst = Some(match worst.take() {
            None => report,
            Some(prev) => worse(prev, report),
        });
    }
    worst.ok_or_else(|| Error::Config("greedification battery needs n >= 1".into()))
}

/// The complete class is (H nu0, 0)-dominated when the start distribution
/// has full support: checks `gap <= H nu0 * advantage` on sampled
/// policies over `n` random instances.
pub fn complete_class_vgd_battery(
    n: usize,
    samples_per_instance: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<LemmaReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Option<LemmaReport> = None;
    for i in 0..n {
        let mdp = random_small_mdp(&mut rng, tol)?;
        let est = estimate_vgd(
            &mdp,
            &PolicyClass::Complete,
            samples_per_instance,
            VStarMode::InClass,
            seed.wrapping_add(i as u64),
            tol,
        )?;
        let opt = optimal_policy(&mdp, tol)?;
        let mu_star = occupancy(&mdp, &opt, mdp.rho0(), tol)?;
        let nu0 = (0..mdp.n_states())
            .map(|s| mu_star.mu[s] / mdp.rho0()[s])
            .fold(0.0f64, f64::max);
        let c = mdp.horizon() * nu0;
        for s in &est.samples {
            let report = LemmaReport::new(
                "complete_class_vgd",
                format!("{} C=H*nu0={c:.3}", mdp_descriptor(&mdp)),
                s.gap,
                c * s.advantage,
            );
            worst = Some(match worst.take() {
                None => report,
                Some(prev) => worse(prev, report),
            });
        }
    }
    worst.ok_or_else(|| Error::Config("dominance battery needs n >= 1".into()))
}

/// Audits the closure reduction on `n` random complete-class instances,
/// alternating exact critics with seeded noisy ones, and asserts the
/// conclusion inequality each time. Returns the binding report.
pub fn closure_audit_battery(n: usize, seed: u64, tol: &Tolerances) -> Result<LemmaReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Option<LemmaReport> = None;
    for i in 0..n {
        let mdp = random_small_mdp(&mut rng, tol)?;
        let pi = random_interior_policy(
            mdp.n_states(),
            mdp.n_actions(),
            0.05 / mdp.n_actions() as f64,
            &mut rng,
            tol,
        )?;
        let noisy = i % 2 == 1;
        let q_hat = if noisy {
            let (q, _) = critic(
                &mdp,
                &pi,
                CriticNoise::Seeded { eps_crit: 1e-4, seed: seed.wrapping_add(i as u64) },
                tol,
            )?;
            Some(q)
        } else {
            None
        };
        let report = closure_audit(
            &mdp,
            &PolicyClass::Complete,
            &pi,
            q_hat.as_ref(),
            0.1,
            &Regularizer::Euclidean,
            VSampling::CurrentPair,
            tol,
        )?;
        if !report.asserted {
            return Err(Error::CheckFailed(
                "random instance produced an infinite occupancy ratio despite a full-support start".into(),
            ));
        }
        let lemma = report.to_lemma_report();
        worst = Some(match worst.take() {
            None => lemma,
            Some(prev) => worse(prev, lemma),
        });
    }
    worst.ok_or_else(|| Error::Config("closure battery needs n >= 1".into()))
}

/// Sweeps the eps-greedy degradation check over `n_instances` random hull
/// classes, `samples_per_instance` sampled policies each, and the given
/// exploration levels. One (instance, policy, eps) combination per
/// inequality; returns the binding report.
pub fn epsgreedy_vgd_battery(
    n_instances: usize,
    samples_per_instance: usize,
    eps_list: &[f64],
    seed: u64,
    tol: &Tolerances,
) -> Result<LemmaReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Option<LemmaReport> = None;
    for i in 0..n_instances {
        let mdp = random_small_mdp(&mut rng, tol)?;
        let class = random_hull_class(
            mdp.n_states(),
            mdp.n_actions(),
            3,
            0.02,
            &mut rng,
            tol,
        )?;
        let est = estimate_vgd(
            &mdp,
            &class,
            samples_per_instance.saturating_sub(1).max(1),
            VStarMode::InClass,
            seed.wrapping_add(1000 + i as u64),
            tol,
        )?;
        for &eps in eps_list {
            let report =
                check_epsgreedy_vgd(&mdp, &class, eps, &est, seed.wrapping_add(i as u64), tol)?;
            worst = Some(match worst.take() {
                None => report,
                Some(prev) => worse(prev, report),
            });
        }
    }
    worst.ok_or_else(|| Error::Config("degradation battery needs n >= 1".into()))
}

/// The full certification suite behind the `verify` CLI subcommand:
/// built-in counterexample computations plus every battery at a size that
/// keeps the whole run interactive.
pub fn full_suite(seed: u64, tol: &Tolerances) -> Result<Vec<LemmaReport>> {
    let mut reports = counterexample_suite(tol)?;

    reports.extend(identity_battery(40, seed, tol)?);
    reports.extend(smoothness_battery(80, seed.wrapping_add(1), tol)?);
    reports.push(softmax_battery(200, seed.wrapping_add(2))?);
    reports.push(mirror_greedy_battery(60, seed.wrapping_add(3), tol)?);
    reports.push(complete_class_vgd_battery(10, 8, seed.wrapping_add(4), tol)?);
    reports.push(closure_audit_battery(8, seed.wrapping_add(5), tol)?);
    reports.push(epsgreedy_vgd_battery(4, 10, &[0.01, 0.1], seed.wrapping_add(6), tol)?);

    // The cycle instance's hull is a convex landscape: dominated with
    // constant 1 and no floor beyond sampling error.
    let built = builtin_instance("fig1", tol)?;
    let est = estimate_vgd(&built.mdp, &built.class, 20, VStarMode::InClass, seed, tol)?;
    reports.push(LemmaReport::with_tolerance(
        "cycle_hull_vgd",
        "three-state cycle hull, C=1".into(),
        est.eps_vgd_at(1.0),
        1e-6,
        0.0,
    ));

    Ok(reports)
}

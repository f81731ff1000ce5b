//! Policy classes: the feasible sets mirror descent optimizes over.
//!
//! Four kinds. `Complete` is the full product of simplices (every
//! stochastic policy). `ConvexHull` is the hull of finitely many base
//! policies, optimized in hull coordinates. `EpsGreedy` mixes any inner
//! class with the uniform policy, which bounds action probabilities away
//! from zero; the wrap is affine, so it preserves hulls and linear
//! oracles. `LogLinear` is the softmax-of-features class used by the
//! natural-gradient baseline; it is not convex in policy space, so the
//! convex machinery rejects it rather than pretending.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{evaluate_q, occupancy, table_dot, Mdp, Policy};
use crate::tol::Tolerances;

/// Feature table for the log-linear class: `phi[s][a]` is a `d`-vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMap {
    pub phi: Vec<Vec<Vec<f64>>>,
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        self.phi
            .first()
            .and_then(|row| row.first())
            .map_or(0, Vec::len)
    }

    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.phi.len() != n_states {
            return Err(Error::DimensionMismatch(format!(
                "feature map covers {} states, model has {n_states}",
                self.phi.len()
            )));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidModel("empty feature map".into()));
        }
        for (s, row) in self.phi.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::DimensionMismatch(format!(
                    "feature row (s={s}) has {} actions, model has {n_actions}",
                    row.len()
                )));
            }
            for (a, f) in row.iter().enumerate() {
                if f.len() != d {
                    return Err(Error::DimensionMismatch(format!(
                        "feature vector (s={s}, a={a}) has length {}, expected {d}",
                        f.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Tabular one-hot features, `phi[s][a] = e_{s * A + a}`. With these
    /// the least-squares critic is exact and natural gradient reduces to
    /// per-state multiplicative weights.
    pub fn one_hot(n_states: usize, n_actions: usize) -> FeatureMap {
        let d = n_states * n_actions;
        let phi = (0..n_states)
            .map(|s| {
                (0..n_actions)
                    .map(|a| {
                        let mut f = vec![0.0; d];
                        f[s * n_actions + a] = 1.0;
                        f
                    })
                    .collect()
            })
            .collect();
        FeatureMap { phi }
    }
}

/// A policy class. Serialized form uses a `kind` tag; see the README for
/// the JSON layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyClass {
    Complete,
    ConvexHull {
        bases: Vec<Policy>,
    },
    EpsGreedy {
        inner: Box<PolicyClass>,
        eps: f64,
    },
    LogLinear {
        features: FeatureMap,
        theta: Vec<f64>,
    },
}

/// Coordinates describing one member of a class. Hull coordinates are
/// the canonical representation wherever the class is a finite hull.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Member {
    /// Weights over the class's base policies (simplex vector).
    Hull(Vec<f64>),
    /// Explicit table, for the complete class.
    Table(Policy),
    /// Softmax parameter, for the log-linear class.
    Theta(Vec<f64>),
}

/// `(1 - eps) pi + eps * uniform`, the exploration mix of a single policy.
pub fn eps_greedy_wrap(pi: &Policy, eps: f64) -> Policy {
    let a = pi.n_actions() as f64;
    let rows = pi
        .rows()
        .iter()
        .map(|row| row.iter().map(|&p| (1.0 - eps) * p + eps / a).collect())
        .collect();
    Policy::from_rows_unchecked(rows)
}

impl PolicyClass {
    pub fn validate(&self, n_states: usize, n_actions: usize, tol: &Tolerances) -> Result<()> {
        match self {
            PolicyClass::Complete => Ok(()),
            PolicyClass::ConvexHull { bases } => {
                if bases.is_empty() {
                    return Err(Error::InvalidModel("hull with no base policies".into()));
                }
                for (i, b) in bases.iter().enumerate() {
                    Policy::new(b.rows().to_vec(), tol).map_err(|e| {
                        Error::InvalidPolicy(format!("hull base {i}: {e}"))
                    })?;
                    if b.n_states() != n_states || b.n_actions() != n_actions {
                        return Err(Error::DimensionMismatch(format!(
                            "hull base {i} is {}x{}, model is {n_states}x{n_actions}",
                            b.n_states(),
                            b.n_actions()
                        )));
                    }
                }
                Ok(())
            }
            PolicyClass::EpsGreedy { inner, eps } => {
                if !(0.0..1.0).contains(eps) {
                    return Err(Error::InvalidModel(format!(
                        "eps-greedy mix {eps} outside [0, 1)"
                    )));
                }
                inner.validate(n_states, n_actions, tol)
            }
            PolicyClass::LogLinear { features, theta } => {
                features.validate(n_states, n_actions)?;
                if theta.len() != features.dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "theta has length {}, features have dimension {}",
                        theta.len(),
                        features.dim()
                    )));
                }
                Ok(())
            }
        }
    }

    /// Turns member coordinates into a concrete policy table. Coordinates
    /// always describe the innermost class; eps-greedy wrapping is applied
    /// on the way out.
    pub fn materialize(&self, member: &Member, tol: &Tolerances) -> Result<Policy> {
        match (self, member) {
            (PolicyClass::Complete, Member::Table(pi)) => {
                Policy::new(pi.rows().to_vec(), tol)
            }
            (PolicyClass::ConvexHull { bases }, Member::Hull(lambda)) => {
                if lambda.len() != bases.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "hull coordinates have length {}, hull has {} bases",
                        lambda.len(),
                        bases.len()
                    )));
                }
                let sum: f64 = lambda.iter().sum();
                if (sum - 1.0).abs() > tol.policy_row || lambda.iter().any(|&l| l < -tol.policy_row)
                {
                    return Err(Error::InvalidDistribution(format!(
                        "hull coordinates sum to {sum} or go negative"
                    )));
                }
                let n_states = bases[0].n_states();
                let n_actions = bases[0].n_actions();
                let mut rows = vec![vec![0.0; n_actions]; n_states];
                for (l, base) in lambda.iter().zip(bases) {
                    for s in 0..n_states {
                        for a in 0..n_actions {
                            rows[s][a] += l * base.prob(s, a);
                        }
                    }
                }
                Ok(Policy::from_rows_unchecked(rows))
            }
            (PolicyClass::EpsGreedy { inner, eps }, m) => {
                let pi = inner.materialize(m, tol)?;
                Ok(eps_greedy_wrap(&pi, *eps))
            }
            (PolicyClass::LogLinear { features, .. }, Member::Theta(theta)) => {
                if theta.len() != features.dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "theta has length {}, features have dimension {}",
                        theta.len(),
                        features.dim()
                    )));
                }
                Ok(softmax_policy(features, theta))
            }
            _ => Err(Error::Unsupported(
                "member coordinates do not match the class kind".into(),
            )),
        }
    }

    /// Policy for the log-linear class's stored parameter.
    pub fn materialize_current(&self, tol: &Tolerances) -> Result<Policy> {
        match self {
            PolicyClass::LogLinear { theta, .. } => {
                self.materialize(&Member::Theta(theta.clone()), tol)
            }
            _ => Err(Error::Unsupported(
                "materialize_current is only defined for the log-linear class".into(),
            )),
        }
    }

    /// Exact minimizer of the linear functional `pi -> <g, pi>` over the
    /// class, with its value. Ties resolve toward the lowest action or
    /// vertex index, so the result is deterministic.
    pub fn linear_min_oracle(&self, g: &[Vec<f64>]) -> Result<(Policy, f64)> {
        match self {
            PolicyClass::Complete => {
                let choice: Vec<usize> = g
                    .iter()
                    .map(|row| {
                        let mut best = 0usize;
                        for (a, &x) in row.iter().enumerate().skip(1) {
                            if x < row[best] {
                                best = a;
                            }
                        }
                        best
                    })
                    .collect();
                let n_actions = g[0].len();
                let pi = Policy::deterministic(n_actions, &choice);
                let value = table_dot(g, pi.rows());
                Ok((pi, value))
            }
            PolicyClass::ConvexHull { bases } => {
                let mut best = 0usize;
                let mut best_val = table_dot(g, bases[0].rows());
                for (i, b) in bases.iter().enumerate().skip(1) {
                    let v = table_dot(g, b.rows());
                    if v < best_val {
                        best_val = v;
                        best = i;
                    }
                }
                Ok((bases[best].clone(), best_val))
            }
            PolicyClass::EpsGreedy { inner, eps } => {
                // The wrap is affine, so the min over the wrapped class is
                // the wrap of the inner minimizer.
                let (pi, _) = inner.linear_min_oracle(g)?;
                let wrapped = eps_greedy_wrap(&pi, *eps);
                let value = table_dot(g, wrapped.rows());
                Ok((wrapped, value))
            }
            PolicyClass::LogLinear { .. } => Err(Error::Unsupported(
                "the log-linear class is not convex; no linear minimization oracle".into(),
            )),
        }
    }

    /// Worst-case minimum action probability over the class. This is the
    /// exploration floor the smoothness constants depend on.
    pub fn min_action_prob(&self, n_actions: usize) -> f64 {
        match self {
            PolicyClass::Complete => 0.0,
            // Linear in hull coordinates, so the minimum sits at a vertex.
            PolicyClass::ConvexHull { bases } => bases
                .iter()
                .map(Policy::min_prob)
                .fold(f64::INFINITY, f64::min),
            PolicyClass::EpsGreedy { inner, eps } => {
                (1.0 - eps) * inner.min_action_prob(n_actions) + eps / n_actions as f64
            }
            // Softmax probabilities are positive for finite theta but
            // approach zero in the limit; the class-level floor is 0.
            PolicyClass::LogLinear { .. } => 0.0,
        }
    }

    /// Vertex list for classes that are finite hulls (after unwrapping
    /// eps-greedy mixes). `None` for the complete and log-linear classes.
    pub fn hull_vertices(&self) -> Option<Vec<Policy>> {
        match self {
            PolicyClass::ConvexHull { bases } => Some(bases.clone()),
            PolicyClass::EpsGreedy { inner, eps } => inner
                .hull_vertices()
                .map(|vs| vs.iter().map(|v| eps_greedy_wrap(v, *eps)).collect()),
            _ => None,
        }
    }

    /// Collapses nested eps-greedy wraps: returns the innermost class and
    /// the effective mix `1 - prod(1 - eps_i)`.
    pub fn unwrap_eps(&self) -> (&PolicyClass, f64) {
        match self {
            PolicyClass::EpsGreedy { inner, eps } => {
                let (base, rest) = inner.unwrap_eps();
                (base, 1.0 - (1.0 - eps) * (1.0 - rest))
            }
            other => (other, 0.0),
        }
    }

    /// Uniform-ish random member (Dirichlet(1) hull weights, Dirichlet(1)
    /// rows for the complete class). Rejects the log-linear class, which
    /// has no canonical sampling measure here.
    pub fn sample_member(&self, rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize) -> Result<Policy> {
        fn dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
            let raw: Vec<f64> = (0..n)
                .map(|_| -rng.random::<f64>().max(1e-12).ln())
                .collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        }
        match self {
            PolicyClass::Complete => Ok(Policy::from_rows_unchecked(
                (0..n_states).map(|_| dirichlet(rng, n_actions)).collect(),
            )),
            PolicyClass::ConvexHull { bases } => {
                let lambda = dirichlet(rng, bases.len());
                self.materialize(&Member::Hull(lambda), &Tolerances::default())
            }
            PolicyClass::EpsGreedy { inner, eps } => {
                let pi = inner.sample_member(rng, n_states, n_actions)?;
                Ok(eps_greedy_wrap(&pi, *eps))
            }
            PolicyClass::LogLinear { .. } => Err(Error::Unsupported(
                "sampling is not defined for the log-linear class".into(),
            )),
        }
    }
}

/// Softmax policy `pi(a|s) ~ exp(<theta, phi[s][a]>)`, max-shifted.
pub fn softmax_policy(features: &FeatureMap, theta: &[f64]) -> Policy {
    let rows = features
        .phi
        .iter()
        .map(|row| {
            let logits: Vec<f64> = row
                .iter()
                .map(|f| f.iter().zip(theta).map(|(x, t)| x * t).sum())
                .collect();
            let shift = logits.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(l));
            let weights: Vec<f64> = logits.iter().map(|l| (l - shift).exp()).collect();
            let z: f64 = weights.iter().sum();
            weights.into_iter().map(|w| w / z).collect()
        })
        .collect();
    Policy::from_rows_unchecked(rows)
}

/// Outcome of one natural-gradient step on the log-linear class.
#[derive(Debug, Clone)]
pub struct NpgStep {
    pub theta: Vec<f64>,
    /// Least-squares critic weights fit under the current visitation.
    pub w: Vec<f64>,
    /// Weighted mean squared error of the fit at `w` (in-distribution).
    pub fit_mse: f64,
    /// Set when the normal equations were singular and a small ridge was
    /// added to solve them.
    pub ridge_used: bool,
}

/// One step of natural policy gradient on the log-linear class, in its
/// least-squares form: fit `w` to the exact Q-values under the current
/// state-action visitation, then move `theta <- theta - eta w`.
pub fn loglinear_npg_step(
    mdp: &Mdp,
    features: &FeatureMap,
    theta: &[f64],
    eta: f64,
    tol: &Tolerances,
) -> Result<NpgStep> {
    features.validate(mdp.n_states(), mdp.n_actions())?;
    let d = features.dim();
    if theta.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "theta has length {}, features have dimension {d}",
            theta.len()
        )));
    }
    let pi = softmax_policy(features, theta);
    let occ = occupancy(mdp, &pi, mdp.rho0(), tol)?;
    let q = evaluate_q(mdp, &pi, tol)?;

    // Normal equations for the visitation-weighted least squares.
    let mut gram = nalgebra::DMatrix::<f64>::zeros(d, d);
    let mut rhs = nalgebra::DVector::<f64>::zeros(d);
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let weight = occ.mu[s] * pi.prob(s, a);
            if weight == 0.0 {
                continue;
            }
            let f = &features.phi[s][a];
            for i in 0..d {
                rhs[i] += weight * f[i] * q.0[s][a];
                for j in 0..d {
                    gram[(i, j)] += weight * f[i] * f[j];
                }
            }
        }
    }
    let (w, ridge_used) = match gram.clone().lu().solve(&rhs) {
        Some(w) if w.iter().all(|x| x.is_finite()) => (w, false),
        _ => {
            // Rank-deficient visitation or redundant features: fall back
            // to a tiny ridge so the step stays defined.
            let ridged = gram + nalgebra::DMatrix::identity(d, d) * 1e-10;
            let w = ridged
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Singular("ridged critic normal equations".into()))?;
            (w, true)
        }
    };

    let mut fit_mse = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let weight = occ.mu[s] * pi.prob(s, a);
            if weight == 0.0 {
                continue;
            }
            let pred: f64 = features.phi[s][a]
                .iter()
                .zip(w.iter())
                .map(|(x, wi)| x * wi)
                .sum();
            fit_mse += weight * (pred - q.0[s][a]) * (pred - q.0[s][a]);
        }
    }

    let theta_next: Vec<f64> = theta.iter().zip(w.iter()).map(|(t, wi)| t - eta * wi).collect();
    Ok(NpgStep {
        theta: theta_next,
        w: w.iter().copied().collect(),
        fit_mse,
        ridge_used,
    })
}

/// Parses and validates a policy class against model dimensions.
pub fn load_class_json(
    text: &str,
    n_states: usize,
    n_actions: usize,
    tol: &Tolerances,
) -> Result<PolicyClass> {
    let class: PolicyClass = serde_json::from_str(text)?;
    class.validate(n_states, n_actions, tol)?;
    Ok(class)
}

pub fn class_to_json(class: &PolicyClass) -> Result<String> {
    Ok(serde_json::to_string_pretty(class)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Mdp;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn two_dets() -> (Policy, Policy) {
        (
            Policy::deterministic(2, &[0, 0]),
            Policy::deterministic(2, &[1, 1]),
        )
    }

    #[test]
    fn hull_materialization_mixes_bases() {
        let (p0, p1) = two_dets();
        let class = PolicyClass::ConvexHull {
            bases: vec![p0, p1],
        };
        let pi = class
            .materialize(&Member::Hull(vec![0.3, 0.7]), &tol())
            .unwrap();
        for s in 0..2 {
            assert!((pi.prob(s, 0) - 0.3).abs() < 1e-15);
            assert!((pi.prob(s, 1) - 0.7).abs() < 1e-15);
        }
        // Bad coordinates are rejected, not normalized.
        assert!(class
            .materialize(&Member::Hull(vec![0.6, 0.6]), &tol())
            .is_err());
        assert!(class
            .materialize(&Member::Hull(vec![1.0]), &tol())
            .is_err());
    }

    #[test]
    fn eps_greedy_wrap_matches_hand_example() {
        // Deterministic over 4 actions mixed with eps = 0.2:
        // 0.8 * 1 + 0.2/4 = 0.85 on the chosen action, 0.05 elsewhere.
        let pi = Policy::deterministic(4, &[0]);
        let wrapped = eps_greedy_wrap(&pi, 0.2);
        assert!((wrapped.prob(0, 0) - 0.85).abs() < 1e-15);
        for a in 1..4 {
            assert!((wrapped.prob(0, a) - 0.05).abs() < 1e-15);
        }
    }

    #[test]
    fn min_action_prob_tracks_wrapping() {
        let (p0, p1) = two_dets();
        let hull = PolicyClass::ConvexHull {
            bases: vec![p0, p1],
        };
        assert_eq!(hull.min_action_prob(2), 0.0);
        let wrapped = PolicyClass::EpsGreedy {
            inner: Box::new(hull),
            eps: 0.1,
        };
        assert!((wrapped.min_action_prob(2) - 0.05).abs() < 1e-15);
        // Nesting composes multiplicatively.
        let nested = PolicyClass::EpsGreedy {
            inner: Box::new(wrapped),
            eps: 0.5,
        };
        // (1 - 0.5) * 0.05 + 0.5 / 2 = 0.275.
        assert!((nested.min_action_prob(2) - 0.275).abs() < 1e-15);
        let (_, eps_total) = nested.unwrap_eps();
        assert!((eps_total - (1.0 - 0.9 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn complete_lmo_picks_lowest_index_on_ties() {
        let class = PolicyClass::Complete;
        let g = vec![vec![0.5, 0.5, 0.7], vec![0.9, 0.1, 0.1]];
        let (pi, value) = class.linear_min_oracle(&g).unwrap();
        assert_eq!(pi.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(pi.row(1), &[0.0, 1.0, 0.0]);
        assert!((value - 0.6).abs() < 1e-15);
    }

    #[test]
    fn hull_lmo_agrees_with_dense_grid() {
        let (p0, p1) = two_dets();
        let mixed = p0.mix(&p1, 0.5);
        let class = PolicyClass::ConvexHull {
            bases: vec![p0, p1, mixed],
        };
        let g = vec![vec![1.0, -0.3], vec![0.2, 0.4]];
        let (pi, value) = class.linear_min_oracle(&g).unwrap();
        // Linear objective: no interior mix may beat the best vertex.
        for i in 0..=100 {
            let l0 = i as f64 / 100.0;
            for j in 0..=(100 - i) {
                let l1 = j as f64 / 100.0;
                let lambda = vec![l0, l1, 1.0 - l0 - l1];
                let p = class.materialize(&Member::Hull(lambda), &tol()).unwrap();
                assert!(table_dot(&g, p.rows()) >= value - 1e-12);
            }
        }
        assert!((table_dot(&g, pi.rows()) - value).abs() < 1e-15);
    }

    #[test]
    fn eps_greedy_lmo_is_wrap_of_inner_lmo() {
        let (p0, p1) = two_dets();
        let inner = PolicyClass::ConvexHull {
            bases: vec![p0, p1],
        };
        let class = PolicyClass::EpsGreedy {
            inner: Box::new(inner.clone()),
            eps: 0.25,
        };
        let g = vec![vec![0.9, -0.2], vec![-0.5, 0.5]];
        let (wrapped, value) = class.linear_min_oracle(&g).unwrap();
        let (raw, _) = inner.linear_min_oracle(&g).unwrap();
        let expect = eps_greedy_wrap(&raw, 0.25);
        assert_eq!(wrapped.rows(), expect.rows());
        assert!((value - table_dot(&g, expect.rows())).abs() < 1e-15);
        // Wrapped hull vertices are the wraps of the bases.
        let verts = class.hull_vertices().unwrap();
        assert_eq!(verts.len(), 2);
        assert!(verts.iter().all(|v| v.min_prob() >= 0.125 - 1e-15));
    }

    #[test]
    fn materializing_through_the_wrap_commutes() {
        let (p0, p1) = two_dets();
        let inner = PolicyClass::ConvexHull {
            bases: vec![p0, p1],
        };
        let class = PolicyClass::EpsGreedy {
            inner: Box::new(inner.clone()),
            eps: 0.3,
        };
        let lambda = vec![0.4, 0.6];
        let a = class.materialize(&Member::Hull(lambda.clone()), &tol()).unwrap();
        let b = eps_greedy_wrap(
            &inner.materialize(&Member::Hull(lambda), &tol()).unwrap(),
            0.3,
        );
        for s in 0..2 {
            for ac in 0..2 {
                assert!((a.prob(s, ac) - b.prob(s, ac)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_is_shift_invariant_and_uniform_at_zero() {
        let features = FeatureMap {
            phi: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 3],
        };
        let class = PolicyClass::LogLinear {
            features: features.clone(),
            theta: vec![0.0, 0.0],
        };
        let pi = class.materialize_current(&tol()).unwrap();
        for s in 0..3 {
            assert!((pi.prob(s, 0) - 0.5).abs() < 1e-15);
        }
        // Adding a constant to every logit changes nothing.
        let p1 = softmax_policy(&features, &[3.0, 1.0]);
        let p2 = softmax_policy(&features, &[5.0, 3.0]);
        for s in 0..3 {
            for a in 0..2 {
                assert!((p1.prob(s, a) - p2.prob(s, a)).abs() < 1e-12);
            }
        }
        // Logistic closed form in the logit difference.
        let sigma = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((p1.prob(0, 0) - sigma).abs() < 1e-12);
    }

    fn small_mdp() -> Mdp {
        Mdp::new(
            0.7,
            vec![0.6, 0.4],
            vec![vec![0.1, 0.9], vec![0.5, 0.3]],
            vec![
                vec![vec![0.2, 0.8], vec![0.7, 0.3]],
                vec![vec![0.5, 0.5], vec![0.1, 0.9]],
            ],
            &tol(),
        )
        .unwrap()
    }

    #[test]
    fn one_hot_npg_step_is_multiplicative_weights() {
        let mdp = small_mdp();
        let features = FeatureMap::one_hot(2, 2);
        // Interior start: theta = 0 gives the uniform policy.
        let theta = vec![0.0; 4];
        let eta = 0.3;
        let step = loglinear_npg_step(&mdp, &features, &theta, eta, &tol()).unwrap();
        assert!(!step.ridge_used);

        let pi = softmax_policy(&features, &theta);
        let q = evaluate_q(&mdp, &pi, &tol()).unwrap();
        // One-hot features fit Q exactly, so the next policy must be the
        // per-state multiplicative-weights update.
        assert!(step.fit_mse < 1e-18);
        let next = softmax_policy(&features, &step.theta);
        for s in 0..2 {
            let expected = crate::geometry::mirror_step(
                pi.row(s),
                &q.0[s],
                eta,
                &crate::geometry::Regularizer::NegEntropy { domain_floor: 0.0 },
            )
            .unwrap();
            for a in 0..2 {
                assert!(
                    (next.prob(s, a) - expected[a]).abs() < 1e-8,
                    "state {s} action {a}: {} vs {}",
                    next.prob(s, a),
                    expected[a]
                );
            }
        }
    }

    #[test]
    fn zero_cost_model_leaves_theta_unchanged() {
        let mdp = Mdp::new(
            0.7,
            vec![1.0, 0.0],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![
                vec![vec![0.2, 0.8], vec![0.7, 0.3]],
                vec![vec![0.5, 0.5], vec![0.1, 0.9]],
            ],
            &tol(),
        )
        .unwrap();
        let features = FeatureMap::one_hot(2, 2);
        let theta = vec![0.4, -0.2, 0.1, 0.0];
        let step = loglinear_npg_step(&mdp, &features, &theta, 0.5, &tol()).unwrap();
        for (a, b) in theta.iter().zip(&step.theta) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn redundant_features_fall_back_to_ridge() {
        let mdp = small_mdp();
        // Two identical feature columns make the Gram matrix singular.
        let phi = vec![
            vec![vec![1.0, 1.0], vec![0.0, 0.0]],
            vec![vec![1.0, 1.0], vec![0.0, 0.0]],
        ];
        let features = FeatureMap { phi };
        let step = loglinear_npg_step(&mdp, &features, &[0.0, 0.0], 0.1, &tol()).unwrap();
        assert!(step.ridge_used);
        assert!(step.theta.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn class_json_round_trips_and_validates() {
        let (p0, p1) = two_dets();
        let class = PolicyClass::EpsGreedy {
            inner: Box::new(PolicyClass::ConvexHull {
                bases: vec![p0, p1],
            }),
            eps: 0.1,
        };
        let text = class_to_json(&class).unwrap();
        let loaded = load_class_json(&text, 2, 2, &tol()).unwrap();
        assert!((loaded.min_action_prob(2) - class.min_action_prob(2)).abs() < 1e-15);

        // Wrong dimensions are an input error.
        assert!(load_class_json(&text, 3, 2, &tol()).is_err());
        // Malformed kind tag too.
        assert!(load_class_json("{\"kind\": \"mystery\"}", 2, 2, &tol()).is_err());
    }

    #[test]
    fn sampled_members_stay_in_class() {
        let (p0, p1) = two_dets();
        let class = PolicyClass::EpsGreedy {
            inner: Box::new(PolicyClass::ConvexHull {
                bases: vec![p0, p1],
            }),
            eps: 0.2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let pi = class.sample_member(&mut rng, 2, 2).unwrap();
            assert!(pi.min_prob() >= 0.1 - 1e-15);
            let sum: f64 = pi.row(0).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert!(PolicyClass::LogLinear {
            features: FeatureMap::one_hot(2, 2),
            theta: vec![0.0; 4],
        }
        .sample_member(&mut rng, 2, 2)
        .is_err());
    }
}

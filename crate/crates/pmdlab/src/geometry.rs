//! Norms, regularizers and mirror steps on the simplex.
//!
//! Policy tables are compared in per-state action norms (l1 or l2)
//! aggregated by an occupancy-weighted L^p mean. The dual of the
//! `(L^2(mu), action-norm)` aggregate is taken with respect to the
//! unweighted pairing `<z, u> = sum_{s,a} z(s,a) u(s,a)`, which is why
//! the dual weights are `1/mu(s)` and anything supported outside `mu`
//! has infinite dual norm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tol::Tolerances;

/// Per-state norm on action vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionNorm {
    L1,
    L2,
}

impl ActionNorm {
    pub fn apply(&self, v: &[f64]) -> f64 {
        match self {
            ActionNorm::L1 => v.iter().map(|x| x.abs()).sum(),
            ActionNorm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }

    /// Dual norm: l1 pairs with l-infinity, l2 with itself.
    pub fn dual(&self, v: &[f64]) -> f64 {
        match self {
            ActionNorm::L1 => v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            ActionNorm::L2 => self.apply(v),
        }
    }
}

/// Mirror-map generator on the simplex. Both variants are 1-strongly
/// convex: Euclidean with respect to l2, negative entropy with respect to
/// l1 (Pinsker).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    Euclidean,
    /// Negative entropy `sum_i p_i ln p_i`, restricted to distributions
    /// whose entries all stay at or above `domain_floor`. Gradients below
    /// the floor are a reported error, never a clamp: a floor violation
    /// means an upstream step escaped its truncated simplex, which must
    /// surface, not be papered over.
    NegEntropy { domain_floor: f64 },
}

const ENTROPY_DOMAIN_SLACK: f64 = 1e-12;

impl Regularizer {
    /// Norm this regularizer is 1-strongly convex with respect to.
    pub fn natural_norm(&self) -> ActionNorm {
        match self {
            Regularizer::Euclidean => ActionNorm::L2,
            Regularizer::NegEntropy { .. } => ActionNorm::L1,
        }
    }

    fn check_domain(&self, p: &[f64], role: &str) -> Result<()> {
        if let Regularizer::NegEntropy { domain_floor } = self {
            for (i, &x) in p.iter().enumerate() {
                if x < domain_floor - ENTROPY_DOMAIN_SLACK || x <= 0.0 {
                    return Err(Error::Domain(format!(
                        "entropy {role} needs entries >= {domain_floor}, got {x} at index {i}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        match self {
            Regularizer::Euclidean => 0.5 * p.iter().map(|x| x * x).sum::<f64>(),
            // 0 ln 0 = 0 by continuity; values are defined on the whole
            // simplex even when gradients are not.
            Regularizer::NegEntropy { .. } => p
                .iter()
                .map(|&x| if x > 0.0 { x * x.ln() } else { 0.0 })
                .sum(),
        }
    }

    pub fn grad(&self, p: &[f64]) -> Result<Vec<f64>> {
        match self {
            Regularizer::Euclidean => Ok(p.to_vec()),
            Regularizer::NegEntropy { .. } => {
                self.check_domain(p, "gradient")?;
                Ok(p.iter().map(|&x| 1.0 + x.ln()).collect())
            }
        }
    }

    /// Bregman divergence `B(u, v) = R(u) - R(v) - <grad R(v), u - v>`.
    /// Euclidean gives half squared distance; entropy gives KL(u || v)
    /// when both arguments are distributions.
    pub fn bregman(&self, u: &[f64], v: &[f64], _tol: &Tolerances) -> Result<f64> {
        if u.len() != v.len() {
            return Err(Error::DimensionMismatch(format!(
                "bregman arguments have lengths {} and {}",
                u.len(),
                v.len()
            )));
        }
        match self {
            Regularizer::Euclidean => Ok(0.5
                * u.iter()
                    .zip(v)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()),
            Regularizer::NegEntropy { .. } => {
                // Only the second argument needs interior entries; the
                // first may have zeros (0 ln 0 = 0).
                self.check_domain(v, "divergence base point")?;
                let mut acc = 0.0;
                for (i, (&a, &b)) in u.iter().zip(v).enumerate() {
                    if a < 0.0 {
                        return Err(Error::Domain(format!(
                            "negative entry {a} at index {i} in divergence argument"
                        )));
                    }
                    if a > 0.0 {
                        acc += a * (a / b).ln();
                    }
                }
                // Generalized KL correction for inputs that are not
                // exactly normalized; vanishes on the simplex.
                let su: f64 = u.iter().sum();
                let sv: f64 = v.iter().sum();
                Ok(acc - su + sv)
            }
        }
    }
}

/// Occupancy-weighted aggregate norm `( E_{s ~ mu} ||u_s||_o^p )^{1/p}`
/// over state-action tables.
#[derive(Debug, Clone)]
pub struct WeightedNorm {
    pub mu: Vec<f64>,
    pub p: u8,
    pub action_norm: ActionNorm,
}

impl WeightedNorm {
    pub fn new(mu: Vec<f64>, p: u8, action_norm: ActionNorm) -> Result<WeightedNorm> {
        if p != 1 && p != 2 {
            return Err(Error::Unsupported(format!(
                "weighted norm exponent must be 1 or 2, got {p}"
            )));
        }
        Ok(WeightedNorm { mu, p, action_norm })
    }

    pub fn apply(&self, table: &[Vec<f64>]) -> Result<f64> {
        if table.len() != self.mu.len() {
            return Err(Error::DimensionMismatch(format!(
                "table has {} states, weights have {}",
                table.len(),
                self.mu.len()
            )));
        }
        let acc: f64 = table
            .iter()
            .zip(&self.mu)
            .map(|(row, &w)| {
                let n = self.action_norm.apply(row);
                match self.p {
                    1 => w * n,
                    _ => w * n * n,
                }
            })
            .sum();
        Ok(match self.p {
            1 => acc,
            _ => acc.sqrt(),
        })
    }
}

/// Dual of the `(L^2(mu), action-norm)` aggregate with respect to the
/// unweighted pairing: `sqrt( sum_{s in supp mu} (1/mu(s)) (||z_s||_o^*)^2 )`.
/// Mass outside the support cannot be paired away, so it makes the dual
/// norm infinite; callers decide whether that is an error.
pub fn weighted_dual_norm(z: &[Vec<f64>], mu: &[f64], action_norm: ActionNorm) -> Result<f64> {
    if z.len() != mu.len() {
        return Err(Error::DimensionMismatch(format!(
            "table has {} states, weights have {}",
            z.len(),
            mu.len()
        )));
    }
    let mut acc = 0.0f64;
    for (row, &w) in z.iter().zip(mu) {
        let d = action_norm.dual(row);
        if w <= 0.0 {
            if d > 0.0 {
                return Ok(f64::INFINITY);
            }
        } else {
            acc += d * d / w;
        }
    }
    Ok(acc.sqrt())
}

/// Euclidean projection onto the probability simplex, by the sort and
/// threshold rule. Runs in O(n log n).
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    simplex_project_mass(v, 1.0)
}

/// Projection onto the scaled simplex `{p >= 0, sum p = mass}`.
fn simplex_project_mass(v: &[f64], mass: f64) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("no NaN in projection input"));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - mass) / (k + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Projection onto the truncated simplex `{p >= lo, sum p = 1}` (uniform
/// lower bound `lo` per coordinate). Shifts to the corner and projects
/// the remaining mass.
pub fn truncated_simplex_project(v: &[f64], lo: f64) -> Result<Vec<f64>> {
    let n = v.len() as f64;
    let free = 1.0 - lo * n;
    if free < -1e-15 {
        return Err(Error::Domain(format!(
            "lower bound {lo} with {n} coordinates exceeds total mass 1"
        )));
    }
    let shifted: Vec<f64> = v.iter().map(|&x| x - lo).collect();
    let proj = simplex_project_mass(&shifted, free.max(0.0));
    Ok(proj.into_iter().map(|x| x + lo).collect())
}

/// One mirror-descent step on the simplex:
/// `argmin_q <g, q> + (1/eta) B(q, p)`.
///
/// Euclidean: projection of `p - eta g`. Entropy: multiplicative weights
/// `q ~ p * exp(-eta g)`, computed with a max shift so large `eta g`
/// cannot overflow.
pub fn mirror_step(p: &[f64], g: &[f64], eta: f64, reg: &Regularizer) -> Result<Vec<f64>> {
    if p.len() != g.len() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} entries, gradient has {}",
            p.len(),
            g.len()
        )));
    }
    if eta <= 0.0 || !eta.is_finite() {
        return Err(Error::StepSize(format!("eta = {eta} must be positive")));
    }
    match reg {
        Regularizer::Euclidean => {
            let moved: Vec<f64> = p.iter().zip(g).map(|(x, gg)| x - eta * gg).collect();
            Ok(simplex_project(&moved))
        }
        Regularizer::NegEntropy { .. } => {
            reg.check_domain(p, "mirror step base point")?;
            let exponents: Vec<f64> = p
                .iter()
                .zip(g)
                .map(|(x, gg)| x.ln() - eta * gg)
                .collect();
            let shift = exponents.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e));
            let weights: Vec<f64> = exponents.iter().map(|e| (e - shift).exp()).collect();
            let z: f64 = weights.iter().sum();
            Ok(weights.into_iter().map(|w| w / z).collect())
        }
    }
}

/// Mirror step on the truncated simplex `{q >= lo, sum q = 1}` for the
/// entropy regularizer. KKT structure: unclamped coordinates follow the
/// multiplicative-weights form `c * p_a exp(-eta g_a)`, the rest sit at
/// `lo`; the split is found exactly by scanning the sorted weights.
pub fn truncated_entropy_step(p: &[f64], g: &[f64], eta: f64, lo: f64) -> Result<Vec<f64>> {
    let n = p.len();
    let free_mass = 1.0 - lo * n as f64;
    if free_mass < -1e-15 {
        return Err(Error::Domain(format!(
            "lower bound {lo} with {n} coordinates exceeds total mass 1"
        )));
    }
    let unconstrained = mirror_step(p, g, eta, &Regularizer::NegEntropy { domain_floor: 0.0 })?;
    if unconstrained.iter().all(|&q| q >= lo) {
        return Ok(unconstrained);
    }
    // Sort by unconstrained weight ascending; the clamped set is a prefix.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| unconstrained[i].partial_cmp(&unconstrained[j]).unwrap());
    let total: f64 = 1.0;
    for k in 1..n {
        // Clamp the k smallest, scale the rest to the leftover mass.
        let clamped: f64 = lo * k as f64;
        let rest_weight: f64 = order[k..].iter().map(|&i| unconstrained[i]).sum();
        let scale = (total - clamped) / rest_weight;
        let boundary_ok = unconstrained[order[k]] * scale >= lo;
        let last_clamped_ok = unconstrained[order[k - 1]] * scale <= lo;
        if boundary_ok && last_clamped_ok {
            let mut q = vec![0.0; n];
            for &i in &order[..k] {
                q[i] = lo;
            }
            for &i in &order[k..] {
                q[i] = unconstrained[i] * scale;
            }
            return Ok(q);
        }
    }
    // All coordinates pinned: only possible when lo = 1/n.
    Ok(vec![lo; n])
}

/// Mirror step on the truncated simplex for the Euclidean regularizer.
pub fn truncated_euclidean_step(p: &[f64], g: &[f64], eta: f64, lo: f64) -> Result<Vec<f64>> {
    let moved: Vec<f64> = p.iter().zip(g).map(|(x, gg)| x - eta * gg).collect();
    truncated_simplex_project(&moved, lo)
}

/// Bregman divergence of the state-aggregated regularizer
/// `R_mu(pi) = E_{s ~ mu} R(pi_s)`; inherits strong convexity in the
/// `(L^2(mu), natural-norm)` aggregate from the per-state regularizer.
pub fn state_regularizer_bregman(
    pi: &[Vec<f64>],
    pi_ref: &[Vec<f64>],
    mu: &[f64],
    reg: &Regularizer,
    tol: &Tolerances,
) -> Result<f64> {
    if pi.len() != mu.len() || pi_ref.len() != mu.len() {
        return Err(Error::DimensionMismatch(format!(
            "tables have {} and {} states, weights have {}",
            pi.len(),
            pi_ref.len(),
            mu.len()
        )));
    }
    let mut acc = 0.0;
    for ((u, v), &w) in pi.iter().zip(pi_ref).zip(mu) {
        if w == 0.0 {
            // Unvisited states contribute nothing; skipping them also
            // avoids spurious domain errors where the divergence has
            // zero weight.
            continue;
        }
        acc += w * reg.bregman(u, v, tol)?;
    }
    Ok(acc)
}

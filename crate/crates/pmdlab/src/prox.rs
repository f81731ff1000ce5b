//! Bregman proximal-point machinery for locally smooth objectives.
//!
//! The optimizer view of mirror descent: each step solves
//! `min_y <grad_hat f(x), y> + (1/eta) B_{R_x}(y, x)` over a convex
//! decision set, where the norm and regularizer may depend on the prox
//! center x. Everything downstream (descent, stationarity, the gradient
//! mapping rate) is certified per step from the realized inner-solver
//! certificate, never assumed from the tolerances requested.
//!
//! Points are flat vectors split into equal blocks; block s carries a
//! weight (an occupancy in the policy instantiation, 1.0 for plain
//! simplex problems) and the regularizer acts blockwise.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{
    truncated_entropy_step, truncated_euclidean_step, ActionNorm, Regularizer,
};
use crate::tol::Tolerances;

/// First-order oracle. `grad_hat` is the (possibly noisy) estimate the
/// prox step consumes; `grad` is the exact gradient used by the descent
/// and stationarity certificates; `eps_grad` bounds the dual-norm gap
/// between them at any queried point.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> Vec<f64>;
    fn grad_hat(&self, x: &[f64]) -> Vec<f64> {
        self.grad(x)
    }
    fn eps_grad(&self) -> f64 {
        0.0
    }
}

/// Norm, regularizer, and constants at one prox center.
///
/// The norm is the weighted aggregate `sqrt(sum_s w_s ||u_s||^2)` over
/// blocks, with the per-block norm forced to the one the regularizer is
/// 1-strongly convex against (L2 for Euclidean, L1 for entropy).
#[derive(Debug, Clone)]
pub struct LocalGeometry {
    /// Per-block weights, nonnegative. Zero-weight blocks drop out of the
    /// norm, the regularizer, and the gradient mapping.
    pub weights: Vec<f64>,
    pub reg: Regularizer,
    /// Lipschitz constant of the regularizer's gradient in this norm.
    pub lip_grad: f64,
    /// Diameter bound D of the decision set in this norm.
    pub diameter: f64,
    /// Bound M on the exact gradient's dual norm at the center.
    pub grad_bound: f64,
    /// Local smoothness constant of the objective at the center.
    pub beta: f64,
}

impl LocalGeometry {
    pub fn new(
        weights: Vec<f64>,
        reg: Regularizer,
        lip_grad: f64,
        diameter: f64,
        grad_bound: f64,
        beta: f64,
    ) -> Result<LocalGeometry> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "geometry weights must be nonnegative and finite".into(),
            ));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidDistribution(
                "geometry weights must carry positive total mass".into(),
            ));
        }
        for (name, v) in [("diameter", diameter), ("grad_bound", grad_bound)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("geometry constant {name} = {v}")));
            }
        }
        // +inf is the unbounded sentinel for beta and lip_grad (e.g. the
        // entropy regularizer without an exploration floor): prox steps
        // stay well posed, but no step size can certify descent.
        if !(lip_grad > 0.0) || !(beta > 0.0) {
            return Err(Error::Config(
                "lip_grad and beta must be strictly positive".into(),
            ));
        }
        Ok(LocalGeometry {
            weights,
            reg,
            lip_grad,
            diameter,
            grad_bound,
            beta,
        })
    }

    pub fn action_norm(&self) -> ActionNorm {
        self.reg.natural_norm()
    }

    pub fn block_len(&self, dim: usize) -> Result<usize> {
        let blocks = self.weights.len();
        if blocks == 0 || !dim.is_multiple_of(blocks) {
            return Err(Error::DimensionMismatch(format!(
                "dimension {dim} does not split into {blocks} blocks"
            )));
        }
        Ok(dim / blocks)
    }

    /// Gradient of the weighted regularizer `R_x(u) = sum_s w_s R(u_s)`.
    /// Zero-weight blocks contribute zeros without touching the
    /// regularizer (they may sit outside its domain).
    pub fn reg_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let len = self.block_len(x.len())?;
        let mut out = vec![0.0; x.len()];
        for (s, (block, &w)) in x.chunks(len).zip(&self.weights).enumerate() {
            if w == 0.0 {
                continue;
            }
            let g = self.reg.grad(block)?;
            for (o, gi) in out[s * len..(s + 1) * len].iter_mut().zip(g) {
                *o = w * gi;
            }
        }
        Ok(out)
    }

    /// Weighted primal norm of `u - v`.
    pub fn norm_diff(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        let len = self.block_len(u.len())?;
        if u.len() != v.len() {
            return Err(Error::DimensionMismatch(format!(
                "points have lengths {} and {}",
                u.len(),
                v.len()
            )));
        }
        let norm = self.action_norm();
        let mut acc = 0.0;
        for ((bu, bv), &w) in u.chunks(len).zip(v.chunks(len)).zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            let d: Vec<f64> = bu.iter().zip(bv).map(|(a, b)| a - b).collect();
            let n = norm.apply(&d);
            acc += w * n * n;
        }
        Ok(acc.sqrt())
    }

    /// Dual of the weighted norm: `sqrt(sum_{w_s > 0} ||z_s||_dual^2 / w_s)`,
    /// infinite when z puts mass on a zero-weight block.
    pub fn dual_norm(&self, z: &[f64]) -> Result<f64> {
        let len = self.block_len(z.len())?;
        let norm = self.action_norm();
        let mut acc = 0.0;
        for (block, &w) in z.chunks(len).zip(&self.weights) {
            let n = norm.dual(block);
            if w == 0.0 {
                if n > 0.0 {
                    return Ok(f64::INFINITY);
                }
                continue;
            }
            acc += n * n / w;
        }
        Ok(acc.sqrt())
    }

    /// Bregman divergence of the weighted regularizer.
    pub fn bregman(&self, u: &[f64], v: &[f64], tol: &Tolerances) -> Result<f64> {
        let len = self.block_len(u.len())?;
        let mut acc = 0.0;
        for ((bu, bv), &w) in u.chunks(len).zip(v.chunks(len)).zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            acc += w * self.reg.bregman(bu, bv, tol)?;
        }
        Ok(acc)
    }
}

/// Feasible region for the prox subproblem.
#[derive(Debug, Clone)]
pub enum DecisionSet {
    /// Convex hull of explicit points (flattened, all the same length).
    Hull { vertices: Vec<Vec<f64>> },
    /// Product of truncated simplices: `blocks` blocks of `block_len`
    /// coordinates, each summing to 1 with entries >= `lo`.
    SimplexProduct {
        blocks: usize,
        block_len: usize,
        lo: f64,
    },
}

impl DecisionSet {
    pub fn dim(&self) -> usize {
        match self {
            DecisionSet::Hull { vertices } => vertices.first().map_or(0, Vec::len),
            DecisionSet::SimplexProduct {
                blocks, block_len, ..
            } => blocks * block_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DecisionSet::Hull { vertices } => {
                if vertices.is_empty() {
                    return Err(Error::Config("hull decision set with no vertices".into()));
                }
                let d = vertices[0].len();
                if d == 0 || vertices.iter().any(|v| v.len() != d) {
                    return Err(Error::DimensionMismatch(
                        "hull vertices have inconsistent lengths".into(),
                    ));
                }
                Ok(())
            }
            DecisionSet::SimplexProduct {
                blocks, block_len, lo,
            } => {
                if *blocks == 0 || *block_len == 0 {
                    return Err(Error::Config("empty simplex product".into()));
                }
                if !(0.0..=1.0 / *block_len as f64).contains(lo) {
                    return Err(Error::Config(format!(
                        "per-coordinate floor {lo} infeasible for block length {block_len}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Exact minimizer of `y -> <g, y>` with its value. Ties break toward
    /// the lowest vertex or action index.
    pub fn linear_min(&self, g: &[f64]) -> Result<(Vec<f64>, f64)> {
        if g.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "gradient length {} vs decision set dimension {}",
                g.len(),
                self.dim()
            )));
        }
        match self {
            DecisionSet::Hull { vertices } => {
                let mut best = 0usize;
                let mut best_val = dot(g, &vertices[0]);
                for (i, v) in vertices.iter().enumerate().skip(1) {
                    let val = dot(g, v);
                    if val < best_val {
                        best_val = val;
                        best = i;
                    }
                }
                Ok((vertices[best].clone(), best_val))
            }
            DecisionSet::SimplexProduct {
                blocks, block_len, lo,
            } => {
                let mut y = vec![*lo; blocks * block_len];
                let free = 1.0 - lo * *block_len as f64;
                let mut val = 0.0;
                for (b, block) in g.chunks(*block_len).enumerate() {
                    let mut arg = 0usize;
                    for (a, &x) in block.iter().enumerate().skip(1) {
                        if x < block[arg] {
                            arg = a;
                        }
                    }
                    y[b * block_len + arg] += free;
                    val += lo * block.iter().sum::<f64>() + free * block[arg];
                }
                Ok((y, val))
            }
        }
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        match self {
            // Membership in a hull is not checked coordinate-wise here;
            // iterates carry hull coordinates by construction. Only the
            // dimension is sanity-checked.
            DecisionSet::Hull { .. } => x.len() == self.dim(),
            DecisionSet::SimplexProduct {
                blocks, block_len, lo,
            } => {
                x.len() == blocks * block_len
                    && x.chunks(*block_len).all(|b| {
                        b.iter().all(|&p| p >= lo - slack)
                            && (b.iter().sum::<f64>() - 1.0).abs() <= slack * b.len() as f64
                    })
            }
        }
    }
}

/// What the inner solver actually achieved on one step.
#[derive(Debug, Clone, Serialize)]
pub struct ProxCertificate {
    /// Realized first-order violation: `max_z <grad phi(x+), x+ - z>`
    /// over the decision set, clamped at zero.
    pub eps_opt: f64,
    /// Gradient-oracle error bound in force for this step.
    pub eps_grad: f64,
    /// `||G_eta(x, x+)||` in the dual local norm.
    pub grad_mapping_norm: f64,
    pub inner_iterations: usize,
    /// Inner solver stopped at its iteration cap before reaching the
    /// requested tolerance; `eps_opt` still reports the realized value.
    pub hit_cap: bool,
}

#[derive(Debug, Clone)]
pub struct ProxOutcome {
    pub x_plus: Vec<f64>,
    /// Hull coordinates of `x_plus` when the set is a hull.
    pub hull_coords: Option<Vec<f64>>,
    pub cert: ProxCertificate,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient of the prox objective
/// `phi(y) = <g_hat, y> + (1/eta)(R_x(y) - R_x(x) - <grad R_x(x), y - x>)`.
fn phi_gradient(
    g_hat: &[f64],
    geom: &LocalGeometry,
    reg_grad_x: &[f64],
    y: &[f64],
    eta: f64,
) -> Result<Vec<f64>> {
    let reg_grad_y = geom.reg_grad(y)?;
    Ok(g_hat
        .iter()
        .zip(&reg_grad_y)
        .zip(reg_grad_x)
        .map(|((g, ry), rx)| g + (ry - rx) / eta)
        .collect())
}

/// One approximate Bregman proximal step from `x`.
///
/// Simplex products use exact per-block closed forms (projection or
/// truncated multiplicative weights). Hulls run Frank-Wolfe with away
/// steps and exact line search over the vertex weights. Either way the
/// returned `eps_opt` is measured at the final point by a full linear
/// minimization over the set, so the certificate is honest regardless of
/// which path produced the point.
pub fn prox_step<O: Objective + ?Sized>(
    obj: &O,
    geom: &LocalGeometry,
    set: &DecisionSet,
    x: &[f64],
    eta: f64,
    inner_tol: f64,
    tol: &Tolerances,
) -> Result<ProxOutcome> {
    set.validate()?;
    if eta <= 0.0 || !eta.is_finite() {
        return Err(Error::StepSize(format!("eta = {eta} must be positive")));
    }
    if inner_tol < 0.0 {
        return Err(Error::Config(format!("inner_tol = {inner_tol} negative")));
    }
    if x.len() != set.dim() {
        return Err(Error::DimensionMismatch(format!(
            "point length {} vs decision set dimension {}",
            x.len(),
            set.dim()
        )));
    }
    let g_hat = obj.grad_hat(x);
    let reg_grad_x = geom.reg_grad(x)?;

    let (x_plus, hull_coords, inner_iterations, hit_cap) = match set {
        DecisionSet::SimplexProduct {
            block_len, lo, ..
        } => {
            let mut y = Vec::with_capacity(x.len());
            for ((bx, bg), &w) in x
                .chunks(*block_len)
                .zip(g_hat.chunks(*block_len))
                .zip(&geom.weights)
            {
                if w == 0.0 {
                    // The proximity term vanishes; the block objective is
                    // <g, y_s>. A zero gradient block (the policy case)
                    // keeps its current point, otherwise take the vertex.
                    if bg.iter().all(|&g| g == 0.0) {
                        y.extend_from_slice(bx);
                    } else {
                        let free = 1.0 - lo * *block_len as f64;
                        let mut arg = 0usize;
                        for (a, &g) in bg.iter().enumerate().skip(1) {
                            if g < bg[arg] {
                                arg = a;
                            }
                        }
                        let mut block = vec![*lo; *block_len];
                        block[arg] += free;
                        y.extend_from_slice(&block);
                    }
                    continue;
                }
                // Block subproblem: <g, y> + (w/eta) B(y, x); equivalent
                // to a mirror step with effective step size eta / w.
                let eff = eta / w;
                let stepped = match geom.reg {
                    Regularizer::Euclidean => truncated_euclidean_step(bx, bg, eff, *lo)?,
                    Regularizer::NegEntropy { .. } => truncated_entropy_step(bx, bg, eff, *lo)?,
                };
                y.extend_from_slice(&stepped);
            }
            (y, None, 1, false)
        }
        DecisionSet::Hull { vertices } => {
            let fw = away_step_frank_wolfe(
                &g_hat,
                geom,
                &reg_grad_x,
                vertices,
                eta,
                inner_tol,
            )?;
            (fw.y, Some(fw.lambda), fw.iterations, fw.hit_cap)
        }
    };

    // Measured certificate at the final point.
    let phi_grad = phi_gradient(&g_hat, geom, &reg_grad_x, &x_plus, eta)?;
    let (_, min_val) = set.linear_min(&phi_grad)?;
    let eps_opt = (dot(&phi_grad, &x_plus) - min_val).max(0.0);
    let grad_mapping_norm = gradient_mapping(geom, x, &x_plus, eta, tol)?;

    Ok(ProxOutcome {
        x_plus,
        hull_coords,
        cert: ProxCertificate {
            eps_opt,
            eps_grad: obj.eps_grad(),
            grad_mapping_norm,
            inner_iterations,
            hit_cap,
        },
    })
}

struct FwSolution {
    lambda: Vec<f64>,
    y: Vec<f64>,
    iterations: usize,
    hit_cap: bool,
}

/// Frank-Wolfe with away steps on the vertex weights, exact line search.
/// The prox objective is 1/eta-strongly convex in the weighted norm, so
/// away steps give linear convergence of the FW gap, which doubles as the
/// eps_opt certificate.
fn away_step_frank_wolfe(
    g_hat: &[f64],
    geom: &LocalGeometry,
    reg_grad_x: &[f64],
    vertices: &[Vec<f64>],
    eta: f64,
    inner_tol: f64,
    // no tol arg: the line search is parameter-free bisection
) -> Result<FwSolution> {
    let m = vertices.len();
    let dim = vertices[0].len();
    let block_len = geom.block_len(dim)?;

    if matches!(geom.reg, Regularizer::NegEntropy { .. }) {
        for (i, v) in vertices.iter().enumerate() {
            for (block, &w) in v.chunks(block_len).zip(&geom.weights) {
                if w > 0.0 && block.iter().any(|&p| p <= 0.0) {
                    return Err(Error::Domain(format!(
                        "entropy prox over a hull needs interior vertices on \
                         weighted blocks; vertex {i} touches zero"
                    )));
                }
            }
        }
    }

    // The nominal cap tracks plain FW's 1/t gap decay; away steps converge
    // far faster, so a hard ceiling keeps pathological tolerances from
    // turning into unbounded work (see the warn flag).
    let nominal = 10.0 * m as f64 * (1.0 / inner_tol.max(1e-300)).ceil();
    let cap = nominal.clamp(1_000.0, 500_000.0) as usize;

    let mut lambda = vec![1.0 / m as f64; m];
    let mut y = combine(vertices, &lambda, dim);
    let mut iterations = 0;
    let mut hit_cap = true;

    // Curvature shortcut for the Euclidean line search: phi is quadratic
    // along any direction with second derivative sum_s w_s ||d_s||^2 / eta.
    let weighted_sq = |d: &[f64]| -> f64 {
        d.chunks(block_len)
            .zip(&geom.weights)
            .map(|(b, &w)| w * b.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
    };

    for it in 0..cap {
        iterations = it + 1;
        let grad = phi_gradient(g_hat, geom, reg_grad_x, &y, eta)?;
        let scores: Vec<f64> = vertices.iter().map(|v| dot(&grad, v)).collect();
        let here = dot(&grad, &y);

        let mut i_fw = 0usize;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s < scores[i_fw] {
                i_fw = i;
            }
        }
        let gap_fw = here - scores[i_fw];
        if gap_fw <= inner_tol {
            hit_cap = false;
            break;
        }

        let mut i_aw = None;
        for (i, &l) in lambda.iter().enumerate() {
            if l > 0.0 && i_aw.is_none_or(|j: usize| scores[i] > scores[j]) {
                i_aw = Some(i);
            }
        }
        let i_aw = i_aw.expect("lambda sums to 1, some weight is positive");
        let gap_aw = scores[i_aw] - here;

        // Pick the steeper direction; away steps are only available while
        // they can shed weight without leaving the simplex.
        let use_away = gap_aw > gap_fw && lambda[i_aw] < 1.0;
        let (d, t_max): (Vec<f64>, f64) = if use_away {
            let d: Vec<f64> = y
                .iter()
                .zip(&vertices[i_aw])
                .map(|(yi, vi)| yi - vi)
                .collect();
            (d, lambda[i_aw] / (1.0 - lambda[i_aw]))
        } else {
            let d: Vec<f64> = vertices[i_fw]
                .iter()
                .zip(&y)
                .map(|(vi, yi)| vi - yi)
                .collect();
            (d, 1.0)
        };

        let slope0 = dot(&grad, &d);
        if slope0 >= 0.0 {
            // No descent along the chosen direction: the remaining gap is
            // below resolvable precision.
            hit_cap = false;
            break;
        }
        let t = match geom.reg {
            Regularizer::Euclidean => {
                let curv = weighted_sq(&d) / eta;
                if curv <= 0.0 {
                    t_max
                } else {
                    (-slope0 / curv).min(t_max)
                }
            }
            Regularizer::NegEntropy { .. } => {
                // phi'(t) is increasing; bisect for its root.
                let dphi = |t: f64| -> Result<f64> {
                    let yt: Vec<f64> = y.iter().zip(&d).map(|(yi, di)| yi + t * di).collect();
                    let g = phi_gradient(g_hat, geom, reg_grad_x, &yt, eta)?;
                    Ok(dot(&g, &d))
                };
                if dphi(t_max)? <= 0.0 {
                    t_max
                } else {
                    let (mut lo_t, mut hi_t) = (0.0, t_max);
                    for _ in 0..100 {
                        let mid = 0.5 * (lo_t + hi_t);
                        if dphi(mid)? < 0.0 {
                            lo_t = mid;
                        } else {
                            hi_t = mid;
                        }
                    }
                    0.5 * (lo_t + hi_t)
                }
            }
        };

        if use_away {
            let scale = 1.0 + t;
            for (i, l) in lambda.iter_mut().enumerate() {
                *l = if i == i_aw {
                    scale * *l - t
                } else {
                    scale * *l
                };
            }
        } else {
            for (i, l) in lambda.iter_mut().enumerate() {
                *l = if i == i_fw {
                    (1.0 - t) * *l + t
                } else {
                    (1.0 - t) * *l
                };
            }
        }
        // Numerical hygiene: weights drift by rounding; clip and renorm.
        let mut sum = 0.0;
        for l in lambda.iter_mut() {
            if *l < 0.0 {
                *l = 0.0;
            }
            sum += *l;
        }
        for l in lambda.iter_mut() {
            *l /= sum;
        }
        y = combine(vertices, &lambda, dim);
    }

    Ok(FwSolution {
        lambda,
        y,
        iterations,
        hit_cap,
    })
}

fn combine(vertices: &[Vec<f64>], lambda: &[f64], dim: usize) -> Vec<f64> {
    let mut y = vec![0.0; dim];
    for (l, v) in lambda.iter().zip(vertices) {
        if *l == 0.0 {
            continue;
        }
        for (yi, vi) in y.iter_mut().zip(v) {
            *yi += l * vi;
        }
    }
    y
}

/// Dual norm of the Bregman gradient mapping
/// `G_eta = (1/eta)(grad R_x(x) - grad R_x(x+))`, with the step-distance
/// inequality `||x - x+||_x <= eta ||G_eta||_x*` asserted on the way.
pub fn gradient_mapping(
    geom: &LocalGeometry,
    x: &[f64],
    x_plus: &[f64],
    eta: f64,
    tol: &Tolerances,
) -> Result<f64> {
    let gx = geom.reg_grad(x)?;
    let gp = geom.reg_grad(x_plus)?;
    let g: Vec<f64> = gx.iter().zip(&gp).map(|(a, b)| (a - b) / eta).collect();
    let norm = geom.dual_norm(&g)?;
    let dist = geom.norm_diff(x, x_plus)?;
    if dist > eta * norm + tol.bellman {
        return Err(Error::CheckFailed(format!(
            "step distance {dist} exceeds eta * ||G|| = {}",
            eta * norm
        )));
    }
    Ok(norm)
}

/// Descent certificate: slack of
/// `f(x+) <= f(x) - (eta / 2L^2)||G||^2 + eta eps_grad ||G|| + eps_opt`.
/// Requires the step-size regime `eta <= 1/(2 beta)` in which the bound
/// is proved; violating it is a caller error, not a check failure.
pub fn check_descent<O: Objective + ?Sized>(
    obj: &O,
    geom: &LocalGeometry,
    x: &[f64],
    x_plus: &[f64],
    cert: &ProxCertificate,
    eta: f64,
) -> Result<f64> {
    if eta > 1.0 / (2.0 * geom.beta) * (1.0 + 1e-12) {
        return Err(Error::StepSize(format!(
            "eta = {eta} exceeds 1/(2 beta) = {}",
            1.0 / (2.0 * geom.beta)
        )));
    }
    if !geom.lip_grad.is_finite() {
        return Err(Error::StepSize(
            "descent bound needs a finite regularizer Lipschitz constant".into(),
        ));
    }
    let l = geom.lip_grad;
    let g = cert.grad_mapping_norm;
    let lhs = obj.value(x_plus);
    let rhs = obj.value(x) - eta / (2.0 * l * l) * g * g + eta * cert.eps_grad * g + cert.eps_opt;
    Ok(rhs - lhs)
}

/// Stationarity certificate: computes the exact
/// `max_y <grad f(x), x - y>` by linear minimization and the bound
/// `(D + eta M)||G|| + eps_grad D + eps_opt`; errors if the bound fails.
pub fn stationarity_bound<O: Objective + ?Sized>(
    obj: &O,
    geom: &LocalGeometry,
    set: &DecisionSet,
    x: &[f64],
    cert: &ProxCertificate,
    eta: f64,
    tol: &Tolerances,
) -> Result<(f64, f64)> {
    let grad = obj.grad(x);
    let (_, min_val) = set.linear_min(&grad)?;
    let lhs = dot(&grad, x) - min_val;
    let rhs = (geom.diameter + eta * geom.grad_bound) * cert.grad_mapping_norm
        + cert.eps_grad * geom.diameter
        + cert.eps_opt;
    if lhs > rhs + tol.lemma_slack {
        return Err(Error::CheckFailed(format!(
            "stationarity bound violated: lhs {lhs} > rhs {rhs}"
        )));
    }
    Ok((lhs, rhs))
}

#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub cert: ProxCertificate,
    pub descent_slack: f64,
    pub stationarity_lhs: f64,
    pub stationarity_rhs: f64,
}

#[derive(Debug, Clone)]
pub struct ProxRecord {
    pub x: Vec<f64>,
    pub f: f64,
    /// Diagnostics of the step leaving this iterate; `None` on the final
    /// record.
    pub step: Option<StepDiagnostics>,
}

#[derive(Debug, Clone)]
pub struct ProxTrajectory {
    pub records: Vec<ProxRecord>,
    pub eta: f64,
    /// `min_k ||G_k||^2` over the executed steps.
    pub min_grad_mapping_sq: f64,
    /// Telescoped rate bound
    /// `(2L^2 / (eta K)) (f(x_1) - min_k f(x_k) + sum_k (eta eps_grad ||G_k|| + eps_opt_k))`.
    pub rate_bound: f64,
    pub hit_cap_any: bool,
}

impl ProxTrajectory {
    pub fn final_value(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.f)
    }
}

/// Runs K approximate prox steps, certifying descent and stationarity at
/// every iterate and the telescoped min-gradient-mapping rate at the end.
/// `geometry_at` is queried at each prox center (weights may vary).
pub fn run_prox_point<O, G>(
    obj: &O,
    geometry_at: G,
    set: &DecisionSet,
    x1: &[f64],
    eta: f64,
    k_steps: usize,
    inner_tol: f64,
    tol: &Tolerances,
) -> Result<ProxTrajectory>
where
    O: Objective + ?Sized,
    G: Fn(&[f64]) -> Result<LocalGeometry>,
{
    let mut x = x1.to_vec();
    let mut records = Vec::with_capacity(k_steps + 1);
    let mut min_gsq = f64::INFINITY;
    let mut eps_acc = 0.0;
    let mut hit_cap_any = false;
    let mut lip = 1.0f64;
    let f1 = obj.value(&x);
    let mut f_best = f1;

    for _ in 0..k_steps {
        let geom = geometry_at(&x)?;
        lip = geom.lip_grad;
        let f_here = obj.value(&x);
        if !f_here.is_finite() {
            return Err(Error::CheckFailed("objective value not finite".into()));
        }
        f_best = f_best.min(f_here);
        let out = prox_step(obj, &geom, set, &x, eta, inner_tol, tol)?;
        hit_cap_any |= out.cert.hit_cap;

        let descent_slack = check_descent(obj, &geom, &x, &out.x_plus, &out.cert, eta)?;
        if descent_slack < -tol.lemma_slack {
            return Err(Error::CheckFailed(format!(
                "descent inequality violated by {descent_slack}"
            )));
        }
        let (st_lhs, st_rhs) = stationarity_bound(obj, &geom, set, &x, &out.cert, eta, tol)?;

        let g = out.cert.grad_mapping_norm;
        min_gsq = min_gsq.min(g * g);
        eps_acc += eta * out.cert.eps_grad * g + out.cert.eps_opt;

        records.push(ProxRecord {
            x: x.clone(),
            f: f_here,
            step: Some(StepDiagnostics {
                cert: out.cert,
                descent_slack,
                stationarity_lhs: st_lhs,
                stationarity_rhs: st_rhs,
            }),
        });
        x = out.x_plus;
    }
    let f_last = obj.value(&x);
    f_best = f_best.min(f_last);
    records.push(ProxRecord {
        x,
        f: f_last,
        step: None,
    });

    let (min_grad_mapping_sq, rate_bound) = if k_steps == 0 {
        (0.0, 0.0)
    } else {
        let bound =
            2.0 * lip * lip / (eta * k_steps as f64) * (f1 - f_best + eps_acc).max(0.0);
        if min_gsq > bound + tol.lemma_slack {
            return Err(Error::CheckFailed(format!(
                "gradient mapping rate violated: min ||G||^2 = {min_gsq} > bound {bound}"
            )));
        }
        (min_gsq, bound)
    };

    Ok(ProxTrajectory {
        records,
        eta,
        min_grad_mapping_sq,
        rate_bound,
        hit_cap_any,
    })
}

/// Weak gradient-mapping domination constants implied by a
/// (C*, eps_vgd)-VGD objective:
/// `omega = (1/2) (C* (D + eta M))^{-2}`,
/// `delta = eps_vgd + eps_opt C* + eps_grad C* D`.
/// The regularizer's Lipschitz constant does not enter either constant;
/// it reappears in the downstream rate (through 2L^2/eta), and is taken
/// here so call sites hand over the full constant set uniformly.
#[allow(clippy::too_many_arguments)]
pub fn weak_gm_constants(
    c_star: f64,
    eps_vgd: f64,
    eps_opt: f64,
    eps_grad: f64,
    diameter: f64,
    grad_bound: f64,
    eta: f64,
    _lip_grad: f64,
) -> Result<(f64, f64)> {
    for (name, v) in [
        ("eps_vgd", eps_vgd),
        ("eps_opt", eps_opt),
        ("eps_grad", eps_grad),
        ("diameter", diameter),
        ("grad_bound", grad_bound),
        ("eta", eta),
    ] {
        if !(v >= 0.0) {
            return Err(Error::Config(format!("{name} = {v} must be nonnegative")));
        }
    }
    if c_star < 1.0 {
        return Err(Error::Config(format!("c_star = {c_star} must be >= 1")));
    }
    let scale = c_star * (diameter + eta * grad_bound);
    let omega = 0.5 / (scale * scale);
    let delta = eps_vgd + eps_opt * c_star + eps_grad * c_star * diameter;
    Ok((omega, delta))
}

/// Convex quadratic `f(x) = (1/2)(x - c)' A (x - c)` with symmetric PSD A.
/// The synthetic objective used for optimizer-level certification: convex
/// over any convex set, hence (1, 0)-VGD.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    hess: DMatrix<f64>,
    center: DVector<f64>,
}

impl QuadraticObjective {
    pub fn new(hess: DMatrix<f64>, center: DVector<f64>) -> Result<QuadraticObjective> {
        if !hess.is_square() || hess.nrows() != center.len() {
            return Err(Error::DimensionMismatch(format!(
                "hessian {}x{} vs center length {}",
                hess.nrows(),
                hess.ncols(),
                center.len()
            )));
        }
        let asym = (&hess - hess.transpose()).abs().max();
        if asym > 1e-12 {
            return Err(Error::Config(format!(
                "hessian asymmetry {asym} exceeds 1e-12"
            )));
        }
        Ok(QuadraticObjective { hess, center })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Largest eigenvalue: the L2 smoothness constant.
    pub fn beta(&self) -> f64 {
        self.hess
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0f64, |m, &l| m.max(l.abs()))
    }

    /// Valid gradient-norm bound over the unit simplex:
    /// `||A|| * max_{x in simplex} ||x - c|| <= beta * (1 + ||c||)`.
    pub fn grad_bound_on_simplex(&self) -> f64 {
        self.beta() * (1.0 + self.center.norm())
    }
}

impl Objective for QuadraticObjective {
    fn value(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.center;
        0.5 * (&self.hess * &d).dot(&d)
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let d = DVector::from_column_slice(x) - &self.center;
        (&self.hess * d).iter().copied().collect()
    }
}

/// Writes a trajectory as CSV: one row per iterate, step diagnostics
/// blank on the final row.
pub fn write_trajectory_csv(traj: &ProxTrajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "k",
        "f",
        "eps_opt",
        "grad_mapping_norm",
        "descent_slack",
        "stationarity_lhs",
        "stationarity_rhs",
    ])?;
    for (k, rec) in traj.records.iter().enumerate() {
        match &rec.step {
            Some(s) => w.write_record([
                k.to_string(),
                format!("{:.17e}", rec.f),
                format!("{:.17e}", s.cert.eps_opt),
                format!("{:.17e}", s.cert.grad_mapping_norm),
                format!("{:.17e}", s.descent_slack),
                format!("{:.17e}", s.stationarity_lhs),
                format!("{:.17e}", s.stationarity_rhs),
            ])?,
            None => w.write_record([
                k.to_string(),
                format!("{:.17e}", rec.f),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ])?,
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::simplex_project;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn plain_geom(reg: Regularizer, beta: f64) -> LocalGeometry {
        let lip = match reg {
            Regularizer::Euclidean => 1.0,
            // 1/eps Lipschitz gradient on the truncated simplex; tests
            // using entropy stay well inside Delta_{0.05}.
            Regularizer::NegEntropy { .. } => 20.0,
        };
        LocalGeometry::new(vec![1.0], reg, lip, 2.0, 10.0, beta).unwrap()
    }

    fn simplex(n: usize) -> DecisionSet {
        DecisionSet::SimplexProduct {
            blocks: 1,
            block_len: n,
            lo: 0.0,
        }
    }

    struct Linear {
        g: Vec<f64>,
    }
    impl Objective for Linear {
        fn value(&self, x: &[f64]) -> f64 {
            dot(&self.g, x)
        }
        fn grad(&self, _x: &[f64]) -> Vec<f64> {
            self.g.clone()
        }
    }

    #[test]
    fn stationary_input_is_a_fixed_point() {
        let obj = Linear {
            g: vec![0.0, 0.0, 0.0],
        };
        let geom = plain_geom(Regularizer::Euclidean, 1.0);
        let x = vec![0.2, 0.5, 0.3];
        let out = prox_step(&obj, &geom, &simplex(3), &x, 0.1, 1e-12, &tol()).unwrap();
        for (a, b) in out.x_plus.iter().zip(&x) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(out.cert.grad_mapping_norm < 1e-12);
        assert!(out.cert.eps_opt < 1e-12);
    }

    #[test]
    fn euclidean_prox_is_projected_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let geom = plain_geom(Regularizer::Euclidean, 1.0);
        for _ in 0..50 {
            let x = {
                let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect::<Vec<_>>()
            };
            let g: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let eta = rng.random_range(0.05..0.5);
            let obj = Linear { g: g.clone() };
            let out = prox_step(&obj, &geom, &simplex(4), &x, eta, 1e-12, &tol()).unwrap();
            let moved: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - eta * gi).collect();
            let proj = simplex_project(&moved);
            for (a, b) in out.x_plus.iter().zip(&proj) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn quadratic_fixed_point_matches_grid_search() {
        // f(l) = ||l - c||^2 with c outside the simplex; the prox fixed
        // point must be the constrained minimizer.
        let c = vec![1.3, 0.4];
        let hess = DMatrix::from_diagonal_element(2, 2, 2.0);
        let obj = QuadraticObjective::new(hess, DVector::from_vec(c)).unwrap();
        let geom = plain_geom(Regularizer::Euclidean, obj.beta());
        let eta = 1.0 / (2.0 * obj.beta());
        let mut x = vec![0.5, 0.5];
        for _ in 0..500 {
            x = prox_step(&obj, &geom, &simplex(2), &x, eta, 1e-14, &tol())
                .unwrap()
                .x_plus;
        }
        let mut best = (f64::INFINITY, 0.0);
        let mut t = 0.0;
        while t <= 1.0 {
            let v = obj.value(&[t, 1.0 - t]);
            if v < best.0 {
                best = (v, t);
            }
            t += 1e-4;
        }
        assert!(
            (x[0] - best.1).abs() < 1e-4,
            "fixed point {} vs grid {}",
            x[0],
            best.1
        );
    }

    #[test]
    fn gradient_mapping_euclidean_is_step_over_eta() {
        let geom = plain_geom(Regularizer::Euclidean, 1.0);
        let x = vec![0.3, 0.7];
        let xp = vec![0.4, 0.6];
        let eta = 0.25;
        let g = gradient_mapping(&geom, &x, &xp, eta, &tol()).unwrap();
        let direct: f64 = x
            .iter()
            .zip(&xp)
            .map(|(a, b)| ((a - b) / eta) * ((a - b) / eta))
            .sum::<f64>()
            .sqrt();
        assert!((g - direct).abs() < 1e-12);
        assert!(gradient_mapping(&geom, &x, &x, eta, &tol()).unwrap() < 1e-15);
    }

    #[test]
    fn gradient_mapping_entropy_dominates_step_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let geom = plain_geom(Regularizer::NegEntropy { domain_floor: 0.0 }, 1.0);
        for _ in 0..200 {
            // Random pairs in Delta_{0.1}: draw and push toward uniform.
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 0.1).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| 0.7 * v / s + 0.1).collect()
            };
            let x = draw(&mut rng);
            let xp = draw(&mut rng);
            // The distance inequality is asserted inside; a returned Ok is
            // the test.
            gradient_mapping(&geom, &x, &xp, 0.2, &tol()).unwrap();
        }
    }

    #[test]
    fn oversized_step_is_rejected() {
        let obj = Linear {
            g: vec![1.0, -1.0],
        };
        let geom = plain_geom(Regularizer::Euclidean, 4.0);
        let x = vec![0.5, 0.5];
        let out = prox_step(&obj, &geom, &simplex(2), &x, 0.1, 1e-12, &tol()).unwrap();
        // 1/(2 beta) = 0.125; doubled eta must trip the guard.
        let err = check_descent(&obj, &geom, &x, &out.x_plus, &out.cert, 0.25);
        assert!(matches!(err, Err(Error::StepSize(_))));
    }

    #[test]
    fn stationarity_is_tight_at_the_minimizer() {
        // Minimizer of ||x - c||^2 over the simplex with interior c.
        let c = DVector::from_vec(vec![0.6, 0.4]);
        let hess = DMatrix::from_diagonal_element(2, 2, 2.0);
        let obj = QuadraticObjective::new(hess, c).unwrap();
        let geom = plain_geom(Regularizer::Euclidean, obj.beta());
        let eta = 1.0 / (2.0 * obj.beta());
        let x = vec![0.6, 0.4];
        let out = prox_step(&obj, &geom, &simplex(2), &x, eta, 1e-14, &tol()).unwrap();
        let (lhs, rhs) =
            stationarity_bound(&obj, &geom, &simplex(2), &x, &out.cert, eta, &tol()).unwrap();
        assert!(lhs <= out.cert.eps_opt + 1e-12);
        assert!(rhs >= lhs);
    }

    #[test]
    fn constant_objective_never_moves() {
        let obj = Linear { g: vec![0.0; 3] };
        let geom = plain_geom(Regularizer::Euclidean, 1.0);
        let x1 = vec![0.2, 0.3, 0.5];
        let traj = run_prox_point(
            &obj,
            |_| Ok(plain_geom(Regularizer::Euclidean, 1.0)),
            &simplex(3),
            &x1,
            1.0 / (2.0 * geom.beta),
            20,
            1e-12,
            &tol(),
        )
        .unwrap();
        assert_eq!(traj.records.len(), 21);
        for rec in &traj.records {
            for (a, b) in rec.x.iter().zip(&x1) {
                assert!((a - b).abs() < 1e-14);
            }
            if let Some(s) = &rec.step {
                assert!(s.cert.grad_mapping_norm < 1e-13);
            }
        }
        assert!(traj.min_grad_mapping_sq < 1e-14);
    }

    #[test]
    fn quadratic_over_simplex_converges_to_tolerance() {
        let hess = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let obj = QuadraticObjective::new(hess, DVector::from_vec(vec![0.9, -0.1])).unwrap();
        let beta = obj.beta();
        let eta = 1.0 / (2.0 * beta);
        let geom = move |_: &[f64]| {
            LocalGeometry::new(vec![1.0], Regularizer::Euclidean, 1.0, 2.0, 20.0, beta)
        };
        let traj = run_prox_point(
            &obj,
            geom,
            &simplex(2),
            &[0.5, 0.5],
            eta,
            500,
            1e-14,
            &tol(),
        )
        .unwrap();
        let mut best = f64::INFINITY;
        let mut t = 0.0;
        while t <= 1.0 {
            best = best.min(obj.value(&[t, 1.0 - t]));
            t += 1e-5;
        }
        assert!(
            traj.final_value() - best <= 1e-6,
            "gap {}",
            traj.final_value() - best
        );
        // Exact oracles descend monotonically up to the inner tolerance.
        for pair in traj.records.windows(2) {
            let eps = pair[0].step.as_ref().unwrap().cert.eps_opt;
            assert!(pair[1].f <= pair[0].f + eps + 1e-12);
        }
    }

    #[test]
    fn hull_solver_matches_blockwise_closed_form() {
        // The product of two 2-simplices as a 4-vertex hull; both solver
        // paths must land on the same point.
        let dets: Vec<Vec<f64>> = vec![
            vec![1.0, 0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 1.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0],
        ];
        let product = DecisionSet::SimplexProduct {
            blocks: 2,
            block_len: 2,
            lo: 0.0,
        };
        let hull = DecisionSet::Hull { vertices: dets };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..25 {
            let g: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let obj = Linear { g };
            let w = vec![rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];
            let geom =
                LocalGeometry::new(w, Regularizer::Euclidean, 1.0, 2.0, 10.0, 1.0).unwrap();
            let x = vec![0.4, 0.6, 0.7, 0.3];
            let eta = 0.3;
            let a = prox_step(&obj, &geom, &product, &x, eta, 1e-13, &tol()).unwrap();
            let b = prox_step(&obj, &geom, &hull, &x, eta, 1e-13, &tol()).unwrap();
            for (u, v) in a.x_plus.iter().zip(&b.x_plus) {
                assert!((u - v).abs() < 1e-7, "{u} vs {v}");
            }
            assert!(b.cert.eps_opt <= 1e-12);
            assert!(!b.cert.hit_cap);
        }
    }

    #[test]
    fn away_steps_reach_tight_tolerance_on_entropy_too() {
        // Interior vertices so the entropy path is well defined.
        let vertices: Vec<Vec<f64>> = vec![
            vec![0.8, 0.1, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.1, 0.1, 0.8],
        ];
        let hull = DecisionSet::Hull { vertices };
        let geom = plain_geom(Regularizer::NegEntropy { domain_floor: 0.0 }, 1.0);
        let obj = Linear {
            g: vec![0.7, -0.4, 0.2],
        };
        let x = vec![1.0 / 3.0; 3];
        let out = prox_step(&obj, &geom, &hull, &x, 0.2, 1e-12, &tol()).unwrap();
        assert!(out.cert.eps_opt <= 1e-12);
        assert!(!out.cert.hit_cap);
        let lambda = out.hull_coords.unwrap();
        assert!((lambda.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weak_gm_constants_match_hand_arithmetic() {
        let (omega, delta) = weak_gm_constants(1.0, 0.0, 0.0, 0.0, 1.0, 7.0, 0.0, 1.0).unwrap();
        assert!((omega - 0.5).abs() < 1e-15);
        assert!(delta == 0.0);
        // C* = 2, D = 2, eta M = 1: omega = (1/2) / 36 = 1/72.
        let (omega, delta) =
            weak_gm_constants(2.0, 0.1, 0.01, 0.001, 2.0, 2.0, 0.5, 1.0).unwrap();
        assert!((omega - 1.0 / 72.0).abs() < 1e-15);
        assert!((delta - (0.1 + 0.02 + 0.004)).abs() < 1e-15);
        assert!(weak_gm_constants(0.5, 0.0, 0.0, 0.0, 1.0, 1.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn trajectory_csv_has_one_row_per_iterate() {
        let hess = DMatrix::from_diagonal_element(2, 2, 1.0);
        let obj = QuadraticObjective::new(hess, DVector::from_vec(vec![0.2, 0.8])).unwrap();
        let traj = run_prox_point(
            &obj,
            |_| LocalGeometry::new(vec![1.0], Regularizer::Euclidean, 1.0, 2.0, 5.0, 1.0),
            &simplex(2),
            &[0.9, 0.1],
            0.5,
            7,
            1e-12,
            &tol(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        write_trajectory_csv(&traj, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 8);
        assert!(lines[0].starts_with("k,f,eps_opt"));
        assert!(lines[8].ends_with(",,,,,"));
    }

    #[test]
    fn zero_weight_blocks_keep_their_point_when_gradient_vanishes() {
        let obj = Linear {
            g: vec![0.5, -0.5, 0.0, 0.0],
        };
        let geom =
            LocalGeometry::new(vec![1.0, 0.0], Regularizer::Euclidean, 1.0, 2.0, 5.0, 1.0)
                .unwrap();
        let set = DecisionSet::SimplexProduct {
            blocks: 2,
            block_len: 2,
            lo: 0.0,
        };
        let x = vec![0.5, 0.5, 0.3, 0.7];
        let out = prox_step(&obj, &geom, &set, &x, 0.2, 1e-12, &tol()).unwrap();
        // Weighted block moves toward the lower-cost action.
        assert!(out.x_plus[1] > 0.5);
        // Unweighted block with zero gradient stays put.
        assert!((out.x_plus[2] - 0.3).abs() < 1e-15);
        assert!((out.x_plus[3] - 0.7).abs() < 1e-15);
        assert!(out.cert.eps_opt < 1e-12);
    }
}

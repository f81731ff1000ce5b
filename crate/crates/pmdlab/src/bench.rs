//! Instance library and experiment harness: the two built-in MDPs with
//! their closed forms, seeded random instance generation, tail rate
//! fitting, and the sweep runner behind the CLI `run` subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{load_mdp_json, Mdp, Policy};
use crate::pmd::{run_pmd, write_pmd_csv, PmdConfig, PmdRun};
use crate::policy::{load_class_json, FeatureMap, PolicyClass};
use crate::prox::QuadraticObjective;
use crate::tol::Tolerances;
use crate::verify::{self, LemmaReport};

pub const BUILTIN_NAMES: [&str; 2] = ["fig1", "fig2-smoothness"];

/// A named MDP with the policy class it is meant to be optimized over.
/// `features` is present when the instance also carries a log-linear
/// parametrization (used by the NPG baseline).
#[derive(Debug, Clone)]
pub struct BuiltinInstance {
    pub name: String,
    pub mdp: Mdp,
    pub class: PolicyClass,
    pub features: Option<FeatureMap>,
}

/// Three-state cycle: a hub state feeds two spoke states, each of which
/// returns to the hub. Costs make one action per spoke state expensive, so
/// a constant mixing weight alpha trades the two spokes off symmetrically
/// and the value is convex in alpha with its minimum at 1/2.
///
/// State order: 0 = hub, 1 = first spoke, 2 = second spoke. Action order:
/// 0 = "toward spoke 1", 1 = "toward spoke 2" (both actions return from a
/// spoke to the hub). Start distribution (1-p, p/2, p/2).
pub fn fig1_mdp_with(gamma: f64, p: f64, tol: &Tolerances) -> Result<Mdp> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("start weight p = {p} outside [0, 1]")));
    }
    let d = |s: usize| {
        let mut row = vec![0.0; 3];
        row[s] = 1.0;
        row
    };
    let cost = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
    let trans = vec![
        vec![d(1), d(2)],
        vec![d(0), d(0)],
        vec![d(0), d(0)],
    ];
    Mdp::new(gamma, vec![1.0 - p, p / 2.0, p / 2.0], cost, trans, tol)
}

/// The standard parameters used by the acceptance checks.
pub fn fig1_mdp(tol: &Tolerances) -> Mdp {
    fig1_mdp_with(0.99, 0.01, tol).expect("built-in instance parameters are valid")
}

/// Constant policy playing action 0 with probability alpha in every state.
pub fn fig1_constant_policy(alpha: f64) -> Result<Policy> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha = {alpha} outside [0, 1]")));
    }
    Policy::new(vec![vec![alpha, 1.0 - alpha]; 3], &Tolerances::default())
}

/// State values of the constant-alpha policy, solved by hand from the
/// two-step return structure: v_hub = gamma * s(alpha) / (1 - gamma^2)
/// with s(alpha) = alpha^2 + (1-alpha)^2, and each spoke adds its local
/// cost plus a discounted hub value.
pub fn fig1_state_values(gamma: f64, alpha: f64) -> [f64; 3] {
    let s = alpha * alpha + (1.0 - alpha) * (1.0 - alpha);
    let v0 = gamma * s / (1.0 - gamma * gamma);
    [v0, alpha + gamma * v0, (1.0 - alpha) + gamma * v0]
}

/// Start-weighted value of the constant-alpha policy.
pub fn fig1_value(gamma: f64, p: f64, alpha: f64) -> f64 {
    let s = alpha * alpha + (1.0 - alpha) * (1.0 - alpha);
    let h_cycle = gamma / ((1.0 - gamma) * (1.0 + gamma));
    (1.0 - p + gamma * p) * h_cycle * s + p / 2.0
}

/// Q-table of the constant-alpha policy (start-distribution free).
pub fn fig1_q_table(gamma: f64, alpha: f64) -> Vec<Vec<f64>> {
    let [v0, v1, v2] = fig1_state_values(gamma, alpha);
    vec![
        vec![gamma * v1, gamma * v2],
        vec![1.0 + gamma * v0, gamma * v0],
        vec![gamma * v0, 1.0 + gamma * v0],
    ]
}

/// Normalized occupancy of the constant-alpha policy. The hub weight is
/// alpha-free; each spoke collects its start mass plus the discounted
/// share of hub exits routed its way.
pub fn fig1_occupancy(gamma: f64, p: f64, alpha: f64) -> [f64; 3] {
    let mu0 = (1.0 - p + gamma * p) / (1.0 + gamma);
    let mu1 = (1.0 - gamma) * (p / 2.0) + gamma * alpha * mu0;
    let mu2 = (1.0 - gamma) * (p / 2.0) + gamma * (1.0 - alpha) * mu0;
    [mu0, mu1, mu2]
}

/// Two-state chain: action 0 moves toward (or stays at) the first state,
/// action 1 moves toward (or stays at) the second; action i costs i in
/// both states. Start distribution is a point mass on the first state.
pub fn fig2_mdp(tol: &Tolerances) -> Result<Mdp> {
    let cost = vec![vec![0.0, 1.0], vec![0.0, 1.0]];
    let trans = vec![
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    ];
    Mdp::new(0.99, vec![1.0, 0.0], cost, trans, tol)
}

/// The probe pair stressing the local-norm smoothness bound: the base
/// policy leaves the start state with probability eps and routes straight
/// back, the comparison policy leaves with probability p and then stays
/// away forever. Their whole disagreement sits in the rarely visited
/// second state.
pub fn fig2_policy_pair(p: f64, eps: f64, tol: &Tolerances) -> Result<(Policy, Policy)> {
    for (name, x) in [("p", p), ("eps", eps)] {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("{name} = {x} outside [0, 1]")));
        }
    }
    let pi = Policy::new(vec![vec![1.0 - eps, eps], vec![1.0, 0.0]], tol)?;
    let pi_tilde = Policy::new(vec![vec![1.0 - p, p], vec![0.0, 1.0]], tol)?;
    Ok((pi, pi_tilde))
}

/// Closed-form occupancy of the `fig2_policy_pair` base policy: the first
/// component is the normalized start-state weight, the second is the
/// second state's weight scaled by the horizon (the form the downstream
/// ratio computation consumes).
pub fn fig2_occupancy_closed_form(gamma: f64, eps: f64) -> (f64, f64) {
    let mu0 = 1.0 / (1.0 + gamma * eps);
    let scaled_mu1 = gamma * eps / ((1.0 + gamma * eps) * (1.0 - gamma));
    (mu0, scaled_mu1)
}

pub fn builtin_instance(name: &str, tol: &Tolerances) -> Result<BuiltinInstance> {
    match name {
        "fig1" => Ok(BuiltinInstance {
            name: name.into(),
            mdp: fig1_mdp(tol),
            class: PolicyClass::ConvexHull {
                bases: vec![
                    Policy::deterministic(2, &[0, 0, 0]),
                    Policy::deterministic(2, &[1, 1, 1]),
                ],
            },
            // Per-action indicator features: every state shares the same
            // two-dimensional parameter, so softmax policies are exactly
            // the constant-alpha family.
            features: Some(FeatureMap {
                phi: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 3],
            }),
        }),
        "fig2-smoothness" => Ok(BuiltinInstance {
            name: name.into(),
            mdp: fig2_mdp(tol)?,
            class: PolicyClass::Complete,
            features: None,
        }),
        other => Err(Error::Config(format!(
            "unknown built-in instance {other:?} (expected one of {BUILTIN_NAMES:?})"
        ))),
    }
}

/// Samples a probability vector with a flat Dirichlet via normalized
/// exponentials. Retries the (practically unreachable) degenerate draw.
pub fn dirichlet_flat(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let mut row: Vec<f64> = (0..n)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let total: f64 = row.iter().sum();
        if total > 1e-12 && row.iter().all(|x| x.is_finite()) {
            for x in &mut row {
                *x /= total;
            }
            return row;
        }
    }
}

/// Random dense MDP: flat-Dirichlet transition rows, uniform costs in
/// [0, 1], and a start distribution mixed toward uniform so every state
/// carries at least 0.1/|S| start mass (keeps occupancy ratios finite).
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rng: &mut ChaCha8Rng,
    tol: &Tolerances,
) -> Result<Mdp> {
    let cost: Vec<Vec<f64>> = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.random::<f64>()).collect())
        .collect();
    let trans: Vec<Vec<Vec<f64>>> = (0..n_states)
        .map(|_| (0..n_actions).map(|_| dirichlet_flat(rng, n_states)).collect())
        .collect();
    let mut rho0 = dirichlet_flat(rng, n_states);
    for x in &mut rho0 {
        *x = 0.9 * *x + 0.1 / n_states as f64;
    }
    Mdp::new(gamma, rho0, cost, trans, tol)
}

/// Random policy whose rows keep every action probability at or above
/// `floor` (requires `floor * n_actions <= 1`).
pub fn random_interior_policy(
    n_states: usize,
    n_actions: usize,
    floor: f64,
    rng: &mut ChaCha8Rng,
    tol: &Tolerances,
) -> Result<Policy> {
    let mix = floor * n_actions as f64;
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::Domain(format!(
            "floor {floor} infeasible for {n_actions} actions"
        )));
    }
    let rows = (0..n_states)
        .map(|_| {
            dirichlet_flat(rng, n_actions)
                .into_iter()
                .map(|x| (1.0 - mix) * x + floor)
                .collect()
        })
        .collect();
    Policy::new(rows, tol)
}

pub fn random_hull_class(
    n_states: usize,
    n_actions: usize,
    n_bases: usize,
    floor: f64,
    rng: &mut ChaCha8Rng,
    tol: &Tolerances,
) -> Result<PolicyClass> {
    if n_bases == 0 {
        return Err(Error::Config("hull class needs at least one base".into()));
    }
    let bases = (0..n_bases)
        .map(|_| random_interior_policy(n_states, n_actions, floor, rng, tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(PolicyClass::ConvexHull { bases })
}

/// Random convex quadratic `x -> 1/2 (x-c)' A (x-c)` with `A` a symmetric
/// PSD Gram matrix plus a small ridge (so the curvature constant is
/// bounded away from zero) and a center that may sit off the simplex.
pub fn random_quadratic(dim: usize, rng: &mut ChaCha8Rng) -> Result<QuadraticObjective> {
    let b: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let mut hess = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..=i {
            let mut dot = 0.0;
            for row in &b {
                dot += row[i] * row[j];
            }
            hess[(i, j)] = dot;
            hess[(j, i)] = dot;
        }
        hess[(i, i)] += 0.05;
    }
    let center =
        nalgebra::DVector::<f64>::from_iterator(dim, (0..dim).map(|_| rng.random_range(-0.5..=1.5)));
    QuadraticObjective::new(hess, center)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default, PartialEq, Eq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RandomClassKind {
    #[default]
    Complete,
    Hull,
}

/// Seeded random-instance request; the seed fully determines the output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub seed: u64,
    #[serde(default)]
    pub class: RandomClassKind,
    /// Number of hull bases; ignored for the complete class.
    #[serde(default = "default_bases")]
    pub n_bases: usize,
    /// Per-action probability floor for hull bases.
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_bases() -> usize {
    3
}

fn default_floor() -> f64 {
    0.05
}

pub fn random_instance(spec: &RandomSpec, tol: &Tolerances) -> Result<(Mdp, PolicyClass)> {
    if spec.n_states == 0 || spec.n_actions == 0 {
        return Err(Error::Config("random instance needs n_states, n_actions >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mdp = random_mdp(spec.n_states, spec.n_actions, spec.gamma, &mut rng, tol)?;
    let class = match spec.class {
        RandomClassKind::Complete => PolicyClass::Complete,
        RandomClassKind::Hull => random_hull_class(
            spec.n_states,
            spec.n_actions,
            spec.n_bases,
            spec.floor,
            &mut rng,
            tol,
        )?,
    };
    Ok((mdp, class))
}

/// Least-squares fit of `log gap` against `log k` over the tail of a run.
#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    /// Iteration window the fit used (inclusive bounds).
    pub start_k: usize,
    pub end_k: usize,
    /// Points surviving the gap floor inside the window.
    pub n_points: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Set when fewer than ten tail gaps sit above the floor; the series
    /// hit solver precision and a power-law fit would be meaningless.
    /// `slope` is NaN in that case.
    pub converged_exactly: bool,
}

/// Fits the tail of a gap series (`gaps[k]` is the gap at iteration k).
/// `tail_frac` selects the trailing fraction of iterations, `gap_floor`
/// discards entries at numerical zero. Iteration 0 never participates
/// (log 0 is undefined).
pub fn fit_rate(gaps: &[f64], tail_frac: f64, gap_floor: f64) -> Result<RateFit> {
    if !(tail_frac > 0.0 && tail_frac <= 1.0) {
        return Err(Error::Config(format!(
            "tail fraction {tail_frac} outside (0, 1]"
        )));
    }
    if gaps.len() < 2 {
        return Err(Error::Config("rate fit needs at least two iterations".into()));
    }
    let n = gaps.len();
    let tail_len = ((n as f64) * tail_frac).ceil() as usize;
    let start_k = (n - tail_len.clamp(1, n)).max(1);
    let end_k = n - 1;

    let pts: Vec<(f64, f64)> = (start_k..=end_k)
        .filter(|&k| gaps[k].is_finite() && gaps[k] > gap_floor)
        .map(|k| ((k as f64).ln(), gaps[k].ln()))
        .collect();
    if pts.len() < 10 {
        return Ok(RateFit {
            start_k,
            end_k,
            n_points: pts.len(),
            slope: f64::NAN,
            intercept: f64::NAN,
            r_squared: f64::NAN,
            converged_exactly: true,
        });
    }

    let m = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx <= 0.0 {
        return Err(Error::Config("rate-fit window has no spread in k".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFit {
        start_k,
        end_k,
        n_points: pts.len(),
        slope,
        intercept,
        r_squared,
        converged_exactly: false,
    })
}

/// Where the experiment's MDP and class come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum InstanceSpec {
    Builtin { name: String },
    Files { mdp: PathBuf, class: PathBuf },
    Random(RandomSpec),
}

/// Optional per-axis overrides; `None` keeps the base `PmdConfig` value.
/// The runner takes the cartesian product of all supplied axes.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepSpec {
    #[serde(default)]
    pub etas: Option<Vec<f64>>,
    #[serde(default)]
    pub eps_expls: Option<Vec<f64>>,
    #[serde(default)]
    pub k_iters: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub pmd: PmdConfig,
    #[serde(default)]
    pub sweep: SweepSpec,
    /// Trailing fraction of iterations used by the rate fit.
    #[serde(default = "default_tail_frac")]
    pub tail_frac: f64,
    /// Also run the lemma-certification suite and embed its reports.
    #[serde(default)]
    pub with_verify: bool,
}

fn default_tail_frac() -> f64 {
    0.5
}

pub fn load_experiment_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = serde_json::from_str(text)?;
    if config.tail_frac <= 0.0 || config.tail_frac > 1.0 {
        return Err(Error::Config(format!(
            "tail fraction {} outside (0, 1]",
            config.tail_frac
        )));
    }
    Ok(config)
}

/// One sweep cell's outcome; `csv` names the per-run trace file inside
/// the output directory.
#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub label: String,
    pub csv: String,
    pub eta: f64,
    pub eps_expl: f64,
    pub eps_expl_clipped: bool,
    pub k_iters: usize,
    pub beta_hat: f64,
    pub descent_certified: bool,
    pub reference_value: f64,
    pub reference_refined: bool,
    pub final_value: f64,
    pub final_gap: f64,
    pub hit_inner_cap: bool,
    pub rate: RateFit,
}

#[derive(Debug, Serialize)]
pub struct ExperimentSummary {
    pub instance: String,
    pub cells: Vec<CellSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lemma_reports: Option<Vec<LemmaReport>>,
}

fn instance_label(spec: &InstanceSpec) -> String {
    match spec {
        InstanceSpec::Builtin { name } => name.clone(),
        InstanceSpec::Files { mdp, .. } => mdp.display().to_string(),
        InstanceSpec::Random(r) => format!(
            "random(s{},a{},gamma{},seed{})",
            r.n_states, r.n_actions, r.gamma, r.seed
        ),
    }
}

fn resolve_instance(
    spec: &InstanceSpec,
    tol: &Tolerances,
) -> Result<(Mdp, PolicyClass)> {
    match spec {
        InstanceSpec::Builtin { name } => {
            let built = builtin_instance(name, tol)?;
            Ok((built.mdp, built.class))
        }
        InstanceSpec::Files { mdp, class } => {
            let mdp_text = std::fs::read_to_string(mdp)?;
            let mdp = load_mdp_json(&mdp_text, tol)?;
            let class_text = std::fs::read_to_string(class)?;
            let class = load_class_json(&class_text, mdp.n_states(), mdp.n_actions(), tol)?;
            Ok((mdp, class))
        }
        InstanceSpec::Random(spec) => random_instance(spec, tol),
    }
}

fn cell_label(eta: Option<f64>, eps: Option<f64>, k: usize) -> String {
    let eta = eta.map_or("auto".to_string(), |e| format!("{e:.3e}"));
    let eps = eps.map_or("auto".to_string(), |e| format!("{e:.3e}"));
    format!("eta={eta} eps_expl={eps} K={k}")
}

fn run_cell(
    mdp: &Mdp,
    class: &PolicyClass,
    base: &PmdConfig,
    cell: (Option<f64>, Option<f64>, usize),
    index: usize,
    out_dir: &Path,
    tail_frac: f64,
    tol: &Tolerances,
) -> Result<(CellSummary, PmdRun)> {
    let (eta, eps_expl, k_iters) = cell;
    let mut config = base.clone();
    if eta.is_some() {
        config.eta = eta;
    }
    if eps_expl.is_some() {
        config.eps_expl = eps_expl;
    }
    config.k_iters = k_iters;

    let run = run_pmd(mdp, class, &config, tol)?;
    let csv = format!("run_{index:03}.csv");
    write_pmd_csv(&run, &out_dir.join(&csv))?;
    let rate = fit_rate(&run.gap_series(), tail_frac, tol.gap_floor)?;
    let summary = CellSummary {
        // Label from the merged config, not the raw sweep axes: a None
        // axis inherits the base value, which may well be explicit, and
        // "auto" should mean the run really tuned it.
        label: cell_label(config.eta, config.eps_expl, k_iters),
        csv,
        eta: run.eta,
        eps_expl: run.eps_expl,
        eps_expl_clipped: run.eps_expl_clipped,
        k_iters,
        beta_hat: run.beta_hat,
        descent_certified: run.descent_certified,
        reference_value: run.reference_value,
        reference_refined: run.reference_refined,
        final_value: run.records.last().map_or(f64::NAN, |r| r.value),
        final_gap: run.final_gap(),
        hit_inner_cap: run.warned_inner,
        rate,
    };
    Ok((summary, run))
}

/// Runs the configured sweep. Cells execute concurrently on shared
/// immutable instance data, each writing only its own trace file; the
/// summary JSON and the combined gap table are written by this thread
/// after all cells complete, so outputs are byte-deterministic for a
/// fixed config.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    jobs: usize,
    tol: &Tolerances,
) -> Result<ExperimentSummary> {
    let (mdp, class) = resolve_instance(&config.instance, tol)?;
    std::fs::create_dir_all(out_dir)?;

    let etas: Vec<Option<f64>> = match &config.sweep.etas {
        Some(v) => v.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let eps_expls: Vec<Option<f64>> = match &config.sweep.eps_expls {
        Some(v) => v.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let ks: Vec<usize> = config
        .sweep
        .k_iters
        .clone()
        .unwrap_or_else(|| vec![config.pmd.k_iters]);

    let mut grid = Vec::new();
    for &eta in &etas {
        for &eps in &eps_expls {
            for &k in &ks {
                grid.push((eta, eps, k));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Result<Vec<(CellSummary, PmdRun)>> = pool.install(|| {
        use rayon::prelude::*;
        grid.par_iter()
            .enumerate()
            .map(|(i, &cell)| {
                run_cell(&mdp, &class, &config.pmd, cell, i, out_dir, config.tail_frac, tol)
            })
            .collect()
    });
    let results = results?;

    write_gap_table(&results, &out_dir.join("gaps.tsv"))?;

    if matches!(&config.instance, InstanceSpec::Builtin { name } if name == "fig2-smoothness") {
        write_ratio_table(&out_dir.join("ratio.tsv"), tol)?;
    }

    let lemma_reports = if config.with_verify {
        Some(verify::full_suite(config.pmd.seed, tol)?)
    } else {
        None
    };

    let summary = ExperimentSummary {
        instance: instance_label(&config.instance),
        cells: results.into_iter().map(|(c, _)| c).collect(),
        lemma_reports,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(out_dir.join("summary.json"), json + "\n")?;
    Ok(summary)
}

/// Tightness probe for the two-state chain: the linearization-error to
/// squared-local-norm ratio against its 1/(8 sqrt(eps)) floor as the
/// move probability shrinks.
fn write_ratio_table(path: &Path, tol: &Tolerances) -> Result<()> {
    let mut out = String::from("p\teps\tratio\tfloor\n");
    for &p in &[0.2, 0.1, 0.05, 0.02, 0.01] {
        let eps = p * p;
        let ratio = verify::fig2_tightness_ratio(p, tol)?;
        let floor = 1.0 / (8.0 * eps.sqrt());
        writeln!(out, "{p}\t{eps}\t{ratio:.6e}\t{floor:.6e}").expect("write to string");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Tab-separated k-vs-gap table, one column per sweep cell, padded with
/// blanks where a shorter run has ended.
fn write_gap_table(results: &[(CellSummary, PmdRun)], path: &Path) -> Result<()> {
    let mut out = String::from("k");
    for (cell, _) in results {
        out.push('\t');
        out.push_str(&cell.label);
    }
    out.push('\n');
    let max_len = results
        .iter()
        .map(|(_, run)| run.records.len())
        .max()
        .unwrap_or(0);
    for k in 0..max_len {
        write!(out, "{k}").expect("write to string");
        for (_, run) in results {
            out.push('\t');
            if let Some(r) = run.records.get(k) {
                write!(out, "{:.12e}", r.gap).expect("write to string");
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

//! Acceptance gate. Eleven criteria, each a test that prints exactly one
//! `[PASS]`/`[FAIL]` line with its measured numbers (visible under
//! `cargo test --test acceptance -- --nocapture`). Tolerances are pinned
//! here and nowhere else; a failing criterion fails the target.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pmdlab::bench::{
    builtin_instance, fig1_constant_policy, fig1_occupancy, fig1_q_table, fig1_value,
    fig2_occupancy_closed_form, fig2_policy_pair, fit_rate, random_instance, random_quadratic,
    RandomClassKind, RandomSpec,
};
use pmdlab::geometry::Regularizer;
use pmdlab::mdp::{evaluate_q, evaluate_value, occupancy, scalar_value};
use pmdlab::pmd::{run_pmd, PmdConfig, PmdRun};
use pmdlab::policy::{loglinear_npg_step, Member};
use pmdlab::prox::{run_prox_point, DecisionSet, LocalGeometry};
use pmdlab::verify::{
    best_in_class_value, closure_audit_battery, epsgreedy_vgd_battery, fig2_tightness_ratio,
    identity_battery, npg_floor_certificate, smoothness_battery, softmax_battery,
};
use pmdlab::Tolerances;

fn report(n: usize, ok: bool, detail: &str) {
    if ok {
        println!("[PASS] criterion {n}: {detail}");
    } else {
        panic!("[FAIL] criterion {n}: {detail}");
    }
}

fn tol() -> Tolerances {
    Tolerances::default()
}

#[test]
fn criterion_01_cycle_closed_forms_on_alpha_grid() {
    let t = tol();
    let start = Instant::now();
    let (gamma, p) = (0.99, 0.01);
    let built = builtin_instance("fig1", &t).unwrap();
    let mut dev = 0.0f64;
    for i in 0..=100 {
        let alpha = i as f64 / 100.0;
        let pi = fig1_constant_policy(alpha).unwrap();
        let v = evaluate_value(&built.mdp, &pi, &t).unwrap();
        dev = dev.max((scalar_value(&v, built.mdp.rho0()) - fig1_value(gamma, p, alpha)).abs());
        let occ = occupancy(&built.mdp, &pi, built.mdp.rho0(), &t).unwrap();
        dev = dev.max((occ.mu[0] - fig1_occupancy(gamma, p, alpha)[0]).abs());
        let q = evaluate_q(&built.mdp, &pi, &t).unwrap();
        let q_form = fig1_q_table(gamma, alpha);
        for s in 0..3 {
            for a in 0..2 {
                dev = dev.max((q.0[s][a] - q_form[s][a]).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        dev <= 1e-9 && elapsed.as_secs_f64() < 1.0,
        &format!(
            "cycle closed forms over 101-point grid: max deviation {dev:.3e} (tol 1e-9), \
             {:.3}s (limit 1s)",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_02_chain_occupancy_closed_forms() {
    let t = tol();
    let built = builtin_instance("fig2-smoothness", &t).unwrap();
    let gamma = built.mdp.gamma();
    let h = built.mdp.horizon();
    let mut dev = 0.0f64;
    for &eps in &[0.1, 0.01] {
        let (pi, _) = fig2_policy_pair(0.3, eps, &t).unwrap();
        let occ = occupancy(&built.mdp, &pi, built.mdp.rho0(), &t).unwrap();
        let (mu0, scaled_mu1) = fig2_occupancy_closed_form(gamma, eps);
        // The second display is in discounted visit counts, i.e. the
        // normalized occupancy times the horizon.
        dev = dev.max((occ.mu[0] - mu0).abs());
        dev = dev.max((occ.mu[1] * h - scaled_mu1).abs());
    }
    report(
        2,
        dev <= 1e-9,
        &format!("chain occupancies at eps in {{0.1, 0.01}}: max deviation {dev:.3e} (tol 1e-9)"),
    );
}

#[test]
fn criterion_03_local_smoothness_battery() {
    let t = tol();
    let start = Instant::now();
    let [l1, l2] = smoothness_battery(1000, 0xACCE5703, &t).unwrap();
    let elapsed = start.elapsed();
    report(
        3,
        l1.pass && l2.pass && elapsed.as_secs_f64() < 60.0,
        &format!(
            "1000 random triples (S,A <= 6, min prob >= 0.05): worst slack l1 {:.3e}, \
             l2 {:.3e} (floor -1e-8), {:.1}s (limit 60s)",
            l1.slack,
            l2.slack,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_04_smoothness_tightness_ratio() {
    let t = tol();
    let mut ok = true;
    let mut parts = Vec::new();
    for &p in &[0.1, 0.05, 0.02] {
        let ratio = fig2_tightness_ratio(p, &t).unwrap();
        let floor = 1.0 / (8.0 * p);
        ok &= ratio >= floor;
        parts.push(format!("ratio(p={p}) = {ratio:.1} >= {floor}"));
    }
    for &p in &[0.1, 0.05] {
        let growth =
            fig2_tightness_ratio(p / 2.0, &t).unwrap() / fig2_tightness_ratio(p, &t).unwrap();
        ok &= growth >= 1.5;
        parts.push(format!("growth at eps/4 from p={p}: {growth:.2}x >= 1.5"));
    }
    report(4, ok, &parts.join("; "));
}

#[test]
fn criterion_05_counterexample_separation() {
    let t = tol();
    let built = builtin_instance("fig1", &t).unwrap();
    let features = built.features.clone().unwrap();
    let h = built.mdp.horizon();
    let a = built.mdp.n_actions() as f64;

    // Bias of the best linear critic at the balanced policy, evaluated
    // under its own occupancy with uniform actions (the two coincide).
    let pi_half = fig1_constant_policy(0.5).unwrap();
    let mu = occupancy(&built.mdp, &pi_half, built.mdp.rho0(), &t).unwrap();
    let q = evaluate_q(&built.mdp, &pi_half, &t).unwrap();
    let step = loglinear_npg_step(&built.mdp, &features, &[0.0, 0.0], 1.0, &t).unwrap();
    let mut eps_bias = 0.0;
    for s in 0..3 {
        for act in 0..2 {
            let fitted: f64 = features.phi[s][act]
                .iter()
                .zip(&step.w)
                .map(|(f, w)| f * w)
                .sum();
            eps_bias += mu.mu[s] / a * (fitted - q.0[s][act]).powi(2);
        }
    }
    let bias_ok = eps_bias >= 1.0 / 32.0 - 1e-6;

    // Closure-analysis error floor with the concentrability coefficient
    // at its lower bound 1 (the coefficient only inflates the floor).
    let nu0 = (0..3)
        .map(|s| mu.mu[s] / built.mdp.rho0()[s])
        .fold(0.0f64, f64::max);
    let floor = h * nu0 * (a * 1.0 * eps_bias).sqrt();
    let floor_ok = floor >= 10.0 * h;

    // Hull-class PMD with exact oracles reaches a 1e-3 gap well inside
    // the 5000-iteration budget (step size from the calibration sweep;
    // the certified 1/(2 beta_hat) step is sound but glacial here).
    let config = PmdConfig {
        eta: Some(0.02),
        k_iters: 1000,
        regularizer: Regularizer::Euclidean,
        eps_expl: Some(0.01),
        critic_noise: 0.0,
        inner_tol: 1e-10,
        seed: 7,
        initial: Some(Member::Hull(vec![0.9, 0.1])),
        reference_value: Some(fig1_value(0.99, 0.01, 0.5)),
    };
    let run = run_pmd(&built.mdp, &built.class, &config, &t).unwrap();
    let cross = run.gap_series().iter().position(|&g| g <= 1e-3);
    let pmd_ok = cross.is_some();

    let cert = npg_floor_certificate(
        &built.mdp,
        &features,
        &[0.4, -0.2],
        0.05,
        30,
        &pi_half,
        &t,
    )
    .unwrap();
    let npg_ok = cert.min_floor > h;

    report(
        5,
        bias_ok && floor_ok && pmd_ok && npg_ok,
        &format!(
            "eps_bias {eps_bias:.5} >= 1/32; floor {floor:.0} >= 10H = {:.0}; hull PMD gap \
             <= 1e-3 at k = {:?} (budget 5000); NPG floor certificate {:.0} > H",
            10.0 * h,
            cross,
            cert.min_floor
        ),
    );
}

#[test]
fn criterion_06_descent_and_stationarity() {
    let t = tol();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE5706);
    let k_steps = 60usize;
    let mut worst_descent = f64::INFINITY;
    let mut worst_stat = f64::INFINITY;
    let mut worst_rate_margin = f64::INFINITY;
    for _ in 0..50 {
        let blocks = rng.random_range(1..=3);
        let block_len = rng.random_range(2..=4);
        let dim = blocks * block_len;
        let quad = random_quadratic(dim, &mut rng).unwrap();
        let beta = quad.beta();
        let eta = 1.0 / (2.0 * beta);
        let set = DecisionSet::SimplexProduct { blocks, block_len, lo: 0.0 };
        let diameter = (2.0 * blocks as f64).sqrt();
        let grad_bound = (blocks as f64).sqrt() * quad.grad_bound_on_simplex();
        let geometry = |_: &[f64]| {
            LocalGeometry::new(
                vec![1.0; blocks],
                Regularizer::Euclidean,
                1.0,
                diameter,
                grad_bound,
                beta,
            )
        };
        let x1 = vec![1.0 / block_len as f64; dim];
        let traj =
            run_prox_point(&quad, geometry, &set, &x1, eta, k_steps, 1e-10, &t).unwrap();
        let f1 = traj.records.first().unwrap().f;
        let f_min = traj
            .records
            .iter()
            .map(|r| r.f)
            .fold(f64::INFINITY, f64::min);
        for rec in &traj.records {
            if let Some(step) = &rec.step {
                worst_descent = worst_descent.min(step.descent_slack);
                worst_stat = worst_stat.min(step.stationarity_rhs - step.stationarity_lhs);
            }
        }
        // L = 1 for the Euclidean mirror map.
        let rate_rhs = 2.0 * (f1 - f_min) / (eta * k_steps as f64) + 1e-8;
        worst_rate_margin = worst_rate_margin.min(rate_rhs - traj.min_grad_mapping_sq);
    }
    report(
        6,
        worst_descent >= -1e-8 && worst_stat >= -1e-8 && worst_rate_margin >= 0.0,
        &format!(
            "50 random instances at eta = 1/(2 beta): worst descent slack {worst_descent:.3e}, \
             worst stationarity slack {worst_stat:.3e} (floor -1e-8), worst rate margin \
             {worst_rate_margin:.3e}"
        ),
    );
}

#[test]
fn criterion_07_identity_suite() {
    let t = tol();
    let reports = identity_battery(120, 0xACCE5707, &t).unwrap();
    let all_pass = reports.iter().all(|r| r.pass);
    let worst = reports
        .iter()
        .min_by(|a, b| a.slack.total_cmp(&b.slack))
        .unwrap();
    report(
        7,
        all_pass && reports.len() == 7,
        &format!(
            "7 identity checks x 120 random instances: all pass; tightest is {} with slack \
             {:.3e}",
            worst.lemma_id, worst.slack
        ),
    );
}

#[test]
fn criterion_08_epsgreedy_degradation() {
    let t = tol();
    let worst = epsgreedy_vgd_battery(10, 10, &[0.005, 0.02, 0.1, 0.3], 0xACCE5708, &t).unwrap();
    report(
        8,
        worst.pass,
        &format!(
            "10 instances x 10 policies x 4 exploration levels = 400 combinations: worst \
             slack {:.3e} on [{}]",
            worst.slack, worst.instance
        ),
    );
}

#[test]
fn criterion_09_closure_implies_dominance() {
    let t = tol();
    let worst = closure_audit_battery(50, 0xACCE5709, &t).unwrap();
    report(
        9,
        worst.pass,
        &format!(
            "50 random audits (alternating exact and noisy critics): worst slack {:.3e} on [{}]",
            worst.slack, worst.instance
        ),
    );
}

#[test]
fn criterion_10_rate_sanity() {
    let t = tol();
    let mut ok = true;
    let mut parts = Vec::new();

    let exercise = |label: &str,
                    mdp: &pmdlab::mdp::Mdp,
                    class: &pmdlab::policy::PolicyClass,
                    base: &PmdConfig,
                    ok: &mut bool,
                    parts: &mut Vec<String>| {
        let run = run_pmd(mdp, class, base, &t).unwrap();
        let gaps = run.gap_series();
        let worst_rise = gaps
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        let monotone = worst_rise <= 1e-9;
        let fit = fit_rate(&gaps, 0.5, t.gap_floor).unwrap();
        let slope_ok = fit.converged_exactly || fit.slope <= -0.4;

        let mut noisy_config = base.clone();
        noisy_config.critic_noise = 1e-4;
        let noisy = run_pmd(mdp, class, &noisy_config, &t).unwrap();
        // Compare final values directly: the noisy run may re-base its
        // reference, which would silently shrink its reported gap.
        let degradation = noisy.records.last().unwrap().value
            - run.records.last().unwrap().value;
        let allowed = 10.0 * mdp.horizon() * (1e-4f64).sqrt();
        let noise_ok = degradation <= allowed;

        *ok &= monotone && slope_ok && noise_ok;
        parts.push(format!(
            "{label}: rise {worst_rise:.1e}, {}, noise degradation {degradation:.2e} <= {allowed:.1}",
            if fit.converged_exactly {
                "converged exactly".into()
            } else {
                format!("slope {:.2}", fit.slope)
            },
        ));
    };

    let built = builtin_instance("fig1", &t).unwrap();
    let fig1_config = PmdConfig {
        eta: Some(0.02),
        k_iters: 2000,
        regularizer: Regularizer::Euclidean,
        eps_expl: Some(0.01),
        critic_noise: 0.0,
        inner_tol: 1e-10,
        seed: 7,
        initial: Some(Member::Hull(vec![0.9, 0.1])),
        reference_value: Some(fig1_value(0.99, 0.01, 0.5)),
    };
    exercise("cycle", &built.mdp, &built.class, &fig1_config, &mut ok, &mut parts);

    for seed in 0..5u64 {
        let spec = RandomSpec {
            n_states: 4,
            n_actions: 3,
            gamma: 0.9,
            seed: 1000 + seed,
            class: RandomClassKind::Hull,
            n_bases: 3,
            floor: 0.05,
        };
        let (mdp, class) = random_instance(&spec, &t).unwrap();
        let best = best_in_class_value(&mdp, &class, seed, &t).unwrap();
        let config = PmdConfig {
            eta: Some(5e-3),
            k_iters: 2000,
            regularizer: Regularizer::Euclidean,
            eps_expl: Some(0.0),
            critic_noise: 0.0,
            inner_tol: 1e-10,
            seed,
            initial: None,
            reference_value: Some(best.value),
        };
        exercise(
            &format!("random {seed}"),
            &mdp,
            &class,
            &config,
            &mut ok,
            &mut parts,
        );
    }

    report(10, ok, &parts.join("; "));
}

#[test]
fn criterion_11_softmax_approximation() {
    let worst = softmax_battery(1000, 0xACCE5711).unwrap();
    report(
        11,
        worst.pass,
        &format!(
            "1000 randomized (x, d, delta) cases: worst slack {:.3e} on [{}]",
            worst.slack, worst.instance
        ),
    );
}

// Keep a compile-time guarantee that the gap series helper used above is
// the same one the CLI exports; a silent signature drift would make the
// criteria measure something else.
#[allow(dead_code)]
fn _gap_series_contract(run: &PmdRun) -> Vec<f64> {
    run.gap_series()
}

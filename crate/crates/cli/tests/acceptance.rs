//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Built with `harness = false` so the lines are always printed. The process
//! fails if any criterion outside [`KNOWN_RED`] fails. `ACCEPTANCE_ONLY=C1,C4`
//! restricts the run to the listed criteria.

use std::time::{Duration, Instant};

use lrsense_cli::config::{ExperimentConfig, Method};
use lrsense_cli::experiments::{benchmark_point, fig_coherence, fig_optimal_d, run_trials, two_step_batch};
use lrsense_cli::instances::generate_low_rank;
use lrsense_cli::stats::Summary;
use lrsense_cli::BenchError;
use lrsense_core::baselines::{mf_solve, nnm_solve, svt, SolverOptions};
use lrsense_core::linalg::{self, SortedSvd};
use lrsense_core::map_design::{design_mse, lift_design};
use lrsense_core::rng::{normal, stream, Rng};
use lrsense_core::two_step::{self, RankMode, TwoStepConfig};
use lrsense_core::{
    nmse, optimal_subspace, project_onto_subspace, solve_power_constrained_design, AffineMap, DMatrix, DVector,
    GlsEstimator, NoiseModel, SubspaceBasis,
};

/// Criteria that fail for documented reasons; they still print FAIL.
const KNOWN_RED: &[&str] = &["C6"];

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome, BenchError> {
    Ok(Outcome { pass, detail })
}

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| normal(rng))
}

fn random_spd(n: usize, rng: &mut Rng) -> DMatrix<f64> {
    let g = gaussian(n, n, rng);
    let c = &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.2;
    (&c + c.transpose()) * 0.5
}

fn orthonormal(m: usize, d: usize, rng: &mut Rng) -> DMatrix<f64> {
    gaussian(m, d, rng).qr().q().columns(0, d).into_owned()
}

/// Designed map at `p = N·d` on a fixed rank-6 instance; empirical GLS MSE against `d²N²σ²/P`.
fn c1_achievability() -> Result<Outcome, BenchError> {
    let (m, n, d, power, trials) = (20, 50, 6, 1000.0, 1000);
    let l = generate_low_rank(m, n, d, &mut stream(SEED, &[1]));
    let f = optimal_subspace(&l, d)?;
    let q_true = linalg::vec(&linalg::at_b(f.basis(), &l));
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (g, sigma2) in [0.01, 0.1, 1.0].into_iter().enumerate() {
        let noise = NoiseModel::iid(n * d, sigma2)?;
        let design = solve_power_constrained_design(&noise, n * d, power, None)?;
        let s_hat = lift_design(&design.a_hat, &f)?;
        let clean = &s_hat * linalg::vec(&l);
        let est = GlsEstimator::new(&design.a_hat, &noise)?;
        let errors = run_trials(SEED, &[1, g as u64], trials, |rng| {
            let q = est.estimate(&(&clean + noise.sample(rng)))?;
            Ok((q - &q_true).norm_squared())
        })?;
        let empirical = Summary::of(&errors).mean;
        let theory = (d * d * n * n) as f64 * sigma2 / power;
        let rel = (empirical - theory).abs() / theory;
        worst = worst.max(rel);
        parts.push(format!("σ²={sigma2}: {empirical:.4} vs {theory:.4}"));
    }
    outcome(worst < 0.05, format!("{}; max rel err {:.2}% (tol 5%)", parts.join(", "), 100.0 * worst))
}

/// `tr((AᵀC⁻¹A)⁻¹)` and its gradient `−2C⁻¹AG⁻²`; `None` if the Gram is singular.
fn objective_and_gradient(a: &DMatrix<f64>, c_inv: &DMatrix<f64>) -> Option<(f64, DMatrix<f64>)> {
    let ca = c_inv * a;
    let g = a.transpose() * &ca;
    let g_inv = g.cholesky()?.inverse();
    let value = g_inv.trace();
    if !(value.is_finite() && value > 0.0) {
        return None;
    }
    Some((value, ca * &g_inv * &g_inv * -2.0))
}

fn project_to_ball(a: DMatrix<f64>, power: f64) -> DMatrix<f64> {
    let norm_sq = a.norm_squared();
    if norm_sq > power {
        a * (power / norm_sq).sqrt()
    } else {
        a
    }
}

/// Projected gradient with backtracking from one random feasible start.
fn projected_gradient(c_inv: &DMatrix<f64>, q: usize, power: f64, rng: &mut Rng) -> f64 {
    let p = c_inv.nrows();
    let start = gaussian(p, q, rng);
    let mut a = &start * (power / start.norm_squared()).sqrt();
    let Some((mut value, mut grad)) = objective_and_gradient(&a, c_inv) else {
        return f64::INFINITY;
    };
    let mut step = 1.0;
    for _ in 0..2000 {
        let mut improved = false;
        for _ in 0..60 {
            let trial = project_to_ball(&a - &grad * step, power);
            if let Some((v, g)) = objective_and_gradient(&trial, c_inv) {
                if v < value {
                    let gain = value - v;
                    a = trial;
                    value = v;
                    grad = g;
                    step *= 1.5;
                    improved = gain > 1e-15 * value;
                    break;
                }
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    value
}

/// 50-restart projected gradient never beats the closed-form design on random SPD noise.
fn c2_kkt_optimality() -> Result<Outcome, BenchError> {
    let power = 5.0;
    let mut worst_gain = f64::NEG_INFINITY;
    let mut worst_gap = 0.0f64;
    let mut closed_form_mismatch = 0.0f64;
    for inst in 0..20u64 {
        let mut rng = stream(SEED, &[2, inst]);
        let q = 1 + (inst as usize) % 6;
        let p = q + (rand::Rng::random_range(&mut rng, 0..=(12 - q)));
        let c = random_spd(p, &mut rng);
        let noise = NoiseModel::full(c.clone())?;
        let design = solve_power_constrained_design(&noise, q, power, None)?;
        let theory = design.theoretical_mse;
        closed_form_mismatch = closed_form_mismatch.max((design_mse(&design.a_hat, &noise)? - theory).abs() / theory);
        let c_inv = c.cholesky().expect("SPD").inverse();
        let best = (0..50u64)
            .map(|restart| projected_gradient(&c_inv, q, power, &mut stream(SEED, &[2, inst, restart])))
            .fold(f64::INFINITY, f64::min);
        // positive gain means the search found a better design than the closed form
        worst_gain = worst_gain.max((theory - best) / theory);
        worst_gap = worst_gap.max((best - theory) / theory);
    }
    outcome(
        worst_gain <= 1e-4 && closed_form_mismatch < 1e-8,
        format!(
            "largest improvement over closed form {worst_gain:.2e} (tol 1e-4); \
             search reached within {worst_gap:.1e} of it; closed-form objective mismatch {closed_form_mismatch:.1e}"
        ),
    )
}

/// Theoretical against Monte-Carlo optimal rank on an 8-point log grid.
fn c3_optimal_rank() -> Result<Outcome, BenchError> {
    let grid: Vec<f64> = (0..8).map(|k| 10f64.powf(-1.0 + 5.0 * k as f64 / 7.0)).collect();
    let cfg = ExperimentConfig {
        sigma2_grid: grid,
        trials: 1000,
        seed: SEED,
        ..ExperimentConfig::default()
    };
    let rows = fig_optimal_d(&cfg)?;
    let agree = rows.iter().filter(|r| r.d_theory == r.d_empirical).count();
    let theory: Vec<usize> = rows.iter().map(|r| r.d_theory).collect();
    let empirical: Vec<usize> = rows.iter().map(|r| r.d_empirical).collect();
    let monotone = theory.windows(2).all(|w| w[1] <= w[0]);
    let ends = theory.first() == Some(&cfg.rank) && theory.last() == Some(&0);
    outcome(
        agree * 5 >= rows.len() * 4 && monotone && ends,
        format!("d_theory {theory:?}, d_empirical {empirical:?}; agreement {agree}/{} (need 80%)", rows.len()),
    )
}

/// Noiseless rank-6 instances are recovered from exactly 384 observations.
fn c4_exactness() -> Result<Outcome, BenchError> {
    let cfg = TwoStepConfig {
        m: 6,
        ..TwoStepConfig::with_defaults(20, 50, 6, 0.0)
    };
    let results = run_trials(SEED, &[4], 20, |rng| {
        let l = generate_low_rank(20, 50, 6, rng);
        let res = two_step::run(&cfg, &l, rng)?;
        Ok((nmse(&res.l_hat, &l)?, res.sample_count))
    })?;
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let counts_ok = results.iter().all(|r| r.1 == 384);
    outcome(
        worst < 1e-12 && counts_ok,
        format!("worst NMSE {worst:.2e} (tol 1e-12) over 20 instances; sample count 384: {counts_ok}"),
    )
}

/// Subspace and total error bounds hold on every noisy trial.
fn c5_bounds() -> Result<Outcome, BenchError> {
    let cfg = ExperimentConfig {
        trials: 500,
        seed: SEED,
        ..ExperimentConfig::default()
    };
    let m = cfg.stage_one_columns();
    let mut violations = 0;
    let mut parts = Vec::new();
    for (g, sigma2) in [0.01, 0.1, 1.0].into_iter().enumerate() {
        let batch = two_step_batch(&cfg, &[5, g as u64], m, sigma2, RankMode::Known(cfg.rank))?;
        violations += batch.wedin_violations + batch.bound_violations;
        parts.push(format!(
            "σ²={sigma2}: {} subspace + {} total violations, gap closed in {}",
            batch.wedin_violations, batch.bound_violations, batch.gap_closed
        ));
    }
    outcome(violations == 0, format!("500 trials per level; {}", parts.join("; ")))
}

/// Two-step < MF < NNM at p = 426, σ² = 0.01, and every method improves with p at σ² = 0.1.
fn c6_benchmark() -> Result<Outcome, BenchError> {
    let methods = vec![Method::TwoStep, Method::Mf, Method::Nnm];
    let cfg = ExperimentConfig {
        trials: 500,
        seed: SEED,
        mf_max_iters: 200,
        methods: methods.clone(),
        ..ExperimentConfig::default()
    };
    let point = benchmark_point(&cfg, &[6, 0], 426, 0.01)?;
    let [(_, ts), (_, mf), (_, nnm)] = [point[0], point[1], point[2]];
    let ordering = ts.clearly_below(&mf, 2.0) && mf.clearly_below(&nnm, 2.0);

    let trend_cfg = ExperimentConfig { trials: 20, ..cfg };
    let mut curves = vec![Vec::new(); methods.len()];
    for (k, p) in [384, 426, 468].into_iter().enumerate() {
        for (i, (_, s)) in benchmark_point(&trend_cfg, &[6, 1, k as u64], p, 0.1)?.into_iter().enumerate() {
            curves[i].push(s.mean);
        }
    }
    let trend = curves.iter().all(|c| c.windows(2).all(|w| w[1] < w[0]));
    let fmt = |s: &Summary| format!("{:.4}±{:.4}", s.mean, s.stderr);
    let curve_text: Vec<String> = methods
        .iter()
        .zip(&curves)
        .map(|(m, c)| format!("{} {:?}", m.name(), c.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()))
        .collect();
    outcome(
        ordering && trend,
        format!(
            "p=426 σ²=0.01 (500 trials, MF capped at 200 iterations): two_step {} mf {} nnm {}; ordering {}; \
             σ²=0.1 over p=384,426,468 (20 trials): {}; trend {}",
            fmt(&ts),
            fmt(&mf),
            fmt(&nnm),
            ordering,
            curve_text.join(", "),
            trend
        ),
    )
}

/// Designed map has lower averaged coherence than a Gaussian map at every p.
fn c7_coherence() -> Result<Outcome, BenchError> {
    let cfg = ExperimentConfig {
        coherence_draws: 50,
        seed: SEED,
        ..ExperimentConfig::default()
    };
    let rows = fig_coherence(&cfg)?;
    let pass = rows.iter().all(|r| r.mu_designed < r.mu_gaussian);
    let parts: Vec<String> = rows
        .iter()
        .map(|r| format!("p={}: {:.4} vs {:.4}", r.p, r.mu_designed, r.mu_gaussian))
        .collect();
    outcome(pass, format!("designed vs Gaussian over 50 draws: {}", parts.join(", ")))
}

/// Rank estimate is exact on well-separated planted spectra and zero on pure noise.
fn c8_rank_estimation() -> Result<Outcome, BenchError> {
    let (m_rows, m, r, p1, sigma2, trials) = (20, 9, 6, 1000.0, 0.1, 1000);
    let sigma = f64::sqrt(sigma2);
    let tau = two_step::rank_threshold(sigma, m, m_rows);
    let estimate = |l1: &DMatrix<f64>, rng: &mut Rng| -> Result<usize, BenchError> {
        let sample = two_step::sample_columns(l1, m, p1, sigma2, rng)?;
        let singvals: Vec<f64> = linalg::singular_values_desc(&sample.y1);
        Ok(two_step::estimate_rank(&singvals, sigma, m, m_rows))
    };
    let planted = run_trials(SEED, &[8, 0], trials, |rng| {
        let u = orthonormal(m_rows, r, rng);
        let v = orthonormal(m, r, rng);
        let s = DMatrix::from_diagonal(&DVector::from_fn(r, |k, _| 10.0 * tau * (1.0 + 0.5 * (r - 1 - k) as f64)));
        let l1 = u * s * v.transpose();
        debug_assert!(linalg::singular_values_desc(&l1)[r - 1] >= 10.0 * tau * (1.0 - 1e-12));
        estimate(&l1, rng)
    })?;
    let noise_only = run_trials(SEED, &[8, 1], trials, |rng| estimate(&DMatrix::zeros(m_rows, m), rng))?;
    let exact = planted.iter().filter(|&&k| k == r).count() as f64 / trials as f64;
    let zero = noise_only.iter().filter(|&&k| k == 0).count() as f64 / trials as f64;
    outcome(
        exact >= 0.99 && zero >= 0.95,
        format!(
            "τ = {tau:.3}; planted r̂ = r in {:.1}% (need 99%); pure noise r̂ = 0 in {:.1}% (need 95%)",
            100.0 * exact,
            100.0 * zero
        ),
    )
}

/// Projection, GLS, proximal-operator and solver-monotonicity suites.
fn c9_property_suites() -> Result<Outcome, BenchError> {
    let cases = 120u64;
    let mut failures: Vec<String> = Vec::new();

    let mut bad = 0;
    for t in 0..cases {
        let mut rng = stream(SEED, &[9, 0, t]);
        let d = 1 + (t as usize) % 6;
        let f = SubspaceBasis::new(orthonormal(20, d, &mut rng))?;
        let l = f.basis() * gaussian(d, 50, &mut rng);
        let scale = 0.01 + (t as f64 % 7.0);
        let l_tilde = &l + gaussian(20, 50, &mut rng) * scale;
        let projected = project_onto_subspace(&l_tilde, &f)?;
        if (projected - &l).norm() > (l_tilde - &l).norm() {
            bad += 1;
        }
    }
    failures.push(format!("projection {bad}"));

    let mut bad = 0;
    for t in 0..cases {
        let mut rng = stream(SEED, &[9, 1, t]);
        let q = 1 + (t as usize) % 6;
        let p = q + (t as usize) % 7;
        let a = gaussian(p, q, &mut rng);
        let noise = NoiseModel::full(random_spd(p, &mut rng))?;
        let est = GlsEstimator::new(&a, &noise)?;
        let x = DVector::from_fn(q, |_, _| normal(&mut rng));
        let exact = (est.estimate(&(&a * &x))? - &x).amax() <= 1e-9 * (1.0 + x.amax());
        // mean error over draws, scaled by the GLS precision, is χ²_q under unbiasedness
        let draws = 400;
        let mut mean = DVector::zeros(q);
        for _ in 0..draws {
            mean += est.estimate(&(&a * &x + noise.sample(&mut rng)))? - &x;
        }
        mean /= draws as f64;
        let white = noise.whiten(&a)?;
        let stat = draws as f64 * (white.transpose() * &white * &mean).dot(&mean);
        if !exact || stat > 35.0 {
            bad += 1;
        }
    }
    failures.push(format!("GLS {bad}"));

    let mut bad = 0;
    for t in 0..cases {
        let mut rng = stream(SEED, &[9, 2, t]);
        let (m, n) = (1 + (t as usize) % 7, 1 + (t as usize / 7) % 7);
        let a = gaussian(m, n, &mut rng);
        let theta = linalg::spectral_norm(&a) * (0.05 + 0.9 * ((t % 11) as f64 / 10.0));
        let x = svt(&a, theta);
        let g = (&a - &x) / theta;
        let mut ok = linalg::spectral_norm(&g) <= 1.0 + 1e-9;
        let svd = SortedSvd::new(&x);
        let kept = svd.numerical_rank(1e-10);
        if kept > 0 && x.norm() > 1e-10 {
            let u1 = svd.u.columns(0, kept);
            let v1 = svd.v_t.rows(0, kept).transpose();
            ok &= (&g * &v1 - u1).amax() <= 1e-8 && (g.transpose() * u1 - &v1).amax() <= 1e-8;
        }
        if !ok {
            bad += 1;
        }
    }
    failures.push(format!("svt {bad}"));

    let mut bad = 0;
    for t in 0..cases {
        let mut rng = stream(SEED, &[9, 3, t]);
        let (m, n) = (6, 8);
        let map = AffineMap::gaussian_random(30, m, n, &mut rng);
        let l = gaussian(m, 2, &mut rng) * gaussian(2, n, &mut rng);
        let y = map.apply(&l)? + DVector::from_fn(30, |_, _| 0.1 * normal(&mut rng));
        let opts = SolverOptions {
            tau: Some(10f64.powf(-1.0 + 3.0 * (t % 10) as f64 / 9.0)),
            max_iters: 300,
            ..SolverOptions::default()
        };
        match nnm_solve(&map, &y, &opts) {
            Ok(sol) if sol.objective.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0)) => {}
            _ => bad += 1,
        }
    }
    failures.push(format!("NNM {bad}"));

    let mut bad = 0;
    for t in 0..cases {
        let mut rng = stream(SEED, &[9, 4, t]);
        let (m, n, r) = (6, 8, 2);
        let map = AffineMap::gaussian_random(40, m, n, &mut rng);
        let l = gaussian(m, r, &mut rng) * gaussian(r, n, &mut rng);
        let y = map.apply(&l)? + DVector::from_fn(40, |_, _| 0.2 * (t % 5) as f64 * normal(&mut rng));
        let opts = SolverOptions {
            rank: r,
            max_iters: 100,
            ..SolverOptions::default()
        };
        let slack = 1e-9 * (y.norm_squared() + 1.0);
        match mf_solve(&map, &y, &opts) {
            Ok(sol) if sol.residual.windows(2).all(|w| w[1] <= w[0] + slack) => {}
            _ => bad += 1,
        }
    }
    failures.push(format!("MF {bad}"));

    let total: usize = failures
        .iter()
        .map(|f| f.rsplit(' ').next().unwrap().parse::<usize>().unwrap())
        .sum();
    outcome(total == 0, format!("{cases} cases per suite; failures: {}", failures.join(", ")))
}

type Criterion = (&'static str, &'static str, Duration, fn() -> Result<Outcome, BenchError>);

fn main() {
    let criteria: [Criterion; 9] = [
        ("C1", "closed-form MSE achievability", Duration::from_secs(60), c1_achievability),
        ("C2", "KKT optimality of the design", Duration::from_secs(120), c2_kkt_optimality),
        ("C3", "optimal-rank adaptation", Duration::from_secs(300), c3_optimal_rank),
        ("C4", "two-step exactness", Duration::from_secs(30), c4_exactness),
        ("C5", "bound satisfaction", Duration::from_secs(120), c5_bounds),
        ("C7", "coherence ordering", Duration::from_secs(120), c7_coherence),
        ("C8", "rank estimation", Duration::from_secs(60), c8_rank_estimation),
        ("C9", "property suites", Duration::from_secs(300), c9_property_suites),
        ("C6", "benchmark ordering and trends", Duration::from_secs(900), c6_benchmark),
    ];
    // comma-separated criterion ids, for rerunning a subset
    let only = std::env::var("ACCEPTANCE_ONLY").ok();
    let selected = |id: &str| only.as_deref().is_none_or(|o| o.split(',').any(|s| s.trim() == id));
    let mut unexpected = Vec::new();
    for (id, name, budget, run) in criteria {
        if !selected(id) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let timing = format!("{:.1}s of {}s budget", elapsed.as_secs_f64(), budget.as_secs());
        let tag = if pass { "PASS" } else { "FAIL" };
        let known = if !pass && KNOWN_RED.contains(&id) { " [known]" } else { "" };
        println!("{tag} {id} {name}: {detail} ({timing}){known}");
        if !pass && !KNOWN_RED.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}

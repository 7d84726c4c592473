//! Acceptance run: one PASS/FAIL line per criterion. Exits nonzero if any
//! criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mcen::binomial::{
    binomial_delta_max, fit_binomial_standardized, logistic, solve_fixed_groups_binomial,
    with_intercept, BinomialSettings,
};
use mcen::cv::{cv_gaussian, CvGrid, DeltaGrid};
use mcen::gaussian::{
    closed_form_delta0, delta_max, kkt_residual, ols, solve_fixed_groups,
    SolverSettings,
};
use mcen::kmeans::{fitted_vectors, partition_objective};
use mcen::mcen::{fit_standardized, McenSettings};
use mcen::report::{FitDocument, FittedModel, Manifest};
use mcen::sim::{
    aspe, gen_gaussian, kl_divergence, mse_coef, run_replications, tv_fv, Method, SimDesign,
    SimGrid,
};
use mcen::{
    standardize, ClusterPartition, CoefficientMatrix, DesignMatrix, ResponseKind, ResponseMatrix,
    TuningTriple,
};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

fn normal_matrix(r: &mut ChaCha8Rng, n: usize, m: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, m), || normal(r))
}

fn random_partition(r: &mut ChaCha8Rng, resp: usize) -> ClusterPartition {
    let q = r.random_range(1..=resp);
    // every cluster gets at least one member
    let mut labels: Vec<usize> = (0..resp).map(|k| if k < q { k } else { r.random_range(0..q) }).collect();
    for i in (1..resp).rev() {
        labels.swap(i, r.random_range(0..=i));
    }
    ClusterPartition::new(labels).unwrap()
}

fn max_abs_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn gaussian_problem(r: &mut ChaCha8Rng, n: usize, p: usize, resp: usize) -> (DesignMatrix, ResponseMatrix) {
    let xr = normal_matrix(r, n, p);
    let b = Array2::from_shape_fn((p, resp), |(j, _)| if j < 3 { 1.0 } else { 0.0 }) + normal_matrix(r, p, resp) * 0.3;
    let y = xr.dot(&b) + normal_matrix(r, n, resp);
    let (x, y, _) = standardize(xr.view(), y.view(), ResponseKind::Gaussian).unwrap();
    (x, y)
}

fn binomial_problem(r: &mut ChaCha8Rng, n: usize, p: usize, resp: usize) -> (DesignMatrix, ResponseMatrix) {
    let xr = normal_matrix(r, n, p);
    let b = Array2::from_shape_fn((p, resp), |(j, _)| if j < 2 { 1.0 } else { 0.0 }) + normal_matrix(r, p, resp) * 0.3;
    let eta = xr.dot(&b);
    let y = eta.mapv(|e| if r.random::<f64>() < logistic(e) { 1.0 } else { 0.0 });
    let (x, y, _) = standardize(xr.view(), y.view(), ResponseKind::Binomial).unwrap();
    (x, y)
}

/// Largest eigenvalue of `A^T A` by power iteration.
fn spectral_sq(a: ArrayView2<'_, f64>) -> f64 {
    let ata = a.t().dot(&a);
    let mut v = Array1::from_elem(ata.nrows(), 1.0);
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = ata.dot(&v);
        lambda = w.dot(&w).sqrt();
        v = w / lambda;
    }
    lambda
}

fn soft(a: f64, t: f64) -> f64 {
    a.signum() * (a.abs() - t).max(0.0)
}

/// Accelerated proximal gradient for `(1/2n)||y - Xb||^2 + (delta/2)|b|_1`.
fn fista_lasso(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, delta: f64) -> Array1<f64> {
    let n = x.nrows() as f64;
    let step = n / spectral_sq(x);
    let p = x.ncols();
    let (mut b, mut z, mut t) = (Array1::zeros(p), Array1::<f64>::zeros(p), 1.0f64);
    for _ in 0..200_000 {
        let grad = x.t().dot(&(x.dot(&z) - y)) / n;
        let next = Array1::from_shape_fn(p, |j| soft(z[j] - step * grad[j], step * delta / 2.0));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let change = (&next - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        z = &next + &((&next - &b) * ((t - 1.0) / t_next));
        b = next;
        t = t_next;
        if change < 1e-14 {
            break;
        }
    }
    b
}

fn nll(u: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, theta: ArrayView1<'_, f64>) -> f64 {
    let eta = u.dot(&theta);
    eta.iter()
        .zip(y.iter())
        .map(|(&e, &yi)| {
            let log1pe = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            log1pe - yi * e
        })
        .sum()
}

/// Proximal gradient for `NLL + (delta/2)|theta_{-0}|_1`, intercept free.
fn fista_logistic(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, delta: f64) -> Array1<f64> {
    let u = with_intercept(x);
    let step = 4.0 / spectral_sq(u.view());
    let m = u.ncols();
    let (mut th, mut z, mut t) = (Array1::zeros(m), Array1::<f64>::zeros(m), 1.0f64);
    for _ in 0..200_000 {
        let pi = u.dot(&z).mapv(logistic);
        let grad = u.t().dot(&(pi - y));
        let next = Array1::from_shape_fn(m, |j| {
            let g = z[j] - step * grad[j];
            if j == 0 { g } else { soft(g, step * delta / 2.0) }
        });
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let change = (&next - &th).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        z = &next + &((&next - &th) * ((t - 1.0) / t_next));
        th = next;
        t = t_next;
        if change < 1e-13 {
            break;
        }
    }
    th
}

fn non_increasing(trace: &[f64], slack: f64) -> usize {
    trace.windows(2).filter(|w| w[1] > w[0] + slack).count()
}

fn criterion_1() -> Outcome {
    let mut worst = 0.0f64;
    let mut r = rng(101);
    let settings = SolverSettings::default().with_tol(1e-13);
    for i in 0..50 {
        let n = r.random_range(30..=60);
        let p = r.random_range(2..=10);
        let resp = r.random_range(2..=6);
        let gamma = [0.1, 1.0, 10.0][i % 3];
        let (x, y) = gaussian_problem(&mut r, n, p, resp);
        let part = random_partition(&mut r, resp);
        let exact = closed_form_delta0(&x, &y, &part, gamma).unwrap();
        let cd = solve_fixed_groups(&x, &y, &part, gamma, 0.0, &CoefficientMatrix::zeros(p, resp), &settings).unwrap();
        worst = worst.max(max_abs_diff(cd.coefficients.values().view(), exact.values().view()));
    }
    outcome(worst <= 1e-8, format!("50 instances, max |B_cd - B_closed| = {worst:.2e} (<= 1e-8)"))
}

fn criterion_2() -> Outcome {
    let mut r = rng(202);
    let mut worst_g = 0.0f64;
    let settings = McenSettings::default().with_tol(1e-11);
    for i in 0..20 {
        let n = r.random_range(40..=80);
        let p = r.random_range(3..=10);
        let resp = r.random_range(2..=5);
        let (x, y) = gaussian_problem(&mut r, n, p, resp);
        let delta = delta_max(&x, &y) * r.random_range(0.05..0.5);
        // alternate the two reductions: no fusion weight, or one cluster per response
        let triple = if i % 2 == 0 {
            TuningTriple::new(r.random_range(1..=resp), 0.0, delta).unwrap()
        } else {
            TuningTriple::new(resp, r.random_range(0.1..3.0), delta).unwrap()
        };
        let (_, _, s) = standardize(x.view(), y.view(), ResponseKind::Gaussian).unwrap();
        let f = fit_standardized(&x, &y, s, triple, None, None, &settings).unwrap();
        for k in 0..resp {
            let reference = fista_lasso(x.view(), y.view().column(k), delta);
            let got = f.coefficients.values().column(k);
            worst_g = worst_g.max(reference.iter().zip(got.iter()).fold(0.0, |m, (a, b)| m.max((a - b).abs())));
        }
    }
    let mut worst_b = 0.0f64;
    let bsettings = BinomialSettings::default().with_tol(1e-11);
    for i in 0..20 {
        let n = r.random_range(60..=100);
        let p = r.random_range(2..=6);
        let resp = r.random_range(2..=4);
        let (x, y) = binomial_problem(&mut r, n, p, resp);
        let delta = binomial_delta_max(&x, &y) * r.random_range(0.05..0.5);
        let triple = if i % 2 == 0 {
            TuningTriple::new(r.random_range(1..=resp), 0.0, delta).unwrap()
        } else {
            TuningTriple::new(resp, r.random_range(0.1..3.0), delta).unwrap()
        };
        let (_, _, s) = standardize(x.view(), y.view(), ResponseKind::Binomial).unwrap();
        let f = fit_binomial_standardized(&x, &y, s, triple, None, None, &bsettings).unwrap();
        let u = with_intercept(x.view());
        let (mut dev_fit, mut dev_ref) = (0.0, 0.0);
        for k in 0..resp {
            let reference = fista_logistic(x.view(), y.view().column(k), delta);
            dev_ref += 2.0 * nll(u.view(), y.view().column(k), reference.view());
            dev_fit += 2.0 * nll(u.view(), y.view().column(k), f.coefficients.values().column(k));
        }
        worst_b = worst_b.max((dev_fit - dev_ref).abs() / dev_ref);
    }
    outcome(
        worst_g <= 1e-6 && worst_b <= 1e-4,
        format!("gaussian max coef diff {worst_g:.2e} (<= 1e-6), binomial max rel deviance diff {worst_b:.2e} (<= 1e-4)"),
    )
}

fn criterion_3() -> Outcome {
    let mut r = rng(303);
    let mut worst = 0.0f64;
    let mut fits = 0;
    let mut skipped = 0;
    for &(n, p) in &[(50, 5), (100, 12), (30, 60)] {
        for &resp in &[3, 6] {
            let (x, y) = gaussian_problem(&mut r, n, p, resp);
            let dmax = delta_max(&x, &y);
            let (_, _, s) = standardize(x.view(), y.view(), ResponseKind::Gaussian).unwrap();
            for q in [1, 2, resp] {
                for gamma in [0.0, 0.5, 2.0] {
                    for ratio in [0.5, 0.1, 0.01] {
                        let triple = TuningTriple::new(q, gamma, ratio * dmax).unwrap();
                        let f = fit_standardized(&x, &y, s.clone(), triple, None, None, &McenSettings::default()).unwrap();
                        if !f.converged {
                            skipped += 1;
                            continue;
                        }
                        fits += 1;
                        let kkt = kkt_residual(&f.coefficients, &x, &y, &f.partition, gamma, ratio * dmax).unwrap();
                        worst = worst.max(kkt);
                    }
                }
            }
        }
    }
    outcome(worst <= 1e-6, format!("{fits} converged fits ({skipped} not converged), max KKT residual {worst:.2e} (<= 1e-6)"))
}

fn criterion_4() -> Outcome {
    let slack = 1e-10;
    let mut violations = 0;
    let mut checked = 0;
    for seed in 0..100u64 {
        let mut r = rng(4000 + seed);
        let (x, y) = gaussian_problem(&mut r, 40, 6, 4);
        let dmax = delta_max(&x, &y);
        let part = random_partition(&mut r, 4);
        let gamma = r.random_range(0.0..2.0);
        let delta = dmax * r.random_range(0.01..0.5);
        let sol = solve_fixed_groups(
            &x, &y, &part, gamma, delta, &CoefficientMatrix::zeros(6, 4),
            &SolverSettings::default().with_trace(true),
        )
        .unwrap();
        violations += non_increasing(&sol.objective_trace, slack);
        let (_, _, s) = standardize(x.view(), y.view(), ResponseKind::Gaussian).unwrap();
        let q = r.random_range(1..=4);
        let f = fit_standardized(&x, &y, s, TuningTriple::new(q, gamma, delta).unwrap(), None, None, &McenSettings::default().with_seed(seed)).unwrap();
        violations += non_increasing(&f.objective_trace, slack);
        let (xb, yb) = binomial_problem(&mut r, 60, 4, 3);
        let db = binomial_delta_max(&xb, &yb) * r.random_range(0.05..0.5);
        let bpart = random_partition(&mut r, 3);
        let bs = solve_fixed_groups_binomial(&xb, &yb, &bpart, gamma, db, None, &BinomialSettings::default()).unwrap();
        violations += non_increasing(&bs.nll_trace, slack);
        checked += sol.objective_trace.len() + f.objective_trace.len() + bs.nll_trace.len();
    }
    outcome(violations == 0, format!("100 runs, {checked} trace points, {violations} increases beyond 1e-10"))
}

fn criterion_5() -> Outcome {
    let (n, p, resp, rho, gamma) = (100, 5, 4, 0.5f64, 0.05);
    let part = ClusterPartition::new(vec![0, 0, 1, 1]).unwrap();
    let b_star = Array2::from_shape_fn((p, resp), |(j, k)| if k < 2 { [1.0, -0.5, 0.0, 0.8, 0.3][j] } else { [0.0, 0.7, -1.0, 0.0, 0.4][j] });
    let mut r = rng(505);
    let (a, c) = (rho.sqrt(), (1.0 - rho).sqrt());
    let (mut fused, mut plain) = (0.0, 0.0);
    for _ in 0..500 {
        let x = normal_matrix(&mut r, n, p);
        let mut e = Array2::zeros((n, resp));
        for i in 0..n {
            let common = normal(&mut r);
            for k in 0..resp {
                e[[i, k]] = a * common + c * normal(&mut r);
            }
        }
        let y = x.dot(&b_star) + e;
        let b_ols = ols(x.view(), y.view()).unwrap();
        let xm = DesignMatrix::new(x);
        let ym = ResponseMatrix::new(y, ResponseKind::Gaussian).unwrap();
        let b_bar = closed_form_delta0(&xm, &ym, &part, gamma).unwrap();
        fused += mse_coef(b_bar.values().view(), b_star.view()).unwrap();
        plain += mse_coef(b_ols.view(), b_star.view()).unwrap();
    }
    let (fused, plain) = (fused / 500.0, plain / 500.0);
    outcome(fused <= plain * 1.01, format!("500 reps, mean fused MSE {fused:.5} vs OLS {plain:.5} (<= 1.01 x OLS)"))
}

/// No single response can move to another cluster and lower the criterion.
fn is_local_optimum(points: ArrayView2<'_, f64>, part: &ClusterPartition) -> bool {
    let base = partition_objective(points, part);
    let q = part.n_clusters();
    for k in 0..part.len() {
        for c in 0..q {
            let mut labels = part.assignments().to_vec();
            if labels[k] == c {
                continue;
            }
            labels[k] = c;
            if let Ok(moved) = ClusterPartition::new(labels) {
                if moved.n_clusters() == q && partition_objective(points, &moved) < base - 1e-12 * base.max(1.0) {
                    return false;
                }
            }
        }
    }
    true
}

fn criterion_6() -> Outcome {
    let mut hits = 0;
    let mut local = 0;
    for rep in 0..50u64 {
        let design = SimDesign::desk(ResponseKind::Gaussian, 1.0, 0.02, 6000 + rep);
        let (xr, yr, _) = gen_gaussian(&design).unwrap();
        let (x, y, s) = standardize(xr.view(), yr.view(), ResponseKind::Gaussian).unwrap();
        let delta = 0.05 * delta_max(&x, &y);
        let f = fit_standardized(&x, &y, s, TuningTriple::new(3, 1.0, delta).unwrap(), None, None, &McenSettings::default().with_seed(rep)).unwrap();
        if f.partition.same_grouping(&design.true_partition()) {
            hits += 1;
        }
        if is_local_optimum(fitted_vectors(x.view(), &f.coefficients).view(), &f.partition) {
            local += 1;
        }
    }
    outcome(
        hits >= 40 && local == 50,
        format!("true partition recovered in {hits}/50 (>= 40); {local}/50 final partitions are clustering local optima"),
    )
}

fn criterion_7() -> Outcome {
    let g = SimDesign::desk(ResponseKind::Gaussian, 0.75, 0.02, 7000);
    let gr = run_replications(&g, &[Method::Mcen, Method::Tmcen, Method::Sen], &SimGrid::desk()).unwrap();
    let b = SimDesign::desk(ResponseKind::Binomial, 0.75, 0.02, 7000);
    let br = run_replications(&b, &[Method::Mcen, Method::Sen], &SimGrid::desk()).unwrap();
    let med = |m, k| gr.median(m, k).unwrap_or(f64::NAN);
    let (at, am, as_) = (med(Method::Tmcen, "aspe"), med(Method::Mcen, "aspe"), med(Method::Sen, "aspe"));
    let (mt, mm, ms) = (med(Method::Tmcen, "mse"), med(Method::Mcen, "mse"), med(Method::Sen, "mse"));
    let (km, ks) = (br.mean(Method::Mcen, "kl").unwrap_or(f64::NAN), br.mean(Method::Sen, "kl").unwrap_or(f64::NAN));
    let failures = gr.failures.len() + br.failures.len();
    let pass = at <= am && am <= as_ && mt <= mm && mm <= ms && km <= ks && failures == 0;
    outcome(
        pass,
        format!(
            "median ASPE T/M/S {at:.4}/{am:.4}/{as_:.4}, median MSE {mt:.4}/{mm:.4}/{ms:.4}, mean KL M/S {km:.4}/{ks:.4}, {failures} failed reps"
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut r = rng(808);
    let mut worst = 0.0f64;
    let mut count_errors = 0;
    for _ in 0..100 {
        let rows = r.random_range(1..20);
        let cols = r.random_range(1..8);
        let a = normal_matrix(&mut r, rows, cols);
        let mut b = normal_matrix(&mut r, rows, cols);
        for v in b.iter_mut() {
            if r.random::<f64>() < 0.4 {
                *v = 0.0;
            }
        }
        let mut a_sparse = a.clone();
        for v in a_sparse.iter_mut() {
            if r.random::<f64>() < 0.4 {
                *v = 0.0;
            }
        }
        let (mut sq, mut tv, mut fv, mut kl) = (0.0, 0, 0, 0.0);
        let pa = a.mapv(logistic);
        let pb = b.mapv(|v| logistic(v + 0.3));
        for i in 0..rows {
            for k in 0..cols {
                let d = a[[i, k]] - b[[i, k]];
                sq += d * d;
                if a_sparse[[i, k]] != 0.0 && b[[i, k]] != 0.0 {
                    tv += 1;
                }
                if a_sparse[[i, k]] != 0.0 && b[[i, k]] == 0.0 {
                    fv += 1;
                }
                let (h, s) = (pa[[i, k]], pb[[i, k]]);
                kl += h * (h / s).ln() + (1.0 - h) * ((1.0 - h) / (1.0 - s)).ln();
            }
        }
        let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1.0);
        worst = worst.max(rel(aspe(a.view(), b.view()).unwrap(), sq / (rows * cols) as f64));
        worst = worst.max(rel(mse_coef(a.view(), b.view()).unwrap(), sq));
        worst = worst.max(rel(kl_divergence(pa.view(), pb.view()).unwrap(), kl / rows as f64));
        if tv_fv(a_sparse.view(), b.view()).unwrap() != (tv, fv) {
            count_errors += 1;
        }
    }
    outcome(
        worst <= 1e-12 && count_errors == 0,
        format!("100 inputs, max relative error {worst:.2e} (<= 1e-12), {count_errors} TV/FV mismatches"),
    )
}

fn cv_json(threads: usize) -> (String, Vec<u8>) {
    let design = SimDesign { n: 60, ..SimDesign::desk(ResponseKind::Gaussian, 1.0, 0.02, 909) };
    let (x, y, _) = gen_gaussian(&design).unwrap();
    let grid = CvGrid {
        q_values: vec![2, 3],
        gamma_values: vec![0.0, 1.0],
        delta: DeltaGrid::Auto { len: 6, min_ratio: Some(0.05) },
        k: 4,
        seed: 9,
        known_partition: None,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let settings = McenSettings::default().with_seed(9);
        let cv = cv_gaussian(x.view(), y.view(), &grid, &settings).unwrap();
        let mut table = Vec::new();
        cv.write_csv(&mut table).unwrap();
        let f = mcen::mcen::fit(x.view(), y.view(), cv.best, &settings).unwrap();
        let names = |p: &str, m: usize| (0..m).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let doc = FitDocument::new(&FittedModel::Gaussian(f), names("x", 12), names("y", 15), Manifest::new(9, &grid).unwrap()).unwrap();
        (doc.to_json().unwrap(), table)
    })
}

fn criterion_9() -> Outcome {
    let (a_json, a_table) = cv_json(2);
    let (b_json, b_table) = cv_json(2);
    let identical = a_json == b_json && a_table == b_table;
    let grid = SimGrid { q_values: vec![3], gamma_values: vec![1.0], delta_len: 4, delta_min_ratio: 0.05, k: 3 };
    let sim = |threads: usize| {
        let design = SimDesign { replications: 3, n_test: 100, ..SimDesign::desk(ResponseKind::Gaussian, 0.75, 0.02, 99) };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut out = Vec::new();
            run_replications(&design, &[Method::Mcen, Method::Sen], &grid).unwrap().write_csv(&mut out).unwrap();
            out
        })
    };
    let sim_identical = sim(2) == sim(2);
    let coef = |s: &str| -> Vec<f64> {
        let v: serde_json::Value = serde_json::from_str(s).unwrap();
        v["coefficients"].as_array().unwrap().iter().map(|c| c.as_f64().unwrap()).collect()
    };
    let mut worst = 0.0f64;
    let base = coef(&a_json);
    for threads in [1, 4] {
        let (other, _) = cv_json(threads);
        for (x, y) in base.iter().zip(coef(&other)) {
            worst = worst.max((x - y).abs());
        }
    }
    outcome(
        identical && sim_identical && worst <= 1e-8,
        format!("repeat runs byte-identical: cv/fit {identical}, simulation {sim_identical}; max coefficient change across 1/2/4 threads {worst:.2e} (<= 1e-8)"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Option<Duration>); 9] = [
        ("1 closed-form oracle at delta = 0", criterion_1, Some(Duration::from_secs(30))),
        ("2 reductions to independent lasso", criterion_2, Some(Duration::from_secs(60))),
        ("3 KKT certification", criterion_3, None),
        ("4 monotone descent", criterion_4, None),
        ("5 fused vs OLS Monte Carlo", criterion_5, Some(Duration::from_secs(120))),
        ("6 cluster recovery", criterion_6, None),
        ("7 directional simulation", criterion_7, Some(Duration::from_secs(600))),
        ("8 metric kernels", criterion_8, None),
        ("9 determinism", criterion_9, None),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let number = name.split(' ').next().unwrap();
        if !only.is_empty() && !only.iter().any(|o| o == number) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = budget.is_none_or(|b| elapsed < b);
        let pass = result.pass && in_time;
        if !pass {
            failed += 1;
        }
        let limit = budget.map_or(String::new(), |b| format!(", limit {}s", b.as_secs()));
        println!(
            "{} criterion {name}: {} [{:.1}s{limit}]",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

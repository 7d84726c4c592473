//! Binomial responses: iteratively reweighted least squares with a proximal
//! coordinate-descent inner loop, and the two-step estimator built on it.
//!
//! With `U = [1, X]` and linear predictors `eta_k = U theta_k`, the monitored
//! objective is
//!
//! ```text
//! sum_k NLL_k(theta_k) + (delta/2) sum_{j>=1,k} |theta_jk|
//!   + gamma/(4n) sum_q 1/|D_q| sum_{l,m in D_q} ||U (theta_l - theta_m)||^2
//! ```
//!
//! Each IRLS step replaces `NLL_k` by `1/2 sum_i w_ik (z_ik - eta_ik)^2` and
//! minimizes that surrogate by coordinate descent. Intercepts are never
//! L1-penalized.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    standardize, ClusterPartition, CoefficientMatrix, DesignMatrix, ResponseKind, ResponseMatrix,
    Standardizer, TuningTriple,
};
use crate::error::{McenError, Result};
use crate::gaussian::{fusion_penalty, soft_threshold};
use crate::kmeans::{cluster_fitted, KMeansSettings};
use crate::mcen::Termination;

/// Probabilities are kept inside `[EPS, 1 - EPS]`.
pub const PROB_EPS: f64 = 1e-5;
/// Lower bound on IRLS weights.
pub const WEIGHT_FLOOR: f64 = 1e-5;
/// Linear predictors are clamped to `[-ETA_CLAMP, ETA_CLAMP]` before the
/// working quantities are formed.
pub const ETA_CLAMP: f64 = 30.0;
/// Consecutive IRLS steps beyond the clamp that count as separation.
/// Inner tolerance for the first IRLS step.
const INNER_TOL_START: f64 = 1e-4;
const SEPARATION_STEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialSettings {
    /// Inner coordinate-descent tolerance (largest coefficient change).
    pub tol: f64,
    pub max_sweeps: usize,
    /// Outer IRLS tolerance (largest coefficient change between steps).
    pub irls_tol: f64,
    pub max_irls: usize,
    pub max_halvings: usize,
    pub kmeans: KMeansSettings,
    pub max_outer: usize,
}

impl Default for BinomialSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 10_000,
            irls_tol: 1e-7,
            max_irls: 100,
            max_halvings: 10,
            kmeans: KMeansSettings::default(),
            max_outer: 50,
        }
    }
}

impl BinomialSettings {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.kmeans.seed = seed;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self.irls_tol = tol;
        self
    }
}

/// `exp(eta) / (1 + exp(eta))` without overflow.
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_probability(pi: f64) -> f64 {
    pi.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `log(1 + exp(eta)) - y eta`, evaluated stably.
fn bernoulli_nll(y: f64, eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p() - y * eta
}

/// Working response and weight at probability `pi` (assumed clamped):
/// `w = pi (1 - pi)`, `z = logit(pi) + (y - pi) / w`.
pub fn working_quantities(y: f64, pi: f64) -> (f64, f64) {
    let w = (pi * (1.0 - pi)).max(WEIGHT_FLOOR);
    let z = (pi / (1.0 - pi)).ln() + (y - pi) / w;
    (z, w)
}

/// IRLS working responses, weights and clamped probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingSet {
    pub z: Array2<f64>,
    pub w: Array2<f64>,
    pub pi: Array2<f64>,
}

impl WorkingSet {
    /// Working quantities at linear predictors `eta` (n x r).
    pub fn at(eta: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Self {
        let pi = eta.mapv(|e| clamp_probability(logistic(e.clamp(-ETA_CLAMP, ETA_CLAMP))));
        let mut z = Array2::zeros(pi.dim());
        let mut w = Array2::zeros(pi.dim());
        for ((i, k), &p) in pi.indexed_iter() {
            let (zi, wi) = working_quantities(y[[i, k]], p);
            z[[i, k]] = zi;
            w[[i, k]] = wi;
        }
        Self { z, w, pi }
    }
}

/// `[1, X]`.
pub fn with_intercept(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut u = Array2::ones((x.nrows(), x.ncols() + 1));
    u.slice_mut(s![.., 1..]).assign(&x);
    u
}

/// Exact minimizer, in coordinate `(j, k)`, of the IRLS surrogate with the
/// cluster-fusion and L1 penalties, all other coefficients held fixed.
/// `j = 0` is the intercept. `u` must include the column of ones.
#[allow(clippy::too_many_arguments)]
pub fn proximal_cd_update(
    j: usize,
    k: usize,
    theta: &CoefficientMatrix,
    partition: &ClusterPartition,
    u: ArrayView2<'_, f64>,
    working: &WorkingSet,
    gamma: f64,
    delta: f64,
) -> f64 {
    let n = u.nrows() as f64;
    let th = theta.values();
    let members = partition
        .members(partition.cluster_of(k))
        .expect("response belongs to a cluster");
    let m = members.len() as f64;
    let uj = u.column(j);
    let wk = working.w.column(k);
    let zk = working.z.column(k);
    let eta = u.dot(&th.column(k));

    let wu2: f64 = wk.iter().zip(uj.iter()).map(|(w, v)| w * v * v).sum();
    let data: f64 = (0..u.nrows())
        .map(|i| wk[i] * uj[i] * (zk[i] - eta[i]))
        .sum::<f64>()
        + wu2 * th[[j, k]];

    // fusion gradient (gamma/n) [R (theta_k - mean)]_j without the theta_jk part
    let rt_j = u.t().dot(&uj);
    let mut mean = Array1::<f64>::zeros(th.nrows());
    for &s in &members {
        mean += &th.column(s);
    }
    mean /= m;
    let diff = &th.column(k) - &mean;
    let curv = gamma / n * rt_j[j] * (m - 1.0) / m;
    let fusion = gamma / n * rt_j.dot(&diff) - curv * th[[j, k]];

    let threshold = if j == 0 { 0.0 } else { delta / 2.0 };
    soft_threshold(data - fusion, threshold) / (wu2 + curv)
}

/// Penalties applied to one cluster solve.
#[derive(Debug, Clone, Copy)]
struct Penalty {
    fusion: f64,
    ridge: f64,
    delta: f64,
}

/// Per-cluster data and state.
struct GlmProblem<'a> {
    u: ArrayView2<'a, f64>,
    /// `U^T U`.
    ru: &'a Array2<f64>,
    /// Member response columns.
    y: Array2<f64>,
    pen: Penalty,
}

impl GlmProblem<'_> {
    fn n(&self) -> f64 {
        self.u.nrows() as f64
    }

    fn penalty_value(&self, theta: ArrayView2<'_, f64>, eta: ArrayView2<'_, f64>) -> f64 {
        let slopes = theta.slice(s![1.., ..]);
        let l1: f64 = slopes.iter().map(|v| v.abs()).sum();
        let l2: f64 = slopes.iter().map(|v| v * v).sum();
        let mut value = self.pen.delta / 2.0 * l1 + self.pen.ridge / 2.0 * l2;
        if self.pen.fusion > 0.0 && eta.ncols() > 1 {
            let single = ClusterPartition::single(eta.ncols());
            value += self.pen.fusion / (4.0 * self.n()) * fusion_penalty(eta, &single);
        }
        value
    }

    fn objective(&self, theta: ArrayView2<'_, f64>, eta: ArrayView2<'_, f64>) -> f64 {
        let nll: f64 = self
            .y
            .iter()
            .zip(eta.iter())
            .map(|(&y, &e)| bernoulli_nll(y, e))
            .sum();
        nll + self.penalty_value(theta, eta)
    }

    #[cfg(test)]
    fn surrogate(&self, ws: &WorkingSet, theta: ArrayView2<'_, f64>, eta: ArrayView2<'_, f64>) -> f64 {
        let quad: f64 = ws
            .w
            .iter()
            .zip(ws.z.iter())
            .zip(eta.iter())
            .map(|((w, z), e)| 0.5 * w * (z - e).powi(2))
            .sum();
        quad + self.penalty_value(theta, eta)
    }
}

/// Coordinate descent on the IRLS surrogate for one cluster.
struct InnerState<'a, 'b> {
    prob: &'a GlmProblem<'b>,
    ws: &'a WorkingSet,
    theta: Array2<f64>,
    eta: Array2<f64>,
    r_theta: Array2<f64>,
    r_sum: Array1<f64>,
    wu2: Array2<f64>,
}

impl<'a, 'b> InnerState<'a, 'b> {
    fn new(prob: &'a GlmProblem<'b>, ws: &'a WorkingSet, theta: Array2<f64>, eta: Array2<f64>) -> Self {
        let r_theta = prob.ru.dot(&theta);
        let r_sum = r_theta.sum_axis(Axis(1));
        let u2 = prob.u.mapv(|v| v * v);
        let wu2 = u2.t().dot(&ws.w);
        Self {
            prob,
            ws,
            theta,
            eta,
            r_theta,
            r_sum,
            wu2,
        }
    }

    fn update(&mut self, j: usize, k: usize) -> f64 {
        let prob = self.prob;
        let m = self.theta.ncols() as f64;
        let uj = prob.u.column(j);
        let old = self.theta[[j, k]];
        let wu2 = self.wu2[[j, k]];
        let w = self.ws.w.column(k);
        let z = self.ws.z.column(k);
        let e = self.eta.column(k);
        let mut data = wu2 * old;
        for i in 0..uj.len() {
            data += w[i] * uj[i] * (z[i] - e[i]);
        }
        let c = prob.pen.fusion / prob.n();
        let rjj = prob.ru[[j, j]];
        let curv = c * rjj * (m - 1.0) / m;
        let fusion = c * (self.r_theta[[j, k]] - self.r_sum[j] / m) - curv * old;
        let (threshold, ridge) = if j == 0 {
            (0.0, 0.0)
        } else {
            (prob.pen.delta / 2.0, prob.pen.ridge)
        };
        let denom = wu2 + curv + ridge;
        let new = if denom > 0.0 {
            soft_threshold(data - fusion, threshold) / denom
        } else {
            0.0
        };
        let diff = new - old;
        if diff != 0.0 {
            self.theta[[j, k]] = new;
            self.eta.column_mut(k).scaled_add(diff, &uj);
            let col = prob.ru.column(j);
            self.r_theta.column_mut(k).scaled_add(diff, &col);
            self.r_sum.scaled_add(diff, &col);
        }
        diff.abs()
    }

    fn sweep(&mut self, coords: Option<&[(usize, usize)]>) -> f64 {
        let mut change = 0.0f64;
        match coords {
            Some(list) => {
                for &(j, k) in list {
                    change = change.max(self.update(j, k));
                }
            }
            None => {
                for j in 0..self.theta.nrows() {
                    for k in 0..self.theta.ncols() {
                        change = change.max(self.update(j, k));
                    }
                }
            }
        }
        change
    }

    /// Runs sweeps until the largest change drops below `tol`.
    fn solve(&mut self, tol: f64, max_sweeps: usize, mut on_sweep: impl FnMut(&Self)) -> bool {
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            let change = self.sweep(None);
            sweeps += 1;
            on_sweep(self);
            if change < tol {
                return true;
            }
            let active: Vec<(usize, usize)> = self
                .theta
                .indexed_iter()
                .filter(|(_, v)| **v != 0.0)
                .map(|(ix, _)| ix)
                .collect();
            while sweeps < max_sweeps {
                let change = self.sweep(Some(&active));
                sweeps += 1;
                on_sweep(self);
                if change < tol {
                    break;
                }
            }
        }
        false
    }
}

struct GlmSolve {
    theta: Array2<f64>,
    trace: Vec<f64>,
    converged: bool,
}

fn max_abs_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// IRLS with step-halving on one cluster (or one response).
fn solve_glm(prob: &GlmProblem<'_>, init: Array2<f64>, settings: &BinomialSettings) -> Result<GlmSolve> {
    let mut theta = init;
    let mut eta = prob.u.dot(&theta);
    let mut value = prob.objective(theta.view(), eta.view());
    let mut trace = vec![value];
    let mut beyond_clamp = 0;
    let mut converged = false;
    // early surrogates are only solved roughly; the tolerance tightens as
    // the IRLS steps shrink
    let mut inner_tol = INNER_TOL_START.max(settings.tol);

    for _ in 0..settings.max_irls {
        if eta.iter().any(|e| e.abs() > ETA_CLAMP) {
            beyond_clamp += 1;
            if beyond_clamp >= SEPARATION_STEPS {
                return Err(McenError::SeparationDetected {
                    iterations: beyond_clamp,
                });
            }
        } else {
            beyond_clamp = 0;
        }
        let ws = WorkingSet::at(eta.view(), prob.y.view());
        let mut inner = InnerState::new(prob, &ws, theta.clone(), eta.clone());
        let inner_ok = inner.solve(inner_tol, settings.max_sweeps, |_| {}) && inner_tol <= settings.tol;
        let step = &inner.theta - &theta;
        let step_size = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..=settings.max_halvings {
            let trial = &theta + &(t * &step);
            let trial_eta = prob.u.dot(&trial);
            let trial_value = prob.objective(trial.view(), trial_eta.view());
            if trial_value <= value {
                accepted = Some((trial, trial_eta, trial_value));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, trial_eta, trial_value)) => {
                let change = max_abs_diff(trial.view(), theta.view());
                theta = trial;
                eta = trial_eta;
                value = trial_value;
                trace.push(value);
                if change < settings.irls_tol && inner_ok {
                    converged = true;
                    break;
                }
                inner_tol = (0.01 * change).min(INNER_TOL_START).max(settings.tol);
            }
            None if inner_tol > settings.tol => inner_tol = settings.tol,
            None => {
                // no descent left: at a fixed point up to rounding, or stuck
                converged = step_size < settings.irls_tol.sqrt() && inner_ok;
                break;
            }
        }
    }
    Ok(GlmSolve {
        theta,
        trace,
        converged,
    })
}

/// Null-model start: intercept `logit(mean y)` per response, zero slopes.
fn null_start(y: ArrayView2<'_, f64>, p: usize) -> Array2<f64> {
    let mut theta = Array2::zeros((p + 1, y.ncols()));
    for (k, col) in y.axis_iter(Axis(1)).enumerate() {
        let pi = clamp_probability(col.mean().unwrap_or(0.5));
        theta[[0, k]] = (pi / (1.0 - pi)).ln();
    }
    theta
}

/// Outcome of a fixed-partition binomial solve.
#[derive(Debug, Clone)]
pub struct BinomialSolution {
    pub coefficients: CoefficientMatrix,
    /// Penalized negative log-likelihood after each accepted IRLS step,
    /// summed over clusters.
    pub nll_trace: Vec<f64>,
    pub converged: bool,
}

fn check_binomial(x: &DesignMatrix, y: &ResponseMatrix) -> Result<()> {
    if y.kind() != ResponseKind::Binomial {
        return Err(McenError::InvalidResponse("binomial fit needs 0/1 responses".into()));
    }
    if x.n() != y.n() {
        return Err(McenError::DimensionMismatch(format!(
            "X has {} rows but Y has {}",
            x.n(),
            y.n()
        )));
    }
    Ok(())
}

fn merge_traces(traces: &[Vec<f64>]) -> Vec<f64> {
    let len = traces.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|t| traces.iter().map(|tr| tr[t.min(tr.len() - 1)]).sum())
        .collect()
}

/// Fixed-partition binomial solve from `init` (which must carry an intercept
/// row; `None` starts from the null model).
pub fn solve_fixed_groups_binomial(
    x: &DesignMatrix,
    y: &ResponseMatrix,
    partition: &ClusterPartition,
    gamma: f64,
    delta: f64,
    init: Option<&CoefficientMatrix>,
    settings: &BinomialSettings,
) -> Result<BinomialSolution> {
    check_binomial(x, y)?;
    let u = with_intercept(x.view());
    let ru = u.t().dot(&u);
    solve_fixed_binomial_u(u.view(), &ru, y.view(), partition, gamma, delta, init, settings)
}

#[allow(clippy::too_many_arguments)]
fn solve_fixed_binomial_u(
    u: ArrayView2<'_, f64>,
    ru: &Array2<f64>,
    y: ArrayView2<'_, f64>,
    partition: &ClusterPartition,
    gamma: f64,
    delta: f64,
    init: Option<&CoefficientMatrix>,
    settings: &BinomialSettings,
) -> Result<BinomialSolution> {
    let (p1, r) = (u.ncols(), y.ncols());
    if partition.len() != r {
        return Err(McenError::DimensionMismatch(format!(
            "partition covers {} responses but Y has {r}",
            partition.len()
        )));
    }
    let start = match init {
        Some(b) => {
            if !b.has_intercept_row() || b.values().dim() != (p1, r) {
                return Err(McenError::DimensionMismatch(format!(
                    "initial coefficients must be {p1}x{r} with an intercept row"
                )));
            }
            b.values().clone()
        }
        None => null_start(y, p1 - 1),
    };
    let groups = partition.groups();
    let pen = Penalty {
        fusion: gamma,
        ridge: 0.0,
        delta,
    };
    let solves: Vec<Result<GlmSolve>> = groups
        .par_iter()
        .map(|members| {
            let prob = GlmProblem {
                u,
                ru,
                y: y.select(Axis(1), members),
                pen,
            };
            solve_glm(&prob, start.select(Axis(1), members), settings)
        })
        .collect();
    let mut theta = Array2::zeros((p1, r));
    let mut traces = Vec::with_capacity(groups.len());
    let mut converged = true;
    for (members, solve) in groups.iter().zip(solves) {
        let solve = solve?;
        for (local, &k) in members.iter().enumerate() {
            theta.column_mut(k).assign(&solve.theta.column(local));
        }
        converged &= solve.converged;
        traces.push(solve.trace);
    }
    Ok(BinomialSolution {
        coefficients: CoefficientMatrix::new(theta, true),
        nll_trace: merge_traces(&traces),
        converged,
    })
}

/// Penalized negative log-likelihood of `theta` (with intercept row) for a
/// partition.
pub fn penalized_nll(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    theta: &CoefficientMatrix,
    partition: &ClusterPartition,
    gamma: f64,
    delta: f64,
) -> f64 {
    let n = x.nrows() as f64;
    let u = with_intercept(x);
    let eta = u.dot(theta.values());
    let nll: f64 = y.iter().zip(eta.iter()).map(|(&y, &e)| bernoulli_nll(y, e)).sum();
    let l1: f64 = theta.slopes().iter().map(|v| v.abs()).sum();
    nll + delta / 2.0 * l1 + gamma / (4.0 * n) * fusion_penalty(eta.view(), partition)
}

/// Separate elastic-net logistic fit of one response,
/// `NLL + (delta/2) ||slopes||_1 + (gamma/2) ||slopes||^2`.
pub fn sen_glm_column(
    x: &DesignMatrix,
    y: ArrayView1<'_, f64>,
    gamma: f64,
    delta: f64,
    init: Option<ArrayView1<'_, f64>>,
    settings: &BinomialSettings,
) -> Result<(Array1<f64>, bool)> {
    let u = with_intercept(x.view());
    let ru = u.t().dot(&u);
    let y2 = y.to_owned().insert_axis(Axis(1));
    sen_glm_u(u.view(), &ru, y2, gamma, delta, init, settings)
}

pub(crate) fn sen_glm_u(
    u: ArrayView2<'_, f64>,
    ru: &Array2<f64>,
    y: Array2<f64>,
    gamma: f64,
    delta: f64,
    init: Option<ArrayView1<'_, f64>>,
    settings: &BinomialSettings,
) -> Result<(Array1<f64>, bool)> {
    let start = match init {
        Some(t) => t.to_owned().insert_axis(Axis(1)),
        None => null_start(y.view(), u.ncols() - 1),
    };
    let prob = GlmProblem {
        u,
        ru,
        y,
        pen: Penalty {
            fusion: 0.0,
            ridge: gamma,
            delta,
        },
    };
    let solve = solve_glm(&prob, start, settings)?;
    Ok((solve.theta.column(0).to_owned(), solve.converged))
}

/// Separate elastic-net logistic fits with common `(gamma, delta)`.
pub fn sen_glm_init(
    x: &DesignMatrix,
    y: &ResponseMatrix,
    gamma: f64,
    delta: f64,
    settings: &BinomialSettings,
) -> Result<CoefficientMatrix> {
    check_binomial(x, y)?;
    let u = with_intercept(x.view());
    let ru = u.t().dot(&u);
    Ok(sen_glm_all(u.view(), &ru, y.view(), gamma, delta, None, settings)?.0)
}

fn sen_glm_all(
    u: ArrayView2<'_, f64>,
    ru: &Array2<f64>,
    y: ArrayView2<'_, f64>,
    gamma: f64,
    delta: f64,
    warm: Option<&CoefficientMatrix>,
    settings: &BinomialSettings,
) -> Result<(CoefficientMatrix, bool)> {
    let cols: Vec<Result<(Array1<f64>, bool)>> = (0..y.ncols())
        .into_par_iter()
        .map(|k| {
            let init = warm.map(|b| b.values().column(k));
            sen_glm_u(u, ru, y.column(k).to_owned().insert_axis(Axis(1)), gamma, delta, init, settings)
        })
        .collect();
    let mut theta = Array2::zeros((u.ncols(), y.ncols()));
    let mut converged = true;
    for (k, col) in cols.into_iter().enumerate() {
        let (col, ok) = col?;
        theta.column_mut(k).assign(&col);
        converged &= ok;
    }
    Ok((CoefficientMatrix::new(theta, true), converged))
}

/// Smallest `delta` with all-zero slopes optimal:
/// `2 max_{j,k} |sum_i x_ij (y_ik - mean_k)|` on centered covariates.
pub fn binomial_delta_max(x: &DesignMatrix, y: &ResponseMatrix) -> f64 {
    let means = y.view().mean_axis(Axis(0)).expect("non-empty responses");
    let centered = &y.view() - &means;
    2.0 * x.view().t().dot(&centered).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// A fitted binomial model. Coefficients (with intercept row) are on the
/// standardized covariate scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinomialFit {
    pub coefficients: CoefficientMatrix,
    pub partition: ClusterPartition,
    pub triple: TuningTriple,
    /// Penalized negative log-likelihood after each accepted step.
    pub nll_trace: Vec<f64>,
    pub outer_iters: usize,
    pub converged: bool,
    pub termination: Termination,
    pub reduced_from: Option<usize>,
    pub standardizer: Standardizer,
    pub seed: u64,
    /// Clamped fitted probabilities on the training rows.
    #[serde(skip)]
    pub fitted: Array2<f64>,
}

impl BinomialFit {
    pub fn final_objective(&self) -> f64 {
        self.nll_trace.last().copied().unwrap_or(f64::NAN)
    }

    /// Intercepts and slopes for raw covariates.
    pub fn original_coefficients(&self) -> (Array1<f64>, Array2<f64>) {
        let s = &self.standardizer;
        let theta = self.coefficients.values();
        let slopes = Array2::from_shape_fn((theta.nrows() - 1, theta.ncols()), |(j, k)| {
            theta[[j + 1, k]] / s.x_scale[j]
        });
        let intercept = Array1::from_shape_fn(theta.ncols(), |k| {
            theta[[0, k]]
                - (0..slopes.nrows())
                    .map(|j| s.x_center[j] * slopes[[j, k]])
                    .sum::<f64>()
        });
        (intercept, slopes)
    }
}

/// Fits the two-step binomial estimator on raw data.
pub fn fit_binomial(
    x_raw: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    triple: TuningTriple,
    settings: &BinomialSettings,
) -> Result<BinomialFit> {
    let (x, y, standardizer) = standardize(x_raw, y, ResponseKind::Binomial)?;
    fit_binomial_standardized(&x, &y, standardizer, triple, None, None, settings)
}

/// Binomial fit with the partition supplied by the caller.
pub fn fit_binomial_known(
    x_raw: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    known: &ClusterPartition,
    gamma: f64,
    delta: f64,
    settings: &BinomialSettings,
) -> Result<BinomialFit> {
    let (x, y, standardizer) = standardize(x_raw, y, ResponseKind::Binomial)?;
    let triple = TuningTriple::new(known.n_clusters(), gamma, delta)?;
    fit_binomial_standardized(&x, &y, standardizer, triple, Some(known), None, settings)
}

/// Binomial fit on standardized covariates; `warm` and `known` as in the
/// Gaussian version.
pub fn fit_binomial_standardized(
    x: &DesignMatrix,
    y: &ResponseMatrix,
    standardizer: Standardizer,
    triple: TuningTriple,
    known: Option<&ClusterPartition>,
    warm: Option<&CoefficientMatrix>,
    settings: &BinomialSettings,
) -> Result<BinomialFit> {
    check_binomial(x, y)?;
    let u = with_intercept(x.view());
    let ru = u.t().dot(&u);
    fit_binomial_u(x, u.view(), &ru, y, standardizer, triple, known, warm, settings)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_binomial_u(
    x: &DesignMatrix,
    u: ArrayView2<'_, f64>,
    ru: &Array2<f64>,
    y: &ResponseMatrix,
    standardizer: Standardizer,
    triple: TuningTriple,
    known: Option<&ClusterPartition>,
    warm: Option<&CoefficientMatrix>,
    settings: &BinomialSettings,
) -> Result<BinomialFit> {
    let r = y.r();
    triple.validate()?;
    if triple.q > r {
        return Err(McenError::InvalidTuning(format!(
            "Q={} exceeds the number of responses r={r}",
            triple.q
        )));
    }
    let (gamma, delta) = (triple.gamma, triple.delta);
    let obj = |b: &CoefficientMatrix, d: &ClusterPartition| {
        penalized_nll(x.view(), y.view(), b, d, gamma, delta)
    };
    let finish = |coefficients: CoefficientMatrix,
                  partition: ClusterPartition,
                  nll_trace,
                  outer_iters,
                  converged,
                  termination,
                  reduced_from| {
        let eta = u.dot(coefficients.values());
        let fitted = eta.mapv(|e| clamp_probability(logistic(e)));
        Ok(BinomialFit {
            coefficients,
            partition,
            triple,
            nll_trace,
            outer_iters,
            converged,
            termination,
            reduced_from,
            standardizer: standardizer.clone(),
            seed: settings.kmeans.seed,
            fitted,
        })
    };

    if let Some(d) = known {
        let sol = solve_fixed_binomial_u(u, ru, y.view(), d, gamma, delta, warm, settings)?;
        return finish(
            sol.coefficients,
            d.canonical_form(),
            sol.nll_trace,
            1,
            sol.converged,
            Termination::KnownPartition,
            None,
        );
    }

    let mut inner_ok = true;
    let start = match warm.filter(|b| !b.slopes_all_zero()) {
        Some(b) => b.clone(),
        None => {
            let (b, ok) = sen_glm_all(u, ru, y.view(), gamma, delta, None, settings)?;
            inner_ok &= ok;
            b
        }
    };
    if start.slopes_all_zero() {
        let d = ClusterPartition::single(r);
        let trace = vec![obj(&start, &d)];
        return finish(start, d, trace, 1, inner_ok, Termination::ZeroStart, None);
    }

    let mut theta = start;
    let mut previous: Option<ClusterPartition> = None;
    let mut seen: Vec<(ClusterPartition, CoefficientMatrix, f64)> = Vec::new();
    let mut trace = Vec::new();
    let mut reduced_from = None;
    let mut termination = Termination::Cap;
    let mut outer_iters = 0;

    while outer_iters < settings.max_outer {
        outer_iters += 1;
        let km = cluster_fitted(x, &theta, triple.q, &settings.kmeans, previous.as_ref())?;
        reduced_from = reduced_from.or(km.reduced_from);
        let d = km.partition;
        trace.push(obj(&theta, &d));
        if previous.as_ref() == Some(&d) {
            termination = Termination::Stable;
            break;
        }
        if seen.iter().any(|(p, _, _)| *p == d) {
            termination = Termination::Cycle;
            break;
        }
        let sol = solve_fixed_binomial_u(u, ru, y.view(), &d, gamma, delta, Some(&theta), settings)?;
        inner_ok &= sol.converged;
        theta = sol.coefficients;
        let value = obj(&theta, &d);
        trace.push(value);
        seen.push((d.clone(), theta.clone(), value));
        previous = Some(d);
    }

    let (partition, coefficients) = match termination {
        Termination::Cycle => {
            let best = seen
                .iter()
                .min_by(|a, b| a.2.total_cmp(&b.2))
                .expect("a cycle needs earlier iterates");
            (best.0.clone(), best.1.clone())
        }
        _ => (previous.expect("at least one outer iteration"), theta),
    };
    let converged = inner_ok && termination != Termination::Cap;
    finish(
        coefficients,
        partition,
        trace,
        outer_iters,
        converged,
        termination,
        reduced_from,
    )
}

/// Binomial fits along a descending `delta` grid on standardized data.
#[allow(clippy::too_many_arguments)]
pub fn fit_binomial_path_standardized(
    x: &DesignMatrix,
    y: &ResponseMatrix,
    standardizer: &Standardizer,
    q: usize,
    gamma: f64,
    grid: &[f64],
    known: Option<&ClusterPartition>,
    settings: &BinomialSettings,
) -> Result<Vec<BinomialFit>> {
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(McenError::InvalidGrid(
            "delta grid must be strictly descending".into(),
        ));
    }
    check_binomial(x, y)?;
    let u = with_intercept(x.view());
    let ru = u.t().dot(&u);
    let mut fits: Vec<BinomialFit> = Vec::with_capacity(grid.len());
    for &delta in grid {
        let triple = TuningTriple::new(q, gamma, delta)?;
        let warm = fits.last().map(|f| &f.coefficients);
        let fit = fit_binomial_u(
            x,
            u.view(),
            &ru,
            y,
            standardizer.clone(),
            triple,
            known,
            warm,
            settings,
        )?;
        fits.push(fit);
    }
    Ok(fits)
}

/// Clamped probabilities for new raw covariates.
pub fn predict_proba(fit: &BinomialFit, x_new: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let x = fit.standardizer.transform_x(x_new)?;
    let u = with_intercept(x.view());
    Ok(u.dot(fit.coefficients.values())
        .mapv(|e| clamp_probability(logistic(e))))
}

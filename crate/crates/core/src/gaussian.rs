//! Fixed-partition Gaussian solver.
//!
//! For a known partition `D` the coefficient problem is convex:
//!
//! ```text
//! F(B) = 1/(2n) sum_c ||y_c - X b_c||^2 + (delta/2) ||B||_1
//!      + gamma/(2n) sum_q 1/|D_q| sum_{l,m in D_q} ||X (b_l - b_m)||^2
//! ```
//!
//! The pair sum runs over ordered pairs. The L1 weight is written `delta/2` so
//! that the soft-threshold level of every coordinate update is `delta/2` and
//! the all-zero solution is optimal exactly when `delta >= delta_max`, with
//! `delta_max = 2 max |X_j^T y_k / n|`.
//!
//! The objective separates over clusters, so each cluster is solved on its own
//! and the clusters run concurrently.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClusterPartition, CoefficientMatrix, DesignMatrix, ResponseMatrix};
use crate::error::{McenError, Result};

/// `R = X^T X / n`, `X^T Y / n` and the per-response `y^T y / n`.
#[derive(Debug, Clone)]
pub struct GramCache {
    pub gram: Array2<f64>,
    pub xty: Array2<f64>,
    pub yty: Array1<f64>,
    pub n: usize,
}

impl GramCache {
    pub fn new(x: &DesignMatrix, y: &ResponseMatrix) -> Result<Self> {
        Self::from_views(x.view(), y.view())
    }

    pub fn from_views(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(McenError::DimensionMismatch(format!(
                "X has {} rows but Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        let n = x.nrows();
        let nf = n as f64;
        let gram = x.t().dot(&x) / nf;
        let xty = x.t().dot(&y) / nf;
        let yty = y.map_axis(Axis(0), |c| c.dot(&c) / nf);
        Ok(Self { gram, xty, yty, n })
    }

    pub fn p(&self) -> usize {
        self.gram.nrows()
    }

    pub fn r(&self) -> usize {
        self.xty.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Stop when no coefficient moves more than this in a full sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Iterate on the nonzero coordinates between full sweeps.
    pub active_set: bool,
    /// Record the objective after every sweep (costs about one extra sweep).
    pub trace: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_sweeps: 100_000,
            active_set: true,
            trace: false,
        }
    }
}

impl SolverSettings {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_trace(mut self, trace: bool) -> Self {
        self.trace = trace;
        self
    }
}

/// `sign(a) max(0, |a| - b)`; returns 0 when `|a| == b`.
#[inline]
pub fn soft_threshold(a: f64, b: f64) -> f64 {
    debug_assert!(b >= 0.0);
    if a > b {
        a - b
    } else if a < -b {
        a + b
    } else {
        0.0
    }
}

/// `1 + 2 gamma (m - 1) / m`: curvature multiplier of a coordinate in a
/// cluster of size `m`.
#[inline]
fn fusion_scale(gamma: f64, m: usize) -> f64 {
    1.0 + 2.0 * gamma * (m as f64 - 1.0) / m as f64
}

/// Exact minimizer of the fixed-partition objective in coordinate `(j, k)`
/// with every other coefficient held at its value in `b`.
pub fn cd_update(
    j: usize,
    k: usize,
    b: &CoefficientMatrix,
    partition: &ClusterPartition,
    gram: &GramCache,
    gamma: f64,
    delta: f64,
) -> f64 {
    let beta = b.values();
    let members = partition
        .members(partition.cluster_of(k))
        .expect("response belongs to a cluster");
    let m = members.len();
    let scale = fusion_scale(gamma, m);
    let r_j = gram.gram.row(j);

    let own_without_j = r_j.dot(&beta.column(k)) - gram.gram[[j, j]] * beta[[j, k]];
    let others: f64 = members
        .iter()
        .filter(|&&s| s != k)
        .map(|&s| r_j.dot(&beta.column(s)))
        .sum();
    let a = gram.xty[[j, k]] - scale * own_without_j + 2.0 * gamma / m as f64 * others;
    soft_threshold(a, delta / 2.0) / (gram.gram[[j, j]] * scale)
}

/// Result of a fixed-partition solve.
#[derive(Debug, Clone)]
pub struct FixedGroupsSolution {
    pub coefficients: CoefficientMatrix,
    /// Largest sweep count over the clusters.
    pub sweeps: usize,
    pub converged: bool,
    /// Objective after each sweep (empty unless tracing was requested).
    /// Clusters that finished early contribute their final value.
    pub objective_trace: Vec<f64>,
}

struct ClusterSolve {
    beta: Array2<f64>,
    sweeps: usize,
    converged: bool,
    trace: Vec<f64>,
}

/// Coordinate descent on one cluster. `beta` holds the member columns.
struct ClusterState<'a> {
    gram: &'a GramCache,
    members: &'a [usize],
    beta: Array2<f64>,
    /// `R beta`, one column per member.
    r_beta: Array2<f64>,
    /// Row sums of `r_beta`.
    cluster_sum: Array1<f64>,
    fusion_scale: f64,
    cross_weight: f64,
    threshold: f64,
}

impl<'a> ClusterState<'a> {
    fn new(
        gram: &'a GramCache,
        members: &'a [usize],
        init: Array2<f64>,
        gamma: f64,
        delta: f64,
    ) -> Self {
        let m = members.len();
        let r_beta = gram.gram.dot(&init);
        let cluster_sum = r_beta.sum_axis(Axis(1));
        Self {
            gram,
            members,
            beta: init,
            r_beta,
            cluster_sum,
            fusion_scale: fusion_scale(gamma, m),
            cross_weight: 2.0 * gamma / m as f64,
            threshold: delta / 2.0,
        }
    }

    #[inline]
    fn update(&mut self, j: usize, k: usize) -> f64 {
        let r_jj = self.gram.gram[[j, j]];
        let old = self.beta[[j, k]];
        let own_without_j = self.r_beta[[j, k]] - r_jj * old;
        let others = self.cluster_sum[j] - self.r_beta[[j, k]];
        let a = self.gram.xty[[j, self.members[k]]] - self.fusion_scale * own_without_j
            + self.cross_weight * others;
        let new = soft_threshold(a, self.threshold) / (r_jj * self.fusion_scale);
        let diff = new - old;
        if diff != 0.0 {
            self.beta[[j, k]] = new;
            let col = self.gram.gram.column(j);
            self.r_beta
                .column_mut(k)
                .zip_mut_with(&col, |v, &g| *v += diff * g);
            self.cluster_sum
                .zip_mut_with(&col, |v, &g| *v += diff * g);
        }
        diff.abs()
    }

    fn full_sweep(&mut self) -> f64 {
        let mut max_change = 0.0f64;
        for j in 0..self.beta.nrows() {
            for k in 0..self.beta.ncols() {
                max_change = max_change.max(self.update(j, k));
            }
        }
        max_change
    }

    fn active_sweep(&mut self, active: &[(usize, usize)]) -> f64 {
        let mut max_change = 0.0f64;
        for &(j, k) in active {
            max_change = max_change.max(self.update(j, k));
        }
        max_change
    }

    fn active_coordinates(&self) -> Vec<(usize, usize)> {
        let mut active = Vec::new();
        for j in 0..self.beta.nrows() {
            for k in 0..self.beta.ncols() {
                if self.beta[[j, k]] != 0.0 {
                    active.push((j, k));
                }
            }
        }
        active
    }

    /// This cluster's share of the objective, computed from the Gram cache.
    fn objective(&self) -> f64 {
        let m = self.members.len();
        let mut value = 0.0;
        for (local, &k) in self.members.iter().enumerate() {
            let b = self.beta.column(local);
            let rb = self.r_beta.column(local);
            value += 0.5 * self.gram.yty[k] - b.dot(&self.gram.xty.column(k)) + 0.5 * b.dot(&rb);
            value += self.threshold * b.iter().map(|v| v.abs()).sum::<f64>();
        }
        if m > 1 && self.cross_weight > 0.0 {
            // gamma * sum_l (b_l - mean)^T R (b_l - mean)
            let gamma = self.cross_weight * m as f64 / 2.0;
            let mean_rb = &self.cluster_sum / m as f64;
            let mean_b = self.beta.sum_axis(Axis(1)) / m as f64;
            let mut fusion = 0.0;
            for local in 0..m {
                let db = &self.beta.column(local) - &mean_b;
                let drb = &self.r_beta.column(local) - &mean_rb;
                fusion += db.dot(&drb);
            }
            value += gamma * fusion;
        }
        value
    }
}

fn solve_cluster(
    gram: &GramCache,
    members: &[usize],
    init: Array2<f64>,
    gamma: f64,
    delta: f64,
    settings: &SolverSettings,
) -> ClusterSolve {
    let mut state = ClusterState::new(gram, members, init, gamma, delta);
    let mut trace = Vec::new();
    if settings.trace {
        trace.push(state.objective());
    }
    let mut sweeps = 0;
    let mut converged = false;
    'outer: while sweeps < settings.max_sweeps {
        let change = state.full_sweep();
        sweeps += 1;
        if settings.trace {
            trace.push(state.objective());
        }
        if change < settings.tol {
            converged = true;
            break;
        }
        if settings.active_set {
            let active = state.active_coordinates();
            loop {
                if sweeps >= settings.max_sweeps {
                    break 'outer;
                }
                let change = state.active_sweep(&active);
                sweeps += 1;
                if settings.trace {
                    trace.push(state.objective());
                }
                if change < settings.tol {
                    break;
                }
            }
        }
    }
    ClusterSolve {
        beta: state.beta,
        sweeps,
        converged,
        trace,
    }
}

fn check_inputs(gram: &GramCache, partition: &ClusterPartition, init: &CoefficientMatrix) -> Result<()> {
    if partition.len() != gram.r() {
        return Err(McenError::DimensionMismatch(format!(
            "partition covers {} responses but Y has {}",
            partition.len(),
            gram.r()
        )));
    }
    if init.has_intercept_row() || init.values().dim() != (gram.p(), gram.r()) {
        return Err(McenError::DimensionMismatch(format!(
            "initial coefficients must be {}x{} without intercept row",
            gram.p(),
            gram.r()
        )));
    }
    Ok(())
}

/// Minimizes the fixed-partition objective by cyclic coordinate descent,
/// starting from `init`. Non-convergence within `max_sweeps` is reported
/// through [`FixedGroupsSolution::converged`] together with the last iterate.
pub fn solve_fixed_groups(
    x: &DesignMatrix,
    y: &ResponseMatrix,
    partition: &ClusterPartition,
    gamma: f64,
    delta: f64,
    init: &CoefficientMatrix,
    settings: &SolverSettings,
) -> Result<FixedGroupsSolution> {
    let gram = GramCache::new(x, y)?;
    solve_fixed_groups_gram(&gram, partition, gamma, delta, init, settings)
}

/// [`solve_fixed_groups`] on a precomputed Gram cache.
pub fn solve_fixed_groups_gram(
    gram: &GramCache,
    partition: &ClusterPartition,
    gamma: f64,
    delta: f64,
    init: &CoefficientMatrix,
    settings: &SolverSettings,
) -> Result<FixedGroupsSolution> {
    check_inputs(gram, partition, init)?;
    let groups = partition.groups();
    let solves: Vec<ClusterSolve> = groups
        .par_iter()
        .map(|members| {
            let start = init.values().select(Axis(1), members);
            solve_cluster(gram, members, start, gamma, delta, settings)
        })
        .collect();

    let mut beta = Array2::zeros((gram.p(), gram.r()));
    let mut sweeps = 0;
    let mut converged = true;
    for (members, solve) in groups.iter().zip(&solves) {
        for (local, &k) in members.iter().enumerate() {
            beta.column_mut(k).assign(&solve.beta.column(local));
        }
        sweeps = sweeps.max(solve.sweeps);
        converged &= solve.converged;
    }

    let objective_trace = if settings.trace {
        let len = solves.iter().map(|s| s.trace.len()).max().unwrap_or(0);
        (0..len)
            .map(|t| {
                solves
                    .iter()
                    .map(|s| s.trace[t.min(s.trace.len() - 1)])
                    .sum()
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(FixedGroupsSolution {
        coefficients: CoefficientMatrix::new(beta, false),
        sweeps,
        converged,
        objective_trace,
    })
}

/// Fixed-partition objective evaluated directly from the data (fitted values
/// in `R^n`), independent of the Gram-based bookkeeping used by the solver.
pub fn objective(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    partition: &ClusterPartition,
    gamma: f64,
    delta: f64,
) -> f64 {
    let n = x.nrows() as f64;
    let fitted = x.dot(&b);
    let rss: f64 = (&y - &fitted).iter().map(|v| v * v).sum();
    let l1: f64 = b.iter().map(|v| v.abs()).sum();
    rss / (2.0 * n) + delta / 2.0 * l1 + gamma / (2.0 * n) * fusion_penalty(fitted.view(), partition)
}

/// `sum_q 1/|D_q| sum_{l,m in D_q} ||v_l - v_m||^2` over the columns of `fitted`.
pub fn fusion_penalty(fitted: ArrayView2<'_, f64>, partition: &ClusterPartition) -> f64 {
    partition
        .groups()
        .iter()
        .map(|members| {
            let mut total = 0.0;
            for &l in members {
                for &m in members {
                    if l != m {
                        total += fitted
                            .column(l)
                            .iter()
                            .zip(fitted.column(m).iter())
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>();
                    }
                }
            }
            total / members.len() as f64
        })
        .sum()
}

/// Smooth-part gradient of the objective at `b`, `p x r`.
fn smooth_gradient(gram: &GramCache, b: ArrayView2<'_, f64>, partition: &ClusterPartition, gamma: f64) -> Array2<f64> {
    let r_beta = gram.gram.dot(&b);
    let mut grad = &r_beta - &gram.xty;
    for members in partition.groups() {
        let m = members.len() as f64;
        if members.len() < 2 {
            continue;
        }
        let sum: Array1<f64> = members.iter().map(|&s| r_beta.column(s).to_owned()).fold(
            Array1::zeros(gram.p()),
            |acc, c| acc + c,
        );
        for &k in &members {
            // (2 gamma / m) sum_{s != k} R (b_k - b_s) = (2 gamma / m) (m R b_k - sum_s R b_s)
            let extra = (&r_beta.column(k) * m - &sum) * (2.0 * gamma / m);
            let mut col = grad.column_mut(k);
            col += &extra;
        }
    }
    grad
}

/// Largest violation of the subgradient optimality conditions: for a nonzero
/// coefficient the stationarity residual, for a zero coefficient the excess of
/// the smooth gradient over `delta / 2`.
pub fn kkt_residual(
    b: &CoefficientMatrix,
    x: &DesignMatrix,
    y: &ResponseMatrix,
    partition: &ClusterPartition,
    gamma: f64,
    delta: f64,
) -> Result<f64> {
    let gram = GramCache::new(x, y)?;
    kkt_residual_gram(b, &gram, partition, gamma, delta)
}

pub fn kkt_residual_gram(
    b: &CoefficientMatrix,
    gram: &GramCache,
    partition: &ClusterPartition,
    gamma: f64,
    delta: f64,
) -> Result<f64> {
    check_inputs(gram, partition, b)?;
    let grad = smooth_gradient(gram, b.values().view(), partition, gamma);
    let half = delta / 2.0;
    Ok(grad
        .iter()
        .zip(b.values().iter())
        .map(|(&g, &beta)| {
            if beta != 0.0 {
                (g + half * beta.signum()).abs()
            } else {
                (g.abs() - half).max(0.0)
            }
        })
        .fold(0.0, f64::max))
}

/// Smallest `delta` at which the all-zero matrix solves the `gamma = 0`
/// problem: `2 max_{j,k} |X_j^T y_k / n|`.
pub fn delta_max(x: &DesignMatrix, y: &ResponseMatrix) -> f64 {
    delta_max_views(x.view(), y.view())
}

pub fn delta_max_views(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
    let n = x.nrows() as f64;
    2.0 * x.t().dot(&y).iter().fold(0.0f64, |m, v| m.max(v.abs())) / n
}

/// `len` geometrically spaced values from `delta_max` down to
/// `min_ratio * delta_max`.
pub fn delta_path(delta_max: f64, len: usize, min_ratio: f64) -> Vec<f64> {
    if delta_max <= 0.0 || len == 0 {
        return vec![0.0];
    }
    if len == 1 {
        return vec![delta_max];
    }
    let log_ratio = min_ratio.ln();
    (0..len)
        .map(|i| delta_max * (log_ratio * i as f64 / (len - 1) as f64).exp())
        .collect()
}

/// Smallest path ratio: 0.001 when `n > p`, 0.05 otherwise.
pub fn default_min_ratio(n: usize, p: usize) -> f64 {
    if p > n {
        0.05
    } else {
        0.001
    }
}

/// Per-response OLS coefficients `(X^T X)^{-1} X^T Y`.
pub fn ols(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (n, p) = x.dim();
    if n <= p {
        return Err(McenError::SingularGram);
    }
    let xtx = x.t().dot(&x);
    let xty = x.t().dot(&y);
    let a = DMatrix::from_fn(p, p, |i, j| xtx[[i, j]]);
    let rhs = DMatrix::from_fn(p, y.ncols(), |i, j| xty[[i, j]]);
    let chol = a.cholesky().ok_or(McenError::SingularGram)?;
    let sol = chol.solve(&rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(McenError::SingularGram);
    }
    Ok(Array2::from_shape_fn((p, y.ncols()), |(i, j)| sol[(i, j)]))
}

/// Shrinks each column toward its cluster mates:
/// `b_l + 2 gamma / ((1 + 2 gamma) |D_q|) sum_{c in D_q, c != l} (b_c - b_l)`.
fn shrink_within_clusters(base: ArrayView2<'_, f64>, partition: &ClusterPartition, gamma: f64) -> Array2<f64> {
    let mut out = base.to_owned();
    for members in partition.groups() {
        let weight = 2.0 * gamma / ((1.0 + 2.0 * gamma) * members.len() as f64);
        for &l in &members {
            let mut shift = Array1::<f64>::zeros(base.nrows());
            for &c in &members {
                if c != l {
                    shift += &(&base.column(c) - &base.column(l));
                }
            }
            let mut col = out.column_mut(l);
            col.scaled_add(weight, &shift);
        }
    }
    out
}

/// Closed-form solution of the fixed-partition problem at `delta = 0`
/// (requires `n > p` and an invertible `X^T X`).
pub fn closed_form_delta0(
    x: &DesignMatrix,
    y: &ResponseMatrix,
    partition: &ClusterPartition,
    gamma: f64,
) -> Result<CoefficientMatrix> {
    if partition.len() != y.r() {
        return Err(McenError::DimensionMismatch(
            "partition size differs from the number of responses".into(),
        ));
    }
    let ols = ols(x.view(), y.view())?;
    Ok(CoefficientMatrix::new(
        shrink_within_clusters(ols.view(), partition, gamma),
        false,
    ))
}

/// Population minimizer of the smooth fixed-partition objective for true
/// coefficients `b_star`: the same within-cluster shrinkage applied to the
/// truth.
pub fn population_target(
    b_star: &CoefficientMatrix,
    partition: &ClusterPartition,
    gamma: f64,
) -> CoefficientMatrix {
    CoefficientMatrix::new(
        shrink_within_clusters(b_star.values().view(), partition, gamma),
        b_star.has_intercept_row(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_problem, TestRng};
    use ndarray::array;

    fn design(rows: &[[f64; 1]]) -> DesignMatrix {
        DesignMatrix::new(Array2::from_shape_fn((rows.len(), 1), |(i, _)| rows[i][0]))
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(1.0, 1.0), 0.0);
        assert_eq!(soft_threshold(-1.0, 1.0), 0.0);
    }

    /// Golden-section minimization of the objective along coordinate (j, k).
    fn numeric_coordinate_min(
        x: &DesignMatrix,
        y: &ResponseMatrix,
        b: &CoefficientMatrix,
        d: &ClusterPartition,
        j: usize,
        k: usize,
        gamma: f64,
        delta: f64,
    ) -> f64 {
        let f = |t: f64| {
            let mut trial = b.values().clone();
            trial[[j, k]] = t;
            objective(x.view(), y.view(), trial.view(), d, gamma, delta)
        };
        let (mut lo, mut hi) = (-20.0, 20.0);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - g * (hi - lo);
            let c = lo + g * (hi - lo);
            if f(a) < f(c) {
                hi = c;
            } else {
                lo = a;
            }
        }
        (lo + hi) / 2.0
    }

    #[test]
    fn cd_update_gamma_zero_is_lasso_update() {
        let mut rng = TestRng::new(3);
        let (x, y) = random_problem(&mut rng, 25, 4, 3);
        let gram = GramCache::new(&x, &y).unwrap();
        let b = CoefficientMatrix::new(Array2::from_shape_fn((4, 3), |_| rng.normal()), false);
        let d = ClusterPartition::new(vec![0, 0, 1]).unwrap();
        for j in 0..4 {
            for k in 0..3 {
                let beta = b.values();
                let partial = gram.gram.row(j).dot(&beta.column(k)) - gram.gram[[j, j]] * beta[[j, k]];
                let lasso = soft_threshold(gram.xty[[j, k]] - partial, 0.05) / gram.gram[[j, j]];
                let got = cd_update(j, k, &b, &d, &gram, 0.0, 0.1);
                assert!((got - lasso).abs() < 1e-14);
                // a singleton cluster ignores gamma entirely
                let singles = ClusterPartition::singletons(3);
                let got = cd_update(j, k, &b, &singles, &gram, 3.0, 0.1);
                assert!((got - lasso).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cd_update_matches_numeric_minimization() {
        let mut rng = TestRng::new(11);
        for trial in 0..10 {
            let (x, y) = random_problem(&mut rng, 20, 3, 4);
            let gram = GramCache::new(&x, &y).unwrap();
            let b = CoefficientMatrix::new(Array2::from_shape_fn((3, 4), |_| rng.normal() * 0.3), false);
            let d = ClusterPartition::new(vec![0, 1, 0, 0]).unwrap();
            let gamma = [0.0, 0.3, 1.0, 4.0][trial % 4];
            let delta = [0.0, 0.05, 0.2][trial % 3];
            for j in 0..3 {
                for k in 0..4 {
                    let exact = cd_update(j, k, &b, &d, &gram, gamma, delta);
                    let numeric = numeric_coordinate_min(&x, &y, &b, &d, j, k, gamma, delta);
                    assert!(
                        (exact - numeric).abs() < 1e-7,
                        "j={j} k={k} gamma={gamma}: {exact} vs {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn cd_update_orthonormal_two_member_cluster() {
        // x = (1, -1, 1, -1) scaled so that R = 1; y_k^T x / n = 0.8 for k = 0
        let x = design(&[[1.0], [-1.0], [1.0], [-1.0]]);
        let y = ResponseMatrix::new(
            array![[0.8, 0.1], [-0.8, -0.1], [0.8, 0.1], [-0.8, -0.1]],
            crate::data::ResponseKind::Gaussian,
        )
        .unwrap();
        let gram = GramCache::new(&x, &y).unwrap();
        let d = ClusterPartition::single(2);
        let b = CoefficientMatrix::zeros(1, 2);
        let (gamma, delta) = (1.5, 0.4);
        let got = cd_update(0, 0, &b, &d, &gram, gamma, delta);
        // exact minimizer of the objective in this coordinate
        let numeric = numeric_coordinate_min(&x, &y, &b, &d, 0, 0, gamma, delta);
        assert!((got - numeric).abs() < 1e-8);
        assert!((got - soft_threshold(0.8, 0.2) / (1.0 + gamma)).abs() < 1e-14);
    }

    #[test]
    fn closed_form_scalar_example() {
        // p = 1, OLS values (1, 3), one cluster, gamma = 1 -> 5/3 and 7/3
        let x = design(&[[1.0], [-1.0]]);
        let y = ResponseMatrix::new(array![[1.0, 3.0], [-1.0, -3.0]], crate::data::ResponseKind::Gaussian).unwrap();
        let d = ClusterPartition::single(2);
        let cf = closed_form_delta0(&x, &y, &d, 1.0).unwrap();
        assert!((cf.values()[[0, 0]] - 5.0 / 3.0).abs() < 1e-14);
        assert!((cf.values()[[0, 1]] - 7.0 / 3.0).abs() < 1e-14);
        // cross-check by minimizing the objective numerically over both coefficients
        let f = |a: f64, b: f64| objective(x.view(), y.view(), array![[a, b]].view(), &d, 1.0, 0.0);
        let (mut a, mut b) = (0.0, 0.0);
        for _ in 0..2000 {
            let (fa, fb) = ((f(a + 1e-6, b) - f(a - 1e-6, b)) / 2e-6, (f(a, b + 1e-6) - f(a, b - 1e-6)) / 2e-6);
            a -= 0.2 * fa;
            b -= 0.2 * fb;
        }
        assert!((a - 5.0 / 3.0).abs() < 1e-6 && (b - 7.0 / 3.0).abs() < 1e-6);
        // large gamma pulls both toward the cluster mean 2
        let cf = closed_form_delta0(&x, &y, &d, 1e6).unwrap();
        assert!((cf.values()[[0, 0]] - 2.0).abs() < 1e-5);
        assert!((cf.values()[[0, 1]] - 2.0).abs() < 1e-5);
        // gamma = 0 is OLS
        let cf = closed_form_delta0(&x, &y, &d, 0.0).unwrap();
        assert!((cf.values() - &array![[1.0, 3.0]]).iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn closed_form_needs_n_greater_than_p() {
        let mut rng = TestRng::new(5);
        let (x, y) = random_problem(&mut rng, 4, 6, 2);
        let d = ClusterPartition::single(2);
        assert_eq!(closed_form_delta0(&x, &y, &d, 1.0).unwrap_err(), McenError::SingularGram);
    }

    #[test]
    fn population_target_examples() {
        let b = CoefficientMatrix::new(array![[0.0, 1.0]], false);
        let d = ClusterPartition::single(2);
        let t = population_target(&b, &d, 0.5);
        assert!((t.values()[[0, 0]] - 0.25).abs() < 1e-15);
        assert!((t.values()[[0, 1]] - 0.75).abs() < 1e-15);
        assert_eq!(population_target(&b, &d, 0.0), b);
        let same = CoefficientMatrix::new(array![[2.0, 2.0, 5.0], [-1.0, -1.0, 0.0]], false);
        let d = ClusterPartition::new(vec![0, 0, 1]).unwrap();
        assert_eq!(population_target(&same, &d, 7.0), same);
    }

    #[test]
    fn delta_max_examples() {
        let x = design(&[[1.0], [-1.0]]);
        let y = ResponseMatrix::new(array![[1.0], [-1.0]], crate::data::ResponseKind::Gaussian).unwrap();
        assert_eq!(delta_max(&x, &y), 2.0);
        let zero = ResponseMatrix::new(array![[0.0], [0.0]], crate::data::ResponseKind::Gaussian).unwrap();
        assert_eq!(delta_max(&x, &zero), 0.0);
    }

    #[test]
    fn delta_max_is_the_zero_solution_threshold() {
        let mut rng = TestRng::new(17);
        for _ in 0..20 {
            let (x, y) = random_problem(&mut rng, 5, 3, 2);
            let dmax = delta_max(&x, &y);
            let zero = CoefficientMatrix::zeros(3, 2);
            let d = ClusterPartition::singletons(2);
            assert_eq!(kkt_residual(&zero, &x, &y, &d, 0.0, dmax).unwrap(), 0.0);
            assert!(kkt_residual(&zero, &x, &y, &d, 0.0, 0.99 * dmax).unwrap() > 0.0);
        }
    }

    #[test]
    fn delta_path_shape() {
        let path = delta_path(2.0, 100, 0.001);
        assert_eq!(path.len(), 100);
        assert_eq!(path[0], 2.0);
        assert!((path[99] - 0.002).abs() < 1e-15);
        assert!(path.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(delta_path(0.0, 10, 0.01), vec![0.0]);
    }

    #[test]
    fn solver_objective_trace_is_monotone_and_matches_direct_objective() {
        let mut rng = TestRng::new(23);
        for _ in 0..10 {
            let (x, y) = random_problem(&mut rng, 30, 8, 4);
            let d = ClusterPartition::new(vec![0, 1, 0, 1]).unwrap();
            let settings = SolverSettings::default().with_tol(1e-10).with_trace(true);
            let init = CoefficientMatrix::zeros(8, 4);
            let sol = solve_fixed_groups(&x, &y, &d, 0.7, 0.05, &init, &settings).unwrap();
            assert!(sol.converged);
            for w in sol.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
            }
            let direct = objective(x.view(), y.view(), sol.coefficients.values().view(), &d, 0.7, 0.05);
            let last = *sol.objective_trace.last().unwrap();
            assert!((direct - last).abs() < 1e-10 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn cluster_order_does_not_matter() {
        let mut rng = TestRng::new(29);
        let (x, y) = random_problem(&mut rng, 30, 6, 4);
        let settings = SolverSettings::default().with_tol(1e-10);
        let init = CoefficientMatrix::zeros(6, 4);
        let a = ClusterPartition::new(vec![0, 0, 1, 1]).unwrap();
        let b = ClusterPartition::new(vec![1, 1, 0, 0]).unwrap();
        let sa = solve_fixed_groups(&x, &y, &a, 1.0, 0.02, &init, &settings).unwrap();
        let sb = solve_fixed_groups(&x, &y, &b, 1.0, 0.02, &init, &settings).unwrap();
        assert_eq!(sa.coefficients, sb.coefficients);
    }

    #[test]
    fn max_sweeps_reports_non_convergence() {
        let mut rng = TestRng::new(31);
        let (x, y) = random_problem(&mut rng, 30, 6, 3);
        let settings = SolverSettings {
            tol: 1e-14,
            max_sweeps: 2,
            active_set: true,
            trace: false,
        };
        let init = CoefficientMatrix::zeros(6, 3);
        let sol = solve_fixed_groups(&x, &y, &ClusterPartition::single(3), 1.0, 0.0, &init, &settings).unwrap();
        assert!(!sol.converged);
        assert!(sol.sweeps <= 2);
    }

    #[test]
    fn kkt_of_closed_form_is_tiny() {
        let mut rng = TestRng::new(37);
        let (x, y) = random_problem(&mut rng, 40, 5, 3);
        let d = ClusterPartition::new(vec![0, 0, 1]).unwrap();
        let cf = closed_form_delta0(&x, &y, &d, 2.0).unwrap();
        assert!(kkt_residual(&cf, &x, &y, &d, 2.0, 0.0).unwrap() <= 1e-8);
    }
}

//! Partition step: k-means on the fitted-value vectors of the responses.
//!
//! For fixed coefficients the cluster-fusion penalty is
//! `sum_q 1/|D_q| sum_{l,m in D_q} ||v_l - v_m||^2` with `v_k = X b_k`, which
//! equals twice the within-cluster sum of squares of the vectors `v_k`. Lloyd's
//! algorithm therefore minimizes the right criterion.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClusterPartition, CoefficientMatrix, DesignMatrix};
use crate::error::{McenError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansSettings {
    /// Independent k-means++ starts (the previous partition is an extra one).
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for KMeansSettings {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_iters: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOutcome {
    /// Canonically labelled partition.
    pub partition: ClusterPartition,
    /// Pairwise criterion `sum_q 1/|D_q| sum_{l,m} ||v_l - v_m||^2`.
    pub objective: f64,
    /// Requested number of clusters when it had to be lowered because there
    /// were fewer distinct fitted vectors than clusters.
    pub reduced_from: Option<usize>,
}

/// Fitted-value vectors `X b_k` (plus intercept when present) as the columns
/// of an `n x r` matrix.
pub fn fitted_vectors(x: ArrayView2<'_, f64>, b: &CoefficientMatrix) -> Array2<f64> {
    let mut fitted = x.dot(&b.slopes());
    if b.has_intercept_row() {
        let intercepts = b.values().row(0);
        for (mut col, &a) in fitted.axis_iter_mut(Axis(1)).zip(intercepts.iter()) {
            col += a;
        }
    }
    fitted
}

/// Clusters the `r` fitted-value vectors `X b_1, ..., X b_r` into `q` groups.
///
/// When `previous` is supplied it seeds one extra Lloyd run, so the returned
/// criterion never exceeds the criterion of `previous`.
pub fn cluster_fitted(
    x: &DesignMatrix,
    b: &CoefficientMatrix,
    q: usize,
    settings: &KMeansSettings,
    previous: Option<&ClusterPartition>,
) -> Result<KMeansOutcome> {
    let fitted = fitted_vectors(x.view(), b);
    cluster_columns(fitted.view(), q, settings, previous)
}

/// K-means on the columns of `points` (each column is one response).
pub fn cluster_columns(
    points: ArrayView2<'_, f64>,
    q: usize,
    settings: &KMeansSettings,
    previous: Option<&ClusterPartition>,
) -> Result<KMeansOutcome> {
    let r = points.ncols();
    if q == 0 || q > r {
        return Err(McenError::InvalidTuning(format!(
            "cannot form {q} clusters from {r} responses"
        )));
    }
    if let Some(prev) = previous {
        if prev.len() != r {
            return Err(McenError::DimensionMismatch(format!(
                "previous partition covers {} responses, expected {r}",
                prev.len()
            )));
        }
    }
    // rows are points from here on
    let pts = points.t().to_owned();
    let distinct = count_distinct(&pts);
    let target = q.min(distinct);
    let reduced_from = (target < q).then_some(q);

    let mut candidates: Vec<Vec<usize>> = Vec::with_capacity(settings.restarts + 1);
    if let Some(prev) = previous.filter(|p| p.n_clusters() <= target) {
        let start = split_to(&pts, prev.assignments().to_vec(), target);
        candidates.push(lloyd(&pts, start, target, settings.max_iters));
    }
    let restarts: Vec<Vec<usize>> = (0..settings.restarts.max(1))
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                settings
                    .seed
                    .wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            );
            let start = kmeans_plus_plus(&pts, target, &mut rng);
            lloyd(&pts, start, target, settings.max_iters)
        })
        .collect();
    candidates.extend(restarts);

    let mut best: Option<(f64, Vec<usize>)> = None;
    for cand in candidates {
        let obj = within_ss(&pts, &cand, target);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, cand));
        }
    }
    let (wcss, assignments) = best.expect("at least one candidate");
    let partition = ClusterPartition::new(assignments)?.canonical_form();
    Ok(KMeansOutcome {
        partition,
        objective: 2.0 * wcss,
        reduced_from,
    })
}

/// Pairwise criterion of a partition for the given fitted vectors (columns).
pub fn partition_objective(points: ArrayView2<'_, f64>, partition: &ClusterPartition) -> f64 {
    let pts = points.t().to_owned();
    2.0 * within_ss(&pts, partition.assignments(), partition.n_clusters())
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

fn count_distinct(pts: &Array2<f64>) -> usize {
    let scale = pts
        .axis_iter(Axis(0))
        .map(|p| p.dot(&p))
        .fold(0.0f64, f64::max);
    let tol = 1e-20 * (1.0 + scale);
    let mut reps: Vec<usize> = Vec::new();
    for i in 0..pts.nrows() {
        if !reps.iter().any(|&j| sq_dist(pts.row(i), pts.row(j)) <= tol) {
            reps.push(i);
        }
    }
    reps.len()
}

fn centroids(pts: &Array2<f64>, assign: &[usize], k: usize) -> (Array2<f64>, Vec<usize>) {
    let mut c = Array2::zeros((k, pts.ncols()));
    let mut counts = vec![0usize; k];
    for (i, &a) in assign.iter().enumerate() {
        let mut row = c.row_mut(a);
        row += &pts.row(i);
        counts[a] += 1;
    }
    for (a, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            c.row_mut(a).mapv_inplace(|v| v / cnt as f64);
        }
    }
    (c, counts)
}

fn within_ss(pts: &Array2<f64>, assign: &[usize], k: usize) -> f64 {
    let (c, _) = centroids(pts, assign, k);
    assign
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(pts.row(i), c.row(a)))
        .sum()
}

/// Moves the point farthest from its centroid (taken from a cluster with at
/// least two members) into cluster `empty`.
fn fill_empty(pts: &Array2<f64>, assign: &mut [usize], k: usize, empty: usize) {
    let (c, counts) = centroids(pts, assign, k);
    let mut far: Option<(f64, usize)> = None;
    for (i, &a) in assign.iter().enumerate() {
        if counts[a] < 2 {
            continue;
        }
        let d = sq_dist(pts.row(i), c.row(a));
        if far.is_none_or(|(best, _)| d > best) {
            far = Some((d, i));
        }
    }
    if let Some((_, i)) = far {
        assign[i] = empty;
    }
}

/// Brings a partition with fewer than `k` clusters up to `k` by repeatedly
/// splitting off the farthest point; each split lowers the criterion.
fn split_to(pts: &Array2<f64>, mut assign: Vec<usize>, k: usize) -> Vec<usize> {
    let current = assign.iter().max().map_or(0, |m| m + 1);
    for empty in current..k {
        fill_empty(pts, &mut assign, k, empty);
    }
    assign
}

fn kmeans_plus_plus(pts: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = pts.nrows();
    let mut centers = vec![rng.random_range(0..n)];
    let mut d2: Array1<f64> = (0..n)
        .map(|i| sq_dist(pts.row(i), pts.row(centers[0])))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            // guard against rounding landing on an existing center
            if d2[pick] == 0.0 {
                pick = d2
                    .iter()
                    .enumerate()
                    .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc })
                    .0;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(next);
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(pts.row(i), pts.row(next)));
        }
    }
    assign_to(pts, &centers.iter().map(|&c| pts.row(c).to_owned()).collect::<Vec<_>>())
}

fn assign_to(pts: &Array2<f64>, centers: &[Array1<f64>]) -> Vec<usize> {
    (0..pts.nrows())
        .map(|i| {
            let mut best = (f64::INFINITY, 0);
            for (a, c) in centers.iter().enumerate() {
                let d = sq_dist(pts.row(i), c.view());
                if d < best.0 {
                    best = (d, a);
                }
            }
            best.1
        })
        .collect()
}

fn lloyd(pts: &Array2<f64>, mut assign: Vec<usize>, k: usize, max_iters: usize) -> Vec<usize> {
    repair_empty(pts, &mut assign, k);
    for _ in 0..max_iters {
        let (c, _) = centroids(pts, &assign, k);
        let centers: Vec<Array1<f64>> = c.axis_iter(Axis(0)).map(|r| r.to_owned()).collect();
        let mut next = assign_to(pts, &centers);
        // keep a point where it is unless another centroid is strictly closer
        for (i, a) in next.iter_mut().enumerate() {
            let cur = assign[i];
            if sq_dist(pts.row(i), c.row(*a)) >= sq_dist(pts.row(i), c.row(cur)) {
                *a = cur;
            }
        }
        repair_empty(pts, &mut next, k);
        if next == assign {
            break;
        }
        assign = next;
    }
    assign
}

fn repair_empty(pts: &Array2<f64>, assign: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &a in assign.iter() {
            counts[a] += 1;
        }
        match counts.iter().position(|&c| c == 0) {
            Some(empty) => fill_empty(pts, assign, k, empty),
            None => break,
        }
    }
}

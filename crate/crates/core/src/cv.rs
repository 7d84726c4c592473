//! K-fold cross-validation over `(Q, gamma, delta)` grids.
//!
//! Each `(Q, gamma, fold)` combination runs one warm-started path over the
//! shared `delta` grid; those paths are independent and run concurrently.
//! Fold results are collected in task order, so the output does not depend
//! on the thread count.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binomial::{
    binomial_delta_max, clamp_probability, fit_binomial_u, predict_proba, with_intercept,
    BinomialFit, BinomialSettings,
};
use crate::data::{standardize, ClusterPartition, ResponseKind, TuningTriple};
use crate::error::{McenError, Result};
use crate::gaussian::{delta_max, delta_path, default_min_ratio, GramCache};
use crate::mcen::{fit_gram, predict, McenFit, McenSettings};

/// The `delta` values of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaGrid {
    /// Explicit strictly descending values shared by every cell.
    Values(Vec<f64>),
    /// `len` geometric steps from `delta_max` of the full standardized data
    /// down to `min_ratio * delta_max` (size-dependent default when absent).
    Auto { len: usize, min_ratio: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvGrid {
    pub q_values: Vec<usize>,
    pub gamma_values: Vec<f64>,
    pub delta: DeltaGrid,
    pub k: usize,
    pub seed: u64,
    /// Fixes the partition (and so `Q`) in every fit.
    pub known_partition: Option<ClusterPartition>,
}

impl CvGrid {
    /// `gamma in {0, 0.25, 0.5, 1, 2}`, `Q in {1, ..., min(4, r)}`, a
    /// 100-point `delta` path and 10 folds.
    pub fn auto(r: usize, seed: u64) -> Self {
        Self {
            q_values: (1..=r.min(4)).collect(),
            gamma_values: vec![0.0, 0.25, 0.5, 1.0, 2.0],
            delta: DeltaGrid::Auto {
                len: 100,
                min_ratio: None,
            },
            k: 10,
            seed,
            known_partition: None,
        }
    }

    fn effective_q(&self) -> Vec<usize> {
        match &self.known_partition {
            Some(d) => vec![d.n_clusters()],
            None => self.q_values.clone(),
        }
    }

    fn validate(&self, n: usize, r: usize) -> Result<()> {
        if self.k < 2 || self.k > n {
            return Err(McenError::InvalidK { k: self.k, n });
        }
        if self.gamma_values.is_empty() || self.effective_q().is_empty() {
            return Err(McenError::InvalidGrid("empty Q or gamma grid".into()));
        }
        if let Some(&q) = self.effective_q().iter().find(|&&q| q == 0 || q > r) {
            return Err(McenError::InvalidGrid(format!("Q={q} outside 1..={r}")));
        }
        if let Some(d) = &self.known_partition {
            if d.len() != r {
                return Err(McenError::DimensionMismatch(format!(
                    "known partition covers {} responses, expected {r}",
                    d.len()
                )));
            }
        }
        if self.gamma_values.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(McenError::InvalidGrid("gamma values must be finite and nonnegative".into()));
        }
        match &self.delta {
            DeltaGrid::Values(v) => {
                if v.is_empty() {
                    return Err(McenError::InvalidGrid("empty delta grid".into()));
                }
                if v.windows(2).any(|w| w[1] >= w[0]) || v.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                    return Err(McenError::InvalidGrid(
                        "delta grid must be strictly descending and nonnegative".into(),
                    ));
                }
            }
            DeltaGrid::Auto { len, .. } => {
                if *len == 0 {
                    return Err(McenError::InvalidGrid("empty delta path".into()));
                }
            }
        }
        Ok(())
    }

    fn resolve_deltas(&self, dmax: f64, n: usize, p: usize) -> Vec<f64> {
        match &self.delta {
            DeltaGrid::Values(v) => v.clone(),
            DeltaGrid::Auto { len, min_ratio } => {
                delta_path(dmax, *len, min_ratio.unwrap_or_else(|| default_min_ratio(n, p)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    /// Held-out squared error on the original response scale; smaller wins.
    SquaredErrorMin,
    /// Held-out Bernoulli log-likelihood; larger wins.
    LoglikMax,
}

/// One `(cell, fold)` evaluation. `criterion` is `None` when the fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub q: usize,
    pub gamma: f64,
    pub delta: f64,
    pub fold: usize,
    pub criterion: Option<f64>,
}

/// Fold-summed criterion of one grid cell; invalid if any fold failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub q: usize,
    pub gamma: f64,
    pub delta: f64,
    pub criterion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<FoldRecord>,
    pub table: Vec<CvCell>,
    pub best: TuningTriple,
    pub best_criterion: f64,
    pub criterion_kind: CriterionKind,
    pub deltas: Vec<f64>,
}

impl CvResult {
    /// Per-fold table with columns `Q,gamma,delta,fold,criterion`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| McenError::Serialization(e.to_string());
        w.write_record(["Q", "gamma", "delta", "fold", "criterion"])
            .map_err(err)?;
        for rec in &self.folds {
            w.write_record([
                rec.q.to_string(),
                rec.gamma.to_string(),
                rec.delta.to_string(),
                rec.fold.to_string(),
                rec.criterion.map_or_else(|| "NaN".to_string(), |c| c.to_string()),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| McenError::Serialization(e.to_string()))
    }
}

/// Shuffles `0..n` with a seeded generator and deals positions round-robin
/// into `k` folds; fold sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(McenError::InvalidK { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in order.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Training rows for a fold: everything not held out.
pub(crate) fn complement(n: usize, held_out: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in held_out {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

/// Sum of squared differences.
pub fn squared_error(pred: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> f64 {
    pred.iter().zip(truth.iter()).map(|(a, b)| (a - b).powi(2)).sum()
}

/// `sum y log(pi) + (1 - y) log(1 - pi)` with probabilities clamped.
pub fn bernoulli_loglik(pi: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
    pi.iter()
        .zip(y.iter())
        .map(|(&p, &y)| {
            let p = clamp_probability(p);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum()
}

/// `a` is better than `b`, treating values within a relative `1e-10` as tied.
fn better(kind: CriterionKind, a: f64, b: f64) -> Option<bool> {
    let tol = 1e-10 * a.abs().max(b.abs()).max(1.0);
    if (a - b).abs() <= tol {
        None
    } else {
        Some(match kind {
            CriterionKind::SquaredErrorMin => a < b,
            CriterionKind::LoglikMax => a > b,
        })
    }
}

/// Ties go to smaller `Q`, then larger `delta`, then smaller `gamma`.
fn parsimony_first(a: &CvCell, b: &CvCell) -> bool {
    (a.q, -a.delta, a.gamma) < (b.q, -b.delta, b.gamma)
}

pub(crate) fn select_best(table: &[CvCell], kind: CriterionKind) -> Result<(TuningTriple, f64)> {
    let mut best: Option<&CvCell> = None;
    for cell in table.iter().filter(|c| c.criterion.is_some()) {
        best = match best {
            None => Some(cell),
            Some(cur) => {
                let (a, b) = (cell.criterion.unwrap(), cur.criterion.unwrap());
                match better(kind, a, b) {
                    Some(true) => Some(cell),
                    Some(false) => Some(cur),
                    None if parsimony_first(cell, cur) => Some(cell),
                    None => Some(cur),
                }
            }
        };
    }
    let cell = best.ok_or_else(|| McenError::InvalidGrid("every grid cell failed".into()))?;
    Ok((
        TuningTriple {
            q: cell.q,
            gamma: cell.gamma,
            delta: cell.delta,
        },
        cell.criterion.unwrap(),
    ))
}

fn aggregate(
    q_values: &[usize],
    gammas: &[f64],
    deltas: &[f64],
    k: usize,
    task_results: &[Vec<Option<f64>>],
) -> (Vec<FoldRecord>, Vec<CvCell>) {
    let mut folds = Vec::new();
    let mut table = Vec::new();
    let mut task = 0;
    for &q in q_values {
        for &gamma in gammas {
            let per_fold = &task_results[task..task + k];
            task += k;
            for (di, &delta) in deltas.iter().enumerate() {
                let mut sum = Some(0.0);
                for (fold, res) in per_fold.iter().enumerate() {
                    folds.push(FoldRecord {
                        q,
                        gamma,
                        delta,
                        fold,
                        criterion: res[di],
                    });
                    sum = sum.zip(res[di]).map(|(s, v)| s + v);
                }
                table.push(CvCell {
                    q,
                    gamma,
                    delta,
                    criterion: sum,
                });
            }
        }
    }
    (folds, table)
}

/// Every `(Q, gamma, fold)` triple, in output order.
fn tasks(q_values: &[usize], gammas: &[f64], k: usize) -> Vec<(usize, f64, usize)> {
    let mut out = Vec::new();
    for &q in q_values {
        for &g in gammas {
            for f in 0..k {
                out.push((q, g, f));
            }
        }
    }
    out
}

fn rows(a: ArrayView2<'_, f64>, idx: &[usize]) -> Array2<f64> {
    a.select(Axis(0), idx)
}

/// Cross-validated squared prediction error for Gaussian responses.
pub fn cv_gaussian(
    x_raw: ArrayView2<'_, f64>,
    y_raw: ArrayView2<'_, f64>,
    grid: &CvGrid,
    settings: &McenSettings,
) -> Result<CvResult> {
    let (n, r) = (x_raw.nrows(), y_raw.ncols());
    grid.validate(n, r)?;
    let (x_full, y_full, _) = standardize(x_raw, y_raw, ResponseKind::Gaussian)?;
    let deltas = grid.resolve_deltas(delta_max(&x_full, &y_full), n, x_raw.ncols());
    let folds = kfold_split(n, grid.k, grid.seed)?;
    let q_values = grid.effective_q();
    let task_list = tasks(&q_values, &grid.gamma_values, grid.k);

    let results: Vec<Vec<Option<f64>>> = task_list
        .par_iter()
        .map(|&(q, gamma, f)| {
            let test = &folds[f];
            let train = complement(n, test);
            let (x_test, y_test) = (rows(x_raw, test), rows(y_raw, test));
            let run = || -> Result<Vec<Option<f64>>> {
                let (x, y, s) = standardize(rows(x_raw, &train).view(), rows(y_raw, &train).view(), ResponseKind::Gaussian)?;
                let gram = GramCache::new(&x, &y)?;
                let mut warm: Option<McenFit> = None;
                let mut out = Vec::with_capacity(deltas.len());
                for &delta in &deltas {
                    let triple = TuningTriple { q, gamma, delta };
                    let fit = fit_gram(
                        &x,
                        &y,
                        &gram,
                        s.clone(),
                        triple,
                        grid.known_partition.as_ref(),
                        warm.as_ref().map(|f| &f.coefficients),
                        settings,
                    );
                    match fit.and_then(|fit| predict(&fit, x_test.view()).map(|p| (fit, p))) {
                        Ok((fit, pred)) => {
                            out.push(Some(squared_error(pred.view(), y_test.view())));
                            warm = Some(fit);
                        }
                        Err(_) => out.push(None),
                    }
                }
                Ok(out)
            };
            run().unwrap_or_else(|_| vec![None; deltas.len()])
        })
        .collect();

    let (fold_records, table) = aggregate(&q_values, &grid.gamma_values, &deltas, grid.k, &results);
    let (best, best_criterion) = select_best(&table, CriterionKind::SquaredErrorMin)?;
    Ok(CvResult {
        folds: fold_records,
        table,
        best,
        best_criterion,
        criterion_kind: CriterionKind::SquaredErrorMin,
        deltas,
    })
}

/// Cross-validated held-out Bernoulli log-likelihood.
pub fn cv_binomial(
    x_raw: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    grid: &CvGrid,
    settings: &BinomialSettings,
) -> Result<CvResult> {
    let (n, r) = (x_raw.nrows(), y.ncols());
    grid.validate(n, r)?;
    let (x_full, y_full, _) = standardize(x_raw, y, ResponseKind::Binomial)?;
    let deltas = grid.resolve_deltas(binomial_delta_max(&x_full, &y_full), n, x_raw.ncols());
    let folds = kfold_split(n, grid.k, grid.seed)?;
    let q_values = grid.effective_q();
    let task_list = tasks(&q_values, &grid.gamma_values, grid.k);

    let results: Vec<Vec<Option<f64>>> = task_list
        .par_iter()
        .map(|&(q, gamma, f)| {
            let test = &folds[f];
            let train = complement(n, test);
            let (x_test, y_test) = (rows(x_raw, test), rows(y, test));
            let run = || -> Result<Vec<Option<f64>>> {
                let (x, yt, s) = standardize(rows(x_raw, &train).view(), rows(y, &train).view(), ResponseKind::Binomial)?;
                let u = with_intercept(x.view());
                let ru = u.t().dot(&u);
                let mut warm: Option<BinomialFit> = None;
                let mut out = Vec::with_capacity(deltas.len());
                for &delta in &deltas {
                    let triple = TuningTriple { q, gamma, delta };
                    let fit = fit_binomial_u(
                        &x,
                        u.view(),
                        &ru,
                        &yt,
                        s.clone(),
                        triple,
                        grid.known_partition.as_ref(),
                        warm.as_ref().map(|f| &f.coefficients),
                        settings,
                    );
                    match fit.and_then(|fit| predict_proba(&fit, x_test.view()).map(|p| (fit, p))) {
                        Ok((fit, pi)) => {
                            out.push(Some(bernoulli_loglik(pi.view(), y_test.view())));
                            warm = Some(fit);
                        }
                        Err(_) => out.push(None),
                    }
                }
                Ok(out)
            };
            run().unwrap_or_else(|_| vec![None; deltas.len()])
        })
        .collect();

    let (fold_records, table) = aggregate(&q_values, &grid.gamma_values, &deltas, grid.k, &results);
    let (best, best_criterion) = select_best(&table, CriterionKind::LoglikMax)?;
    Ok(CvResult {
        folds: fold_records,
        table,
        best,
        best_criterion,
        criterion_kind: CriterionKind::LoglikMax,
        deltas,
    })
}

//! The two-step Gaussian estimator: separate elastic-net start, then
//! alternate k-means on fitted values with a fixed-partition solve until the
//! partition stops changing.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    standardize, ClusterPartition, CoefficientMatrix, DesignMatrix, ResponseKind, ResponseMatrix,
    Standardizer, TuningTriple,
};
use crate::error::{McenError, Result};
use crate::gaussian::{
    delta_max, delta_path, default_min_ratio, objective, solve_fixed_groups_gram, soft_threshold,
    GramCache, SolverSettings,
};
use crate::kmeans::{cluster_fitted, KMeansSettings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McenSettings {
    pub solver: SolverSettings,
    pub kmeans: KMeansSettings,
    /// Cap on partition/coefficient alternations.
    pub max_outer: usize,
}

impl Default for McenSettings {
    fn default() -> Self {
        Self {
            solver: SolverSettings::default(),
            kmeans: KMeansSettings::default(),
            max_outer: 50,
        }
    }
}

impl McenSettings {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.kmeans.seed = seed;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.solver.tol = tol;
        self
    }
}

/// How the outer loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Two successive partitions were identical.
    Stable,
    /// A partition seen earlier came back; the best iterate was kept.
    Cycle,
    /// The outer-iteration cap was reached.
    Cap,
    /// The separate elastic-net start was all zero, so the fit is zero.
    ZeroStart,
    /// The partition was supplied by the caller.
    KnownPartition,
}

/// A fitted model. Coefficients live on the standardized scale; use
/// [`predict`] or [`McenFit::original_coefficients`] for the raw scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McenFit {
    pub coefficients: CoefficientMatrix,
    pub partition: ClusterPartition,
    pub triple: TuningTriple,
    /// Objective after every half-step of the outer loop.
    pub objective_trace: Vec<f64>,
    pub outer_iters: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Set when fewer distinct fitted vectors than `Q` forced fewer clusters.
    pub reduced_from: Option<usize>,
    pub standardizer: Standardizer,
    pub seed: u64,
}

impl McenFit {
    /// Intercepts and slopes on the raw covariate and response scale.
    pub fn original_coefficients(&self) -> (Array1<f64>, Array2<f64>) {
        let s = &self.standardizer;
        let slopes = s.slopes_to_original(self.coefficients.slopes());
        let intercept = Array1::from_shape_fn(slopes.ncols(), |k| {
            s.y_center[k]
                - (0..slopes.nrows())
                    .map(|j| s.x_center[j] * slopes[[j, k]])
                    .sum::<f64>()
        });
        (intercept, slopes)
    }

    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Coordinate descent for one elastic-net response,
/// `1/(2n) ||y - X b||^2 + (delta/2) ||b||_1 + gamma ||b||^2`.
/// Returns the coefficients and whether the tolerance was met.
pub fn elastic_net_column(
    gram: ArrayView2<'_, f64>,
    xty: ArrayView1<'_, f64>,
    gamma: f64,
    delta: f64,
    init: ArrayView1<'_, f64>,
    settings: &SolverSettings,
) -> (Array1<f64>, bool) {
    let p = xty.len();
    let mut beta = init.to_owned();
    let mut r_beta = gram.dot(&beta);
    let half = delta / 2.0;
    let update = |j: usize, beta: &mut Array1<f64>, r_beta: &mut Array1<f64>| -> f64 {
        let rjj = gram[[j, j]];
        let old = beta[j];
        let a = xty[j] - r_beta[j] + rjj * old;
        let new = soft_threshold(a, half) / (rjj + 2.0 * gamma);
        let diff = new - old;
        if diff != 0.0 {
            beta[j] = new;
            r_beta.scaled_add(diff, &gram.column(j));
        }
        diff.abs()
    };
    let mut sweeps = 0;
    while sweeps < settings.max_sweeps {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..p {
            max_change = max_change.max(update(j, &mut beta, &mut r_beta));
        }
        if max_change < settings.tol {
            return (beta, true);
        }
        if settings.active_set {
            let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
            while sweeps < settings.max_sweeps {
                sweeps += 1;
                let mut change = 0.0f64;
                for &j in &active {
                    change = change.max(update(j, &mut beta, &mut r_beta));
                }
                if change < settings.tol {
                    break;
                }
            }
        }
    }
    (beta, false)
}

/// Separate elastic net on every response with common `(gamma, delta)`:
/// the starting point of the two-step algorithm.
pub fn sen_init(
    x: &DesignMatrix,
    y: &ResponseMatrix,
    gamma: f64,
    delta: f64,
    settings: &SolverSettings,
) -> Result<CoefficientMatrix> {
    let gram = GramCache::new(x, y)?;
    Ok(sen_init_gram(&gram, gamma, delta, None, settings).0)
}

pub(crate) fn sen_init_gram(
    gram: &GramCache,
    gamma: f64,
    delta: f64,
    warm: Option<&CoefficientMatrix>,
    settings: &SolverSettings,
) -> (CoefficientMatrix, bool) {
    let (p, r) = (gram.p(), gram.r());
    let cols: Vec<(Array1<f64>, bool)> = (0..r)
        .into_par_iter()
        .map(|k| {
            let init = match warm {
                Some(b) => b.values().column(k).to_owned(),
                None => Array1::zeros(p),
            };
            elastic_net_column(
                gram.gram.view(),
                gram.xty.column(k),
                gamma,
                delta,
                init.view(),
                settings,
            )
        })
        .collect();
    let mut beta = Array2::zeros((p, r));
    let mut converged = true;
    for (k, (col, ok)) in cols.into_iter().enumerate() {
        beta.column_mut(k).assign(&col);
        converged &= ok;
    }
    (CoefficientMatrix::new(beta, false), converged)
}

fn check_triple(triple: &TuningTriple, r: usize) -> Result<()> {
    triple.validate()?;
    if triple.q > r {
        return Err(McenError::InvalidTuning(format!(
            "Q={} exceeds the number of responses r={r}",
            triple.q
        )));
    }
    Ok(())
}

/// Fits the two-step estimator on raw data.
pub fn fit(
    x_raw: ArrayView2<'_, f64>,
    y_raw: ArrayView2<'_, f64>,
    triple: TuningTriple,
    settings: &McenSettings,
) -> Result<McenFit> {
    let (x, y, standardizer) = standardize(x_raw, y_raw, ResponseKind::Gaussian)?;
    fit_standardized(&x, &y, standardizer, triple, None, None, settings)
}

/// Fits with the partition fixed to `known` (no clustering step).
pub fn fit_known(
    x_raw: ArrayView2<'_, f64>,
    y_raw: ArrayView2<'_, f64>,
    known: &ClusterPartition,
    gamma: f64,
    delta: f64,
    settings: &McenSettings,
) -> Result<McenFit> {
    let (x, y, standardizer) = standardize(x_raw, y_raw, ResponseKind::Gaussian)?;
    let triple = TuningTriple::new(known.n_clusters(), gamma, delta)?;
    fit_standardized(&x, &y, standardizer, triple, Some(known), None, settings)
}

/// Fit on already standardized data. `warm` seeds the coefficients (the
/// separate elastic net is used when it is absent or all zero); `known`
/// skips the clustering step.
pub fn fit_standardized(
    x: &DesignMatrix,
    y: &ResponseMatrix,
    standardizer: Standardizer,
    triple: TuningTriple,
    known: Option<&ClusterPartition>,
    warm: Option<&CoefficientMatrix>,
    settings: &McenSettings,
) -> Result<McenFit> {
    let gram = GramCache::new(x, y)?;
    fit_gram(x, y, &gram, standardizer, triple, known, warm, settings)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_gram(
    x: &DesignMatrix,
    y: &ResponseMatrix,
    gram: &GramCache,
    standardizer: Standardizer,
    triple: TuningTriple,
    known: Option<&ClusterPartition>,
    warm: Option<&CoefficientMatrix>,
    settings: &McenSettings,
) -> Result<McenFit> {
    let r = y.r();
    check_triple(&triple, r)?;
    let (gamma, delta) = (triple.gamma, triple.delta);
    let obj = |b: &CoefficientMatrix, d: &ClusterPartition| {
        objective(x.view(), y.view(), b.values().view(), d, gamma, delta)
    };
    let finish = |coefficients, partition, trace, outer_iters, converged, termination, reduced_from| {
        Ok(McenFit {
            coefficients,
            partition,
            triple,
            objective_trace: trace,
            outer_iters,
            converged,
            termination,
            reduced_from,
            standardizer: standardizer.clone(),
            seed: settings.kmeans.seed,
        })
    };

    if let Some(d) = known {
        if d.len() != r {
            return Err(McenError::DimensionMismatch(format!(
                "known partition covers {} responses, expected {r}",
                d.len()
            )));
        }
        let init = warm
            .cloned()
            .unwrap_or_else(|| CoefficientMatrix::zeros(x.p(), r));
        let sol = solve_fixed_groups_gram(gram, d, gamma, delta, &init, &settings.solver)?;
        let trace = vec![obj(&sol.coefficients, d)];
        return finish(
            sol.coefficients,
            d.canonical_form(),
            trace,
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
            let (b, ok) = sen_init_gram(gram, gamma, delta, None, &settings.solver);
            inner_ok &= ok;
            b
        }
    };
    if start.slopes_all_zero() {
        let d = ClusterPartition::single(r);
        let trace = vec![obj(&start, &d)];
        return finish(start, d, trace, 1, inner_ok, Termination::ZeroStart, None);
    }

    let mut b = start;
    let mut previous: Option<ClusterPartition> = None;
    let mut seen: Vec<(ClusterPartition, CoefficientMatrix, f64)> = Vec::new();
    let mut trace = Vec::new();
    let mut reduced_from = None;
    let mut termination = Termination::Cap;
    let mut outer_iters = 0;

    while outer_iters < settings.max_outer {
        outer_iters += 1;
        let km = cluster_fitted(x, &b, triple.q, &settings.kmeans, previous.as_ref())?;
        reduced_from = reduced_from.or(km.reduced_from);
        let d = km.partition;
        trace.push(obj(&b, &d));
        if previous.as_ref() == Some(&d) {
            termination = Termination::Stable;
            break;
        }
        if seen.iter().any(|(p, _, _)| *p == d) {
            termination = Termination::Cycle;
            break;
        }
        let sol = solve_fixed_groups_gram(gram, &d, gamma, delta, &b, &settings.solver)?;
        inner_ok &= sol.converged;
        b = sol.coefficients;
        let value = obj(&b, &d);
        trace.push(value);
        seen.push((d.clone(), b.clone(), value));
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
        _ => (previous.expect("at least one outer iteration"), b),
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

/// Predictions on the raw response scale.
pub fn predict(fit: &McenFit, x_new: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let x = fit.standardizer.transform_x(x_new)?;
    let fitted = x.dot(&fit.coefficients.slopes());
    Ok(fit.standardizer.inverse_y(fitted.view()))
}

/// Default descending penalty path for standardized data.
pub fn auto_delta_path(x: &DesignMatrix, y: &ResponseMatrix, len: usize) -> Vec<f64> {
    delta_path(delta_max(x, y), len, default_min_ratio(x.n(), x.p()))
}

fn check_descending(grid: &[f64]) -> Result<()> {
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(McenError::InvalidGrid(
            "delta grid must be strictly descending".into(),
        ));
    }
    if grid.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(McenError::InvalidGrid(
            "delta grid must hold finite nonnegative values".into(),
        ));
    }
    Ok(())
}

/// Fits along a descending `delta` grid, warm-starting each fit from the
/// previous coefficients. An empty grid means the default path from
/// `delta_max`.
pub fn fit_path(
    x_raw: ArrayView2<'_, f64>,
    y_raw: ArrayView2<'_, f64>,
    q: usize,
    gamma: f64,
    delta_grid: &[f64],
    settings: &McenSettings,
) -> Result<Vec<McenFit>> {
    let (x, y, standardizer) = standardize(x_raw, y_raw, ResponseKind::Gaussian)?;
    let grid = if delta_grid.is_empty() {
        auto_delta_path(&x, &y, 100)
    } else {
        delta_grid.to_vec()
    };
    fit_path_standardized(&x, &y, &standardizer, q, gamma, &grid, None, settings)
}

/// [`fit_path`] on standardized data, optionally with a known partition.
#[allow(clippy::too_many_arguments)]
pub fn fit_path_standardized(
    x: &DesignMatrix,
    y: &ResponseMatrix,
    standardizer: &Standardizer,
    q: usize,
    gamma: f64,
    grid: &[f64],
    known: Option<&ClusterPartition>,
    settings: &McenSettings,
) -> Result<Vec<McenFit>> {
    check_descending(grid)?;
    let gram = GramCache::new(x, y)?;
    let mut fits: Vec<McenFit> = Vec::with_capacity(grid.len());
    for &delta in grid {
        let triple = TuningTriple::new(q, gamma, delta)?;
        let warm = fits.last().map(|f| &f.coefficients);
        let fit = fit_gram(x, y, &gram, standardizer.clone(), triple, known, warm, settings)?;
        fits.push(fit);
    }
    Ok(fits)
}

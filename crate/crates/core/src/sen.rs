//! Separate elastic net: one penalized fit per response, each response with
//! its own cross-validated `(gamma, delta)`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binomial::{
    binomial_delta_max, clamp_probability, logistic, sen_glm_u, with_intercept, BinomialSettings,
};
use crate::cv::{bernoulli_loglik, complement, kfold_split, DeltaGrid};
use crate::data::{standardize, CoefficientMatrix, ResponseKind, Standardizer};
use crate::error::{McenError, Result};
use crate::gaussian::{delta_max, delta_path, default_min_ratio, GramCache, SolverSettings};
use crate::mcen::elastic_net_column;

/// Per-response fits on the standardized scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenFit {
    pub kind: ResponseKind,
    /// `p x r` (Gaussian) or `(p + 1) x r` with intercepts (binomial).
    pub coefficients: CoefficientMatrix,
    pub gammas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub converged: bool,
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SenSettings {
    pub gaussian: SolverSettings,
    pub binomial: BinomialSettings,
}

/// Fits every response with its own `(gammas[k], deltas[k])`.
pub fn fit_sen(
    x_raw: ArrayView2<'_, f64>,
    y_raw: ArrayView2<'_, f64>,
    kind: ResponseKind,
    gammas: &[f64],
    deltas: &[f64],
    settings: &SenSettings,
) -> Result<SenFit> {
    let r = y_raw.ncols();
    if gammas.len() != r || deltas.len() != r {
        return Err(McenError::DimensionMismatch(format!(
            "need one (gamma, delta) per response; got {} and {} for {r}",
            gammas.len(),
            deltas.len()
        )));
    }
    let (x, y, standardizer) = standardize(x_raw, y_raw, kind)?;
    let (coefficients, converged) = match kind {
        ResponseKind::Gaussian => {
            let gram = GramCache::new(&x, &y)?;
            let cols: Vec<(Array1<f64>, bool)> = (0..r)
                .into_par_iter()
                .map(|k| {
                    elastic_net_column(
                        gram.gram.view(),
                        gram.xty.column(k),
                        gammas[k],
                        deltas[k],
                        Array1::zeros(x.p()).view(),
                        &settings.gaussian,
                    )
                })
                .collect();
            stack(cols, x.p(), false)
        }
        ResponseKind::Binomial => {
            let u = with_intercept(x.view());
            let ru = u.t().dot(&u);
            let cols: Vec<Result<(Array1<f64>, bool)>> = (0..r)
                .into_par_iter()
                .map(|k| {
                    let yk = y.view().column(k).to_owned().insert_axis(Axis(1));
                    sen_glm_u(u.view(), &ru, yk, gammas[k], deltas[k], None, &settings.binomial)
                })
                .collect();
            let cols = cols.into_iter().collect::<Result<Vec<_>>>()?;
            stack(cols, x.p() + 1, true)
        }
    };
    Ok(SenFit {
        kind,
        coefficients,
        gammas: gammas.to_vec(),
        deltas: deltas.to_vec(),
        converged,
        standardizer,
    })
}

fn stack(cols: Vec<(Array1<f64>, bool)>, rows: usize, intercept: bool) -> (CoefficientMatrix, bool) {
    let mut b = Array2::zeros((rows, cols.len()));
    let mut ok = true;
    for (k, (c, conv)) in cols.into_iter().enumerate() {
        b.column_mut(k).assign(&c);
        ok &= conv;
    }
    (CoefficientMatrix::new(b, intercept), ok)
}

/// Means (Gaussian, raw scale) or clamped probabilities (binomial).
pub fn predict_sen(fit: &SenFit, x_new: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let x = fit.standardizer.transform_x(x_new)?;
    Ok(match fit.kind {
        ResponseKind::Gaussian => fit
            .standardizer
            .inverse_y(x.dot(fit.coefficients.values()).view()),
        ResponseKind::Binomial => with_intercept(x.view())
            .dot(fit.coefficients.values())
            .mapv(|e| clamp_probability(logistic(e))),
    })
}

/// Per-response cross-validation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenCvResult {
    pub gammas: Vec<f64>,
    pub deltas: Vec<f64>,
    /// Fold-summed criterion for the chosen cell of each response.
    pub criteria: Vec<f64>,
    pub delta_grid: Vec<f64>,
}

/// Chooses `(gamma, delta)` separately for every response by K-fold CV
/// (squared error for Gaussian, held-out log-likelihood for binomial). Ties
/// go to larger `delta`, then smaller `gamma`.
#[allow(clippy::too_many_arguments)]
pub fn cv_sen(
    x_raw: ArrayView2<'_, f64>,
    y_raw: ArrayView2<'_, f64>,
    kind: ResponseKind,
    gamma_values: &[f64],
    delta: &DeltaGrid,
    k: usize,
    seed: u64,
    settings: &SenSettings,
) -> Result<SenCvResult> {
    let (n, p, r) = (x_raw.nrows(), x_raw.ncols(), y_raw.ncols());
    if gamma_values.is_empty() {
        return Err(McenError::InvalidGrid("empty gamma grid".into()));
    }
    let folds = kfold_split(n, k, seed)?;
    let (xf, yf, _) = standardize(x_raw, y_raw, kind)?;
    let dmax = match kind {
        ResponseKind::Gaussian => delta_max(&xf, &yf),
        ResponseKind::Binomial => binomial_delta_max(&xf, &yf),
    };
    let grid = match delta {
        DeltaGrid::Values(v) => v.clone(),
        DeltaGrid::Auto { len, min_ratio } => {
            delta_path(dmax, *len, min_ratio.unwrap_or_else(|| default_min_ratio(n, p)))
        }
    };
    if grid.is_empty() || grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(McenError::InvalidGrid(
            "delta grid must be non-empty and strictly descending".into(),
        ));
    }

    let tasks: Vec<(usize, usize)> = (0..gamma_values.len())
        .flat_map(|g| (0..k).map(move |f| (g, f)))
        .collect();
    // per task: [delta][response] criterion
    let results: Vec<Vec<Vec<Option<f64>>>> = tasks
        .par_iter()
        .map(|&(g, f)| {
            let gamma = gamma_values[g];
            let test = &folds[f];
            let train = complement(n, test);
            let xt = x_raw.select(Axis(0), &train);
            let yt = y_raw.select(Axis(0), &train);
            let xh = x_raw.select(Axis(0), test);
            let yh = y_raw.select(Axis(0), test);
            sen_fold_path(xt.view(), yt.view(), xh.view(), yh.view(), kind, gamma, &grid, settings)
                .unwrap_or_else(|_| vec![vec![None; r]; grid.len()])
        })
        .collect();

    let mut gammas = vec![0.0; r];
    let mut deltas = vec![0.0; r];
    let mut criteria = vec![f64::NAN; r];
    for resp in 0..r {
        let mut best: Option<(f64, f64, f64)> = None;
        for (g, &gamma) in gamma_values.iter().enumerate() {
            for (d, &dl) in grid.iter().enumerate() {
                let mut sum = Some(0.0);
                for f in 0..k {
                    sum = sum.zip(results[g * k + f][d][resp]).map(|(s, v)| s + v);
                }
                let Some(c) = sum else { continue };
                let score = match kind {
                    ResponseKind::Gaussian => c,
                    ResponseKind::Binomial => -c,
                };
                let replace = match best {
                    None => true,
                    Some((bs, bd, bg)) => {
                        let tol = 1e-10 * score.abs().max(bs.abs()).max(1.0);
                        if (score - bs).abs() <= tol {
                            (-dl, gamma) < (-bd, bg)
                        } else {
                            score < bs
                        }
                    }
                };
                if replace {
                    best = Some((score, dl, gamma));
                }
            }
        }
        let (score, dl, gamma) = best.ok_or_else(|| {
            McenError::InvalidGrid(format!("every grid cell failed for response {resp}"))
        })?;
        gammas[resp] = gamma;
        deltas[resp] = dl;
        criteria[resp] = match kind {
            ResponseKind::Gaussian => score,
            ResponseKind::Binomial => -score,
        };
    }
    Ok(SenCvResult {
        gammas,
        deltas,
        criteria,
        delta_grid: grid,
    })
}

#[allow(clippy::too_many_arguments)]
fn sen_fold_path(
    x_train: ArrayView2<'_, f64>,
    y_train: ArrayView2<'_, f64>,
    x_test: ArrayView2<'_, f64>,
    y_test: ArrayView2<'_, f64>,
    kind: ResponseKind,
    gamma: f64,
    grid: &[f64],
    settings: &SenSettings,
) -> Result<Vec<Vec<Option<f64>>>> {
    let r = y_train.ncols();
    let (x, y, s) = standardize(x_train, y_train, kind)?;
    let xh = s.transform_x(x_test)?;
    let mut out = vec![vec![None; r]; grid.len()];
    match kind {
        ResponseKind::Gaussian => {
            let gram = GramCache::new(&x, &y)?;
            for resp in 0..r {
                let mut beta = Array1::zeros(x.p());
                for (d, &delta) in grid.iter().enumerate() {
                    let (b, _) = elastic_net_column(
                        gram.gram.view(),
                        gram.xty.column(resp),
                        gamma,
                        delta,
                        beta.view(),
                        &settings.gaussian,
                    );
                    let pred = xh.dot(&b) * s.y_scale[resp] + s.y_center[resp];
                    let sse = pred
                        .iter()
                        .zip(y_test.column(resp).iter())
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    out[d][resp] = Some(sse);
                    beta = b;
                }
            }
        }
        ResponseKind::Binomial => {
            let u = with_intercept(x.view());
            let ru = u.t().dot(&u);
            let uh = with_intercept(xh.view());
            for resp in 0..r {
                let yk = y.view().column(resp).to_owned().insert_axis(Axis(1));
                let mut warm: Option<Array1<f64>> = None;
                for (d, &delta) in grid.iter().enumerate() {
                    let fit = sen_glm_u(
                        u.view(),
                        &ru,
                        yk.clone(),
                        gamma,
                        delta,
                        warm.as_ref().map(|w| w.view()),
                        &settings.binomial,
                    );
                    if let Ok((theta, _)) = fit {
                        let pi = uh.dot(&theta).mapv(logistic).insert_axis(Axis(1));
                        let yh = y_test.column(resp).to_owned().insert_axis(Axis(1));
                        out[d][resp] = Some(bernoulli_loglik(pi.view(), yh.view()));
                        warm = Some(theta);
                    }
                }
            }
        }
    }
    Ok(out)
}

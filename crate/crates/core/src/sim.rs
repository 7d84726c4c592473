//! Simulation designs with three blocks of five related responses, the
//! comparison metrics, and a replication driver for the clustered estimator
//! (unknown and known partition) against the per-response elastic net.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binomial::{fit_binomial, fit_binomial_known, logistic, predict_proba, BinomialSettings};
use crate::cv::{cv_binomial, cv_gaussian, CvGrid, DeltaGrid};
use crate::data::{ClusterPartition, CoefficientMatrix, ResponseKind, TuningTriple};
use crate::error::{McenError, Result};
use crate::mcen::{fit, fit_known, predict, McenSettings};
use crate::sen::{cv_sen, fit_sen, predict_sen, SenSettings};

/// Number of responses in the block layout.
pub const SIM_RESPONSES: usize = 15;
/// Responses per true cluster.
const BLOCK_RESPONSES: usize = 5;
/// Covariates in the correlated block.
const CORRELATED: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub n: usize,
    pub n_test: usize,
    pub p: usize,
    pub r: usize,
    pub eta: f64,
    pub lambda: f64,
    pub rho: f64,
    pub kind: ResponseKind,
    pub replications: usize,
    pub seed: u64,
}

impl SimDesign {
    /// 10 replications, `p = 12`, `n = 100`, 1000 test rows.
    pub fn desk(kind: ResponseKind, eta: f64, lambda: f64, seed: u64) -> Self {
        Self {
            n: 100,
            n_test: 1000,
            p: 12,
            r: SIM_RESPONSES,
            eta,
            lambda,
            rho: match kind {
                ResponseKind::Gaussian => 0.7,
                ResponseKind::Binomial => 0.9,
            },
            kind,
            replications: 10,
            seed,
        }
    }

    /// Full scale: 50 replications and `p = 300`.
    pub fn full_scale(kind: ResponseKind, eta: f64, lambda: f64, seed: u64) -> Self {
        Self {
            p: 300,
            replications: 50,
            ..Self::desk(kind, eta, lambda, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p != CORRELATED && self.p < 30 {
            return Err(McenError::UnsupportedP(self.p));
        }
        if self.r != SIM_RESPONSES {
            return Err(McenError::InvalidTuning(format!(
                "the block layout has {SIM_RESPONSES} responses, got r={}",
                self.r
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(McenError::InvalidTuning(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if self.n < 2 || self.n_test == 0 || self.replications == 0 {
            return Err(McenError::InvalidTuning("n >= 2, n_test >= 1 and replications >= 1 required".into()));
        }
        Ok(())
    }

    /// The generating partition: responses `5c .. 5c + 4` form cluster `c`.
    pub fn true_partition(&self) -> ClusterPartition {
        ClusterPartition::new((0..self.r).map(|k| k / BLOCK_RESPONSES).collect())
            .expect("block labels are contiguous")
    }
}

/// True `p x 15` coefficients: three diagonal blocks, each block's five
/// columns equal to `eta - lambda, eta, eta + lambda, eta + 2 lambda,
/// eta + 3 lambda` on its rows (4 rows when `p = 12`, else 10 rows followed
/// by zero rows).
pub fn make_coefficients(eta: f64, lambda: f64, p: usize) -> Result<CoefficientMatrix> {
    let rows = match p {
        12 => 4,
        p if p >= 30 => 10,
        p => return Err(McenError::UnsupportedP(p)),
    };
    let mut b = Array2::zeros((p, SIM_RESPONSES));
    for block in 0..3 {
        for c in 0..BLOCK_RESPONSES {
            let value = eta + (c as f64 - 1.0) * lambda;
            for j in 0..rows {
                b[[block * rows + j, block * BLOCK_RESPONSES + c]] = value;
            }
        }
    }
    Ok(CoefficientMatrix::new(b, false))
}

/// Rows of `N(0, Sigma_x)`: the first 12 covariates share correlation `rho`,
/// the rest are independent.
pub fn draw_covariates(n: usize, p: usize, rho: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
    let mut x = Array2::zeros((n, p));
    for i in 0..n {
        let common: f64 = rng.sample(StandardNormal);
        for j in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            x[[i, j]] = if j < CORRELATED { a * common + b * z } else { z };
        }
    }
    x
}

/// One simulated data set.
#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    /// Gaussian means `X B*` or binomial probabilities.
    pub truth: Array2<f64>,
}

fn draw(design: &SimDesign, b_star: &CoefficientMatrix, n: usize, rng: &mut ChaCha8Rng) -> SimData {
    let x = draw_covariates(n, design.p, design.rho, rng);
    let eta = x.dot(b_star.values());
    match design.kind {
        ResponseKind::Gaussian => {
            let y = &eta + &Array2::from_shape_simple_fn(eta.dim(), || rng.sample::<f64, _>(StandardNormal));
            SimData { x, y, truth: eta }
        }
        ResponseKind::Binomial => {
            let pi = eta.mapv(logistic);
            let y = pi.mapv(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 });
            SimData { x, y, truth: pi }
        }
    }
}

/// Training data `(X, Y, B*)` for a Gaussian design, from `design.seed`.
pub fn gen_gaussian(design: &SimDesign) -> Result<(Array2<f64>, Array2<f64>, CoefficientMatrix)> {
    if design.kind != ResponseKind::Gaussian {
        return Err(McenError::InvalidResponse("design is not Gaussian".into()));
    }
    let b = make_coefficients(design.eta, design.lambda, design.p)?;
    let d = draw(design, &b, design.n, &mut ChaCha8Rng::seed_from_u64(design.seed));
    Ok((d.x, d.y, b))
}

/// Training data `(X, Y, B*)` for a binomial design (zero intercepts).
pub fn gen_binomial(design: &SimDesign) -> Result<(Array2<f64>, Array2<f64>, CoefficientMatrix)> {
    if design.kind != ResponseKind::Binomial {
        return Err(McenError::InvalidResponse("design is not binomial".into()));
    }
    let b = make_coefficients(design.eta, design.lambda, design.p)?;
    let d = draw(design, &b, design.n, &mut ChaCha8Rng::seed_from_u64(design.seed));
    Ok((d.x, d.y, b))
}

fn same_shape(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(McenError::DimensionMismatch(format!(
            "shapes {:?} and {:?} differ",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Mean squared difference over all entries.
pub fn aspe(pred: ArrayView2<'_, f64>, test: ArrayView2<'_, f64>) -> Result<f64> {
    same_shape(pred, test)?;
    let sum: f64 = pred.iter().zip(test.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(sum / pred.len() as f64)
}

/// `sum_k ||b_k - b*_k||^2`.
pub fn mse_coef(b_hat: ArrayView2<'_, f64>, b_star: ArrayView2<'_, f64>) -> Result<f64> {
    same_shape(b_hat, b_star)?;
    Ok(b_hat.iter().zip(b_star.iter()).map(|(a, b)| (a - b).powi(2)).sum())
}

/// Selected entries that are truly nonzero (TV) and truly zero (FV).
pub fn tv_fv(b_hat: ArrayView2<'_, f64>, b_star: ArrayView2<'_, f64>) -> Result<(usize, usize)> {
    same_shape(b_hat, b_star)?;
    let mut tv = 0;
    let mut fv = 0;
    for (&h, &s) in b_hat.iter().zip(b_star.iter()) {
        if h != 0.0 {
            if s != 0.0 {
                tv += 1;
            } else {
                fv += 1;
            }
        }
    }
    Ok((tv, fv))
}

/// `(1/n) sum_i sum_k [pi log(pi / pi*) + (1 - pi) log((1 - pi) / (1 - pi*))]`.
pub fn kl_divergence(pi_hat: ArrayView2<'_, f64>, pi_star: ArrayView2<'_, f64>) -> Result<f64> {
    same_shape(pi_hat, pi_star)?;
    if pi_hat.iter().chain(pi_star.iter()).any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(McenError::InvalidResponse("probabilities must lie strictly inside (0, 1)".into()));
    }
    let sum: f64 = pi_hat
        .iter()
        .zip(pi_star.iter())
        .map(|(&h, &s)| h * (h / s).ln() + (1.0 - h) * ((1.0 - h) / (1.0 - s)).ln())
        .sum();
    Ok(sum / pi_hat.nrows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Mcen,
    Tmcen,
    Sen,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mcen => "MCEN",
            Method::Tmcen => "TMCEN",
            Method::Sen => "SEN",
        }
    }
}

/// Tuning grids used inside each replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimGrid {
    pub q_values: Vec<usize>,
    pub gamma_values: Vec<f64>,
    pub delta_len: usize,
    pub delta_min_ratio: f64,
    pub k: usize,
}

impl SimGrid {
    /// Coarse grid for quick runs.
    pub fn desk() -> Self {
        Self {
            q_values: vec![2, 3, 4],
            gamma_values: vec![0.0, 0.5, 2.0],
            delta_len: 10,
            delta_min_ratio: 0.02,
            k: 5,
        }
    }

    pub fn full_scale() -> Self {
        Self {
            q_values: vec![2, 3, 4],
            gamma_values: vec![0.0, 0.25, 0.5, 1.0, 2.0],
            delta_len: 100,
            delta_min_ratio: 0.001,
            k: 10,
        }
    }

    fn cv_grid(&self, seed: u64, known: Option<ClusterPartition>) -> CvGrid {
        CvGrid {
            q_values: self.q_values.clone(),
            gamma_values: self.gamma_values.clone(),
            delta: DeltaGrid::Auto {
                len: self.delta_len,
                min_ratio: Some(self.delta_min_ratio),
            },
            k: self.k,
            seed,
            known_partition: known,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub method: Method,
    pub replication: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimFailure {
    pub method: Method,
    pub replication: usize,
    pub message: String,
}

/// Box-plot summary of one metric for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub method: Method,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub design: SimDesign,
    pub grid: SimGrid,
    pub records: Vec<SimRecord>,
    pub failures: Vec<SimFailure>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl SimResult {
    pub fn values(&self, method: Method, metric: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.method == method && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn summary(&self) -> Vec<MetricSummary> {
        let mut groups: BTreeMap<(Method, String), Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            groups
                .entry((r.method, r.metric.clone()))
                .or_default()
                .push(r.value);
        }
        groups
            .into_iter()
            .map(|((method, metric), mut v)| {
                v.sort_by(f64::total_cmp);
                MetricSummary {
                    method,
                    metric,
                    count: v.len(),
                    mean: v.iter().sum::<f64>() / v.len() as f64,
                    q1: quantile(&v, 0.25),
                    median: quantile(&v, 0.5),
                    q3: quantile(&v, 0.75),
                }
            })
            .collect()
    }

    pub fn median(&self, method: Method, metric: &str) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|s| s.method == method && s.metric == metric)
            .map(|s| s.median)
    }

    pub fn mean(&self, method: Method, metric: &str) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|s| s.method == method && s.metric == metric)
            .map(|s| s.mean)
    }

    /// Columns `method,replication,metric,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let err = |e: csv::Error| McenError::Serialization(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "replication", "metric", "value"])
            .map_err(err)?;
        for r in &self.records {
            w.write_record([
                r.method.name().to_string(),
                r.replication.to_string(),
                r.metric.clone(),
                r.value.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| McenError::Serialization(e.to_string()))
    }
}

/// Fits from one replication, reduced to what the metrics need.
struct MethodOutput {
    slopes_raw: Array2<f64>,
    predictions: Array2<f64>,
    partition: Option<ClusterPartition>,
}

fn run_method(
    method: Method,
    design: &SimDesign,
    grid: &SimGrid,
    train: &SimData,
    test: &SimData,
    cv_seed: u64,
) -> Result<MethodOutput> {
    let truth_d = design.true_partition();
    let mcen_settings = McenSettings::default().with_seed(cv_seed);
    let bin_settings = BinomialSettings::default().with_seed(cv_seed);
    match (design.kind, method) {
        (ResponseKind::Gaussian, Method::Mcen | Method::Tmcen) => {
            let known = (method == Method::Tmcen).then(|| truth_d.clone());
            let cv = cv_gaussian(train.x.view(), train.y.view(), &grid.cv_grid(cv_seed, known.clone()), &mcen_settings)?;
            let fit = match &known {
                Some(d) => fit_known(train.x.view(), train.y.view(), d, cv.best.gamma, cv.best.delta, &mcen_settings)?,
                None => fit(train.x.view(), train.y.view(), cv.best, &mcen_settings)?,
            };
            Ok(MethodOutput {
                slopes_raw: fit.original_coefficients().1,
                predictions: predict(&fit, test.x.view())?,
                partition: Some(fit.partition),
            })
        }
        (ResponseKind::Binomial, Method::Mcen | Method::Tmcen) => {
            let known = (method == Method::Tmcen).then(|| truth_d.clone());
            let cv = cv_binomial(train.x.view(), train.y.view(), &grid.cv_grid(cv_seed, known.clone()), &bin_settings)?;
            let fit = match &known {
                Some(d) => fit_binomial_known(train.x.view(), train.y.view(), d, cv.best.gamma, cv.best.delta, &bin_settings)?,
                None => fit_binomial(
                    train.x.view(),
                    train.y.view(),
                    TuningTriple::new(cv.best.q, cv.best.gamma, cv.best.delta)?,
                    &bin_settings,
                )?,
            };
            Ok(MethodOutput {
                slopes_raw: fit.original_coefficients().1,
                predictions: predict_proba(&fit, test.x.view())?,
                partition: Some(fit.partition),
            })
        }
        (kind, Method::Sen) => {
            let delta = DeltaGrid::Auto {
                len: grid.delta_len,
                min_ratio: Some(grid.delta_min_ratio),
            };
            let settings = SenSettings::default();
            let cv = cv_sen(train.x.view(), train.y.view(), kind, &grid.gamma_values, &delta, grid.k, cv_seed, &settings)?;
            let fit = fit_sen(train.x.view(), train.y.view(), kind, &cv.gammas, &cv.deltas, &settings)?;
            let s = &fit.standardizer;
            let b = fit.coefficients.slopes();
            let slopes_raw = Array2::from_shape_fn(b.dim(), |(j, k)| b[[j, k]] * s.y_scale[k] / s.x_scale[j]);
            Ok(MethodOutput {
                slopes_raw,
                predictions: predict_sen(&fit, test.x.view())?,
                partition: None,
            })
        }
    }
}

fn metrics(design: &SimDesign, b_star: &CoefficientMatrix, test: &SimData, out: &MethodOutput) -> Result<Vec<(String, f64)>> {
    let mut m = Vec::new();
    match design.kind {
        ResponseKind::Gaussian => m.push(("aspe".into(), aspe(out.predictions.view(), test.y.view())?)),
        ResponseKind::Binomial => m.push(("kl".into(), kl_divergence(out.predictions.view(), test.truth.view())?)),
    }
    m.push(("mse".into(), mse_coef(out.slopes_raw.view(), b_star.values().view())?));
    let (tv, fv) = tv_fv(out.slopes_raw.view(), b_star.values().view())?;
    m.push(("tv".into(), tv as f64));
    m.push(("fv".into(), fv as f64));
    if let Some(d) = &out.partition {
        let hit = d.same_grouping(&design.true_partition());
        m.push(("partition_recovered".into(), if hit { 1.0 } else { 0.0 }));
    }
    Ok(m)
}

/// Runs every replication (seed `design.seed + rep`) for every method.
/// Failed method/replication pairs are recorded and skipped.
pub fn run_replications(design: &SimDesign, methods: &[Method], grid: &SimGrid) -> Result<SimResult> {
    design.validate()?;
    let b_star = make_coefficients(design.eta, design.lambda, design.p)?;
    let per_rep: Vec<(Vec<SimRecord>, Vec<SimFailure>)> = (0..design.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = design.seed.wrapping_add(rep as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let train = draw(design, &b_star, design.n, &mut rng);
            let test = draw(design, &b_star, design.n_test, &mut rng);
            let mut records = Vec::new();
            let mut failures = Vec::new();
            for &method in methods {
                let result = run_method(method, design, grid, &train, &test, seed)
                    .and_then(|out| metrics(design, &b_star, &test, &out));
                match result {
                    Ok(ms) => records.extend(ms.into_iter().map(|(metric, value)| SimRecord {
                        method,
                        replication: rep,
                        metric,
                        value,
                    })),
                    Err(e) => failures.push(SimFailure {
                        method,
                        replication: rep,
                        message: e.to_string(),
                    }),
                }
            }
            (records, failures)
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in per_rep {
        records.extend(r);
        failures.extend(f);
    }
    Ok(SimResult {
        design: design.clone(),
        grid: grid.clone(),
        records,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use proptest::prelude::*;

    #[test]
    fn coefficient_layout() {
        let b = make_coefficients(0.25, 0.02, 12).unwrap();
        let v = b.values();
        assert_eq!(v.dim(), (12, 15));
        assert!((v[[0, 0]] - 0.23).abs() < 1e-12);
        assert!((v[[0, 1]] - 0.25).abs() < 1e-12);
        assert!((v[[0, 4]] - 0.31).abs() < 1e-12);
        for j in 4..12 {
            for k in 0..5 {
                assert_eq!(v[[j, k]], 0.0);
            }
        }
        for k in 5..10 {
            let support: Vec<usize> = (0..12).filter(|&j| v[[j, k]] != 0.0).collect();
            assert_eq!(support, vec![4, 5, 6, 7]);
        }
        let flat = make_coefficients(0.5, 0.0, 40).unwrap();
        for block in 0..3 {
            let first = flat.values().column(block * 5).to_owned();
            for c in 1..5 {
                assert_eq!(flat.values().column(block * 5 + c), first);
            }
        }
        assert_eq!(flat.values().rows().into_iter().skip(30).flatten().filter(|v| **v != 0.0).count(), 0);
        assert_eq!(make_coefficients(1.0, 0.1, 20).unwrap_err(), McenError::UnsupportedP(20));
    }

    #[test]
    fn true_model_counts() {
        let b = make_coefficients(1.0, 0.02, 12).unwrap();
        let bv = b.values().view();
        assert_eq!(tv_fv(bv, bv).unwrap(), (60, 0));
        assert_eq!(tv_fv(Array2::zeros((12, 15)).view(), bv).unwrap(), (0, 0));
        assert_eq!(tv_fv(Array2::ones((12, 15)).view(), bv).unwrap(), (60, 120));
    }

    #[test]
    fn metric_examples() {
        let t = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(aspe(Array2::zeros((2, 2)).view(), t.view()).unwrap(), 7.5);
        assert_eq!(aspe(t.view(), t.view()).unwrap(), 0.0);
        assert_eq!(aspe((&t + 1.0).view(), t.view()).unwrap(), 1.0);
        assert!(aspe(t.view(), Array2::zeros((1, 2)).view()).is_err());
        let mut off = t.clone();
        off[[1, 0]] += 2.0;
        assert_eq!(mse_coef(off.view(), t.view()).unwrap(), 4.0);
        let kl = kl_divergence(array![[0.75]].view(), array![[0.5]].view()).unwrap();
        assert!((kl - (0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln())).abs() < 1e-15);
        assert!((kl - 0.13081).abs() < 1e-5);
        assert!(kl_divergence(array![[1.0]].view(), array![[0.5]].view()).is_err());
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(v in proptest::collection::vec((0.001f64..0.999, 0.001f64..0.999), 1..30)) {
            let a = Array2::from_shape_fn((v.len(), 1), |(i, _)| v[i].0);
            let b = Array2::from_shape_fn((v.len(), 1), |(i, _)| v[i].1);
            prop_assert!(kl_divergence(a.view(), b.view()).unwrap() >= -1e-15);
            prop_assert!(kl_divergence(a.view(), a.view()).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn covariate_covariance_matches() {
        let design = SimDesign { n: 5000, ..SimDesign::desk(ResponseKind::Gaussian, 0.5, 0.02, 3) };
        let (x, _, _) = gen_gaussian(&design).unwrap();
        let n = x.nrows() as f64;
        let cov = x.t().dot(&x) / n;
        for i in 0..12 {
            for j in 0..12 {
                let target = if i == j { 1.0 } else { 0.7 };
                assert!((cov[[i, j]] - target).abs() < 0.05, "{i} {j} {}", cov[[i, j]]);
            }
        }
        let wide = SimDesign { n: 5000, p: 40, ..design };
        let (x, _, _) = gen_gaussian(&wide).unwrap();
        let cov = x.t().dot(&x) / n;
        assert!(cov[[0, 20]].abs() < 0.05 && cov[[25, 30]].abs() < 0.05 && (cov[[35, 35]] - 1.0).abs() < 0.05);
    }

    #[test]
    fn null_designs() {
        let g = SimDesign { n: 5000, ..SimDesign::desk(ResponseKind::Gaussian, 0.0, 0.0, 5) };
        let (_, y, _) = gen_gaussian(&g).unwrap();
        for col in y.columns() {
            let m = col.mean().unwrap();
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64;
            assert!((0.9..=1.1).contains(&var));
        }
        let b = SimDesign { n: 5000, ..SimDesign::desk(ResponseKind::Binomial, 0.0, 0.0, 5) };
        let (_, y, _) = gen_binomial(&b).unwrap();
        for col in y.columns() {
            assert!((0.45..=0.55).contains(&col.mean().unwrap()));
        }
        assert_eq!(gen_binomial(&b).unwrap(), gen_binomial(&b).unwrap());
        assert!(gen_gaussian(&b).is_err());
    }

    #[test]
    fn binomial_draws_follow_logistic_curve() {
        // one covariate, slope 1.5: bin on x and compare rates to the curve
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 5000;
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = x.iter().map(|&v| if rng.random::<f64>() < logistic(1.5 * v) { 1.0 } else { 0.0 }).collect();
        let edges = [-1.5, -0.5, 0.5, 1.5];
        for w in edges.windows(2) {
            let idx: Vec<usize> = (0..n).filter(|&i| x[i] >= w[0] && x[i] < w[1]).collect();
            let rate = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
            let expect = idx.iter().map(|&i| logistic(1.5 * x[i])).sum::<f64>() / idx.len() as f64;
            assert!((rate - expect).abs() < 0.05);
        }
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }

    #[test]
    fn small_run_shape_and_determinism() {
        let design = SimDesign {
            n: 60,
            n_test: 50,
            replications: 2,
            ..SimDesign::desk(ResponseKind::Gaussian, 1.0, 0.02, 100)
        };
        let grid = SimGrid {
            q_values: vec![3],
            gamma_values: vec![1.0],
            delta_len: 3,
            delta_min_ratio: 0.05,
            k: 3,
        };
        let methods = [Method::Mcen, Method::Tmcen, Method::Sen];
        let a = run_replications(&design, &methods, &grid).unwrap();
        assert!(a.failures.is_empty(), "{:?}", a.failures);
        // 4 metrics each, plus partition recovery for the two clustered methods
        assert_eq!(a.records.len(), 2 * (4 * 3 + 2));
        let b = run_replications(&design, &methods, &grid).unwrap();
        assert_eq!(a, b);
        for s in a.summary() {
            assert!(s.q1 <= s.median && s.median <= s.q3);
        }
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + a.records.len());
    }
}

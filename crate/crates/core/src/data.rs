//! Core data types shared by every solver: standardized design and response
//! matrices, coefficient matrices, response partitions and the tuning triple.
//!
//! Cluster labels and response indices are zero-based throughout the crate.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{McenError, Result};

/// Likelihood family of the responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    Gaussian,
    Binomial,
}

/// Standardized `n x p` covariates: every column has mean zero and squared
/// norm `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: Array2<f64>,
}

impl DesignMatrix {
    /// Wraps a matrix that is already centered and scaled. No checks are made;
    /// use [`standardize`] to build one from raw data.
    pub fn new(values: Array2<f64>) -> Self {
        Self { values }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

/// `n x r` responses. Gaussian columns are centered (and scaled), binomial
/// entries are 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    values: Array2<f64>,
    kind: ResponseKind,
}

impl ResponseMatrix {
    /// Binomial matrices are checked for 0/1 entries; Gaussian matrices are
    /// taken as given.
    pub fn new(values: Array2<f64>, kind: ResponseKind) -> Result<Self> {
        if kind == ResponseKind::Binomial {
            check_binary(values.view())?;
        }
        Ok(Self { values, kind })
    }

    pub fn kind(&self) -> ResponseKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn r(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
}

fn check_binary(values: ArrayView2<'_, f64>) -> Result<()> {
    match values.iter().position(|&v| v != 0.0 && v != 1.0) {
        Some(pos) => Err(McenError::InvalidResponse(format!(
            "binomial responses must be 0 or 1, found {} at row {}, column {}",
            values.iter().nth(pos).copied().unwrap_or(f64::NAN),
            pos / values.ncols().max(1),
            pos % values.ncols().max(1),
        ))),
        None => Ok(()),
    }
}

/// Coefficients, one column per response. Binomial fits carry the intercepts
/// in row 0, which is never L1-penalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMatrix {
    values: Array2<f64>,
    has_intercept_row: bool,
}

impl CoefficientMatrix {
    pub fn new(values: Array2<f64>, has_intercept_row: bool) -> Self {
        Self {
            values,
            has_intercept_row,
        }
    }

    pub fn zeros(p: usize, r: usize) -> Self {
        Self::new(Array2::zeros((p, r)), false)
    }

    pub fn zeros_with_intercept(p: usize, r: usize) -> Self {
        Self::new(Array2::zeros((p + 1, r)), true)
    }

    pub fn has_intercept_row(&self) -> bool {
        self.has_intercept_row
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    pub fn r(&self) -> usize {
        self.values.ncols()
    }

    /// Number of predictors, not counting an intercept row.
    pub fn p(&self) -> usize {
        self.values.nrows() - usize::from(self.has_intercept_row)
    }

    /// The slope block (rows after the intercept, if any).
    pub fn slopes(&self) -> ArrayView2<'_, f64> {
        let start = usize::from(self.has_intercept_row);
        self.values.slice(ndarray::s![start.., ..])
    }

    /// True when every penalized coefficient is exactly zero.
    pub fn slopes_all_zero(&self) -> bool {
        self.slopes().iter().all(|&v| v == 0.0)
    }

    pub fn nonzero_per_response(&self) -> Vec<usize> {
        self.slopes()
            .axis_iter(Axis(1))
            .map(|col| col.iter().filter(|&&v| v != 0.0).count())
            .collect()
    }
}

/// A partition of the responses `0..r` into `Q` non-empty clusters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ClusterPartition {
    assignments: Vec<usize>,
    n_clusters: usize,
}

impl ClusterPartition {
    /// Builds a partition from zero-based labels. Labels must cover `0..Q`
    /// with no gaps.
    pub fn new(assignments: Vec<usize>) -> Result<Self> {
        if assignments.is_empty() {
            return Err(McenError::InvalidPartition("no responses".into()));
        }
        let n_clusters = assignments.iter().max().map_or(0, |&m| m + 1);
        let mut seen = vec![false; n_clusters];
        for &a in &assignments {
            seen[a] = true;
        }
        if let Some(empty) = seen.iter().position(|&s| !s) {
            return Err(McenError::InvalidPartition(format!(
                "cluster {empty} of {n_clusters} is empty"
            )));
        }
        Ok(Self {
            assignments,
            n_clusters,
        })
    }

    /// Every response in one cluster.
    pub fn single(r: usize) -> Self {
        Self {
            assignments: vec![0; r],
            n_clusters: 1,
        }
    }

    /// Every response in its own cluster.
    pub fn singletons(r: usize) -> Self {
        Self {
            assignments: (0..r).collect(),
            n_clusters: r,
        }
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// Number of responses.
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn cluster_of(&self, response: usize) -> usize {
        self.assignments[response]
    }

    /// Responses in cluster `q`, in increasing order.
    pub fn members(&self, q: usize) -> Result<Vec<usize>> {
        if q >= self.n_clusters {
            return Err(McenError::IndexOutOfRange {
                index: q,
                clusters: self.n_clusters,
            });
        }
        Ok(self
            .assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == q)
            .map(|(k, _)| k)
            .collect())
    }

    /// Members of every cluster, indexed by cluster.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_clusters];
        for (k, &a) in self.assignments.iter().enumerate() {
            groups[a].push(k);
        }
        groups
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Relabels clusters by order of first appearance, so that two partitions
    /// inducing the same grouping compare equal.
    pub fn canonical_form(&self) -> Self {
        let mut relabel = vec![usize::MAX; self.n_clusters];
        let mut next = 0;
        let assignments = self
            .assignments
            .iter()
            .map(|&a| {
                if relabel[a] == usize::MAX {
                    relabel[a] = next;
                    next += 1;
                }
                relabel[a]
            })
            .collect();
        Self {
            assignments,
            n_clusters: self.n_clusters,
        }
    }

    /// Label-invariant equality.
    pub fn same_grouping(&self, other: &Self) -> bool {
        self.canonical_form() == other.canonical_form()
    }
}

impl TryFrom<Vec<usize>> for ClusterPartition {
    type Error = McenError;

    fn try_from(value: Vec<usize>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ClusterPartition> for Vec<usize> {
    fn from(value: ClusterPartition) -> Self {
        value.assignments
    }
}

/// Free-function form of [`ClusterPartition::members`].
pub fn partition_members(partition: &ClusterPartition, q: usize) -> Result<Vec<usize>> {
    partition.members(q)
}

/// Free-function form of [`ClusterPartition::canonical_form`].
pub fn canonical_form(partition: &ClusterPartition) -> ClusterPartition {
    partition.canonical_form()
}

/// The `(Q, gamma, delta)` hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningTriple {
    pub q: usize,
    pub gamma: f64,
    pub delta: f64,
}

impl TuningTriple {
    pub fn new(q: usize, gamma: f64, delta: f64) -> Result<Self> {
        let triple = Self { q, gamma, delta };
        triple.validate()?;
        Ok(triple)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(McenError::InvalidTuning("Q must be at least 1".into()));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(McenError::InvalidTuning(format!(
                "gamma must be a finite nonnegative number, got {}",
                self.gamma
            )));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(McenError::InvalidTuning(format!(
                "delta must be a finite nonnegative number, got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Centering and scaling applied to the raw data, kept so predictions can be
/// reported on the original scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub kind: ResponseKind,
    pub x_center: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_center: Vec<f64>,
    pub y_scale: Vec<f64>,
}

impl Standardizer {
    pub fn p(&self) -> usize {
        self.x_center.len()
    }

    pub fn r(&self) -> usize {
        self.y_center.len()
    }

    pub fn transform_x(&self, x_raw: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x_raw.ncols() != self.p() {
            return Err(McenError::DimensionMismatch(format!(
                "expected {} covariate columns, got {}",
                self.p(),
                x_raw.ncols()
            )));
        }
        let mut x = x_raw.to_owned();
        for (j, mut col) in x.axis_iter_mut(Axis(1)).enumerate() {
            let (c, s) = (self.x_center[j], self.x_scale[j]);
            col.mapv_inplace(|v| (v - c) / s);
        }
        Ok(x)
    }

    pub fn inverse_x(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (c, s) = (self.x_center[j], self.x_scale[j]);
            col.mapv_inplace(|v| v * s + c);
        }
        out
    }

    pub fn transform_y(&self, y_raw: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if y_raw.ncols() != self.r() {
            return Err(McenError::DimensionMismatch(format!(
                "expected {} response columns, got {}",
                self.r(),
                y_raw.ncols()
            )));
        }
        let mut y = y_raw.to_owned();
        for (k, mut col) in y.axis_iter_mut(Axis(1)).enumerate() {
            let (c, s) = (self.y_center[k], self.y_scale[k]);
            col.mapv_inplace(|v| (v - c) / s);
        }
        Ok(y)
    }

    /// Maps standardized responses (or predictions) back to the original scale.
    pub fn inverse_y(&self, y: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = y.to_owned();
        for (k, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (c, s) = (self.y_center[k], self.y_scale[k]);
            col.mapv_inplace(|v| v * s + c);
        }
        out
    }

    /// Converts standardized-scale Gaussian coefficients (`p x r`) to the raw
    /// covariate and response scale.
    pub fn slopes_to_original(&self, slopes: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = slopes.to_owned();
        for ((j, k), v) in out.indexed_iter_mut() {
            *v *= self.y_scale[k] / self.x_scale[j];
        }
        out
    }
}

/// Population mean and standard deviation (divisor `n`) of one column.
fn mean_sd(col: ndarray::ArrayView1<'_, f64>) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.sum() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn is_degenerate(mean: f64, sd: f64) -> bool {
    !(sd > 1e-12 * mean.abs().max(1.0))
}

/// Centers every covariate and scales it to squared norm `n`; centers and
/// scales Gaussian responses to unit standard deviation. Binomial responses
/// are checked but left untouched.
pub fn standardize(
    x_raw: ArrayView2<'_, f64>,
    y_raw: ArrayView2<'_, f64>,
    kind: ResponseKind,
) -> Result<(DesignMatrix, ResponseMatrix, Standardizer)> {
    let n = x_raw.nrows();
    if y_raw.nrows() != n {
        return Err(McenError::DimensionMismatch(format!(
            "X has {n} rows but Y has {}",
            y_raw.nrows()
        )));
    }
    if n < 2 {
        return Err(McenError::TooFewObservations(n));
    }
    if x_raw.iter().chain(y_raw.iter()).any(|v| !v.is_finite()) {
        return Err(McenError::InvalidResponse(
            "data contain missing or non-finite values".into(),
        ));
    }

    let mut x_center = Vec::with_capacity(x_raw.ncols());
    let mut x_scale = Vec::with_capacity(x_raw.ncols());
    for (j, col) in x_raw.axis_iter(Axis(1)).enumerate() {
        let (mean, sd) = mean_sd(col);
        if is_degenerate(mean, sd) {
            return Err(McenError::ZeroVarianceColumn(j));
        }
        x_center.push(mean);
        x_scale.push(sd);
    }

    let r = y_raw.ncols();
    let (y_center, y_scale) = match kind {
        ResponseKind::Gaussian => y_raw
            .axis_iter(Axis(1))
            .map(|col| {
                let (mean, sd) = mean_sd(col);
                // a constant response is only centered
                (mean, if is_degenerate(mean, sd) { 1.0 } else { sd })
            })
            .unzip(),
        ResponseKind::Binomial => {
            check_binary(y_raw)?;
            (vec![0.0; r], vec![1.0; r])
        }
    };

    let standardizer = Standardizer {
        kind,
        x_center,
        x_scale,
        y_center,
        y_scale,
    };
    let x = standardizer.transform_x(x_raw)?;
    let y = standardizer.transform_y(y_raw)?;
    Ok((
        DesignMatrix::new(x),
        ResponseMatrix::new(y, kind)?,
        standardizer,
    ))
}

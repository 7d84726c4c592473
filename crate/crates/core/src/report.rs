//! Output documents: the reproducibility manifest, the fit JSON that
//! `predict` reads back, and CSV writers that lead with a manifest comment.

use std::fmt::Write as _;
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::binomial::{predict_proba, BinomialFit};
use crate::data::{ClusterPartition, CoefficientMatrix, ResponseKind, Standardizer, TuningTriple};
use crate::error::{McenError, Result};
use crate::mcen::{predict, McenFit, Termination};

pub const TOOL: &str = "mcen";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Tool version, seed and the fully resolved configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
}

fn ser_err(e: impl std::fmt::Display) -> McenError {
    McenError::Serialization(e.to_string())
}

impl Manifest {
    pub fn new<C: Serialize>(seed: u64, config: &C) -> Result<Self> {
        Ok(Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            seed,
            config: serde_json::to_value(config).map_err(ser_err)?,
        })
    }

    /// Single-line `# {...}` comment for the top of a CSV file.
    pub fn comment_line(&self) -> Result<String> {
        Ok(format!("# {}\n", serde_json::to_string(self).map_err(ser_err)?))
    }
}

/// Writes the manifest comment, then whatever `body` writes.
pub fn write_csv_with_manifest<W: Write>(
    mut out: W,
    manifest: &Manifest,
    body: impl FnOnce(&mut W) -> Result<()>,
) -> Result<()> {
    out.write_all(manifest.comment_line()?.as_bytes()).map_err(ser_err)?;
    body(&mut out)
}

/// A fitted Gaussian or binomial model.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Gaussian(McenFit),
    Binomial(BinomialFit),
}

impl FittedModel {
    pub fn kind(&self) -> ResponseKind {
        match self {
            FittedModel::Gaussian(_) => ResponseKind::Gaussian,
            FittedModel::Binomial(_) => ResponseKind::Binomial,
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            FittedModel::Gaussian(f) => f.converged,
            FittedModel::Binomial(f) => f.converged,
        }
    }

    pub fn coefficients(&self) -> &CoefficientMatrix {
        match self {
            FittedModel::Gaussian(f) => &f.coefficients,
            FittedModel::Binomial(f) => &f.coefficients,
        }
    }

    pub fn partition(&self) -> &ClusterPartition {
        match self {
            FittedModel::Gaussian(f) => &f.partition,
            FittedModel::Binomial(f) => &f.partition,
        }
    }

    /// Intercepts and slopes on the raw scale (log-odds for binomial).
    pub fn original_coefficients(&self) -> (ndarray::Array1<f64>, Array2<f64>) {
        match self {
            FittedModel::Gaussian(f) => f.original_coefficients(),
            FittedModel::Binomial(f) => f.original_coefficients(),
        }
    }

    /// Means for Gaussian fits, probabilities for binomial fits.
    pub fn predict(&self, x_raw: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self {
            FittedModel::Gaussian(f) => predict(f, x_raw),
            FittedModel::Binomial(f) => predict_proba(f, x_raw),
        }
    }
}

/// JSON form of a fit. Coefficients are on the standardized scale, stored
/// dense and column by column; the binomial matrix leads with its intercept
/// row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub kind: ResponseKind,
    pub covariates: Vec<String>,
    pub responses: Vec<String>,
    pub rows: usize,
    pub cols: usize,
    pub has_intercept_row: bool,
    pub coefficients: Vec<f64>,
    pub assignments: Vec<usize>,
    pub triple: TuningTriple,
    pub standardizer: Standardizer,
    pub objective_trace: Vec<f64>,
    pub outer_iters: usize,
    pub converged: bool,
    pub termination: Termination,
    pub reduced_from: Option<usize>,
    pub seed: u64,
    /// Raw-scale intercepts, one per response.
    pub original_intercepts: Vec<f64>,
    /// Raw-scale slopes, column by column.
    pub original_slopes: Vec<f64>,
    pub manifest: Manifest,
}

fn column_major(a: &Array2<f64>) -> Vec<f64> {
    a.t().iter().copied().collect()
}

impl FitDocument {
    pub fn new(
        model: &FittedModel,
        covariates: Vec<String>,
        responses: Vec<String>,
        manifest: Manifest,
    ) -> Result<Self> {
        let coef = model.coefficients();
        let p = coef.p();
        if covariates.len() != p || responses.len() != coef.r() {
            return Err(McenError::DimensionMismatch(format!(
                "{} covariate and {} response names for a {p} x {} fit",
                covariates.len(),
                responses.len(),
                coef.r()
            )));
        }
        let (intercepts, slopes) = model.original_coefficients();
        let (trace, outer_iters, converged, termination, reduced_from, seed, triple, standardizer) = match model {
            FittedModel::Gaussian(f) => (&f.objective_trace, f.outer_iters, f.converged, f.termination, f.reduced_from, f.seed, f.triple, &f.standardizer),
            FittedModel::Binomial(f) => (&f.nll_trace, f.outer_iters, f.converged, f.termination, f.reduced_from, f.seed, f.triple, &f.standardizer),
        };
        Ok(Self {
            kind: model.kind(),
            covariates,
            responses,
            rows: coef.values().nrows(),
            cols: coef.values().ncols(),
            has_intercept_row: coef.has_intercept_row(),
            coefficients: column_major(coef.values()),
            assignments: model.partition().assignments().to_vec(),
            triple,
            standardizer: standardizer.clone(),
            objective_trace: trace.clone(),
            outer_iters,
            converged,
            termination,
            reduced_from,
            seed,
            original_intercepts: intercepts.to_vec(),
            original_slopes: column_major(&slopes),
            manifest,
        })
    }

    /// Rebuilds the model, enough for prediction and inspection.
    pub fn to_model(&self) -> Result<FittedModel> {
        if self.coefficients.len() != self.rows * self.cols {
            return Err(McenError::DimensionMismatch(format!(
                "{} coefficients for a {} x {} matrix",
                self.coefficients.len(),
                self.rows,
                self.cols
            )));
        }
        let values = Array2::from_shape_vec((self.cols, self.rows), self.coefficients.clone())
            .map_err(ser_err)?
            .reversed_axes()
            .as_standard_layout()
            .into_owned();
        let coefficients = CoefficientMatrix::new(values, self.has_intercept_row);
        let partition = ClusterPartition::new(self.assignments.clone())?;
        if partition.len() != self.cols || self.standardizer.p() != coefficients.p() {
            return Err(McenError::DimensionMismatch("fit document fields disagree in size".into()));
        }
        Ok(match self.kind {
            ResponseKind::Gaussian => FittedModel::Gaussian(McenFit {
                coefficients,
                partition,
                triple: self.triple,
                objective_trace: self.objective_trace.clone(),
                outer_iters: self.outer_iters,
                converged: self.converged,
                termination: self.termination,
                reduced_from: self.reduced_from,
                standardizer: self.standardizer.clone(),
                seed: self.seed,
            }),
            ResponseKind::Binomial => FittedModel::Binomial(BinomialFit {
                coefficients,
                partition,
                triple: self.triple,
                nll_trace: self.objective_trace.clone(),
                outer_iters: self.outer_iters,
                converged: self.converged,
                termination: self.termination,
                reduced_from: self.reduced_from,
                standardizer: self.standardizer.clone(),
                seed: self.seed,
                fitted: Array2::zeros((0, 0)),
            }),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(ser_err)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(ser_err)
    }

    /// Plain-text overview: tuning, cluster members and nonzero slopes per
    /// response.
    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let kind = match self.kind {
            ResponseKind::Gaussian => "gaussian",
            ResponseKind::Binomial => "binomial",
        };
        let _ = writeln!(s, "{kind} fit, Q={} gamma={} delta={}", self.triple.q, self.triple.gamma, self.triple.delta);
        let _ = writeln!(
            s,
            "converged: {} ({:?}, {} outer iterations)",
            self.converged, self.termination, self.outer_iters
        );
        let p = self.covariates.len();
        let n_clusters = self.assignments.iter().max().map_or(0, |m| m + 1);
        for q in 0..n_clusters {
            let members: Vec<&str> = self
                .responses
                .iter()
                .zip(&self.assignments)
                .filter(|(_, &a)| a == q)
                .map(|(r, _)| r.as_str())
                .collect();
            let _ = writeln!(s, "cluster {q}: {}", members.join(", "));
        }
        for (k, name) in self.responses.iter().enumerate() {
            let nz = self.original_slopes[k * p..(k + 1) * p].iter().filter(|v| **v != 0.0).count();
            let _ = writeln!(s, "{name}: {nz} of {p} covariates selected");
        }
        s
    }
}

/// Predictions CSV with one column per response.
pub fn write_predictions<W: Write>(out: W, manifest: &Manifest, responses: &[String], pred: ArrayView2<'_, f64>) -> Result<()> {
    write_csv_with_manifest(out, manifest, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(responses).map_err(ser_err)?;
        for row in pred.rows() {
            csv.write_record(row.iter().map(|v| v.to_string())).map_err(ser_err)?;
        }
        csv.flush().map_err(ser_err)
    })
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use mcen::binomial::{binomial_delta_max, fit_binomial, BinomialSettings};
use mcen::cv::{cv_binomial, cv_gaussian, CvGrid, CvResult, DeltaGrid};
use mcen::gaussian::delta_max;
use mcen::mcen::{fit, McenSettings};
use mcen::report::{write_csv_with_manifest, write_predictions, FitDocument, FittedModel, Manifest};
use mcen::sim::{run_replications, Method, SimDesign, SimGrid};
use mcen::table::{read_table, Dataset};
use mcen::{standardize, McenError, ResponseKind, TuningTriple};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "mcen", version, about = "Multivariate cluster elastic net")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one tuning triple and write fit.json and summary.txt.
    Fit(FitArgs),
    /// Apply a saved fit to new covariates and write predictions.csv.
    Predict(PredictArgs),
    /// Cross-validate over a grid, then refit the best triple on all rows.
    Cv(CvArgs),
    /// Run the three-block simulation study.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Gaussian,
    Binomial,
}

impl From<Kind> for ResponseKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Gaussian => ResponseKind::Gaussian,
            Kind::Binomial => ResponseKind::Binomial,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated response column names; all other columns are covariates.
    #[arg(long, value_delimiter = ',', required = true)]
    responses: Vec<String>,
    #[arg(long, value_enum, default_value = "gaussian")]
    kind: Kind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Number of response clusters.
    #[arg(long = "Q")]
    q: usize,
    #[arg(long)]
    gamma: f64,
    /// Lasso weight on the standardized scale, or `max` for the smallest
    /// value giving an all-zero fit.
    #[arg(long)]
    delta: String,
}

#[derive(Args, Debug, Serialize)]
struct PredictArgs {
    /// fit.json written by `fit` or `cv`.
    #[arg(long)]
    fit: PathBuf,
    /// CSV holding the fit's covariate columns (response columns are ignored).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum GridMode {
    /// Defaults for every axis not given by --Q, --gamma or --delta.
    Auto,
    /// --Q, --gamma and --delta must all be given.
    Explicit,
}

#[derive(Args, Debug, Serialize)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "auto")]
    grid: GridMode,
    #[arg(long = "Q", value_delimiter = ',')]
    q: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    gamma: Vec<f64>,
    /// Explicit delta values (standardized scale), any order.
    #[arg(long, value_delimiter = ',')]
    delta: Vec<f64>,
    /// Length of the automatic delta path.
    #[arg(long, default_value_t = 100)]
    path_len: usize,
    #[arg(long = "K", default_value_t = 10)]
    k: usize,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    kind: Kind,
    #[arg(long, default_value_t = 0.75)]
    eta: f64,
    #[arg(long, default_value_t = 0.02)]
    lambda: f64,
    /// p = 300, 50 replications and the full tuning grid.
    #[arg(long)]
    paper_mode: bool,
    /// Override the number of replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated subset of mcen, tmcen, sen.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["mcen".to_string(), "tmcen".into(), "sen".into()])]
    methods: Vec<String>,
    #[arg(long = "Q", value_delimiter = ',')]
    q: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    gamma: Vec<f64>,
    #[arg(long)]
    path_len: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(anyhow::Error),
    NotConverged(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

impl From<McenError> for Failure {
    fn from(e: McenError) -> Self {
        match e {
            McenError::MaxSweepsExceeded { .. } | McenError::SeparationDetected { .. } => {
                Failure::NotConverged(e.to_string())
            }
            e => Failure::Usage(e.into()),
        }
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Serialize)]
struct ResolvedConfig<'a, T: Serialize> {
    command: &'a str,
    threads: Option<usize>,
    args: &'a T,
}

fn manifest<T: Serialize>(command: &str, threads: Option<usize>, seed: u64, args: &T) -> anyhow::Result<Manifest> {
    Ok(Manifest::new(seed, &ResolvedConfig { command, threads, args })?)
}

fn load(args: &DataArgs) -> anyhow::Result<Dataset> {
    let file = fs::File::open(&args.data).with_context(|| format!("cannot open {}", args.data.display()))?;
    let table = read_table(file)?;
    Ok(table.split(&args.responses)?)
}

fn create_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

/// Writes fit.json and summary.txt; reports non-convergence after writing.
fn save_fit(model: &FittedModel, data: &Dataset, out: &Path, manifest: Manifest) -> CmdResult {
    let doc = FitDocument::new(model, data.covariates.clone(), data.responses.clone(), manifest)?;
    write(out.join("fit.json"), doc.to_json()? + "\n")?;
    let summary = doc.summary_text();
    write(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    if model.converged() {
        Ok(())
    } else {
        Err(Failure::NotConverged(format!(
            "solver did not converge; fit written to {} and flagged",
            out.join("fit.json").display()
        )))
    }
}

fn fit_model(kind: ResponseKind, data: &Dataset, triple: TuningTriple, seed: u64) -> Result<FittedModel, McenError> {
    match kind {
        ResponseKind::Gaussian => {
            let f = fit(data.x.view(), data.y.view(), triple, &McenSettings::default().with_seed(seed))?;
            Ok(FittedModel::Gaussian(f))
        }
        ResponseKind::Binomial => {
            let f = fit_binomial(data.x.view(), data.y.view(), triple, &BinomialSettings::default().with_seed(seed))?;
            Ok(FittedModel::Binomial(f))
        }
    }
}

fn cmd_fit(args: &FitArgs, threads: Option<usize>) -> CmdResult {
    let d = &args.data;
    let kind = ResponseKind::from(d.kind);
    let data = load(d)?;
    let delta = if args.delta == "max" {
        let (xs, ys, _) = standardize(data.x.view(), data.y.view(), kind)?;
        match kind {
            ResponseKind::Gaussian => delta_max(&xs, &ys),
            ResponseKind::Binomial => binomial_delta_max(&xs, &ys),
        }
    } else {
        args.delta
            .parse()
            .map_err(|_| anyhow::anyhow!("--delta must be a number or 'max', got '{}'", args.delta))?
    };
    let triple = TuningTriple::new(args.q, args.gamma, delta)?;
    let model = fit_model(kind, &data, triple, d.seed)?;
    create_out(&d.out)?;
    save_fit(&model, &data, &d.out, manifest("fit", threads, d.seed, args)?)
}

fn cmd_predict(args: &PredictArgs, threads: Option<usize>) -> CmdResult {
    let text = fs::read_to_string(&args.fit).with_context(|| format!("cannot read {}", args.fit.display()))?;
    let doc = FitDocument::from_json(&text)?;
    let model = doc.to_model()?;
    let file = fs::File::open(&args.data).with_context(|| format!("cannot open {}", args.data.display()))?;
    let x = read_table(file)?.covariates(&doc.covariates, &doc.responses)?;
    let pred = model.predict(x.view())?;
    create_out(&args.out)?;
    let path = args.out.join("predictions.csv");
    let file = fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    write_predictions(file, &manifest("predict", threads, doc.seed, args)?, &doc.responses, pred.view())?;
    Ok(())
}

#[derive(Serialize)]
struct CvBest<'a> {
    manifest: &'a Manifest,
    best: TuningTriple,
    best_criterion: f64,
    criterion: mcen::cv::CriterionKind,
    deltas: &'a [f64],
}

fn cv_grid(args: &CvArgs, r: usize) -> anyhow::Result<CvGrid> {
    let d = &args.data;
    let mut grid = CvGrid::auto(r, d.seed);
    grid.k = args.k;
    grid.delta = DeltaGrid::Auto { len: args.path_len, min_ratio: None };
    if args.grid == GridMode::Explicit && (args.q.is_empty() || args.gamma.is_empty() || args.delta.is_empty()) {
        anyhow::bail!("--grid explicit needs --Q, --gamma and --delta lists");
    }
    if !args.q.is_empty() {
        grid.q_values = args.q.clone();
    }
    if !args.gamma.is_empty() {
        grid.gamma_values = args.gamma.clone();
    }
    if !args.delta.is_empty() {
        grid.delta = DeltaGrid::Values(args.delta.clone());
    }
    Ok(grid)
}

fn cmd_cv(args: &CvArgs, threads: Option<usize>) -> CmdResult {
    let d = &args.data;
    let kind = ResponseKind::from(d.kind);
    let data = load(d)?;
    let grid = cv_grid(args, data.y.ncols())?;
    let result: CvResult = match kind {
        ResponseKind::Gaussian => cv_gaussian(data.x.view(), data.y.view(), &grid, &McenSettings::default().with_seed(d.seed))?,
        ResponseKind::Binomial => cv_binomial(data.x.view(), data.y.view(), &grid, &BinomialSettings::default().with_seed(d.seed))?,
    };
    let m = manifest("cv", threads, d.seed, args)?;
    create_out(&d.out)?;
    let mut table = Vec::new();
    write_csv_with_manifest(&mut table, &m, |w| result.write_csv(w))?;
    write(d.out.join("cv_table.csv"), table)?;
    let best = CvBest {
        manifest: &m,
        best: result.best,
        best_criterion: result.best_criterion,
        criterion: result.criterion_kind,
        deltas: &result.deltas,
    };
    write(d.out.join("cv_best.json"), serde_json::to_string_pretty(&best).context("serializing best triple")? + "\n")?;
    let model = fit_model(kind, &data, result.best, d.seed)?;
    save_fit(&model, &data, &d.out, m)
}

#[derive(Serialize)]
struct SimSummary<'a> {
    manifest: &'a Manifest,
    design: &'a SimDesign,
    grid: &'a SimGrid,
    summary: Vec<mcen::sim::MetricSummary>,
    failures: &'a [mcen::sim::SimFailure],
}

fn cmd_simulate(args: &SimulateArgs, threads: Option<usize>) -> CmdResult {
    let kind = ResponseKind::from(args.kind);
    let (mut design, mut grid) = if args.paper_mode {
        (SimDesign::full_scale(kind, args.eta, args.lambda, args.seed), SimGrid::full_scale())
    } else {
        (SimDesign::desk(kind, args.eta, args.lambda, args.seed), SimGrid::desk())
    };
    if let Some(reps) = args.reps {
        design.replications = reps;
    }
    if !args.q.is_empty() {
        grid.q_values = args.q.clone();
    }
    if !args.gamma.is_empty() {
        grid.gamma_values = args.gamma.clone();
    }
    if let Some(len) = args.path_len {
        grid.delta_len = len;
    }
    if let Some(k) = args.k {
        grid.k = k;
    }
    let methods = args
        .methods
        .iter()
        .map(|m| match m.to_ascii_lowercase().as_str() {
            "mcen" => Ok(Method::Mcen),
            "tmcen" => Ok(Method::Tmcen),
            "sen" => Ok(Method::Sen),
            other => Err(anyhow::anyhow!("unknown method '{other}'")),
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let result = run_replications(&design, &methods, &grid)?;
    for f in &result.failures {
        eprintln!("replication {} of {} failed: {}", f.replication, f.method.name(), f.message);
    }
    let m = manifest("simulate", threads, args.seed, args)?;
    create_out(&args.out)?;
    let mut csv = Vec::new();
    write_csv_with_manifest(&mut csv, &m, |w| result.write_csv(w))?;
    write(args.out.join("sim_results.csv"), csv)?;
    let summary = SimSummary {
        manifest: &m,
        design: &result.design,
        grid: &result.grid,
        summary: result.summary(),
        failures: &result.failures,
    };
    write(args.out.join("sim_summary.json"), serde_json::to_string_pretty(&summary).context("serializing summary")? + "\n")?;
    Ok(())
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, cli.threads),
        Command::Predict(a) => cmd_predict(a, cli.threads),
        Command::Cv(a) => cmd_cv(a, cli.threads),
        Command::Simulate(a) => cmd_simulate(a, cli.threads),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::NotConverged(msg)) => {
            eprintln!("non-convergence: {msg}");
            ExitCode::from(3)
        }
    }
}

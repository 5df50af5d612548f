use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use progression::forest::ForestConfig;
use progression::model::{FitOptions, FittedModel, Method, ModelFile};
use progression::simbench::{self, ExperimentOptions, ScenarioModel, ScenarioSpec, ShiftKind, ShiftSpec};
use progression::tails::MIN_K;

mod data;

use data::{check_readable, check_writable, fmt_float, read_table, write_output};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Input(_) => 2,
            Self::Fit(_) => 3,
            Self::Internal(_) => 4,
        }
    }
}

fn input_err(e: progression::Error) -> CliError {
    CliError::Input(e.to_string())
}

fn fit_err(e: progression::Error) -> CliError {
    CliError::Fit(e.to_string())
}

#[derive(Parser)]
#[command(name = "progression", version, about = "Regression with tail extrapolation beyond the training range")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on a CSV with a `y` column and write a model file.
    Fit(FitArgs),
    /// Append a `y_hat` column to a predictor CSV.
    Predict(PredictArgs),
    /// Write a seeded scenario sample (optionally from a shifted predictor law).
    Simulate(SimulateArgs),
    /// Run seeded fit-and-evaluate repetitions and write a results CSV.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct ForestArgs {
    /// Number of trees.
    #[arg(long, default_value_t = 500)]
    trees: usize,
    /// Minimum leaf size.
    #[arg(long, default_value_t = 5)]
    min_leaf: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ForestArgs {
    fn config(&self) -> Result<ForestConfig, CliError> {
        let cfg = ForestConfig { n_trees: self.trees, min_leaf: self.min_leaf, seed: self.seed, ..ForestConfig::default() };
        cfg.validate().map_err(input_err)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Where to write the model file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "progression-rf")]
    method: String,
    /// Tail order statistics; defaults to n/10 and must satisfy k < n/4.
    #[arg(long)]
    k: Option<usize>,
    /// Backfitting sweeps for the additive method.
    #[arg(long, default_value_t = 10)]
    max_sweeps: usize,
    #[command(flatten)]
    forest: ForestArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ShiftArgs {
    /// One of none, mean, variance, covariance.
    #[arg(long, default_value = "none")]
    shift: String,
    /// Mean offset c, scale factor s, or correlation rho.
    #[arg(long)]
    magnitude: Option<f64>,
    /// One-based predictor moved by a mean shift.
    #[arg(long, default_value_t = 1)]
    coord: usize,
}

impl ShiftArgs {
    fn spec(&self, scenario: &ScenarioSpec) -> Result<Option<ShiftSpec>, CliError> {
        if self.shift == "none" {
            if self.magnitude.is_some() {
                return Err(CliError::Input("--magnitude needs --shift".into()));
            }
            return Ok(None);
        }
        let kind: ShiftKind = self.shift.parse().map_err(input_err)?;
        let magnitude = self.magnitude.ok_or_else(|| CliError::Input(format!("--shift {} needs --magnitude", self.shift)))?;
        if self.coord == 0 || self.coord > scenario.model.dim() {
            return Err(CliError::Input(format!(
                "--coord must lie in 1..={} for scenario {}",
                scenario.model.dim(),
                scenario.model
            )));
        }
        let s = match kind {
            ShiftKind::Mean => ShiftSpec::mean(self.coord - 1, magnitude),
            ShiftKind::Variance => ShiftSpec::variance(magnitude),
            ShiftKind::Covariance => ShiftSpec::covariance(magnitude),
        };
        simbench::shift(scenario, &s).map_err(input_err)?;
        Ok(Some(s))
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: String,
    /// Sample size.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    shift: ShiftArgs,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scenario: String,
    /// Comma-separated methods; defaults to every method the scenario supports.
    #[arg(long)]
    method: Option<String>,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Training sample size per repetition.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 10)]
    max_sweeps: usize,
    #[arg(long, default_value_t = 200)]
    test_size: usize,
    /// Report runtime_ms as 0 so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
    #[command(flatten)]
    shift: ShiftArgs,
    #[command(flatten)]
    forest: ForestArgs,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn check_k(k: usize, n: usize, method: Method) -> Result<(), CliError> {
    if matches!(method, Method::BaselineRf | Method::BaselineLlf) {
        return Ok(());
    }
    if k < MIN_K {
        return Err(CliError::Input(format!("k = {k} is below the minimum of {MIN_K}")));
    }
    if 4 * k >= n {
        return Err(CliError::Input(format!("k = {k} must satisfy k < n/4 for n = {n}")));
    }
    if method == Method::ProgressionParametric && 8 * k > n {
        return Err(CliError::Input(format!("k = {k} must satisfy 8k <= n = {n} for {method}")));
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<(), CliError> {
    check_readable(&args.input)?;
    check_writable(&args.model)?;
    let method: Method = args.method.parse().map_err(input_err)?;
    let forest = args.forest.config()?;
    let table = read_table(&args.input)?;
    let y_col = table.column_index("y").ok_or_else(|| CliError::Input("input has no `y` column".into()))?;
    let predictors: Vec<String> = table.header.iter().filter(|h| *h != "y").cloned().collect();
    if predictors.is_empty() {
        return Err(CliError::Input("input has no predictor columns".into()));
    }
    if method.requires_univariate() && predictors.len() != 1 {
        return Err(CliError::Input(format!("{method} needs exactly one predictor, got {}", predictors.len())));
    }
    let n = table.rows.len();
    let k = args.k.unwrap_or(n / 10);
    check_k(k, n, method)?;

    let y: Vec<f64> = table.rows.iter().map(|r| r[y_col]).collect();
    let x: Vec<Vec<f64>> = table
        .rows
        .iter()
        .map(|r| r.iter().enumerate().filter(|(j, _)| *j != y_col).map(|(_, v)| *v).collect())
        .collect();
    let options = FitOptions { k, forest, max_sweeps: args.max_sweeps };
    let model = FittedModel::fit(method, &x, &y, &options).map_err(fit_err)?;
    let summary = model.summary(&predictors);
    let file = ModelFile::new(predictors, model);
    std::fs::write(&args.model, file.to_text())
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", args.model.display())))?;
    print!("{summary}");
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    check_readable(&args.model)?;
    check_readable(&args.input)?;
    if let Some(out) = &args.output {
        check_writable(out)?;
    }
    let text = std::fs::read_to_string(&args.model)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", args.model.display())))?;
    let file = ModelFile::from_text(&text).map_err(input_err)?;
    let table = read_table(&args.input)?;
    if table.column_index("y_hat").is_some() {
        return Err(CliError::Input("input already has a `y_hat` column".into()));
    }
    let cols = file
        .predictors
        .iter()
        .map(|name| {
            table.column_index(name).ok_or_else(|| {
                CliError::Input(format!(
                    "input lacks predictor `{name}`; the model expects {} predictors: {}",
                    file.predictors.len(),
                    file.predictors.join(", ")
                ))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = table.header.clone();
    header.push("y_hat".into());
    let internal = |e: csv::Error| CliError::Internal(e.to_string());
    writer.write_record(&header).map_err(internal)?;
    for (raw, row) in table.raw.iter().zip(&table.rows) {
        let x: Vec<f64> = cols.iter().map(|&j| row[j]).collect();
        let y_hat = file.model.predict(&x);
        if !y_hat.is_finite() {
            return Err(CliError::Internal(format!("non-finite prediction at x = {x:?}")));
        }
        let mut record = raw.clone();
        record.push_field(&fmt_float(y_hat));
        writer.write_record(&record).map_err(internal)?;
    }
    let bytes = writer.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
    let out = String::from_utf8(bytes).map_err(|e| CliError::Internal(e.to_string()))?;
    write_output(args.output.as_deref(), &out)
}

fn scenario_spec(name: &str, n: usize, seed: u64) -> Result<ScenarioSpec, CliError> {
    let model: ScenarioModel = name.parse().map_err(input_err)?;
    let spec = ScenarioSpec { n_train: n, ..ScenarioSpec::new(model, seed) };
    spec.validate().map_err(input_err)?;
    Ok(spec)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    if let Some(out) = &args.output {
        check_writable(out)?;
    }
    let spec = scenario_spec(&args.scenario, args.n, args.seed)?;
    let data = match args.shift.spec(&spec)? {
        None => simbench::generate(&spec).map_err(input_err)?,
        Some(s) => simbench::shift(&spec, &s).map_err(input_err)?.draw(spec.n_train, spec.seed),
    };
    let p = spec.model.dim();
    let mut out: String = (1..=p).map(|j| format!("x{j},")).collect();
    out.push_str("y,median\n");
    for ((x, y), m) in data.x.iter().zip(&data.y).zip(&data.median) {
        for v in x {
            out.push_str(&fmt_float(*v));
            out.push(',');
        }
        out.push_str(&format!("{},{}\n", fmt_float(*y), fmt_float(*m)));
    }
    write_output(args.output.as_deref(), &out)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    if let Some(out) = &args.output {
        check_writable(out)?;
    }
    if args.reps == 0 {
        return Err(CliError::Input("--reps must be positive".into()));
    }
    let spec = scenario_spec(&args.scenario, args.n, args.forest.seed)?;
    let shift = args.shift.spec(&spec)?;
    let methods: Vec<Method> = match &args.method {
        Some(list) => list.split(',').map(|m| m.trim().parse().map_err(input_err)).collect::<Result<_, _>>()?,
        None => Method::ALL.into_iter().filter(|m| spec.model.dim() == 1 || !m.requires_univariate()).collect(),
    };
    if let Some(m) = methods.iter().find(|m| m.requires_univariate() && spec.model.dim() != 1) {
        return Err(CliError::Input(format!("{m} needs a univariate scenario, {} has {}", spec.model, spec.model.dim())));
    }
    let k = args.k.unwrap_or(spec.n_train / 10);
    for &m in &methods {
        check_k(k, spec.n_train, m)?;
    }
    let options = ExperimentOptions {
        k: Some(k),
        forest: args.forest.config()?,
        max_sweeps: args.max_sweeps,
        test_size: args.test_size,
        record_timing: !args.no_timing,
    };
    let rows = simbench::run_experiment(&spec, shift, &methods, args.reps, &options).map_err(fit_err)?;
    write_output(args.output.as_deref(), &simbench::results_to_csv(&rows))
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("PROGRESSION_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("PROGRESSION_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Internal(e.to_string()))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    configure_threads()?;
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("progression: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! `errlab`: simulations, experiment grids, variance theory and reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use errlab_core::analysis::{run_analysis, AnalysisConfig};
use errlab_core::datagen::{generate, make_preset_spec, PresetScenario, ScenarioSpec};
use errlab_core::experiments::{aggregate_path_for, run_budget_tradeoff, run_experiment, ExperimentConfig, ResultTable};
use errlab_core::ingest::{inject_missing_day, load_table, write_table, TableSchema};
use errlab_core::randmath::RngState;
use errlab_core::report::render_report_file;
use errlab_core::theory::{
    averaged_error_variance, conditional_truth_variance, equivalent_lognormal_variance, lemma1_check,
    printed_reduced_variance, Transform,
};
use errlab_core::Error;
use serde::Deserialize;

const SEED_ENV: &str = "ERRLAB_SEED";

#[derive(Parser)]
#[command(name = "errlab", version, about = "Measurement-error simulation lab: neural networks versus OLS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one dataset from a scenario and write it as CSV plus schema
    Simulate(SimulateArgs),
    /// Run an experiment grid (preparations × models × days × replications)
    Run(RunArgs),
    /// Run a grid at a fixed budget of n × days observations
    Tradeoff(TradeoffArgs),
    /// Print averaged-error and equivalent single-measurement variances
    Theory(TheoryArgs),
    /// Monte Carlo check: transform of the average versus average of transforms
    Lemma(LemmaArgs),
    /// Fit the six-model menu to a two-day table and score it on held-out rows
    Analyze(AnalyzeArgs),
    /// Render a results CSV as an SVG line chart (train and test panels)
    Report(ReportArgs),
}

#[derive(Args)]
struct SeedArg {
    /// Base seed; overrides ERRLAB_SEED, which overrides the config file
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON: a full spec or a tag such as {"preset": "sim1", "days": 2}
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for data.csv, schema.json and spec.json
    #[arg(long)]
    out: PathBuf,
    /// Override the number of individuals
    #[arg(long)]
    n: Option<usize>,
    /// Fraction of individuals whose second day is removed
    #[arg(long, default_value_t = 0.0)]
    missing_day2: f64,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON
    #[arg(long)]
    config: PathBuf,
    /// Results CSV path (default: config `output`, else results.csv)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Aggregate CSV path (default: config `aggregate_output`, else <out>_aggregate.csv)
    #[arg(long)]
    aggregate_out: Option<PathBuf>,
    /// Override the number of replications
    #[arg(long)]
    replications: Option<usize>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct TradeoffArgs {
    /// Total observations n × days held fixed across the grid
    #[arg(long)]
    budget: usize,
    /// Experiment config JSON
    #[arg(long)]
    config: PathBuf,
    /// Replicate counts, comma separated (default: the config's days)
    #[arg(long, value_delimiter = ',')]
    days: Option<Vec<usize>>,
    /// Results CSV path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Aggregate CSV path
    #[arg(long)]
    aggregate_out: Option<PathBuf>,
    /// Override the number of replications
    #[arg(long)]
    replications: Option<usize>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct TheoryArgs {
    /// Single-measurement error variance σ²
    #[arg(long)]
    sigma2: f64,
    /// Number of replicates averaged
    #[arg(long)]
    k: usize,
    /// Usual-intake variance σ_X²; adds var(X | mean of replicates), taking σ² as σ_V²
    #[arg(long)]
    sigma_x2: Option<f64>,
}

#[derive(Args)]
struct LemmaArgs {
    /// Transform: exp, square, cube or identity
    #[arg(long = "f", value_parser = parse_transform)]
    f: Transform,
    /// Error standard deviation σ
    #[arg(long)]
    sigma: f64,
    /// Number of replicates (at least 2)
    #[arg(long)]
    k: usize,
    /// Monte Carlo draws (at least 100000)
    #[arg(long, default_value_t = 1_000_000)]
    draws: u64,
    /// Location Ω of the replicates
    #[arg(long, default_value_t = 0.0)]
    omega: f64,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Delimited data file
    #[arg(long)]
    data: PathBuf,
    /// Table schema JSON
    #[arg(long)]
    schema: PathBuf,
    /// Analysis config JSON (default settings when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the six-row MSE table as CSV
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the backward-selection path as CSV
    #[arg(long)]
    path_out: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct ReportArgs {
    /// Results CSV written by `run` or `tradeoff`
    #[arg(long)]
    results: PathBuf,
    /// Output SVG path
    #[arg(long)]
    out: PathBuf,
}

fn parse_transform(s: &str) -> Result<Transform, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown transform `{s}` (expected exp, square, cube or identity)"))
}

enum Failure {
    Usage(String),
    Data(String),
    Partial(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::PartialFailure { .. } => Failure::Partial(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

/// Flag, then `ERRLAB_SEED`, then `None` (the config decides).
fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{SEED_ENV} must be a 64-bit unsigned decimal integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn simulate(a: SimulateArgs) -> Outcome {
    let value: serde_json::Value = read_json(&a.spec)?;
    let bad = |e: serde_json::Error| Failure::Data(format!("{}: {e}", a.spec.display()));
    let mut spec = if value.get("preset").is_some() {
        make_preset_spec(serde_json::from_value::<PresetScenario>(value).map_err(bad)?)?
    } else {
        serde_json::from_value::<ScenarioSpec>(value).map_err(bad)?
    };
    if let Some(n) = a.n {
        spec.n = n;
    }
    if let Some(seed) = resolve_seed(a.seed.seed)? {
        spec.seed = RngState::new(seed);
    }
    spec.validate()?;
    let mut ds = generate::<f64>(&spec, spec.seed)?;
    if a.missing_day2 > 0.0 {
        ds = inject_missing_day(&ds, 1, a.missing_day2, spec.seed.substream(99))?;
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Data(format!("{}: {e}", a.out.display())))?;
    let schema = TableSchema::for_dataset(&ds);
    let data_path = a.out.join("data.csv");
    let file = std::fs::File::create(&data_path).map_err(|e| Failure::Data(format!("{}: {e}", data_path.display())))?;
    write_table(&ds, &schema, file)?;
    let write = |name: &str, text: String| {
        let p = a.out.join(name);
        std::fs::write(&p, text + "\n").map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
    };
    write("schema.json", serde_json::to_string_pretty(&schema).expect("schema serializes"))?;
    write("spec.json", serde_json::to_string_pretty(&spec).expect("spec serializes"))?;
    let absent = (0..ds.n()).filter(|&i| (1..ds.k()).any(|j| !ds.is_present(i, j))).count();
    println!(
        "wrote {} rows ({} with a missing day) to {}",
        ds.n(),
        absent,
        data_path.display()
    );
    Ok(())
}

fn load_experiment(path: &Path, seed: Option<u64>, replications: Option<usize>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = resolve_seed(seed)? {
        cfg.seed = Some(seed);
    }
    if replications.is_some() {
        cfg.replications = replications;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish(table: ResultTable, cfg: &ExperimentConfig, out: Option<PathBuf>, aggregate_out: Option<PathBuf>) -> Outcome {
    let out = out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("results.csv"));
    let agg = aggregate_out
        .or_else(|| cfg.aggregate_output.clone())
        .unwrap_or_else(|| aggregate_path_for(&out));
    table.save(&out, &agg)?;
    println!(
        "{:<14} {:>4} {:>7} {:<22} {:<18} {:>11} {:>11} {:>9}",
        "scenario", "days", "n", "preparation", "model", "train_mse", "test_mse", "test_se"
    );
    for a in table.aggregate() {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<14} {:>4} {:>7} {:<22} {:<18} {:>11} {:>11} {:>9}",
            a.scenario,
            a.days,
            a.n,
            a.preparation,
            a.model,
            f(a.train_mse_mean),
            f(a.test_mse_mean),
            f(a.test_mse_se)
        );
    }
    println!("results: {}\naggregates: {}", out.display(), agg.display());
    table.check()?;
    Ok(())
}

fn run(a: RunArgs) -> Outcome {
    let cfg = load_experiment(&a.config, a.seed.seed, a.replications)?;
    let table = run_experiment(&cfg)?;
    finish(table, &cfg, a.out, a.aggregate_out)
}

fn tradeoff(a: TradeoffArgs) -> Outcome {
    let cfg = load_experiment(&a.config, a.seed.seed, a.replications)?;
    let days = a.days.unwrap_or_else(|| cfg.days());
    let table = run_budget_tradeoff(a.budget, &days, &cfg)?;
    finish(table, &cfg, a.out, a.aggregate_out)
}

fn theory(a: TheoryArgs) -> Outcome {
    if !(a.sigma2 > 0.0) || !a.sigma2.is_finite() {
        return Err(Failure::Usage(format!("--sigma2 must be positive, got {}", a.sigma2)));
    }
    if a.k == 0 {
        return Err(Failure::Usage("--k must be at least 1".into()));
    }
    println!("sigma2                      {}", a.sigma2);
    println!("k                           {}", a.k);
    println!("sigma2/k                    {}", averaged_error_variance(a.sigma2, a.k));
    if a.k >= 2 {
        println!("sigma2_reduced              {}", equivalent_lognormal_variance(a.sigma2, a.k)?);
        println!("sigma2_reduced_printed      {}", printed_reduced_variance(a.sigma2, a.k));
    } else {
        println!("sigma2_reduced              n/a (needs k >= 2)");
    }
    if let Some(sx) = a.sigma_x2 {
        if !(sx > 0.0) {
            return Err(Failure::Usage(format!("--sigma-x2 must be positive, got {sx}")));
        }
        println!("var(X | mean replicate)     {}", conditional_truth_variance(a.sigma2, sx, a.k));
    }
    Ok(())
}

fn lemma(a: LemmaArgs) -> Outcome {
    let seed = resolve_seed(a.seed.seed)?.unwrap_or(20_240_601);
    let check = lemma1_check(a.f, a.omega, a.sigma, a.k, a.draws, RngState::new(seed))?;
    let show = |name: &str, r: &errlab_core::theory::VarianceReport| {
        println!("{name:<22} {:.6e} ± {:.2e}  (exact {:.6e})", r.monte_carlo, r.mc_standard_error, r.analytic);
    };
    show("var f(mean)", &check.transform_of_average);
    show("var mean f", &check.average_of_transform);
    println!("gap (SE)               {:.2}", check.gap_se);
    println!("inequality holds       {}", check.holds);
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Outcome {
    let schema = TableSchema::load(&a.schema)?;
    let mut cfg = match &a.config {
        Some(p) => read_json::<AnalysisConfig>(p)?,
        None => AnalysisConfig::default(),
    };
    if let Some(seed) = resolve_seed(a.seed.seed)? {
        cfg.seed = seed;
    }
    let table = load_table::<f64>(&a.data, &schema)?;
    println!(
        "read {} rows: kept {}, dropped {} with missing values, {} by filters",
        table.rows_read,
        table.dataset.n(),
        table.dropped_missing,
        table.dropped_filtered
    );
    let report = run_analysis(&table.dataset, &cfg)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "train {} / test {} rows; {} second days imputed",
        report.train_rows, report.test_rows, report.imputed_rows
    );
    println!("{:<48} {:>12} {:>12}", "model", "train_mse", "test_mse");
    for r in &report.rows {
        let name = match (r.model.as_str(), r.size) {
            ("nn_average", _) => "Neural Network (Averaged)".to_string(),
            ("nn_concatenate", _) => "Neural Network (Concatenated)".to_string(),
            ("lr_average", _) => "Linear Regression (Averaged)".to_string(),
            ("lr_concatenate", _) => "Linear Regression (Concatenated)".to_string(),
            (_, Some(s)) => format!("Linear Regression (Backwards Selection, Size={s})"),
            (m, None) => m.to_string(),
        };
        println!("{name:<48} {:>12.4} {:>12.4}", r.train_mse, r.test_mse);
    }
    println!(
        "cv_rmse: full model ({} terms) {:.6}, optimum ({} terms) {:.6}, parsimonious ({} terms) {:.6}",
        report.full_size,
        report.full_cv_rmse,
        report.optimal_size,
        report.optimal_cv_rmse,
        report.parsimonious_size,
        report.parsimonious_cv_rmse
    );
    let create = |p: &Path| std::fs::File::create(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())));
    if let Some(p) = &a.out {
        report.write_csv(create(p)?)?;
    }
    if let Some(p) = &a.path_out {
        report.path.write_csv(create(p)?)?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Outcome {
    render_report_file(&a.results, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Run(a) => run(a),
        Command::Tradeoff(a) => tradeoff(a),
        Command::Theory(a) => theory(a),
        Command::Lemma(a) => lemma(a),
        Command::Analyze(a) => analyze(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("errlab: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("errlab: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Partial(m)) => {
            eprintln!("errlab: {m}; results were still written");
            ExitCode::from(3)
        }
    }
}

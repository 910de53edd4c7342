//! Command-line front end for the cross-fitting pipeline.
//!
//! Subcommands:
//!
//! * `generate` renders a synthetic dataset plus its ground truth;
//! * `fit` cross-fits nuisances on a dataset and writes a run directory;
//! * `report compare` builds the comparison bundle between two runs;
//! * `inspect scores` prints rows and summary lines from a run.
//!
//! One config file (TOML or JSON, same shape either way) drives every
//! subcommand; flags override file values. Each command writes the fully
//! resolved config next to its outputs, never mutates its inputs, and
//! produces byte-identical files when rerun with the same config and
//! seed, regardless of `--threads`.
//!
//! Exit codes: 2 config error, 3 data error, 4 training or numeric
//! error, 5 violated internal invariant.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use drcf_core::crossfit::{run_crossfit, CrossfitConfig, CrossfitResult};
use drcf_core::data::{load_dataset, ColumnSchema};
use drcf_core::dr::Estimand;
use drcf_core::report::{
    cate_quantile_curve, compare_runs, write_comparison_bundle, CompareOptions, EstimatePair,
    RunComparison,
};
use drcf_core::synthetic::{
    generate, generated_schema, write_dataset_csv, write_dataset_jsonl, write_truth_csv,
    SyntheticConfig,
};
use drcf_core::{Error, Result};

/// One config file drives every subcommand; sections a command does not
/// need are simply ignored by it.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    /// Synthetic-data settings, used by `generate`.
    synthetic: SyntheticConfig,
    /// Estimation settings, used by `fit`.
    crossfit: CrossfitConfig,
    /// How to read data files. When absent, `fit` assumes the layout
    /// `generate` writes for the configured feature count.
    schema: Option<ColumnSchema>,
    /// Comparison settings, used by `report compare`.
    report: CompareOptions,
    /// Fallback output directory when a command gets no `--out`.
    output_dir: Option<PathBuf>,
}

#[derive(Parser)]
#[command(
    name = "drcf",
    version,
    about = "Doubly robust cross-fitting for treatment effects from tabular or text covariates"
)]
struct Cli {
    /// Worker threads for fold-level parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Generate(GenerateArgs),
    /// Cross-fit nuisance models and estimate effects from a dataset.
    Fit(FitArgs),
    /// Reporting over finished run directories.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Inspection helpers for run directories.
    #[command(subcommand)]
    Inspect(InspectCommand),
}

#[derive(Args)]
struct GenerateArgs {
    /// Run-config file (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for dataset and truth files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the generation seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of units.
    #[arg(long)]
    n_units: Option<usize>,
    /// Also write dataset.jsonl next to dataset.csv.
    #[arg(long)]
    jsonl: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Run-config file (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data file to estimate from (.csv, .jsonl, or .ndjson).
    #[arg(long)]
    data: PathBuf,
    /// Run directory to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the cross-fitting seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the fold count.
    #[arg(long)]
    k_folds: Option<usize>,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Compare two run directories over the same units.
    Compare(CompareArgs),
}

#[derive(Args)]
struct CompareArgs {
    /// Run-config file (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// First run directory.
    #[arg(long)]
    a: PathBuf,
    /// Second run directory.
    #[arg(long)]
    b: PathBuf,
    /// Directory for the comparison bundle.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Display label for the first run.
    #[arg(long)]
    label_a: Option<String>,
    /// Display label for the second run.
    #[arg(long)]
    label_b: Option<String>,
}

#[derive(Subcommand)]
enum InspectCommand {
    /// Print score rows and summary statistics from a run directory.
    Scores(ScoresArgs),
}

#[derive(Args)]
struct ScoresArgs {
    /// Run directory holding scores.csv.
    #[arg(long)]
    run: PathBuf,
    /// Rows to print before the summary (0 = summary only).
    #[arg(long, default_value_t = 10)]
    limit: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: could not size the thread pool: {e}");
            return ExitCode::from(5);
        }
    }
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Report(ReportCommand::Compare(args)) => cmd_report_compare(args),
        Command::Inspect(InspectCommand::Scores(args)) => cmd_inspect_scores(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Maps error families onto the documented exit codes.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parameter(_) => 2,
        Error::Schema(_)
        | Error::Validation { .. }
        | Error::EmptyDataset
        | Error::Coverage(_)
        | Error::Comparison(_)
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_) => 3,
        Error::Numeric(_)
        | Error::Singular(_)
        | Error::Shape { .. }
        | Error::Estimation(_)
        | Error::DegenerateBlp
        | Error::Provider { .. }
        | Error::Orchestration { .. } => 4,
        Error::Invariant(_) => 5,
    }
}

/// Reads the config file, accepting TOML and JSON interchangeably. A
/// missing `--config` means all defaults.
fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let looks_json = matches!(path.extension().and_then(|e| e.to_str()), Some("json"))
        || text.trim_start().starts_with('{');
    if looks_json {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn resolve_out(flag: Option<PathBuf>, config: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| config.output_dir.clone()).ok_or_else(|| {
        Error::Config("no output directory: pass --out or set output_dir in the config".into())
    })
}

/// Writes the fully resolved configuration into the output directory so
/// a run can be reproduced from its artifacts alone.
fn write_resolved_config(config: &RunConfig, dir: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    std::fs::write(dir.join("run_config.json"), text)?;
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut config = load_run_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.synthetic.seed = seed;
    }
    if let Some(n) = args.n_units {
        config.synthetic.n_units = n;
    }
    let out = resolve_out(args.out, &config)?;
    std::fs::create_dir_all(&out)?;

    let (dataset, truth) = generate(&config.synthetic)?;
    write_dataset_csv(&dataset, &out.join("dataset.csv"))?;
    if args.jsonl {
        write_dataset_jsonl(&dataset, &out.join("dataset.jsonl"))?;
    }
    // Ground truth goes into its own file so estimation runs, which take
    // an explicit data path, can never accidentally consume it.
    write_truth_csv(&dataset, &truth, &out.join("truth.csv"))?;
    write_resolved_config(&config, &out)?;

    println!(
        "wrote {} units to {} (dataset.csv{} + truth.csv)",
        dataset.len(),
        out.display(),
        if args.jsonl { " + dataset.jsonl" } else { "" },
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let mut config = load_run_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.crossfit.seed = seed;
    }
    if let Some(k) = args.k_folds {
        config.crossfit.k_folds = k;
    }
    // Pure-config mistakes should surface before we touch the data file.
    config.crossfit.validate()?;
    if !args.data.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("data file {} does not exist", args.data.display()),
        )));
    }
    let schema = config
        .schema
        .clone()
        .unwrap_or_else(|| generated_schema(config.synthetic.n_features));
    let dataset = load_dataset(&args.data, &schema)?;
    let result = run_crossfit(&dataset, &config.crossfit)?;

    let out = resolve_out(args.out, &config)?;
    result.save_dir(&out)?;
    config.schema = Some(schema);
    write_resolved_config(&config, &out)?;

    println!(
        "{:<8} {:>12} {:>12} {:>12} {:>12} {:>8}",
        "estimand", "point", "std_error", "ci_low", "ci_high", "n"
    );
    for est in &result.estimates {
        let name = match &est.estimand {
            Estimand::Ate => "ATE",
            Estimand::Atet => "ATET",
            Estimand::Gate { .. } => continue,
        };
        println!(
            "{:<8} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>8}",
            name, est.point, est.std_error, est.ci_low, est.ci_high, est.n_effective
        );
    }
    let n_gates = result
        .estimates
        .iter()
        .filter(|e| matches!(e.estimand, Estimand::Gate { .. }))
        .count();
    println!(
        "{n_gates} group estimates and {} scored units in {}",
        result.score_rows.len(),
        out.display()
    );
    Ok(())
}

fn cmd_report_compare(args: CompareArgs) -> Result<()> {
    let mut config = load_run_config(args.config.as_deref())?;
    if let Some(label) = args.label_a {
        config.report.label_a = label;
    }
    if let Some(label) = args.label_b {
        config.report.label_b = label;
    }
    let run_a = CrossfitResult::load_dir(&args.a)?;
    let run_b = CrossfitResult::load_dir(&args.b)?;
    let comparison = compare_runs(&run_a, &run_b, &config.report)?;

    let out = resolve_out(args.out, &config)?;
    write_comparison_bundle(&comparison, &out)?;
    write_resolved_config(&config, &out)?;

    print_comparison_summary(&comparison);
    println!("comparison bundle in {}", out.display());
    Ok(())
}

fn print_comparison_summary(c: &RunComparison) {
    let pair = |name: &str, p: &EstimatePair| {
        println!(
            "{:<5} {}={:.6} [{:.6}, {:.6}]  {}={:.6} [{:.6}, {:.6}]  ci_overlap={}",
            name,
            c.label_a,
            p.a.point,
            p.a.ci_low,
            p.a.ci_high,
            c.label_b,
            p.b.point,
            p.b.ci_low,
            p.b.ci_high,
            p.ci_overlap
        );
    };
    pair("ATE", &c.ate);
    pair("ATET", &c.atet);
    match &c.gate_table {
        Some(t) => println!(
            "gate ranks over {} shared groups: pearson={:.4} spearman={:.4}",
            t.rows.len(),
            t.pearson,
            t.spearman
        ),
        None => println!("gate ranks: fewer than 2 shared groups"),
    }
    let fmt_opt = |v: &Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    println!(
        "cate agreement: pearson={} spearman={}",
        fmt_opt(&c.cate_pearson),
        fmt_opt(&c.cate_spearman)
    );
    println!(
        "lift of {}-ranked targeting against {} gains: area ratio raw={} above_diagonal={}",
        c.label_a,
        c.label_b,
        fmt_opt(&c.area_ratio_raw),
        fmt_opt(&c.area_ratio_above_diagonal)
    );
}

fn cmd_inspect_scores(args: ScoresArgs) -> Result<()> {
    let result = CrossfitResult::load_dir(&args.run)?;
    let rows = &result.score_rows;
    if rows.is_empty() {
        println!("run has no score rows");
        return Ok(());
    }
    let shown = args.limit.min(rows.len());
    if shown > 0 {
        println!(
            "{:<12} {:>4} {:>5} {:>10} {:>10} {:>12} {:>12} {:>12}",
            "unit_id", "fold", "treat", "outcome", "mu_hat", "theta_tilde", "dr_label", "cate"
        );
        for row in &rows[..shown] {
            println!(
                "{:<12} {:>4} {:>5} {:>10.6} {:>10.6} {:>12.6} {:>12.6} {:>12.6}",
                row.unit_id,
                row.fold,
                u8::from(row.treatment),
                row.outcome,
                row.mu_hat,
                row.theta_tilde,
                row.dr_label,
                row.cate
            );
        }
        println!("{shown} of {} rows shown", rows.len());
    }

    let treated = rows.iter().filter(|r| r.treatment).count();
    let degenerate = result
        .manifest
        .folds
        .iter()
        .filter(|f| f.blp_degenerate)
        .count();
    println!(
        "units={} folds={} treated={} ({:.1}%) degenerate_folds={} nuisances={:?}",
        rows.len(),
        result.manifest.config.k_folds,
        treated,
        100.0 * treated as f64 / rows.len() as f64,
        degenerate,
        result.manifest.nuisance_source
    );
    let cates: Vec<f64> = rows.iter().map(|r| r.cate).collect();
    let quartiles = cate_quantile_curve(&cates, 5)?;
    let formatted: Vec<String> = quartiles
        .iter()
        .map(|p| format!("p{:.0}={:.6}", p.quantile * 100.0, p.value))
        .collect();
    println!("cate quantiles: {}", formatted.join(" "));
    Ok(())
}

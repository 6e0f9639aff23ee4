use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use facebench::eval::EvalCategory;
use facebench::experiment::{run_experiment, sweep_dimensionality, ExperimentConfig, ResultBundle};
use facebench::fusion::{
    fuse, weights_method1, weights_method2, AccuracySummary, CategoryWinTable, FusionWeights,
    Normalization, ScoreTable,
};
use facebench::report::{emit_reports, ReportOptions};

const OUTPUT_ENV: &str = "FACEBENCH_OUTPUT_DIR";

#[derive(Parser)]
#[command(
    name = "facebench",
    version,
    about = "Subspace face-recognition benchmark"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its bundle and reports.
    Run { config: PathBuf },
    /// Re-emit reports from a saved bundle.
    Report {
        bundle: PathBuf,
        /// Output directory (defaults to the bundle's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank-1 accuracy against retained dimensionality.
    Sweep {
        config: PathBuf,
        /// Inclusive range, `a..b`.
        #[arg(long = "t")]
        range: String,
    },
    /// Fuse score tables (CSV) with the weighted sum rule.
    Fuse {
        #[arg(required = true)]
        tables: Vec<PathBuf>,
        #[arg(long, value_enum)]
        weights: WeightArg,
        /// Method 2: rank-1 accuracies in percent, comma separated.
        #[arg(long, value_delimiter = ',')]
        accuracies: Vec<f64>,
        /// Method 1: `category=tag` for each of the five categories.
        #[arg(long, value_delimiter = ',')]
        wins: Vec<String>,
        /// Explicit weights, comma separated.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Write the fused table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightArg {
    Method1,
    Method2,
    Explicit,
}

fn output_dir(config: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = std::env::var_os(OUTPUT_ENV) {
        return PathBuf::from(dir);
    }
    match &config.output_dir {
        Some(dir) => config.resolve_path(dir),
        None => config.resolve_path(Path::new("facebench-out")),
    }
}

fn parse_range(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| anyhow!("range must look like a..b, got `{s}`"))?;
    let lo = a
        .trim()
        .parse()
        .with_context(|| format!("bad range start `{a}`"))?;
    let hi = b
        .trim()
        .trim_start_matches('=')
        .parse()
        .with_context(|| format!("bad range end `{b}`"))?;
    Ok((lo, hi))
}

fn cmd_run(config_path: &Path) -> Result<()> {
    let config = ExperimentConfig::load(config_path).context("config")?;
    let out = run_experiment(&config).context("run")?;
    let dir = output_dir(&config);
    fs::create_dir_all(&dir).with_context(|| format!("output: {}", dir.display()))?;
    out.bundle
        .save(&dir.join("bundle.json"))
        .context("output")?;
    let timings = serde_json::to_string_pretty(&out.timings)?;
    fs::write(dir.join("timings.json"), timings).context("output")?;
    let files = emit_reports(&out.bundle, &dir, ReportOptions::from_bundle(&out.bundle))
        .context("report")?;
    print!("{}", facebench::report::rank1_text(&out.bundle));
    eprintln!("wrote {} files to {}", files.len() + 2, dir.display());
    Ok(())
}

fn cmd_report(bundle_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let bundle = ResultBundle::load(bundle_path).context("bundle")?;
    let dir = match (out, std::env::var_os(OUTPUT_ENV)) {
        (Some(d), _) => d,
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => bundle_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    };
    let files =
        emit_reports(&bundle, &dir, ReportOptions::from_bundle(&bundle)).context("report")?;
    eprintln!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

fn cmd_sweep(config_path: &Path, range: &str) -> Result<()> {
    let (lo, hi) = parse_range(range).context("sweep")?;
    let config = ExperimentConfig::load(config_path).context("config")?;
    let report = sweep_dimensionality(&config, lo, hi).context("sweep")?;
    let dir = output_dir(&config);
    fs::create_dir_all(&dir).with_context(|| format!("output: {}", dir.display()))?;
    let csv = report.to_csv();
    fs::write(dir.join("sweep.csv"), &csv).context("output")?;
    print!("{csv}");
    Ok(())
}

fn cmd_fuse(
    paths: &[PathBuf],
    method: WeightArg,
    accuracies: Vec<f64>,
    wins: &[String],
    values: Vec<f64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let tables = paths
        .iter()
        .map(|p| ScoreTable::read_csv(p).with_context(|| format!("input: {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let tags: Vec<String> = tables.iter().map(|t| t.classifier.clone()).collect();
    let weights = match method {
        WeightArg::Method2 => {
            if accuracies.len() != tables.len() {
                bail!("weights: need one accuracy per table");
            }
            weights_method2(&AccuracySummary::new(accuracies)?).context("weights")?
        }
        WeightArg::Method1 => {
            let mut winners = BTreeMap::new();
            for w in wins {
                let (cat, tag) = w
                    .split_once('=')
                    .ok_or_else(|| anyhow!("weights: win `{w}` is not category=tag"))?;
                let cat: EvalCategory = cat.parse().map_err(|e: String| anyhow!("weights: {e}"))?;
                winners.insert(cat, tag.to_string());
            }
            weights_method1(&CategoryWinTable::new(winners)?, &tags).context("weights")?
        }
        WeightArg::Explicit => FusionWeights::new(values).context("weights")?,
    };
    let normalized: Vec<ScoreTable> = tables
        .iter()
        .map(|t| t.normalized(&Normalization::PerProbe))
        .collect();
    let fused = fuse(&normalized, &weights).context("fuse")?;
    let csv = fused.to_csv();
    match out {
        Some(p) => fs::write(&p, csv).with_context(|| format!("output: {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Run { config } => cmd_run(&config),
        Command::Report { bundle, out } => cmd_report(&bundle, out),
        Command::Sweep { config, range } => cmd_sweep(&config, &range),
        Command::Fuse {
            tables,
            weights,
            accuracies,
            wins,
            values,
            out,
        } => cmd_fuse(&tables, weights, accuracies, &wins, values, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

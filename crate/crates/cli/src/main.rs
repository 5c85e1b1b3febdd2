//! `bilateral`: run seeded market experiments and inspect their output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bilateral_core::harness::{
    audit_output, compare, ingest_prices, initial_curves, parse_config, read_trajectory,
    run_experiment_with, summarize_trajectory, ColumnSelector, ExperimentConfig, HarnessError,
    RunOptions,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bilateral", version, about = "Bilateral power market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every session of an experiment config and write its output files
    Run {
        config: PathBuf,
        /// Worker threads; 1 runs serially. Output does not depend on it.
        #[arg(long, env = "BILATERAL_WORKERS")]
        workers: Option<usize>,
        /// Override `output_dir` from the config
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the initial supply and demand curves of each session and print their crossings
    Curves {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise a trajectory file, or audit a whole output directory
    Stats {
        path: PathBuf,
        #[command(flatten)]
        windows: Windows,
    },
    /// Load a price series from a delimited file and report what was read
    Ingest {
        file: PathBuf,
        /// Column name or zero-based index; defaults to a `price` column
        #[arg(long, default_value = "auto")]
        column: ColumnSelector,
    },
    /// Compare the distributions of two price series
    Compare {
        model: PathBuf,
        external: PathBuf,
        #[arg(long, default_value = "auto")]
        model_column: ColumnSelector,
        #[arg(long, default_value = "auto")]
        external_column: ColumnSelector,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        bin_width: f64,
    },
}

#[derive(Args)]
struct Windows {
    #[arg(long, default_value_t = RunOptions::default().early_frac)]
    early_frac: f64,
    #[arg(long, default_value_t = RunOptions::default().late_frac)]
    late_frac: f64,
    #[arg(long, default_value_t = RunOptions::default().onset_step)]
    onset_step: u64,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_config(path: &Path, out: Option<PathBuf>) -> Result<ExperimentConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut cfg = parse_config(&text)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

fn run(config: &Path, workers: Option<usize>, out: Option<PathBuf>) -> Result<(), HarnessError> {
    let cfg = load_config(config, out)?;
    let summary = run_experiment_with(&cfg, workers.or(cfg.options.workers))?;
    println!("session  steps      trades   termination        mean     max       ratio");
    for s in &summary.sessions {
        println!(
            "{:>7}  {:>9}  {:>7}  {:<17}  {:>7.3}  {:>8.3}  {:>6}",
            s.session,
            s.total_steps,
            s.trades,
            s.termination.to_string(),
            s.mean_price,
            s.max_price,
            fmt_opt(s.divergence_ratio),
        );
    }
    let p = &summary.pooled;
    println!(
        "pooled: {} trades, mean {:.3}, variance {:.3}, max {:.3}, median steps {}",
        p.trades, p.mean_price, p.price_variance, p.max_price, p.median_total_steps
    );
    println!(
        "sellers: {:.2}% unsold, {:.2}% with positive budget",
        100.0 * p.unsold_fraction,
        100.0 * p.positive_budget_fraction
    );
    println!("output written to {}", cfg.output_dir.display());
    Ok(())
}

fn curves(config: &Path, out: Option<PathBuf>) -> Result<(), HarnessError> {
    let cfg = load_config(config, out)?;
    let crossings = initial_curves(&cfg)?;
    for (i, c) in crossings.iter().enumerate() {
        println!(
            "session {i:03}: price {:.3} at {} units (demand {:.3}, supply {:.3})",
            c.price, c.quantity, c.demand_price, c.supply_price
        );
    }
    let mean = crossings.iter().map(|c| c.price).sum::<f64>() / crossings.len() as f64;
    println!("mean crossing price {mean:.3}");
    Ok(())
}

/// Returns whether the audited directory was consistent.
fn stats(path: &Path, w: &Windows) -> Result<bool, HarnessError> {
    if path.is_dir() {
        let mismatches = audit_output(path, w.early_frac, w.late_frac, w.onset_step)?;
        for m in &mismatches {
            println!(
                "session {:03} {}: stored {} recomputed {}",
                m.session, m.field, m.stored, m.recomputed
            );
        }
        println!("{} mismatches", mismatches.len());
        return Ok(mismatches.is_empty());
    }
    let traj = read_trajectory(path)?;
    let t = summarize_trajectory(&traj, w.early_frac, w.late_frac, w.onset_step);
    let json = serde_json::to_string_pretty(&t).expect("summary serialises");
    // A closed pipe (e.g. `| head`) is not an error here.
    let _ = writeln!(std::io::stdout().lock(), "{json}");
    Ok(true)
}

fn ingest(file: &Path, column: &ColumnSelector) -> Result<(), HarnessError> {
    let s = ingest_prices(file, column)?;
    let n = s.prices.len() as f64;
    let min = s.prices.iter().copied().fold(f64::INFINITY, f64::min);
    let max = s.prices.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("{}: column {}", s.label, s.column);
    println!(
        "{} prices, mean {:.3}, min {:.3}, max {:.3}",
        s.prices.len(),
        s.prices.iter().sum::<f64>() / n,
        min,
        max
    );
    println!("{} rows rejected", s.rejected.len());
    for r in s.rejected.iter().take(10) {
        println!("  line {}: {}", r.line, r.reason);
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn compare_files(
    model: &Path,
    external: &Path,
    model_column: &ColumnSelector,
    external_column: &ColumnSelector,
    out: &Path,
    bin_width: f64,
) -> Result<(), HarnessError> {
    let m = ingest_prices(model, model_column)?;
    let x = ingest_prices(external, external_column)?;
    let report = compare(&m, &x, bin_width)?;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let csv_err = |path: PathBuf| move |source| HarnessError::Csv { path, source };
    let path = out.join("compare_ecdf.csv");
    report.write_ecdf_csv(create(&path)?).map_err(csv_err(path))?;
    let path = out.join("compare_density.csv");
    report.write_density_csv(create(&path)?).map_err(csv_err(path))?;
    let path = out.join("compare_report.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &report)
        .map_err(std::io::Error::from)
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .map_err(io_err(&path))?;

    for s in [&report.model, &report.external] {
        println!(
            "{}: {} prices, mean {:.3}, median {:.3}, max {:.3}, tail slope {:.3} over {} bins from {:.3}",
            s.label, s.count, s.mean, s.median, s.max, s.tail.slope, s.tail.bins, s.tail.threshold
        );
    }
    println!("slope difference {:.3}", report.slope_difference);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, workers, out } => run(config, *workers, out.clone()).map(|_| true),
        Command::Curves { config, out } => curves(config, out.clone()).map(|_| true),
        Command::Stats { path, windows } => stats(path, windows),
        Command::Ingest { file, column } => ingest(file, column).map(|_| true),
        Command::Compare {
            model,
            external,
            model_column,
            external_column,
            out,
            bin_width,
        } => compare_files(model, external, model_column, external_column, out, *bin_width).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code())
        }
    }
}

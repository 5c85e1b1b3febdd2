//! Seeded multi-session batches and their output files.
//!
//! Layout of `output_dir` after a run:
//!
//! | file | columns |
//! |------|---------|
//! | `session_NNN_trajectory.csv` | `step,price,running_mean,running_variance,running_max` |
//! | `session_NNN_trades.csv` (opt.) | `step,buyer_id,seller_id,bid,ask,success,price` |
//! | `session_NNN_population.csv` (opt.) | `id,role,q0,b0` |
//! | `session_NNN_curves.csv` (`initial_curves` only) | `price,cumulative_quantity,side` |
//! | `summary.csv` | one row per session |
//! | `summary.json` | full report including pooled figures |
//! | `pooled_ecdf.csv` | `x,cdf` |
//! | `pooled_density.csv` | `bin_lo,mass` |

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::HarnessError;
use crate::curves::{demand_curve, intersection, supply_curve, write_curves_csv, Crossing};
use crate::engine::{run_session_with, Termination, TradeLogWriter};
use crate::population::build_population;
use crate::seeding::session_seed;
use crate::stats::{self, write_trajectory_csv, Ecdf, RunningStats, UnitBinDensity};

/// Per-session figures. Everything except the seller outcomes, the step
/// count and the buyer tally can be recomputed from the trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: usize,
    pub seed: u64,
    pub total_steps: u64,
    pub trades: u64,
    pub termination: Termination,
    pub mean_price: f64,
    pub price_variance: f64,
    pub max_price: f64,
    pub dmax_step: Option<u64>,
    pub dmax_value: Option<f64>,
    /// `dmax_step / total_steps`.
    pub dmax_position: Option<f64>,
    pub divergence_ratio: Option<f64>,
    /// Highest price at or before the onset step.
    pub early_max: Option<f64>,
    /// Highest price after the onset step.
    pub late_max: Option<f64>,
    pub unmet_demand_buyers: u64,
    pub unsold_sellers: u64,
    pub positive_budget_sellers: u64,
    pub n_sellers: u64,
    pub buyer_spend: f64,
    pub seller_revenue: f64,
}

impl SessionSummary {
    pub fn unsold_fraction(&self) -> f64 {
        self.unsold_sellers as f64 / self.n_sellers as f64
    }

    pub fn positive_budget_fraction(&self) -> f64 {
        self.positive_budget_sellers as f64 / self.n_sellers as f64
    }

    fn csv_header() -> [&'static str; 19] {
        [
            "session",
            "seed",
            "total_steps",
            "trades",
            "termination",
            "mean_price",
            "price_variance",
            "max_price",
            "dmax_step",
            "dmax_value",
            "dmax_position",
            "divergence_ratio",
            "early_max",
            "late_max",
            "unmet_demand_buyers",
            "unsold_fraction",
            "positive_budget_fraction",
            "buyer_spend",
            "seller_revenue",
        ]
    }

    fn csv_row(&self) -> Vec<String> {
        fn opt<T: ToString>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        vec![
            self.session.to_string(),
            self.seed.to_string(),
            self.total_steps.to_string(),
            self.trades.to_string(),
            self.termination.to_string(),
            self.mean_price.to_string(),
            self.price_variance.to_string(),
            self.max_price.to_string(),
            opt(self.dmax_step),
            opt(self.dmax_value),
            opt(self.dmax_position),
            opt(self.divergence_ratio),
            opt(self.early_max),
            opt(self.late_max),
            self.unmet_demand_buyers.to_string(),
            self.unsold_fraction().to_string(),
            self.positive_budget_fraction().to_string(),
            self.buyer_spend.to_string(),
            self.seller_revenue.to_string(),
        ]
    }
}

/// Figures recomputable from a trajectory alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub trades: u64,
    pub last_step: u64,
    pub mean_price: f64,
    pub price_variance: f64,
    pub max_price: f64,
    pub dmax_step: Option<u64>,
    pub dmax_value: Option<f64>,
    pub divergence_ratio: Option<f64>,
    pub early_max: Option<f64>,
    pub late_max: Option<f64>,
}

/// Summarizes a `(step, price)` trajectory.
pub fn summarize_trajectory(
    trajectory: &[(u64, f64)],
    early_frac: f64,
    late_frac: f64,
    onset_step: u64,
) -> TrajectorySummary {
    let mut rs = RunningStats::new();
    let mut early_max: Option<f64> = None;
    let mut late_max: Option<f64> = None;
    for &(step, price) in trajectory {
        rs.push(step, price);
        let slot = if step <= onset_step {
            &mut early_max
        } else {
            &mut late_max
        };
        *slot = Some(slot.map_or(price, |m| m.max(price)));
    }
    let dmax = rs.max_divergence_step().ok();
    let prices: Vec<f64> = trajectory.iter().map(|t| t.1).collect();
    TrajectorySummary {
        trades: rs.count(),
        last_step: trajectory.last().map_or(0, |t| t.0),
        mean_price: rs.mean(),
        price_variance: rs.variance(),
        max_price: rs.max().unwrap_or(f64::NAN),
        dmax_step: dmax.map(|d| d.0),
        dmax_value: dmax.map(|d| d.1),
        divergence_ratio: stats::window_spread_ratio(&prices, early_frac, late_frac).ok(),
        early_max,
        late_max,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledSummary {
    pub trades: u64,
    pub mean_price: f64,
    pub price_variance: f64,
    pub max_price: f64,
    pub median_total_steps: f64,
    pub unsold_fraction: f64,
    pub positive_budget_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub case: String,
    pub master_seed: u64,
    pub sessions: Vec<SessionSummary>,
    pub pooled: PooledSummary,
    /// Successful-trade prices of every session, session by session.
    #[serde(skip)]
    pub pooled_prices: Vec<f64>,
    /// `(step, price)` per session.
    #[serde(skip)]
    pub trajectories: Vec<Vec<(u64, f64)>>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

pub fn session_file(dir: &Path, session: usize, kind: &str) -> PathBuf {
    dir.join(format!("session_{session:03}_{kind}.csv"))
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn csv_failure(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

struct SessionRun {
    summary: SessionSummary,
    trajectory: Vec<(u64, f64)>,
}

fn run_one(cfg: &ExperimentConfig, session: usize) -> Result<SessionRun, HarnessError> {
    let dir = &cfg.output_dir;
    let opts = &cfg.options;
    let seed = session_seed(cfg.master_seed, session as u64);
    let population = build_population(&cfg.population, seed)?;
    if opts.population_dump {
        let path = session_file(dir, session, "population");
        population.write_csv(create(&path)?).map_err(csv_failure(&path))?;
    }

    let log_path = session_file(dir, session, "trades");
    let mut log = if opts.trade_log {
        Some(TradeLogWriter::new(create(&log_path)?).map_err(csv_failure(&log_path))?)
    } else {
        None
    };
    let mut log_error = None;
    let mut trajectory = Vec::new();
    let outcome = run_session_with(population, seed, opts.max_steps, |t| {
        if let Some(p) = t.price() {
            trajectory.push((t.step, p));
        }
        if let (Some(w), None) = (log.as_mut(), &log_error) {
            log_error = w.write(t).err();
        }
    })
    .map_err(|source| HarnessError::Engine { session, source })?;
    if let Some(e) = log_error {
        return Err(csv_failure(&log_path)(e));
    }
    if let Some(w) = log {
        w.finish().map_err(csv_failure(&log_path))?;
    }

    let path = session_file(dir, session, "trajectory");
    write_trajectory_csv(&trajectory, create(&path)?).map_err(csv_failure(&path))?;

    let t = summarize_trajectory(&trajectory, opts.early_frac, opts.late_frac, opts.onset_step);
    let buyers = &outcome.final_buyers;
    let sellers = &outcome.final_sellers;
    let summary = SessionSummary {
        session,
        seed,
        total_steps: outcome.total_steps,
        trades: t.trades,
        termination: outcome.termination,
        mean_price: t.mean_price,
        price_variance: t.price_variance,
        max_price: t.max_price,
        dmax_step: t.dmax_step,
        dmax_value: t.dmax_value,
        dmax_position: t.dmax_step.map(|s| s as f64 / outcome.total_steps as f64),
        divergence_ratio: t.divergence_ratio,
        early_max: t.early_max,
        late_max: t.late_max,
        unmet_demand_buyers: buyers.iter().filter(|b| b.demand > 0).count() as u64,
        unsold_sellers: sellers.iter().filter(|s| s.supply > 0).count() as u64,
        positive_budget_sellers: sellers.iter().filter(|s| s.budget > 0.0).count() as u64,
        n_sellers: sellers.len() as u64,
        buyer_spend: buyers.iter().map(|b| b.initial_budget - b.budget).sum(),
        seller_revenue: sellers.iter().map(|s| s.initial_budget - s.budget).sum(),
    };
    Ok(SessionRun { summary, trajectory })
}

/// Runs every session of `cfg` and writes all output files. `workers`
/// overrides the configured worker count; one worker runs serially on the
/// calling thread. Output is identical for any worker count.
pub fn run_experiment_with(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<ExperimentSummary, HarnessError> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.clone(),
        source,
    })?;

    let workers = workers.or(cfg.options.workers);
    let runs: Vec<SessionRun> = if workers == Some(1) {
        (0..cfg.sessions)
            .map(|i| run_one(cfg, i))
            .collect::<Result<_, _>>()?
    } else {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = workers {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
        pool.install(|| {
            (0..cfg.sessions)
                .into_par_iter()
                .map(|i| run_one(cfg, i))
                .collect::<Result<_, _>>()
        })?
    };

    let sessions: Vec<SessionSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    let trajectories: Vec<Vec<(u64, f64)>> = runs.into_iter().map(|r| r.trajectory).collect();
    let pooled_prices: Vec<f64> = trajectories.iter().flatten().map(|t| t.1).collect();

    let mut pooled_stats = RunningStats::new();
    for (i, &p) in pooled_prices.iter().enumerate() {
        pooled_stats.push(i as u64 + 1, p);
    }
    let n_sellers: u64 = sessions.iter().map(|s| s.n_sellers).sum();
    let pooled = PooledSummary {
        trades: pooled_stats.count(),
        mean_price: pooled_stats.mean(),
        price_variance: pooled_stats.variance(),
        max_price: pooled_stats.max().unwrap_or(f64::NAN),
        median_total_steps: median(sessions.iter().map(|s| s.total_steps as f64).collect()),
        unsold_fraction: sessions.iter().map(|s| s.unsold_sellers).sum::<u64>() as f64 / n_sellers as f64,
        positive_budget_fraction: sessions.iter().map(|s| s.positive_budget_sellers).sum::<u64>() as f64
            / n_sellers as f64,
    };

    let summary = ExperimentSummary {
        case: cfg.case.clone(),
        master_seed: cfg.master_seed,
        sessions,
        pooled,
        pooled_prices,
        trajectories,
    };
    write_summary_files(cfg, &summary)?;
    Ok(summary)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary, HarnessError> {
    run_experiment_with(cfg, None)
}

fn write_summary_files(cfg: &ExperimentConfig, summary: &ExperimentSummary) -> Result<(), HarnessError> {
    let dir = &cfg.output_dir;

    let path = dir.join("summary.csv");
    let mut wtr = csv::Writer::from_writer(create(&path)?);
    let write_rows = |wtr: &mut csv::Writer<_>| -> csv::Result<()> {
        wtr.write_record(SessionSummary::csv_header())?;
        for s in &summary.sessions {
            wtr.write_record(s.csv_row())?;
        }
        wtr.flush()?;
        Ok(())
    };
    write_rows(&mut wtr).map_err(csv_failure(&path))?;

    let path = dir.join("summary.json");
    let mut out = create(&path)?;
    serde_json::to_writer_pretty(&mut out, summary)
        .map_err(std::io::Error::from)
        .and_then(|_| out.write_all(b"\n"))
        .and_then(|_| out.flush())
        .map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;

    if !summary.pooled_prices.is_empty() {
        let path = dir.join("pooled_ecdf.csv");
        Ecdf::new(&summary.pooled_prices)?
            .write_csv(create(&path)?)
            .map_err(csv_failure(&path))?;
        let path = dir.join("pooled_density.csv");
        UnitBinDensity::new(&summary.pooled_prices, cfg.options.bin_width)?
            .write_csv(create(&path)?)
            .map_err(csv_failure(&path))?;
    }
    Ok(())
}

/// Builds each session's population, writes its initial supply and demand
/// curves to `output_dir` and returns the crossings in session order.
pub fn initial_curves(cfg: &ExperimentConfig) -> Result<Vec<Crossing>, HarnessError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|source| HarnessError::Io {
        path: cfg.output_dir.clone(),
        source,
    })?;
    (0..cfg.sessions)
        .map(|session| {
            let pop = build_population(&cfg.population, session_seed(cfg.master_seed, session as u64))?;
            let curve_err = |source| HarnessError::Curve { session, source };
            let demand = demand_curve(&pop.buyers).map_err(curve_err)?;
            let supply = supply_curve(&pop.sellers).map_err(curve_err)?;
            let path = session_file(&cfg.output_dir, session, "curves");
            write_curves_csv(&demand, &supply, create(&path)?).map_err(csv_failure(&path))?;
            intersection(&demand, &supply).map_err(curve_err)
        })
        .collect()
}

/// Reads `(step, price)` pairs back from a trajectory file.
pub fn read_trajectory(path: &Path) -> Result<Vec<(u64, f64)>, HarnessError> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_failure(path))?;
    let headers = rdr.headers().map_err(csv_failure(path))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::Format {
                path: path.to_path_buf(),
                message: format!("missing column `{name}`"),
            })
    };
    let (step_col, price_col) = (col("step")?, col("price")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_failure(path))?;
        let bad = |what: &str| HarnessError::Format {
            path: path.to_path_buf(),
            message: format!(
                "line {}: bad {what}",
                rec.position().map_or(0, |p| p.line())
            ),
        };
        let step = rec.get(step_col).and_then(|s| s.parse().ok()).ok_or_else(|| bad("step"))?;
        let price = rec.get(price_col).and_then(|s| s.parse().ok()).ok_or_else(|| bad("price"))?;
        out.push((step, price));
    }
    Ok(out)
}

/// A mismatch between a stored session figure and its recomputation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditMismatch {
    pub session: usize,
    pub field: &'static str,
    pub stored: String,
    pub recomputed: String,
}

/// Recomputes every session's trajectory figures from the files in
/// `output_dir` and lists disagreements with `summary.json`.
pub fn audit_output(output_dir: &Path, early_frac: f64, late_frac: f64, onset_step: u64) -> Result<Vec<AuditMismatch>, HarnessError> {
    let path = output_dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })?;
    let summary: ExperimentSummary = serde_json::from_str(&text).map_err(|e| HarnessError::Format {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let mut mismatches = Vec::new();
    for s in &summary.sessions {
        let traj = read_trajectory(&session_file(output_dir, s.session, "trajectory"))?;
        let t = summarize_trajectory(&traj, early_frac, late_frac, onset_step);
        let mut check = |field: &'static str, stored: String, recomputed: String| {
            if stored != recomputed {
                mismatches.push(AuditMismatch {
                    session: s.session,
                    field,
                    stored,
                    recomputed,
                });
            }
        };
        check("trades", s.trades.to_string(), t.trades.to_string());
        check("mean_price", s.mean_price.to_string(), t.mean_price.to_string());
        check("price_variance", s.price_variance.to_string(), t.price_variance.to_string());
        check("max_price", s.max_price.to_string(), t.max_price.to_string());
        check("dmax_step", format!("{:?}", s.dmax_step), format!("{:?}", t.dmax_step));
        check("dmax_value", format!("{:?}", s.dmax_value), format!("{:?}", t.dmax_value));
        check(
            "divergence_ratio",
            format!("{:?}", s.divergence_ratio),
            format!("{:?}", t.divergence_ratio),
        );
        check("early_max", format!("{:?}", s.early_max), format!("{:?}", t.early_max));
        check("late_max", format!("{:?}", s.late_max), format!("{:?}", t.late_max));
        if t.last_step > s.total_steps {
            check("total_steps", s.total_steps.to_string(), format!(">= {}", t.last_step));
        }
    }
    Ok(mismatches)
}

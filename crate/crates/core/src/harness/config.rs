//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comments run to end of line
//! case = EXP          # EXP or LIN preset; any other label needs every population key
//! master_seed = 42    # required
//! sessions = 10
//! output_dir = out/exp
//! ```
//!
//! Population keys override the preset: `n_buyers`, `n_sellers`,
//! `demand_lo`, `demand_hi`, `supply_lo`, `supply_hi`, `value_lo`,
//! `value_hi`, `value_c`, `cost_lo`, `cost_hi`, `cost_c`, `orientation`
//! (`reflected` or `literal`). Run options: `trade_log`, `population_dump`,
//! `early_frac`, `late_frac`, `onset_step`, `bin_width`, `max_steps`,
//! `workers`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::DEFAULT_MAX_STEPS;
use crate::population::{PopulationConfig, PriceOrientation, QuantityRange, UnitPriceDistribution};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

const POPULATION_KEYS: &[&str] = &[
    "n_buyers",
    "n_sellers",
    "demand_lo",
    "demand_hi",
    "supply_lo",
    "supply_hi",
    "value_lo",
    "value_hi",
    "value_c",
    "cost_lo",
    "cost_hi",
    "cost_c",
];

const OTHER_KEYS: &[&str] = &[
    "case",
    "master_seed",
    "sessions",
    "output_dir",
    "orientation",
    "trade_log",
    "population_dump",
    "early_frac",
    "late_frac",
    "onset_step",
    "bin_width",
    "max_steps",
    "workers",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Write every attempted transaction per session.
    pub trade_log: bool,
    /// Write each session's initial population.
    pub population_dump: bool,
    pub early_frac: f64,
    pub late_frac: f64,
    /// Step that separates the early and late maxima.
    pub onset_step: u64,
    pub bin_width: f64,
    pub max_steps: u64,
    /// Worker threads; `None` lets the thread pool decide.
    pub workers: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            trade_log: false,
            population_dump: false,
            early_frac: 0.2,
            late_frac: 0.1,
            onset_step: 10_000,
            bin_width: 1.0,
            max_steps: DEFAULT_MAX_STEPS,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub case: String,
    pub population: PopulationConfig,
    pub sessions: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub options: RunOptions,
}

impl ExperimentConfig {
    /// Preset case with default options and ten sessions.
    pub fn preset(case: &str, master_seed: u64, output_dir: impl Into<PathBuf>) -> Option<Self> {
        Some(Self {
            case: case.to_ascii_uppercase(),
            population: PopulationConfig::preset(case)?,
            sessions: 10,
            master_seed,
            output_dir: output_dir.into(),
            options: RunOptions::default(),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems: Vec<String> = self
            .population
            .violations()
            .iter()
            .map(|e| e.to_string())
            .collect();
        problems.extend(self.option_violations());
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }

    fn option_violations(&self) -> Vec<String> {
        let o = &self.options;
        let mut out = Vec::new();
        if self.sessions == 0 {
            out.push("sessions must be at least 1".to_string());
        }
        for (key, v) in [("early_frac", o.early_frac), ("late_frac", o.late_frac)] {
            if !(v > 0.0 && v <= 1.0) {
                out.push(format!("{key} must lie in (0, 1], got {v}"));
            }
        }
        if o.early_frac + o.late_frac > 1.0 {
            out.push("early_frac + late_frac must not exceed 1".to_string());
        }
        if !(o.bin_width > 0.0 && o.bin_width.is_finite()) {
            out.push(format!("bin_width must be positive, got {}", o.bin_width));
        }
        if o.max_steps == 0 {
            out.push("max_steps must be at least 1".to_string());
        }
        if o.workers == Some(0) {
            out.push("workers must be at least 1".to_string());
        }
        out
    }
}

struct Entry {
    line: usize,
    value: String,
}

fn parse_value<T: FromStr>(entries: &BTreeMap<String, Entry>, key: &str) -> Result<Option<T>, ConfigError> {
    match entries.get(key) {
        None => Ok(None),
        Some(e) => e.value.parse().map(Some).map_err(|_| ConfigError::Parse {
            line: e.line,
            message: format!("cannot parse value {:?} for key `{key}`", e.value),
        }),
    }
}

fn parse_bool(entries: &BTreeMap<String, Entry>, key: &str) -> Result<Option<bool>, ConfigError> {
    match entries.get(key) {
        None => Ok(None),
        Some(e) => match e.value.to_ascii_lowercase().as_str() {
            "true" | "yes" | "on" | "1" => Ok(Some(true)),
            "false" | "no" | "off" | "0" => Ok(Some(false)),
            _ => Err(ConfigError::Parse {
                line: e.line,
                message: format!("expected a boolean for key `{key}`, got {:?}", e.value),
            }),
        },
    }
}

fn tokenize(text: &str) -> Result<BTreeMap<String, Entry>, ConfigError> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Parse {
                line,
                message: format!("expected `key = value`, got {content:?}"),
            });
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim().to_string();
        if !POPULATION_KEYS.contains(&key.as_str()) && !OTHER_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::Parse {
                line,
                message: format!("unknown key `{key}`"),
            });
        }
        if value.is_empty() {
            return Err(ConfigError::Parse {
                line,
                message: format!("key `{key}` has no value"),
            });
        }
        if let Some(prev) = entries.insert(key.clone(), Entry { line, value }) {
            return Err(ConfigError::Parse {
                line,
                message: format!("key `{key}` repeats line {}", prev.line),
            });
        }
    }
    Ok(entries)
}

/// Parses and validates a configuration. Syntax errors stop at the first
/// offending line; validation reports every violation at once.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let entries = tokenize(text)?;
    let mut missing = Vec::new();

    let case = entries.get("case").map(|e| e.value.clone());
    let preset = case.as_deref().and_then(PopulationConfig::preset);
    if case.is_none() {
        missing.push("missing required key `case`".to_string());
    } else if preset.is_none() {
        for key in POPULATION_KEYS {
            if !entries.contains_key(*key) {
                missing.push(format!(
                    "case {:?} is not a preset, so `{key}` is required",
                    case.as_deref().unwrap_or_default()
                ));
            }
        }
    }
    let master_seed = parse_value::<u64>(&entries, "master_seed")?;
    if master_seed.is_none() {
        missing.push("missing required key `master_seed`".to_string());
    }

    // Placeholder base for custom cases; every key is checked above.
    let mut pop = preset.unwrap_or_else(PopulationConfig::exp_case);
    if let Some(v) = parse_value(&entries, "n_buyers")? {
        pop.n_buyers = v;
    }
    if let Some(v) = parse_value(&entries, "n_sellers")? {
        pop.n_sellers = v;
    }
    let set_range = |range: &mut QuantityRange, lo: &str, hi: &str| -> Result<(), ConfigError> {
        if let Some(v) = parse_value(&entries, lo)? {
            range.lo = v;
        }
        if let Some(v) = parse_value(&entries, hi)? {
            range.hi = v;
        }
        Ok(())
    };
    set_range(&mut pop.demand_range, "demand_lo", "demand_hi")?;
    set_range(&mut pop.supply_range, "supply_lo", "supply_hi")?;
    let set_dist = |dist: &mut UnitPriceDistribution, prefix: &str| -> Result<(), ConfigError> {
        if let Some(v) = parse_value(&entries, &format!("{prefix}_lo"))? {
            dist.lo = v;
        }
        if let Some(v) = parse_value(&entries, &format!("{prefix}_hi"))? {
            dist.hi = v;
        }
        if let Some(v) = parse_value(&entries, &format!("{prefix}_c"))? {
            dist.c = v;
        }
        Ok(())
    };
    set_dist(&mut pop.value_dist, "value")?;
    set_dist(&mut pop.cost_dist, "cost")?;
    if let Some(e) = entries.get("orientation") {
        pop.orientation = match e.value.to_ascii_lowercase().as_str() {
            "reflected" => PriceOrientation::Reflected,
            "literal" => PriceOrientation::Literal,
            other => {
                return Err(ConfigError::Parse {
                    line: e.line,
                    message: format!("orientation must be `reflected` or `literal`, got {other:?}"),
                })
            }
        };
    }

    let mut options = RunOptions::default();
    if let Some(v) = parse_bool(&entries, "trade_log")? {
        options.trade_log = v;
    }
    if let Some(v) = parse_bool(&entries, "population_dump")? {
        options.population_dump = v;
    }
    if let Some(v) = parse_value(&entries, "early_frac")? {
        options.early_frac = v;
    }
    if let Some(v) = parse_value(&entries, "late_frac")? {
        options.late_frac = v;
    }
    if let Some(v) = parse_value(&entries, "onset_step")? {
        options.onset_step = v;
    }
    if let Some(v) = parse_value(&entries, "bin_width")? {
        options.bin_width = v;
    }
    if let Some(v) = parse_value(&entries, "max_steps")? {
        options.max_steps = v;
    }
    options.workers = parse_value(&entries, "workers")?;

    let cfg = ExperimentConfig {
        case: match (&case, &preset) {
            (Some(c), Some(_)) => c.to_ascii_uppercase(),
            (Some(c), None) => c.clone(),
            (None, _) => String::new(),
        },
        population: pop,
        sessions: parse_value(&entries, "sessions")?.unwrap_or(10),
        master_seed: master_seed.unwrap_or_default(),
        output_dir: entries
            .get("output_dir")
            .map(|e| PathBuf::from(&e.value))
            .unwrap_or_else(|| PathBuf::from("out")),
        options,
    };

    if let Err(ConfigError::Invalid(rest)) = cfg.validate() {
        missing.extend(rest);
    }
    if missing.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(missing))
    }
}

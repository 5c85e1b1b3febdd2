//! Loading a price column from delimited text.
//!
//! The delimiter is sniffed from the first non-comment line (tab, comma or
//! semicolon; otherwise the file is read as a single column). Rows whose
//! price is missing, non-numeric, non-finite or negative are rejected and
//! reported rather than failing the load.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed delimited text in {label}: {source}")]
    Csv {
        label: String,
        #[source]
        source: csv::Error,
    },
    #[error("{label}: no column named {name:?}")]
    NoSuchColumn { label: String, name: String },
    #[error("{label}: no numeric price column found")]
    NoNumericColumn { label: String },
    #[error("{label}: no valid prices ({rejected} rows rejected)")]
    Empty { label: String, rejected: usize },
}

/// Which column holds the prices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ColumnSelector {
    /// A column headed `price` if there is one, otherwise the first column
    /// that is numeric in most rows.
    #[default]
    Auto,
    Name(String),
    /// Zero-based column index.
    Index(usize),
}

impl FromStr for ColumnSelector {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(if s.eq_ignore_ascii_case("auto") {
            ColumnSelector::Auto
        } else if let Ok(i) = s.parse() {
            ColumnSelector::Index(i)
        } else {
            ColumnSelector::Name(s.to_string())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    /// 1-based line in the source text.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExternalPriceSeries {
    pub label: String,
    pub source: Option<PathBuf>,
    pub column: usize,
    pub prices: Vec<f64>,
    pub rejected: Vec<Rejection>,
}

impl ExternalPriceSeries {
    pub fn from_prices(label: impl Into<String>, prices: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            source: None,
            column: 0,
            prices,
            rejected: Vec::new(),
        }
    }
}

fn sniff_delimiter(text: &str) -> u8 {
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    b"\t,;"
        .iter()
        .copied()
        .find(|d| first.as_bytes().contains(d))
        .unwrap_or(b',')
}

fn numeric(field: &str) -> Option<f64> {
    field.trim().parse::<f64>().ok()
}

/// Parses a price column from delimited text. `label` names the series in
/// diagnostics.
pub fn parse_prices(text: &str, label: &str, selector: &ColumnSelector) -> Result<ExternalPriceSeries, IngestError> {
    let csv_err = |source| IngestError::Csv {
        label: label.to_string(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .delimiter(sniff_delimiter(text))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec));
    }
    let Some((_, first)) = rows.first() else {
        return Err(IngestError::Empty {
            label: label.to_string(),
            rejected: 0,
        });
    };

    let header_names: Vec<String> = first.iter().map(|f| f.to_ascii_lowercase()).collect();
    let (column, has_header) = match selector {
        ColumnSelector::Name(name) => {
            let wanted = name.to_ascii_lowercase();
            let col = header_names
                .iter()
                .position(|h| *h == wanted)
                .ok_or_else(|| IngestError::NoSuchColumn {
                    label: label.to_string(),
                    name: name.clone(),
                })?;
            (col, true)
        }
        ColumnSelector::Index(i) => (*i, first.get(*i).and_then(numeric).is_none()),
        ColumnSelector::Auto => {
            if let Some(col) = header_names.iter().position(|h| h == "price") {
                (col, true)
            } else {
                let has_header = first.iter().all(|f| numeric(f).is_none());
                let body = if has_header { &rows[1..] } else { &rows[..] };
                let width = rows.iter().map(|(_, r)| r.len()).max().unwrap_or(0);
                let col = (0..width)
                    .find(|&c| {
                        let good = body.iter().filter(|(_, r)| r.get(c).and_then(numeric).is_some()).count();
                        good > 0 && 2 * good > body.len()
                    })
                    .ok_or_else(|| IngestError::NoNumericColumn {
                        label: label.to_string(),
                    })?;
                (col, has_header)
            }
        }
    };

    let mut prices = Vec::new();
    let mut rejected = Vec::new();
    for (line, rec) in rows.iter().skip(usize::from(has_header)) {
        let reason = match rec.get(column) {
            None => format!("missing column {column}"),
            Some(field) => match numeric(field) {
                Some(p) if p.is_finite() && p >= 0.0 => {
                    prices.push(p);
                    continue;
                }
                Some(p) if !p.is_finite() => format!("non-finite price {field:?}"),
                Some(_) => format!("negative price {field:?}"),
                None => format!("non-numeric price {field:?}"),
            },
        };
        rejected.push(Rejection { line: *line, reason });
    }
    if prices.is_empty() {
        return Err(IngestError::Empty {
            label: label.to_string(),
            rejected: rejected.len(),
        });
    }
    Ok(ExternalPriceSeries {
        label: label.to_string(),
        source: None,
        column,
        prices,
        rejected,
    })
}

/// Reads a price series from a file; the label is the file stem.
pub fn ingest_prices(path: &Path, selector: &ColumnSelector) -> Result<ExternalPriceSeries, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let mut series = parse_prices(&text, &label, selector)?;
    series.source = Some(path.to_path_buf());
    Ok(series)
}

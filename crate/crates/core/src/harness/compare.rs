//! Side-by-side distribution tables for a model series and an external one,
//! plus the log-log slope of each high-price tail.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use super::ingest::ExternalPriceSeries;
use crate::stats::{Ecdf, StatsError, UnitBinDensity};

/// Fraction of observed prices treated as the tail.
pub const TAIL_FRACTION: f64 = 0.1;
/// Fewest nonempty tail bins a slope is fitted through.
pub const MIN_TAIL_BINS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("{label}: {source}")]
    Stats {
        label: String,
        #[source]
        source: StatsError,
    },
    #[error("{label}: only {bins} nonempty bins in the top decile, need {MIN_TAIL_BINS}")]
    InsufficientTail { label: String, bins: usize },
}

/// Least-squares fit of `ln(mass / bin_width)` against `ln(bin centre)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailFit {
    pub threshold: f64,
    pub slope: f64,
    pub intercept: f64,
    pub bins: usize,
}

/// Fits the tail above the `1 - TAIL_FRACTION` quantile of `prices`.
pub fn tail_slope(prices: &[f64], bin_width: f64, label: &str) -> Result<TailFit, CompareError> {
    let stats_err = |source| CompareError::Stats {
        label: label.to_string(),
        source,
    };
    let ecdf = Ecdf::new(prices).map_err(stats_err)?;
    let density = UnitBinDensity::new(prices, bin_width).map_err(stats_err)?;
    let threshold = ecdf.quantile(1.0 - TAIL_FRACTION);
    let first_bin = (threshold / bin_width).floor() as i64;
    let points: Vec<(f64, f64)> = density
        .masses()
        .filter(|&(k, _)| k >= first_bin)
        .map(|(k, m)| {
            let centre = density.bin_lo(k) + 0.5 * bin_width;
            (centre.ln(), (m / bin_width).ln())
        })
        .collect();
    if points.len() < MIN_TAIL_BINS {
        return Err(CompareError::InsufficientTail {
            label: label.to_string(),
            bins: points.len(),
        });
    }
    let (slope, intercept) = least_squares(&points);
    Ok(TailFit {
        threshold,
        slope,
        intercept,
        bins: points.len(),
    })
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesReport {
    pub label: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub tail: TailFit,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub bin_width: f64,
    pub model: SeriesReport,
    pub external: SeriesReport,
    /// Model tail slope minus external tail slope.
    pub slope_difference: f64,
    #[serde(skip)]
    pub ecdfs: [Ecdf; 2],
    #[serde(skip)]
    pub densities: [UnitBinDensity; 2],
}

fn series_report(series: &ExternalPriceSeries, bin_width: f64) -> Result<(SeriesReport, Ecdf, UnitBinDensity), CompareError> {
    let stats_err = |source| CompareError::Stats {
        label: series.label.clone(),
        source,
    };
    let ecdf = Ecdf::new(&series.prices).map_err(stats_err)?;
    let density = UnitBinDensity::new(&series.prices, bin_width).map_err(stats_err)?;
    let tail = tail_slope(&series.prices, bin_width, &series.label)?;
    let values = ecdf.sorted_values();
    let report = SeriesReport {
        label: series.label.clone(),
        count: values.len(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: ecdf.quantile(0.5),
        max: values[values.len() - 1],
        tail,
    };
    Ok((report, ecdf, density))
}

pub fn compare(
    model: &ExternalPriceSeries,
    external: &ExternalPriceSeries,
    bin_width: f64,
) -> Result<ComparisonReport, CompareError> {
    let (m, me, md) = series_report(model, bin_width)?;
    let (x, xe, xd) = series_report(external, bin_width)?;
    Ok(ComparisonReport {
        bin_width,
        slope_difference: m.tail.slope - x.tail.slope,
        model: m,
        external: x,
        ecdfs: [me, xe],
        densities: [md, xd],
    })
}

impl ComparisonReport {
    fn labels(&self) -> [&str; 2] {
        [&self.model.label, &self.external.label]
    }

    /// Writes `series,x,cdf` for both series.
    pub fn write_ecdf_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["series", "x", "cdf"])?;
        for (label, e) in self.labels().iter().zip(&self.ecdfs) {
            for (x, p) in e.steps() {
                wtr.write_record([label.to_string(), x.to_string(), p.to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes `series,bin_lo,mass` for both series.
    pub fn write_density_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["series", "bin_lo", "mass"])?;
        for (label, d) in self.labels().iter().zip(&self.densities) {
            for (k, m) in d.masses() {
                wtr.write_record([label.to_string(), d.bin_lo(k).to_string(), m.to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

//! Streaming and batch statistics over price trajectories.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no prices recorded")]
    Empty,
    #[error("the running maximum never increased")]
    NoMaxIncrease,
    #[error("bin width must be positive and finite (got {0})")]
    BinWidth(f64),
    #[error("{window} window has {len} prices, need at least 2")]
    Window { window: &'static str, len: usize },
}

/// Welford running mean and population variance, plus the running maximum
/// and each increase of it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
    first: Option<f64>,
    max: Option<f64>,
    max_series: Vec<(u64, f64)>,
    delta_max_series: Vec<(u64, f64)>,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the price of the trade at `step`.
    pub fn push(&mut self, step: u64, price: f64) {
        self.n += 1;
        let delta = price - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (price - self.mean);
        match self.max {
            None => {
                self.first = Some(price);
                self.max = Some(price);
                self.max_series.push((step, price));
            }
            Some(m) if price > m => {
                self.max = Some(price);
                self.max_series.push((step, price));
                self.delta_max_series.push((step, price - m));
            }
            Some(_) => {}
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population variance (`m2 / n`); zero before the first push.
    pub fn variance(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.m2 / self.n as f64
        }
    }

    pub fn max(&self) -> Option<f64> {
        self.max
    }

    pub fn first(&self) -> Option<f64> {
        self.first
    }

    /// `(step, new max)` each time the running maximum was set.
    pub fn max_series(&self) -> &[(u64, f64)] {
        &self.max_series
    }

    /// `(step, increase)` for every increase of the running maximum.
    pub fn delta_max_series(&self) -> &[(u64, f64)] {
        &self.delta_max_series
    }

    /// Step and size of the largest single increase of the running maximum.
    /// Ties go to the earliest step.
    pub fn max_divergence_step(&self) -> Result<(u64, f64), StatsError> {
        if self.n == 0 {
            return Err(StatsError::Empty);
        }
        self.delta_max_series
            .iter()
            .copied()
            .fold(None, |best: Option<(u64, f64)>, (step, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((step, d)),
            })
            .ok_or(StatsError::NoMaxIncrease)
    }
}

/// Empirical CDF over a sorted copy of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(values: &[f64]) -> Result<Self, StatsError> {
        if values.is_empty() {
            return Err(StatsError::Empty);
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    /// Fraction of values `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    /// `(x, cdf)` at each distinct value.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &v) in self.sorted.iter().enumerate() {
            let p = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 = p,
                _ => out.push((v, p)),
            }
        }
        out
    }

    /// Empirical quantile: the value at sorted position `floor(q * n)`,
    /// clamped to the last element.
    pub fn quantile(&self, q: f64) -> f64 {
        let idx = ((q * self.sorted.len() as f64).floor() as usize).min(self.sorted.len() - 1);
        self.sorted[idx]
    }

    /// Kolmogorov-Smirnov distance `sup |F_n(x) - F(x)|` to a continuous CDF.
    pub fn ks_distance(&self, cdf: impl Fn(f64) -> f64) -> f64 {
        let n = self.sorted.len() as f64;
        self.sorted
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Writes `x,cdf`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["x", "cdf"])?;
        for (x, p) in self.steps() {
            wtr.write_record([x.to_string(), p.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn ecdf(prices: &[f64]) -> Result<Ecdf, StatsError> {
    Ecdf::new(prices)
}

/// Fixed-width histogram normalized to unit total mass. Bin `k` covers
/// `[k w, (k + 1) w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitBinDensity {
    bin_width: f64,
    total: u64,
    counts: BTreeMap<i64, u64>,
}

impl UnitBinDensity {
    pub fn new(prices: &[f64], bin_width: f64) -> Result<Self, StatsError> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(StatsError::BinWidth(bin_width));
        }
        if prices.is_empty() {
            return Err(StatsError::Empty);
        }
        let mut counts = BTreeMap::new();
        for &p in prices {
            *counts.entry((p / bin_width).floor() as i64).or_insert(0) += 1;
        }
        Ok(Self {
            bin_width,
            total: prices.len() as u64,
            counts,
        })
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &BTreeMap<i64, u64> {
        &self.counts
    }

    /// `(bin index, mass)` for every nonempty bin, ascending.
    pub fn masses(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let total = self.total as f64;
        self.counts.iter().map(move |(&k, &c)| (k, c as f64 / total))
    }

    pub fn mass(&self, bin: i64) -> f64 {
        self.counts.get(&bin).copied().unwrap_or(0) as f64 / self.total as f64
    }

    pub fn bin_lo(&self, bin: i64) -> f64 {
        bin as f64 * self.bin_width
    }

    /// Writes `bin_lo,mass` for every nonempty bin.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["bin_lo", "mass"])?;
        for (k, m) in self.masses() {
            wtr.write_record([self.bin_lo(k).to_string(), m.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn unit_bin_density(prices: &[f64], bin_width: f64) -> Result<UnitBinDensity, StatsError> {
    UnitBinDensity::new(prices, bin_width)
}

fn population_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Spread of the last `late_frac` of prices relative to the first
/// `early_frac`, as a ratio of population standard deviations. Window
/// lengths are `floor(frac * n)`. Two zero spreads give 0.
pub fn window_spread_ratio(prices: &[f64], early_frac: f64, late_frac: f64) -> Result<f64, StatsError> {
    let n = prices.len();
    let early_len = (early_frac * n as f64).floor() as usize;
    let late_len = (late_frac * n as f64).floor() as usize;
    if early_len < 2 {
        return Err(StatsError::Window {
            window: "early",
            len: early_len,
        });
    }
    if late_len < 2 {
        return Err(StatsError::Window {
            window: "late",
            len: late_len,
        });
    }
    let early = population_sd(&prices[..early_len]);
    let late = population_sd(&prices[n - late_len..]);
    Ok(if early == 0.0 && late == 0.0 {
        0.0
    } else {
        late / early
    })
}

/// Writes `step,price,running_mean,running_variance,running_max` for a
/// trajectory of `(step, price)` pairs.
pub fn write_trajectory_csv<W: Write>(trajectory: &[(u64, f64)], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["step", "price", "running_mean", "running_variance", "running_max"])?;
    let mut rs = RunningStats::new();
    for &(step, price) in trajectory {
        rs.push(step, price);
        wtr.write_record([
            step.to_string(),
            price.to_string(),
            rs.mean().to_string(),
            rs.variance().to_string(),
            rs.max().unwrap_or(price).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stats_of(prices: &[f64]) -> RunningStats {
        let mut rs = RunningStats::new();
        for (i, &p) in prices.iter().enumerate() {
            rs.push(i as u64 + 1, p);
        }
        rs
    }

    #[test]
    fn welford_small_cases() {
        let rs = stats_of(&[1.0, 2.0, 3.0]);
        assert_eq!(rs.mean(), 2.0);
        assert!((rs.variance() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rs.max(), Some(3.0));

        let rs = stats_of(&[4.5]);
        assert_eq!((rs.mean(), rs.variance(), rs.max()), (4.5, 0.0, Some(4.5)));
    }

    #[test]
    fn welford_matches_two_pass_on_a_million_uniforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let xs: Vec<f64> = (0..1_000_000).map(|_| rng.gen::<f64>()).collect();
        let rs = stats_of(&xs);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((rs.mean() - 0.5).abs() < 0.002);
        assert!((rs.variance() - 1.0 / 12.0).abs() < 0.002);
        assert!(((rs.mean() - mean) / mean).abs() < 1e-9);
        assert!(((rs.variance() - var) / var).abs() < 1e-9);
    }

    #[test]
    fn divergence_step_prefers_earliest_tie() {
        let rs = stats_of(&[1.0, 5.0, 2.0, 9.0]);
        assert_eq!(rs.max_divergence_step(), Ok((2, 4.0)));
        let rs = stats_of(&[1.0, 2.0, 3.0]);
        assert_eq!(rs.max_divergence_step(), Ok((2, 1.0)));
    }

    #[test]
    fn divergence_step_errors() {
        assert_eq!(RunningStats::new().max_divergence_step(), Err(StatsError::Empty));
        assert_eq!(
            stats_of(&[3.0, 2.0]).max_divergence_step(),
            Err(StatsError::NoMaxIncrease)
        );
    }

    #[test]
    fn delta_max_telescopes() {
        let rs = stats_of(&[3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0]);
        let total: f64 = rs.delta_max_series().iter().map(|d| d.1).sum();
        assert_eq!(total, 9.0 - 3.0);
        assert_eq!(rs.max_series(), &[(1, 3.0), (3, 4.0), (5, 5.0), (6, 9.0)]);
    }

    #[test]
    fn ecdf_eval() {
        let e = ecdf(&[5.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(e.eval(2.0), 0.75);
        assert_eq!(e.eval(0.5), 0.0);
        assert_eq!(e.eval(5.0), 1.0);
        assert_eq!(e.eval(100.0), 1.0);
        assert_eq!(e.steps(), vec![(1.0, 0.25), (2.0, 0.75), (5.0, 1.0)]);
        assert_eq!(ecdf(&[]), Err(StatsError::Empty));
    }

    #[test]
    fn ks_distance_against_exact_uniform() {
        // Points at the bin centres of [0,1] are 1/(2n) from the uniform CDF.
        let n = 10;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ecdf(&xs).unwrap().ks_distance(|x| x.clamp(0.0, 1.0));
        assert!((d - 0.05).abs() < 1e-12);
    }

    #[test]
    fn density_bins() {
        let d = unit_bin_density(&[0.5, 1.5, 1.7], 1.0).unwrap();
        let masses: Vec<_> = d.masses().collect();
        assert_eq!(masses.len(), 2);
        assert_eq!(masses[0].0, 0);
        assert!((masses[0].1 - 1.0 / 3.0).abs() < 1e-15);
        assert!((masses[1].1 - 2.0 / 3.0).abs() < 1e-15);

        let one = unit_bin_density(&[3.1, 3.2, 3.9], 1.0).unwrap();
        assert_eq!(one.masses().collect::<Vec<_>>(), vec![(3, 1.0)]);

        assert_eq!(unit_bin_density(&[], 1.0), Err(StatsError::Empty));
        assert_eq!(unit_bin_density(&[1.0], 0.0), Err(StatsError::BinWidth(0.0)));
        assert!(unit_bin_density(&[1.0], -1.0).is_err());
    }

    #[test]
    fn window_ratio_cases() {
        assert_eq!(window_spread_ratio(&[4.0; 40], 0.2, 0.1), Ok(0.0));

        // 20 prices: first 4 form the early window, last 2 the late window.
        let mut prices = vec![10.0, 10.0, 10.0, 12.0];
        prices.extend([20.0; 14]);
        prices.extend([1.0, 50.0]);
        let r = window_spread_ratio(&prices, 0.2, 0.1).unwrap();
        // sd{1,50} = 24.5; sd{10,10,10,12} = sqrt(0.75)
        assert!((r - 24.5 / 0.75f64.sqrt()).abs() < 1e-12);

        assert_eq!(
            window_spread_ratio(&[1.0; 10], 0.2, 0.1),
            Err(StatsError::Window { window: "late", len: 1 })
        );
    }

    #[test]
    fn trajectory_csv() {
        let mut buf = Vec::new();
        write_trajectory_csv(&[(3, 1.0), (7, 3.0)], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,price,running_mean,running_variance,running_max\n3,1,1,0,1\n7,3,2,1,3\n"
        );
    }
}

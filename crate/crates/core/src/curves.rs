//! Aggregate supply and demand step curves of the initial endowments.
//!
//! The crossing is a diagnostic of the starting conditions only. The engine
//! never sees it.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::population::{Buyer, Seller};

#[derive(Debug, Error, PartialEq)]
pub enum CurveError {
    #[error("cannot build a {0} curve from no agents")]
    Empty(CurveSide),
    #[error("curves do not cross: the first unit's supply price {supply} is not below its demand price {demand}")]
    NoCrossing { demand: f64, supply: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveSide {
    /// Unit values in descending order.
    Demand,
    /// Unit costs in ascending order.
    Supply,
}

impl std::fmt::Display for CurveSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CurveSide::Demand => f.write_str("demand"),
            CurveSide::Supply => f.write_str("supply"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub unit_price: f64,
    pub cumulative_quantity: u64,
}

/// Step `i` holds the units `(points[i-1].cumulative_quantity, points[i].cumulative_quantity]`
/// at `points[i].unit_price`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCurve {
    pub side: CurveSide,
    pub points: Vec<CurvePoint>,
}

impl StepCurve {
    fn accumulate(side: CurveSide, mut steps: Vec<(f64, u32, u64)>) -> Self {
        steps.sort_by(|a, b| {
            let by_price = match side {
                CurveSide::Demand => b.0.total_cmp(&a.0),
                CurveSide::Supply => a.0.total_cmp(&b.0),
            };
            by_price.then(a.1.cmp(&b.1))
        });
        let mut cumulative = 0;
        let points = steps
            .into_iter()
            .filter(|s| s.2 > 0)
            .map(|(unit_price, _, q)| {
                cumulative += q;
                CurvePoint {
                    unit_price,
                    cumulative_quantity: cumulative,
                }
            })
            .collect();
        Self { side, points }
    }

    pub fn total_quantity(&self) -> u64 {
        self.points.last().map_or(0, |p| p.cumulative_quantity)
    }

    /// Price of the step containing unit `q` (1-based), if the curve reaches it.
    pub fn price_at_unit(&self, q: u64) -> Option<f64> {
        if q == 0 {
            return None;
        }
        let i = self.points.partition_point(|p| p.cumulative_quantity < q);
        self.points.get(i).map(|p| p.unit_price)
    }

    /// Writes `price,cumulative_quantity,side`.
    pub fn write_csv_rows<W: Write>(&self, wtr: &mut csv::Writer<W>) -> csv::Result<()> {
        let side = self.side.to_string();
        for p in &self.points {
            wtr.write_record([
                p.unit_price.to_string(),
                p.cumulative_quantity.to_string(),
                side.clone(),
            ])?;
        }
        Ok(())
    }
}

/// Buyers sorted by initial value `B0/D0`, highest first; ties by id.
pub fn demand_curve(buyers: &[Buyer]) -> Result<StepCurve, CurveError> {
    if buyers.is_empty() {
        return Err(CurveError::Empty(CurveSide::Demand));
    }
    let steps = buyers
        .iter()
        .map(|b| (b.initial_value(), b.id, b.initial_demand as u64))
        .collect();
    Ok(StepCurve::accumulate(CurveSide::Demand, steps))
}

/// Sellers sorted by initial cost `B0/S0`, lowest first; ties by id.
pub fn supply_curve(sellers: &[Seller]) -> Result<StepCurve, CurveError> {
    if sellers.is_empty() {
        return Err(CurveError::Empty(CurveSide::Supply));
    }
    let steps = sellers
        .iter()
        .map(|s| (s.initial_cost(), s.id, s.initial_supply as u64))
        .collect();
    Ok(StepCurve::accumulate(CurveSide::Supply, steps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    /// Midpoint of the demand and supply step prices at `quantity`.
    pub price: f64,
    /// Number of leading units whose demand price exceeds their supply price.
    pub quantity: u64,
    pub demand_price: f64,
    pub supply_price: f64,
}

/// Walks both curves unit by unit (in whole steps) while demand price
/// exceeds supply price. The crossing is the last such unit; it is capped
/// by whichever curve runs out first.
pub fn intersection(demand: &StepCurve, supply: &StepCurve) -> Result<Crossing, CurveError> {
    let (mut i, mut j) = (0, 0);
    let mut last: Option<Crossing> = None;
    while let (Some(d), Some(s)) = (demand.points.get(i), supply.points.get(j)) {
        if d.unit_price <= s.unit_price {
            break;
        }
        let quantity = d.cumulative_quantity.min(s.cumulative_quantity);
        last = Some(Crossing {
            price: 0.5 * (d.unit_price + s.unit_price),
            quantity,
            demand_price: d.unit_price,
            supply_price: s.unit_price,
        });
        if d.cumulative_quantity == quantity {
            i += 1;
        }
        if s.cumulative_quantity == quantity {
            j += 1;
        }
    }
    last.ok_or_else(|| CurveError::NoCrossing {
        demand: demand.points[0].unit_price,
        supply: supply.points[0].unit_price,
    })
}

/// Writes both curves as `price,cumulative_quantity,side`, demand first.
pub fn write_curves_csv<W: Write>(demand: &StepCurve, supply: &StepCurve, out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["price", "cumulative_quantity", "side"])?;
    demand.write_csv_rows(&mut wtr)?;
    supply.write_csv_rows(&mut wtr)?;
    wtr.flush()?;
    Ok(())
}

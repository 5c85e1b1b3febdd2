//! Agent endowments: integer quantities and budgets derived from a truncated
//! exponential unit-price distribution.
//!
//! Every agent draws its quantity first and its unit price second. The
//! initial budget is the product of the two, so the agent's initial value
//! (buyer) or cost (seller) is `B0 / Q0`.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of an agent within its own side of the market.
pub type AgentId = u32;

/// Below this value of `|c| * (hi - lo)` the unit-price distribution is
/// evaluated through its linear limit.
pub const LINEAR_LIMIT_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PopulationError {
    #[error("quantity range [{lo}, {hi}] must satisfy 1 <= lo <= hi")]
    QuantityRange { lo: u32, hi: u32 },
    #[error("unit price distribution needs finite 0 < lo < hi and finite c (got lo={lo}, hi={hi}, c={c})")]
    PriceDistribution { lo: f64, hi: f64, c: f64 },
    #[error("population needs at least one buyer and one seller (got {buyers} buyers, {sellers} sellers)")]
    EmptySide { buyers: usize, sellers: usize },
}

/// Inclusive integer range for initial supply or demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantityRange {
    pub lo: u32,
    pub hi: u32,
}

impl QuantityRange {
    pub fn new(lo: u32, hi: u32) -> Result<Self, PopulationError> {
        let range = Self { lo, hi };
        range.validate()?;
        Ok(range)
    }

    pub fn validate(&self) -> Result<(), PopulationError> {
        if self.lo >= 1 && self.lo <= self.hi {
            Ok(())
        } else {
            Err(PopulationError::QuantityRange {
                lo: self.lo,
                hi: self.hi,
            })
        }
    }

    /// Midpoint of the range, the expected value of [`sample_quantity`].
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo as f64 + self.hi as f64)
    }
}

/// Truncated exponential distribution of unit prices on `[lo, hi]`:
///
/// `F(x) = (exp(-c lo) - exp(-c x)) / (exp(-c lo) - exp(-c hi))`
///
/// Positive `c` piles mass near `lo`, negative `c` near `hi`, and `c -> 0`
/// tends to the uniform distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitPriceDistribution {
    pub lo: f64,
    pub hi: f64,
    pub c: f64,
}

impl UnitPriceDistribution {
    pub fn new(lo: f64, hi: f64, c: f64) -> Result<Self, PopulationError> {
        let dist = Self { lo, hi, c };
        dist.validate()?;
        Ok(dist)
    }

    pub fn validate(&self) -> Result<(), PopulationError> {
        let ok = self.lo.is_finite()
            && self.hi.is_finite()
            && self.c.is_finite()
            && 0.0 < self.lo
            && self.lo < self.hi;
        if ok {
            Ok(())
        } else {
            Err(PopulationError::PriceDistribution {
                lo: self.lo,
                hi: self.hi,
                c: self.c,
            })
        }
    }

    fn is_linear(&self) -> bool {
        self.c.abs() * (self.hi - self.lo) < LINEAR_LIMIT_THRESHOLD
    }

    /// Mirror image about the midpoint of `[lo, hi]`. Reflecting
    /// `x -> lo + hi - x` is the same as negating `c`.
    pub fn reflected(&self) -> Self {
        Self { c: -self.c, ..*self }
    }

    /// Cumulative distribution function, clamped to `[0, 1]` outside the support.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let width = self.hi - self.lo;
        if self.is_linear() {
            return (x - self.lo) / width;
        }
        // Both numerator and denominator carry a common factor exp(-c lo).
        ((-self.c * (x - self.lo)).exp_m1() / (-self.c * width).exp_m1()).clamp(0.0, 1.0)
    }

    /// Inverse of [`cdf`](Self::cdf) for `u` in `[0, 1]`.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        inverse_cdf(self, u)
    }
}

/// Which way round the tabulated unit-price distributions are applied.
///
/// `Literal` samples the distribution exactly as parameterized. `Reflected`
/// samples its mirror image on the same support; with the EXP/LIN presets
/// this is the reading under which buyers' values exceed sellers' costs
/// near the middle of the range and the market clears.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriceOrientation {
    Literal,
    #[default]
    Reflected,
}

impl PriceOrientation {
    pub fn apply(self, dist: UnitPriceDistribution) -> UnitPriceDistribution {
        match self {
            PriceOrientation::Literal => dist,
            PriceOrientation::Reflected => dist.reflected(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Buyer {
    pub id: AgentId,
    pub budget: f64,
    pub demand: u32,
    pub initial_budget: f64,
    pub initial_demand: u32,
}

impl Buyer {
    pub fn new(id: AgentId, initial_demand: u32, initial_budget: f64) -> Self {
        Self {
            id,
            budget: initial_budget,
            demand: initial_demand,
            initial_budget,
            initial_demand,
        }
    }

    /// Initial unit value `B0 / D0`.
    pub fn initial_value(&self) -> f64 {
        self.initial_budget / self.initial_demand as f64
    }

    pub fn is_active(&self) -> bool {
        self.demand >= 1 && self.budget > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seller {
    pub id: AgentId,
    /// Revenue still to be recovered; goes negative once the target is met.
    pub budget: f64,
    pub supply: u32,
    pub initial_budget: f64,
    pub initial_supply: u32,
}

impl Seller {
    pub fn new(id: AgentId, initial_supply: u32, initial_budget: f64) -> Self {
        Self {
            id,
            budget: initial_budget,
            supply: initial_supply,
            initial_budget,
            initial_supply,
        }
    }

    /// Initial unit cost `B0 / S0`.
    pub fn initial_cost(&self) -> f64 {
        self.initial_budget / self.initial_supply as f64
    }

    pub fn is_active(&self) -> bool {
        self.supply >= 1
    }
}

/// Full parameterization of one population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub n_buyers: usize,
    pub n_sellers: usize,
    pub demand_range: QuantityRange,
    pub supply_range: QuantityRange,
    pub value_dist: UnitPriceDistribution,
    pub cost_dist: UnitPriceDistribution,
    pub orientation: PriceOrientation,
}

impl PopulationConfig {
    /// Strongly exponential, inelastic initial curves.
    pub fn exp_case() -> Self {
        Self {
            n_buyers: 1000,
            n_sellers: 500,
            demand_range: QuantityRange { lo: 10, hi: 42 },
            supply_range: QuantityRange { lo: 10, hi: 100 },
            value_dist: UnitPriceDistribution {
                lo: 5.0,
                hi: 50.0,
                c: 0.2,
            },
            cost_dist: UnitPriceDistribution {
                lo: 10.0,
                hi: 200.0,
                c: -0.15,
            },
            orientation: PriceOrientation::Reflected,
        }
    }

    /// Nearly linear, elastic initial curves.
    pub fn lin_case() -> Self {
        Self {
            value_dist: UnitPriceDistribution {
                lo: 30.0,
                hi: 50.0,
                c: 0.01,
            },
            cost_dist: UnitPriceDistribution {
                lo: 10.0,
                hi: 35.0,
                c: -0.01,
            },
            ..Self::exp_case()
        }
    }

    /// Preset by case name (`EXP` or `LIN`, case-insensitive).
    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "EXP" => Some(Self::exp_case()),
            "LIN" => Some(Self::lin_case()),
            _ => None,
        }
    }

    /// Every violated constraint, in field order.
    pub fn violations(&self) -> Vec<PopulationError> {
        let mut out = Vec::new();
        if self.n_buyers == 0 || self.n_sellers == 0 {
            out.push(PopulationError::EmptySide {
                buyers: self.n_buyers,
                sellers: self.n_sellers,
            });
        }
        out.extend(self.demand_range.validate().err());
        out.extend(self.supply_range.validate().err());
        out.extend(self.value_dist.validate().err());
        out.extend(self.cost_dist.validate().err());
        out
    }

    pub fn validate(&self) -> Result<(), PopulationError> {
        match self.violations().into_iter().next() {
            Some(err) => Err(err),
            None => Ok(()),
        }
    }

    /// Distribution buyers' unit values are actually drawn from.
    pub fn effective_value_dist(&self) -> UnitPriceDistribution {
        self.orientation.apply(self.value_dist)
    }

    /// Distribution sellers' unit costs are actually drawn from.
    pub fn effective_cost_dist(&self) -> UnitPriceDistribution {
        self.orientation.apply(self.cost_dist)
    }
}

/// Nearest integer to `lo + u (hi - lo)`, halves rounded away from zero.
pub fn sample_quantity(range: QuantityRange, u: f64) -> u32 {
    let lo = range.lo as f64;
    let hi = range.hi as f64;
    ((lo + u * (hi - lo)).round() as u32).clamp(range.lo, range.hi)
}

/// Inverse transform of the truncated exponential unit-price distribution.
///
/// Evaluated as `lo - ln(1 + u * expm1(-c (hi - lo))) / c`, which is the
/// closed-form inverse with the common factor `exp(-c lo)` pulled out so the
/// large-|c| presets neither overflow nor cancel.
pub fn inverse_cdf(dist: &UnitPriceDistribution, u: f64) -> f64 {
    let width = dist.hi - dist.lo;
    let x = if dist.is_linear() {
        dist.lo + u * width
    } else {
        let c = dist.c;
        dist.lo - (u * (-c * width).exp_m1()).ln_1p() / c
    };
    x.clamp(dist.lo, dist.hi)
}

pub fn make_buyer<R: Rng + ?Sized>(
    id: AgentId,
    demand_range: QuantityRange,
    value_dist: &UnitPriceDistribution,
    rng: &mut R,
) -> Buyer {
    let demand = sample_quantity(demand_range, rng.gen::<f64>());
    let value = inverse_cdf(value_dist, rng.gen::<f64>());
    Buyer::new(id, demand, value * demand as f64)
}

pub fn make_seller<R: Rng + ?Sized>(
    id: AgentId,
    supply_range: QuantityRange,
    cost_dist: &UnitPriceDistribution,
    rng: &mut R,
) -> Seller {
    let supply = sample_quantity(supply_range, rng.gen::<f64>());
    let cost = inverse_cdf(cost_dist, rng.gen::<f64>());
    Seller::new(id, supply, cost * supply as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub buyers: Vec<Buyer>,
    pub sellers: Vec<Seller>,
}

impl Population {
    pub fn total_demand(&self) -> u64 {
        self.buyers.iter().map(|b| b.initial_demand as u64).sum()
    }

    pub fn total_supply(&self) -> u64 {
        self.sellers.iter().map(|s| s.initial_supply as u64).sum()
    }

    /// Writes `id,role,q0,b0`, buyers first.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["id", "role", "q0", "b0"])?;
        for b in &self.buyers {
            wtr.write_record([
                b.id.to_string(),
                "buyer".to_string(),
                b.initial_demand.to_string(),
                b.initial_budget.to_string(),
            ])?;
        }
        for s in &self.sellers {
            wtr.write_record([
                s.id.to_string(),
                "seller".to_string(),
                s.initial_supply.to_string(),
                s.initial_budget.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Buyers are drawn first (ids `0..N_B`), then sellers (ids `0..N_S`), all
/// from a single generator seeded by `seed`.
pub fn build_population(cfg: &PopulationConfig, seed: u64) -> Result<Population, PopulationError> {
    cfg.validate()?;
    let mut rng = crate::seeding::population_rng(seed);
    let value_dist = cfg.effective_value_dist();
    let cost_dist = cfg.effective_cost_dist();
    let buyers = (0..cfg.n_buyers)
        .map(|i| make_buyer(i as AgentId, cfg.demand_range, &value_dist, &mut rng))
        .collect();
    let sellers = (0..cfg.n_sellers)
        .map(|i| make_seller(i as AgentId, cfg.supply_range, &cost_dist, &mut rng))
        .collect();
    Ok(Population { buyers, sellers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::mock::StepRng;

    fn table_dists() -> Vec<UnitPriceDistribution> {
        let exp = PopulationConfig::exp_case();
        let lin = PopulationConfig::lin_case();
        vec![exp.value_dist, exp.cost_dist, lin.value_dist, lin.cost_dist]
    }

    #[test]
    fn degenerate_quantity_range() {
        let r = QuantityRange::new(10, 10).unwrap();
        for u in [0.0, 0.3, 0.999_999] {
            assert_eq!(sample_quantity(r, u), 10);
        }
    }

    #[test]
    fn quantity_rounds_to_nearest() {
        let r = QuantityRange::new(10, 100).unwrap();
        // 10 + 0.497 * 90 = 54.73
        assert_eq!(sample_quantity(r, 0.497), 55);
        assert_eq!(sample_quantity(r, 0.0), 10);
        // 10 + 0.5/90 * 90 = 10.5 rounds away from zero
        assert_eq!(sample_quantity(r, 0.5 / 90.0), 11);
    }

    #[test]
    fn quantity_range_rejects_zero_and_inverted() {
        assert!(QuantityRange::new(0, 5).is_err());
        assert!(QuantityRange::new(6, 5).is_err());
    }

    #[test]
    fn price_distribution_validation() {
        assert!(UnitPriceDistribution::new(5.0, 50.0, 0.2).is_ok());
        assert!(UnitPriceDistribution::new(5.0, 50.0, 0.0).is_ok());
        assert!(UnitPriceDistribution::new(0.0, 50.0, 0.2).is_err());
        assert!(UnitPriceDistribution::new(50.0, 5.0, 0.2).is_err());
        assert!(UnitPriceDistribution::new(5.0, 50.0, f64::NAN).is_err());
    }

    #[test]
    fn inverse_cdf_endpoints() {
        for d in table_dists() {
            for dist in [d, d.reflected()] {
                assert_eq!(inverse_cdf(&dist, 0.0), dist.lo);
                assert!((inverse_cdf(&dist, 1.0) - dist.hi).abs() < 1e-12 * dist.hi);
            }
        }
    }

    #[test]
    fn inverse_cdf_monotone_on_grid() {
        for d in table_dists() {
            for dist in [d, d.reflected()] {
                let mut prev = f64::NEG_INFINITY;
                for i in 0..=1000 {
                    let x = inverse_cdf(&dist, i as f64 / 1000.0);
                    assert!(x >= prev, "{dist:?} not monotone at {i}");
                    prev = x;
                }
            }
        }
    }

    #[test]
    fn linear_limit_is_continuous() {
        let lin = UnitPriceDistribution::new(10.0, 35.0, 0.0).unwrap();
        for c in [1e-12, -1e-12] {
            let tiny = UnitPriceDistribution::new(10.0, 35.0, c).unwrap();
            for i in 0..=200 {
                let u = i as f64 / 200.0;
                let linear = lin.lo + u * (lin.hi - lin.lo);
                assert!((inverse_cdf(&tiny, u) - linear).abs() < 1e-6 * (lin.hi - lin.lo));
                assert_eq!(inverse_cdf(&lin, u), linear);
            }
        }
    }

    #[test]
    fn reflected_is_mirror_image() {
        for d in table_dists() {
            let r = d.reflected();
            for i in 1..100 {
                let x = d.lo + (d.hi - d.lo) * i as f64 / 100.0;
                let mirrored = 1.0 - d.cdf(d.lo + d.hi - x);
                assert!((r.cdf(x) - mirrored).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn buyer_budget_is_product_of_draws() {
        let b = Buyer::new(3, 20, 30.0 * 20.0);
        assert_eq!(b.initial_budget, 600.0);
        assert_eq!(b.initial_value(), 30.0);
        assert!(b.is_active());
        let s = Seller::new(4, 50, 20.0 * 50.0);
        assert_eq!(s.initial_budget, 1000.0);
        assert_eq!(s.initial_cost(), 20.0);
    }

    #[test]
    fn make_agents_follow_draw_order() {
        // StepRng yields 0 for every u64, i.e. u = 0 for both draws.
        let mut rng = StepRng::new(0, 0);
        let exp = PopulationConfig::exp_case();
        let b = make_buyer(0, exp.demand_range, &exp.value_dist, &mut rng);
        assert_eq!(b.initial_demand, 10);
        assert_eq!(b.initial_value(), 5.0);
        let s = make_seller(0, exp.supply_range, &exp.cost_dist, &mut rng);
        assert_eq!(s.initial_supply, 10);
        assert_eq!(s.initial_cost(), 10.0);
    }

    #[test]
    fn presets_match_tabulated_parameters() {
        let exp = PopulationConfig::preset("exp").unwrap();
        assert_eq!((exp.n_buyers, exp.n_sellers), (1000, 500));
        assert_eq!(exp.supply_range, QuantityRange { lo: 10, hi: 100 });
        assert_eq!(exp.demand_range, QuantityRange { lo: 10, hi: 42 });
        assert_eq!((exp.cost_dist.lo, exp.cost_dist.hi, exp.cost_dist.c), (10.0, 200.0, -0.15));
        assert_eq!((exp.value_dist.lo, exp.value_dist.hi, exp.value_dist.c), (5.0, 50.0, 0.2));
        let lin = PopulationConfig::preset("LIN").unwrap();
        assert_eq!((lin.cost_dist.lo, lin.cost_dist.hi, lin.cost_dist.c), (10.0, 35.0, -0.01));
        assert_eq!((lin.value_dist.lo, lin.value_dist.hi, lin.value_dist.c), (30.0, 50.0, 0.01));
        assert_eq!(lin.supply_range, exp.supply_range);
        assert_eq!(lin.demand_range, exp.demand_range);
        assert!(PopulationConfig::preset("QUAD").is_none());
    }

    #[test]
    fn single_agent_population() {
        let cfg = PopulationConfig {
            n_buyers: 1,
            n_sellers: 1,
            ..PopulationConfig::exp_case()
        };
        let pop = build_population(&cfg, 9).unwrap();
        assert_eq!(pop.buyers.len(), 1);
        assert_eq!(pop.sellers.len(), 1);
        let b = pop.buyers[0];
        assert!((10..=42).contains(&b.initial_demand));
        assert!((5.0..=50.0).contains(&b.initial_value()));
        let s = pop.sellers[0];
        assert!((10..=100).contains(&s.initial_supply));
        assert!((10.0..=200.0).contains(&s.initial_cost()));
    }

    #[test]
    fn empty_side_rejected() {
        let cfg = PopulationConfig {
            n_sellers: 0,
            ..PopulationConfig::lin_case()
        };
        assert!(matches!(
            build_population(&cfg, 1),
            Err(PopulationError::EmptySide { .. })
        ));
    }

    #[test]
    fn population_csv_layout() {
        let pop = Population {
            buyers: vec![Buyer::new(0, 20, 600.0)],
            sellers: vec![Seller::new(0, 50, 1000.5)],
        };
        let mut buf = Vec::new();
        pop.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "id,role,q0,b0\n0,buyer,20,600\n0,seller,50,1000.5\n"
        );
    }
}

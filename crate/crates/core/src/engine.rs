//! One trading session: random bilateral pairing of budget-constrained
//! buyers and sellers until one side of the market is empty.
//!
//! Each step draws, in order: the buyer slot, the seller slot, the bid, the
//! ask, and the surplus split `kappa` only when `bid > ask`. Failed attempts
//! count as steps and are recorded.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::population::{AgentId, Buyer, Population, Seller};
use crate::seeding;

/// Default cap on attempted transactions per session.
pub const DEFAULT_MAX_STEPS: u64 = 100_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("no active {0} left in the market")]
    EmptySide(Side),
    #[error("session exceeded the step limit of {limit} ({buyers} buyers, {sellers} sellers still active)")]
    StepLimit {
        limit: u64,
        buyers: usize,
        sellers: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buyers,
    Sellers,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Buyers => f.write_str("buyers"),
            Side::Sellers => f.write_str("sellers"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    BuyersExhausted,
    SellersExhausted,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Termination::BuyersExhausted => f.write_str("buyers_exhausted"),
            Termination::SellersExhausted => f.write_str("sellers_exhausted"),
        }
    }
}

/// How a seller's ask was formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AskRegime {
    /// Positive budget, two or more units: uniform on `[B/S, B]`.
    Recovering,
    /// Positive budget, last unit: exactly `B`.
    LastUnit,
    /// Revenue target met (`B <= 0`): uniform on `(0, B0/S0]`.
    Profit,
}

impl AskRegime {
    pub fn of(seller: &Seller) -> Self {
        if seller.budget <= 0.0 {
            AskRegime::Profit
        } else if seller.supply >= 2 {
            AskRegime::Recovering
        } else {
            AskRegime::LastUnit
        }
    }

    /// Closed bounds of the asks this regime can produce for `seller`.
    /// The `Profit` interval is open at zero.
    pub fn bounds(self, seller: &Seller) -> (f64, f64) {
        match self {
            AskRegime::Recovering => (seller.budget / seller.supply as f64, seller.budget),
            AskRegime::LastUnit => (seller.budget, seller.budget),
            AskRegime::Profit => (0.0, seller.initial_cost()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settlement {
    pub price: f64,
    pub kappa: f64,
}

/// One attempted transaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    /// 1-based attempt counter.
    pub step: u64,
    pub buyer_id: AgentId,
    pub seller_id: AgentId,
    pub bid: f64,
    pub ask: f64,
    pub settlement: Option<Settlement>,
}

impl TradeRecord {
    pub fn success(&self) -> bool {
        self.settlement.is_some()
    }

    pub fn price(&self) -> Option<f64> {
        self.settlement.map(|s| s.price)
    }
}

/// Flags raised by [`apply_trade`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Exits {
    pub buyer: bool,
    pub seller: bool,
}

/// Uniform on `(0, upper]`, drawn as `upper * (1 - U)` with `U` in `[0, 1)`.
fn uniform_half_open<R: Rng + ?Sized>(upper: f64, rng: &mut R) -> f64 {
    upper * (1.0 - rng.gen::<f64>())
}

/// Uniform on `[lo, hi]`.
fn uniform_closed<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    lo + rng.gen::<f64>() * (hi - lo)
}

/// Bid uniform on `(0, B/D]`.
pub fn buyer_bid<R: Rng + ?Sized>(buyer: &Buyer, rng: &mut R) -> f64 {
    debug_assert!(buyer.is_active());
    uniform_half_open(buyer.budget / buyer.demand as f64, rng)
}

pub fn seller_ask<R: Rng + ?Sized>(seller: &Seller, rng: &mut R) -> f64 {
    debug_assert!(seller.is_active());
    match AskRegime::of(seller) {
        AskRegime::Recovering => {
            uniform_closed(seller.budget / seller.supply as f64, seller.budget, rng)
        }
        AskRegime::LastUnit => seller.budget,
        AskRegime::Profit => uniform_half_open(seller.initial_cost(), rng),
    }
}

/// Settlement price `(bid - ask) * kappa + ask`, or `None` unless `bid > ask`.
pub fn settle(bid: f64, ask: f64, kappa: f64) -> Option<f64> {
    if bid > ask {
        // Clamp guards against the last ulp when kappa is exactly 0 or 1.
        Some(((bid - ask) * kappa + ask).clamp(ask, bid))
    } else {
        None
    }
}

/// Moves one unit at `price`. The buyer exits once her demand is met or her
/// budget is spent; the seller exits only when sold out.
pub fn apply_trade(buyer: &mut Buyer, seller: &mut Seller, price: f64) -> Exits {
    buyer.budget -= price;
    buyer.demand -= 1;
    seller.budget -= price;
    seller.supply -= 1;
    Exits {
        buyer: buyer.demand == 0 || buyer.budget <= 0.0,
        seller: seller.supply == 0,
    }
}

/// Agents plus the index lists of those still trading.
#[derive(Debug, Clone)]
pub struct MarketState {
    buyers: Vec<Buyer>,
    sellers: Vec<Seller>,
    active_buyers: Vec<usize>,
    active_sellers: Vec<usize>,
    step: u64,
}

impl MarketState {
    pub fn new(buyers: Vec<Buyer>, sellers: Vec<Seller>) -> Self {
        let active_buyers = (0..buyers.len()).filter(|&i| buyers[i].is_active()).collect();
        let active_sellers = (0..sellers.len()).filter(|&i| sellers[i].is_active()).collect();
        Self {
            buyers,
            sellers,
            active_buyers,
            active_sellers,
            step: 0,
        }
    }

    pub fn from_population(pop: Population) -> Self {
        Self::new(pop.buyers, pop.sellers)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn buyers(&self) -> &[Buyer] {
        &self.buyers
    }

    pub fn sellers(&self) -> &[Seller] {
        &self.sellers
    }

    pub fn active_buyer_count(&self) -> usize {
        self.active_buyers.len()
    }

    pub fn active_seller_count(&self) -> usize {
        self.active_sellers.len()
    }

    /// Active buyer in slot `slot` of the active list.
    pub fn active_buyer(&self, slot: usize) -> &Buyer {
        &self.buyers[self.active_buyers[slot]]
    }

    pub fn active_seller(&self, slot: usize) -> &Seller {
        &self.sellers[self.active_sellers[slot]]
    }

    pub fn termination(&self) -> Option<Termination> {
        if self.active_buyers.is_empty() {
            Some(Termination::BuyersExhausted)
        } else if self.active_sellers.is_empty() {
            Some(Termination::SellersExhausted)
        } else {
            None
        }
    }

    /// Draws an active buyer slot and an active seller slot, each uniformly
    /// and independently, with replacement across steps.
    pub fn draw_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(usize, usize), EngineError> {
        if self.active_buyers.is_empty() {
            return Err(EngineError::EmptySide(Side::Buyers));
        }
        if self.active_sellers.is_empty() {
            return Err(EngineError::EmptySide(Side::Sellers));
        }
        let b = rng.gen_range(0..self.active_buyers.len());
        let s = rng.gen_range(0..self.active_sellers.len());
        Ok((b, s))
    }

    /// Resolves one attempt between the given active slots with an already
    /// formed bid and ask. `kappa` is only evaluated when the trade succeeds.
    pub fn execute(
        &mut self,
        buyer_slot: usize,
        seller_slot: usize,
        bid: f64,
        ask: f64,
        kappa: impl FnOnce() -> f64,
    ) -> TradeRecord {
        self.step += 1;
        let bi = self.active_buyers[buyer_slot];
        let si = self.active_sellers[seller_slot];
        let mut record = TradeRecord {
            step: self.step,
            buyer_id: self.buyers[bi].id,
            seller_id: self.sellers[si].id,
            bid,
            ask,
            settlement: None,
        };
        if bid > ask {
            let kappa = kappa();
            if let Some(price) = settle(bid, ask, kappa) {
                let exits = apply_trade(&mut self.buyers[bi], &mut self.sellers[si], price);
                if exits.buyer {
                    self.active_buyers.swap_remove(buyer_slot);
                }
                if exits.seller {
                    self.active_sellers.swap_remove(seller_slot);
                }
                record.settlement = Some(Settlement { price, kappa });
            }
        }
        record
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<TradeRecord, EngineError> {
        let (b, s) = self.draw_pair(rng)?;
        let bid = buyer_bid(self.active_buyer(b), rng);
        let ask = seller_ask(self.active_seller(s), rng);
        Ok(self.execute(b, s, bid, ask, || rng.gen::<f64>()))
    }

    pub fn into_agents(self) -> (Vec<Buyer>, Vec<Seller>) {
        (self.buyers, self.sellers)
    }
}

/// End state of a session whose trade records were streamed elsewhere.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub final_buyers: Vec<Buyer>,
    pub final_sellers: Vec<Seller>,
    pub total_steps: u64,
    pub termination: Termination,
}

#[derive(Debug, Clone)]
pub struct SessionResult {
    pub trades: Vec<TradeRecord>,
    pub final_buyers: Vec<Buyer>,
    pub final_sellers: Vec<Seller>,
    pub total_steps: u64,
    pub termination: Termination,
}

impl SessionResult {
    /// `(step, price)` of every successful trade, in order.
    pub fn trajectory(&self) -> Vec<(u64, f64)> {
        self.trades
            .iter()
            .filter_map(|t| t.price().map(|p| (t.step, p)))
            .collect()
    }
}

/// Runs a session to completion, handing every record to `on_trade`.
pub fn run_session_with<F>(
    population: Population,
    seed: u64,
    max_steps: u64,
    mut on_trade: F,
) -> Result<SessionOutcome, EngineError>
where
    F: FnMut(&TradeRecord),
{
    let mut rng = seeding::engine_rng(seed);
    let mut state = MarketState::from_population(population);
    let termination = loop {
        if let Some(t) = state.termination() {
            break t;
        }
        if state.step_count() >= max_steps {
            return Err(EngineError::StepLimit {
                limit: max_steps,
                buyers: state.active_buyer_count(),
                sellers: state.active_seller_count(),
            });
        }
        let record = state.step(&mut rng)?;
        on_trade(&record);
    };
    let total_steps = state.step_count();
    let (final_buyers, final_sellers) = state.into_agents();
    Ok(SessionOutcome {
        final_buyers,
        final_sellers,
        total_steps,
        termination,
    })
}

/// Runs a session and keeps every trade record.
pub fn run_session(population: Population, seed: u64) -> Result<SessionResult, EngineError> {
    let mut trades = Vec::new();
    let outcome = run_session_with(population, seed, DEFAULT_MAX_STEPS, |t| trades.push(*t))?;
    Ok(SessionResult {
        trades,
        final_buyers: outcome.final_buyers,
        final_sellers: outcome.final_sellers,
        total_steps: outcome.total_steps,
        termination: outcome.termination,
    })
}

/// CSV sink for `step,buyer_id,seller_id,bid,ask,success,price`. Failed
/// attempts leave `price` empty.
pub struct TradeLogWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TradeLogWriter<W> {
    pub fn new(out: W) -> csv::Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(["step", "buyer_id", "seller_id", "bid", "ask", "success", "price"])?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, t: &TradeRecord) -> csv::Result<()> {
        self.inner.write_record([
            t.step.to_string(),
            t.buyer_id.to_string(),
            t.seller_id.to_string(),
            t.bid.to_string(),
            t.ask.to_string(),
            t.success().to_string(),
            t.price().map(|p| p.to_string()).unwrap_or_default(),
        ])
    }

    pub fn finish(mut self) -> csv::Result<W> {
        self.inner.flush()?;
        self.inner
            .into_inner()
            .map_err(|e| csv::Error::from(e.into_error()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn buyer(budget: f64, demand: u32) -> Buyer {
        Buyer::new(0, demand, budget)
    }

    #[test]
    fn settle_formula_and_endpoints() {
        assert_eq!(settle(10.0, 4.0, 0.5), Some(7.0));
        assert_eq!(settle(10.0, 4.0, 0.0), Some(4.0));
        assert_eq!(settle(10.0, 4.0, 1.0), Some(10.0));
        assert_eq!(settle(4.0, 4.0, 0.5), None);
        assert_eq!(settle(3.0, 4.0, 0.5), None);
    }

    #[test]
    fn bid_stays_in_half_open_interval() {
        let mut r = rng();
        let b = buyer(100.0, 5);
        for _ in 0..10_000 {
            let bid = buyer_bid(&b, &mut r);
            assert!(bid > 0.0 && bid <= 20.0);
        }
        let last = buyer(7.0, 1);
        for _ in 0..1000 {
            let bid = buyer_bid(&last, &mut r);
            assert!(bid > 0.0 && bid <= 7.0);
        }
    }

    #[test]
    fn bid_mean_matches_uniform() {
        let mut r = rng();
        let b = buyer(100.0, 5);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| buyer_bid(&b, &mut r)).sum::<f64>() / n as f64;
        assert!((mean - 10.0).abs() < 0.2, "mean {mean}");
    }

    #[test]
    fn ask_regimes() {
        let mut r = rng();
        let mut s = Seller::new(0, 3, 60.0);
        assert_eq!(AskRegime::of(&s), AskRegime::Recovering);
        for _ in 0..1000 {
            let ask = seller_ask(&s, &mut r);
            assert!((20.0..=60.0).contains(&ask));
        }

        s = Seller::new(0, 50, 1000.0);
        s.budget = -5.0;
        s.supply = 7;
        assert_eq!(AskRegime::of(&s), AskRegime::Profit);
        for _ in 0..1000 {
            let ask = seller_ask(&s, &mut r);
            assert!(ask > 0.0 && ask <= 20.0);
        }

        s = Seller::new(0, 10, 500.0);
        s.budget = 42.0;
        s.supply = 1;
        assert_eq!(AskRegime::of(&s), AskRegime::LastUnit);
        assert_eq!(seller_ask(&s, &mut r), 42.0);
    }

    #[test]
    fn apply_trade_updates_and_exits() {
        let mut b = buyer(100.0, 5);
        let mut s = Seller::new(0, 10, 300.0);
        let exits = apply_trade(&mut b, &mut s, 7.0);
        assert_eq!((b.budget, b.demand), (93.0, 4));
        assert_eq!(exits, Exits::default());

        let mut b = buyer(7.0, 1);
        let exits = apply_trade(&mut b, &mut s, 7.0);
        assert_eq!((b.budget, b.demand), (0.0, 0));
        assert!(exits.buyer);

        let mut s = Seller::new(0, 2, 10.0);
        let exits = apply_trade(&mut buyer(100.0, 5), &mut s, 25.0);
        assert_eq!((s.budget, s.supply), (-15.0, 1));
        assert!(!exits.seller);
        assert_eq!(AskRegime::of(&s), AskRegime::Profit);
        let exits = apply_trade(&mut buyer(100.0, 5), &mut s, 1.0);
        assert!(exits.seller);
    }

    #[test]
    fn buyer_exits_when_budget_spent_with_demand_left() {
        let mut b = buyer(10.0, 3);
        let mut s = Seller::new(0, 10, 300.0);
        let exits = apply_trade(&mut b, &mut s, 10.0);
        assert!(exits.buyer);
        assert_eq!(b.demand, 2);
    }

    #[test]
    fn single_pair_is_always_drawn() {
        let state = MarketState::new(vec![buyer(10.0, 1)], vec![Seller::new(0, 1, 5.0)]);
        let mut r = rng();
        for _ in 0..100 {
            assert_eq!(state.draw_pair(&mut r).unwrap(), (0, 0));
        }
    }

    #[test]
    fn draw_pair_is_fair() {
        let buyers = vec![Buyer::new(0, 5, 100.0), Buyer::new(1, 5, 100.0)];
        let state = MarketState::new(buyers, vec![Seller::new(0, 5, 50.0)]);
        let mut r = rng();
        let n = 10_000;
        let first = (0..n).filter(|_| state.draw_pair(&mut r).unwrap().0 == 0).count();
        // 3 sigma of Binomial(10^4, 1/2) is 150; the band is wider.
        assert!((4700..=5300).contains(&first), "{first}");
    }

    #[test]
    fn empty_side_is_an_error() {
        let state = MarketState::new(vec![], vec![Seller::new(0, 5, 50.0)]);
        assert_eq!(
            state.draw_pair(&mut rng()),
            Err(EngineError::EmptySide(Side::Buyers))
        );
        let state = MarketState::new(vec![buyer(10.0, 1)], vec![]);
        assert_eq!(
            state.draw_pair(&mut rng()),
            Err(EngineError::EmptySide(Side::Sellers))
        );
    }

    #[test]
    fn forced_success_and_failure() {
        let mut state = MarketState::new(vec![buyer(100.0, 5)], vec![Seller::new(0, 10, 300.0)]);
        let rec = state.execute(0, 0, 10.0, 4.0, || 0.5);
        assert_eq!(rec.step, 1);
        assert_eq!(rec.price(), Some(7.0));
        assert_eq!(state.buyers()[0].budget, 93.0);
        assert_eq!(state.sellers()[0].budget, 293.0);
        assert_eq!(state.sellers()[0].supply, 9);

        let before = (state.buyers()[0], state.sellers()[0]);
        let rec = state.execute(0, 0, 4.0, 4.0, || panic!("kappa drawn on failure"));
        assert!(!rec.success());
        assert_eq!(rec.step, 2);
        assert_eq!((state.buyers()[0], state.sellers()[0]), before);
    }

    #[test]
    fn step_counter_counts_every_attempt() {
        let pop = crate::population::build_population(
            &crate::population::PopulationConfig {
                n_buyers: 20,
                n_sellers: 10,
                ..crate::population::PopulationConfig::exp_case()
            },
            3,
        )
        .unwrap();
        let mut state = MarketState::from_population(pop);
        let mut r = rng();
        let mut records = 0;
        while state.termination().is_none() {
            state.step(&mut r).unwrap();
            records += 1;
        }
        assert_eq!(state.step_count(), records);
    }

    #[test]
    fn single_unit_market_closes() {
        let pop = Population {
            buyers: vec![Buyer::new(0, 1, 100.0)],
            sellers: vec![Seller::new(0, 1, 1.0)],
        };
        let result = run_session(pop, 17).unwrap();
        assert_eq!(result.termination, Termination::BuyersExhausted);
        assert_eq!(result.total_steps as usize, result.trades.len());
        let last = result.trades.last().unwrap();
        assert_eq!(last.ask, 1.0);
        assert!(last.success());
        assert!(result.trades[..result.trades.len() - 1].iter().all(|t| !t.success()));
        assert_eq!(result.final_buyers[0].demand, 0);
        assert_eq!(result.final_sellers[0].supply, 0);
    }

    #[test]
    fn step_limit_aborts() {
        // Asks never drop below 1000 while bids are at most 1.
        let pop = Population {
            buyers: vec![Buyer::new(0, 1, 1.0)],
            sellers: vec![Seller::new(0, 2, 2000.0)],
        };
        let err = run_session_with(pop, 1, 50, |_| {}).unwrap_err();
        assert_eq!(
            err,
            EngineError::StepLimit {
                limit: 50,
                buyers: 1,
                sellers: 1
            }
        );
    }

    #[test]
    fn trade_log_csv() {
        let mut w = TradeLogWriter::new(Vec::new()).unwrap();
        w.write(&TradeRecord {
            step: 1,
            buyer_id: 2,
            seller_id: 3,
            bid: 10.0,
            ask: 4.0,
            settlement: Some(Settlement { price: 7.0, kappa: 0.5 }),
        })
        .unwrap();
        w.write(&TradeRecord {
            step: 2,
            buyer_id: 2,
            seller_id: 3,
            bid: 0.1,
            ask: 4.25,
            settlement: None,
        })
        .unwrap();
        let out = String::from_utf8(w.finish().unwrap()).unwrap();
        assert_eq!(
            out,
            "step,buyer_id,seller_id,bid,ask,success,price\n1,2,3,10,4,true,7\n2,2,3,0.1,4.25,false,\n"
        );
    }
}

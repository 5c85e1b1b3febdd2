//! Whole-session properties of the trading engine.

mod common;

use bilateral_core::engine::{run_session, Termination};
use bilateral_core::population::{build_population, PopulationConfig};

use common::checked_session;

#[test]
fn exp_session_respects_every_trade_invariant() {
    let pop = build_population(&PopulationConfig::exp_case(), 21).unwrap();
    let initial = pop.clone();
    let (records, state) = checked_session(pop.clone(), 21);

    // The manual replay is the same random stream as run_session.
    let result = run_session(pop, 21).unwrap();
    assert_eq!(result.trades, records);
    assert_eq!(result.termination, Termination::BuyersExhausted);
    assert_eq!(result.total_steps, records.len() as u64);
    assert_eq!(state.step_count(), result.total_steps);

    let prices: f64 = records.iter().filter_map(|r| r.price()).sum();
    let trades = records.iter().filter(|r| r.success()).count() as u64;
    let spend: f64 = initial
        .buyers
        .iter()
        .zip(&result.final_buyers)
        .map(|(b0, b)| b0.initial_budget - b.budget)
        .sum();
    let revenue: f64 = initial
        .sellers
        .iter()
        .zip(&result.final_sellers)
        .map(|(s0, s)| s0.initial_budget - s.budget)
        .sum();
    assert!(((spend - revenue) / revenue).abs() < 1e-6);
    assert!(((spend - prices) / prices).abs() < 1e-6);

    let bought: u64 = initial
        .buyers
        .iter()
        .zip(&result.final_buyers)
        .map(|(b0, b)| (b0.initial_demand - b.demand) as u64)
        .sum();
    let sold: u64 = initial
        .sellers
        .iter()
        .zip(&result.final_sellers)
        .map(|(s0, s)| (s0.initial_supply - s.supply) as u64)
        .sum();
    assert_eq!(bought, trades);
    assert_eq!(sold, trades);
    assert_eq!(bought, initial.total_demand());
    assert!(result.final_buyers.iter().all(|b| b.budget >= 0.0 && b.demand == 0));
}

#[test]
fn lin_session_terminates_with_buyers_satisfied() {
    let pop = build_population(&PopulationConfig::lin_case(), 4).unwrap();
    let (records, state) = checked_session(pop, 4);
    assert_eq!(state.termination(), Some(Termination::BuyersExhausted));
    assert!(records.len() < 100_000_000);
    assert!(state.buyers().iter().all(|b| b.demand == 0));
}

#[test]
fn sessions_are_reproducible() {
    let cfg = PopulationConfig {
        n_buyers: 100,
        n_sellers: 50,
        ..PopulationConfig::exp_case()
    };
    let a = run_session(build_population(&cfg, 3).unwrap(), 9).unwrap();
    let b = run_session(build_population(&cfg, 3).unwrap(), 9).unwrap();
    assert_eq!(a.trades, b.trades);
    let c = run_session(build_population(&cfg, 3).unwrap(), 10).unwrap();
    assert_ne!(a.trades, c.trades);
}

#[test]
fn same_pair_can_repeat() {
    let cfg = PopulationConfig {
        n_buyers: 2,
        n_sellers: 2,
        ..PopulationConfig::lin_case()
    };
    let r = run_session(build_population(&cfg, 1).unwrap(), 1).unwrap();
    let repeats = r
        .trades
        .windows(2)
        .filter(|w| w[0].buyer_id == w[1].buyer_id && w[0].seller_id == w[1].seller_id)
        .count();
    assert!(repeats > 0);
}

//! Bilateral short-term power market with myopic, budget-constrained
//! random traders.
//!
//! Buyers and sellers are endowed with integer quantities and budgets
//! ([`population`]), then paired at random one unit at a time until one
//! side of the market is empty ([`engine`]). The resulting price
//! trajectories are summarized by [`stats`], the initial aggregate
//! curves by [`curves`], and batches of seeded sessions are driven by
//! [`harness`].
//!
//! ```
//! use bilateral_core::population::{build_population, PopulationConfig};
//! use bilateral_core::engine::{run_session, Termination};
//!
//! let cfg = PopulationConfig { n_buyers: 20, n_sellers: 10, ..PopulationConfig::exp_case() };
//! let pop = build_population(&cfg, 1).unwrap();
//! let result = run_session(pop, 1).unwrap();
//! assert_eq!(result.termination, Termination::BuyersExhausted);
//! ```

pub mod curves;
pub mod engine;
pub mod harness;
pub mod population;
pub mod seeding;
pub mod stats;

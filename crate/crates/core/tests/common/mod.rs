//! Helpers shared by integration test targets.

use bilateral_core::engine::{buyer_bid, seller_ask, AskRegime, MarketState, TradeRecord};
use bilateral_core::population::Population;
use bilateral_core::seeding;

/// Replays a session through the public step primitives, checking every
/// attempt against the pre-trade state of the two agents involved.
pub fn checked_session(pop: Population, seed: u64) -> (Vec<TradeRecord>, MarketState) {
    let mut rng = seeding::engine_rng(seed);
    let mut state = MarketState::from_population(pop);
    let mut records = Vec::new();
    while state.termination().is_none() {
        let (b, s) = state.draw_pair(&mut rng).unwrap();
        let buyer = *state.active_buyer(b);
        let seller = *state.active_seller(s);
        assert!(buyer.budget > 0.0 && buyer.demand >= 1);
        assert!(seller.supply >= 1);

        let bid = buyer_bid(&buyer, &mut rng);
        assert!(bid > 0.0 && bid <= buyer.budget / buyer.demand as f64);

        let ask = seller_ask(&seller, &mut rng);
        let regime = AskRegime::of(&seller);
        let (lo, hi) = regime.bounds(&seller);
        match regime {
            AskRegime::Profit => assert!(ask > 0.0 && ask <= hi),
            _ => assert!(ask >= lo && ask <= hi, "{regime:?} ask {ask} not in [{lo}, {hi}]"),
        }

        let rec = state.execute(b, s, bid, ask, || rand::Rng::gen::<f64>(&mut rng));
        assert_eq!(rec.success(), bid > ask);
        if let Some(st) = rec.settlement {
            assert!(ask <= st.price && st.price <= bid);
            assert!((0.0..=1.0).contains(&st.kappa));
            let after = &state.buyers()[rec.buyer_id as usize];
            assert_eq!(after.id, rec.buyer_id);
            assert!(after.budget >= 0.0);
        }
        records.push(rec);
    }
    (records, state)
}

//! Equal-rate planner: every user gets one MODCOD for all slots before its
//! deadline, the lowest one that meets its demand.

use crate::error::{Binding, Error, Result};
use crate::modcod::ModcodTable;
use crate::model::{CMat, RateAssignment, Scenario};
use crate::window_opt::{finalize, WindowConfig, WindowSolution};

/// Constant per-user targets covering each demand over the user's slots.
pub fn heuristic_assign(scenario: &Scenario, table: &ModcodTable) -> Result<RateAssignment> {
    let mut g = RateAssignment::zeros(scenario.n_users, scenario.n_slots);
    for m in 0..scenario.n_users {
        if scenario.demand_bits[m] == 0.0 {
            continue;
        }
        let required = scenario.demand_rate(m) / scenario.deadline[m] as f64;
        // Absorbs rounding in the division so exact table rates are kept.
        let l = table.min_index_for_rate(required * (1.0 - 1e-12)).ok_or_else(|| {
            Error::infeasible(
                Binding::Demand,
                format!("user {m} needs {required:.3} bit/s/Hz per slot, above the top MODCOD"),
            )
        })?;
        for t in 0..scenario.deadline[m] {
            g.g[(m, t)] = table.sinr_at(l);
        }
    }
    Ok(g)
}

/// Equal-rate assignment followed by one sparse precoding problem per slot.
/// Slots that cannot meet their targets are repaired by moving rate to
/// other slots.
pub fn run_heuristic_pipeline(
    scenario: &Scenario,
    channel: &[CMat],
    table: &ModcodTable,
    cfg: &WindowConfig,
) -> Result<WindowSolution> {
    let g = heuristic_assign(scenario, table)?;
    finalize(g, scenario, channel, table, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::scenario;

    #[test]
    fn zero_demand_is_all_zero() {
        let table = ModcodTable::shipped();
        let g = heuristic_assign(&scenario(2, 3, 4), &table).unwrap();
        assert!(g.g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn four_bits_per_symbol_example() {
        let table = ModcodTable::shipped();
        let mut s = scenario(2, 1, 10);
        s.demand_bits = vec![200e6];
        s.deadline = vec![5];
        let g = heuristic_assign(&s, &table).unwrap();
        let l = table.index_of(g.g[(0, 0)]).unwrap();
        assert!(table.rate_at(l) >= 4.0 && table.rate_at(l - 1) < 4.0);
        assert!((0..5).all(|t| g.g[(0, t)] == g.g[(0, 0)]));
        assert!((5..10).all(|t| g.g[(0, t)] == 0.0));
    }

    #[test]
    fn exact_rate_is_chosen_not_the_next() {
        let table = ModcodTable::shipped();
        let r = table.rate_at(7);
        let mut s = scenario(1, 1, 3);
        s.demand_bits = vec![r * 3.0 * s.bits_per_rate()];
        let g = heuristic_assign(&s, &table).unwrap();
        assert_eq!(table.index_of(g.g[(0, 0)]), Some(7));
    }

    #[test]
    fn too_much_demand_is_infeasible() {
        let table = ModcodTable::shipped();
        let mut s = scenario(1, 1, 2);
        s.demand_bits = vec![table.max_rate() * 2.5 * s.bits_per_rate()];
        assert!(matches!(heuristic_assign(&s, &table), Err(Error::Infeasible { binding: Binding::Demand, .. })));
    }
}

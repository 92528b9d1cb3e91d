//! The shipped study environments: the barrier map with its perimeter
//! expert route and trap pocket, and the default highway chain.

use super::chain::Chain;
use super::grid::{Cell, GridWorld};

/// The canonical barrier map.
///
/// The goal sits in the top-left corner and the expert route runs right to
/// left along the top row. A wall under the top row (open only at the far
/// right) creates a pocket of cells directly beneath the expert path:
/// geometrically adjacent to it, but reachable from it only by the long way
/// around. A short interior wall adds a second obstacle on the lower half.
pub const FIG1_MAP: &str = include_str!("../../maps/fig1.grid");

/// The shipped map as a ready environment.
pub fn fig1_world() -> GridWorld {
    GridWorld::from_map(FIG1_MAP).expect("shipped map is valid")
}

/// Expert start: top-right corner, state id 7 = cell (7, 0).
pub fn fig1_expert_start() -> usize {
    7
}

/// Expert route: seven Left moves along the top row into the goal.
pub fn fig1_expert_route() -> Vec<usize> {
    vec![2; 7]
}

/// The trap pocket: cells one row below the expert path, separated from it
/// by the wall. Geometric-distance rewards rank these cells highly even
/// though no single action leads from them to an expert state.
pub fn fig1_trap_cells() -> Vec<Cell> {
    (0..=6).map(|x| Cell::new(x, 1)).collect()
}

/// Default highway chain used by the discriminator study.
pub fn chain_world() -> Chain {
    Chain::new(10)
}

/// Expert route on the default chain: Advance from position 0 to the end.
pub fn chain_expert_route() -> Vec<usize> {
    vec![0; 9]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_expert_demo, Env};

    #[test]
    fn shipped_map_loads_and_route_replays() {
        let env = fig1_world();
        assert_eq!(env.num_states(), 64);
        let demo = make_expert_demo(
            &env,
            &fig1_expert_route(),
            &env.state(fig1_expert_start()).unwrap(),
        )
        .unwrap();
        assert_eq!(demo.trajectory.len(), 7);
        // The demo covers exactly the top row.
        let ids: Vec<usize> = demo.expert_states.iter().map(|s| s.id).collect();
        assert_eq!(ids, vec![7, 6, 5, 4, 3, 2, 1, 0]);
    }

    #[test]
    fn shipped_map_has_a_trap() {
        // At least one trap cell is 4-adjacent to an expert-path cell but
        // separated from it by a barrier.
        let env = fig1_world();
        let demo_ids = [7usize, 6, 5, 4, 3, 2, 1, 0];
        let mut found = false;
        for cell in fig1_trap_cells() {
            let above = Cell::new(cell.x, cell.y - 1);
            if demo_ids.contains(&env.id_of(above)) && env.spec().barrier_between(cell, above) {
                found = true;
            }
        }
        assert!(found);
    }

    #[test]
    fn trap_cells_cannot_reach_expert_states_in_one_step() {
        let env = fig1_world();
        let expert: Vec<usize> = (0..8).collect();
        for cell in fig1_trap_cells() {
            let id = env.id_of(cell);
            for &e in &expert {
                assert!(!env.transition_support(id, e).unwrap());
            }
        }
    }

    #[test]
    fn chain_route_replays() {
        let env = chain_world();
        let demo =
            make_expert_demo(&env, &chain_expert_route(), &env.state(0).unwrap()).unwrap();
        assert_eq!(demo.trajectory.len(), 9);
        assert_eq!(demo.unique_states.len(), 10);
    }
}

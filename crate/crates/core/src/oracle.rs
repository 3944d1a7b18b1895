//! Exact planning with known dynamics: tabular value iteration over the
//! ground-truth successor table plus breadth-first shortest-path lengths.
//! Supplies expert labels and the reference for every learned planner.

use std::collections::VecDeque;

use crate::error::{CinError, Result};
use crate::gridworld::{step, Action, State, WorldMap, NUM_ACTIONS};
use crate::planner::HyperParams;

/// Max-norm change below which value iteration stops.
pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub side: usize,
    pub goal: State,
    /// Converged state values; zero on cells the agent can never occupy.
    pub v_star: Vec<f64>,
    /// Action values, `NUM_ACTIONS` per cell.
    pub q_star: Vec<f64>,
    /// Greedy action for every cell that can reach the goal.
    pub policy: Vec<Option<Action>>,
    /// Shortest-path length to the goal; `None` when unreachable.
    pub dist: Vec<Option<usize>>,
    /// `max |V^{k+1} - V^k|` for every sweep performed.
    pub residuals: Vec<f64>,
}

impl OracleSolution {
    fn idx(&self, s: State) -> usize {
        s.row * self.side + s.col
    }

    pub fn value(&self, s: State) -> f64 {
        self.v_star[self.idx(s)]
    }

    pub fn q(&self, s: State) -> &[f64] {
        let i = self.idx(s);
        &self.q_star[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS]
    }

    pub fn distance(&self, s: State) -> Option<usize> {
        self.dist[self.idx(s)]
    }

    pub fn is_reachable(&self, s: State) -> bool {
        s.row < self.side && s.col < self.side && self.distance(s).is_some()
    }

    /// States other than the goal from which the goal can be reached.
    pub fn reachable_starts(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.side * self.side)
            .filter(move |&i| self.dist[i].is_some_and(|d| d > 0))
            .map(move |i| State::new(i / self.side, i % self.side))
    }

    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }
}

/// Solves the deterministic grid MDP for `goal`.
///
/// Synchronous Bellman sweeps `Q(s,a) = R(s) + gamma * V(step(s,a))`,
/// `V(s) = max_a Q(s,a)`, starting from `V = 0`, with the goal value pinned
/// to `r_p` after every sweep. Stops once the max-norm change falls below
/// [`TOLERANCE`] or after `10 * side^2` sweeps.
pub fn solve_exact(map: &WorldMap, goal: State, hp: &HyperParams) -> Result<OracleSolution> {
    map.check_traversable(goal)?;
    let n = map.num_cells();
    let goal_idx = map.index(goal);

    let mut successor = vec![usize::MAX; n * NUM_ACTIONS];
    let mut active = Vec::new();
    for s in map.traversable_states() {
        let i = map.index(s);
        active.push(i);
        for a in Action::ALL {
            successor[i * NUM_ACTIONS + a.index()] = map.index(step(map, s, a)?);
        }
    }

    let reward = |i: usize| if i == goal_idx { hp.r_p } else { hp.r_n };
    let cap = 10 * n;
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut q = vec![0.0; n * NUM_ACTIONS];
    let mut residuals = Vec::new();
    for _ in 0..cap {
        for &i in &active {
            let mut best = f64::NEG_INFINITY;
            for a in 0..NUM_ACTIONS {
                let val = hp.gamma * v[successor[i * NUM_ACTIONS + a]] + reward(i);
                q[i * NUM_ACTIONS + a] = val;
                if val > best {
                    best = val;
                }
            }
            next[i] = if i == goal_idx { hp.r_p } else { best };
        }
        let delta = active
            .iter()
            .map(|&i| (next[i] - v[i]).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut next);
        residuals.push(delta);
        if delta < TOLERANCE {
            break;
        }
    }

    let dist = bfs_distances(map, goal);
    let policy = (0..n)
        .map(|i| {
            dist[i].map(|_| {
                let row = &q[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS];
                Action::ALL[argmax(row)]
            })
        })
        .collect();

    Ok(OracleSolution {
        side: map.side(),
        goal,
        v_star: v,
        q_star: q,
        policy,
        dist,
        residuals,
    })
}

/// Unit-cost shortest path lengths to `goal` along legal moves.
pub fn bfs_distances(map: &WorldMap, goal: State) -> Vec<Option<usize>> {
    let mut dist = vec![None; map.num_cells()];
    if !map.is_traversable(goal) {
        return dist;
    }
    dist[map.index(goal)] = Some(0);
    let mut queue = VecDeque::from([goal]);
    while let Some(t) = queue.pop_front() {
        let d = dist[map.index(t)].unwrap_or(0);
        // predecessors: neighbours s that may legally move onto t
        for a in Action::ALL {
            let Some(s) = map.neighbor(t, a) else { continue };
            if map.is_traversable(s) && dist[map.index(s)].is_none() && map.can_move(s, t) {
                dist[map.index(s)] = Some(d + 1);
                queue.push_back(s);
            }
        }
    }
    dist
}

/// Expert action at `s`: argmax of `q_star`, lowest action index on ties.
pub fn expert_action(sol: &OracleSolution, s: State) -> Result<Action> {
    if s.row >= sol.side || s.col >= sol.side {
        return Err(CinError::OutOfBounds {
            row: s.row,
            col: s.col,
            side: sol.side,
        });
    }
    sol.policy[sol.idx(s)].ok_or(CinError::Unreachable {
        row: s.row,
        col: s.col,
    })
}

/// Index of the first maximum.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{generate_maze, generate_terrain};

    fn hp(side: usize) -> HyperParams {
        HyperParams::exact(side)
    }

    #[test]
    fn one_step_neighbor_value() {
        let map = WorldMap::open(5).unwrap();
        let goal = State::new(2, 2);
        let sol = solve_exact(&map, goal, &hp(5)).unwrap();
        assert_eq!(sol.value(goal), 10.0);
        let v = sol.value(State::new(2, 1));
        assert!((v - 9.4).abs() < 1e-12, "{v}");
        assert_eq!(sol.distance(goal), Some(0));
    }

    #[test]
    fn brute_force_value_matches_closed_form() {
        // V*(s) = r_n (1 - gamma^d) / (1 - gamma) + gamma^d r_p for a
        // deterministic graph where the goal is d steps away.
        let map = generate_maze(15, 5).unwrap();
        let goal = map.traversable_states().next().unwrap();
        let p = hp(15);
        let sol = solve_exact(&map, goal, &p).unwrap();
        for s in map.traversable_states() {
            let d = sol.distance(s).unwrap() as i32;
            let expected = if d == 0 {
                p.r_p
            } else {
                p.r_n * (1.0 - p.gamma.powi(d)) / (1.0 - p.gamma) + p.gamma.powi(d) * p.r_p
            };
            assert!((sol.value(s) - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn residuals_contract() {
        let map = generate_terrain(12, 0.4, 0.25, 9).unwrap();
        let p = hp(12);
        let sol = solve_exact(&map, State::new(5, 5), &p).unwrap();
        for w in sol.residuals.windows(2) {
            assert!(w[1] <= p.gamma * w[0] + 1e-12, "{} > gamma * {}", w[1], w[0]);
        }
        assert!(sol.residuals.last().copied().unwrap() < TOLERANCE || sol.iterations() == 10 * 144);
    }

    #[test]
    fn v_is_max_of_q() {
        let map = generate_maze(8, 3).unwrap();
        let goal = map.traversable_states().last().unwrap();
        let sol = solve_exact(&map, goal, &hp(8)).unwrap();
        for s in map.traversable_states() {
            if s == goal {
                continue;
            }
            let m = sol.q(s).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(m, sol.value(s));
        }
    }

    #[test]
    fn expert_moves_east_toward_goal() {
        let map = WorldMap::open(5).unwrap();
        let sol = solve_exact(&map, State::new(2, 4), &hp(5)).unwrap();
        assert_eq!(expert_action(&sol, State::new(2, 3)).unwrap(), Action::E);
        assert_eq!(expert_action(&sol, State::new(2, 3)).unwrap(), Action::E);
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        // goal two rows up: N, NE and NW all reach row 1 with equal distance
        let map = WorldMap::open(5).unwrap();
        let sol = solve_exact(&map, State::new(0, 2), &hp(5)).unwrap();
        assert_eq!(expert_action(&sol, State::new(2, 2)).unwrap(), Action::N);
    }

    #[test]
    fn goal_must_be_free_and_unreachable_states_error() {
        let mut map = WorldMap::open(5).unwrap();
        map.set(State::new(0, 0), 0.0).unwrap();
        assert!(solve_exact(&map, State::new(0, 0), &hp(5)).is_err());
        // wall off the corner cell (4, 4)
        for s in [State::new(3, 3), State::new(3, 4), State::new(4, 3)] {
            map.set(s, 0.0).unwrap();
        }
        let sol = solve_exact(&map, State::new(1, 1), &hp(5)).unwrap();
        assert_eq!(sol.distance(State::new(4, 4)), None);
        assert!(matches!(
            expert_action(&sol, State::new(4, 4)),
            Err(CinError::Unreachable { .. })
        ));
    }

    /// Following the oracle policy reaches the goal in exactly the BFS
    /// distance from every reachable start.
    #[test]
    fn expert_rollouts_match_bfs_on_random_mazes() {
        for seed in 0..50u64 {
            let side = [8, 11, 15][seed as usize % 3];
            let map = generate_maze(side, seed).unwrap();
            let free: Vec<State> = map.traversable_states().collect();
            let goal = free[(seed as usize * 7) % free.len()];
            let sol = solve_exact(&map, goal, &hp(side)).unwrap();
            for &start in &free {
                let d = sol.distance(start).expect("maze is connected");
                let mut s = start;
                let mut steps = 0;
                while s != goal {
                    s = step(&map, s, expert_action(&sol, s).unwrap()).unwrap();
                    steps += 1;
                    assert!(steps <= d, "rollout longer than shortest path");
                }
                assert_eq!(steps, d);
            }
        }
    }
}

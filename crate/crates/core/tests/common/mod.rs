#![allow(dead_code)]

use cin_core::capability::CapabilityNet;
use cin_core::e2e::{backward, forward_batch};
use cin_core::gridworld::{Action, State, WorldMap};
use cin_core::oracle::{expert_action, solve_exact};
use cin_core::planner::HyperParams;
use cin_core::seed;
use rand::Rng;

/// Summed cross-entropy of the expert actions under the planner's softmax.
pub fn e2e_loss(map: &WorldMap, net: &CapabilityNet, goal: State, queries: &[State], experts: &[Action], hp: &HyperParams) -> f64 {
    let tape = forward_batch(map, net, goal, queries, hp).unwrap();
    (0..queries.len())
        .map(|i| -tape.probabilities(i)[experts[i].index()].ln())
        .sum()
}

/// A width-8 net whose parameters all carry a small random offset, so no
/// pre-activation sits exactly on a ReLU kink (zero biases feeding a dead
/// layer would otherwise do that).
pub fn jittered_net(seed_value: u64) -> CapabilityNet {
    let mut net = CapabilityNet::new(3, &[8, 8, 8, 8], seed_value).unwrap();
    let mut rng = seed::rng(seed::derive(seed_value, 0x6a, 0));
    for p in net.params_mut() {
        *p += rng.gen_range(-0.05..0.05);
    }
    net
}

/// Worst relative disagreement between the analytic gradient and central
/// differences over every parameter.
///
/// The denominator is floored at `1e5` times the rounding noise of a
/// central difference of the loss, so components too small to be resolved
/// by finite differences cannot dominate the result.
pub fn gradient_check(
    map: &WorldMap,
    net: &CapabilityNet,
    goal: State,
    queries: &[State],
    experts: &[Action],
    hp: &HyperParams,
    eps: f64,
) -> f64 {
    let tape = forward_batch(map, net, goal, queries, hp).unwrap();
    let result = backward(&tape, net, experts).unwrap();
    let analytic = result.grad;
    let floor = 1e5 * f64::EPSILON * result.loss.abs().max(1.0) / eps;
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for k in 0..net.num_params() {
        let p = net.params()[k];
        probe.params_mut()[k] = p + eps;
        let up = e2e_loss(map, &probe, goal, queries, experts, hp);
        probe.params_mut()[k] = p - eps;
        let down = e2e_loss(map, &probe, goal, queries, experts, hp);
        probe.params_mut()[k] = p;
        let fd = (up - down) / (2.0 * eps);
        let g = analytic[k];
        let scale = fd.abs().max(g.abs());
        let err = (fd - g).abs() / scale.max(floor);
        worst = worst.max(err);
    }
    worst
}

/// A connected-ish random occupancy map with about a fifth of the cells
/// blocked, plus a goal and the expert labels of every state that reaches it.
pub fn random_task(side: usize, seed_value: u64) -> (WorldMap, State, Vec<State>, Vec<Action>) {
    let mut rng = seed::rng(seed_value);
    loop {
        let cells: Vec<f64> = (0..side * side).map(|_| if rng.gen_bool(0.2) { 0.0 } else { 1.0 }).collect();
        let map = WorldMap::occupancy(side, cells).unwrap();
        let free: Vec<State> = map.traversable_states().collect();
        if free.len() < 2 {
            continue;
        }
        let goal = free[rng.gen_range(0..free.len())];
        let sol = solve_exact(&map, goal, &HyperParams::exact(side)).unwrap();
        let queries: Vec<State> = sol.reachable_starts().collect();
        if queries.is_empty() {
            continue;
        }
        let experts = queries.iter().map(|&s| expert_action(&sol, s).unwrap()).collect();
        return (map, goal, queries, experts);
    }
}

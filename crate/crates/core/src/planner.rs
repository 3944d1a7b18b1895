//! The value-iteration module: sparse rewards, per-state transition kernels,
//! and the K-step recurrence
//!
//! ```text
//! Q_k(s, a) = gamma * <kernel(s, a), V_{k-1} window around s> + R(s)
//! V_k(s)    = max_a Q_k(s, a)          (V_k(goal) pinned to r_p)
//! ```
//!
//! which is a locally connected convolution followed by max-pooling over
//! the action channel.

use serde::{Deserialize, Serialize};

use crate::error::{CinError, Result};
use crate::gridworld::{
    center_index, check_kernel_size, step, true_kernel, Action, State, WorldMap,
    NUM_ACTIONS,
};
use crate::oracle::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub gamma: f64,
    /// Number of value-iteration sweeps.
    pub iterations: usize,
    pub kernel_size: usize,
    /// Reward at the goal.
    pub r_p: f64,
    /// Living cost everywhere else.
    pub r_n: f64,
    /// Rollout length cap.
    pub max_steps: usize,
}

impl HyperParams {
    /// Defaults for learned kernels: `K = 3 * side`.
    pub fn learned(side: usize) -> Self {
        HyperParams {
            gamma: 0.99,
            iterations: 3 * side,
            kernel_size: 3,
            r_p: 10.0,
            r_n: -0.5,
            max_steps: side * side,
        }
    }

    /// Defaults for exact comparisons against the oracle: `K = 10 * side`.
    pub fn exact(side: usize) -> Self {
        HyperParams {
            iterations: 10 * side,
            ..HyperParams::learned(side)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CinError::InvalidParameter(msg));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.iterations == 0 {
            return bad("iteration count K must be positive".into());
        }
        check_kernel_size(self.kernel_size)?;
        if self.kernel_size < 3 {
            return bad(format!("kernel size must be at least 3, got {}", self.kernel_size));
        }
        if !(self.r_p > 0.0 && self.r_n < 0.0) {
            return bad(format!("need r_p > 0 > r_n, got {} and {}", self.r_p, self.r_n));
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        Ok(())
    }
}

/// `r_p` at the goal, `r_n` on every other cell.
pub fn sparse_reward(map: &WorldMap, goal: State, hp: &HyperParams) -> Result<Vec<f64>> {
    map.check_traversable(goal)?;
    let mut reward = vec![hp.r_n; map.num_cells()];
    reward[map.index(goal)] = hp.r_p;
    Ok(reward)
}

/// Anything that can produce per-action `F x F` next-state distributions for
/// a traversable state.
pub trait KernelSource: Sync {
    fn kernel_size(&self) -> usize;

    /// `NUM_ACTIONS * F * F` values, one normalised slice per action.
    fn kernels_at(&self, map: &WorldMap, s: State) -> Result<Vec<f64>>;
}

/// Known dynamics: one-hot kernels from the ground-truth motion model.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth {
    pub kernel_size: usize,
}

impl KernelSource for GroundTruth {
    fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    fn kernels_at(&self, map: &WorldMap, s: State) -> Result<Vec<f64>> {
        true_kernel(map, s, self.kernel_size)
    }
}

/// Transition kernels for every cell of one map.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelField {
    side: usize,
    kernel_size: usize,
    data: Vec<f64>,
}

impl KernelField {
    pub fn from_raw(side: usize, kernel_size: usize, data: Vec<f64>) -> Result<Self> {
        check_kernel_size(kernel_size)?;
        let expected = side * side * NUM_ACTIONS * kernel_size * kernel_size;
        if data.len() != expected {
            return Err(CinError::ShapeMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(KernelField {
            side,
            kernel_size,
            data,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn window(&self) -> usize {
        self.kernel_size * self.kernel_size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// All action slices of the cell with flat index `cell`.
    pub fn cell(&self, cell: usize) -> &[f64] {
        let len = NUM_ACTIONS * self.window();
        &self.data[cell * len..(cell + 1) * len]
    }

    pub fn slice(&self, cell: usize, a: Action) -> &[f64] {
        let w = self.window();
        &self.cell(cell)[a.index() * w..(a.index() + 1) * w]
    }

    /// Largest `|sum - 1|` over all slices, or a negative entry's magnitude
    /// if one is larger.
    pub fn normalization_error(&self) -> f64 {
        let w = self.window();
        self.data
            .chunks(w)
            .map(|s| {
                let neg = s.iter().copied().fold(0.0f64, |m, v| m.max(-v));
                (s.iter().sum::<f64>() - 1.0).abs().max(neg)
            })
            .fold(0.0, f64::max)
    }
}

/// Kernels that keep the agent in place for every action.
pub(crate) fn stay_kernels(kernel_size: usize) -> Vec<f64> {
    let w = kernel_size * kernel_size;
    let mut k = vec![0.0; NUM_ACTIONS * w];
    for a in 0..NUM_ACTIONS {
        k[a * w + center_index(kernel_size)] = 1.0;
    }
    k
}

/// Evaluates the kernel source once per traversable cell. Cells the agent
/// can never occupy get stay-in-place kernels.
pub fn build_kernel_field(map: &WorldMap, source: &dyn KernelSource) -> Result<KernelField> {
    let f = source.kernel_size();
    check_kernel_size(f)?;
    let len = NUM_ACTIONS * f * f;
    let stay = stay_kernels(f);
    let mut data = Vec::with_capacity(map.num_cells() * len);
    for s in map.states() {
        if map.is_traversable(s) {
            let k = source.kernels_at(map, s)?;
            if k.len() != len {
                return Err(CinError::ShapeMismatch {
                    expected: len,
                    found: k.len(),
                });
            }
            data.extend_from_slice(&k);
        } else {
            data.extend_from_slice(&stay);
        }
    }
    KernelField::from_raw(map.side(), f, data)
}

/// Flat index of every window position around every cell, `None` off-grid.
pub(crate) fn window_neighbors(side: usize, kernel_size: usize) -> Vec<Option<usize>> {
    let half = (kernel_size / 2) as isize;
    let mut out = Vec::with_capacity(side * side * kernel_size * kernel_size);
    for r in 0..side as isize {
        for c in 0..side as isize {
            for dr in -half..=half {
                for dc in -half..=half {
                    let (rr, cc) = (r + dr, c + dc);
                    let inside = (0..side as isize).contains(&rr) && (0..side as isize).contains(&cc);
                    out.push(inside.then(|| rr as usize * side + cc as usize));
                }
            }
        }
    }
    out
}

/// Intermediate values kept for differentiation.
#[derive(Debug, Clone, Default)]
pub(crate) struct SweepRecord {
    /// `V_0 .. V_{K-1}`: the value map fed into each sweep.
    pub inputs: Vec<Vec<f64>>,
    /// Winning action per cell for sweeps `1 .. K`.
    pub choices: Vec<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct ViOutput {
    /// `Q_K`, `NUM_ACTIONS` values per cell.
    pub q: Vec<f64>,
    /// `V_K`.
    pub v: Vec<f64>,
    /// `max |V_k - V_{k-1}|` per sweep.
    pub residuals: Vec<f64>,
}

/// Shared by planning and by the differentiable forward pass so both produce
/// identical numbers.
pub(crate) fn recurrence(
    kernels: &KernelField,
    reward: &[f64],
    goal: usize,
    hp: &HyperParams,
    mut record: Option<&mut SweepRecord>,
) -> Result<ViOutput> {
    hp.validate()?;
    let n = kernels.side() * kernels.side();
    if reward.len() != n {
        return Err(CinError::ShapeMismatch {
            expected: n,
            found: reward.len(),
        });
    }
    if hp.kernel_size != kernels.kernel_size() {
        return Err(CinError::ShapeMismatch {
            expected: hp.kernel_size,
            found: kernels.kernel_size(),
        });
    }
    let w = kernels.window();
    let nb = window_neighbors(kernels.side(), kernels.kernel_size());
    let data = kernels.data();

    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut q = vec![0.0; n * NUM_ACTIONS];
    let mut residuals = Vec::with_capacity(hp.iterations);
    for _ in 0..hp.iterations {
        let mut choice = record.as_ref().map(|_| vec![0u8; n]);
        for i in 0..n {
            let window = &nb[i * w..(i + 1) * w];
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..NUM_ACTIONS {
                let k = &data[(i * NUM_ACTIONS + a) * w..(i * NUM_ACTIONS + a + 1) * w];
                let mut dot = 0.0;
                for (kj, nj) in k.iter().zip(window) {
                    if let Some(j) = *nj {
                        dot += kj * v[j];
                    }
                }
                let val = hp.gamma * dot + reward[i];
                q[i * NUM_ACTIONS + a] = val;
                if val > best {
                    best = val;
                    best_a = a;
                }
            }
            next[i] = if i == goal { hp.r_p } else { best };
            if let Some(c) = choice.as_mut() {
                c[i] = best_a as u8;
            }
        }
        let delta = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        residuals.push(delta);
        if let Some(rec) = record.as_deref_mut() {
            rec.inputs.push(v.clone());
            rec.choices.push(choice.unwrap_or_default());
        }
        std::mem::swap(&mut v, &mut next);
    }
    Ok(ViOutput { q, v, residuals })
}

/// Runs `hp.iterations` sweeps from `V_0 = 0`.
pub fn vi_forward(
    kernels: &KernelField,
    reward: &[f64],
    goal: State,
    hp: &HyperParams,
) -> Result<ViOutput> {
    let side = kernels.side();
    if goal.row >= side || goal.col >= side {
        return Err(CinError::OutOfBounds {
            row: goal.row,
            col: goal.col,
            side,
        });
    }
    recurrence(kernels, reward, goal.row * side + goal.col, hp, None)
}

/// Highest-valued action at `s`, lowest index on ties.
pub fn greedy_action(q: &[f64], side: usize, s: State) -> Action {
    let i = s.row * side + s.col;
    Action::ALL[argmax(&q[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS])]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    /// Reached the goal after the given number of moves.
    ReachedGoal(usize),
    Timeout,
    /// The greedy move left the agent in place.
    Stuck,
}

impl Outcome {
    pub fn reached(self) -> bool {
        matches!(self, Outcome::ReachedGoal(_))
    }
}

/// Value and action maps for one (map, goal) pair, reusable across starts.
#[derive(Debug, Clone)]
pub struct Plan {
    pub side: usize,
    pub goal: State,
    pub reward: Vec<f64>,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl Plan {
    pub fn new(
        map: &WorldMap,
        source: &dyn KernelSource,
        goal: State,
        hp: &HyperParams,
    ) -> Result<Plan> {
        let kernels = build_kernel_field(map, source)?;
        Plan::from_kernels(map, &kernels, goal, hp)
    }

    pub fn from_kernels(
        map: &WorldMap,
        kernels: &KernelField,
        goal: State,
        hp: &HyperParams,
    ) -> Result<Plan> {
        let reward = sparse_reward(map, goal, hp)?;
        let out = vi_forward(kernels, &reward, goal, hp)?;
        Ok(Plan {
            side: map.side(),
            goal,
            reward,
            q: out.q,
            v: out.v,
        })
    }

    pub fn action(&self, s: State) -> Action {
        greedy_action(&self.q, self.side, s)
    }

    /// Follows the greedy policy from `start` under the true dynamics.
    pub fn rollout(&self, map: &WorldMap, start: State, max_steps: usize) -> Result<(Vec<State>, Outcome)> {
        map.check_traversable(start)?;
        let mut s = start;
        let mut path = vec![s];
        loop {
            if s == self.goal {
                let steps = path.len() - 1;
                return Ok((path, Outcome::ReachedGoal(steps)));
            }
            if path.len() > max_steps {
                return Ok((path, Outcome::Timeout));
            }
            let next = step(map, s, self.action(s))?;
            if next == s {
                return Ok((path, Outcome::Stuck));
            }
            path.push(next);
            s = next;
        }
    }
}

/// Everything produced by planning from one start state.
#[derive(Debug, Clone)]
pub struct PlanResult {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub reward: Vec<f64>,
    pub chosen: Action,
    pub trajectory: Vec<State>,
    pub outcome: Outcome,
}

/// Plans once for `goal` and rolls the greedy policy out from `start`.
pub fn rollout(
    map: &WorldMap,
    source: &dyn KernelSource,
    goal: State,
    start: State,
    hp: &HyperParams,
) -> Result<PlanResult> {
    map.check_traversable(start)?;
    let plan = Plan::new(map, source, goal, hp)?;
    let (trajectory, outcome) = plan.rollout(map, start, hp.max_steps)?;
    Ok(PlanResult {
        chosen: plan.action(start),
        q: plan.q,
        v: plan.v,
        reward: plan.reward,
        trajectory,
        outcome,
    })
}

//! End-to-end imitation learning through the unrolled planner.
//!
//! The forward pass evaluates the capability net on every traversable cell,
//! runs the value-iteration recurrence while recording each sweep's input
//! value map and max-pool winners, and reads `Q_K(s_t, .)` as action
//! logits. The reverse pass pushes the cross-entropy adjoint back through
//! the sweeps (max-pool routes to the recorded winner, the pinned goal
//! receives nothing) into the kernels and from there into the net.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::capability::{Activations, Adam, CapabilityNet, LrSchedule};
use crate::error::{CinError, Result};
use crate::eval::MapTask;
use crate::gridworld::{extract_patch, Action, State, WorldMap, NUM_ACTIONS};
use crate::oracle::{argmax, expert_action};
use crate::planner::{
    recurrence, sparse_reward, stay_kernels, window_neighbors, HyperParams, KernelField,
    SweepRecord,
};
use crate::seed;

/// One imitation target: at `state` on map `map` with goal `goal`, the
/// expert takes `expert`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ILSample {
    /// Index into the task list the sample was built from.
    pub map: usize,
    pub goal: State,
    pub state: State,
    pub expert: Action,
}

/// Expert-labelled samples for every reachable non-goal state of every task.
pub fn il_samples(tasks: &[MapTask]) -> Result<Vec<ILSample>> {
    let mut out = Vec::new();
    for (m, task) in tasks.iter().enumerate() {
        for s in task.oracle.reachable_starts() {
            out.push(ILSample {
                map: m,
                goal: task.goal,
                state: s,
                expert: expert_action(&task.oracle, s)?,
            });
        }
    }
    Ok(out)
}

/// Everything the reverse pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    side: usize,
    goal: usize,
    hp: HyperParams,
    reward: Vec<f64>,
    activations: Vec<Option<Activations>>,
    kernels: KernelField,
    sweeps: SweepRecord,
    q: Vec<f64>,
    queries: Vec<State>,
    logits: Vec<[f64; NUM_ACTIONS]>,
}

impl Tape {
    pub fn queries(&self) -> &[State] {
        &self.queries
    }

    pub fn logits(&self) -> &[[f64; NUM_ACTIONS]] {
        &self.logits
    }

    /// Softmax of the logits of query `i`.
    pub fn probabilities(&self, i: usize) -> [f64; NUM_ACTIONS] {
        softmax(&self.logits[i])
    }

    pub fn kernels(&self) -> &KernelField {
        &self.kernels
    }

    /// `Q_K` for the whole map.
    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps.inputs.len()
    }

    /// Locally connected convolution layers on the tape, one per action per
    /// sweep.
    pub fn conv_layers(&self) -> usize {
        self.sweeps() * NUM_ACTIONS
    }

    /// Re-runs the recurrence from the recorded kernels and returns the
    /// query logits.
    pub fn replay(&self) -> Result<Vec<[f64; NUM_ACTIONS]>> {
        let out = recurrence(&self.kernels, &self.reward, self.goal, &self.hp, None)?;
        Ok(self.queries.iter().map(|&s| read_logits(&out.q, self.side, s)).collect())
    }
}

fn read_logits(q: &[f64], side: usize, s: State) -> [f64; NUM_ACTIONS] {
    let i = s.row * side + s.col;
    let mut out = [0.0; NUM_ACTIONS];
    out.copy_from_slice(&q[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS]);
    out
}

fn softmax(logits: &[f64; NUM_ACTIONS]) -> [f64; NUM_ACTIONS] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_ACTIONS];
    let mut sum = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// `-log softmax(logits)[target]`, computed stably.
fn cross_entropy(logits: &[f64; NUM_ACTIONS], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Forward pass for several query states sharing one map and goal.
pub fn forward_batch(
    map: &WorldMap,
    net: &CapabilityNet,
    goal: State,
    queries: &[State],
    hp: &HyperParams,
) -> Result<Tape> {
    hp.validate()?;
    if net.kernel_size() != hp.kernel_size {
        return Err(CinError::ShapeMismatch {
            expected: hp.kernel_size,
            found: net.kernel_size(),
        });
    }
    for &s in queries {
        map.check_traversable(s)?;
    }
    let reward = sparse_reward(map, goal, hp)?;
    let f = net.kernel_size();
    let stay = stay_kernels(f);
    let mut activations = Vec::with_capacity(map.num_cells());
    let mut data = Vec::with_capacity(map.num_cells() * stay.len());
    for s in map.states() {
        if map.is_traversable(s) {
            let acts = net.forward_cached(&extract_patch(map, s, f)?.values)?;
            data.extend_from_slice(&acts.probs);
            activations.push(Some(acts));
        } else {
            data.extend_from_slice(&stay);
            activations.push(None);
        }
    }
    let kernels = KernelField::from_raw(map.side(), f, data)?;
    let mut sweeps = SweepRecord::default();
    let goal_idx = map.index(goal);
    let out = recurrence(&kernels, &reward, goal_idx, hp, Some(&mut sweeps))?;
    let logits = queries.iter().map(|&s| read_logits(&out.q, map.side(), s)).collect();
    Ok(Tape {
        side: map.side(),
        goal: goal_idx,
        hp: *hp,
        reward,
        activations,
        kernels,
        sweeps,
        q: out.q,
        queries: queries.to_vec(),
        logits,
    })
}

/// Forward pass for a single query state: `(Q_K(s_t, .), tape)`.
pub fn forward_with_tape(
    map: &WorldMap,
    net: &CapabilityNet,
    goal: State,
    state: State,
    hp: &HyperParams,
) -> Result<([f64; NUM_ACTIONS], Tape)> {
    let tape = forward_batch(map, net, goal, &[state], hp)?;
    Ok((tape.logits[0], tape))
}

/// Summed cross-entropy over the tape's queries and its parameter gradient.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Queries whose greedy action differs from the expert.
    pub errors: usize,
}

/// Reverse pass. `experts[i]` is the target for query `i`.
pub fn backward(tape: &Tape, net: &CapabilityNet, experts: &[Action]) -> Result<Gradient> {
    if experts.len() != tape.queries.len() {
        return Err(CinError::ShapeMismatch {
            expected: tape.queries.len(),
            found: experts.len(),
        });
    }
    let n = tape.side * tape.side;
    let w = tape.kernels.window();
    let gamma = tape.hp.gamma;

    let mut loss = 0.0;
    let mut errors = 0;
    let mut d_q = vec![0.0; n * NUM_ACTIONS];
    for ((&s, logits), &expert) in tape.queries.iter().zip(&tape.logits).zip(experts) {
        let target = expert.index();
        loss += cross_entropy(logits, target);
        if argmax(logits) != target {
            errors += 1;
        }
        let p = softmax(logits);
        let i = s.row * tape.side + s.col;
        for a in 0..NUM_ACTIONS {
            let y = if a == target { 1.0 } else { 0.0 };
            d_q[i * NUM_ACTIONS + a] += p[a] - y;
        }
    }

    let nb = window_neighbors(tape.side, tape.kernels.kernel_size());
    let kern = tape.kernels.data();
    let mut d_kernel = vec![0.0; kern.len()];
    let mut d_v = vec![0.0; n];
    for t in (0..tape.sweeps()).rev() {
        let v_in = &tape.sweeps.inputs[t];
        d_v.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let window = &nb[i * w..(i + 1) * w];
            for a in 0..NUM_ACTIONS {
                let g = d_q[i * NUM_ACTIONS + a];
                if g == 0.0 {
                    continue;
                }
                let g = gamma * g;
                let base = (i * NUM_ACTIONS + a) * w;
                for (j, nj) in window.iter().enumerate() {
                    if let Some(c) = *nj {
                        d_kernel[base + j] += g * v_in[c];
                        d_v[c] += g * kern[base + j];
                    }
                }
            }
        }
        if t == 0 {
            break;
        }
        // V_t came from max-pooling Q_t; route through the recorded winner
        let choices = &tape.sweeps.choices[t - 1];
        d_q.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            if i != tape.goal && d_v[i] != 0.0 {
                d_q[i * NUM_ACTIONS + choices[i] as usize] = d_v[i];
            }
        }
    }

    let mut grad = vec![0.0; net.num_params()];
    let cell_len = NUM_ACTIONS * w;
    for (i, acts) in tape.activations.iter().enumerate() {
        let Some(acts) = acts else { continue };
        let dk = &d_kernel[i * cell_len..(i + 1) * cell_len];
        if dk.iter().all(|&x| x == 0.0) {
            continue;
        }
        net.backward(acts, dk, &mut grad);
    }
    Ok(Gradient { loss, grad, errors })
}

/// Learning-rate schedule used by the command-line trainer.
pub const DEFAULT_E2E_SCHEDULE: LrSchedule = LrSchedule::Cosine;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct E2eConfig {
    pub epochs: usize,
    /// Maps (each with all of its query states) per optimiser step.
    pub batch: usize,
    pub seed: u64,
    pub hp: HyperParams,
    /// Learning-rate multiplier per epoch (epoch 1 uses the base rate).
    pub schedule: LrSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Percentage of samples whose greedy action differs from the expert.
    pub pct_err: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,pct_err,wall_ms\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.mean_loss, r.pct_err, r.wall_ms);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<TrainLog> {
        let mut lines = text.lines();
        if lines.next() != Some("epoch,mean_loss,pct_err,wall_ms") {
            return Err(CinError::Format("training log header".into()));
        }
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let bad = || CinError::Format(format!("training log row {l:?}"));
                if f.len() != 4 {
                    return Err(bad());
                }
                Ok(EpochRecord {
                    epoch: f[0].parse().map_err(|_| bad())?,
                    mean_loss: f[1].parse().map_err(|_| bad())?,
                    pct_err: f[2].parse().map_err(|_| bad())?,
                    wall_ms: f[3].parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(TrainLog { rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn pct_err(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.pct_err).collect()
    }
}

/// Samples of one (map, goal) pair, evaluated with a single tape.
struct Group {
    map: usize,
    goal: State,
    states: Vec<State>,
    experts: Vec<Action>,
}

fn group_samples(tasks: &[MapTask], samples: &[ILSample]) -> Result<Vec<Group>> {
    let mut groups: BTreeMap<(usize, State), Group> = BTreeMap::new();
    for s in samples {
        if s.map >= tasks.len() {
            return Err(CinError::InvalidParameter(format!(
                "sample refers to map {} of {}",
                s.map,
                tasks.len()
            )));
        }
        let g = groups.entry((s.map, s.goal)).or_insert_with(|| Group {
            map: s.map,
            goal: s.goal,
            states: Vec::new(),
            experts: Vec::new(),
        });
        g.states.push(s.state);
        g.experts.push(s.expert);
    }
    Ok(groups.into_values().collect())
}

fn run_group(
    tasks: &[MapTask],
    group: &Group,
    net: &CapabilityNet,
    hp: &HyperParams,
) -> Result<Gradient> {
    let tape = forward_batch(&tasks[group.map].map, net, group.goal, &group.states, hp)?;
    backward(&tape, net, &group.experts)
}

/// Loss and greedy-action error count without updating anything.
fn evaluate_groups(
    tasks: &[MapTask],
    groups: &[Group],
    net: &CapabilityNet,
    hp: &HyperParams,
) -> Result<(f64, usize)> {
    let parts: Vec<Result<(f64, usize)>> = groups
        .par_iter()
        .map(|g| {
            let tape = forward_batch(&tasks[g.map].map, net, g.goal, &g.states, hp)?;
            let mut loss = 0.0;
            let mut errors = 0;
            for (logits, e) in tape.logits.iter().zip(&g.experts) {
                loss += cross_entropy(logits, e.index());
                if argmax(logits) != e.index() {
                    errors += 1;
                }
            }
            Ok((loss, errors))
        })
        .collect();
    let mut loss = 0.0;
    let mut errors = 0;
    for p in parts {
        let (l, e) = p?;
        loss += l;
        errors += e;
    }
    Ok((loss, errors))
}

/// Minibatch Adam on the mean cross-entropy.
///
/// Row 0 of the log scores the untrained net; row `e` reports the loss and
/// %Error accumulated over the forward passes of epoch `e`.
pub fn train_e2e(
    net: &mut CapabilityNet,
    tasks: &[MapTask],
    samples: &[ILSample],
    cfg: &E2eConfig,
    adam: &mut Adam,
) -> Result<TrainLog> {
    if samples.is_empty() {
        return Err(CinError::Empty("no imitation samples"));
    }
    if cfg.batch == 0 {
        return Err(CinError::InvalidParameter("batch size must be positive".into()));
    }
    let groups = group_samples(tasks, samples)?;
    let total = samples.len() as f64;
    let mut log = TrainLog::default();

    let clock = Instant::now();
    let (loss0, err0) = evaluate_groups(tasks, &groups, net, &cfg.hp)?;
    log.rows.push(EpochRecord {
        epoch: 0,
        mean_loss: loss0 / total,
        pct_err: 100.0 * err0 as f64 / total,
        wall_ms: clock.elapsed().as_millis() as u64,
    });

    let mut rng = seed::rng(cfg.seed);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let base_lr = adam.lr;
    let mut run_epoch = |epoch: usize, adam: &mut Adam| -> Result<EpochRecord> {
        let clock = Instant::now();
        adam.lr = base_lr * cfg.schedule.factor(epoch - 1, cfg.epochs);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut err_sum = 0usize;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let snapshot: &CapabilityNet = net;
            let parts: Vec<Result<Gradient>> = chunk
                .par_iter()
                .map(|&g| run_group(tasks, &groups[g], snapshot, &cfg.hp))
                .collect();
            let count: usize = chunk.iter().map(|&g| groups[g].states.len()).sum();
            let scale = 1.0 / count as f64;
            let mut grad = vec![0.0; net.num_params()];
            let mut batch_loss = 0.0;
            for part in parts {
                let part = part?;
                batch_loss += part.loss;
                err_sum += part.errors;
                for (g, p) in grad.iter_mut().zip(&part.grad) {
                    *g += p * scale;
                }
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(CinError::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += batch_loss;
            adam.update(net.params_mut(), &grad)?;
        }
        Ok(EpochRecord {
            epoch,
            mean_loss: loss_sum / total,
            pct_err: 100.0 * err_sum as f64 / total,
            wall_ms: clock.elapsed().as_millis() as u64,
        })
    };
    let mut outcome = Ok(());
    for epoch in 1..=cfg.epochs {
        match run_epoch(epoch, adam) {
            Ok(row) => log.rows.push(row),
            Err(e) => {
                outcome = Err(e);
                break;
            }
        }
    }
    adam.lr = base_lr;
    outcome.map(|()| log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::generate_maze;
    use crate::planner::{build_kernel_field, vi_forward};

    fn small_net(seed: u64) -> CapabilityNet {
        CapabilityNet::new(3, &[8, 8, 8, 8], seed).unwrap()
    }

    fn setup() -> (WorldMap, State, HyperParams) {
        let map = generate_maze(7, 2).unwrap();
        let goal = map.traversable_states().next().unwrap();
        let mut hp = HyperParams::learned(7);
        hp.iterations = 6;
        (map, goal, hp)
    }

    #[test]
    fn tape_logits_equal_planner_q_bitwise() {
        let (map, goal, hp) = setup();
        let net = small_net(1);
        let queries: Vec<State> = map.traversable_states().collect();
        let tape = forward_batch(&map, &net, goal, &queries, &hp).unwrap();
        let field = build_kernel_field(&map, &net).unwrap();
        assert_eq!(&field, tape.kernels());
        let reward = sparse_reward(&map, goal, &hp).unwrap();
        let out = vi_forward(&field, &reward, goal, &hp).unwrap();
        assert_eq!(out.q, tape.q());
        for (s, l) in queries.iter().zip(tape.logits()) {
            assert_eq!(l, &read_logits(&out.q, map.side(), *s));
        }
        assert_eq!(tape.replay().unwrap(), tape.logits());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (map, goal, hp) = setup();
        let s = map.traversable_states().nth(3).unwrap();
        let (_, tape) = forward_with_tape(&map, &small_net(2), goal, s, &hp).unwrap();
        assert!((tape.probabilities(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_sweep_tape_has_one_layer_per_action() {
        let (map, goal, mut hp) = setup();
        hp.iterations = 1;
        let s = map.traversable_states().nth(1).unwrap();
        let (_, tape) = forward_with_tape(&map, &small_net(3), goal, s, &hp).unwrap();
        assert_eq!(tape.sweeps(), 1);
        assert_eq!(tape.conv_layers(), NUM_ACTIONS);
    }

    #[test]
    fn expert_count_mismatch_is_an_error() {
        let (map, goal, hp) = setup();
        let s = map.traversable_states().nth(1).unwrap();
        let net = small_net(3);
        let (_, tape) = forward_with_tape(&map, &net, goal, s, &hp).unwrap();
        assert!(backward(&tape, &net, &[]).is_err());
    }

    #[test]
    fn saturated_correct_prediction_has_zero_gradient() {
        let (map, goal, mut hp) = setup();
        hp.r_p *= 1e8;
        hp.r_n *= 1e8;
        let net = small_net(4);
        let s = map.traversable_states().nth(2).unwrap();
        let (logits, tape) = forward_with_tape(&map, &net, goal, s, &hp).unwrap();
        let chosen = Action::ALL[argmax(&logits)];
        let mut sorted = logits;
        sorted.sort_by(|a, b| b.total_cmp(a));
        assert!(sorted[0] - sorted[1] > 1e3, "logit gap too small for this check");
        let g = backward(&tape, &net, &[chosen]).unwrap();
        let norm = g.grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "{norm}");
        assert_eq!(g.errors, 0);
    }

    #[test]
    fn dead_hidden_unit_gets_no_gradient() {
        let (map, goal, hp) = setup();
        let mut net = small_net(5);
        // first hidden layer: 9 inputs x 8 units, then 8 biases at offset 72
        net.params_mut()[72] = -1e6;
        let queries: Vec<State> = map.traversable_states().collect();
        let tape = forward_batch(&map, &net, goal, &queries, &hp).unwrap();
        let experts = vec![Action::E; queries.len()];
        let g = backward(&tape, &net, &experts).unwrap();
        // incoming weights of unit 0, its bias, and its outgoing column
        for k in 0..9 {
            assert_eq!(g.grad[k], 0.0);
        }
        assert_eq!(g.grad[72], 0.0);
        for o in 0..8 {
            assert_eq!(g.grad[80 + o * 8], 0.0);
        }
        assert!(g.grad.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn training_is_reproducible() {
        let tasks: Vec<MapTask> = (0..4)
            .map(|s| {
                let map = generate_maze(7, s).unwrap();
                let goal = map.traversable_states().last().unwrap();
                MapTask::solve(map, goal, &HyperParams::exact(7)).unwrap()
            })
            .collect();
        let samples = il_samples(&tasks).unwrap();
        let cfg = E2eConfig {
            epochs: 2,
            batch: 2,
            seed: 9,
            hp: HyperParams::learned(7),
            schedule: LrSchedule::Cosine,
        };
        let run = || {
            let mut net = small_net(6);
            let mut adam = Adam::new(net.num_params());
            let log = train_e2e(&mut net, &tasks, &samples, &cfg, &mut adam).unwrap();
            (net, log)
        };
        let (net_a, log_a) = run();
        let (net_b, log_b) = run();
        assert_eq!(net_a, net_b);
        assert_eq!(log_a.rows.len(), 3);
        for (a, b) in log_a.rows.iter().zip(&log_b.rows) {
            assert_eq!((a.epoch, a.mean_loss, a.pct_err), (b.epoch, b.mean_loss, b.pct_err));
        }
    }

    #[test]
    fn log_csv_round_trip() {
        let log = TrainLog {
            rows: vec![
                EpochRecord { epoch: 0, mean_loss: 2.0794, pct_err: 87.5, wall_ms: 12 },
                EpochRecord { epoch: 1, mean_loss: 1.25, pct_err: 40.125, wall_ms: 30 },
            ],
        };
        let text = log.to_csv();
        assert!(text.starts_with("epoch,mean_loss,pct_err,wall_ms\n"));
        assert_eq!(TrainLog::from_csv(&text).unwrap(), log);
    }
}

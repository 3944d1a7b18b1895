//! Datasets of (map, goal) tasks and the evaluation protocol.
//!
//! For every reachable non-goal state of every task the planner is rolled
//! out greedily. %Success counts rollouts that reach the goal, %Optimal
//! those that reach it in exactly the shortest-path length, and %Error
//! states whose first greedy action differs from the expert's.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CinError, Result};
use crate::gridworld::{
    generate_maze, generate_terrain, load_map, save_map, MapKind, State, WorldMap,
};
use crate::oracle::{expert_action, solve_exact, OracleSolution};
use crate::planner::{HyperParams, KernelSource, Outcome, Plan};
use crate::seed;

/// A map, its goal, and the exact solution for that goal.
#[derive(Debug, Clone)]
pub struct MapTask {
    pub map: WorldMap,
    pub goal: State,
    pub oracle: OracleSolution,
}

impl MapTask {
    pub fn solve(map: WorldMap, goal: State, hp: &HyperParams) -> Result<MapTask> {
        let oracle = solve_exact(&map, goal, hp)?;
        Ok(MapTask { map, goal, oracle })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|s| s.name() == name)
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    /// Default working scale.
    pub const DESK: SplitCounts = SplitCounts {
        train: 1000,
        val: 100,
        test: 100,
    };
    /// The full 10K / 1K / 1K protocol.
    pub const PAPER: SplitCounts = SplitCounts {
        train: 10_000,
        val: 1_000,
        test: 1_000,
    };

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: MapKind,
    pub side: usize,
    pub counts: SplitCounts,
    pub seed: u64,
    /// Terrain only.
    pub roughness: f64,
    /// Terrain only.
    pub delta_h_star: f64,
}

impl DatasetSpec {
    pub fn new(kind: MapKind, side: usize, counts: SplitCounts, seed: u64) -> Self {
        DatasetSpec {
            kind,
            side,
            counts,
            seed,
            roughness: crate::gridworld::DEFAULT_ROUGHNESS,
            delta_h_star: crate::gridworld::DEFAULT_DELTA_H_STAR,
        }
    }

    /// Generator seed of map `index` in `split`; distinct across splits.
    pub fn map_seed(&self, split: Split, index: usize) -> u64 {
        seed::derive(self.seed, split.tag(), index as u64)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<MapTask>,
    pub val: Vec<MapTask>,
    pub test: Vec<MapTask>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[MapTask] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<MapTask> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

const MAP_RETRIES: u64 = 16;
const GOAL_RETRIES: usize = 32;

/// Builds one task: a map from `map_seed` and a uniformly drawn goal that
/// at least one other state can reach. Terrain maps are regenerated when no
/// such goal is found.
pub fn generate_task(spec: &DatasetSpec, map_seed: u64, hp: &HyperParams) -> Result<MapTask> {
    for attempt in 0..MAP_RETRIES {
        let s = seed::derive(map_seed, 0x6d61, attempt);
        let map = match spec.kind {
            MapKind::Occupancy2D => generate_maze(spec.side, s)?,
            MapKind::Terrain3D => generate_terrain(spec.side, spec.roughness, spec.delta_h_star, s)?,
        };
        let free: Vec<State> = map.traversable_states().collect();
        let mut rng = seed::rng(seed::derive(s, 0x676f, 0));
        for _ in 0..GOAL_RETRIES {
            let Some(&goal) = free.choose(&mut rng) else { break };
            let oracle = solve_exact(&map, goal, hp)?;
            if oracle.reachable_starts().next().is_some() {
                return Ok(MapTask { map, goal, oracle });
            }
        }
    }
    Err(CinError::Generation(format!(
        "no usable goal after {MAP_RETRIES} maps (seed {map_seed})"
    )))
}

pub fn generate_dataset(spec: &DatasetSpec, hp: &HyperParams) -> Result<Dataset> {
    if spec.counts.train == 0 || spec.counts.val == 0 || spec.counts.test == 0 {
        return Err(CinError::InvalidParameter("every split needs at least one map".into()));
    }
    let mut ds = Dataset {
        spec: *spec,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for split in Split::ALL {
        let tasks: Result<Vec<MapTask>> = (0..spec.counts.get(split))
            .into_par_iter()
            .map(|i| generate_task(spec, spec.map_seed(split, i), hp))
            .collect();
        *ds.split_mut(split) = tasks?;
    }
    Ok(ds)
}

/// Writes `maps/<split>/<idx>.cinmap`, `goals.csv` and `meta.json`.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut goals = String::from("split,index,row,col\n");
    for split in Split::ALL {
        let sub = dir.join("maps").join(split.name());
        fs::create_dir_all(&sub)?;
        for (i, task) in ds.split(split).iter().enumerate() {
            save_map(&task.map, sub.join(format!("{i}.cinmap")))?;
            let _ = writeln!(goals, "{},{i},{},{}", split.name(), task.goal.row, task.goal.col);
        }
    }
    fs::write(dir.join("goals.csv"), goals)?;
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&ds.spec)? + "\n")?;
    Ok(())
}

/// Reads a dataset directory and re-solves every task with `hp`.
pub fn load_dataset(dir: impl AsRef<Path>, hp: &HyperParams) -> Result<Dataset> {
    let dir = dir.as_ref();
    let spec: DatasetSpec = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    let text = fs::read_to_string(dir.join("goals.csv"))?;
    let mut lines = text.lines();
    if lines.next() != Some("split,index,row,col") {
        return Err(CinError::Format("goals.csv header".into()));
    }
    let mut entries: Vec<(Split, usize, State)> = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let bad = || CinError::Format(format!("goals.csv row {line:?}"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let split = Split::from_name(f[0]).ok_or_else(bad)?;
        let idx: usize = f[1].parse().map_err(|_| bad())?;
        let row: usize = f[2].parse().map_err(|_| bad())?;
        let col: usize = f[3].parse().map_err(|_| bad())?;
        entries.push((split, idx, State::new(row, col)));
    }
    let mut ds = Dataset {
        spec,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for split in Split::ALL {
        let mut rows: Vec<(usize, State)> = entries
            .iter()
            .filter(|e| e.0 == split)
            .map(|e| (e.1, e.2))
            .collect();
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(CinError::Format(format!("goals.csv indices for {} are not 0..n", split.name())));
        }
        let tasks: Result<Vec<MapTask>> = rows
            .par_iter()
            .map(|&(i, goal)| {
                let map = load_map(dir.join("maps").join(split.name()).join(format!("{i}.cinmap")))?;
                MapTask::solve(map, goal, hp)
            })
            .collect();
        *ds.split_mut(split) = tasks?;
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub side: usize,
    pub gamma: f64,
    pub iterations: usize,
    pub kernel_size: usize,
    pub r_p: f64,
    pub r_n: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRow {
    pub index: usize,
    pub states: usize,
    pub optimal: usize,
    pub success: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ReportConfig,
    pub states: usize,
    pub pct_opt: f64,
    pub pct_suc: f64,
    pub pct_err: f64,
    pub maps: Vec<MapRow>,
}

fn pct(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

fn evaluate_task(source: &dyn KernelSource, index: usize, task: &MapTask, hp: &HyperParams) -> Result<MapRow> {
    let plan = Plan::new(&task.map, source, task.goal, hp)?;
    let mut row = MapRow {
        index,
        states: 0,
        optimal: 0,
        success: 0,
        errors: 0,
    };
    for s in task.oracle.reachable_starts() {
        row.states += 1;
        if plan.action(s) != expert_action(&task.oracle, s)? {
            row.errors += 1;
        }
        let (_, outcome) = plan.rollout(&task.map, s, hp.max_steps)?;
        if let Outcome::ReachedGoal(len) = outcome {
            row.success += 1;
            if Some(len) == task.oracle.distance(s) {
                row.optimal += 1;
            }
        }
    }
    Ok(row)
}

/// Scores a kernel source on a list of tasks.
pub fn evaluate(source: &dyn KernelSource, tasks: &[MapTask], hp: &HyperParams) -> Result<EvalReport> {
    if tasks.is_empty() {
        return Err(CinError::Empty("no maps to evaluate"));
    }
    let rows: Vec<MapRow> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| evaluate_task(source, i, t, hp))
        .collect::<Result<_>>()?;
    let states: usize = rows.iter().map(|r| r.states).sum();
    if states == 0 {
        return Err(CinError::Empty("no reachable start states"));
    }
    let sum = |f: fn(&MapRow) -> usize| rows.iter().map(f).sum::<usize>();
    Ok(EvalReport {
        config: ReportConfig {
            side: tasks[0].map.side(),
            gamma: hp.gamma,
            iterations: hp.iterations,
            kernel_size: hp.kernel_size,
            r_p: hp.r_p,
            r_n: hp.r_n,
            seed: None,
        },
        states,
        pct_opt: pct(sum(|r| r.optimal), states),
        pct_suc: pct(sum(|r| r.success), states),
        pct_err: pct(sum(|r| r.errors), states),
        maps: rows,
    })
}

impl EvalReport {
    /// Per-map rows then an `all` row; percentages to one decimal.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,index,states,optimal,success,errors,pct_opt,pct_suc,pct_err\n");
        for r in &self.maps {
            let _ = writeln!(
                out,
                "map,{},{},{},{},{},{:.1},{:.1},{:.1}",
                r.index,
                r.states,
                r.optimal,
                r.success,
                r.errors,
                pct(r.optimal, r.states),
                pct(r.success, r.states),
                pct(r.errors, r.states)
            );
        }
        let total = |f: fn(&MapRow) -> usize| self.maps.iter().map(f).sum::<usize>();
        let _ = writeln!(
            out,
            "all,,{},{},{},{},{:.1},{:.1},{:.1}",
            self.states,
            total(|r| r.optimal),
            total(|r| r.success),
            total(|r| r.errors),
            self.pct_opt,
            self.pct_suc,
            self.pct_err
        );
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn summary(&self) -> String {
        format!(
            "%Opt {:.1}  %Suc {:.1}  %Err {:.1}  ({} states, {} maps)",
            self.pct_opt,
            self.pct_suc,
            self.pct_err,
            self.states,
            self.maps.len()
        )
    }
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn emit_report(report: &EvalReport, dir: impl AsRef<Path>) -> Result<()> {
    if report.maps.is_empty() || report.states == 0 {
        return Err(CinError::Empty("refusing to write an empty report"));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), report.to_json()?)?;
    fs::write(dir.join("report.csv"), report.to_csv())?;
    Ok(())
}

pub fn read_report(dir: impl AsRef<Path>) -> Result<EvalReport> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.as_ref().join("report.json"))?)?)
}
